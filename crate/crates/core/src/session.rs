//! Live-steerable run: a status machine around one [`Simulation`].
//!
//! Status moves IDLE -> RUNNING <-> PAUSED -> DONE. Control actions take
//! effect at the next event boundary, at the current clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::SimTime;
use crate::engine::{ControlAction, EngineError, RunReport, Scenario, Simulation, TraceRecord};
use crate::kernel::{GbamConfig, SwitchReport};
use crate::stats::{Counters, SeriesSnapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Idle,
    Running,
    Paused,
    Done,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot {action} a session that is {from:?}")]
    IllegalTransition { from: SessionStatus, action: &'static str },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub status: SessionStatus,
    pub clock: SimTime,
    pub events: u64,
    pub trace_len: usize,
    pub active: usize,
    pub config: GbamConfig,
    pub totals: Counters,
    pub per_class: Vec<Counters>,
}

/// Consolidated slots in `[since, next)`; `next` is the cursor for the
/// following request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub since: SimTime,
    pub next: SimTime,
    pub series: Vec<SeriesSnapshot>,
}

#[derive(Clone, Debug)]
pub struct Session {
    id: String,
    status: SessionStatus,
    sim: Simulation,
}

impl Session {
    /// Sessions always record the event trace.
    pub fn new(id: impl Into<String>, scenario: Scenario, run: usize) -> Result<Self, SessionError> {
        let sim = Simulation::new(std::sync::Arc::new(scenario), run)?.with_trace();
        Ok(Session { id: id.into(), status: SessionStatus::Idle, sim })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.sim.trace()
    }

    fn transition(&mut self, from: SessionStatus, to: SessionStatus, action: &'static str) -> Result<(), SessionError> {
        if self.status != from {
            return Err(SessionError::IllegalTransition { from: self.status, action });
        }
        self.status = to;
        Ok(())
    }

    pub fn start(&mut self) -> Result<(), SessionError> {
        self.transition(SessionStatus::Idle, SessionStatus::Running, "start")
    }

    pub fn pause(&mut self) -> Result<(), SessionError> {
        self.transition(SessionStatus::Running, SessionStatus::Paused, "pause")
    }

    pub fn resume(&mut self) -> Result<(), SessionError> {
        self.transition(SessionStatus::Paused, SessionStatus::Running, "resume")
    }

    fn settle(&mut self) {
        if self.sim.is_finished() || self.sim.next_event_time().is_none() {
            self.sim.run_to_end();
            self.status = SessionStatus::Done;
        }
    }

    /// While paused: processes `events` events (default 1), or with `until`
    /// every event before that time, holding the clock there.
    pub fn step(&mut self, events: Option<u64>, until: Option<SimTime>) -> Result<u64, SessionError> {
        if self.status != SessionStatus::Paused {
            return Err(SessionError::IllegalTransition { from: self.status, action: "step" });
        }
        let before = self.sim.events_processed();
        match until {
            Some(t) => {
                let limit = events.unwrap_or(u64::MAX);
                while self.sim.events_processed() - before < limit && self.sim.next_event_time().is_some_and(|n| n < t) {
                    self.sim.step();
                }
                if self.sim.events_processed() - before < limit {
                    self.sim.advance_to(t);
                }
            }
            None => {
                self.sim.step_n(events.unwrap_or(1));
            }
        }
        self.settle();
        Ok(self.sim.events_processed() - before)
    }

    /// While running: processes up to `budget` events.
    pub fn advance(&mut self, budget: u64) -> u64 {
        if self.status != SessionStatus::Running {
            return 0;
        }
        let n = self.sim.step_n(budget);
        self.settle();
        n
    }

    /// Applies a model switch or constraint retune at the current clock.
    pub fn apply(&mut self, action: ControlAction) -> Result<SwitchReport, SessionError> {
        if self.status == SessionStatus::Done {
            return Err(SessionError::IllegalTransition { from: self.status, action: "reconfigure" });
        }
        let report = self.sim.apply_now(action)?;
        self.settle();
        Ok(report)
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            id: self.id.clone(),
            status: self.status,
            clock: self.sim.clock(),
            events: self.sim.events_processed(),
            trace_len: self.sim.trace().len(),
            active: self.sim.active_count(),
            config: *self.sim.config(),
            totals: self.sim.totals().clone(),
            per_class: self.sim.per_class().to_vec(),
        }
    }

    pub fn metrics(&self, since: SimTime) -> MetricsDelta {
        let stats = self.sim.stats();
        let next = stats.closed_until().max(since);
        let mut series = stats.slots_since(since);
        for s in &mut series {
            s.slots.retain(|sl| sl.start < next);
        }
        MetricsDelta { since, next, series }
    }

    /// Report of a finished session.
    pub fn report(&self) -> Option<RunReport> {
        (self.status == SessionStatus::Done).then(|| self.sim.clone().report())
    }
}
