//! Case-based model advisor: k-nearest-neighbour retrieval over traffic and
//! performance signatures, recommendation and retention.
//!
//! Feature layout for `C` classes, length `2C + 1`:
//! `[share_0 .. share_{C-1}, load / capacity, blocking_0 .. blocking_{C-1}]`
//! where shares are per-class offered-load fractions summing to 1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bandwidth, BcVector};
use crate::engine::{PhaseSummary, RunReport};
use crate::kernel::BamModel;
use crate::stats::Counters;

pub const CASE_BASE_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("case base is empty")]
    EmptyBase,
    #[error("feature vector has {got} entries, case base expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid case base: {0}")]
    Invalid(String),
    #[error("unsupported case base version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub model: BamModel,
    /// Bandwidth constraints as fractions of link capacity.
    pub bc_fractions: Vec<f64>,
}

impl Solution {
    pub fn from_bc(model: BamModel, bc: &BcVector, capacity: Bandwidth) -> Self {
        let cap = capacity.as_mbps();
        Solution { model, bc_fractions: bc.0.iter().map(|b| b.as_mbps() / cap).collect() }
    }

    /// Constraints for a link of `capacity`, rounded to 0.001 Mb/s.
    pub fn bc_for(&self, capacity: Bandwidth) -> BcVector {
        BcVector(self.bc_fractions.iter().map(|f| Bandwidth::from_millis((f * capacity.millis() as f64).round() as u64)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub features: Vec<f64>,
    pub solution: Solution,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
    pub case: Case,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub model: BamModel,
    pub bc_fractions: Vec<f64>,
    pub confidence: f64,
    pub distance: f64,
    pub score: f64,
    pub case_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseBase {
    pub version: u32,
    pub k: usize,
    /// One weight per feature; empty until the first case fixes the
    /// dimension, then unit weights unless set.
    pub weights: Vec<f64>,
    pub cases: Vec<Case>,
}

impl Default for CaseBase {
    fn default() -> Self {
        CaseBase { version: CASE_BASE_VERSION, k: DEFAULT_K, weights: Vec::new(), cases: Vec::new() }
    }
}

/// Outcome score of a counter set: one minus the fraction of requests that
/// were blocked or later preempted. `None` without requests.
pub fn score(c: &Counters) -> Option<f64> {
    (c.requests > 0).then(|| (1.0 - (c.blocks() + c.preemptions) as f64 / c.requests as f64).clamp(0.0, 1.0))
}

/// Feature vector of a phase observed on links of `capacity`.
pub fn phase_features(phase: &PhaseSummary, capacity: Bandwidth) -> Vec<f64> {
    let blocking: Vec<f64> = phase.per_class.iter().map(|c| c.blocking_probability().unwrap_or(0.0)).collect();
    features(&phase.offered_load, capacity, &blocking)
}

/// Builds a feature vector from per-class offered load (Mb/s) and per-class
/// blocking probability.
pub fn features(offered_load: &[f64], capacity: Bandwidth, blocking: &[f64]) -> Vec<f64> {
    let total: f64 = offered_load.iter().sum();
    let mut f: Vec<f64> = offered_load.iter().map(|l| if total > 0.0 { l / total } else { 0.0 }).collect();
    f.push(total / capacity.as_mbps());
    f.extend_from_slice(blocking);
    f
}

impl CaseBase {
    pub fn new(k: usize, weights: Vec<f64>) -> Result<Self, AdvisorError> {
        let b = CaseBase { k, weights, ..CaseBase::default() };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        if !self.weights.is_empty() {
            Some(self.weights.len())
        } else {
            self.cases.first().map(|c| c.features.len())
        }
    }

    pub fn validate(&self) -> Result<(), AdvisorError> {
        if self.version != CASE_BASE_VERSION {
            return Err(AdvisorError::Version(self.version));
        }
        if self.k == 0 {
            return Err(AdvisorError::Invalid("k must be at least 1".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AdvisorError::Invalid("weights must be finite and non-negative".into()));
        }
        if !self.weights.is_empty() && self.weights.iter().all(|&w| w == 0.0) {
            return Err(AdvisorError::Invalid("weights must not all be zero".into()));
        }
        for c in &self.cases {
            self.check_case(c)?;
        }
        Ok(())
    }

    fn check_dimension(&self, got: usize) -> Result<(), AdvisorError> {
        match self.dimension() {
            Some(expected) if expected != got => Err(AdvisorError::DimensionMismatch { expected, got }),
            _ => Ok(()),
        }
    }

    fn check_case(&self, c: &Case) -> Result<(), AdvisorError> {
        self.check_dimension(c.features.len())?;
        if c.features.is_empty() || c.features.iter().any(|x| !x.is_finite()) {
            return Err(AdvisorError::Invalid("features must be finite and non-empty".into()));
        }
        if !(0.0..=1.0).contains(&c.score) {
            return Err(AdvisorError::Invalid(format!("score {} outside [0, 1]", c.score)));
        }
        if c.solution.bc_fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(AdvisorError::Invalid("BC fractions must be non-negative".into()));
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.get(i).copied().unwrap_or(1.0)
    }

    /// Weighted Euclidean distance.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).enumerate().map(|(i, (x, y))| self.weight(i) * (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    /// The `k` nearest cases, nearest first; ties keep insertion order.
    pub fn retrieve(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, AdvisorError> {
        if self.cases.is_empty() {
            return Err(AdvisorError::EmptyBase);
        }
        self.check_dimension(query.len())?;
        let mut all: Vec<(usize, f64)> = self.cases.iter().enumerate().map(|(i, c)| (i, self.distance(query, &c.features))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(all.into_iter().take(k.max(1)).map(|(index, distance)| Neighbor { index, distance, case: self.cases[index].clone() }).collect())
    }

    /// Solution of the best-scoring case among the `k` nearest; ties go to
    /// the nearer case.
    pub fn recommend(&self, query: &[f64]) -> Result<Recommendation, AdvisorError> {
        let near = self.retrieve(query, self.k)?;
        let best = near.iter().fold(&near[0], |best, n| if n.case.score > best.case.score { n } else { best });
        Ok(Recommendation {
            model: best.case.solution.model,
            bc_fractions: best.case.solution.bc_fractions.clone(),
            confidence: 1.0 / (1.0 + best.distance),
            distance: best.distance,
            score: best.case.score,
            case_index: best.index,
        })
    }

    /// Appends `case`, or replaces a case with identical features when the
    /// new score is higher. Returns whether the base changed.
    pub fn retain(&mut self, case: Case) -> Result<bool, AdvisorError> {
        self.check_case(&case)?;
        if let Some(existing) = self.cases.iter_mut().find(|c| c.features == case.features) {
            if case.score > existing.score {
                *existing = case;
                return Ok(true);
            }
            return Ok(false);
        }
        if self.weights.is_empty() {
            self.weights = vec![1.0; case.features.len()];
        }
        self.cases.push(case);
        Ok(true)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case base serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AdvisorError> {
        let b: CaseBase = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self, AdvisorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), AdvisorError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Learns one case per phase from runs of several configurations over
    /// the same scenario and seeds: the configuration with the highest mean
    /// score wins, with features averaged over its runs.
    pub fn seed_from_runs(&mut self, candidates: &[(Solution, Vec<RunReport>)], capacity: Bandwidth) -> Result<usize, AdvisorError> {
        let phases = candidates.iter().flat_map(|(_, rs)| rs.iter().map(|r| r.phases.len())).min().unwrap_or(0);
        let mut added = 0;
        for p in 0..phases {
            let mut best: Option<(f64, &Solution, Vec<f64>)> = None;
            for (solution, runs) in candidates {
                let scores: Vec<f64> = runs.iter().filter_map(|r| score(&r.phases[p].totals)).collect();
                if scores.is_empty() {
                    continue;
                }
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                if best.as_ref().is_none_or(|(s, _, _)| mean > *s) {
                    let mut f = vec![0.0; phase_features(&runs[0].phases[p], capacity).len()];
                    for r in runs {
                        for (acc, x) in f.iter_mut().zip(phase_features(&r.phases[p], capacity)) {
                            *acc += x / runs.len() as f64;
                        }
                    }
                    best = Some((mean, solution, f));
                }
            }
            if let Some((s, solution, features)) = best {
                if self.retain(Case { features, solution: solution.clone(), score: s })? {
                    added += 1;
                }
            }
        }
        Ok(added)
    }
}
