//! Batch execution of scenario scripts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dstesim_core::prelude::*;

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub export_dir: Option<PathBuf>,
    /// Forces the event trace on, whatever the script says.
    pub trace: bool,
    pub parallel: bool,
}

#[derive(Debug)]
pub enum BatchError {
    Script(ScriptError),
    Engine(EngineError),
    Io(String),
}

impl BatchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BatchError::Script(e) => e.exit_code(),
            BatchError::Engine(_) => 3,
            BatchError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for BatchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BatchError::Script(ScriptError::Parse { line, message }) => write!(f, "parse error at line {line}: {message}"),
            BatchError::Script(e @ ScriptError::Semantic { .. }) => write!(f, "semantic error: {e}"),
            BatchError::Engine(e) => write!(f, "semantic error: {e}"),
            BatchError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for BatchError {}

/// Parses, runs and optionally exports a script given as text.
pub fn run_script(text: &str, base: Option<&Path>, opts: &BatchOptions) -> Result<Vec<RunReport>, BatchError> {
    let mut scenario = parse_script(text, base).map_err(BatchError::Script)?;
    scenario.trace |= opts.trace;
    let reports = if opts.parallel { run_parallel(&scenario) } else { run(&scenario) }.map_err(BatchError::Engine)?;
    if let Some(dir) = &opts.export_dir {
        for r in &reports {
            r.export(dir).map_err(|e| BatchError::Io(format!("export to {}: {e}", dir.display())))?;
        }
    }
    Ok(reports)
}

pub fn run_script_file(path: &Path, opts: &BatchOptions) -> Result<Vec<RunReport>, BatchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BatchError::Io(format!("{}: {e}", path.display())))?;
    run_script(&text, path.parent(), opts)
}

fn pct(p: Option<f64>) -> String {
    p.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "-".into())
}

/// One line per run plus per-class blocking.
pub fn summary(reports: &[RunReport]) -> String {
    let mut s = String::new();
    writeln!(s, "{:>4} {:>20} {:>9} {:>9} {:>8} {:>8} {:>10} {:>9} {:>9}", "run", "seed", "requests", "grants", "blocks", "preempt", "devolved", "blocking", "util").unwrap();
    for r in reports {
        let util = r.links.iter().filter_map(|l| l.mean_utilization).fold(None, |m: Option<f64>, u| Some(m.map_or(u, |m| m.max(u))));
        writeln!(
            s,
            "{:>4} {:>20} {:>9} {:>9} {:>8} {:>8} {:>10} {:>9} {:>9}",
            r.run,
            r.seed,
            r.totals.requests,
            r.totals.grants,
            r.totals.blocks(),
            r.totals.preemptions,
            r.totals.devolutions,
            pct(r.blocking_probability),
            util.map(|u| format!("{u:.2}%")).unwrap_or_else(|| "-".into()),
        )
        .unwrap();
        let classes: Vec<String> = r.class_blocking_probability.iter().enumerate().map(|(c, p)| format!("tc{c} {}", pct(*p))).collect();
        writeln!(s, "     blocking by class: {}", classes.join(", ")).unwrap();
    }
    s
}
