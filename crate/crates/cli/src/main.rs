use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dstesim_cli::batch::{run_script_file, summary, BatchOptions};
use dstesim_cli::server::{serve, AppState};
use dstesim_core::advisor::CaseBase;

/// DS-TE bandwidth allocation model simulator.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Scenario script to execute.
    #[arg(long, conflicts_with = "serve")]
    script: Option<PathBuf>,
    /// Directory for per-run summary, series and trace files.
    #[arg(long)]
    export_dir: Option<PathBuf>,
    /// Start the HTTP service on this address, e.g. 127.0.0.1:8080.
    #[arg(long)]
    serve: Option<String>,
    /// Record the event trace (JSON Lines export).
    #[arg(long)]
    trace: bool,
    /// Execute runs on separate threads.
    #[arg(long)]
    parallel: bool,
    /// Case base loaded at service start.
    #[arg(long, requires = "serve")]
    cases: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(addr) = args.serve {
        let base = match &args.cases {
            Some(p) => match CaseBase::load(p) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: {}: {e}", p.display());
                    return ExitCode::from(1);
                }
            },
            None => CaseBase::default(),
        };
        let dir = args.cases.as_ref().and_then(|p| p.parent()).map(PathBuf::from);
        let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
        return match rt.block_on(serve(&addr, AppState::new(base, dir))) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }
    let Some(script) = args.script else {
        eprintln!("error: give --script <file> or --serve <addr>");
        return ExitCode::from(1);
    };
    let opts = BatchOptions { export_dir: args.export_dir, trace: args.trace, parallel: args.parallel };
    match run_script_file(&script, &opts) {
        Ok(reports) => {
            print!("{}", summary(&reports));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
