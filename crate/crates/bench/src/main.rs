use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use explore_bench::{report, run, write_results, ExperimentSpec};

/// Runs an exploration experiment against the simulated user.
#[derive(Parser, Debug)]
#[command(name = "explore-bench", version)]
struct Args {
    /// Experiment file (.json or .toml).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for records and summaries.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace the experiment's seed list with this many seeds starting at 0.
    #[arg(long)]
    seeds: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: &Args) -> explore_bench::Result<()> {
    let mut spec = ExperimentSpec::from_path(&args.spec)?;
    if let Some(n) = args.seeds {
        spec.seeds = (0..n).collect();
    }
    let records = run(&spec, args.jobs)?;
    write_results(&args.out, &records)?;
    for s in report(&records).results.strategies {
        println!(
            "{:<16} runs={:<3} reached={:<3} median_effort={:<8.1} median_f={:.3}",
            s.strategy, s.runs, s.reached_target, s.median_effort, s.median_final_f
        );
    }
    Ok(())
}
