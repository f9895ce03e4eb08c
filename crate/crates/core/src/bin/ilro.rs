use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ilro::experiments::{load_config_file, run_experiment, Experiment};
use ilro::montecarlo::MismatchSpec;
use ilro::{Error, Result};

/// Phase-error sensitivity experiments for injection-locked ring oscillators.
#[derive(Debug, Parser)]
#[command(name = "ilro", version)]
struct Cli {
    /// lock, sensitivity-vs-theta, sensitivity-vs-phi0, sensitivity-vs-ffr,
    /// zero-sensitivity, monte-carlo or simulate
    experiment: Experiment,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add simulated sensitivity columns to the sweeps.
    #[arg(long)]
    oracle: bool,
    /// Mismatch RNG seed; overrides `mismatch.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> Result<()> {
    let mut file = load_config_file(&cli.config)?;
    match file.experiment {
        Some(e) if e != cli.experiment => {
            return Err(Error::Validation {
                field: "experiment".into(),
                constraint: format!("config names `{e}` but the command line asks for `{}`", cli.experiment),
            })
        }
        _ => file.experiment = Some(cli.experiment),
    }
    if let Some(out) = cli.out {
        file.output_dir = out;
    }
    if cli.oracle {
        file.include_oracle = true;
    }
    if let Some(seed) = cli.seed {
        file.mismatch.get_or_insert_with(MismatchSpec::default).seed = seed;
    }
    let config = file.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Validation {
                field: "jobs".into(),
                constraint: "must be >= 1".into(),
            });
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Error::Validation {
        field: "jobs".into(),
        constraint: e.to_string(),
    })?;
    let out = pool.install(|| run_experiment(&config))?;
    for f in &out.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are validation failures; help and version are not.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
