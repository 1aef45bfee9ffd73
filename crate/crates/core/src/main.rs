use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use snvrg::driver::classify_point;
use snvrg::harness::{run_trials, verify, write_trace, ExperimentConfig, Suite};
use snvrg::schedule::derive_schedule;
use snvrg::{Error, Result};

#[derive(Parser)]
#[command(name = "snvrg", version, about = "Nested variance-reduced saddle-escaping optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the nested schedule for a base batch size as JSON.
    DeriveSchedule {
        #[arg(long)]
        b0: u64,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
    },
    /// Run the trials described by a config file and write traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Fill the wall_ms column (makes output nondeterministic).
        #[arg(long)]
        wall_time: bool,
    },
    /// Run the verification suites and print a pass/fail table.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report gradient norm and smallest Hessian eigenvalue at a point.
    Classify {
        #[arg(long)]
        config: PathBuf,
        /// JSON array of coordinates.
        #[arg(long)]
        point: PathBuf,
    },
}

enum Failure {
    Invalid(Error),
    Suite,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Suite) => ExitCode::from(2),
    }
}

fn execute(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::DeriveSchedule { b0, m } => {
            let s = derive_schedule(b0, m)?;
            println!("{}", serde_json::to_string_pretty(&s.summary()).expect("plain data"));
        }
        Command::Run { config, seed, out, jobs, wall_time } => {
            let cfg = ExperimentConfig::load(&config)?;
            let problem = cfg.build_problem()?;
            let driver = cfg.driver_config(&problem)?;
            let seed = seed.unwrap_or(cfg.seed);
            let dir = out.or(cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let results = run_trials(&problem, &driver, cfg.trials, seed, jobs)?;
            write_trace(&results, &driver, &dir, wall_time)?;
            for r in &results {
                println!(
                    "trial {}: {} grads={} |grad F|={:.3e} lambda_min={:.4}",
                    r.trial,
                    r.outcome.status.as_str(),
                    r.outcome.grads_total,
                    r.class.gradient_norm,
                    r.class.lambda_min
                );
            }
        }
        Command::Verify { suite, seed } => {
            let suite: Suite = suite.parse()?;
            let reports = verify(&suite, seed)?;
            for r in &reports {
                println!("{:<10} {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
            }
            if reports.iter().any(|r| !r.passed) {
                return Err(Failure::Suite);
            }
        }
        Command::Classify { config, point } => {
            let cfg = ExperimentConfig::load(&config)?;
            let problem = cfg.build_problem()?;
            let z = read_point(&point)?;
            if z.len() != problem.as_dyn().dim() {
                return Err(Error::InvalidArgument(format!(
                    "point has {} coordinates, problem has {}",
                    z.len(),
                    problem.as_dyn().dim()
                ))
                .into());
            }
            let c = classify_point(problem.as_dyn(), &z, cfg.algorithm.eps, cfg.algorithm.eps_h);
            println!("{}", serde_json::to_string_pretty(&c).expect("plain data"));
        }
    }
    Ok(())
}

fn read_point(path: &PathBuf) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })
}
