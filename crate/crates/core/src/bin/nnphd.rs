use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nnphd::experiment::{self, ExperimentError, Report};

#[derive(Parser)]
#[command(
    name = "nnphd",
    version,
    about = "Split learned force fields into conservative and non-conservative parts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file or preset name.
    Run {
        config: String,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent runs; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn run(
    config: &str,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<Report, ExperimentError> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    }
    let path = experiment::resolve_config_path(config)?;
    let mut cfg = experiment::load_config(&path)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    experiment::run(&cfg)
}

fn summarize(report: &Report) {
    match report {
        Report::Sweep(outcomes) => {
            for o in outcomes {
                println!(
                    "{} [{}]: jump {:.4}, tau {:.4}, non-conservative: {}",
                    o.verdict.system,
                    o.dir.display(),
                    o.verdict.jump,
                    o.verdict.tau,
                    o.verdict.is_nonconservative
                );
            }
        }
        Report::Decompose(outcomes) => {
            for o in outcomes {
                println!("{}: {} λ values -> {}", o.system, o.rows.len(), o.dir.display());
            }
        }
        Report::Extrapolate(r) => {
            for (name, d) in &r.divergence {
                println!(
                    "{name}: {} steps{}",
                    d.last_step,
                    if d.diverged { " (diverged)" } else { "" }
                );
            }
        }
        Report::DataQuality(r) => println!("{} coverage and {} imbalance runs", r.coverage.len(), r.imbalance.len()),
        Report::Symbolic(r) => {
            let params: Vec<String> = r.fit.params.iter().map(|(k, v)| format!("{k} = {v:.6}")).collect();
            println!(
                "{}: {} (rms residual {:e})",
                r.fit.template,
                params.join(", "),
                r.fit.rms_residual
            );
        }
        Report::TricksAblation(outcomes) => {
            for o in outcomes {
                println!(
                    "{}: final L_e {:.6}, singular {}",
                    o.variant, o.final_le, o.singular_errors
                );
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run {
        config,
        output_dir,
        seed,
        threads,
    } = cli.command;
    match run(&config, output_dir, seed, threads) {
        Ok(report) => {
            summarize(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
