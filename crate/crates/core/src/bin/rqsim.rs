use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rqsim::cli::config::ExperimentConfig;
use rqsim::cli::generate::cmd_generate;
use rqsim::cli::report::cmd_report;
use rqsim::cli::run::cmd_run;

#[derive(Parser)]
#[command(
    name = "rqsim",
    about = "Rate-quality rate-control experiments on a simulated variable-rate codec",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic sequence profiles.
    Generate {
        /// Master seed; outputs are byte-identical per seed.
        #[arg(long)]
        seed: u64,
        /// Number of sequence files to write.
        #[arg(long, default_value_t = 5)]
        count: usize,
        /// Frame-parameter drift of the AR(1) walk.
        #[arg(long, default_value_t = 0.01)]
        drift: f64,
        /// Frames per sequence.
        #[arg(long, default_value_t = 96)]
        frames: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment from a config file; writes traces and summaries.
    Run {
        /// Experiment config JSON. Omit to run the built-in benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Parallel worker threads for independent cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Print the built-in benchmark config and exit.
        #[arg(long, default_value_t = false)]
        print_default_config: bool,
    },
    /// Rebuild summary tables and per-frame deviation data from traces.
    Report {
        /// Directory containing trace__*.csv files.
        #[arg(long)]
        traces: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> rqsim::Result<()> {
    match cli.command {
        Command::Generate {
            seed,
            count,
            drift,
            frames,
            out,
        } => {
            let files = cmd_generate(seed, count, drift, frames, &out)?;
            for f in &files {
                println!("{}", f.display());
            }
        }
        Command::Run {
            config,
            out,
            jobs,
            print_default_config,
        } => {
            if print_default_config {
                println!("{}", ExperimentConfig::default_benchmark().to_json()?);
                return Ok(());
            }
            let cfg = match &config {
                Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
                None => ExperimentConfig::default_benchmark(),
            };
            let output = cmd_run(&cfg, &out, jobs)?;
            println!(
                "wrote {} traces, {}, {}",
                output.trace_files.len(),
                output.summary_file.display(),
                output.table_file.display()
            );
            for m in &output.result.summaries {
                match m.bd_rate_pct {
                    Some(bd) => println!(
                        "{:<18} deviation {:6.2}%  bd-rate {:+6.2}%",
                        m.method.as_str(),
                        m.mean_deviation_pct,
                        bd
                    ),
                    None => println!(
                        "{:<18} deviation {:6.2}%",
                        m.method.as_str(),
                        m.mean_deviation_pct
                    ),
                }
            }
        }
        Command::Report { traces, out } => {
            let output = cmd_report(&traces, &out)?;
            println!(
                "wrote {}, {}, {}",
                output.summary_file.display(),
                output.table_file.display(),
                output.per_frame_file.display()
            );
        }
    }
    Ok(())
}
