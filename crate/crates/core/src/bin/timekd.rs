use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use timekd::config::RunConfig;
use timekd::pipeline::{self, VARIANTS};
use timekd::{Error, Result};

#[derive(Parser)]
#[command(name = "timekd", version, about = "Privileged distillation for multivariate forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset and print its size and splits.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the teacher and write its checkpoint and artifact cache.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the student against the cached teacher outputs.
    Distill {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a student checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Forecast past the end of a CSV file.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `forecast.csv` in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Export attention maps, feature relations and a forecast comparison.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and score ablation variants over several seeds.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Comma-separated subset of the known variants.
        #[arg(long, value_delimiter = ',', default_value = "full,no_pkd")]
        variants: Vec<String>,
    },
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Ingest { config } => pipeline::ingest_run(&load(&config)?),
        Command::TrainTeacher { config } => pipeline::train_teacher_run(&load(&config)?),
        Command::Distill { config } => pipeline::distill_run(&load(&config)?),
        Command::Evaluate { config, checkpoint } => pipeline::evaluate_run(&load(&config)?, &checkpoint),
        Command::Forecast {
            config,
            checkpoint,
            input,
            output,
        } => {
            let cfg = load(&config)?;
            let output = output.unwrap_or_else(|| cfg.output_path().join("forecast.csv"));
            pipeline::forecast_run(&cfg, &checkpoint, &input, &output)
        }
        Command::Report { config } => pipeline::report_run(&load(&config)?),
        Command::Benchmark {
            config,
            seeds,
            variants,
        } => {
            let cfg = load(&config)?;
            let variants = if variants.iter().any(|v| v == "all") {
                VARIANTS.iter().map(|v| v.to_string()).collect()
            } else {
                variants
            };
            let reports = pipeline::benchmark_run(&cfg, &seeds, &variants, &mut |line| eprintln!("{line}"))?;
            Ok(reports.iter().map(|r| r.table()).collect::<Vec<_>>().join("\n"))
        }
    }
}

fn fail(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    eprintln!("error kind={} msg=\"{msg}\"", e.kind());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            let msg = text
                .lines()
                .take_while(|l| !l.starts_with("Usage"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let msg = msg.trim_start_matches("error: ").replace('"', "'");
            eprintln!("error kind=UsageError msg=\"{msg}\"");
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
