use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hoca_cli::{run, Command, RunArgs, RunConfig};
use hoca_core::crawler::OutputFormat;

#[derive(Parser)]
#[command(name = "hoca", version, about = "Region crawling, attribution, cube join and materialization")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Crawl the input cube's regions and write region-signal records.
    Crawl(Common),
    /// Score per-region contributions to a metric change.
    Attribute(Common),
    /// Join two cubes and write the joined cellset.
    Join(Common),
    /// Write a cellset, chunked or rechunked store.
    Materialize(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Run the naive enumeration instead of the pruned crawl.
    #[arg(long, value_enum)]
    oracle: Option<Oracle>,
    /// Write an instrumentation report (JSON) to this path.
    #[arg(long)]
    instrument: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Naive,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Crawl(c) => (Command::Crawl, c),
        Sub::Attribute(c) => (Command::Attribute, c),
        Sub::Join(c) => (Command::Join, c),
        Sub::Materialize(c) => (Command::Materialize, c),
    };
    let args = RunArgs {
        output: common.output,
        format: common.format.map(|f| match f {
            Format::Csv => OutputFormat::Csv,
            Format::Jsonl => OutputFormat::Jsonl,
        }),
        workers: common.workers,
        naive: common.oracle.is_some(),
        instrument: common.instrument,
        safety_cap: std::env::var("HOCA_SAFETY_CAP").ok(),
    };
    let result = RunConfig::load(&common.config).and_then(|cfg| {
        if args.workers == Some(0) {
            return Err(hoca_cli::CliError::Config("--workers must be at least 1".into()));
        }
        if args.naive && command != Command::Crawl {
            return Err(hoca_cli::CliError::Config("--oracle applies to `crawl` only".into()));
        }
        run(command, &cfg, &args)
    });
    match result {
        Ok(outcome) => {
            for w in outcome.warnings {
                eprintln!("{w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("record serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}
