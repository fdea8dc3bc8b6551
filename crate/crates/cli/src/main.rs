use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use redei_cli::{list_experiments, render, run_experiment, write_output, ExperimentConfig, Format};

#[derive(Parser)]
#[command(name = "redei", version, about = "Seeded experiments on Redei matrices and Cohen-Lenstra statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List registered experiments in their stable order.
    List,
    /// Run one experiment.
    Run {
        #[arg(long)]
        experiment: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Shorthand for `run --experiment additive-suite`.
    AdditiveCheck(RunArgs),
    /// Shorthand for `run --experiment divisor-trends`.
    DivisorStats(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 3)]
    l: u32,
    /// Bound N; defaults per experiment.
    #[arg(long = "N", alias = "n")]
    n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; the report does not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the output here (atomically) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Tolerance override KEY=VALUE; repeatable.
    #[arg(long = "tolerance", value_name = "KEY=VALUE")]
    tolerances: Vec<String>,
    /// Report runtime_ms as 0, for byte-comparable output.
    #[arg(long)]
    no_timing: bool,
}

fn parse_tolerances(raw: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in raw {
        let Some((k, v)) = item.split_once('=') else { bail!("tolerance `{item}` is not KEY=VALUE") };
        let v: f64 = v.trim().parse().with_context(|| format!("tolerance `{item}`"))?;
        if !(v >= 0.0) {
            bail!("tolerance `{item}` must be a nonnegative number");
        }
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

fn run(name: &str, args: RunArgs) -> anyhow::Result<bool> {
    let format = match args.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
    let cfg = ExperimentConfig {
        name: name.to_string(),
        l: args.l,
        n: args.n,
        seed: args.seed,
        tolerances: parse_tolerances(&args.tolerances)?,
        output: None,
        format,
        workers: args.workers,
    };
    let mut report = run_experiment(&cfg)?;
    if args.no_timing {
        report.runtime_ms = 0;
    }
    match &args.out {
        Some(path) => write_output(&report, format, path)?,
        None => std::io::stdout().write_all(render(&report, format)?.as_bytes())?,
    }
    let mut err = std::io::stderr().lock();
    for m in &report.results {
        let verdict = if m.pass { "PASS" } else { "FAIL" };
        writeln!(err, "{verdict} {} = {} (expected {}, tolerance {})", m.metric, m.value, m.expected, m.tolerance)?;
    }
    writeln!(err, "{}: {} ms", report.config.name, report.runtime_ms)?;
    Ok(report.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::List => {
            for e in list_experiments() {
                let n = e.default_n.map_or_else(|| "-".to_string(), |n| n.to_string());
                println!("{:<22} N={:<10} {}", e.name, n, e.anchor);
            }
            Ok(true)
        }
        Command::Run { experiment, args } => run(&experiment, args),
        Command::AdditiveCheck(args) => run("additive-suite", args),
        Command::DivisorStats(args) => run("divisor-trends", args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
