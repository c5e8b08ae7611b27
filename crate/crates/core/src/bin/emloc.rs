use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emloc::config::{parse_config, ExperimentKind};
use emloc::experiment::run_experiment;
use emloc::Error;

#[derive(Parser)]
#[command(name = "emloc", version, about = "Time-harmonic Maxwell localization and Runge experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refinement study against a plane wave or a manufactured solution.
    Verify(RunArgs),
    /// Cavity resonances up to `resonances.k_max`.
    Resonances(RunArgs),
    /// Localized boundary data concentrating energy in M and not in D.
    Localize(RunArgs),
    /// Tikhonov sweep approximating a local solution on O.
    Runge(RunArgs),
    /// Localized data derived from a Runge fit, compared with `localize`.
    RungeLocalize(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set mesh.divisions=[4,4,4]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Verify(a) => (ExperimentKind::Verify, a),
            Command::Resonances(a) => (ExperimentKind::Resonances, a),
            Command::Localize(a) => (ExperimentKind::Localize, a),
            Command::Runge(a) => (ExperimentKind::Runge, a),
            Command::RungeLocalize(a) => (ExperimentKind::RungeLocalize, a),
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("EMLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("EMLOC_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    init_threads()?;
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::Io {
        path: args.config.clone(),
        source: e,
    })?;
    let mut cfg = parse_config(&text)?;
    for s in &args.set {
        cfg.apply_override(s)?;
    }
    cfg.kind = kind;
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("emloc-out"));
    let report = run_experiment(&cfg, &out)?;
    for (k, v) in &report.summary {
        println!("{k} = {v}");
    }
    for c in &report.checks {
        println!("check {} {} ({})", c.name, if c.passed { "ok" } else { "FAILED" }, c.detail);
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    report.ensure_passed()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emloc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
