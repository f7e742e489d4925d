use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybridkernel::{parse_config, run, AppError, Experiment};

#[derive(Parser)]
#[command(
    name = "hybridkernel",
    version,
    about = "Hybrid kernel models: VLE and Koopman experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bubble-point VLE dataset.
    VleData(Common),
    /// KRR around the relative-volatility model.
    Setting1(Common),
    /// Gibbs-energy targets: translated reference versus Margules subspace.
    Setting2(Common),
    /// Mixtures over sampled Wilson models.
    Setting3(Common),
    /// Hybrid Koopman generator fits for the reactor.
    Koopman(Common),
    /// Closed-loop CLF control with fitted lifted models.
    Control(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated regularization grid.
    #[arg(long)]
    lambda: Option<String>,
    /// Comma-separated parameter-sample counts.
    #[arg(long)]
    m: Option<String>,
    /// Training sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (Experiment, Common) {
        match self {
            Command::VleData(c) => (Experiment::VleData, c),
            Command::Setting1(c) => (Experiment::Setting1, c),
            Command::Setting2(c) => (Experiment::Setting2, c),
            Command::Setting3(c) => (Experiment::Setting3, c),
            Command::Koopman(c) => (Experiment::Koopman, c),
            Command::Control(c) => (Experiment::Control, c),
        }
    }
}

fn overrides(c: &Common) -> Result<Vec<(String, String)>, AppError> {
    let mut out = Vec::new();
    for raw in &c.set {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| AppError::config(format!("--set expects KEY=VALUE, got `{raw}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let flags = [
        ("seed", c.seed.map(|s| s.to_string())),
        ("lambda", c.lambda.clone()),
        ("m", c.m.clone()),
        ("n", c.n.map(|n| n.to_string())),
        ("out", c.out.as_ref().map(|p| p.display().to_string())),
    ];
    out.extend(
        flags
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v))),
    );
    Ok(out)
}

fn execute(cli: Cli) -> Result<(), AppError> {
    let (experiment, common) = cli.command.split();
    let cfg = parse_config(experiment, common.config.as_deref(), &overrides(&common)?)?;
    for path in run(&cfg)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hybridkernel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
