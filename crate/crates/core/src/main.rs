use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use openlsv::runner::{self, ExperimentConfig, EXIT_OK, OUT_ENV};

/// Escape-rate experiments for the Liverani–Saussol–Vaienti map.
///
/// Exit codes: 0 ok, 1 I/O, 2 config, 3 budget, 4 extinction,
/// 5 validation failure, 6 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "openlsv", version)]
struct Cli {
    /// escape-rate | limit-distribution | cesaro | induced | validate
    kind: Option<String>,
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<String>,
    /// none | J<h> | <h>:<word> | py:<n> | control:<lo>,<hi>
    #[arg(long)]
    hole: Option<String>,
    /// lebesgue | power | srb
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// exact | density | montecarlo | all
    #[arg(long)]
    engine: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    particles: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Any other config key, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

fn build(cli: &Cli) -> openlsv::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let flags = [
        ("kind", &cli.kind),
        ("gamma", &cli.gamma),
        ("hole", &cli.hole),
        ("density", &cli.density),
        ("alpha", &cli.alpha),
        ("engine", &cli.engine),
        ("t_max", &cli.t_max),
        ("grid", &cli.grid),
        ("particles", &cli.particles),
        ("seed", &cli.seed),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    for kv in &cli.extra {
        let (k, v) = kv.split_once('=').ok_or_else(|| openlsv::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(&cli).and_then(|cfg| runner::run(&cfg));
    match result {
        Ok(report) => {
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            if report.exit_code != EXIT_OK {
                eprintln!("openlsv: run finished with failing checks");
            }
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("openlsv: {e}");
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}
