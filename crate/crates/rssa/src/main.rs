use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rssa::commands;
use rssa::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "rssa", version, about = "Robust safe control under learned dynamics uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// scara, segway or toy.
    #[arg(long, global = true)]
    robot: Option<String>,
    /// polytope, ellipsoid, constant or none.
    #[arg(long, global = true)]
    rssa: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Existing directory for the artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Ellipsoid confidence level.
    #[arg(long, global = true)]
    confidence: Option<f64>,
    /// Dynamics samples per bound.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Simulated seconds.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Search index parameters that keep every grid state feasible.
    Synthesize,
    /// Roll out the filtered reference controller; writes trajectory.csv.
    Simulate,
    /// Share of infeasible states over a joint-position grid.
    Feasmap,
    /// Largest index value reached for plants outside the modeled support.
    Fistudy,
    /// Filter cost against the number of dynamics samples.
    Bench,
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("robot", cli.robot.clone()),
        ("rssa", cli.rssa.clone()),
        ("seed", cli.seed.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("confidence", cli.confidence.map(|v| v.to_string())),
        ("samples", cli.samples.map(|v| v.to_string())),
        ("dt", cli.dt.map(|v| v.to_string())),
        ("horizon", cli.horizon.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects key=value, got {kv:?}"))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors are configuration errors: exit 1, not clap's 2, which
    // synthesize reserves for an uncertified result
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = build_config(&cli).and_then(|cfg| match cli.command {
        Command::Synthesize => commands::cmd_synthesize(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Feasmap => commands::cmd_feasmap(&cfg),
        Command::Fistudy => commands::cmd_fistudy(&cfg),
        Command::Bench => commands::cmd_bench(&cfg),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
