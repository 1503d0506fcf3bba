//! `lmc`: train forked siblings and measure linear mode connectivity.
//!
//! Every subcommand runs the same pipeline restricted to its stages. Without
//! `--config` the desk-scale preset is used (the toy preset for `toy`).
//! `LMC_THREADS` sets the worker thread count.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lmc_core::harness::{run_experiment, ExperimentConfig, RunOptions, RunOutput, Stages};

#[derive(Parser)]
#[command(name = "lmc", version, about = "Linear mode connectivity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the parent and store its checkpoints.
    Train(Common),
    /// Train the parent and all configured forks.
    Fork(Common),
    /// Barrier curves between final siblings, plus curve evolution.
    Barrier(Common),
    /// Second-order barrier predictions against the actual barriers.
    Predict(Common),
    /// Single-layer barriers and the layer-pair block decomposition.
    Layerwise(Common),
    /// Sibling angles, solution-plane cosines and distances.
    Geometry(Common),
    /// Toy landscape barriers and traces only.
    Toy(Common),
    /// Everything the config requests.
    Report(Common),
    /// Print a preset config as JSON.
    Preset {
        #[arg(value_enum)]
        name: Preset,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config is given.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<Preset>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the init and shuffle seeds.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Continue a partial or completed run, reusing its checkpoints.
    #[arg(long, conflicts_with = "overwrite")]
    resume: bool,
    /// Delete an existing run directory first.
    #[arg(long)]
    overwrite: bool,
    /// Also render SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Toy,
}

impl Preset {
    fn config(self) -> ExperimentConfig {
        match self {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Toy => ExperimentConfig::toy(),
        }
    }
}

fn stages(command: &Command) -> Stages {
    let none = Stages::none();
    match command {
        Command::Train(_) | Command::Preset { .. } => none,
        Command::Fork(_) => Stages { fork: true, ..none },
        Command::Barrier(_) => Stages {
            fork: true,
            barrier: true,
            ..none
        },
        Command::Predict(_) => Stages {
            fork: true,
            predict: true,
            ..none
        },
        Command::Layerwise(_) => Stages {
            fork: true,
            layerwise: true,
            ..none
        },
        Command::Geometry(_) => Stages {
            fork: true,
            geometry: true,
            ..none
        },
        Command::Toy(_) => Stages { toy: true, ..none },
        Command::Report(_) => Stages::all(),
    }
}

fn load_config(args: &Common, default: Preset) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => args.preset.unwrap_or(default).config(),
    };
    if let Some(seed) = args.seed_override {
        cfg = cfg.with_seed_override(seed);
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("LMC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .with_context(|| format!("LMC_THREADS must be a positive integer, got `{value}`"))?;
    anyhow::ensure!(n > 0, "LMC_THREADS must be a positive integer, got `{value}`");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn print_outcome(out: &RunOutput) {
    println!("run directory: {}", out.dir.display());
    println!("run hash:      {}", out.manifest.run_hash);
    if let Some(p) = &out.parent {
        println!(
            "parent:        final loss {:.6}, gradient norm {:.6}",
            p.final_loss, p.final_grad_norm
        );
    }
    for f in &out.forks {
        let e = f.fork_epoch();
        match (&f.comparison, f.curves.first()) {
            (Some(c), _) => println!(
                "fork {e:>3}:      actual {:.6} at α={:.3}, predicted {:.6}",
                c.actual_max, c.actual_argmax, c.predicted_half
            ),
            (None, Some(curve)) => {
                let (a, b) = curve.max();
                println!(
                    "fork {e:>3}:      {} barrier {b:.6} at α={a:.3}",
                    curve.metric_kind.as_str()
                );
            }
            (None, None) => {
                let [l1, l2] = f.run.manifest.child_final_losses;
                println!("fork {e:>3}:      children final loss {l1:.6}, {l2:.6}");
            }
        }
        if let Some(g) = f.geometry.first() {
            println!(
                "               angle {} deg, cosine 0.9 after {} child epochs",
                g.angle.map(|a| format!("{a:.2}")).unwrap_or_else(|| "-".into()),
                g.epochs_to_cosine(0.9)
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "-".into())
            );
        }
    }
    if let Some(t) = &out.toy {
        for r in &t.barriers {
            println!(
                "toy {} <-> {}:  barrier {:.6}, predicted {:.6}",
                r.theta_i, r.theta_j, r.actual_max, r.predicted_half
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let stages = stages(&cli.command);
    let (args, default) = match &cli.command {
        Command::Preset { name } => {
            println!("{}", serde_json::to_string_pretty(&name.config())?);
            return Ok(());
        }
        Command::Toy(a) => (a, Preset::Toy),
        Command::Train(a)
        | Command::Fork(a)
        | Command::Barrier(a)
        | Command::Predict(a)
        | Command::Layerwise(a)
        | Command::Geometry(a)
        | Command::Report(a) => (a, Preset::Desk),
    };
    let cfg = load_config(args, default)?;
    let opts = RunOptions {
        stages,
        resume: args.resume,
        overwrite: args.overwrite,
        svg: args.svg,
    };
    let out = run_experiment(&cfg, &opts).with_context(|| format!("running into {}", cfg.output_dir.display()))?;
    print_outcome(&out);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
