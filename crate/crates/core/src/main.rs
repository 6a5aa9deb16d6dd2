use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use byzdl::config::{parse_config, ExperimentConfig};
use byzdl::engine::run_experiment;
use byzdl::presets::{preset, PRESET_NAMES};
use byzdl::topology::{uniform_mixing_with, validate_topology};
use byzdl::trace::{default_out_dir, emit_traces};
use byzdl::{Error, Result};

/// Byzantine attacks and robust aggregation in gossip and federated learning.
#[derive(Parser)]
#[command(name = "byzdl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Run {
        config: PathBuf,
        /// Trace directory (defaults to the config's output.dir, then $BYZDL_OUT_DIR, then ./traces).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every variant of a named preset.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every config matching a glob pattern, in parallel.
    Sweep {
        pattern: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and print the resolved settings.
    Validate { config: PathBuf },
    /// List the preset names and their variants.
    ListPresets,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text)
}

fn out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(default_out_dir)
}

fn execute(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let run = run_experiment(cfg)?;
    let (csv, _) = emit_traces(&run, &out_dir(out, cfg))?;
    let last = run.last();
    println!(
        "{}: epoch {} mean acc {:.4} mean C {:.3e} mean D {:.3e} -> {}",
        cfg.name,
        last.epoch,
        last.mean_accuracy,
        last.mean_consensus,
        last.mean_distance,
        csv.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => execute(&load(&config)?, out.as_deref()),
        Command::Preset { name, out, epochs, seed } => {
            let mut runs = preset(&name)?.runs;
            for cfg in &mut runs {
                if let Some(e) = epochs {
                    cfg.epochs = e;
                }
                if let Some(s) = seed {
                    cfg.seed = s;
                }
            }
            runs.par_iter()
                .map(|cfg| execute(cfg, out.as_deref()))
                .collect::<Vec<_>>()
                .into_iter()
                .collect()
        }
        Command::Sweep { pattern, out } => {
            let paths: Vec<PathBuf> = glob::glob(&pattern)
                .map_err(|e| Error::Config(vec![format!("pattern: {e}")]))?
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Io {
                    path: e.path().to_path_buf(),
                    source: e.into(),
                })?;
            if paths.is_empty() {
                return Err(Error::Config(vec![format!("pattern: nothing matches `{pattern}`")]));
            }
            let configs = paths.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            configs
                .par_iter()
                .map(|cfg| execute(cfg, out.as_deref()))
                .collect::<Vec<_>>()
                .into_iter()
                .collect()
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let mut topo = cfg.build_topology()?;
            if let Some(r) = cfg.topology.remove_node {
                topo = topo.without_node(r)?;
            }
            let report = validate_topology(&topo, &uniform_mixing_with(&topo, cfg.topology.self_weight));
            print!("{}", byzdl::render_config(&cfg));
            println!(
                "# connected = {}, honest subgraph connected = {}, symmetric = {}, doubly stochastic = {}",
                report.connected, report.honest_subgraph_connected, report.symmetric, report.doubly_stochastic
            );
            Ok(())
        }
        Command::ListPresets => {
            for name in PRESET_NAMES {
                println!("{name}: {}", preset(name)?.variants().join(", "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
