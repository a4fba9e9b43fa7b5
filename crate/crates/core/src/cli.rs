//! The `cenet` command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attention::AttentionKind;
use crate::augment;
use crate::backbone::{build_network, NetworkConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{self, Suite};
use crate::safm::SafmMode;
use crate::train::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "cenet", version, about = "CE-EfficientNetV2 training and verification tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a key=value config; writes metrics.tsv, best.cev2 and network.cfg.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on a class-per-directory dataset.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Network config; defaults to network.cfg beside the checkpoint, else nano.
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Write augmented images for every class plus a manifest.
    Augment {
        dataset: PathBuf,
        config: PathBuf,
        /// Output root; defaults to the dataset itself.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare recorded gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value = "all", value_parser = ["all", "ce", "safm", "backbone"])]
        module: String,
    },
    /// Per-block and total parameter counts with the ablation deltas.
    Params {
        /// Network config path, or `nano` for the built-in preset.
        network: String,
    },
    /// Seeded per-class train/test split; writes train.tsv and test.tsv.
    Split {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Parse `args` (including the program name) and run. Returns the exit code:
/// 0 on success, 1 on failure, 2 on usage errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn load_network(arg: &str) -> Result<NetworkConfig> {
    if arg == "nano" {
        return Ok(NetworkConfig::nano());
    }
    NetworkConfig::parse(&std::fs::read_to_string(arg).map_err(|e| Error::Config(format!("{arg}: {e}")))?)
}

fn total_for(config: &NetworkConfig) -> Result<usize> {
    Ok(build_network(config, 0)?.1.count_params())
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train { config } => {
            let text = std::fs::read_to_string(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let cfg = TrainConfig::parse(&text, base)?;
            let outcome = train::train(&cfg)?;
            let m = &outcome.metrics;
            writeln!(out, "epochs\t{}", m.records.len())?;
            writeln!(out, "best_epoch\t{}", m.best_epoch)?;
            writeln!(out, "accuracy_avg\t{}", m.accuracy_avg)?;
            writeln!(out, "loss_avg\t{}", m.loss_avg)?;
            writeln!(out, "output\t{}", cfg.out_dir.display())?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            network,
        } => {
            let sibling = checkpoint.parent().map(|p| p.join(train::NETWORK_FILE));
            let config = match (network, sibling) {
                (Some(p), _) => load_network(&p.to_string_lossy())?,
                (None, Some(s)) if s.is_file() => load_network(&s.to_string_lossy())?,
                _ => NetworkConfig::nano(),
            };
            let (acc, loss, n) = train::evaluate_checkpoint(&config, &checkpoint, &dataset)?;
            writeln!(out, "images\t{n}")?;
            writeln!(out, "accuracy\t{acc}")?;
            writeln!(out, "loss\t{loss}")?;
        }
        Command::Augment { dataset, config, out: out_root } => {
            let cfg = augment::parse_config(&std::fs::read_to_string(&config)?)?;
            let out_root = out_root.unwrap_or_else(|| dataset.clone());
            let manifest = augment::expand_dataset(&dataset, &out_root, &cfg)?;
            for class in &manifest.skipped {
                log::warn!("skipped class {class}: no readable images");
            }
            writeln!(out, "wrote {} files", manifest.entries.len())?;
        }
        Command::Gradcheck { module } => {
            let suite: Suite = module.parse()?;
            let results = gradcheck::run_suite(suite)?;
            let mut worst = 0.0f64;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                writeln!(out, "{status}\t{:.3e}\t< {:.0e}\t{}", r.max_error, r.tolerance, r.name)?;
                worst = worst.max(r.max_error);
                failed += usize::from(!r.passed());
            }
            writeln!(out, "max relative error: {worst:.3e}")?;
            if failed > 0 {
                writeln!(out, "{failed} of {} checks failed", results.len())?;
                return Ok(1);
            }
        }
        Command::Params { network } => {
            let config = load_network(&network)?;
            let (net, store) = build_network(&config, 0)?;
            writeln!(out, "block\tparams")?;
            for (path, n) in net.block_param_counts(&store) {
                writeln!(out, "{path}\t{n}")?;
            }
            let total = store.count_params();
            writeln!(out, "total\t{total}")?;

            let mut std_cfg = config.clone();
            std_cfg.safm_mode = SafmMode::Standard;
            let mut dw_cfg = config.clone();
            dw_cfg.safm_mode = SafmMode::DepthwiseSeparable;
            let (s, d) = (total_for(&std_cfg)?, total_for(&dw_cfg)?);
            writeln!(
                out,
                "safm std vs dw\t{s}\t{d}\tdelta {}\treduction {:.1}%",
                s as i64 - d as i64,
                percent(s, d)
            )?;
            let (se, ce) = (
                total_for(&config.clone().with_attention(AttentionKind::Se))?,
                total_for(&config.clone().with_attention(AttentionKind::Ce))?,
            );
            writeln!(out, "attention se vs ce\t{se}\t{ce}\tdelta {}", ce as i64 - se as i64)?;
        }
        Command::Split {
            dataset,
            frac,
            seed,
            out: out_dir,
        } => {
            let split = train::split_dataset(&dataset, frac, seed)?;
            for w in &split.warnings {
                log::warn!("{w}");
            }
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("train.tsv"), split.manifest_text(&split.train))?;
            std::fs::write(out_dir.join("test.tsv"), split.manifest_text(&split.test))?;
            writeln!(out, "train\t{}", split.train.len())?;
            writeln!(out, "test\t{}", split.test.len())?;
        }
    }
    Ok(0)
}

fn percent(standard: usize, depthwise: usize) -> f64 {
    if standard == 0 {
        0.0
    } else {
        100.0 * (standard as f64 - depthwise as f64) / standard as f64
    }
}
