use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use avag::data::{dedup_manifest, generate_synthetic, parse_manifest, write_dataset, SynthConfig};
use avag::model::Profile;
use avag::train::ablation::ablation_grid;
use avag::train::dataset::load_manifest_split;
use avag::train::{evaluate, predict, run_ablation_suite, s4_protocol_eval, train, Checkpoint, EvalSplit, TrainConfig};

#[derive(Parser)]
#[command(name = "avag", version, about = "Audio-conditioned function/dependency mask prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML training config; unknown keys are rejected
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to use for keys the config omits
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p, self.profile)?,
            None => TrainConfig::for_profile(self.profile),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the seen-category training split of a manifest
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: EvalSplit,
    },
    /// Score with each image repeated as five frames
    S4eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: EvalSplit,
    },
    /// Write func.png, dep.png and overlay.png for one image/audio pair
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score every ablation cell
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset and its manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        num_samples: usize,
        #[arg(long, default_value_t = 8)]
        num_categories: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Remove near-duplicate images from a manifest
    Dedup {
        #[arg(long)]
        manifest: PathBuf,
        /// Output manifest path
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_hamming: u32,
    },
}

fn print_report(report: &avag::metrics::MetricReport) -> Result<()> {
    println!("{}", report.to_json()?);
    print!("{}", report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, manifest, out } => {
            let cfg = cfg.load()?;
            let manifest = parse_manifest(&manifest)?;
            let data = load_manifest_split(&manifest, &cfg.split_spec()?, &cfg.model_config())?;
            if data.train.is_empty() {
                bail!("training split is empty");
            }
            info!(
                "train {} / val {} / unseen {} samples",
                data.train.len(),
                data.val.len(),
                data.unseen.len()
            );
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            let outcome = train(&cfg, &data.train, Some(&data.val), Some(&out))?;
            if let Some(s) = outcome.log.best_val {
                println!("{}", serde_json::to_string(&s)?);
            }
        }
        Command::Eval { ckpt, manifest, split } => {
            let ck = Checkpoint::load(&ckpt)?;
            print_report(&evaluate(&ck, &parse_manifest(&manifest)?, split)?)?;
        }
        Command::S4eval { ckpt, manifest, split } => {
            let ck = Checkpoint::load(&ckpt)?;
            print_report(&s4_protocol_eval(&ck, &parse_manifest(&manifest)?, split)?.report)?;
        }
        Command::Predict { ckpt, image, audio, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let p = predict(&ck, &image, &audio, &out)?;
            for f in &p.files {
                println!("{}", f.display());
            }
        }
        Command::Ablate { cfg, manifest, out } => {
            let cfg = cfg.load()?;
            let manifest = parse_manifest(&manifest)?;
            let data = load_manifest_split(&manifest, &cfg.split_spec()?, &cfg.model_config())?;
            let table = run_ablation_suite(&ablation_grid(&cfg), &data.train, &data.val)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("ablation.json");
            std::fs::write(&path, serde_json::to_string_pretty(&table)?)
                .with_context(|| format!("writing {}", path.display()))?;
            std::fs::write(out.join("ablation.txt"), table.table())?;
            print!("{}", table.table());
        }
        Command::Synth {
            out,
            seed,
            num_samples,
            num_categories,
            image_size,
        } => {
            let cfg = SynthConfig {
                num_samples,
                num_categories,
                image_size,
                ..SynthConfig::default()
            };
            let samples = generate_synthetic(&cfg, seed)?;
            let m = write_dataset(&samples, &out)?;
            println!("{}", out.join("manifest.tsv").display());
            info!("wrote {} samples", m.len());
        }
        Command::Dedup {
            manifest,
            out,
            max_hamming,
        } => {
            let m = parse_manifest(&manifest)?;
            let kept = dedup_manifest(&m, max_hamming)?;
            let root = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let rebased = avag::data::Manifest {
                records: kept.records,
                root: if root.as_os_str().is_empty() { PathBuf::from(".") } else { root },
            };
            std::fs::write(&out, rebased.to_tsv())?;
            println!("kept {} of {} records", rebased.len(), m.len());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
