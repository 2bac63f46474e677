use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssgan_core::error::Result;
use ssgan_core::harness::{
    arm_means, cmd_ablate, cmd_evaluate, cmd_featurize, cmd_synth, cmd_train, exit_code, ExperimentConfig,
};

/// Semi-supervised GAN for rare-disease detection on claims data.
#[derive(Parser)]
#[command(name = "ssgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: labeled, unlabeled and test records plus sealed labels.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Featurize JSON-lines records. Without --stats the inputs are the training
    /// cohort and stats.json is fitted on them.
    Featurize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Train one arm (or `lr`) on featurized data.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        arm: String,
        /// Directory holding labeled_features.csv, labeled_labels.csv and unlabeled_features.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a feature matrix and measure PR-AUC and ROC-AUC against sealed labels.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured arm for every seed and write ablation_table.csv.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            cmd_synth(&cfg, &out)?;
            println!("wrote cohort to {}", out.display());
        }
        Command::Featurize {
            config,
            stats,
            out,
            records,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            cmd_featurize(cfg.synth.symptoms, &records, stats.as_deref(), &out)?;
            println!("wrote features to {}", out.display());
        }
        Command::Train {
            config,
            seed,
            arm,
            data,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            cmd_train(&cfg, &arm, &data, &out)?;
            println!("trained {arm} into {}", out.display());
        }
        Command::Evaluate {
            checkpoint,
            features,
            labels,
            out,
        } => {
            let m = cmd_evaluate(&checkpoint, &features, &labels, &out)?;
            println!(
                "pr_auc {:.4}  roc_auc {:.4}  prevalence {:.4}  n {}  n_pos {}",
                m.pr_auc, m.roc_auc, m.prevalence, m.n, m.n_pos
            );
        }
        Command::Ablate { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let rows = cmd_ablate(&cfg, &out)?;
            for r in rows.iter().filter(|r| r.result.is_err()) {
                eprintln!("{} seed {} failed: {}", r.arm, r.seed, r.result.as_ref().unwrap_err());
            }
            let means = arm_means(&rows);
            for arm in &cfg.arms {
                match means.get(&arm.name).copied().flatten() {
                    Some((p, r)) => println!("{:<16} pr_auc {p:.4}  roc_auc {r:.4}", arm.name),
                    None => println!("{:<16} failed", arm.name),
                }
            }
            println!("wrote {}", out.join("ablation_table.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
