use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use bitfit::analysis::{fraction_table, param_fraction_report};
use bitfit::experiment::{
    cmd_analyze, cmd_finetune, cmd_pretrain, exit_code, write_metadata, ExperimentConfig, OutputDir,
};
use bitfit::model::ModelConfig;
use bitfit::params::Regime;
use bitfit::{Error, Result};

/// Bias-only fine-tuning experiments on a small synthetic-language encoder.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus and pretrain the encoder with masked-token prediction.
    Pretrain(Common),
    /// Fine-tune every configured regime from a checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory [default: <out>/checkpoints/pretrained].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write bias-change heatmaps, gap tables, and the sweep curve from a results directory.
    Analyze {
        /// Results directory [default: $BITFIT_OUT].
        #[arg(long, env = "BITFIT_OUT")]
        out: PathBuf,
    },
    /// Pretrain, fine-tune, and analyze in one go.
    Run(Common),
    /// Print trainable-parameter fractions of the standard regimes.
    Fractions {
        /// Count for this config's model as well as the BERT-base and BERT-large shapes.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: $BITFIT_OUT, then the config's `outputs`, then ./bitfit-out].
    #[arg(long, env = "BITFIT_OUT")]
    out: Option<PathBuf>,
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Comma-separated regime ids or selectors, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    regimes: Option<Vec<String>>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, OutputDir)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.shift_seeds(self.seed_offset);
        if let Some(r) = &self.regimes {
            cfg.regimes = r.clone();
        }
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.outputs.clone())
            .unwrap_or_else(|| PathBuf::from("bitfit-out"));
        Ok((cfg, OutputDir::new(out)))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn pretrain(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    let r = cmd_pretrain(cfg, out)?;
    println!(
        "pretrained {} steps: held-out loss {:.3} -> {:.3}, masked accuracy {:.3}",
        r.steps, r.initial_heldout_loss, r.final_heldout_loss, r.final_masked_accuracy
    );
    println!("checkpoint: {}", out.pretrained().display());
    Ok(())
}

fn finetune(cfg: &ExperimentConfig, out: &OutputDir, checkpoint: Option<PathBuf>) -> Result<()> {
    let ckpt = checkpoint.unwrap_or_else(|| out.pretrained());
    let s = cmd_finetune(cfg, &ckpt, out)?;
    println!("{:<24} {:<14} {:>8} {:>14} {:>9}", "task", "regime", "%param", "dev acc", "lr");
    for (task, regime, r) in &s.runs {
        println!(
            "{:<24} {:<14} {:>8.3} {:>8}±{:<5} {:>9.0e}",
            task,
            regime.id,
            r.param_count.encoder_percent(),
            pct(r.dev.mean),
            pct(r.dev.std),
            r.best_lr
        );
    }
    if let Some(sweep) = &s.sweep {
        for p in &sweep.points {
            println!("sweep {:<10} n={:<6} dev {}±{}", p.method, p.train_size, pct(p.dev.mean), pct(p.dev.std));
        }
    }
    println!("tables: {}", out.root.join("tables").display());
    Ok(())
}

fn analyze(out: &OutputDir) -> Result<()> {
    let s = cmd_analyze(out)?;
    for (task, regime, g) in &s.gaps {
        println!("gap {task:<20} {regime:<14} {:.4}", g.gap.mean);
    }
    println!("figures: {}", out.root.join("figures").display());
    Ok(())
}

fn fractions(config: Option<PathBuf>) -> Result<()> {
    let mut configs = vec![("bert_base", ModelConfig::bert_base()), ("bert_large", ModelConfig::bert_large())];
    if let Some(p) = config {
        configs.push(("config", ExperimentConfig::load(&p)?.model));
    }
    let rows = param_fraction_report(&configs, &Regime::standard())?;
    print!("{}", fraction_table(&rows).to_csv_string()?);
    Ok(())
}

fn timed(out: &OutputDir, name: &str, f: impl FnOnce() -> Result<()>) -> Result<()> {
    let start = now();
    f()?;
    write_metadata(out, name, start, now())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let (cfg, out) = c.load()?;
            timed(&out, "pretrain", || pretrain(&cfg, &out))
        }
        Command::Finetune { common, checkpoint } => {
            let (cfg, out) = common.load()?;
            timed(&out, "finetune", || finetune(&cfg, &out, checkpoint))
        }
        Command::Analyze { out } => {
            let out = OutputDir::new(out);
            timed(&out, "analyze", || analyze(&out))
        }
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            timed(&out, "run", || {
                pretrain(&cfg, &out)?;
                finetune(&cfg, &out, None)?;
                analyze(&out)
            })
        }
        Command::Fractions { config } => fractions(config),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(_) = e {
                eprintln!("(see configs/default.toml for an annotated example)");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
