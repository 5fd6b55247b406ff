use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trigin::cli::{cmd_ablate, cmd_evaluate, cmd_gen_data, cmd_predict, cmd_train, Overrides, RunConfig};
use trigin::Error;

#[derive(Parser)]
#[command(name = "trigin", version, about = "Triple-channel GIN for enterprise financial-risk classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (enterprises.csv, texts.jsonl, labels.csv).
    GenData(Common),
    /// Train one model variant and write model.json and history.csv.
    Train(Common),
    /// Score a trained model on one split and write report.json and roc.csv.
    Evaluate(Common),
    /// Train and score the full experiment grid over several seeds.
    Ablate(Common),
    /// Score enterprise rows with a trained model.
    Predict(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory containing the dataset files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model file (default: <out>/model.json).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Model variant, e.g. v3, single-s, lr.
    #[arg(long)]
    variant: Option<String>,
    /// train, validation, test or all.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated seeds for `ablate`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl Common {
    fn resolve(self) -> trigin::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.apply(Overrides {
            seed: self.seed,
            out: self.out,
            data: self.data,
            model: self.model,
            variant: self.variant,
            split: self.split,
            seeds: self.seeds,
        }))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "data" => 3,
        "io" => 4,
        "incompatible" => 5,
        "numeric" => 6,
        "metric" => 7,
        _ => 1,
    }
}

fn run(cli: Cli) -> trigin::Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let dir = cmd_gen_data(&c.resolve()?)?;
            println!("wrote dataset to {}", dir.display());
        }
        Command::Train(c) => {
            let s = cmd_train(&c.resolve()?)?;
            let auc = s.validation.as_ref().map_or(f64::NAN, |r| r.auc);
            println!(
                "{}: best epoch {} of {}, val loss {:.6}, val AUC {:.4}",
                s.variant, s.best_epoch, s.epochs_run, s.best_val_loss, auc
            );
        }
        Command::Evaluate(c) => {
            let r = cmd_evaluate(&c.resolve()?)?.report;
            println!(
                "{} {}: AUC {:.4} precision {:.4} recall {:.4} F1 {:.4}",
                r.config, r.split, r.auc, r.precision, r.recall, r.f1
            );
        }
        Command::Ablate(c) => {
            let r = cmd_ablate(&c.resolve()?)?;
            for s in &r.result.summary {
                println!("{:<20} AUC {:.4} ± {:.4}", s.config, s.auc_mean, s.auc_std);
            }
        }
        Command::Predict(c) => {
            let rows = cmd_predict(&c.resolve()?)?;
            let flagged = rows.iter().filter(|r| r.flag).count();
            println!("scored {} enterprises, {flagged} flagged", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
