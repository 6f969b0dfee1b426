use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffrec::cli::{cmd_eval, cmd_infer, cmd_prepare, cmd_train, format_recommendations, RunConfig};
use diffrec::Result;

#[derive(Parser)]
#[command(name = "diffrec", version, about = "Diffusion recommender models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest interactions and write a train/validation/test bundle.
    Prepare(Common),
    /// Train a model on a prepared bundle.
    Train(Common),
    /// Evaluate a checkpoint with Recall@K and NDCG@K.
    Eval(Common),
    /// Recommend items for one interaction history.
    Infer(Common),
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Use the time-weighted variant of the chosen model.
    #[arg(long)]
    temporal: bool,
    #[arg(long)]
    w_min: Option<f64>,
    #[arg(long)]
    w_max: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::new(),
        };
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if self.temporal {
            let kind = cfg.model()?.with_temporal();
            cfg.set("model", &kind.to_string())?;
        }
        if let Some(w) = self.w_min {
            cfg.set("w_min", &w.to_string())?;
        }
        if let Some(w) = self.w_max {
            cfg.set("w_max", &w.to_string())?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            cmd_prepare(&c.resolve()?)?;
        }
        Command::Train(c) => {
            let out = cmd_train(&c.resolve()?)?;
            print!("{}", out.log.to_text());
            println!("checkpoint {}", out.checkpoint.display());
        }
        Command::Eval(c) => {
            let out = cmd_eval(&c.resolve()?)?;
            print!("{}", out.report.to_key_values());
        }
        Command::Infer(c) => {
            print!("{}", format_recommendations(&cmd_infer(&c.resolve()?)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
