use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairrec::eval::write_table;
use fairrec::Result;
use fairrec_cli::config::{parse_override, Config, Experiment};
use fairrec_cli::pipeline;

#[derive(Parser)]
#[command(name = "fairrec", version, about = "Recommenders with sensitive-feature-filtered user embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key; may be repeated, later values win.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated sensitive features, or `all`.
    #[arg(long)]
    features: Option<String>,
    /// Cutoff N of the ranking metrics.
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    n_negatives: Option<usize>,
}

impl Common {
    fn experiment(&self) -> Result<Experiment> {
        let mut pairs = Vec::new();
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        flag("dataset", self.dataset.clone());
        flag("model", self.model.clone());
        flag("method", self.method.clone());
        flag("lambda", self.lambda.map(|l| l.to_string()));
        flag("seed", self.seed.map(|s| s.to_string()));
        flag("out", self.out.as_ref().map(|o| o.display().to_string()));
        flag("features", self.features.clone());
        flag("top_n", self.top_n.map(|n| n.to_string()));
        flag("n_negatives", self.n_negatives.map(|n| n.to_string()));
        for s in &self.set {
            pairs.push(parse_override(s)?);
        }
        Experiment::resolve(Config::load(self.config.as_deref(), &pairs)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter and split a dataset and freeze its evaluation candidates.
    Prepare(Common),
    /// Train one model on a prepared dataset.
    Train(Common),
    /// Evaluate a trained model and audit its embeddings with attackers.
    Attack(Common),
    /// Train and audit one filtered model per lambda in `lambda_grid`.
    SweepLambda(Common),
    /// Merge report.jsonl files found under the given paths.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn print_rows(rows: &[fairrec::eval::MetricReport]) {
    let mut buf = Vec::new();
    if write_table(rows, &mut buf).is_ok() {
        print!("{}", String::from_utf8_lossy(&buf));
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let exp = c.experiment()?;
            let p = pipeline::prepare(&exp)?;
            print!("{}", pipeline::banner(&p));
            println!("prepared {}", exp.prepared.display());
        }
        Command::Train(c) => {
            let exp = c.experiment()?;
            let s = pipeline::train(&exp)?;
            let best = s.outcome.best_validation_ndcg.map_or("-".into(), |v| format!("{v:.4}"));
            println!(
                "epochs {}  best epoch {}  validation ndcg@{} {best}",
                s.outcome.history.len(),
                s.outcome.best_epoch,
                exp.top_n
            );
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Attack(c) => {
            let exp = c.experiment()?;
            print_rows(&pipeline::attack(&exp)?);
        }
        Command::SweepLambda(c) => {
            let exp = c.experiment()?;
            let s = pipeline::sweep_lambda(&exp)?;
            print_rows(&s.rows);
            println!("sweep {}", s.dir.display());
            if !s.failures.is_empty() {
                eprintln!("{} lambda value(s) failed", s.failures.len());
            }
        }
        Command::Report { inputs, out } => {
            let rows = pipeline::report(&inputs, &out)?;
            print_rows(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
