use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softhash::config::RunConfig;
use softhash::pipeline;
use softhash::Error;

#[derive(Parser)]
#[command(name = "softhash", version, about = "Multi-label hash learning and Hamming retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-label dataset (features.shft, labels.shlb).
    Generate(Common),
    /// Train a hash head on the training split; writes model.shmd and train_report.csv.
    Train(Common),
    /// Encode every item with a trained checkpoint; writes codes.shcd.
    Encode(Common),
    /// Dump Hamming rankings for query ids; writes ranked.csv.
    Query(Common),
    /// Score query rankings; writes metrics.json and metrics.csv.
    Evaluate(Common),
    /// Train and evaluate over a grid of alpha/gamma/lambda values; writes sweep.csv.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file, applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads; 1 runs fully sequentially, 0 uses every core.
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    bits: Option<String>,
    /// Number or per-bit value such as 5/q (default 5/q).
    #[arg(long)]
    alpha: Option<String>,
    /// Default 0.1/q.
    #[arg(long)]
    gamma: Option<String>,
    /// Default 0.1.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    decay_every: Option<String>,
    #[arg(long)]
    decay_rate: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    /// Comma-separated cutoffs; `all` means the whole ranking.
    #[arg(long)]
    top_n: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    /// Any other config key, as KEY=VALUE. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("bits", &self.bits),
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("batch-size", &self.batch_size),
            ("lr", &self.lr),
            ("decay-every", &self.decay_every),
            ("decay-rate", &self.decay_rate),
            ("iterations", &self.iterations),
            ("top-n", &self.top_n),
            ("out-dir", &self.out_dir),
            ("features", &self.features),
            ("labels", &self.labels),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: &Command, cfg: &RunConfig) -> Result<String, Error> {
    pipeline::with_threads(cfg.threads, || match command {
        Command::Generate(_) => {
            let b = pipeline::run_generate(cfg)?;
            Ok(format!(
                "generated {} items, {} classes, {} features",
                b.len(),
                b.num_classes(),
                b.feature_dim()
            ))
        }
        Command::Train(_) => {
            let r = pipeline::run_train(cfg)?;
            let last = r.iterations.last().map_or(f64::NAN, |x| x.total_cost);
            Ok(format!("trained {} iterations, final cost {last}", r.len()))
        }
        Command::Encode(_) => {
            let c = pipeline::run_encode(cfg)?;
            Ok(format!("encoded {} items at {} bits", c.len(), c.bits()))
        }
        Command::Query(_) => {
            let r = pipeline::run_query(cfg)?;
            Ok(format!("ranked {} queries", r.len()))
        }
        Command::Evaluate(_) => {
            let r = pipeline::run_evaluate(cfg)?;
            let lines: Vec<String> = r
                .cutoffs
                .iter()
                .map(|c| format!("@{}: map {:.4} wap {:.4} acg {:.4} ndcg {:.4}", c.n, c.map, c.wap, c.acg, c.ndcg))
                .collect();
            Ok(lines.join("\n"))
        }
        Command::Sweep(_) => {
            let rows = pipeline::run_sweep(cfg)?;
            Ok(format!("swept {} settings", rows.len()))
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let common = match &cli.command {
        Command::Generate(c)
        | Command::Train(c)
        | Command::Encode(c)
        | Command::Query(c)
        | Command::Evaluate(c)
        | Command::Sweep(c) => c,
    };
    let cfg = match common.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("softhash: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli.command, &cfg) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("softhash: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
