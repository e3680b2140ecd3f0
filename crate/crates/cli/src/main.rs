//! `fedcc`: generate synthetic client data, train, evaluate checkpoints and
//! inspect metrics logs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fedcc::config::RunConfig;
use fedcc::eval::{ranklist_csv, MetricsRecord};
use fedcc::experiment::{self, metrics_table, CONFIG_FILE};
use fedcc::federation::log::parse_log;
use fedcc::federation::{Ablation, LogRecord, StageId};
use fedcc::model::checkpoint::Checkpoint;
use serde_json::json;

/// Ranked-list depth written by `--export-ranklists`.
const RANKLIST_DEPTH: usize = 10;

#[derive(Parser)]
#[command(
    name = "fedcc",
    version,
    about = "Federated unsupervised cluster-contrastive learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one feature CSV per client from the synthetic generator.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for `client_<id>.csv` files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run federated training and write the metrics log, checkpoints and summary.
    Train(TrainArgs),
    /// Evaluate a checkpoint on client query/gallery splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `client_<id>.csv` files.
        #[arg(long, conflicts_with = "config")]
        data_dir: Option<PathBuf>,
        /// Run config whose data section regenerates the datasets.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write per-client metrics as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for top-10 ranked lists, one CSV per client.
        #[arg(long)]
        export_ranklists: Option<PathBuf>,
    },
    /// Print cluster-count, loss and rank-1 trajectories from a metrics log.
    Inspect {
        log: PathBuf,
        /// Only show this client.
        #[arg(long)]
        client: Option<usize>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// backbone, stage1, stage12, stage13 or full.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Use this many global rounds in every stage.
    #[arg(long)]
    rounds_override: Option<usize>,
    /// Maximum number of clients trained concurrently.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Errors the user can fix by changing inputs exit with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<fedcc::Error>() {
        Some(
            fedcc::Error::Config(_)
            | fedcc::Error::Io { .. }
            | fedcc::Error::Parse { .. }
            | fedcc::Error::Json(_)
            | fedcc::Error::InvalidArgument(_)
            | fedcc::Error::Shape(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out, seed } => generate(config.as_deref(), &out, seed),
        Command::Train(args) => train(args),
        Command::Eval {
            checkpoint,
            data_dir,
            config,
            out,
            export_ranklists,
        } => eval(&checkpoint, data_dir, config, out, export_ranklists),
        Command::Inspect { log, client } => inspect(&log, client),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    let datasets = fedcc::data::generate(&cfg.data)?;
    let paths = experiment::write_datasets(&datasets, out)?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| fedcc::Error::io(&cfg_path, e))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(a) = args.ablation {
        cfg.ablation = a;
    }
    if args.rounds_override.is_some() {
        cfg.rounds_override = args.rounds_override;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(o) = args.output {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let outcome = experiment::run_to_dir(&cfg)?;
    println!(
        "ablation {} | {} stage(s) | {} rounds | output {}",
        cfg.ablation,
        outcome.checkpoints.len(),
        cfg.schedule()?.total_rounds(),
        cfg.output_dir.display()
    );
    print!("{}", experiment::summary_table(&outcome));
    Ok(())
}

fn eval(
    checkpoint: &Path,
    data_dir: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    export_ranklists: Option<PathBuf>,
) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let datasets = match (data_dir, config) {
        (Some(dir), _) => experiment::load_dataset_dir(&dir)?,
        (None, Some(cfg)) => experiment::load_datasets(&RunConfig::load(&cfg)?)?,
        (None, None) => {
            return Err(anyhow!(fedcc::Error::InvalidArgument(
                "eval needs --data-dir or --config".into()
            )))
        }
    };
    let evals = experiment::evaluate_checkpoint(&ckpt, &datasets)?;

    let names: Vec<String> = evals.iter().map(|e| format!("client {}", e.client_id)).collect();
    let metrics: Vec<MetricsRecord> = evals.iter().map(|e| e.metrics).collect();
    println!("stage {} checkpoint {}", ckpt.stage, checkpoint.display());
    print!("{}", metrics_table(&names, &metrics));

    let out = out.unwrap_or_else(|| checkpoint.with_extension("eval.jsonl"));
    let mut lines = String::new();
    for e in &evals {
        lines.push_str(&eval_line(Some(e.client_id), ckpt.stage, &e.metrics));
    }
    lines.push_str(&eval_line(None, ckpt.stage, &MetricsRecord::macro_average(&metrics)));
    write(&out, &lines)?;

    if let Some(dir) = export_ranklists {
        fs::create_dir_all(&dir).map_err(|e| fedcc::Error::io(&dir, e))?;
        for e in &evals {
            let path = dir.join(format!("ranklist_client_{}.csv", e.client_id));
            write(&path, &ranklist_csv(&e.ranking, RANKLIST_DEPTH))?;
        }
    }
    Ok(())
}

/// One line of the eval output: `client` is the id or `"macro"`.
fn eval_line(client: Option<usize>, stage: StageId, m: &MetricsRecord) -> String {
    let client = client.map_or_else(|| json!("macro"), |id| json!(id));
    let mut line = json!({
        "client": client,
        "stage": stage,
        "rank1": m.rank1,
        "rank5": m.rank5,
        "rank10": m.rank10,
        "mAP": m.map,
        "queries": m.queries,
    })
    .to_string();
    line.push('\n');
    line
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| anyhow!(fedcc::Error::io(path, e)))
}

fn inspect(log: &Path, only: Option<usize>) -> anyhow::Result<()> {
    let text = fs::read_to_string(log).map_err(|e| fedcc::Error::io(log, e))?;
    let records = parse_log(&text).with_context(|| format!("parsing {}", log.display()))?;
    let mut out = String::new();
    writeln!(
        out,
        "{:>5} {:>8} {:>5} {:>6} {:>8} {:>8} {:>9} {:>6}",
        "round", "stage", "r", "client", "clusters", "outliers", "loss", "R1"
    )?;
    let fmt_opt = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"));
    for record in &records {
        match record {
            LogRecord::Client(c) if only.is_none() || only == Some(c.client) => writeln!(
                out,
                "{:>5} {:>8} {:>5} {:>6} {:>8} {:>8} {:>9} {:>6}",
                c.global_round,
                c.stage.to_string(),
                c.round,
                c.client,
                c.clusters,
                c.outliers,
                fmt_opt(c.loss, 4),
                fmt_opt(c.metrics.map(|m| m.rank1), 3),
            )?,
            LogRecord::Server(s) if only.is_none() => writeln!(
                out,
                "{:>5} {:>8} {:>5} {:>6} {:>8} {:>8} {:>9} {:>6}",
                s.global_round,
                s.stage.to_string(),
                s.round,
                "all",
                "",
                "",
                fmt_opt(s.mean_loss, 4),
                fmt_opt(s.macro_metrics.map(|m| m.rank1), 3),
            )?,
            _ => {}
        }
    }
    print_ignoring_closed_pipe(&out)
}

/// Writes to stdout; a reader that stops early (`| head`) is not an error.
fn print_ignoring_closed_pipe(text: &str) -> anyhow::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
