//! Command-line front end. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 failure while running.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{DataKind, RunConfig, DATA_DIR_ENV};
use crate::data::{export_embeddings, generate_synthetic, load_event_csv, mapping_path, write_event_csv, write_id_mapping, Dataset};
use crate::diagnostics::grad_check_suite;
use crate::error::{Error, Result};
use crate::eval::{format_table, prepare, run_experiment, RunReport};
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::tgn::{TgnModel, Toggles};
use crate::train::{evaluate, train, Stage};

#[derive(Debug, Parser)]
#[command(name = "nef-tgn", version, about = "Temporal graph networks with neighborhood edge features")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Base seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Seeds evaluated concurrently by `evaluate` and `ablate`.
    #[arg(long, global = true, default_value_t = 1)]
    pub parallel_seeds: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes a checkpoint, the epoch history and a summary.
    Train,
    /// Run the configured experiment over `eval.n_runs` seeds.
    Evaluate,
    /// Run the experiment for every ablation toggle combination.
    Ablate {
        /// Also run the recurrent-encoder-only row.
        #[arg(long)]
        include_rnn_only: bool,
    },
    /// Write the configured synthetic dataset as an interaction CSV.
    GenSynthetic {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write node embeddings computed with a trained checkpoint.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated external node ids; all nodes when omitted.
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<String>,
        /// Evaluation time; defaults to one unit after the last event.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every trainable block.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } | Error::UnknownNode(_) | Error::InvalidEvents(_) | Error::Checkpoint(_)
    )
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if is_validation(&e) {
                1
            } else {
                2
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if cli.parallel_seeds == 0 {
        return Err(Error::Config("--parallel-seeds must be >= 1".into()));
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.data.kind {
        DataKind::Synthetic => generate_synthetic(&cfg.synthetic_spec()),
        DataKind::Interactions | DataKind::EdgeList => {
            let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
            let path = cfg.data_path(data_dir.as_deref()).ok_or_else(|| Error::Config("data.path is not set".into()))?;
            if !path.exists() {
                return Err(Error::Config(format!("dataset {} not found (relative paths resolve against ${DATA_DIR_ENV})", path.display())));
            }
            load_event_csv(&path, &cfg.column_mapping(), cfg.data.bipartite)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `<file>.meta.json` next to an exported file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.join("config.toml"), format!("# config_hash = \"{}\"\n{}", cfg.hash(), cfg.to_toml()))?;
    Ok(())
}

fn write_reports(dir: &Path, stem: &str, cfg: &RunConfig, reports: &[RunReport]) -> Result<()> {
    let hash = cfg.hash();
    let mut w = create(&dir.join(format!("{stem}.jsonl")))?;
    let mut timings = create(&dir.join(format!("{stem}_timings.jsonl")))?;
    for r in reports {
        r.write_jsonl(&mut w)?;
        r.write_timings(&mut timings)?;
    }
    let echo = serde_json::json!({ "record": "config", "config_hash": hash, "config": cfg });
    writeln!(w, "{}", serde_json::to_string(&echo)?)?;
    w.flush()?;
    timings.flush()?;
    let resolved: String = cfg.to_toml().lines().map(|l| format!("# {l}\n")).collect();
    fs::write(dir.join(format!("{stem}.txt")), format!("config_hash {hash}\n{}{resolved}", format_table(reports)))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let hash = cfg.hash();
    eprintln!("config_hash {hash}");
    let dataset = load_dataset(&cfg)?;
    let out = &cli.out_dir;
    match &cli.command {
        Command::Train => {
            let spec = cfg.experiment()?;
            let prep = prepare(&dataset, &spec, cfg.seed)?;
            let (model, mut store) = TgnModel::new(spec.model.clone(), dataset.node_features.dim(), dataset.log.edge_dim())?;
            fs::create_dir_all(out)?;
            write_config(out, &cfg)?;
            let mut history = create(&out.join("history.jsonl"))?;
            let outcome = train(&model, &mut store, &prep.data, &spec.train, &hash, Some(&mut history))?;
            history.flush()?;
            save_checkpoint(&out.join("checkpoint.bin"), &store, &hash)?;
            let test = if prep.data.test_scored.iter().any(|&s| s) { Some(evaluate(&model, &store, &prep.data, Stage::Test)?) } else { None };
            let summary = serde_json::json!({
                "config_hash": hash,
                "dataset": dataset.name,
                "epochs_run": outcome.history.len(),
                "best_epoch": outcome.best_epoch,
                "best_val_ap": outcome.best_val_ap,
                "test": test,
            });
            fs::write(out.join("train_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Evaluate => {
            let spec = cfg.experiment()?;
            let label = Toggles::of(&spec.model).label();
            let report = run_experiment(&dataset, &spec, &label, &hash, cli.parallel_seeds)?;
            fs::create_dir_all(out)?;
            write_config(out, &cfg)?;
            write_reports(out, "report", &cfg, std::slice::from_ref(&report))?;
            print!("{}", format_table(&[report]));
        }
        Command::Ablate { include_rnn_only } => {
            let base = cfg.experiment()?;
            let mut reports = Vec::new();
            for toggles in Toggles::ablation_grid(*include_rnn_only) {
                let mut spec = base.clone();
                toggles.apply(&mut spec.model);
                eprintln!("ablation row {}", toggles.label());
                reports.push(run_experiment(&dataset, &spec, &toggles.label(), &hash, cli.parallel_seeds)?);
            }
            fs::create_dir_all(out)?;
            write_config(out, &cfg)?;
            write_reports(out, "ablation", &cfg, &reports)?;
            print!("{}", format_table(&reports));
        }
        Command::GenSynthetic { output } => {
            let path = output.clone().unwrap_or_else(|| out.join("synthetic.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_event_csv(&path, &dataset)?;
            write_id_mapping(&mapping_path(&path), &dataset)?;
            println!("{} events, {} nodes -> {}", dataset.log.len(), dataset.log.node_count(), path.display());
        }
        Command::ExportEmbeddings { checkpoint, nodes, time, output } => {
            let (model, mut store) = TgnModel::new(cfg.model_config()?, dataset.node_features.dim(), dataset.log.edge_dim())?;
            load_checkpoint(checkpoint, &mut store, &hash)?;
            let nodes = if nodes.is_empty() { dataset.node_ids.clone() } else { nodes.clone() };
            let t = time.unwrap_or_else(|| dataset.log.t_max().unwrap_or(0.0) + 1.0);
            let path = output.clone().unwrap_or_else(|| out.join("embeddings.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            export_embeddings(&model, &store, &dataset, &nodes, t, cfg.train.batch_size, &path)?;
            // The CSV layout has no room for metadata; it lives next to it.
            let meta = serde_json::json!({
                "config_hash": hash,
                "checkpoint": checkpoint,
                "t": t,
                "nodes": nodes.len(),
                "dim": model.config.emb_dim,
            });
            fs::write(sidecar(&path), serde_json::to_string_pretty(&meta)? + "\n")?;
            println!("{} embeddings at t={t} -> {}", nodes.len(), path.display());
        }
        Command::GradCheck { seeds } => {
            fs::create_dir_all(out)?;
            let mut w = create(&out.join("grad_check.txt"))?;
            writeln!(w, "config_hash {hash}")?;
            let mut failed = 0;
            for seed in 0..*seeds {
                for c in grad_check_suite(seed)? {
                    let status = if c.report.passed() { "PASS" } else { "FAIL" };
                    failed += usize::from(!c.report.passed());
                    let line = format!(
                        "seed {seed:>3}  {:<26} max_rel_err {:.3e}  checked {:>5}  skipped {:>3}  {status}",
                        c.block, c.report.max_rel_error, c.report.checked, c.report.skipped
                    );
                    writeln!(w, "{line}")?;
                    println!("{line}");
                }
            }
            w.flush()?;
            if failed > 0 {
                return Err(Error::Diverged(format!("{failed} gradient checks failed")));
            }
        }
    }
    Ok(())
}
