//! Command-line commands. Each command returns the artifact destined for
//! stdout; diagnostics go to stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, RunManifest, Tau};
use crate::dataio::{synthesize, write_embeddings, write_features, write_splits, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluator::{select_tau, EvalProblem, EvalReport};
use crate::feasibility::FeasibilityTable;
use crate::graph::World;
use crate::network::{
    composition_embeddings, embed_images, load_checkpoint, retrieve, save_checkpoint, score_samples,
    Checkpoint, ModelKind,
};
use crate::trainer::{eval_graph, model_feasibility, train, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "cocge", version, about = "Compositional cosine graph embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config with [data], [model], [loss], [train], [eval] and [synth] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock time in the run manifest.
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.bin, metrics.jsonl and manifest.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (overrides [data] dir).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Validate and print the resolved config without training.
        #[arg(long)]
        dry_run: bool,
        /// Also write the final graph (nodes and adjacency) as JSON.
        #[arg(long)]
        graph_json: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; prints the report as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
        /// Score every state-object pair.
        #[arg(long, conflicts_with = "closed")]
        open: bool,
        /// Score seen and known unseen pairs only.
        #[arg(long)]
        closed: bool,
        /// Exclude unseen pairs with feasibility at or below tau.
        #[arg(long)]
        hard_mask: bool,
        /// `auto` picks tau on the validation split.
        #[arg(long)]
        tau: Option<Tau>,
        /// Write the sweep as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print per-pair feasibility as CSV, or the top/bottom states per object.
    Feasibility {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Print the k most and least feasible unseen states per object instead.
        #[arg(long)]
        extremes: bool,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print the ids of the images closest to a composition.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        state: String,
        #[arg(long)]
        object: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn resolve_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
        config.synth.seed = seed;
    }
    Ok(config)
}

fn data_dir(flag: &Option<PathBuf>, config: &Config) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| config.data.dir.clone())
        .ok_or_else(|| Error::Config("no dataset directory given (--data or [data] dir)".into()))?;
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn finish_manifest(mut m: RunManifest, started: Instant, common: &Common, path: Option<&Path>) -> Result<()> {
    if common.record_time {
        m.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    }
    match path {
        Some(p) => m.write(p),
        None => Ok(()),
    }
}

/// Runs one command and returns what belongs on stdout.
pub fn run(cli: Cli) -> Result<String> {
    let started = Instant::now();
    match cli.command {
        Command::Synth { common, out } => {
            let config = resolve_config(&common)?;
            let mut m = RunManifest::new("synth", config.synth.seed, &config);
            cmd_synth(&config, &out)?;
            m.artifacts.push(out.clone());
            finish_manifest(m, started, &common, Some(&out.join("manifest.json")))?;
            Ok(String::new())
        }
        Command::Train {
            common,
            data,
            out,
            mode,
            epochs,
            dry_run,
            graph_json,
        } => {
            let mut config = resolve_config(&common)?;
            if let Some(mode) = mode {
                config.train.mode = mode;
            }
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            let dir = data_dir(&data, &config)?;
            config.data.dir = Some(dir.clone());
            config.run().validate()?;
            if dry_run {
                return Ok(config.to_toml());
            }
            let out = out.ok_or_else(|| Error::Config("--out is required unless --dry-run".into()))?;
            let mut m = RunManifest::new("train", config.train.seed, &config);
            m.artifacts = cmd_train(&config, &dir, &out, graph_json.as_deref())?;
            finish_manifest(m, started, &common, Some(&out.join("manifest.json")))?;
            Ok(String::new())
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
            open,
            closed,
            hard_mask,
            tau,
            curve,
            manifest,
        } => {
            let mut config = resolve_config(&common)?;
            if let Some(s) = split {
                config.eval.split = s;
            }
            if open {
                config.eval.world = Some(World::Open);
            } else if closed {
                config.eval.world = Some(World::Closed);
            }
            config.eval.hard_mask |= hard_mask || tau.is_some();
            if let Some(t) = tau {
                config.eval.tau = t;
            }
            let dir = data_dir(&data, &config)?;
            let report = cmd_eval(&config, &checkpoint, &dir)?;
            let mut m = RunManifest::new("eval", config.train.seed, &config);
            m.artifacts = vec![checkpoint, dir];
            if let Some(path) = curve {
                write_file(&path, &report.curve_csv())?;
                m.artifacts.push(path);
            }
            finish_manifest(m, started, &common, manifest.as_deref())?;
            Ok(serde_json::to_string_pretty(&report)? + "\n")
        }
        Command::Feasibility {
            common,
            checkpoint,
            data,
            extremes,
            k,
            manifest,
        } => {
            let config = resolve_config(&common)?;
            let dir = data_dir(&data, &config)?;
            let out = cmd_feasibility(&checkpoint, &dir, extremes.then_some(k))?;
            let mut m = RunManifest::new("feasibility", config.train.seed, &config);
            m.artifacts = vec![checkpoint, dir];
            finish_manifest(m, started, &common, manifest.as_deref())?;
            Ok(out)
        }
        Command::Retrieve {
            common,
            checkpoint,
            data,
            state,
            object,
            k,
            split,
            manifest,
        } => {
            let config = resolve_config(&common)?;
            let dir = data_dir(&data, &config)?;
            let ids = cmd_retrieve(&checkpoint, &dir, split, &state, &object, k)?;
            let mut m = RunManifest::new("retrieve", config.train.seed, &config);
            m.artifacts = vec![checkpoint, dir];
            finish_manifest(m, started, &common, manifest.as_deref())?;
            Ok(ids.iter().map(|id| format!("{id}\n")).collect())
        }
    }
}

/// Writes `splits.txt`, `features.bin`, `features.json`, `embeddings.txt`
/// and `feasible_gt.csv` into `out`.
pub fn cmd_synth(config: &Config, out: &Path) -> Result<()> {
    let synth = synthesize(&config.synth)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let data = &synth.dataset;
    let vocab = &data.vocabulary;
    let splits = write_splits(vocab, |p| {
        if synth.val_unseen.contains(&p) {
            "val_unseen"
        } else {
            "test_unseen"
        }
    });
    write_file(&out.join("splits.txt"), &splits)?;
    write_features(&out.join("features.bin"), &out.join("features.json"), &data.records())?;
    write_file(&out.join("embeddings.txt"), &write_embeddings(&data.embeddings))?;
    let mut gt = String::from("state,object,feasible,seen\n");
    for pair @ (s, o) in vocab.all_pairs() {
        let _ = writeln!(
            gt,
            "{},{},{},{}",
            vocab.states()[s],
            vocab.objects()[o],
            u8::from(synth.feasible.contains(&pair)),
            u8::from(vocab.is_seen(pair))
        );
    }
    write_file(&out.join("feasible_gt.csv"), &gt)
}

/// Trains and writes `checkpoint.bin` and `metrics.jsonl`; returns the
/// written paths.
pub fn cmd_train(config: &Config, data: &Path, out: &Path, graph_json: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dataset = Dataset::load_dir(data)?;
    let outcome = train(&dataset, &config.run())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt_path = out.join("checkpoint.bin");
    let log_path = out.join("metrics.jsonl");
    save_checkpoint(&ckpt_path, &outcome.checkpoint)?;
    write_file(&log_path, &outcome.log_jsonl())?;
    let mut written = vec![data.to_path_buf(), ckpt_path, log_path];
    if let Some(path) = graph_json {
        let graph = eval_graph(&outcome.checkpoint, &dataset, config.train.mode.world())?;
        write_file(path, &(serde_json::to_string(&graph.dump_json(&dataset.vocabulary))? + "\n"))?;
        written.push(path.to_path_buf());
    }
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "trained {} epochs; kept epoch {}; final loss {:.4}",
            outcome.log.len(),
            outcome.checkpoint.manifest.epoch,
            last.train_loss
        );
    }
    Ok(written)
}

/// Feasibility stored in the checkpoint, or computed from its primitive
/// embeddings on its training graph.
pub fn checkpoint_feasibility(ckpt: &Checkpoint, dataset: &Dataset) -> Result<FeasibilityTable> {
    let vocab = &dataset.vocabulary;
    match &ckpt.feasibility {
        Some(scores) => FeasibilityTable::from_scores(scores.clone(), vocab.seen_pairs().clone()),
        None => {
            let graph = eval_graph(ckpt, dataset, ckpt.manifest.mode.world())?;
            model_feasibility(&ckpt.params, &graph, vocab, ckpt.manifest.mixing)
        }
    }
}

pub fn cmd_eval(config: &Config, checkpoint: &Path, data: &Path) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load_dir(data)?;
    evaluate_checkpoint(&ckpt, &dataset, config)
}

/// Evaluation as configured by the `[eval]` section.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dataset: &Dataset, config: &Config) -> Result<EvalReport> {
    let vocab = &dataset.vocabulary;
    let world = config.eval.world.unwrap_or(ckpt.manifest.mode.world());
    let graph = eval_graph(ckpt, dataset, world)?;
    let t = ckpt.manifest.temperature;
    let problem = |split: Split| -> Result<EvalProblem> {
        let samples = dataset.split(split);
        let scores = score_samples(&ckpt.params, &graph, t, &samples.features)?;
        EvalProblem::new(scores, samples, vocab)
    };
    let test = problem(config.eval.split)?;
    if !config.eval.hard_mask {
        return test.report(world, None);
    }
    let table = checkpoint_feasibility(ckpt, dataset)?;
    let tau = match config.eval.tau {
        Tau::Value(v) => v,
        Tau::Auto => {
            let tau = select_tau(&problem(Split::Val)?, &table)?;
            eprintln!("selected tau {tau}");
            tau
        }
    };
    test.report(world, Some((&table, tau)))
}

pub fn cmd_feasibility(checkpoint: &Path, data: &Path, extremes_k: Option<usize>) -> Result<String> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load_dir(data)?;
    let vocab = &dataset.vocabulary;
    let table = checkpoint_feasibility(&ckpt, &dataset)?;
    let Some(k) = extremes_k else {
        return Ok(table.to_csv(vocab));
    };
    let mut out = String::from("object,rank,top_state,top_rho,bottom_state,bottom_rho\n");
    for ex in table.extremes(vocab, k) {
        for (rank, (top, bottom)) in ex.top.iter().zip(&ex.bottom).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                vocab.objects()[ex.object],
                rank + 1,
                vocab.states()[top.0],
                top.1,
                vocab.states()[bottom.0],
                bottom.1
            );
        }
    }
    Ok(out)
}

pub fn cmd_retrieve(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    state: &str,
    object: &str,
    k: usize,
) -> Result<Vec<String>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load_dir(data)?;
    let vocab = &dataset.vocabulary;
    let s = vocab
        .state_index(state)
        .ok_or_else(|| Error::Validation(format!("unknown state '{state}'")))?;
    let o = vocab
        .object_index(object)
        .ok_or_else(|| Error::Validation(format!("unknown object '{object}'")))?;
    if ckpt.params.kind == ModelKind::VisualProduct {
        return Err(Error::Validation("visual-product models have no composition embeddings".into()));
    }
    let graph = eval_graph(&ckpt, &dataset, World::Open)?;
    let col = graph.index.composition_column((s, o)).expect("open graph has every pair");
    let query = composition_embeddings(&ckpt.params, &graph)?.row(col).to_owned();
    let samples = dataset.split(split);
    let images = embed_images(&ckpt.params, &samples.features)?;
    let hits = retrieve(query.view(), images.view(), k)?;
    Ok(hits.into_iter().map(|i| samples.ids[i].clone()).collect())
}
