//! Seeded training: exact reverse-mode gradients, Adam, and the per-epoch
//! feasibility refresh that drives the margins and the weighted graph.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Pair, SampleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalReport};
use crate::feasibility::{compute_table, FeasibilityTable, Mixing, PrimitiveEmbeddings};
use crate::graph::{CompositionalGraph, EdgeSwitches, World};
use crate::network::{
    cosine_backward, cosine_forward, gcn_backward, gcn_forward, gcn_forward_cached, head_backward,
    head_forward, init_uniform, Checkpoint, CheckpointManifest, GcnParams, ImageHeadParams,
    ModelKind, ModelParams, Phase,
};
use crate::objective::{alpha_at, margin_shift, softmax_cross_entropy, LossConfig};

/// Recorded in checkpoints to name the initialization scheme.
pub const INIT_SCHEME: &str = "uniform fan-in, bound sqrt(6/fan_in); zero biases; unit layer-norm gain";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Seen columns only, unweighted closed graph.
    Closed,
    /// Every column, feasibility margins, feasibility-weighted graph.
    Open,
    /// Every column and margins, but the graph stays unweighted.
    OpenFrozenGraph,
}

impl TrainMode {
    pub fn world(self) -> World {
        match self {
            TrainMode::Closed => World::Closed,
            TrainMode::Open | TrainMode::OpenFrozenGraph => World::Open,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Closed => "closed",
            TrainMode::Open => "open",
            TrainMode::OpenFrozenGraph => "open-frozen-graph",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(TrainMode::Closed),
            "open" => Ok(TrainMode::Open),
            "open-frozen-graph" => Ok(TrainMode::OpenFrozenGraph),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected closed, open or open-frozen-graph)"
            ))),
        }
    }
}

/// Architecture choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden width of the two-layer graph convolution.
    pub gcn_hidden: usize,
    /// Hidden width of the image head.
    pub head_hidden: usize,
    /// Shared embedding size. Ignored by word averaging, which uses the
    /// word-embedding size.
    pub shared_dim: usize,
    pub dropout: f64,
    pub mixing: Mixing,
    pub switches: EdgeSwitches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::CoCge,
            gcn_hidden: 64,
            head_hidden: 64,
            shared_dim: 32,
            dropout: 0.1,
            mixing: Mixing::Average,
            switches: EdgeSwitches::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gcn_hidden == 0 || self.head_hidden == 0 || self.shared_dim == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Validate every this many epochs; 0 disables validation and keeps
    /// the last epoch.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            mode: TrainMode::Open,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("invalid Adam coefficients".into()));
        }
        Ok(())
    }
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}

/// One gradient per parameter matrix, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub ModelParams);

impl GradientSet {
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.0.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("gradient of '{name}' is not finite")));
            }
        }
        Ok(())
    }
}

/// Column weighting for one step: which composition columns compete in
/// the softmax and the additive shift applied to each.
#[derive(Debug, Clone, PartialEq)]
pub struct StepObjective {
    pub temperature: f64,
    pub active: Vec<bool>,
    pub shift: Vec<f64>,
}

impl StepObjective {
    /// Softmax over the seen columns of `graph`.
    pub fn closed(graph: &CompositionalGraph, vocab: &Vocabulary, temperature: f64) -> Self {
        let active: Vec<bool> = graph.index.compositions().iter().map(|&p| vocab.is_seen(p)).collect();
        StepObjective {
            temperature,
            shift: vec![0.0; active.len()],
            active,
        }
    }

    /// Softmax over every column of `graph`, unseen columns shifted by
    /// `-alpha · ρ`.
    pub fn open(
        graph: &CompositionalGraph,
        vocab: &Vocabulary,
        feasibility: &FeasibilityTable,
        alpha: f64,
        loss: &LossConfig,
    ) -> Self {
        let cols = graph.index.compositions();
        let rho: Vec<f64> = cols.iter().map(|&p| feasibility.score(p)).collect();
        let seen: Vec<bool> = cols.iter().map(|&p| vocab.is_seen(p)).collect();
        StepObjective {
            temperature: loss.temperature,
            shift: margin_shift(&rho, &seen, alpha, loss.clamp_margin_rho_at_zero),
            active: vec![true; cols.len()],
        }
    }
}

fn label_columns(graph: &CompositionalGraph, labels: &[Pair]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&p| {
            graph
                .index
                .composition_column(p)
                .ok_or_else(|| Error::Validation(format!("label {p:?} is not a graph composition")))
        })
        .collect()
}

/// Mean loss of a batch and its exact gradient w.r.t. every parameter.
/// The node features, adjacency and objective are constants. `rng` feeds
/// dropout in [`Phase::Train`].
pub fn backward<R: Rng>(
    features: &Array2<f64>,
    labels: &[Pair],
    graph: &CompositionalGraph,
    params: &ModelParams,
    objective: &StepObjective,
    phase: Phase,
    rng: &mut R,
) -> Result<(f64, GradientSet)> {
    let (z, head_cache) = head_forward(features, &params.head, phase, rng)?;
    let mut grads = params.zeros_like();
    let t = objective.temperature;

    let (loss, d_z) = match (params.kind, &params.classifiers) {
        (ModelKind::VisualProduct, Some((st, ob))) => {
            let states: Vec<usize> = labels.iter().map(|p| p.0).collect();
            let objects: Vec<usize> = labels.iter().map(|p| p.1).collect();
            let cs = cosine_forward(z.view(), st.view())?;
            let co = cosine_forward(z.view(), ob.view())?;
            let (ls, gs) = softmax_cross_entropy(cs.scores.view(), &vec![0.0; st.nrows()], &vec![true; st.nrows()], &states, t)?;
            let (lo, go) = softmax_cross_entropy(co.scores.view(), &vec![0.0; ob.nrows()], &vec![true; ob.nrows()], &objects, t)?;
            let (dz_s, d_st) = cosine_backward(&cs, &gs);
            let (dz_o, d_ob) = cosine_backward(&co, &go);
            grads.classifiers = Some((d_st, d_ob));
            (ls + lo, dz_s + dz_o)
        }
        (ModelKind::VisualProduct, None) => {
            return Err(Error::Validation("visual-product model has no classifiers".into()))
        }
        (kind, _) => {
            let cols = label_columns(graph, labels)?;
            let start = graph.index.n_primitives();
            let gcn = if kind == ModelKind::CoCge {
                Some(gcn_forward_cached(&graph.normalized, &graph.v0, &params.gcn)?)
            } else {
                None
            };
            let e = match &gcn {
                Some((out, _)) => out.slice(s![start.., ..]).to_owned(),
                None => graph.v0.slice(s![start.., ..]).to_owned(),
            };
            let cache = cosine_forward(z.view(), e.view())?;
            let (loss, d_scores) =
                softmax_cross_entropy(cache.scores.view(), &objective.shift, &objective.active, &cols, t)?;
            let (d_z, d_e) = cosine_backward(&cache, &d_scores);
            if let Some((out, gcache)) = &gcn {
                let mut d_out = Array2::zeros(out.dim());
                d_out.slice_mut(s![start.., ..]).assign(&d_e);
                grads.gcn.weights = gcn_backward(&graph.normalized, &params.gcn, gcache, &d_out);
            }
            (loss, d_z)
        }
    };
    grads.head = head_backward(&params.head, &head_cache, &d_z);
    let grads = GradientSet(grads);
    grads.check_finite()?;
    Ok((loss, grads))
}

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<ArrayD<f64>> = params.tensors().into_iter().map(|(_, t)| ArrayD::zeros(t.shape())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update; weight decay enters as `wd · θ` added
/// to the gradient.
pub fn adam_step(params: &mut ModelParams, grads: &GradientSet, state: &mut AdamState, config: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g_all = grads.0.tensors();
    for (((mut p, (_, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_all)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                let g = g + config.weight_decay * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + config.epsilon);
            });
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

/// Freshly initialized parameters for `dataset` under `config`.
pub fn init_params(dataset: &Dataset, config: &RunConfig) -> Result<ModelParams> {
    let m = dataset.embeddings.dim();
    let f = dataset.train.feature_dim();
    let mc = &config.model;
    let mut rng = rng_stream(config.train.seed, STREAM_INIT);
    let d = match mc.kind {
        ModelKind::WordAverage => m,
        _ => mc.shared_dim,
    };
    let gcn = match mc.kind {
        ModelKind::CoCge => GcnParams::init(&[m, mc.gcn_hidden, d], &mut rng),
        _ => GcnParams { weights: vec![] },
    };
    let head = ImageHeadParams::init(&[f, mc.head_hidden, mc.head_hidden, d], mc.dropout, &mut rng);
    let classifiers = match mc.kind {
        ModelKind::VisualProduct => {
            let v = dataset.vocabulary.n_states();
            let o = dataset.vocabulary.n_objects();
            Some((
                init_uniform(d, v, &mut rng).reversed_axes(),
                init_uniform(d, o, &mut rng).reversed_axes(),
            ))
        }
        _ => None,
    };
    Ok(ModelParams {
        kind: mc.kind,
        gcn,
        head,
        classifiers,
    })
}

/// Feasibility from the model's primitive embeddings on `graph`: graph
/// output rows for Co-CGE, the raw word embeddings otherwise.
pub fn model_feasibility(
    params: &ModelParams,
    graph: &CompositionalGraph,
    vocab: &Vocabulary,
    mixing: Mixing,
) -> Result<FeasibilityTable> {
    let nodes = match params.kind {
        ModelKind::CoCge => gcn_forward(graph, &params.gcn)?,
        _ => graph.v0.clone(),
    };
    let emb = PrimitiveEmbeddings::from_nodes(&graph.index, &nodes, vocab)?;
    compute_table(&emb, vocab, mixing)
}

fn raw_feasibility(graph: &CompositionalGraph, vocab: &Vocabulary, mixing: Mixing) -> Result<FeasibilityTable> {
    let emb = PrimitiveEmbeddings::from_nodes(&graph.index, &graph.v0, vocab)?;
    compute_table(&emb, vocab, mixing)
}

/// The graph a checkpoint is scored on for a given candidate world.
pub fn eval_graph(ckpt: &Checkpoint, dataset: &Dataset, world: World) -> Result<CompositionalGraph> {
    let base = CompositionalGraph::unweighted(&dataset.vocabulary, &dataset.embeddings, world)?;
    match (&ckpt.feasibility, ckpt.manifest.mode) {
        (Some(scores), TrainMode::Open) => {
            let table = FeasibilityTable::from_scores(scores.clone(), dataset.vocabulary.seen_pairs().clone())?;
            base.reweighted(&table, ckpt.manifest.switches)
        }
        _ => Ok(base),
    }
}

/// Validation summary kept in the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub best_seen: f64,
    pub best_unseen: f64,
    pub best_hm: f64,
    pub auc: f64,
}

impl From<&EvalReport> for ValMetrics {
    fn from(r: &EvalReport) -> Self {
        ValMetrics {
            best_seen: r.best_seen,
            best_unseen: r.best_unseen,
            best_hm: r.best_hm,
            auc: r.auc,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub train_loss: f64,
    /// Mean feasibility over unseen pairs, when the mode computes it.
    pub mean_unseen_rho: Option<f64>,
    pub val: Option<ValMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Trains a model and keeps the epoch with the best validation AUC.
pub fn train(dataset: &Dataset, config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let tc = &config.train;
    let vocab = &dataset.vocabulary;
    let mode = tc.mode;
    let mut params = init_params(dataset, config)?;
    let mut adam = AdamState::new(&params);
    let mut dropout_rng = rng_stream(tc.seed, STREAM_DROPOUT);
    let mut shuffle_rng = rng_stream(tc.seed, STREAM_SHUFFLE);

    let base = CompositionalGraph::unweighted(vocab, &dataset.embeddings, mode.world())?;
    let open_modes = mode != TrainMode::Closed;
    let feasibility_on = open_modes && params.kind != ModelKind::VisualProduct;

    let mut graph = base.clone();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ModelParams, Option<FeasibilityTable>)> = None;
    let mut last_table = None;

    for epoch in 0..tc.epochs {
        let alpha = if open_modes { alpha_at(epoch, &config.loss) } else { 0.0 };
        let table = if feasibility_on {
            let t = if epoch == 0 {
                raw_feasibility(&base, vocab, config.model.mixing)?
            } else {
                model_feasibility(&params, &graph, vocab, config.model.mixing)?
            };
            if mode == TrainMode::Open {
                graph = base.reweighted(&t, config.model.switches)?;
            }
            Some(t)
        } else {
            None
        };
        let objective = match &table {
            Some(t) => StepObjective::open(&graph, vocab, t, alpha, &config.loss),
            None if open_modes => StepObjective {
                temperature: config.loss.temperature,
                active: vec![true; graph.index.compositions().len()],
                shift: vec![0.0; graph.index.compositions().len()],
            },
            None => StepObjective::closed(&graph, vocab, config.loss.temperature),
        };

        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(tc.batch_size) {
            let batch: SampleSet = dataset.train.select(chunk);
            let (loss, grads) = backward(
                &batch.features,
                &batch.labels,
                &graph,
                &params,
                &objective,
                Phase::Train,
                &mut dropout_rng,
            )?;
            adam_step(&mut params, &grads, &mut adam, tc);
            losses.push(loss);
        }

        let val = if tc.eval_every > 0 && ((epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs) {
            let report = evaluate(&params, &graph, config.loss.temperature, &dataset.val, vocab, None)?;
            Some(ValMetrics::from(&report))
        } else {
            None
        };
        if let Some(v) = &val {
            if best.as_ref().is_none_or(|b| v.auc > b.0) {
                best = Some((v.auc, epoch, params.clone(), table.clone()));
            }
        }
        log.push(EpochRecord {
            epoch,
            alpha,
            train_loss: mean(&losses).unwrap_or(0.0),
            mean_unseen_rho: table.as_ref().and_then(|t| mean(&t.unseen_values())),
            val,
        });
        last_table = table;
    }

    let (epoch, params, table) = match best {
        Some((_, e, p, t)) => (e, p, t),
        None => (tc.epochs - 1, params, last_table),
    };
    let manifest = CheckpointManifest {
        kind: params.kind,
        mode,
        gcn_dims: params.gcn.dims(),
        head_dims: params.head.dims(),
        dropout: params.head.dropout,
        temperature: config.loss.temperature,
        switches: if mode == TrainMode::Open { config.model.switches } else { EdgeSwitches::unit() },
        mixing: config.model.mixing,
        seed: tc.seed,
        epoch,
        init: INIT_SCHEME.into(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            manifest,
            params,
            feasibility: table.map(|t| t.scores().clone()),
        },
        log,
    })
}

/// Visual-product reference model: independent state and object cosine
/// classifiers whose softmax probabilities are multiplied.
pub fn baseline_visual_product(dataset: &Dataset, config: &RunConfig) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.model.kind = ModelKind::VisualProduct;
    train(dataset, &config)
}

/// Word-average reference model: averaged word embeddings of each pair are
/// fixed classifiers; only the image head is trained.
pub fn baseline_word_avg(dataset: &Dataset, config: &RunConfig) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.model.kind = ModelKind::WordAverage;
    train(dataset, &config)
}
