//! Forward computation: the graph composition embedder, the image
//! embedder, cosine compatibility and prediction.

mod checkpoint;
mod gcn;
mod head;
mod score;

use ndarray::{s, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::CompositionalGraph;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use gcn::{gcn_backward, gcn_forward, gcn_forward_cached, GcnCache, GcnParams};
pub use head::{
    head_backward, head_forward, image_embed, HeadCache, ImageHeadParams, LayerNorm, Linear, Phase,
    LAYER_NORM_EPS,
};
pub use score::{
    compatibility, cosine_backward, cosine_forward, cosine_scores, predict, predict_hard, retrieve,
    CosineCache, ScoreMatrix,
};

/// Uniform fan-in initialization, `U(-√(6/fan_in), √(6/fan_in))`.
pub fn init_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound))
}

/// Which model a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Graph-propagated composition embeddings scored by cosine.
    CoCge,
    /// Fixed averaged word embeddings as composition classifiers.
    WordAverage,
    /// Independent state and object cosine classifiers, scores multiplied.
    VisualProduct,
}

/// All trainable matrices of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    /// Empty for models without a graph embedder.
    pub gcn: GcnParams,
    pub head: ImageHeadParams,
    /// Visual-product classifiers, `|S| × d` and `|O| × d`.
    pub classifiers: Option<(Array2<f64>, Array2<f64>)>,
}

impl ModelParams {
    /// Tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (l, w) in self.gcn.weights.iter().enumerate() {
            out.push((format!("gcn.{l}"), w.view().into_dyn()));
        }
        for (i, lin) in self.head.linears.iter().enumerate() {
            out.push((format!("head.linear{i}.weight"), lin.weight.view().into_dyn()));
            out.push((format!("head.linear{i}.bias"), lin.bias.view().into_dyn()));
        }
        for (i, n) in self.head.norms.iter().enumerate() {
            out.push((format!("head.norm{i}.gain"), n.gain.view().into_dyn()));
            out.push((format!("head.norm{i}.shift"), n.shift.view().into_dyn()));
        }
        if let Some((st, ob)) = &self.classifiers {
            out.push(("classifier.states".into(), st.view().into_dyn()));
            out.push(("classifier.objects".into(), ob.view().into_dyn()));
        }
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for w in &mut self.gcn.weights {
            out.push(w.view_mut().into_dyn());
        }
        for lin in &mut self.head.linears {
            out.push(lin.weight.view_mut().into_dyn());
            out.push(lin.bias.view_mut().into_dyn());
        }
        for n in &mut self.head.norms {
            out.push(n.gain.view_mut().into_dyn());
            out.push(n.shift.view_mut().into_dyn());
        }
        if let Some((st, ob)) = &mut self.classifiers {
            out.push(st.view_mut().into_dyn());
            out.push(ob.view_mut().into_dyn());
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for mut t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn shared_dim(&self) -> usize {
        self.head.output_dim()
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Composition-row embeddings used as classifiers, in column order.
pub fn composition_embeddings(params: &ModelParams, graph: &CompositionalGraph) -> Result<Array2<f64>> {
    let start = graph.index.n_primitives();
    match params.kind {
        ModelKind::CoCge => Ok(gcn_forward(graph, &params.gcn)?.slice(s![start.., ..]).to_owned()),
        ModelKind::WordAverage | ModelKind::VisualProduct => {
            Ok(graph.v0.slice(s![start.., ..]).to_owned())
        }
    }
}

/// Eval-mode image embeddings for a batch of features.
pub fn embed_images(params: &ModelParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    // Eval mode never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    head_forward(features, &params.head, Phase::Eval, &mut rng).map(|(y, _)| y)
}

/// Scores every sample against every composition node of `graph`.
pub fn score_samples(
    params: &ModelParams,
    graph: &CompositionalGraph,
    temperature: f64,
    features: &Array2<f64>,
) -> Result<ScoreMatrix> {
    let z = embed_images(params, features)?;
    let columns = graph.index.compositions().to_vec();
    let scores = match (&params.kind, &params.classifiers) {
        (ModelKind::VisualProduct, Some((st, ob))) => {
            let ps = softmax_rows(&(cosine_scores(z.view(), st.view())? / temperature));
            let po = softmax_rows(&(cosine_scores(z.view(), ob.view())? / temperature));
            let mut out = Array2::zeros((z.nrows(), columns.len()));
            for (j, &(s_, o)) in columns.iter().enumerate() {
                let col = &ps.index_axis(Axis(1), s_) * &po.index_axis(Axis(1), o);
                out.column_mut(j).assign(&col);
            }
            out
        }
        _ => {
            let e = composition_embeddings(params, graph)?;
            cosine_scores(z.view(), e.view())?
        }
    };
    Ok(ScoreMatrix { scores, columns })
}
