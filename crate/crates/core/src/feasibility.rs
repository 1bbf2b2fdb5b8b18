//! Feasibility scores for unseen compositions.
//!
//! An unseen pair `(s, o)` is scored by how close `o` is to the objects
//! seen with `s` and how close `s` is to the states seen with `o`, using
//! cosine similarity of primitive embeddings. Seen pairs score exactly 1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{Pair, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::NodeIndex;

/// How the state- and object-side scores are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixing {
    #[default]
    Average,
    Max,
}

pub fn mix(rho_state: f64, rho_obj: f64, g: Mixing) -> f64 {
    match g {
        Mixing::Average => (rho_state + rho_obj) / 2.0,
        Mixing::Max => rho_state.max(rho_obj),
    }
}

/// Row-normalized primitive embeddings, ready for cosine lookups.
#[derive(Debug, Clone)]
pub struct PrimitiveEmbeddings {
    states: Array2<f64>,
    objects: Array2<f64>,
}

fn unit_rows(m: ArrayView2<'_, f64>, what: &str) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "{what} embedding {i} has zero or non-finite norm"
            )));
        }
        row /= norm;
    }
    Ok(out)
}

impl PrimitiveEmbeddings {
    pub fn new(states: ArrayView2<'_, f64>, objects: ArrayView2<'_, f64>) -> Result<Self> {
        Ok(PrimitiveEmbeddings {
            states: unit_rows(states, "state")?,
            objects: unit_rows(objects, "object")?,
        })
    }

    /// Takes the primitive rows of a full node-embedding matrix.
    pub fn from_nodes(index: &NodeIndex, nodes: &Array2<f64>, vocab: &Vocabulary) -> Result<Self> {
        let ns = vocab.n_states();
        let no = vocab.n_objects();
        debug_assert_eq!(index.object_node(0), ns);
        Self::new(
            nodes.slice(ndarray::s![0..ns, ..]),
            nodes.slice(ndarray::s![ns..ns + no, ..]),
        )
    }

    pub fn state_cosine(&self, a: usize, b: usize) -> f64 {
        self.states.row(a).dot(&self.states.row(b))
    }

    pub fn object_cosine(&self, a: usize, b: usize) -> f64 {
        self.objects.row(a).dot(&self.objects.row(b))
    }
}

/// Object-side score: the best cosine between `o` and any object seen with `s`.
pub fn rho_obj(s: usize, o: usize, emb: &PrimitiveEmbeddings, vocab: &Vocabulary) -> Result<f64> {
    vocab
        .objects_with_state(s)
        .map(|other| emb.object_cosine(o, other))
        .reduce(f64::max)
        .ok_or_else(|| Error::Validation(format!("state {s} has no seen objects")))
}

/// State-side score: the best cosine between `s` and any state seen with `o`.
pub fn rho_state(s: usize, o: usize, emb: &PrimitiveEmbeddings, vocab: &Vocabulary) -> Result<f64> {
    vocab
        .states_with_object(o)
        .map(|other| emb.state_cosine(s, other))
        .reduce(f64::max)
        .ok_or_else(|| Error::Validation(format!("object {o} has no seen states")))
}

/// Per-pair feasibility over the full state × object product.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityTable {
    scores: Array2<f64>,
    seen: BTreeSet<Pair>,
}

impl FeasibilityTable {
    /// Builds a table from raw scores; seen entries are forced to 1 and all
    /// scores clamped into `[-1, 1]` to absorb rounding in the cosines.
    pub fn from_scores(mut scores: Array2<f64>, seen: BTreeSet<Pair>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feasibility score is not finite".into()));
        }
        scores.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        for &(s, o) in &seen {
            scores[[s, o]] = 1.0;
        }
        Ok(FeasibilityTable { scores, seen })
    }

    /// Every unseen pair gets `value`.
    pub fn constant(vocab: &Vocabulary, value: f64) -> Self {
        let scores = Array2::from_elem((vocab.n_states(), vocab.n_objects()), value);
        Self::from_scores(scores, vocab.seen_pairs().clone()).expect("finite constant")
    }

    pub fn score(&self, (s, o): Pair) -> f64 {
        self.scores[[s, o]]
    }

    pub fn is_seen(&self, pair: Pair) -> bool {
        self.seen.contains(&pair)
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    /// Sorted distinct scores of unseen pairs.
    pub fn unseen_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .scores
            .indexed_iter()
            .filter(|((s, o), _)| !self.seen.contains(&(*s, *o)))
            .map(|(_, &x)| x)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// CSV with header `state,object,rho,seen`, one row per pair.
    pub fn to_csv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::from("state,object,rho,seen\n");
        for pair in vocab.all_pairs() {
            let _ = writeln!(
                out,
                "{},{},{:?},{}",
                vocab.states()[pair.0],
                vocab.objects()[pair.1],
                self.score(pair),
                u8::from(self.is_seen(pair))
            );
        }
        out
    }

    /// For every object, the `k` most and `k` least feasible unseen states.
    pub fn extremes(&self, vocab: &Vocabulary, k: usize) -> Vec<ObjectExtremes> {
        (0..vocab.n_objects())
            .map(|o| {
                let mut ranked: Vec<(usize, f64)> = (0..vocab.n_states())
                    .filter(|&s| !self.is_seen((s, o)))
                    .map(|s| (s, self.score((s, o))))
                    .collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let top = ranked.iter().take(k).copied().collect();
                let bottom = ranked.iter().rev().take(k).copied().collect();
                ObjectExtremes {
                    object: o,
                    top,
                    bottom,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectExtremes {
    pub object: usize,
    /// `(state, ρ)` in descending order of ρ.
    pub top: Vec<(usize, f64)>,
    /// `(state, ρ)` in ascending order of ρ.
    pub bottom: Vec<(usize, f64)>,
}

/// Scores every pair of the open product from primitive embeddings.
pub fn compute_table(
    emb: &PrimitiveEmbeddings,
    vocab: &Vocabulary,
    g: Mixing,
) -> Result<FeasibilityTable> {
    let mut scores = Array2::ones((vocab.n_states(), vocab.n_objects()));
    for pair @ (s, o) in vocab.all_pairs() {
        if vocab.is_seen(pair) {
            continue;
        }
        scores[[s, o]] = mix(rho_state(s, o, emb, vocab)?, rho_obj(s, o, emb, vocab)?, g);
    }
    FeasibilityTable::from_scores(scores, vocab.seen_pairs().clone())
}

/// Diagnostic only: cosine between the state and the object embedding of
/// each pair, with seen pairs pinned to 1.
pub fn direct_table(emb: &PrimitiveEmbeddings, vocab: &Vocabulary) -> Result<FeasibilityTable> {
    let scores = emb.states.dot(&emb.objects.t());
    debug_assert_eq!(scores.len_of(Axis(0)), vocab.n_states());
    FeasibilityTable::from_scores(scores, vocab.seen_pairs().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn vocab(seen: &[Pair], ns: usize, no: usize) -> Vocabulary {
        Vocabulary::new(
            (0..ns).map(|i| format!("s{i}")).collect(),
            (0..no).map(|i| format!("o{i}")).collect(),
            seen.iter().copied().collect(),
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn mixing() {
        assert!((mix(0.2, 0.6, Mixing::Average) - 0.4).abs() < 1e-15);
        assert_eq!(mix(0.2, 0.6, Mixing::Max), 0.6);
        assert_eq!(Mixing::default(), Mixing::Average);
    }

    #[test]
    fn rho_obj_takes_max_over_seen_objects() {
        // s0 seen with o1, o2, o3; query o0 whose cosines to them are -0.1, 0.5, 0.2.
        let v = vocab(&[(0, 1), (0, 2), (0, 3), (1, 0)], 2, 4);
        let unit = |c: f64| [c, (1.0 - c * c).sqrt()];
        let objs = array![
            [1.0, 0.0],
            unit(-0.1),
            unit(0.5),
            unit(0.2)
        ];
        let states = array![[1.0, 0.0], [0.0, 1.0]];
        let emb = PrimitiveEmbeddings::new(states.view(), objs.view()).unwrap();
        assert!((rho_obj(0, 0, &emb, &v).unwrap() - 0.5).abs() < 1e-12);
        let v1 = vocab(&[(0, 2), (1, 0), (1, 1), (1, 3)], 2, 4);
        assert!((rho_obj(0, 0, &emb, &v1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rho_state_singleton_and_identical() {
        let v = vocab(&[(1, 0), (0, 1)], 2, 2);
        let states = array![[1.0, 0.0], [0.7, (1.0f64 - 0.49).sqrt()]];
        let objs = array![[1.0, 0.0], [0.0, 1.0]];
        let emb = PrimitiveEmbeddings::new(states.view(), objs.view()).unwrap();
        assert!((rho_state(0, 0, &emb, &v).unwrap() - 0.7).abs() < 1e-12);

        let same = array![[2.0, 1.0], [4.0, 2.0]];
        let emb = PrimitiveEmbeddings::new(same.view(), objs.view()).unwrap();
        assert!((rho_state(0, 0, &emb, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_primitives_give_zero_scores() {
        let v = vocab(&[(0, 0), (1, 1)], 2, 2);
        let e = Array2::<f64>::eye(2);
        let emb = PrimitiveEmbeddings::new(e.view(), e.view()).unwrap();
        let t = compute_table(&emb, &v, Mixing::Average).unwrap();
        assert_eq!(t.score((0, 1)), 0.0);
        assert_eq!(t.score((1, 0)), 0.0);
        assert_eq!(t.score((0, 0)), 1.0);
    }

    #[test]
    fn identical_objects_transfer_states() {
        let v = vocab(&[(0, 0), (1, 1)], 2, 2);
        let objs = array![[1.0, 1.0], [1.0, 1.0]];
        let states = Array2::<f64>::eye(2);
        let emb = PrimitiveEmbeddings::new(states.view(), objs.view()).unwrap();
        assert!((rho_obj(0, 1, &emb, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_numeric_error() {
        let z = Array2::<f64>::zeros((1, 2));
        assert!(matches!(
            PrimitiveEmbeddings::new(z.view(), z.view()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn csv_and_extremes() {
        let v = vocab(&[(0, 0), (1, 1), (2, 0)], 3, 2);
        let t = FeasibilityTable::from_scores(
            array![[0.0, 0.3], [-0.2, 0.0], [0.0, 0.9]],
            v.seen_pairs().clone(),
        )
        .unwrap();
        let csv = t.to_csv(&v);
        assert!(csv.starts_with("state,object,rho,seen\ns0,o0,1.0,1\n"));
        let ex = t.extremes(&v, 1);
        assert_eq!(ex[1].top, vec![(2, 0.9)]);
        assert_eq!(ex[1].bottom, vec![(0, 0.3)]);
        assert_eq!(t.unseen_values(), vec![-0.2, 0.3, 0.9]);
    }
}
