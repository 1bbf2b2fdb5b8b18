//! The compositional graph over states, objects and compositions.
//!
//! Nodes are ordered `[states..., objects..., compositions...]`. Entry
//! `A[i][j]` is the weight with which node `i` aggregates node `j` in
//! `Â V W`; `Â` divides every column of `A` by its sum.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingTable, Pair, Vocabulary};
use crate::error::{Error, Result};
use crate::feasibility::FeasibilityTable;

/// Which compositions become graph nodes and prediction candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    /// Seen plus the known closed-world unseen pairs.
    Closed,
    /// The full state × object product.
    Open,
}

impl std::str::FromStr for World {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(World::Closed),
            "open" => Ok(World::Open),
            other => Err(Error::Config(format!("unknown world '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Node {
    State(usize),
    Object(usize),
    Composition(Pair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeIndex {
    world: World,
    n_states: usize,
    n_objects: usize,
    compositions: Vec<Pair>,
    composition_node: BTreeMap<Pair, usize>,
}

impl NodeIndex {
    pub fn build(vocab: &Vocabulary, world: World) -> Self {
        let compositions: Vec<Pair> = match world {
            World::Open => vocab.all_pairs().collect(),
            World::Closed => vocab
                .seen_pairs()
                .union(vocab.closed_unseen_pairs())
                .copied()
                .collect(),
        };
        let offset = vocab.n_states() + vocab.n_objects();
        let composition_node = compositions
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, offset + i))
            .collect();
        NodeIndex {
            world,
            n_states: vocab.n_states(),
            n_objects: vocab.n_objects(),
            compositions,
            composition_node,
        }
    }

    pub fn world(&self) -> World {
        self.world
    }

    pub fn len(&self) -> usize {
        self.n_states + self.n_objects + self.compositions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_primitives(&self) -> usize {
        self.n_states + self.n_objects
    }

    pub fn state_node(&self, s: usize) -> usize {
        s
    }

    pub fn object_node(&self, o: usize) -> usize {
        self.n_states + o
    }

    /// Composition pairs in column order.
    pub fn compositions(&self) -> &[Pair] {
        &self.compositions
    }

    pub fn composition_node(&self, pair: Pair) -> Option<usize> {
        self.composition_node.get(&pair).copied()
    }

    /// Position of `pair` among the composition columns.
    pub fn composition_column(&self, pair: Pair) -> Option<usize> {
        self.composition_node(pair).map(|n| n - self.n_primitives())
    }

    pub fn node(&self, i: usize) -> Node {
        if i < self.n_states {
            Node::State(i)
        } else if i < self.n_primitives() {
            Node::Object(i - self.n_states)
        } else {
            Node::Composition(self.compositions[i - self.n_primitives()])
        }
    }
}

/// Initial node features: primitive rows are their word embeddings and
/// composition rows the mean of their two primitives.
pub fn init_node_features(
    index: &NodeIndex,
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
) -> Result<Array2<f64>> {
    let m = embeddings.dim();
    let mut v0 = Array2::zeros((index.len(), m));
    let mut missing = Vec::new();
    for (s, name) in vocab.states().iter().enumerate() {
        match embeddings.get(name) {
            Some(e) => v0.row_mut(index.state_node(s)).assign(&ndarray::aview1(e)),
            None => missing.push(name.clone()),
        }
    }
    for (o, name) in vocab.objects().iter().enumerate() {
        match embeddings.get(name) {
            Some(e) => v0.row_mut(index.object_node(o)).assign(&ndarray::aview1(e)),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingTokens(missing));
    }
    for (k, &(s, o)) in index.compositions().iter().enumerate() {
        let mean = (&v0.row(index.state_node(s)) + &v0.row(index.object_node(o))) / 2.0;
        v0.row_mut(index.n_primitives() + k).assign(&mean);
    }
    Ok(v0)
}

/// Unweighted adjacency: states and objects of every target composition
/// are linked both ways, every composition is linked to its primitives both
/// ways, and every node has a self-loop.
pub fn build_adjacency_closed(index: &NodeIndex) -> Array2<f64> {
    build_adjacency_with(index, |_, _| 1.0)
}

/// How one class of edges is weighted in the feasibility-driven graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeight {
    /// `max(0, ρ(c))` of the composition the edge belongs to.
    Feasibility,
    Unit,
}

/// Per-edge-class weighting. `composition_to_primitive` is the influence of
/// a composition on its primitives (`A[p][c]`), `primitive_to_composition`
/// the influence of a primitive on a composition (`A[c][p]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeSwitches {
    pub state_object: EdgeWeight,
    pub composition_to_primitive: EdgeWeight,
    pub primitive_to_composition: EdgeWeight,
}

impl Default for EdgeSwitches {
    fn default() -> Self {
        EdgeSwitches {
            state_object: EdgeWeight::Feasibility,
            composition_to_primitive: EdgeWeight::Feasibility,
            primitive_to_composition: EdgeWeight::Unit,
        }
    }
}

impl EdgeSwitches {
    pub fn unit() -> Self {
        EdgeSwitches {
            state_object: EdgeWeight::Unit,
            composition_to_primitive: EdgeWeight::Unit,
            primitive_to_composition: EdgeWeight::Unit,
        }
    }

    pub fn is_unit(&self) -> bool {
        *self == Self::unit()
    }
}

#[derive(Clone, Copy)]
enum EdgeClass {
    StateObject,
    CompositionToPrimitive,
    PrimitiveToComposition,
}

fn build_adjacency_with(index: &NodeIndex, weight: impl Fn(EdgeClass, Pair) -> f64) -> Array2<f64> {
    let k = index.len();
    let mut a = Array2::<f64>::eye(k);
    for &(s, o) in index.compositions() {
        let c = index.composition_node((s, o)).expect("composition indexed");
        let (sn, on) = (index.state_node(s), index.object_node(o));
        let so = weight(EdgeClass::StateObject, (s, o));
        a[[sn, on]] = so;
        a[[on, sn]] = so;
        let cp = weight(EdgeClass::CompositionToPrimitive, (s, o));
        a[[sn, c]] = cp;
        a[[on, c]] = cp;
        let pc = weight(EdgeClass::PrimitiveToComposition, (s, o));
        a[[c, sn]] = pc;
        a[[c, on]] = pc;
    }
    a
}

/// Adjacency whose edge classes are optionally weighted by `max(0, ρ)`.
pub fn build_adjacency_feasibility(
    index: &NodeIndex,
    feasibility: &FeasibilityTable,
    switches: EdgeSwitches,
) -> Array2<f64> {
    build_adjacency_with(index, |class, pair| {
        let rule = match class {
            EdgeClass::StateObject => switches.state_object,
            EdgeClass::CompositionToPrimitive => switches.composition_to_primitive,
            EdgeClass::PrimitiveToComposition => switches.primitive_to_composition,
        };
        match rule {
            EdgeWeight::Unit => 1.0,
            EdgeWeight::Feasibility => feasibility.score(pair).max(0.0),
        }
    })
}

/// Divides every column by its sum.
pub fn normalize_adjacency(a: &Array2<f64>) -> Result<Array2<f64>> {
    let sums = a.sum_axis(Axis(0));
    if let Some(j) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Numeric(format!(
            "adjacency column {j} has non-positive sum"
        )));
    }
    Ok(a / &sums.insert_axis(Axis(0)))
}

/// Node features plus raw and normalized adjacency.
#[derive(Debug, Clone)]
pub struct CompositionalGraph {
    pub index: NodeIndex,
    pub v0: Array2<f64>,
    pub adjacency: Array2<f64>,
    pub normalized: Array2<f64>,
}

impl CompositionalGraph {
    pub fn new(index: NodeIndex, v0: Array2<f64>, adjacency: Array2<f64>) -> Result<Self> {
        let normalized = normalize_adjacency(&adjacency)?;
        Ok(CompositionalGraph {
            index,
            v0,
            adjacency,
            normalized,
        })
    }

    pub fn unweighted(vocab: &Vocabulary, embeddings: &EmbeddingTable, world: World) -> Result<Self> {
        let index = NodeIndex::build(vocab, world);
        let v0 = init_node_features(&index, vocab, embeddings)?;
        let a = build_adjacency_closed(&index);
        Self::new(index, v0, a)
    }

    /// Rebuilds the adjacency from a feasibility table, keeping nodes and
    /// features.
    pub fn reweighted(&self, feasibility: &FeasibilityTable, switches: EdgeSwitches) -> Result<Self> {
        let a = build_adjacency_feasibility(&self.index, feasibility, switches);
        Self::new(self.index.clone(), self.v0.clone(), a)
    }

    pub fn dump_json(&self, vocab: &Vocabulary) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = (0..self.index.len())
            .map(|i| match self.index.node(i) {
                Node::State(s) => serde_json::json!({"kind": "state", "name": vocab.states()[s]}),
                Node::Object(o) => serde_json::json!({"kind": "object", "name": vocab.objects()[o]}),
                Node::Composition(p) => {
                    serde_json::json!({"kind": "composition", "name": vocab.pair_name(p)})
                }
            })
            .collect();
        let rows: Vec<Vec<f64>> = self.adjacency.outer_iter().map(|r| r.to_vec()).collect();
        serde_json::json!({"nodes": nodes, "adjacency": rows})
    }
}
