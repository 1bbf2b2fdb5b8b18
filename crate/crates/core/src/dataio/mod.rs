//! Datasets: vocabularies of states and objects, sample features, word
//! embeddings, and the seeded synthetic generator.

mod embeddings;
mod features;
mod splits;
mod synth;

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embeddings::{load_embeddings, parse_embeddings, write_embeddings, EmbeddingTable};
pub use features::{read_features, read_features_csv, write_features, FeatureRecord, FeatureSidecar};
pub use splits::{load_splits, parse_splits, write_splits};
pub use synth::{synthesize, SynthSpec, SyntheticDataset};

/// A composition label: `(state index, object index)`.
pub type Pair = (usize, usize);

/// States, objects and the seen / closed-world unseen partitions of their
/// product. The open-world target set is the implicit full product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    states: Vec<String>,
    objects: Vec<String>,
    seen: BTreeSet<Pair>,
    closed_unseen: BTreeSet<Pair>,
}

impl Vocabulary {
    pub fn new(
        states: Vec<String>,
        objects: Vec<String>,
        seen: BTreeSet<Pair>,
        closed_unseen: BTreeSet<Pair>,
    ) -> Result<Self> {
        let vocab = Vocabulary {
            states,
            objects,
            seen,
            closed_unseen,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    fn validate(&self) -> Result<()> {
        let dup = |names: &[String], what: &str| -> Result<()> {
            let set: BTreeSet<&String> = names.iter().collect();
            if set.len() != names.len() {
                return Err(Error::Validation(format!("duplicate {what} name")));
            }
            Ok(())
        };
        dup(&self.states, "state")?;
        dup(&self.objects, "object")?;

        for &(s, o) in self.seen.iter().chain(&self.closed_unseen) {
            if s >= self.states.len() || o >= self.objects.len() {
                return Err(Error::Validation(format!("pair ({s}, {o}) out of range")));
            }
        }
        if let Some(&(s, o)) = self.seen.intersection(&self.closed_unseen).next() {
            return Err(Error::Validation(format!(
                "pair ({} {}) is both seen and unseen",
                self.states[s], self.objects[o]
            )));
        }
        for (s, name) in self.states.iter().enumerate() {
            if !self.seen.iter().any(|p| p.0 == s) {
                return Err(Error::Validation(format!(
                    "state '{name}' appears in no seen pair"
                )));
            }
        }
        for (o, name) in self.objects.iter().enumerate() {
            if !self.seen.iter().any(|p| p.1 == o) {
                return Err(Error::Validation(format!(
                    "object '{name}' appears in no seen pair"
                )));
            }
        }
        Ok(())
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn seen_pairs(&self) -> &BTreeSet<Pair> {
        &self.seen
    }

    pub fn closed_unseen_pairs(&self) -> &BTreeSet<Pair> {
        &self.closed_unseen
    }

    pub fn is_seen(&self, pair: Pair) -> bool {
        self.seen.contains(&pair)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn pair_name(&self, (s, o): Pair) -> String {
        format!("{} {}", self.states[s], self.objects[o])
    }

    /// `O^s`: objects seen together with `state` in training.
    pub fn objects_with_state(&self, state: usize) -> impl Iterator<Item = usize> + '_ {
        self.seen.iter().filter(move |p| p.0 == state).map(|p| p.1)
    }

    /// `S^o`: states seen together with `object` in training.
    pub fn states_with_object(&self, object: usize) -> impl Iterator<Item = usize> + '_ {
        self.seen.iter().filter(move |p| p.1 == object).map(|p| p.0)
    }

    /// Every pair of the open-world product, row-major in (state, object).
    pub fn all_pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        let n_obj = self.objects.len();
        (0..self.states.len() * n_obj).map(move |i| (i / n_obj, i % n_obj))
    }
}

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub feature: Vec<f64>,
    pub label: Pair,
}

/// A set of samples stored row-wise for batched computation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<Pair>,
}

impl SampleSet {
    pub fn from_samples(samples: &[Sample], feature_dim: usize) -> Result<Self> {
        let mut features = Array2::zeros((samples.len(), feature_dim));
        for (i, sample) in samples.iter().enumerate() {
            if sample.feature.len() != feature_dim {
                return Err(Error::Dimension {
                    context: format!("feature of sample '{}'", sample.id),
                    expected: feature_dim,
                    found: sample.feature.len(),
                });
            }
            if sample.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "sample '{}' has a non-finite feature",
                    sample.id
                )));
            }
            features.row_mut(i).assign(&ArrayView1::from(&sample.feature));
        }
        Ok(SampleSet {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            features,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            id: self.ids[i].clone(),
            feature: self.features.row(i).to_vec(),
            label: self.labels[i],
        }
    }

    /// Rows `indices` as a new set, in the given order.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Which partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Everything a training or evaluation run consumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &SampleSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Reads a dataset directory laid out as `splits.txt`, `embeddings.txt`,
    /// `features.bin` and `features.json`.
    pub fn load_dir(dir: &std::path::Path) -> Result<Self> {
        let vocabulary = load_splits(&[dir.join("splits.txt")])?;
        let embeddings = load_embeddings(&dir.join("embeddings.txt"), &vocabulary)?;
        let records = read_features(&dir.join("features.bin"), &dir.join("features.json"))?;
        Self::from_records(vocabulary, embeddings, &records)
    }

    pub fn from_records(
        vocabulary: Vocabulary,
        embeddings: EmbeddingTable,
        records: &[FeatureRecord],
    ) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.feature.len());
        let mut parts: [Vec<Sample>; 3] = Default::default();
        for r in records {
            let s = vocabulary.state_index(&r.state).ok_or_else(|| {
                Error::Validation(format!("sample '{}' has unknown state '{}'", r.id, r.state))
            })?;
            let o = vocabulary.object_index(&r.object).ok_or_else(|| {
                Error::Validation(format!("sample '{}' has unknown object '{}'", r.id, r.object))
            })?;
            let slot = match r.split {
                Split::Train => 0,
                Split::Val => 1,
                Split::Test => 2,
            };
            parts[slot].push(Sample {
                id: r.id.clone(),
                feature: r.feature.clone(),
                label: (s, o),
            });
        }
        for sample in &parts[0] {
            if !vocabulary.is_seen(sample.label) {
                return Err(Error::Validation(format!(
                    "training sample '{}' is labelled with unseen pair '{}'",
                    sample.id,
                    vocabulary.pair_name(sample.label)
                )));
            }
        }
        let [train, val, test] = parts;
        Ok(Dataset {
            train: SampleSet::from_samples(&train, dim)?,
            val: SampleSet::from_samples(&val, dim)?,
            test: SampleSet::from_samples(&test, dim)?,
            vocabulary,
            embeddings,
        })
    }

    pub fn records(&self) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for (split, set) in [
            (Split::Train, &self.train),
            (Split::Val, &self.val),
            (Split::Test, &self.test),
        ] {
            for i in 0..set.len() {
                let (s, o) = set.labels[i];
                out.push(FeatureRecord {
                    id: set.ids[i].clone(),
                    split,
                    state: self.vocabulary.states()[s].clone(),
                    object: self.vocabulary.objects()[o].clone(),
                    feature: set.features.row(i).to_vec(),
                });
            }
        }
        out
    }
}
