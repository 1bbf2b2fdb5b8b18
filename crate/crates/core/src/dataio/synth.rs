//! Seeded synthetic compositional datasets with known feasibility.
//!
//! Objects are partitioned into groups and each group admits a set of
//! states; a pair is feasible iff its state is admitted by its object's
//! group. Features are `prototype(object) + offset(state) + noise`.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingTable, Pair, Sample, SampleSet, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_states: usize,
    pub n_objects: usize,
    /// Partition of object indices.
    pub object_groups: Vec<Vec<usize>>,
    /// For each group, the state indices applicable to its objects.
    pub applicable: Vec<Vec<usize>>,
    pub samples_per_seen_pair: usize,
    /// Samples drawn per pair for each of the validation and test splits.
    pub eval_samples_per_pair: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Fraction of feasible pairs made seen (coverage may force more).
    pub seen_fraction: f64,
    /// Width of the seeded random part of each word embedding.
    pub embedding_random_dim: usize,
    /// Magnitude of the group-indicator part of each word embedding.
    pub group_signal: f64,
    /// Spread of object prototypes around their group centre.
    pub object_spread: f64,
    /// Scale of the per-state feature offsets.
    pub state_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let groups: Vec<Vec<usize>> = (0..3).map(|g| (g * 4..g * 4 + 4).collect()).collect();
        SynthSpec {
            n_states: 12,
            n_objects: 12,
            applicable: groups.clone(),
            object_groups: groups,
            samples_per_seen_pair: 30,
            eval_samples_per_pair: 10,
            feature_dim: 32,
            noise_std: 0.6,
            seed: 0,
            seen_fraction: 0.5,
            embedding_random_dim: 16,
            group_signal: 1.0,
            object_spread: 0.5,
            state_scale: 0.8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut owner = vec![None; self.n_objects];
        for (g, group) in self.object_groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Config(format!("object group {g} is empty")));
            }
            for &o in group {
                if o >= self.n_objects {
                    return Err(Error::Config(format!(
                        "object group {g} names object {o} but n_objects = {}",
                        self.n_objects
                    )));
                }
                if let Some(prev) = owner[o].replace(g) {
                    return Err(Error::Config(format!(
                        "object group {g} repeats object {o} already in group {prev}"
                    )));
                }
            }
        }
        if let Some(o) = owner.iter().position(Option::is_none) {
            return Err(Error::Config(format!("object {o} belongs to no object group")));
        }
        if self.applicable.len() != self.object_groups.len() {
            return Err(Error::Config(format!(
                "{} object groups but {} applicable-state sets",
                self.object_groups.len(),
                self.applicable.len()
            )));
        }
        for (g, states) in self.applicable.iter().enumerate() {
            if states.is_empty() {
                return Err(Error::Config(format!(
                    "object group {g} has no applicable states"
                )));
            }
            if let Some(&s) = states.iter().find(|&&s| s >= self.n_states) {
                return Err(Error::Config(format!(
                    "object group {g} lists state {s} but n_states = {}",
                    self.n_states
                )));
            }
        }
        if self.feature_dim == 0 || self.samples_per_seen_pair == 0 {
            return Err(Error::Config(
                "feature_dim and samples_per_seen_pair must be positive".into(),
            ));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.seen_fraction) {
            return Err(Error::Config(
                "noise_std must be >= 0 and seen_fraction in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn group_of(&self) -> Vec<usize> {
        let mut g_of = vec![0; self.n_objects];
        for (g, group) in self.object_groups.iter().enumerate() {
            for &o in group {
                g_of[o] = g;
            }
        }
        g_of
    }

    /// Ground-truth feasible pairs.
    pub fn feasible_pairs(&self) -> BTreeSet<Pair> {
        let g_of = self.group_of();
        let mut out = BTreeSet::new();
        for o in 0..self.n_objects {
            for &s in &self.applicable[g_of[o]] {
                out.insert((s, o));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub feasible: BTreeSet<Pair>,
    pub val_unseen: BTreeSet<Pair>,
    pub test_unseen: BTreeSet<Pair>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn choose_seen(
    spec: &SynthSpec,
    feasible: &BTreeSet<Pair>,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<Pair>> {
    let by_state = |s: usize| -> Vec<Pair> { feasible.iter().copied().filter(|p| p.0 == s).collect() };
    let by_object =
        |o: usize| -> Vec<Pair> { feasible.iter().copied().filter(|p| p.1 == o).collect() };

    let mut seen = BTreeSet::new();
    let mut objects: Vec<usize> = (0..spec.n_objects).collect();
    objects.shuffle(rng);
    for o in objects {
        let options = by_object(o);
        let pick = options.choose(rng).ok_or_else(|| {
            Error::Validation(format!("object {o} has no feasible state; seen coverage impossible"))
        })?;
        seen.insert(*pick);
    }
    let mut states: Vec<usize> = (0..spec.n_states).collect();
    states.shuffle(rng);
    for s in states {
        if seen.iter().any(|p| p.0 == s) {
            continue;
        }
        let options = by_state(s);
        let pick = options.choose(rng).ok_or_else(|| {
            Error::Validation(format!(
                "state {s} is applicable to no object group; seen coverage impossible"
            ))
        })?;
        seen.insert(*pick);
    }

    let target = (spec.seen_fraction * feasible.len() as f64).round() as usize;
    let mut rest: Vec<Pair> = feasible.difference(&seen).copied().collect();
    rest.shuffle(rng);
    for p in rest {
        if seen.len() >= target {
            break;
        }
        seen.insert(p);
    }
    Ok(seen)
}

/// Generates a dataset that is a pure function of `spec`.
pub fn synthesize(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g_of = spec.group_of();
    let n_groups = spec.object_groups.len();
    let f = spec.feature_dim;

    let centres: Vec<Vec<f64>> = (0..n_groups).map(|_| gaussian_vec(&mut rng, f, 1.0)).collect();
    let prototypes: Vec<Vec<f64>> = (0..spec.n_objects)
        .map(|o| {
            let jitter = gaussian_vec(&mut rng, f, spec.object_spread);
            centres[g_of[o]].iter().zip(jitter).map(|(c, j)| c + j).collect()
        })
        .collect();
    let offsets: Vec<Vec<f64>> = (0..spec.n_states)
        .map(|_| gaussian_vec(&mut rng, f, spec.state_scale))
        .collect();

    let feasible = spec.feasible_pairs();
    let seen = choose_seen(spec, &feasible, &mut rng)?;
    let mut unseen: Vec<Pair> = feasible.difference(&seen).copied().collect();
    if unseen.len() < 2 {
        return Err(Error::Validation(
            "fewer than two feasible pairs remain for the unseen validation and test splits".into(),
        ));
    }
    unseen.shuffle(&mut rng);
    let n_val = unseen.len() / 2;
    let val_unseen: BTreeSet<Pair> = unseen[..n_val].iter().copied().collect();
    let test_unseen: BTreeSet<Pair> = unseen[n_val..].iter().copied().collect();

    let states: Vec<String> = (0..spec.n_states).map(|s| format!("state{s:02}")).collect();
    let objects: Vec<String> = (0..spec.n_objects).map(|o| format!("object{o:02}")).collect();
    let closed_unseen: BTreeSet<Pair> = val_unseen.union(&test_unseen).copied().collect();
    let vocabulary = Vocabulary::new(states.clone(), objects.clone(), seen.clone(), closed_unseen)?;

    let draw = |tag: &str, pairs: &[Pair], per_pair: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(pairs.len() * per_pair);
        for &(s, o) in pairs {
            for _ in 0..per_pair {
                let noise = gaussian_vec(rng, f, spec.noise_std);
                let feature = (0..f)
                    .map(|k| prototypes[o][k] + offsets[s][k] + noise[k])
                    .collect();
                out.push(Sample {
                    id: format!("{tag}-{:06}", out.len()),
                    feature,
                    label: (s, o),
                });
            }
        }
        out
    };
    let seen_list: Vec<Pair> = seen.iter().copied().collect();
    let train = draw("train", &seen_list, spec.samples_per_seen_pair, &mut rng);
    let val_pairs: Vec<Pair> = seen.iter().chain(&val_unseen).copied().collect();
    let val = draw("val", &val_pairs, spec.eval_samples_per_pair, &mut rng);
    let test_pairs: Vec<Pair> = seen.iter().chain(&test_unseen).copied().collect();
    let test = draw("test", &test_pairs, spec.eval_samples_per_pair, &mut rng);

    // Word embeddings: group indicator followed by a random projection of
    // the generating prototype/offset.
    let proj_scale = 1.0 / (f as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..spec.embedding_random_dim)
        .map(|_| gaussian_vec(&mut rng, f, proj_scale))
        .collect();
    let project = |v: &[f64]| -> Vec<f64> {
        projection
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    let mut embeddings = EmbeddingTable::new(n_groups + spec.embedding_random_dim);
    for (o, name) in objects.iter().enumerate() {
        let mut e = vec![0.0; n_groups];
        e[g_of[o]] = spec.group_signal;
        e.extend(project(&prototypes[o]));
        embeddings.insert(name.clone(), e)?;
    }
    for (s, name) in states.iter().enumerate() {
        let mut e: Vec<f64> = (0..n_groups)
            .map(|g| {
                if spec.applicable[g].contains(&s) {
                    spec.group_signal
                } else {
                    0.0
                }
            })
            .collect();
        e.extend(project(&offsets[s]));
        embeddings.insert(name.clone(), e)?;
    }

    Ok(SyntheticDataset {
        dataset: Dataset {
            train: SampleSet::from_samples(&train, f)?,
            val: SampleSet::from_samples(&val, f)?,
            test: SampleSet::from_samples(&test, f)?,
            vocabulary,
            embeddings,
        },
        feasible,
        val_unseen,
        test_unseen,
    })
}
