//! Compositional cosine graph embeddings for open-world compositional
//! zero-shot learning.
//!
//! States and objects are nodes of a graph together with the compositions
//! they form. A graph convolution turns word embeddings into composition
//! classifiers, an image head maps frozen features into the same space,
//! and cosine similarity scores the two. Unseen compositions get a
//! feasibility score from primitive similarity, which both shifts their
//! logits during training and weights their edges in the graph.
//!
//! ```
//! use cocge::dataio::{synthesize, SynthSpec};
//! use cocge::trainer::{train, RunConfig};
//!
//! let spec = SynthSpec { samples_per_seen_pair: 4, eval_samples_per_pair: 2, ..SynthSpec::default() };
//! let data = synthesize(&spec)?.dataset;
//! let mut config = RunConfig::default();
//! config.train.epochs = 2;
//! let out = train(&data, &config)?;
//! assert_eq!(out.log.len(), 2);
//! # Ok::<(), cocge::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataio;
mod error;
pub mod evaluator;
pub mod feasibility;
pub mod graph;
pub mod network;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/feasibility.md")]
    mod feasibility {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
