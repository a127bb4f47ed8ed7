//! Quaternion graph convolution for top-K recommendation.
//!
//! Users and items are embedded as quaternion vectors and refined by
//! propagation layers over the normalized user-item graph, each applying a
//! shared quaternion feature transform through the Hamilton product. Layer
//! outputs are dropout-regularized, L2-normalized and pooled by a readout
//! into the embeddings scored by inner product. Training minimizes the BPR
//! loss with Adam using hand-derived reverse-mode gradients.
//!
//! The crate also carries the LightGCN baseline, the `qgcn-q` / `qgcn-w`
//! ablations, Recall@K / NDCG@K evaluation, and the edge injection and
//! discard perturbations used for robustness experiments.
//!
//! ```
//! use qgcn::graph::{InteractionSet, NormalizedAdjacency};
//! use qgcn::model::{forward, init_params, predict, ModelConfig, Mode};
//!
//! let graph = InteractionSet::build(2, 3, [(0, 0), (0, 1), (1, 1), (1, 2)]).unwrap();
//! let adj = NormalizedAdjacency::build(&graph);
//! let cfg = ModelConfig { layers: 2, quaternion_dim: 4, ..ModelConfig::default() };
//! let params = init_params(&cfg, 2, 3, 7).unwrap();
//! let (embeddings, _) = forward(&cfg, &params, &adj, Mode::Eval, 0).unwrap();
//! let score = predict(&embeddings, 2, 0, 2).unwrap();
//! assert!(score.abs() <= 1.0 + 1e-12);
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod quaternion;
pub mod seed;
pub mod table;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quaternions.md")]
    mod quaternions {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
