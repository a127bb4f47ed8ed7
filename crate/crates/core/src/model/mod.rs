//! The recommender models: configuration, trainable parameters and the
//! forward computation.
//!
//! All four variants share one pipeline over a `(M+N) × D` node table:
//!
//! | variant    | layer-0 table        | per-layer transform      | dropout + L2 norm | readout            |
//! |------------|----------------------|--------------------------|-------------------|--------------------|
//! | `qgcn`     | quaternion, `D = 4d` | quaternion `W ∈ H^{d×d}` | yes               | configured         |
//! | `qgcn-q`   | real, width `D`      | dense real `D×D`         | yes               | configured         |
//! | `qgcn-w`   | quaternion, `D = 4d` | none                     | yes               | configured         |
//! | `lightgcn` | real, width `D`      | none                     | no                | `Σ_k λ_k e^(k)`    |

mod checkpoint;
mod forward;
pub(crate) mod readout;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{
    dropout_l2norm, forward, predict, propagate_layer, ForwardTrace, LayerTrace, Mode, NormalizedTable,
};
pub use readout::readout;

use clap::ValueEnum;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quaternion::{dot, QuaternionMatrix};
use crate::seed::derive_seed;
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Quaternion embeddings with quaternion feature transforms.
    Qgcn,
    /// Real embeddings with unconstrained real transforms.
    #[value(name = "qgcn-q")]
    QgcnQ,
    /// Quaternion embeddings, transforms removed.
    #[value(name = "qgcn-w")]
    QgcnW,
    /// LightGCN: plain normalized propagation with a weighted layer sum.
    Lightgcn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Qgcn => "qgcn",
            Variant::QgcnQ => "qgcn-q",
            Variant::QgcnW => "qgcn-w",
            Variant::Lightgcn => "lightgcn",
        }
    }

    pub fn is_quaternion(self) -> bool {
        matches!(self, Variant::Qgcn | Variant::QgcnW)
    }

    pub fn normalizes(self) -> bool {
        !matches!(self, Variant::Lightgcn)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    Max,
    Sum,
    Concat,
    Mean,
}

impl ReadoutKind {
    pub const ALL: [ReadoutKind; 4] = [ReadoutKind::Max, ReadoutKind::Sum, ReadoutKind::Concat, ReadoutKind::Mean];

    pub fn as_str(self) -> &'static str {
        match self {
            ReadoutKind::Max => "max",
            ReadoutKind::Sum => "sum",
            ReadoutKind::Concat => "concat",
            ReadoutKind::Mean => "mean",
        }
    }
}

impl std::fmt::Display for ReadoutKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of propagation layers `L`.
    pub layers: usize,
    /// Quaternion dimension `d`; every variant uses `D = 4d` reals per node.
    pub quaternion_dim: usize,
    pub dropout: f64,
    pub readout: ReadoutKind,
    /// Whether the layer-0 embedding joins the readout (quaternion variants).
    pub include_layer0: bool,
    /// LightGCN layer weights `λ_0..λ_L`; uniform `1/(L+1)` when absent.
    pub layer_weights: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Qgcn,
            layers: 1,
            quaternion_dim: 16,
            dropout: 0.0,
            readout: ReadoutKind::Mean,
            include_layer0: false,
            layer_weights: None,
        }
    }
}

impl ModelConfig {
    /// Real width `D = 4d` of every node row.
    pub fn embedding_width(&self) -> usize {
        4 * self.quaternion_dim
    }

    /// Width of the final table fed to the inner-product predictor.
    pub fn output_width(&self) -> usize {
        match (self.variant, self.readout) {
            (Variant::Lightgcn, _) => self.embedding_width(),
            (_, ReadoutKind::Concat) => self.readout_layers().len() * self.embedding_width(),
            _ => self.embedding_width(),
        }
    }

    /// Layer indices aggregated by the readout.
    pub fn readout_layers(&self) -> Vec<usize> {
        let first = if self.variant == Variant::Lightgcn || self.include_layer0 {
            0
        } else {
            1
        };
        (first..=self.layers).collect()
    }

    pub fn lightgcn_weights(&self) -> Vec<f64> {
        match &self.layer_weights {
            Some(w) => w.clone(),
            None => vec![1.0 / (self.layers + 1) as f64; self.layers + 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one propagation layer is required".into()));
        }
        if self.quaternion_dim == 0 {
            return Err(Error::Config("quaternion dimension must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if let Some(w) = &self.layer_weights {
            if w.len() != self.layers + 1 {
                return Err(Error::Config(format!(
                    "{} layer weights given for {} layers (need L+1)",
                    w.len(),
                    self.layers
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config("layer weights must be finite and ≥ 0".into()));
            }
        }
        Ok(())
    }
}

/// An unconstrained row-major `n×n` real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Dimension(format!("dense {dim}×{dim} matrix needs {} values", dim * dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-layer feature transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    Quaternion(QuaternionMatrix),
    Dense(DenseMatrix),
}

impl Transform {
    pub fn parameter_count(&self) -> usize {
        match self {
            Transform::Quaternion(w) => w.parameter_count(),
            Transform::Dense(w) => w.data.len(),
        }
    }

    pub fn zeros_like(&self) -> Transform {
        match self {
            Transform::Quaternion(w) => Transform::Quaternion(QuaternionMatrix::zeros(w.dim())),
            Transform::Dense(w) => Transform::Dense(DenseMatrix::zeros(w.dim)),
        }
    }

    /// `out = W x` for one node row.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Transform::Quaternion(w) => w.apply(x, out),
            Transform::Dense(w) => {
                for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.dim)) {
                    *o = dot(row, x);
                }
            }
        }
    }

    /// `out = Wᵀ g`.
    pub fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        match self {
            Transform::Quaternion(w) => w.apply_transpose(g, out),
            Transform::Dense(w) => {
                out.fill(0.0);
                for (&gr, row) in g.iter().zip(w.data.chunks_exact(w.dim)) {
                    if gr == 0.0 {
                        continue;
                    }
                    for (o, &wv) in out.iter_mut().zip(row) {
                        *o += gr * wv;
                    }
                }
            }
        }
    }

    /// `self += ∂⟨g, W x⟩/∂W`, with `self` holding gradient storage.
    pub fn accumulate_outer(&mut self, g: &[f64], x: &[f64]) {
        match self {
            Transform::Quaternion(grad) => QuaternionMatrix::accumulate_outer(grad, g, x),
            Transform::Dense(grad) => {
                for (&gr, row) in g.iter().zip(grad.data.chunks_exact_mut(grad.dim)) {
                    if gr == 0.0 {
                        continue;
                    }
                    for (wv, &xv) in row.iter_mut().zip(x) {
                        *wv += gr * xv;
                    }
                }
            }
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        match self {
            Transform::Quaternion(w) => w.blocks().iter().map(Vec::as_slice).collect(),
            Transform::Dense(w) => vec![&w.data],
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Transform::Quaternion(w) => w.blocks_mut().iter_mut().map(Vec::as_mut_slice).collect(),
            Transform::Dense(w) => vec![&mut w.data],
        }
    }
}

/// The trainable set: the layer-0 embedding table and one transform per
/// layer (none for `qgcn-w` and `lightgcn`).
///
/// Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub users: usize,
    pub items: usize,
    pub embeddings: Table,
    pub transforms: Vec<Transform>,
    /// Bumped on every mutable access; forward traces record it.
    #[serde(skip)]
    version: u64,
}

impl ModelParams {
    pub fn new(users: usize, items: usize, embeddings: Table, transforms: Vec<Transform>) -> Result<Self> {
        if embeddings.rows() != users + items {
            return Err(Error::Dimension(format!(
                "embedding table has {} rows for {} users + {} items",
                embeddings.rows(),
                users,
                items
            )));
        }
        let width = embeddings.width();
        for t in &transforms {
            let dim_ok = match t {
                Transform::Quaternion(w) => 4 * w.dim() == width,
                Transform::Dense(w) => w.dim() == width,
            };
            if !dim_ok {
                return Err(Error::Dimension("transform does not match embedding width".into()));
            }
        }
        Ok(Self {
            users,
            items,
            embeddings,
            transforms,
            version: 0,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.users + self.items
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            users: self.users,
            items: self.items,
            embeddings: Table::zeros(self.embeddings.rows(), self.embeddings.width()),
            transforms: self.transforms.iter().map(Transform::zeros_like).collect(),
            version: 0,
        }
    }

    pub fn embeddings_mut(&mut self) -> &mut Table {
        self.version += 1;
        &mut self.embeddings
    }

    /// All parameter storage as flat slices, in a fixed order: embeddings,
    /// then each transform's blocks.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embeddings.as_slice()];
        for t in &self.transforms {
            out.extend(t.slices());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = vec![self.embeddings.as_mut_slice()];
        for t in &mut self.transforms {
            out.extend(t.slices_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Free reals per transform layer.
    pub fn transform_parameter_counts(&self) -> Vec<usize> {
        self.transforms.iter().map(Transform::parameter_count).collect()
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices().iter().map(|s| dot(s, s)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

fn xavier(fan_in: usize, fan_out: usize) -> Uniform<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Uniform::new_inclusive(-bound, bound)
}

/// Xavier-uniform initialization.
///
/// Each real block is drawn from `U(-b, b)` with `b = √(6/(fan_in+fan_out))`:
/// an embedding block is `(M+N) × d` for quaternion tables and `(M+N) × D`
/// for real ones; a quaternion transform block is `d×d` and a dense
/// transform `D×D`. Embeddings and transforms use separate derived streams,
/// so variants sharing a seed share whatever shapes they have in common.
pub fn init_params(cfg: &ModelConfig, users: usize, items: usize, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let rows = users + items;
    let d = cfg.quaternion_dim;
    let width = cfg.embedding_width();
    let block_width = if cfg.variant.is_quaternion() { d } else { width };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "embeddings"));
    let dist = xavier(block_width, rows);
    let data: Vec<f64> = (0..rows * width).map(|_| dist.sample(&mut rng)).collect();
    let embeddings = Table::from_vec(rows, width, data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "transforms"));
    let transforms = match cfg.variant {
        Variant::Qgcn => {
            let dist = xavier(d, d);
            (0..cfg.layers)
                .map(|_| {
                    let mut block = || (0..d * d).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>();
                    let (r, i, j, k) = (block(), block(), block(), block());
                    QuaternionMatrix::from_blocks(d, r, i, j, k).map(Transform::Quaternion)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Variant::QgcnQ => {
            let dist = xavier(width, width);
            (0..cfg.layers)
                .map(|_| {
                    let data = (0..width * width).map(|_| dist.sample(&mut rng)).collect();
                    DenseMatrix::from_vec(width, data).map(Transform::Dense)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Variant::QgcnW | Variant::Lightgcn => Vec::new(),
    };
    ModelParams::new(users, items, embeddings, transforms)
}
