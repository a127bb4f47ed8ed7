//! Propagation, dropout + L2 normalization, and the full forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::model::readout::{readout, weighted_sum};
use crate::model::{ModelConfig, ModelParams, Transform, Variant};
use crate::quaternion::dot;
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Output of [`dropout_l2norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTable {
    pub output: Table,
    /// Per-entry inverted-dropout factors (`0` or `1/(1-p)`); `None` when no
    /// dropout was applied.
    pub mask: Option<Vec<f64>>,
    /// Euclidean norm of each row after dropout, before normalization.
    pub norms: Vec<f64>,
}

/// Applies a feature transform to every row.
pub(crate) fn transform_rows(table: &Table, transform: &Transform) -> Table {
    let width = table.width();
    let mut out = Table::zeros(table.rows(), width);
    out.as_mut_slice()
        .par_chunks_mut(width)
        .zip(table.as_slice().par_chunks(width))
        .with_min_len(32)
        .for_each(|(o, x)| transform.apply(x, o));
    out
}

/// One propagation layer: `W ⊗ Σ_{n∈N(v)} e_n / √(|N_v||N_n|)` for every
/// node `v`. Aggregation runs first; the transform is linear and shared by
/// all nodes, so the order does not change the result.
pub fn propagate_layer(adj: &NormalizedAdjacency, prev: &Table, transform: Option<&Transform>) -> Result<Table> {
    let aggregate = adj.spmv(prev)?;
    Ok(match transform {
        Some(t) => transform_rows(&aggregate, t),
        None => aggregate,
    })
}

fn normalize_rows(input: &Table) -> (Table, Vec<f64>) {
    let mut out = input.clone();
    let width = input.width();
    let norms: Vec<f64> = out
        .as_mut_slice()
        .par_chunks_mut(width.max(1))
        .map(|row| {
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
            norm
        })
        .collect();
    (out, norms)
}

fn dropout_l2norm_with(table: &Table, p: f64, mode: Mode, rng: &mut ChaCha8Rng) -> NormalizedTable {
    let mask = if mode == Mode::Train && p > 0.0 {
        let keep = 1.0 / (1.0 - p);
        Some(
            (0..table.as_slice().len())
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect::<Vec<f64>>(),
        )
    } else {
        None
    };
    let (output, norms) = match &mask {
        Some(m) => {
            let dropped: Vec<f64> = table.as_slice().iter().zip(m).map(|(x, k)| x * k).collect();
            let dropped = Table::from_vec(table.rows(), table.width(), dropped).expect("same shape");
            normalize_rows(&dropped)
        }
        None => normalize_rows(table),
    };
    NormalizedTable { output, mask, norms }
}

/// Inverted dropout (train mode only) over each row's `D` reals followed by
/// rescaling every nonzero row to unit Euclidean norm. Zero rows stay zero.
pub fn dropout_l2norm(table: &Table, p: f64, mode: Mode, seed: u64) -> NormalizedTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_l2norm_with(table, p, mode, &mut rng)
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `L · E^{l-1}`, the transform input.
    pub aggregate: Table,
    pub mask: Option<Vec<f64>>,
    /// Pre-normalization row norms; empty for variants without normalization.
    pub norms: Vec<f64>,
    /// `E^l`, the layer output.
    pub output: Table,
}

/// Everything the backward pass needs to replay one train-mode forward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) params_version: u64,
    pub(crate) shape: (usize, usize, usize),
    /// L2-normalized layer-0 table, when layer 0 joins a quaternion readout.
    pub layer0: Option<NormalizedTable>,
    pub layers: Vec<LayerTrace>,
    pub final_table: Table,
}

impl ForwardTrace {
    /// Table entering the readout for layer `l`.
    pub(crate) fn readout_input<'a>(&'a self, params: &'a ModelParams, l: usize) -> &'a Table {
        if l == 0 {
            match &self.layer0 {
                Some(n) => &n.output,
                None => &params.embeddings,
            }
        } else {
            &self.layers[l - 1].output
        }
    }
}

/// Runs `L` propagation layers and the readout, returning the final node
/// table. Train mode also returns the trace for
/// [`backward`](crate::train::backward) and applies dropout with masks drawn
/// from `seed`.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    mode: Mode,
    seed: u64,
) -> Result<(Table, Option<ForwardTrace>)> {
    forward_impl(cfg, params, adj, mode, seed, cfg.variant.normalizes())
}

pub(crate) fn forward_impl(
    cfg: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    mode: Mode,
    seed: u64,
    normalize: bool,
) -> Result<(Table, Option<ForwardTrace>)> {
    cfg.validate()?;
    if adj.num_nodes() != params.num_nodes()
        || adj.num_users() != params.users
        || params.embeddings.width() != cfg.embedding_width()
    {
        return Err(Error::Dimension(format!(
            "model over {}+{} nodes of width {} does not fit adjacency over {}+{} nodes / config width {}",
            params.users,
            params.items,
            params.embeddings.width(),
            adj.num_users(),
            adj.num_items(),
            cfg.embedding_width()
        )));
    }
    let uses_transforms = matches!(cfg.variant, Variant::Qgcn | Variant::QgcnQ);
    if uses_transforms && params.transforms.len() != cfg.layers {
        return Err(Error::Dimension(format!(
            "{} transforms for {} layers",
            params.transforms.len(),
            cfg.layers
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let prev = if l == 0 { &params.embeddings } else { &layers[l - 1].output };
        let aggregate = adj.spmv(prev)?;
        let transformed = if uses_transforms {
            Some(transform_rows(&aggregate, &params.transforms[l]))
        } else {
            None
        };
        let (output, mask, norms) = if normalize {
            let n = dropout_l2norm_with(transformed.as_ref().unwrap_or(&aggregate), cfg.dropout, mode, &mut rng);
            (n.output, n.mask, n.norms)
        } else {
            (transformed.unwrap_or_else(|| aggregate.clone()), None, Vec::new())
        };
        layers.push(LayerTrace {
            aggregate,
            mask,
            norms,
            output,
        });
    }

    let included = cfg.readout_layers();
    let layer0 = (cfg.variant != Variant::Lightgcn && included.first() == Some(&0))
        .then(|| {
            let (output, norms) = if normalize {
                normalize_rows(&params.embeddings)
            } else {
                (params.embeddings.clone(), Vec::new())
            };
            NormalizedTable {
                output,
                mask: None,
                norms,
            }
        });

    let mut trace = ForwardTrace {
        params_version: params.version(),
        shape: (params.users, params.items, params.embeddings.width()),
        layer0,
        layers,
        final_table: Table::zeros(0, 0),
    };
    let inputs: Vec<&Table> = included.iter().map(|&l| trace.readout_input(params, l)).collect();
    let final_table = match cfg.variant {
        Variant::Lightgcn => weighted_sum(&inputs, &cfg.lightgcn_weights())?,
        _ => readout(&inputs, cfg.readout)?,
    };
    match mode {
        Mode::Train => {
            trace.final_table = final_table.clone();
            Ok((final_table, Some(trace)))
        }
        Mode::Eval => Ok((final_table, None)),
    }
}

/// Inner-product score of user `u` and item `i` on a final table whose first
/// `users` rows are users.
pub fn predict(final_table: &Table, users: usize, u: usize, i: usize) -> Result<f64> {
    let items = final_table.rows().saturating_sub(users);
    if u >= users || i >= items {
        return Err(Error::Input(format!(
            "prediction index ({u}, {i}) out of range for {users} users × {items} items"
        )));
    }
    Ok(final_table.row_dot(u, users + i))
}
