//! Reverse-mode gradients of the BPR objective through the forward pass.
//!
//! The chain, from the loss back to the parameters:
//!
//! 1. `−ln σ(ŷ_ui − ŷ_uj)` gives `∂/∂x = −σ(−x)` and, through the inner
//!    products, gradients on the final rows of `u`, `i` and `j`.
//! 2. The readout adjoint splits that gradient across layers.
//! 3. For normalized variants, `y ↦ y/‖y‖` has Jacobian `(I − ŷŷᵀ)/‖y‖`,
//!    followed by the replayed dropout mask.
//! 4. The transform adjoint gives `Wᵀg` for the layer input and collects the
//!    outer products `g xᵀ` into the shared weight blocks.
//! 5. The normalized adjacency is symmetric, so the aggregation adjoint is
//!    another product with the same matrix.

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::model::readout::readout_backward;
use crate::model::{ForwardTrace, ModelConfig, ModelParams, Variant};
use crate::quaternion::dot;
use crate::table::Table;
use crate::train::{neg_log_sigmoid, sigmoid, RegScope, Triple};

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean `−ln σ(ŷ_ui − ŷ_uj)` over the batch.
    pub ranking: f64,
    pub regularization: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.ranking + self.regularization
    }
}

/// Regularization term for a batch: `λ` times the squared norm of the
/// layer-0 rows of every `(u, i, j)` averaged over the batch (`Ego`), or
/// `λ‖Θ‖²` over all parameters (`All`).
pub fn regularization(params: &ModelParams, batch: &[Triple], reg: f64, scope: RegScope) -> f64 {
    if reg == 0.0 {
        return 0.0;
    }
    match scope {
        RegScope::All => reg * params.squared_norm(),
        RegScope::Ego => {
            if batch.is_empty() {
                return 0.0;
            }
            let e = &params.embeddings;
            let users = params.users;
            let sq = |row: usize| dot(e.row(row), e.row(row));
            let total: f64 = batch
                .iter()
                .map(|t| sq(t.user as usize) + sq(users + t.pos as usize) + sq(users + t.neg as usize))
                .sum();
            reg * total / batch.len() as f64
        }
    }
}

/// BPR loss on precomputed scores plus the regularization term.
pub fn bpr_loss(
    scores_pos: &[f64],
    scores_neg: &[f64],
    params: &ModelParams,
    batch: &[Triple],
    reg: f64,
    scope: RegScope,
) -> Result<LossBreakdown> {
    if scores_pos.len() != scores_neg.len() {
        return Err(Error::Dimension(format!(
            "{} positive vs {} negative scores",
            scores_pos.len(),
            scores_neg.len()
        )));
    }
    let ranking = if scores_pos.is_empty() {
        0.0
    } else {
        scores_pos
            .iter()
            .zip(scores_neg)
            .map(|(p, n)| neg_log_sigmoid(p - n))
            .sum::<f64>()
            / scores_pos.len() as f64
    };
    Ok(LossBreakdown {
        ranking,
        regularization: regularization(params, batch, reg, scope),
    })
}

/// Scores `(ŷ_ui, ŷ_uj)` of each triple on a final table.
pub fn triple_scores(final_table: &Table, users: usize, batch: &[Triple]) -> (Vec<f64>, Vec<f64>) {
    batch
        .iter()
        .map(|t| {
            let u = t.user as usize;
            (
                final_table.row_dot(u, users + t.pos as usize),
                final_table.row_dot(u, users + t.neg as usize),
            )
        })
        .unzip()
}

/// Gradient of the mean BPR term with respect to the final table.
pub(crate) fn final_table_gradient(final_table: &Table, users: usize, batch: &[Triple]) -> Table {
    let mut grad = Table::zeros(final_table.rows(), final_table.width());
    if batch.is_empty() {
        return grad;
    }
    let scale = 1.0 / batch.len() as f64;
    for t in batch {
        let (u, i, j) = (t.user as usize, users + t.pos as usize, users + t.neg as usize);
        let x = final_table.row_dot(u, i) - final_table.row_dot(u, j);
        let coef = -sigmoid(-x) * scale;
        if coef == 0.0 {
            continue;
        }
        for n in 0..final_table.width() {
            let (fu, fi, fj) = (final_table.row(u)[n], final_table.row(i)[n], final_table.row(j)[n]);
            grad.row_mut(u)[n] += coef * (fi - fj);
            grad.row_mut(i)[n] += coef * fu;
            grad.row_mut(j)[n] -= coef * fu;
        }
    }
    grad
}

/// Adjoint of per-row `y ↦ mask ⊙ y` followed by `z ↦ z/‖z‖`, given the
/// normalized output rows and the pre-normalization norms.
fn normalization_backward(grad: &mut Table, output: &Table, norms: &[f64], mask: Option<&[f64]>) {
    let width = grad.width();
    for (row, &norm) in norms.iter().enumerate() {
        let g = grad.row_mut(row);
        if norm == 0.0 {
            g.fill(0.0);
            continue;
        }
        let y = output.row(row);
        let along = dot(y, g);
        for (gv, &yv) in g.iter_mut().zip(y) {
            *gv = (*gv - yv * along) / norm;
        }
        if let Some(m) = mask {
            for (gv, &mv) in g.iter_mut().zip(&m[row * width..(row + 1) * width]) {
                *gv *= mv;
            }
        }
    }
}

/// Parameter gradients from an upstream gradient on the final table.
pub(crate) fn backward_from_final(
    trace: &ForwardTrace,
    cfg: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    final_grad: &Table,
) -> Result<ModelParams> {
    check_trace(trace, params)?;
    let included = cfg.readout_layers();
    let inputs: Vec<&Table> = included.iter().map(|&l| trace.readout_input(params, l)).collect();
    let per_layer: Vec<Table> = match cfg.variant {
        Variant::Lightgcn => {
            let weights = cfg.lightgcn_weights();
            included
                .iter()
                .map(|&l| {
                    let mut g = final_grad.clone();
                    g.as_mut_slice().iter_mut().for_each(|x| *x *= weights[l]);
                    g
                })
                .collect()
        }
        _ => readout_backward(&inputs, cfg.readout, final_grad),
    };
    let rows = params.num_nodes();
    let width = params.embeddings.width();
    let mut layer_grads: Vec<Option<Table>> = (0..=cfg.layers).map(|_| None).collect();
    for (&l, g) in included.iter().zip(per_layer) {
        layer_grads[l] = Some(g);
    }

    let mut grads = params.zeros_like();
    let mut upstream: Option<Table> = None;
    for l in (1..=cfg.layers).rev() {
        let layer = &trace.layers[l - 1];
        let mut g = match (layer_grads[l].take(), upstream.take()) {
            (Some(mut a), Some(b)) => {
                a.add_scaled(&b, 1.0);
                a
            }
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => Table::zeros(rows, width),
        };
        if !layer.norms.is_empty() {
            normalization_backward(&mut g, &layer.output, &layer.norms, layer.mask.as_deref());
        }
        let g_aggregate = match params.transforms.get(l - 1) {
            Some(transform) if matches!(cfg.variant, Variant::Qgcn | Variant::QgcnQ) => {
                let grad_w = &mut grads.transforms[l - 1];
                let mut g_in = Table::zeros(rows, width);
                for row in 0..rows {
                    let gr = g.row(row);
                    if gr.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    grad_w.accumulate_outer(gr, layer.aggregate.row(row));
                    transform.apply_transpose(gr, g_in.row_mut(row));
                }
                g_in
            }
            _ => g,
        };
        upstream = Some(adj.spmv(&g_aggregate)?);
    }

    let mut g0 = upstream.unwrap_or_else(|| Table::zeros(rows, width));
    if let Some(mut direct) = layer_grads[0].take() {
        if let Some(layer0) = &trace.layer0 {
            if !layer0.norms.is_empty() {
                normalization_backward(&mut direct, &layer0.output, &layer0.norms, None);
            }
        }
        g0.add_scaled(&direct, 1.0);
    }
    grads.embeddings = g0;
    Ok(grads)
}

fn check_trace(trace: &ForwardTrace, params: &ModelParams) -> Result<()> {
    let shape = (params.users, params.items, params.embeddings.width());
    if trace.params_version != params.version() || trace.shape != shape {
        return Err(Error::StaleTrace(format!(
            "trace recorded for parameter version {} / shape {:?}, called with version {} / shape {:?}",
            trace.params_version,
            trace.shape,
            params.version(),
            shape
        )));
    }
    Ok(())
}

/// Adds the gradient of [`regularization`] to `grads`.
pub(crate) fn add_regularization_gradient(
    grads: &mut ModelParams,
    params: &ModelParams,
    batch: &[Triple],
    reg: f64,
    scope: RegScope,
) {
    if reg == 0.0 {
        return;
    }
    match scope {
        RegScope::All => {
            let src = params.slices();
            for (g, p) in grads.slices_mut().into_iter().zip(src) {
                for (gv, &pv) in g.iter_mut().zip(p) {
                    *gv += 2.0 * reg * pv;
                }
            }
        }
        RegScope::Ego => {
            if batch.is_empty() {
                return;
            }
            let scale = 2.0 * reg / batch.len() as f64;
            let users = params.users;
            for t in batch {
                for row in [t.user as usize, users + t.pos as usize, users + t.neg as usize] {
                    let src = params.embeddings.row(row);
                    for (gv, &pv) in grads.embeddings.row_mut(row).iter_mut().zip(src) {
                        *gv += scale * pv;
                    }
                }
            }
        }
    }
}

/// Exact gradients of the batch loss (BPR term plus regularization) with
/// respect to every parameter, replaying a train-mode trace of `params`.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    trace: &ForwardTrace,
    batch: &[Triple],
    cfg: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    reg: f64,
    scope: RegScope,
) -> Result<ModelParams> {
    let final_grad = final_table_gradient(&trace.final_table, params.users, batch);
    let mut grads = backward_from_final(trace, cfg, params, adj, &final_grad)?;
    add_regularization_gradient(&mut grads, params, batch, reg, scope);
    Ok(grads)
}
