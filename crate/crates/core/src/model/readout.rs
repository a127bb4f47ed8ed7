//! Layer readouts and their adjoints.

use crate::error::{Error, Result};
use crate::model::ReadoutKind;
use crate::table::Table;

fn check_layers(tables: &[&Table], same_width: bool) -> Result<()> {
    let Some(first) = tables.first() else {
        return Err(Error::Input("readout over an empty layer set".into()));
    };
    for t in tables {
        if t.rows() != first.rows() || (same_width && t.width() != first.width()) {
            return Err(Error::Dimension("readout layers differ in shape".into()));
        }
    }
    Ok(())
}

/// Combines per-layer node tables into the final table: elementwise max,
/// sum or mean across layers, or concatenation along the feature axis.
pub fn readout(tables: &[&Table], kind: ReadoutKind) -> Result<Table> {
    check_layers(tables, kind != ReadoutKind::Concat)?;
    let rows = tables[0].rows();
    let width = tables[0].width();
    Ok(match kind {
        ReadoutKind::Sum | ReadoutKind::Mean => {
            let mut out = Table::zeros(rows, width);
            for t in tables {
                out.add_scaled(t, 1.0);
            }
            if kind == ReadoutKind::Mean {
                let n = tables.len() as f64;
                out.as_mut_slice().iter_mut().for_each(|x| *x /= n);
            }
            out
        }
        ReadoutKind::Max => {
            let mut out = tables[0].clone();
            for t in &tables[1..] {
                for (o, &x) in out.as_mut_slice().iter_mut().zip(t.as_slice()) {
                    if x > *o {
                        *o = x;
                    }
                }
            }
            out
        }
        ReadoutKind::Concat => {
            let total: usize = tables.iter().map(|t| t.width()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for row in 0..rows {
                for t in tables {
                    data.extend_from_slice(t.row(row));
                }
            }
            Table::from_vec(rows, total, data)?
        }
    })
}

/// `Σ_k weights[k] · tables[k]`.
pub(crate) fn weighted_sum(tables: &[&Table], weights: &[f64]) -> Result<Table> {
    check_layers(tables, true)?;
    if tables.len() != weights.len() {
        return Err(Error::Dimension("one weight per layer required".into()));
    }
    let mut out = Table::zeros(tables[0].rows(), tables[0].width());
    for (t, &w) in tables.iter().zip(weights) {
        out.add_scaled(t, w);
    }
    Ok(out)
}

/// Gradient of the readout with respect to each input layer. Max routes the
/// whole gradient to the first layer attaining the maximum.
pub(crate) fn readout_backward(tables: &[&Table], kind: ReadoutKind, grad: &Table) -> Vec<Table> {
    let rows = tables[0].rows();
    let width = tables[0].width();
    match kind {
        ReadoutKind::Sum => tables.iter().map(|_| grad.clone()).collect(),
        ReadoutKind::Mean => {
            let mut g = grad.clone();
            let n = tables.len() as f64;
            g.as_mut_slice().iter_mut().for_each(|x| *x /= n);
            tables.iter().map(|_| g.clone()).collect()
        }
        ReadoutKind::Max => {
            let mut out: Vec<Table> = tables.iter().map(|_| Table::zeros(rows, width)).collect();
            for (n, &g) in grad.as_slice().iter().enumerate() {
                let mut best = 0;
                for (layer, t) in tables.iter().enumerate().skip(1) {
                    if t.as_slice()[n] > tables[best].as_slice()[n] {
                        best = layer;
                    }
                }
                out[best].as_mut_slice()[n] = g;
            }
            out
        }
        ReadoutKind::Concat => {
            let mut out: Vec<Table> = tables.iter().map(|t| Table::zeros(rows, t.width())).collect();
            for row in 0..rows {
                let g = grad.row(row);
                let mut offset = 0;
                for t in out.iter_mut() {
                    let w = t.width();
                    t.row_mut(row).copy_from_slice(&g[offset..offset + w]);
                    offset += w;
                }
            }
            out
        }
    }
}
