//! Quaternion algebra: scalars, vectors and matrices over the four
//! components `r + i·i + j·j + k·k`.
//!
//! Vectors and matrices keep one contiguous real block per component, so
//! every term of a quaternion matrix-vector product is a plain real GEMV
//! over one of the four shared weight blocks.
//!
//! The Hamilton product `W ⊗ v` of a quaternion matrix with a quaternion
//! vector expands into the real block system
//!
//! ```text
//! | out_r |   | W_r  -W_i  -W_j  -W_k | | v_r |
//! | out_i | = | W_i   W_r  -W_k   W_j | | v_i |
//! | out_j |   | W_j   W_k   W_r  -W_i | | v_j |
//! | out_k |   | W_k  -W_j   W_i   W_r | | v_k |
//! ```
//!
//! [`HAMILTON_LAYOUT`] encodes that table once; the forward product, its
//! adjoint and the weight gradient all read from it.

use std::ops::{Add, Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Component index of the real part.
pub const R: usize = 0;
/// Component index of the `i` part.
pub const I: usize = 1;
/// Component index of the `j` part.
pub const J: usize = 2;
/// Component index of the `k` part.
pub const K: usize = 3;

/// `HAMILTON_LAYOUT[row][col] = (component, sign)`: which weight block sits at
/// block position `(row, col)` of the realized 4×4 block matrix and with what
/// sign.
pub const HAMILTON_LAYOUT: [[(usize, f64); 4]; 4] = [
    [(R, 1.0), (I, -1.0), (J, -1.0), (K, -1.0)],
    [(I, 1.0), (R, 1.0), (K, -1.0), (J, 1.0)],
    [(J, 1.0), (K, 1.0), (R, 1.0), (I, -1.0)],
    [(K, 1.0), (J, -1.0), (I, 1.0), (R, 1.0)],
];

/// A single quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub r: f64,
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl Quaternion {
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(r: f64, i: f64, j: f64, k: f64) -> Self {
        Self { r, i, j, k }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.i, self.j, self.k]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Componentwise inner product.
    pub fn dot(self, other: Quaternion) -> f64 {
        self.r * other.r + self.i * other.i + self.j * other.j + self.k * other.k
    }

    /// Hamilton product `self ⊗ other`, written out component by component.
    pub fn hamilton(self, p: Quaternion) -> Quaternion {
        let q = self;
        Quaternion {
            r: q.r * p.r - q.i * p.i - q.j * p.j - q.k * p.k,
            i: q.i * p.r + q.r * p.i - q.k * p.j + q.j * p.k,
            j: q.j * p.r + q.k * p.i + q.r * p.j - q.i * p.k,
            k: q.k * p.r - q.j * p.i + q.i * p.j + q.r * p.k,
        }
    }

    /// The real 4×4 matrix `M(q)` with `M(q) · [p_r, p_i, p_j, p_k]ᵀ = q ⊗ p`.
    pub fn left_matrix(self) -> [[f64; 4]; 4] {
        let c = self.to_array();
        let mut m = [[0.0; 4]; 4];
        for (row, layout_row) in HAMILTON_LAYOUT.iter().enumerate() {
            for (col, &(comp, sign)) in layout_row.iter().enumerate() {
                m[row][col] = sign * c[comp];
            }
        }
        m
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(self.r + rhs.r, self.i + rhs.i, self.j + rhs.j, self.k + rhs.k)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.r, -self.i, -self.j, -self.k)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        self.hamilton(rhs)
    }
}

/// A vector in `H^d`, stored as four real blocks of length `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuaternionVector {
    pub r: Vec<f64>,
    pub i: Vec<f64>,
    pub j: Vec<f64>,
    pub k: Vec<f64>,
}

impl QuaternionVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            r: vec![0.0; dim],
            i: vec![0.0; dim],
            j: vec![0.0; dim],
            k: vec![0.0; dim],
        }
    }

    pub fn from_blocks(r: Vec<f64>, i: Vec<f64>, j: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        let d = r.len();
        if d == 0 || i.len() != d || j.len() != d || k.len() != d {
            return Err(Error::Dimension(format!(
                "quaternion vector blocks must share a nonzero length, got {}/{}/{}/{}",
                r.len(),
                i.len(),
                j.len(),
                k.len()
            )));
        }
        Ok(Self { r, i, j, k })
    }

    /// Splits `[r | i | j | k]` (length `4d`) into blocks.
    pub fn from_concat(values: &[f64]) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(4) {
            return Err(Error::Dimension(format!(
                "concatenated quaternion vector length {} is not a positive multiple of 4",
                values.len()
            )));
        }
        let d = values.len() / 4;
        Ok(Self {
            r: values[..d].to_vec(),
            i: values[d..2 * d].to_vec(),
            j: values[2 * d..3 * d].to_vec(),
            k: values[3 * d..].to_vec(),
        })
    }

    pub fn to_concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.dim());
        for block in self.blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    /// Quaternion dimension `d`.
    pub fn dim(&self) -> usize {
        self.r.len()
    }

    /// Real-equivalent dimension `4d`.
    pub fn real_dim(&self) -> usize {
        4 * self.dim()
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.r, &self.i, &self.j, &self.k]
    }

    /// The `idx`-th quaternion entry.
    pub fn get(&self, idx: usize) -> Quaternion {
        Quaternion::new(self.r[idx], self.i[idx], self.j[idx], self.k[idx])
    }

    pub fn add(&self, other: &QuaternionVector) -> Result<QuaternionVector> {
        check_same_dim(self.dim(), other.dim())?;
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(QuaternionVector {
            r: sum(&self.r, &other.r),
            i: sum(&self.i, &other.i),
            j: sum(&self.j, &other.j),
            k: sum(&self.k, &other.k),
        })
    }

    /// Sum of the four block dot products.
    pub fn inner(&self, other: &QuaternionVector) -> Result<f64> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(self
            .blocks()
            .iter()
            .zip(other.blocks())
            .map(|(a, b)| dot(a, b))
            .sum())
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "quaternion dimensions differ: {a} vs {b}"
        )));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A matrix in `H^{d×d}`: four real row-major `d×d` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuaternionMatrix {
    dim: usize,
    blocks: [Vec<f64>; 4],
}

impl QuaternionMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            blocks: std::array::from_fn(|_| vec![0.0; dim * dim]),
        }
    }

    /// The quaternion identity: `W_r = I`, other blocks zero.
    pub fn identity(dim: usize) -> Self {
        let mut w = Self::zeros(dim);
        for d in 0..dim {
            w.blocks[R][d * dim + d] = 1.0;
        }
        w
    }

    pub fn from_blocks(dim: usize, r: Vec<f64>, i: Vec<f64>, j: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        let blocks = [r, i, j, k];
        if dim == 0 || blocks.iter().any(|b| b.len() != dim * dim) {
            return Err(Error::Dimension(format!(
                "quaternion matrix blocks must each hold {dim}×{dim} entries"
            )));
        }
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, component: usize) -> &[f64] {
        &self.blocks[component]
    }

    pub fn block_mut(&mut self, component: usize) -> &mut [f64] {
        &mut self.blocks[component]
    }

    pub fn blocks(&self) -> &[Vec<f64>; 4] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>; 4] {
        &mut self.blocks
    }

    /// Number of free real parameters, `4d²`.
    pub fn parameter_count(&self) -> usize {
        4 * self.dim * self.dim
    }

    /// Hamilton product `W ⊗ v`.
    pub fn matvec(&self, v: &QuaternionVector) -> Result<QuaternionVector> {
        if v.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "quaternion matrix of dim {} applied to vector of dim {}",
                self.dim,
                v.dim()
            )));
        }
        let mut out = vec![0.0; 4 * self.dim];
        self.apply(&v.to_concat(), &mut out);
        QuaternionVector::from_concat(&out)
    }

    /// `out = W ⊗ x` on concatenated `[r | i | j | k]` rows of length `4d`.
    ///
    /// Panics if either slice is not `4d` long.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        assert_eq!(x.len(), 4 * d);
        assert_eq!(out.len(), 4 * d);
        out.fill(0.0);
        for (row_block, layout_row) in HAMILTON_LAYOUT.iter().enumerate() {
            let out_block = &mut out[row_block * d..(row_block + 1) * d];
            for (col_block, &(comp, sign)) in layout_row.iter().enumerate() {
                let w = &self.blocks[comp];
                let xb = &x[col_block * d..(col_block + 1) * d];
                for (row, o) in out_block.iter_mut().enumerate() {
                    *o += sign * dot(&w[row * d..(row + 1) * d], xb);
                }
            }
        }
    }

    /// `out = Bᵀ g` where `B` is the realized block matrix: the adjoint of
    /// [`apply`](Self::apply) with respect to its input.
    pub fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        let d = self.dim;
        assert_eq!(g.len(), 4 * d);
        assert_eq!(out.len(), 4 * d);
        out.fill(0.0);
        for (row_block, layout_row) in HAMILTON_LAYOUT.iter().enumerate() {
            let gb = &g[row_block * d..(row_block + 1) * d];
            for (col_block, &(comp, sign)) in layout_row.iter().enumerate() {
                let w = &self.blocks[comp];
                let out_block = &mut out[col_block * d..(col_block + 1) * d];
                for (row, &gr) in gb.iter().enumerate() {
                    if gr == 0.0 {
                        continue;
                    }
                    let s = sign * gr;
                    for (o, &wv) in out_block.iter_mut().zip(&w[row * d..(row + 1) * d]) {
                        *o += s * wv;
                    }
                }
            }
        }
    }

    /// Accumulates `∂⟨g, W ⊗ x⟩/∂W` into `grad`. Each weight block appears
    /// four times in the realized matrix, so each block collects four signed
    /// outer products.
    pub fn accumulate_outer(grad: &mut QuaternionMatrix, g: &[f64], x: &[f64]) {
        let d = grad.dim;
        for (row_block, layout_row) in HAMILTON_LAYOUT.iter().enumerate() {
            let gb = &g[row_block * d..(row_block + 1) * d];
            for (col_block, &(comp, sign)) in layout_row.iter().enumerate() {
                let xb = &x[col_block * d..(col_block + 1) * d];
                let w = &mut grad.blocks[comp];
                for (row, &gr) in gb.iter().enumerate() {
                    if gr == 0.0 {
                        continue;
                    }
                    let s = sign * gr;
                    for (wv, &xv) in w[row * d..(row + 1) * d].iter_mut().zip(xb) {
                        *wv += s * xv;
                    }
                }
            }
        }
    }

    /// Dense `4d×4d` row-major real matrix equal to this transform. Intended
    /// for verification; the hot path never builds it.
    pub fn realize_block_matrix(&self) -> Vec<f64> {
        let d = self.dim;
        let n = 4 * d;
        let mut m = vec![0.0; n * n];
        for (row_block, layout_row) in HAMILTON_LAYOUT.iter().enumerate() {
            for (col_block, &(comp, sign)) in layout_row.iter().enumerate() {
                let w = &self.blocks[comp];
                for row in 0..d {
                    for col in 0..d {
                        m[(row_block * d + row) * n + col_block * d + col] = sign * w[row * d + col];
                    }
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        )
    }

    #[test]
    fn addition_examples() {
        let a = Quaternion::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(a + Quaternion::default(), a);
        assert_eq!(Quaternion::ONE + Quaternion::I, Quaternion::new(1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn vector_add_matches_blockwise_addition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = || (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let a = QuaternionVector::from_blocks(block(), block(), block(), block()).unwrap();
        let b = QuaternionVector::from_blocks(block(), block(), block(), block()).unwrap();
        let sum = a.add(&b).unwrap();
        let expected: Vec<f64> = a.to_concat().iter().zip(b.to_concat()).map(|(x, y)| x + y).collect();
        assert_eq!(sum.to_concat(), expected);
    }

    #[test]
    fn inner_product_examples() {
        let mut e1 = QuaternionVector::zeros(3);
        e1.r[0] = 1.0;
        assert_eq!(e1.inner(&e1).unwrap(), 1.0);
        assert_eq!(e1.inner(&QuaternionVector::zeros(3)).unwrap(), 0.0);
        assert!(e1.inner(&QuaternionVector::zeros(2)).is_err());
    }

    #[test]
    fn basis_table() {
        let (one, i, j, k) = (Quaternion::ONE, Quaternion::I, Quaternion::J, Quaternion::K);
        assert_eq!(i * j, k);
        assert_eq!(j * k, i);
        assert_eq!(k * i, j);
        for unit in [i, j, k] {
            assert_eq!(unit * unit, -one);
        }
        assert_eq!(i * j * k, -one);
        assert_eq!(j * i, -k);
    }

    #[test]
    fn identity_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            assert_eq!(Quaternion::ONE * q, q);
            assert_eq!(q * Quaternion::ONE, q);
        }
    }

    #[test]
    fn left_matrix_of_one_is_identity() {
        let m = Quaternion::ONE.left_matrix();
        for (r, row) in m.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(v, if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn block_at_i_row_r_col_is_w_i() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 3;
        let mut block = || (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let w = QuaternionMatrix::from_blocks(d, block(), block(), block(), block()).unwrap();
        let m = w.realize_block_matrix();
        let n = 4 * d;
        for row in 0..d {
            for col in 0..d {
                assert_eq!(m[(d + row) * n + col], w.block(I)[row * d + col]);
            }
        }
    }

    #[test]
    fn identity_transform_and_zero_input() {
        let w = QuaternionMatrix::identity(2);
        assert_eq!(
            w.realize_block_matrix(),
            (0..64).map(|n| if n % 9 == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>()
        );
        let v = QuaternionVector::from_concat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(w.matvec(&v).unwrap(), v);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = || (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let w = QuaternionMatrix::from_blocks(2, block(), block(), block(), block()).unwrap();
        assert_eq!(w.matvec(&QuaternionVector::zeros(2)).unwrap(), QuaternionVector::zeros(2));
    }

    #[test]
    fn realized_matrix_holds_each_block_four_times() {
        let d = 2;
        let w = QuaternionMatrix::from_blocks(
            d,
            vec![1.0; 4],
            vec![2.0; 4],
            vec![3.0; 4],
            vec![4.0; 4],
        )
        .unwrap();
        let m = w.realize_block_matrix();
        for value in 1..=4 {
            let count = m.iter().filter(|x| x.abs() == value as f64).count();
            assert_eq!(count, 4 * d * d);
        }
        assert_eq!(w.parameter_count(), 16);
        assert_eq!(QuaternionMatrix::zeros(16).parameter_count(), 1024);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let w = QuaternionMatrix::identity(3);
        assert!(matches!(w.matvec(&QuaternionVector::zeros(2)), Err(Error::Dimension(_))));
        assert!(QuaternionVector::from_concat(&[1.0, 2.0, 3.0]).is_err());
        assert!(QuaternionMatrix::from_blocks(2, vec![0.0; 4], vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let mut rand_vec = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let w = QuaternionMatrix::from_blocks(d, rand_vec(9), rand_vec(9), rand_vec(9), rand_vec(9)).unwrap();
        let x = rand_vec(12);
        let g = rand_vec(12);
        let mut wx = vec![0.0; 12];
        let mut wtg = vec![0.0; 12];
        w.apply(&x, &mut wx);
        w.apply_transpose(&g, &mut wtg);
        assert!((dot(&g, &wx) - dot(&wtg, &x)).abs() < 1e-12);
    }
}
