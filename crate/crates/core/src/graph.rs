//! Bipartite user-item interaction graphs, the symmetric-normalized
//! adjacency used for propagation, and the edge perturbations used by the
//! robustness experiments.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::table::Table;

/// Observed user-item interactions with both adjacency views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    users: usize,
    items: usize,
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
    edges: usize,
}

impl InteractionSet {
    /// Builds a deduplicated interaction set over `users × items`.
    pub fn build(
        users: usize,
        items: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if users > u32::MAX as usize || items > u32::MAX as usize {
            return Err(Error::Input("node counts exceed u32 range".into()));
        }
        let mut user_items = vec![Vec::new(); users];
        for (u, i) in edges {
            if u >= users || i >= items {
                return Err(Error::Input(format!(
                    "edge ({u}, {i}) out of range for {users} users × {items} items"
                )));
            }
            user_items[u].push(i as u32);
        }
        Ok(Self::from_user_lists(items, user_items))
    }

    /// Builds from per-user item lists; ids must already be in range.
    pub(crate) fn from_user_lists(items: usize, mut user_items: Vec<Vec<u32>>) -> Self {
        let mut item_users = vec![Vec::new(); items];
        let mut edges = 0;
        for (u, list) in user_items.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            edges += list.len();
            for &i in list.iter() {
                item_users[i as usize].push(u as u32);
            }
        }
        Self {
            users: user_items.len(),
            items,
            user_items,
            item_users,
            edges,
        }
    }

    pub fn empty(users: usize, items: usize) -> Self {
        Self::from_user_lists(items, vec![Vec::new(); users])
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn num_nodes(&self) -> usize {
        self.users + self.items
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    /// Sorted item list of user `u`.
    pub fn user_items(&self, u: usize) -> &[u32] {
        &self.user_items[u]
    }

    /// Sorted user list of item `i`.
    pub fn item_users(&self, i: usize) -> &[u32] {
        &self.item_users[i]
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        u < self.users && self.user_items[u].binary_search(&(i as u32)).is_ok()
    }

    /// All edges in (user, item) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i as usize)))
    }

    /// Union of two interaction sets over the same node counts.
    pub fn union(&self, other: &InteractionSet) -> Result<InteractionSet> {
        self.check_same_nodes(other)?;
        InteractionSet::build(self.users, self.items, self.edges().chain(other.edges()))
    }

    fn check_same_nodes(&self, other: &InteractionSet) -> Result<()> {
        if self.users != other.users || self.items != other.items {
            return Err(Error::Dimension(format!(
                "interaction sets over {}×{} and {}×{}",
                self.users, self.items, other.users, other.items
            )));
        }
        Ok(())
    }
}

/// `D^{-1/2} A D^{-1/2}` for `A = [[0, R], [Rᵀ, 0]]`, in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    users: usize,
    items: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn build(g: &InteractionSet) -> Self {
        let users = g.num_users();
        let n = g.num_nodes();
        let degree = |node: usize| {
            if node < users {
                g.user_items(node).len()
            } else {
                g.item_users(node - users).len()
            }
        };
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(2 * g.edge_count());
        let mut values = Vec::with_capacity(2 * g.edge_count());
        row_offsets.push(0);
        for node in 0..n {
            let deg = degree(node) as f64;
            if node < users {
                for &i in g.user_items(node) {
                    let col = users + i as usize;
                    col_indices.push(col as u32);
                    values.push(1.0 / (deg * degree(col) as f64).sqrt());
                }
            } else {
                for &u in g.item_users(node - users) {
                    col_indices.push(u);
                    values.push(1.0 / (deg * degree(u as usize) as f64).sqrt());
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            users,
            items: g.num_items(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.users + self.items
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[row]..self.row_offsets[row + 1];
        self.col_indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// Stored value at `(row, col)`, zero if absent.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let span = self.row_offsets[row]..self.row_offsets[row + 1];
        match self.col_indices[span.clone()].binary_search(&(col as u32)) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    /// `L · E`, applied to every column (and hence to each quaternion block)
    /// of the table.
    pub fn spmv(&self, table: &Table) -> Result<Table> {
        if table.rows() != self.num_nodes() {
            return Err(Error::Dimension(format!(
                "adjacency over {} nodes applied to table with {} rows",
                self.num_nodes(),
                table.rows()
            )));
        }
        let width = table.width();
        let mut out = Table::zeros(table.rows(), width);
        if width == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(width)
            .with_min_len(64)
            .enumerate()
            .for_each(|(row, out_row)| {
                for (col, value) in self.row(row) {
                    for (o, &x) in out_row.iter_mut().zip(table.row(col)) {
                        *o += value * x;
                    }
                }
            });
        Ok(out)
    }
}

/// `⌊ratio · edges⌋`, with a small guard so ratios like 0.29 on 100 edges
/// don't lose an edge to binary rounding.
pub fn perturbation_count(ratio: f64, edges: usize) -> usize {
    (ratio * edges as f64 + 1e-9).floor() as usize
}

/// Adds `⌊ratio·E⌋` previously unobserved edges, sampled uniformly without
/// replacement.
pub fn inject_edges(g: &InteractionSet, ratio: f64, seed: u64) -> Result<InteractionSet> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::Input(format!("injection ratio {ratio} must be finite and ≥ 0")));
    }
    let count = perturbation_count(ratio, g.edge_count());
    let (users, items) = (g.num_users(), g.num_items());
    let available = users * items - g.edge_count();
    if count > available {
        return Err(Error::Input(format!(
            "cannot inject {count} edges: only {available} unobserved pairs"
        )));
    }
    if count == 0 {
        return Ok(g.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut added: Vec<(usize, usize)> = Vec::with_capacity(count);
    if 2 * count <= available {
        let mut seen = HashSet::with_capacity(count);
        while added.len() < count {
            let u = rng.gen_range(0..users);
            let i = rng.gen_range(0..items);
            if !g.contains(u, i) && seen.insert((u, i)) {
                added.push((u, i));
            }
        }
    } else {
        // Dense regime: enumerate the complement and sample from it.
        let unobserved: Vec<(usize, usize)> = (0..users)
            .flat_map(|u| (0..items).filter(move |&i| !g.contains(u, i)).map(move |i| (u, i)))
            .collect();
        added.extend(index::sample(&mut rng, unobserved.len(), count).iter().map(|n| unobserved[n]));
    }
    InteractionSet::build(users, items, g.edges().chain(added))
}

/// Removes `⌊ratio·E⌋` existing edges, sampled uniformly without
/// replacement.
pub fn discard_edges(g: &InteractionSet, ratio: f64, seed: u64) -> Result<InteractionSet> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Input(format!("discard ratio {ratio} must lie in [0, 1)")));
    }
    let count = perturbation_count(ratio, g.edge_count());
    if count == 0 {
        return Ok(g.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop = vec![false; g.edge_count()];
    for n in index::sample(&mut rng, g.edge_count(), count) {
        drop[n] = true;
    }
    let kept = g.edges().zip(drop).filter(|(_, d)| !d).map(|(e, _)| e);
    InteractionSet::build(g.num_users(), g.num_items(), kept)
}
