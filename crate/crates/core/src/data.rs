//! Dataset ingestion, k-core filtering and per-user train/validation/test
//! splitting.
//!
//! Interaction files use the plain text format common to graph
//! recommenders: one user per line, whitespace-separated integer tokens,
//! the first token is the user id and the rest are item ids.
//!
//! ```text
//! 0 5 7
//! 1 5
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InteractionSet;

/// Interactions keyed by external ids, with a dense remapping. Dense ids
/// follow ascending external id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    user_items: Vec<Vec<u32>>,
}

impl RawDataset {
    /// Builds from external `(user, item)` pairs; duplicates collapse.
    pub fn from_edges(edges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut by_user: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
        for (u, i) in edges {
            by_user.entry(u).or_default().insert(i);
        }
        Self::from_user_map(by_user)
    }

    fn from_user_map(by_user: BTreeMap<u64, BTreeSet<u64>>) -> Self {
        let item_ids: Vec<u64> = by_user
            .values()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let item_index: BTreeMap<u64, u32> = item_ids
            .iter()
            .enumerate()
            .map(|(n, &id)| (id, n as u32))
            .collect();
        let mut user_ids = Vec::with_capacity(by_user.len());
        let mut user_items = Vec::with_capacity(by_user.len());
        for (u, items) in by_user {
            user_ids.push(u);
            user_items.push(items.iter().map(|i| item_index[i]).collect());
        }
        Self {
            user_ids,
            item_ids,
            user_items,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_count() == 0
    }

    pub fn user_id(&self, dense: usize) -> u64 {
        self.user_ids[dense]
    }

    pub fn item_id(&self, dense: usize) -> u64 {
        self.item_ids[dense]
    }

    /// Sorted dense item indices of dense user `u`.
    pub fn user_items(&self, u: usize) -> &[u32] {
        &self.user_items[u]
    }

    /// Edges in external ids, ordered by user then item.
    pub fn external_edges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.user_items.iter().enumerate().flat_map(move |(u, items)| {
            items
                .iter()
                .map(move |&i| (self.user_ids[u], self.item_ids[i as usize]))
        })
    }

    pub fn to_interactions(&self) -> InteractionSet {
        InteractionSet::from_user_lists(self.num_items(), self.user_items.clone())
    }
}

/// Parses an interaction file. Blank lines are skipped; a line holding only
/// a user id declares a user without interactions.
pub fn parse_interactions(path: impl AsRef<Path>) -> Result<RawDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions_str(&text, path)
}

/// Like [`parse_interactions`], on an in-memory string. `origin` is only
/// used in error messages.
pub fn parse_interactions_str(text: &str, origin: impl AsRef<Path>) -> Result<RawDataset> {
    let mut by_user: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for (line_no, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let parse = |tok: &str| {
            tok.parse::<u64>().map_err(|_| Error::Parse {
                path: origin.as_ref().to_path_buf(),
                line: line_no + 1,
                message: format!("expected a non-negative integer id, found {tok:?}"),
            })
        };
        let user = parse(first)?;
        let items = by_user.entry(user).or_default();
        for tok in tokens {
            items.insert(parse(tok)?);
        }
    }
    Ok(RawDataset::from_user_map(by_user))
}

/// Writes a dataset in the interaction text format using external ids.
pub fn write_interactions(path: impl AsRef<Path>, d: &RawDataset) -> Result<()> {
    let mut out = String::new();
    for u in 0..d.num_users() {
        let _ = write!(out, "{}", d.user_id(u));
        for &i in d.user_items(u) {
            let _ = write!(out, " {}", d.item_id(i as usize));
        }
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

/// Keeps the largest subgraph in which every user and every item has at
/// least `k` interactions. Dense ids are reassigned over the survivors.
pub fn kcore_filter(d: &RawDataset, k: usize) -> Result<RawDataset> {
    if k == 0 {
        return Err(Error::Input("k-core threshold must be ≥ 1".into()));
    }
    let users = d.num_users();
    let items = d.num_items();
    let mut item_users: Vec<Vec<u32>> = vec![Vec::new(); items];
    for u in 0..users {
        for &i in d.user_items(u) {
            item_users[i as usize].push(u as u32);
        }
    }
    let mut user_deg: Vec<usize> = d.user_items.iter().map(Vec::len).collect();
    let mut item_deg: Vec<usize> = item_users.iter().map(Vec::len).collect();
    let mut user_gone = vec![false; users];
    let mut item_gone = vec![false; items];

    // Node ids: users 0..users, items users..users+items.
    let mut queue: VecDeque<usize> = VecDeque::new();
    for u in 0..users {
        if user_deg[u] < k {
            user_gone[u] = true;
            queue.push_back(u);
        }
    }
    for i in 0..items {
        if item_deg[i] < k {
            item_gone[i] = true;
            queue.push_back(users + i);
        }
    }
    while let Some(node) = queue.pop_front() {
        if node < users {
            for &i in d.user_items(node) {
                let i = i as usize;
                if !item_gone[i] {
                    item_deg[i] -= 1;
                    if item_deg[i] < k {
                        item_gone[i] = true;
                        queue.push_back(users + i);
                    }
                }
            }
        } else {
            for &u in &item_users[node - users] {
                let u = u as usize;
                if !user_gone[u] {
                    user_deg[u] -= 1;
                    if user_deg[u] < k {
                        user_gone[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
    }

    let survivors = d.external_edges().filter(|&(u, i)| {
        let du = d.user_ids.binary_search(&u).expect("own user id");
        let di = d.item_ids.binary_search(&i).expect("own item id");
        !user_gone[du] && !item_gone[di]
    });
    let filtered = RawDataset::from_edges(survivors);
    if filtered.is_empty() {
        return Err(Error::EmptyDataset(format!("{k}-core filtering")));
    }
    Ok(filtered)
}

/// Fractions of each user's items assigned to validation and test; the
/// training share is the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = Self {
            train,
            validation,
            test,
        };
        let all = [train, validation, test];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!(
                "split ratios {train}:{validation}:{test} must be non-negative and sum to 1"
            )));
        }
        Ok(r)
    }

    /// `(train, validation, test)` counts for a user with `n` items.
    ///
    /// Validation and test get `⌊ratio·n⌋` items, raised to one when the
    /// ratio is positive and the user has enough items (≥3 for validation,
    /// ≥2 for test). Training keeps the remainder and is never emptied.
    pub fn allocate(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
        let mut test = floor(self.test);
        let mut val = floor(self.validation);
        if self.test > 0.0 && test == 0 && n >= 2 {
            test = 1;
        }
        if self.validation > 0.0 && val == 0 && n >= 3 {
            val = 1;
        }
        while n > 0 && val + test >= n {
            if val > 0 {
                val -= 1;
            } else {
                test -= 1;
            }
        }
        (n - val - test, val, test)
    }
}

/// Train/validation/test interactions over a shared node set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    pub fn new(train: InteractionSet, validation: InteractionSet, test: InteractionSet) -> Result<Self> {
        let shape = (train.num_users(), train.num_items());
        for s in [&validation, &test] {
            if (s.num_users(), s.num_items()) != shape {
                return Err(Error::Dimension("splits disagree on user/item counts".into()));
            }
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }
}

/// Splits every user's items with a seeded shuffle according to `ratios`.
pub fn split_per_user(d: &RawDataset, ratios: SplitRatios, seed: u64) -> SplitDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = d.num_users();
    let mut train = Vec::with_capacity(users);
    let mut val = Vec::with_capacity(users);
    let mut test = Vec::with_capacity(users);
    for u in 0..users {
        let mut items = d.user_items(u).to_vec();
        items.shuffle(&mut rng);
        let (_, n_val, n_test) = ratios.allocate(items.len());
        let mut rest = items.split_off(n_test);
        let rest_train = rest.split_off(n_val);
        test.push(items);
        val.push(rest);
        train.push(rest_train);
    }
    let n = d.num_items();
    SplitDataset {
        train: InteractionSet::from_user_lists(n, train),
        validation: InteractionSet::from_user_lists(n, val),
        test: InteractionSet::from_user_lists(n, test),
    }
}

/// Summary written next to prepared split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(rename = "M")]
    pub users: usize,
    #[serde(rename = "N")]
    pub items: usize,
    #[serde(rename = "E_train")]
    pub train_edges: usize,
    #[serde(rename = "E_val")]
    pub validation_edges: usize,
    #[serde(rename = "E_test")]
    pub test_edges: usize,
    pub seed: Option<u64>,
    pub k: Option<usize>,
}

impl SplitManifest {
    pub fn describe(split: &SplitDataset, seed: Option<u64>, k: Option<usize>) -> Self {
        Self {
            users: split.num_users(),
            items: split.num_items(),
            train_edges: split.train.edge_count(),
            validation_edges: split.validation.edge_count(),
            test_edges: split.test.edge_count(),
            seed,
            k,
        }
    }
}

pub const TRAIN_FILE: &str = "train.txt";
pub const VALIDATION_FILE: &str = "val.txt";
pub const TEST_FILE: &str = "test.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn format_split(g: &InteractionSet) -> String {
    let mut out = String::new();
    for u in 0..g.num_users() {
        let items = g.user_items(u);
        if items.is_empty() {
            continue;
        }
        let _ = write!(out, "{u}");
        for i in items {
            let _ = write!(out, " {i}");
        }
        out.push('\n');
    }
    out
}

/// Writes `train.txt`, `val.txt`, `test.txt` (dense ids) and `manifest.json`.
pub fn write_split(dir: impl AsRef<Path>, split: &SplitDataset, manifest: &SplitManifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(TRAIN_FILE), format_split(&split.train).as_bytes())?;
    write_file(&dir.join(VALIDATION_FILE), format_split(&split.validation).as_bytes())?;
    write_file(&dir.join(TEST_FILE), format_split(&split.test).as_bytes())?;
    let json = serde_json::to_string_pretty(manifest)? + "\n";
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn read_dense(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_interactions_str(&text, path)?;
    Ok(raw
        .external_edges()
        .map(|(u, i)| (u as usize, i as usize))
        .collect())
}

/// Loads a prepared split directory.
///
/// With a `manifest.json` the node counts come from it. Without one, the
/// directory is treated as an imported pre-made split: `train.txt` and
/// `test.txt` are required, `val.txt` is optional, ids are taken as dense
/// and the counts are `max id + 1` across all files.
pub fn load_split(dir: impl AsRef<Path>) -> Result<(SplitDataset, SplitManifest)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let train = read_dense(&dir.join(TRAIN_FILE))?;
    let test = read_dense(&dir.join(TEST_FILE))?;
    let val_path = dir.join(VALIDATION_FILE);
    let val = if val_path.exists() {
        read_dense(&val_path)?
    } else {
        Vec::new()
    };
    let declared: Option<SplitManifest> = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let (users, items) = match &declared {
        Some(m) => (m.users, m.items),
        None => {
            let all = train.iter().chain(&test).chain(&val);
            let users = all.clone().map(|e| e.0 + 1).max().unwrap_or(0);
            let items = all.map(|e| e.1 + 1).max().unwrap_or(0);
            (users, items)
        }
    };
    let split = SplitDataset::new(
        InteractionSet::build(users, items, train)?,
        InteractionSet::build(users, items, val)?,
        InteractionSet::build(users, items, test)?,
    )?;
    let manifest = match declared {
        Some(m) => {
            let actual = SplitManifest::describe(&split, m.seed, m.k);
            if actual != m {
                return Err(Error::Input(format!(
                    "{} does not match the split files in {}",
                    MANIFEST_FILE,
                    dir.display()
                )));
            }
            m
        }
        None => SplitManifest::describe(&split, None, None),
    };
    Ok((split, manifest))
}

/// Parameters of the clustered synthetic interaction generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub interactions_per_user: usize,
    /// Probability that an interaction is drawn from the user's own cluster.
    pub affinity: f64,
}

/// Generates a clustered implicit-feedback dataset: user `u` and item `i`
/// belong to clusters `u % clusters` and `i % clusters`, and each user draws
/// distinct items from their own cluster with probability `affinity`,
/// uniformly otherwise.
pub fn synthetic_clusters(spec: &SyntheticSpec, seed: u64) -> Result<RawDataset> {
    let SyntheticSpec {
        users,
        items,
        clusters,
        interactions_per_user,
        affinity,
    } = *spec;
    if clusters == 0 || items < clusters || interactions_per_user > items / clusters {
        return Err(Error::Input(
            "synthetic spec needs clusters ≥ 1 and interactions_per_user ≤ items / clusters".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(users * interactions_per_user);
    for u in 0..users {
        let cluster = u % clusters;
        let mut chosen = BTreeSet::new();
        while chosen.len() < interactions_per_user {
            let item = if rng.gen_bool(affinity.clamp(0.0, 1.0)) {
                let slots = (items - cluster).div_ceil(clusters);
                cluster + clusters * rng.gen_range(0..slots)
            } else {
                rng.gen_range(0..items)
            };
            chosen.insert(item);
        }
        edges.extend(chosen.into_iter().map(|i| (u as u64, i as u64)));
    }
    Ok(RawDataset::from_edges(edges))
}
