//! Full-ranking top-K evaluation: Recall@K and NDCG@K over every item the
//! user has not already been credited with.

use std::cmp::Ordering;
use std::fs::OpenOptions;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::graph::{InteractionSet, NormalizedAdjacency};
use crate::model::{forward, ModelConfig, ModelParams, Mode};
use crate::table::Table;

/// A user's top-K items, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

fn excluded(item: u32, exclusions: &[&[u32]]) -> bool {
    exclusions.iter().any(|s| s.binary_search(&item).is_ok())
}

fn by_score(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top-`k` items for `user` by inner-product score, skipping any item in
/// one of the sorted `exclusions`. Ties go to the lower item index. Fewer
/// than `k` items come back when fewer are available.
pub fn rank_topk(
    final_table: &Table,
    users: usize,
    user: usize,
    k: usize,
    exclusions: &[&[u32]],
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Input("K must be ≥ 1".into()));
    }
    if user >= users || users > final_table.rows() {
        return Err(Error::Input(format!(
            "user {user} out of range for a table of {} rows with {users} users",
            final_table.rows()
        )));
    }
    let items = final_table.rows() - users;
    let mut scored: Vec<(f64, u32)> = (0..items as u32)
        .filter(|&i| !excluded(i, exclusions))
        .map(|i| (final_table.row_dot(user, users + i as usize), i))
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_score);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_score);
    let (scores, items) = scored.into_iter().unzip();
    Ok(RankedList { user, items, scores })
}

/// `|T ∩ R_K| / |T|`, or `None` for an empty test set.
pub fn recall_at_k(ranked: &RankedList, test: &[u32]) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let hits = ranked.items.iter().filter(|i| test.contains(i)).count();
    Some(hits as f64 / test.len() as f64)
}

/// NDCG over the first `k` ranked items with binary relevance and the ideal
/// DCG taken over `min(k, |T|)` positions. `None` for an empty test set.
pub fn ndcg_at_k(ranked: &RankedList, test: &[u32], k: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranked
        .items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(pos, _)| discount(pos))
        .sum();
    let idcg: f64 = (0..k.min(test.len())).map(discount).sum();
    Some(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Number of users averaged over.
    pub users: usize,
    pub per_user: Vec<UserMetrics>,
}

/// Which held-out set to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    Validation,
    Test,
}

impl EvalTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalTarget::Validation => "val",
            EvalTarget::Test => "test",
        }
    }
}

/// Scores `targets` on a final table, one report per entry of `ks`. Items
/// in any of `exclusions` are never ranked for the user. Users without
/// target items are skipped.
pub fn evaluate_table(
    final_table: &Table,
    users: usize,
    targets: &InteractionSet,
    exclusions: &[&InteractionSet],
    ks: &[usize],
) -> Result<Vec<MetricReport>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Input("K list must be nonempty with every K ≥ 1".into()));
    }
    if targets.num_users() != users || targets.num_nodes() != final_table.rows() {
        return Err(Error::Dimension(format!(
            "target graph has {} nodes, final table has {} rows",
            targets.num_nodes(),
            final_table.rows()
        )));
    }
    let max_k = *ks.iter().max().expect("nonempty");
    let per_user: Vec<Vec<UserMetrics>> = (0..users)
        .into_par_iter()
        .filter(|&u| !targets.user_items(u).is_empty())
        .map(|u| {
            let excl: Vec<&[u32]> = exclusions.iter().map(|g| g.user_items(u)).collect();
            let ranked = rank_topk(final_table, users, u, max_k, &excl)?;
            let test = targets.user_items(u);
            Ok(ks
                .iter()
                .map(|&k| {
                    let prefix = RankedList {
                        user: u,
                        items: ranked.items.iter().take(k).copied().collect(),
                        scores: ranked.scores.iter().take(k).copied().collect(),
                    };
                    UserMetrics {
                        user: u,
                        recall: recall_at_k(&prefix, test).expect("nonempty"),
                        ndcg: ndcg_at_k(&prefix, test, k).expect("nonempty"),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(n, &k)| {
            let rows: Vec<UserMetrics> = per_user.iter().map(|m| m[n]).collect();
            let count = rows.len();
            let mean = |f: fn(&UserMetrics) -> f64| {
                if count == 0 {
                    0.0
                } else {
                    rows.iter().map(f).sum::<f64>() / count as f64
                }
            };
            MetricReport {
                k,
                recall: mean(|m| m.recall),
                ndcg: mean(|m| m.ndcg),
                users: count,
                per_user: rows,
            }
        })
        .collect())
}

/// Eval-mode forward followed by [`evaluate_table`] against the split's
/// validation or test items. Training items are always excluded; for the
/// test target validation items are excluded as well.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    split: &SplitDataset,
    target: EvalTarget,
    ks: &[usize],
) -> Result<Vec<MetricReport>> {
    let (final_table, _) = forward(cfg, params, adj, Mode::Eval, 0)?;
    match target {
        EvalTarget::Validation => evaluate_table(&final_table, params.users, &split.validation, &[&split.train], ks),
        EvalTarget::Test => evaluate_table(
            &final_table,
            params.users,
            &split.test,
            &[&split.train, &split.validation],
            ks,
        ),
    }
}

/// Writes reports as pretty JSON.
pub fn write_reports_json(path: impl AsRef<Path>, reports: &[MetricReport]) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(reports)? + "\n";
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Appends `epoch,split,K,recall,ndcg` rows, writing the header when the
/// file is new or empty.
pub fn append_reports_csv(
    path: impl AsRef<Path>,
    epoch: usize,
    split: &str,
    reports: &[MetricReport],
) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(["epoch", "split", "K", "recall", "ndcg"])?;
    }
    for r in reports {
        w.write_record([
            epoch.to_string(),
            split.to_string(),
            r.k.to_string(),
            r.recall.to_string(),
            r.ndcg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn list(items: &[u32]) -> RankedList {
        RankedList {
            user: 0,
            items: items.to_vec(),
            scores: (0..items.len()).map(|n| -(n as f64)).collect(),
        }
    }

    /// One user with score `s[i]` for item `i`: user row is `[1]`, item rows `[s_i]`.
    fn score_table(scores: &[f64]) -> Table {
        let mut data = vec![1.0];
        data.extend_from_slice(scores);
        Table::from_vec(scores.len() + 1, 1, data).unwrap()
    }

    #[test]
    fn picks_the_best_item() {
        let r = rank_topk(&score_table(&[0.9, 0.1]), 1, 0, 1, &[]).unwrap();
        assert_eq!(r.items, vec![0]);
        assert!(rank_topk(&score_table(&[0.9]), 1, 0, 0, &[]).is_err());
    }

    #[test]
    fn exclusions_and_short_lists() {
        let t = score_table(&[0.9, 0.5, 0.1]);
        let r = rank_topk(&t, 1, 0, 5, &[&[0]]).unwrap();
        assert_eq!(r.items, vec![1, 2]);
        let r = rank_topk(&t, 1, 0, 5, &[&[0], &[2]]).unwrap();
        assert_eq!(r.items, vec![1]);
    }

    #[test]
    fn ties_break_by_index() {
        let r = rank_topk(&score_table(&[0.5, 0.7, 0.5, 0.7]), 1, 0, 3, &[]).unwrap();
        assert_eq!(r.items, vec![1, 3, 0]);
    }

    #[test]
    fn matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = rank_topk(&score_table(&scores), 1, 0, 5, &[]).unwrap();
            let mut order: Vec<u32> = (0..30).collect();
            order.sort_by(|&a, &b| scores[b as usize].partial_cmp(&scores[a as usize]).unwrap());
            assert_eq!(r.items, order[..5].to_vec());
            assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&list(&[0, 1, 2]), &[0, 3]), Some(0.5));
        assert_eq!(recall_at_k(&list(&[0, 1, 2]), &[2, 0]), Some(1.0));
        assert_eq!(recall_at_k(&list(&[0, 1, 2]), &[4]), Some(0.0));
        assert_eq!(recall_at_k(&list(&[0]), &[]), None);
    }

    #[test]
    fn ndcg_examples() {
        let v = ndcg_at_k(&list(&[0, 1]), &[1], 2).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&list(&[0, 1]), &[0, 1, 2], 2), Some(1.0));
        assert_eq!(ndcg_at_k(&list(&[0, 1]), &[5], 2), Some(0.0));
        assert_eq!(ndcg_at_k(&list(&[0, 1]), &[], 2), None);
    }

    #[test]
    fn monotone_transform_keeps_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        let a = rank_topk(&score_table(&scores), 1, 0, 10, &[]).unwrap();
        let b = rank_topk(&score_table(&warped), 1, 0, 10, &[]).unwrap();
        assert_eq!(a.items, b.items);
    }

    #[test]
    fn metrics_grow_with_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let users = 6;
        let items = 25;
        let data: Vec<f64> = (0..(users + items) * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let table = Table::from_vec(users + items, 3, data).unwrap();
        let edges: Vec<(usize, usize)> = (0..users)
            .flat_map(|u| (0..4).map(move |n| (u, (u * 7 + n * 5) % items)))
            .collect();
        let target = InteractionSet::build(users, items, edges).unwrap();
        let reports = evaluate_table(&table, users, &target, &[], &[1, 3, 5, 10, 25]).unwrap();
        for w in reports.windows(2) {
            assert!(w[0].recall <= w[1].recall + 1e-15);
            // The ideal DCG stops growing once K reaches |T| = 4.
            if w[0].k >= 4 {
                for (a, b) in w[0].per_user.iter().zip(&w[1].per_user) {
                    assert!(a.ndcg <= b.ndcg + 1e-12);
                }
            }
        }
        assert_eq!(reports.last().unwrap().recall, 1.0);
    }

    #[test]
    fn csv_header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let r = MetricReport {
            k: 20,
            recall: 0.5,
            ndcg: 0.25,
            users: 1,
            per_user: Vec::new(),
        };
        append_reports_csv(&path, 1, "val", std::slice::from_ref(&r)).unwrap();
        append_reports_csv(&path, 2, "test", &[r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,split,K,recall,ndcg\n1,val,20,0.5,0.25\n2,test,20,0.5,0.25\n");
    }
}
