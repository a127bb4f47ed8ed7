//! BPR training: triple sampling, the loss, exact gradients, Adam and the
//! epoch loop.

mod adam;
mod backward;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use backward::{backward, bpr_loss, regularization, triple_scores, LossBreakdown};

use clap::ValueEnum;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionSet, NormalizedAdjacency};
use crate::model::{forward, ModelConfig, ModelParams, Mode};
use crate::seed::SeedSet;

/// One BPR sample: user, consumed item, unconsumed item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Which parameters the L2 penalty covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RegScope {
    /// Layer-0 rows of the batch's users and items, averaged over the batch.
    Ego,
    /// Every trainable parameter.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub reg: f64,
    pub reg_scope: RegScope,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 2048,
            reg: 1e-4,
            reg_scope: RegScope::Ego,
            epochs: 400,
            seed: 2023,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and ≥ 0".into()));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::Config("regularization weight must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// `−ln σ(x)`, evaluated without overflow for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draws BPR triples from a training graph. Negatives are uniform over the
/// items the user has not consumed, by rejection.
#[derive(Debug, Clone)]
pub struct NegativeSampler<'a> {
    graph: &'a InteractionSet,
    edges: Vec<(u32, u32)>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(graph: &'a InteractionSet) -> Self {
        let edges = graph.edges().map(|(u, i)| (u as u32, i as u32)).collect();
        Self { graph, edges }
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// A uniform unconsumed item for `user`, or `None` if the user has
    /// consumed every item.
    pub fn negative_for(&self, user: usize, rng: &mut impl Rng) -> Option<u32> {
        let items = self.graph.num_items();
        if self.graph.user_items(user).len() >= items {
            return None;
        }
        loop {
            let j = rng.gen_range(0..items);
            if !self.graph.contains(user, j) {
                return Some(j as u32);
            }
        }
    }

    /// Pairs each positive edge with a fresh negative. Users without any
    /// unconsumed item are skipped.
    pub fn with_negatives(&self, positives: &[(u32, u32)], rng: &mut impl Rng) -> Vec<Triple> {
        positives
            .iter()
            .filter_map(|&(user, pos)| {
                self.negative_for(user as usize, rng)
                    .map(|neg| Triple { user, pos, neg })
            })
            .collect()
    }

    /// `size` triples with positives drawn uniformly (with replacement) from
    /// the training edges. A positive whose user has consumed everything is
    /// redrawn.
    pub fn sample_batch(&self, size: usize, rng: &mut impl Rng) -> Result<Vec<Triple>> {
        if self.edges.is_empty() {
            return Err(Error::Sampling("training graph has no edges".into()));
        }
        let mut out = Vec::with_capacity(size);
        let mut budget = 1000 + 100 * size;
        while out.len() < size {
            if budget == 0 {
                return Err(Error::Sampling(
                    "could not find users with unconsumed items to pair".into(),
                ));
            }
            budget -= 1;
            let (user, pos) = self.edges[rng.gen_range(0..self.edges.len())];
            if let Some(neg) = self.negative_for(user as usize, rng) {
                out.push(Triple { user, pos, neg });
            }
        }
        Ok(out)
    }
}

/// Loss and gradients of one batch: a train-mode forward with dropout masks
/// from `dropout_seed`, then [`backward`].
pub fn loss_and_gradients(
    model: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    batch: &[Triple],
    reg: f64,
    scope: RegScope,
    dropout_seed: u64,
) -> Result<(LossBreakdown, ModelParams)> {
    let (final_table, trace) = forward(model, params, adj, Mode::Train, dropout_seed)?;
    let trace = trace.expect("train mode records a trace");
    let (pos, neg) = triple_scores(&final_table, params.users, batch);
    let loss = bpr_loss(&pos, &neg, params, batch, reg, scope)?;
    let grads = backward(&trace, batch, model, params, adj, reg, scope)?;
    Ok((loss, grads))
}

/// Loss of one batch without gradients (train-mode forward, so the same
/// dropout seed reproduces the same masks).
pub fn batch_loss(
    model: &ModelConfig,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    batch: &[Triple],
    reg: f64,
    scope: RegScope,
    dropout_seed: u64,
) -> Result<LossBreakdown> {
    let (final_table, _) = forward(model, params, adj, Mode::Train, dropout_seed)?;
    let (pos, neg) = triple_scores(&final_table, params.users, batch);
    bpr_loss(&pos, &neg, params, batch, reg, scope)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the batch losses.
    pub loss: f64,
    pub batches: usize,
}

/// Owns the optimizer state and random streams of one training run.
///
/// An epoch is one shuffled pass over the training edges, cut into batches
/// of `batch_size`, each positive paired with a freshly sampled negative.
pub struct Trainer<'a> {
    model: &'a ModelConfig,
    config: &'a TrainConfig,
    adj: NormalizedAdjacency,
    sampler: NegativeSampler<'a>,
    state: AdamState,
    sampling_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a ModelConfig,
        config: &'a TrainConfig,
        graph: &'a InteractionSet,
        params: &ModelParams,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let seeds = SeedSet::from_master(config.seed);
        Ok(Self {
            model,
            config,
            adj: NormalizedAdjacency::build(graph),
            sampler: NegativeSampler::new(graph),
            state: AdamState::new(params),
            sampling_rng: ChaCha8Rng::seed_from_u64(seeds.sampling),
            dropout_rng: ChaCha8Rng::seed_from_u64(seeds.dropout),
            epoch: 0,
        })
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adj
    }

    pub fn optimizer_state(&self) -> &AdamState {
        &self.state
    }

    pub fn train_epoch(&mut self, params: &mut ModelParams) -> Result<EpochStats> {
        let mut order = self.sampler.edges().to_vec();
        order.shuffle(&mut self.sampling_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = self.sampler.with_negatives(chunk, &mut self.sampling_rng);
            if batch.is_empty() {
                continue;
            }
            let dropout_seed = self.dropout_rng.gen::<u64>();
            let (loss, grads) = loss_and_gradients(
                self.model,
                params,
                &self.adj,
                &batch,
                self.config.reg,
                self.config.reg_scope,
                dropout_seed,
            )?;
            adam_step(params, &grads, &mut self.state, self.config.learning_rate)?;
            total += loss.total();
            batches += 1;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: if batches == 0 { 0.0 } else { total / batches as f64 },
            batches,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Variant};

    #[test]
    fn stable_log_sigmoid() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(neg_log_sigmoid(800.0) >= 0.0 && neg_log_sigmoid(800.0) < 1e-300);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn forced_negative() {
        let g = InteractionSet::build(1, 2, [(0, 0)]).unwrap();
        let sampler = NegativeSampler::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in sampler.sample_batch(50, &mut rng).unwrap() {
            assert_eq!(t.neg, 1);
        }
    }

    #[test]
    fn saturated_users_are_skipped() {
        let g = InteractionSet::build(2, 2, [(0, 0), (0, 1), (1, 0)]).unwrap();
        let sampler = NegativeSampler::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sampler.sample_batch(20, &mut rng).unwrap();
        assert!(batch.iter().all(|t| t.user == 1 && t.neg == 1));
        let all = InteractionSet::build(1, 1, [(0, 0)]).unwrap();
        assert!(matches!(
            NegativeSampler::new(&all).sample_batch(1, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn equal_scores_cost_ln2() {
        let p = ModelParams::new(1, 1, crate::table::Table::zeros(2, 1), Vec::new()).unwrap();
        let loss = bpr_loss(&[0.3, -1.0], &[0.3, -1.0], &p, &[], 0.0, RegScope::Ego).unwrap();
        assert!((loss.total() - std::f64::consts::LN_2).abs() < 1e-15);
        let far = bpr_loss(&[1e6], &[0.0], &p, &[], 0.0, RegScope::Ego).unwrap();
        assert!(far.total() >= 0.0 && far.total() < 1e-12);
        assert!(bpr_loss(&[1.0], &[], &p, &[], 0.0, RegScope::Ego).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let g = InteractionSet::build(3, 3, [(0, 0), (1, 1), (2, 2), (0, 1)]).unwrap();
        let model = ModelConfig {
            quaternion_dim: 2,
            dropout: 0.2,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut params = init_params(&model, 3, 3, 0).unwrap();
        let before = params.clone();
        let mut trainer = Trainer::new(&model, &train, &g, &params).unwrap();
        let stats = trainer.train_epoch(&mut params).unwrap();
        assert_eq!(stats.batches, 2);
        assert!(stats.loss > 0.0);
        assert_eq!(params.slices(), before.slices());
    }

    #[test]
    fn stale_trace_is_rejected() {
        let g = InteractionSet::build(2, 2, [(0, 0), (1, 1)]).unwrap();
        let adj = NormalizedAdjacency::build(&g);
        let model = ModelConfig {
            variant: Variant::Qgcn,
            quaternion_dim: 1,
            ..ModelConfig::default()
        };
        let mut params = init_params(&model, 2, 2, 0).unwrap();
        let (_, trace) = forward(&model, &params, &adj, Mode::Train, 0).unwrap();
        params.slices_mut()[0][0] += 1.0;
        let batch = [Triple { user: 0, pos: 0, neg: 1 }];
        let err = backward(&trace.unwrap(), &batch, &model, &params, &adj, 0.0, RegScope::Ego);
        assert!(matches!(err, Err(Error::StaleTrace(_))));
    }
}
