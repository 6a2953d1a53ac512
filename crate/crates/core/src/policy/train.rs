use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cvae::{cvae_loss, BatchRow, DecodeFrame};
use super::rollout::Experience;
use super::{Policy, PolicyError};
use crate::nn::{clip_global_norm, Scalar, Tensor};
use crate::seed;

/// What rewards are compared against when weighting a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Raw total reward.
    None,
    /// Total reward minus the reward of leaving the same scene untouched.
    NoOp,
}

/// Bounded FIFO of experiences; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::with_capacity(capacity.max(1)) }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}

/// `softmax(v / temperature)`, computed with the maximum subtracted.
pub fn softmax_weights(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| libm::exp((v - max) / temperature)).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub updates: usize,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub mean_advantage: f64,
    pub max_weight: f64,
    pub grad_norm: f64,
}

impl Policy {
    fn batch_score(&self, e: &Experience) -> f64 {
        match self.config.baseline {
            Baseline::None => e.reward,
            Baseline::NoOp => e.reward - e.noop_reward,
        }
    }

    /// Runs `updates_per_iteration` weighted CVAE steps, each on a fresh
    /// batch drawn without replacement from `buffer`. On any non-finite loss
    /// the policy is restored to its state before the call.
    pub fn train_iteration(&mut self, buffer: &ReplayBuffer, seed_value: u64) -> Result<TrainStats, PolicyError> {
        let batch = self.config.batch_size;
        if buffer.len() < batch {
            return Err(PolicyError::BufferTooSmall { have: buffer.len(), need: batch });
        }
        let snapshot = self.clone();
        let result = self.train_updates(buffer, seed_value);
        if result.is_err() {
            *self = snapshot;
        }
        result
    }

    fn train_updates(&mut self, buffer: &ReplayBuffer, seed_value: u64) -> Result<TrainStats, PolicyError> {
        let cfg = self.config;
        let mut stats = TrainStats { max_reward: f64::NEG_INFINITY, ..TrainStats::default() };
        let mut seen = 0usize;
        for u in 0..cfg.updates_per_iteration {
            let mut pick = seed::derived_rng(seed_value, &[seed::tag::BATCH, u as u64]);
            let idx = sample_indices(&mut pick, buffer.len(), cfg.batch_size).into_vec();
            let exps: Vec<&Experience> = idx.iter().map(|&i| buffer.get(i).expect("index in range")).collect();

            let scores: Vec<f64> = exps.iter().map(|e| self.batch_score(e)).collect();
            let weights = softmax_weights(&scores, cfg.temperature);
            let mut noise = seed::derived_rng(seed_value, &[seed::tag::REPARAM, u as u64]);

            let finetune = cfg.finetune_encoder && exps.iter().all(|e| e.heights.is_some());
            let (features, enc_cache) = if finetune {
                let mut x = Vec::with_capacity(exps.len() * self.encoder.input_len());
                for e in &exps {
                    x.extend_from_slice(e.heights.as_deref().unwrap_or(&[]));
                }
                let input = Tensor::matrix(exps.len(), self.encoder.input_len(), x)?;
                let (out, cache) = self.encoder.forward(&input)?;
                let rows: Vec<Vec<f32>> = (0..exps.len()).map(|i| out.row(i).to_vec()).collect();
                (rows, Some(cache))
            } else {
                (exps.iter().map(|e| e.feature.clone()).collect(), None)
            };

            let rows: Vec<BatchRow> = exps
                .iter()
                .zip(&weights)
                .zip(features)
                .map(|((e, &w), feature)| BatchRow {
                    anchors: e.anchors.clone(),
                    feature,
                    frame: DecodeFrame::new(e.start, e.target, self.table, &cfg),
                    weight: w,
                    eps: (0..cfg.latent_dim).map(|_| StandardNormal.sample(&mut noise)).collect(),
                })
                .collect();

            let out = cvae_loss(&self.cvae, &rows, cfg.kl_weight).map_err(|_| PolicyError::NonFiniteLoss)?;
            let mut grads = out.grads;
            let mut enc_grads = match (&enc_cache, self.adam_encoder.is_some()) {
                (Some(cache), true) => {
                    let g: Vec<f32> = out.feature_grads.iter().flatten().map(|&v| f32::of(v)).collect();
                    Some(self.encoder.backward(cache, &g)?.0)
                }
                _ => None,
            };
            let norm = match enc_grads.as_mut() {
                Some(eg) => clip_global_norm(&mut [&mut grads.q, &mut grads.p, eg], cfg.grad_clip),
                None => clip_global_norm(&mut [&mut grads.q, &mut grads.p], cfg.grad_clip),
            };
            if !norm.is_finite() {
                return Err(PolicyError::NonFiniteLoss);
            }
            self.adam_q.step(&mut self.cvae.q, &grads.q)?;
            self.adam_p.step(&mut self.cvae.p, &grads.p)?;
            if let (Some(adam), Some(eg)) = (self.adam_encoder.as_mut(), enc_grads.as_ref()) {
                adam.step(&mut self.encoder, eg)?;
            }

            stats.updates += 1;
            stats.loss += out.loss;
            stats.nll += out.nll;
            stats.kl += out.kl;
            stats.grad_norm += norm;
            stats.max_weight = stats.max_weight.max(weights.iter().copied().fold(0.0, f64::max));
            for e in &exps {
                stats.mean_reward += e.reward;
                stats.mean_advantage += e.reward - e.noop_reward;
                stats.max_reward = stats.max_reward.max(e.reward);
            }
            seen += exps.len();
        }
        let u = stats.updates.max(1) as f64;
        stats.loss /= u;
        stats.nll /= u;
        stats.kl /= u;
        stats.grad_norm /= u;
        if seen > 0 {
            stats.mean_reward /= seen as f64;
            stats.mean_advantage /= seen as f64;
        }
        Ok(stats)
    }
}
