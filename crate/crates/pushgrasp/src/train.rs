//! Training coordinator: parallel rollout workers, the replay buffer, one
//! policy update per iteration, JSON-lines metrics and resumable
//! checkpoints.
//!
//! Rollout slot `r` of iteration `i` always uses seed `derive(run_seed, i, r)`
//! whichever worker runs it, and results are gathered in slot order, so the
//! worker count only changes scheduling.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pushgrasp_core::nn::Network;
use pushgrasp_core::policy::{
    depth_input, rollout, CaePretrainReport, LatentVector, Policy, PolicyConfig, ReplayBuffer, RolloutMode,
    RolloutResult,
};
use pushgrasp_core::seed;
use pushgrasp_core::sim::{randomize_scene, render_depth, RandomizationConfig};
use serde::{Deserialize, Serialize};

use crate::files::{append_jsonl, load_policy, read_json, save_policy, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rollouts_per_iteration: usize,
    pub workers: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (and at the end).
    pub checkpoint_every: usize,
    /// Window of the reported moving average, in rollouts.
    pub moving_average: usize,
    pub policy: PolicyConfig,
    pub scenes: RandomizationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            rollouts_per_iteration: 32,
            workers: 8,
            seed: 1,
            checkpoint_every: 25,
            moving_average: 50,
            policy: PolicyConfig::default(),
            scenes: RandomizationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.rollouts_per_iteration == 0 || self.moving_average == 0 {
            bail!("workers, rollouts per iteration and the moving-average window must be positive");
        }
        self.policy.validate()?;
        self.scenes.validate()?;
        Ok(())
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    /// Mean total reward over the last `moving_average` rollouts.
    pub moving_average: f64,
    pub fall_rate: f64,
    pub mean_advantage: f64,
    pub updated: bool,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub policy_version: u64,
}

/// Per-rollout history kept for the moving average and resume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub reward: f64,
    pub fell: bool,
}

/// Everything besides the policy that a resumed run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub next_iteration: usize,
    pub history: Vec<RolloutSummary>,
    pub buffer: ReplayBuffer,
}

/// Echo of every input that affects a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub program: String,
    pub version: String,
    pub config: TrainConfig,
    pub encoder_path: PathBuf,
    pub encoder_report: CaePretrainReport,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub policy: Policy,
    pub buffer: ReplayBuffer,
    pub history: Vec<RolloutSummary>,
    pub next_iteration: usize,
    out: Option<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const POLICY_FILE: &str = "policy.json";
pub const STATE_FILE: &str = "trainer.json";
pub const RUN_FILE: &str = "run.json";

impl Trainer {
    pub fn new(config: TrainConfig, encoder: Network, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let policy = Policy::new(encoder, config.scenes.table, config.policy, config.seed)?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.policy.buffer_capacity),
            config,
            policy,
            history: Vec::new(),
            next_iteration: 0,
            out,
        })
    }

    /// Picks up a run from its last checkpoint in `out`.
    pub fn resume(out: &Path) -> Result<Self> {
        let state: TrainerState = read_json(&out.join(STATE_FILE)).context("no trainer state to resume from")?;
        let policy = load_policy(&out.join(POLICY_FILE))?;
        // Drop metrics written after the checkpoint so the file matches an
        // uninterrupted run.
        let metrics = out.join(METRICS_FILE);
        if metrics.exists() {
            let text = std::fs::read_to_string(&metrics)?;
            let kept: String = text.lines().take(state.next_iteration).map(|l| format!("{l}\n")).collect();
            std::fs::write(&metrics, kept)?;
        }
        Ok(Self {
            config: state.config,
            policy,
            buffer: state.buffer,
            history: state.history,
            next_iteration: state.next_iteration,
            out: Some(out.to_path_buf()),
        })
    }

    fn slot_seed(&self, iteration: usize, slot: usize) -> u64 {
        seed::derive(self.config.seed, &[iteration as u64, slot as u64])
    }

    fn run_slot(policy: &Policy, config: &TrainConfig, slot_seed: u64) -> Result<(RolloutResult, Option<Vec<f32>>)> {
        let scene = randomize_scene(slot_seed, &config.scenes)?;
        let mut rng = seed::derived_rng(slot_seed, &[seed::tag::LATENT]);
        let z = LatentVector::sample(config.policy.latent_dim, &mut rng);
        let r = rollout(policy, &scene, &z, slot_seed, RolloutMode::Explore)?;
        let heights = config.policy.finetune_encoder.then(|| depth_input(&render_depth(&scene)));
        Ok((r, heights))
    }

    /// Runs every rollout slot of `iteration` on the worker pool and returns
    /// the results in slot order.
    pub fn collect(&self, iteration: usize) -> Result<Vec<(RolloutResult, Option<Vec<f32>>)>> {
        let n = self.config.rollouts_per_iteration;
        let workers = self.config.workers.min(n);
        let policy = &self.policy;
        let config = &self.config;
        let seeds: Vec<u64> = (0..n).map(|r| self.slot_seed(iteration, r)).collect();
        let mut slots: Vec<Option<Result<(RolloutResult, Option<Vec<f32>>)>>> = (0..n).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let seeds = &seeds;
                    scope.spawn(move || {
                        (w..n).step_by(workers).map(|r| (r, Self::run_slot(policy, config, seeds[r]))).collect::<Vec<_>>()
                    })
                })
                .collect();
            for (w, h) in handles.into_iter().enumerate() {
                match h.join() {
                    Ok(results) => {
                        for (r, res) in results {
                            slots[r] = Some(res);
                        }
                    }
                    Err(_) => slots.iter_mut().skip(w).step_by(workers).for_each(|s| *s = Some(Err(anyhow::anyhow!("worker {w} panicked")))),
                }
            }
        });
        slots
            .into_iter()
            .enumerate()
            .map(|(r, s)| s.expect("every slot assigned").with_context(|| format!("rollout slot {r} of iteration {iteration} failed")))
            .collect()
    }

    pub fn moving_average(&self) -> f64 {
        let w = self.config.moving_average.min(self.history.len()).max(1);
        self.history[self.history.len().saturating_sub(w)..].iter().map(|h| h.reward).sum::<f64>() / w as f64
    }

    /// Collects one iteration of rollouts, updates the policy if the buffer
    /// holds a batch, and returns the metrics line.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let iteration = self.next_iteration;
        let results = self.collect(iteration)?;
        let n = results.len() as f64;
        let mut mean_reward = 0.0;
        let mut max_reward = f64::NEG_INFINITY;
        let mut falls = 0usize;
        let mut mean_advantage = 0.0;
        for (r, heights) in &results {
            mean_reward += r.reward.total;
            max_reward = max_reward.max(r.reward.total);
            falls += usize::from(r.reward.fell());
            mean_advantage += r.advantage();
            self.history.push(RolloutSummary { reward: r.reward.total, fell: r.reward.fell() });
            self.buffer.push(r.experience(heights.clone()));
        }
        let stats = if self.buffer.len() >= self.config.policy.batch_size {
            let update_seed = seed::derive(self.config.seed, &[seed::tag::BATCH, iteration as u64]);
            Some(self.policy.train_iteration(&self.buffer, update_seed).with_context(|| format!("update at iteration {iteration}"))?)
        } else {
            None
        };
        let record = MetricsRecord {
            iteration,
            episodes: self.history.len(),
            mean_reward: mean_reward / n,
            max_reward,
            moving_average: self.moving_average(),
            fall_rate: falls as f64 / n,
            mean_advantage: mean_advantage / n,
            updated: stats.is_some(),
            loss: stats.map_or(0.0, |s| s.loss),
            nll: stats.map_or(0.0, |s| s.nll),
            kl: stats.map_or(0.0, |s| s.kl),
            grad_norm: stats.map_or(0.0, |s| s.grad_norm),
            policy_version: self.policy.version(),
        };
        self.next_iteration += 1;
        if let Some(out) = &self.out {
            append_jsonl(&out.join(METRICS_FILE), &record)?;
            let every = self.config.checkpoint_every.max(1);
            if self.next_iteration % every == 0 || self.next_iteration == self.config.iterations {
                self.checkpoint()?;
            }
        }
        Ok(record)
    }

    pub fn checkpoint(&self) -> Result<()> {
        let Some(out) = &self.out else { return Ok(()) };
        save_policy(&out.join(POLICY_FILE), &self.policy)?;
        write_json(
            &out.join(STATE_FILE),
            &TrainerState {
                config: self.config.clone(),
                next_iteration: self.next_iteration,
                history: self.history.clone(),
                buffer: self.buffer.clone(),
            },
        )
    }

    /// Runs until `config.iterations` iterations are done.
    pub fn run(&mut self, mut on_metrics: impl FnMut(&MetricsRecord)) -> Result<()> {
        while self.next_iteration < self.config.iterations {
            let m = self.step()?;
            on_metrics(&m);
        }
        Ok(())
    }
}

/// Summary of a finished run used by the acceptance checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressSummary {
    pub first_average: f64,
    pub final_average: f64,
    pub final_fall_rate: f64,
}

/// First-window average, last-window average and last-window fall rate.
pub fn progress_summary(history: &[RolloutSummary], window: usize) -> ProgressSummary {
    let w = window.min(history.len()).max(1);
    let mean = |s: &[RolloutSummary]| s.iter().map(|h| h.reward).sum::<f64>() / s.len().max(1) as f64;
    let tail = &history[history.len().saturating_sub(w)..];
    ProgressSummary {
        first_average: mean(&history[..w.min(history.len())]),
        final_average: mean(tail),
        final_fall_rate: tail.iter().filter(|h| h.fell).count() as f64 / tail.len().max(1) as f64,
    }
}
