//! Held-out evaluation of a trained policy.

use anyhow::Result;
use pushgrasp_core::geometry::Point2;
use pushgrasp_core::policy::{sample_candidates, Candidate, Policy};
use pushgrasp_core::rewards::{grasp_feasible, margin_terms, total_reward};
use pushgrasp_core::seed;
use pushgrasp_core::sim::{randomize_scene, RandomizationConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub scenes: usize,
    pub k: usize,
    /// Seed of the held-out scene stream (training streams are derived from
    /// the run seed with a different path).
    pub seed: u64,
    /// How many of the scenes also get the diversity statistic.
    pub diversity_scenes: usize,
    /// Two candidate paths count as distinct above this maximum deviation.
    pub diversity_threshold: f64,
    pub corridor_halfwidth: f64,
    pub scene_config: RandomizationConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenes: 100,
            k: 4,
            seed: 0x5eed_e7a1,
            diversity_scenes: 20,
            diversity_threshold: 0.03,
            corridor_halfwidth: 0.05,
            scene_config: RandomizationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene_seed: u64,
    pub obstacles: usize,
    pub margin_before: f64,
    pub margin_after: f64,
    pub fell: bool,
    pub initially_feasible: bool,
    pub feasible_after: bool,
    pub sim_time: f64,
    pub best_score: f64,
    /// Largest number of candidates that are pairwise more than the
    /// threshold apart (diversity scenes only).
    pub distinct_candidates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub scenes: usize,
    pub scenes_with_three_distinct: usize,
    pub mean_pairwise_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub scenes: usize,
    pub improvement_fraction: f64,
    pub initially_infeasible: usize,
    pub made_feasible: usize,
    pub feasible_fraction: f64,
    pub fall_rate: f64,
    pub mean_sim_time: f64,
    pub diversity: DiversityStats,
    pub per_scene: Vec<SceneEval>,
}

/// Largest deviation between two paths sampled at the same parameters.
pub fn max_deviation(a: &[Point2], b: &[Point2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).fold(0.0, f64::max)
}

/// Size of the largest subset of candidates whose paths are pairwise more
/// than `threshold` apart (exhaustive; K is small).
pub fn distinct_count(cands: &[Candidate], threshold: f64) -> usize {
    let k = cands.len();
    let far = |i: usize, j: usize| max_deviation(&cands[i].path, &cands[j].path) > threshold;
    (0u32..1 << k)
        .filter(|mask| {
            let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            members.iter().enumerate().all(|(x, &i)| members[x + 1..].iter().all(|&j| far(i, j)))
        })
        .map(|m| m.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

pub fn scene_seed(config: &EvalConfig, index: usize) -> u64 {
    seed::derive(config.seed, &[index as u64])
}

/// Executes the best of `k` candidates on each held-out scene.
pub fn evaluate(policy: &Policy, config: &EvalConfig) -> Result<EvalReport> {
    let mut per_scene = Vec::with_capacity(config.scenes);
    let mut deviation_sum = 0.0;
    let mut deviation_pairs = 0usize;
    for i in 0..config.scenes {
        let scene_seed = scene_seed(config, i);
        let scene = randomize_scene(scene_seed, &config.scene_config)?;
        let target = scene.target().expect("randomized scenes have a target").id;
        let start = scene.gripper.position;
        let cands = sample_candidates(policy, &scene, config.k, seed::derive(scene_seed, &[seed::tag::CANDIDATES]))?;
        let best = &cands[0];
        let mut after = scene.clone();
        after.execute(&best.trajectory, &policy.config.push);
        after.gripper.position = start;
        let reward = total_reward(&scene, &after, start, target, &policy.config.reward)?;
        let margin_before: f64 = margin_terms(&scene, start, target)?.iter().map(|m| m.reward).sum();
        let initially_feasible = grasp_feasible(&scene, start, target, config.corridor_halfwidth)?.feasible;
        let distinct_candidates = (i < config.diversity_scenes).then(|| {
            for a in 0..cands.len() {
                for b in a + 1..cands.len() {
                    deviation_sum += max_deviation(&cands[a].path, &cands[b].path);
                    deviation_pairs += 1;
                }
            }
            distinct_count(&cands, config.diversity_threshold)
        });
        per_scene.push(SceneEval {
            scene_seed,
            obstacles: scene.objects.len() - 1,
            margin_before,
            margin_after: reward.margin_total(),
            fell: reward.fell(),
            initially_feasible,
            feasible_after: grasp_feasible(&after, start, target, config.corridor_halfwidth)?.feasible,
            sim_time: best.trajectory.duration(),
            best_score: best.score,
            distinct_candidates,
        });
    }
    let n = per_scene.len().max(1) as f64;
    let infeasible: Vec<&SceneEval> = per_scene.iter().filter(|s| !s.initially_feasible).collect();
    let made_feasible = infeasible.iter().filter(|s| s.feasible_after).count();
    let diverse: Vec<usize> = per_scene.iter().filter_map(|s| s.distinct_candidates).collect();
    Ok(EvalReport {
        config: config.clone(),
        scenes: per_scene.len(),
        improvement_fraction: per_scene.iter().filter(|s| s.margin_after > s.margin_before).count() as f64 / n,
        initially_infeasible: infeasible.len(),
        made_feasible,
        feasible_fraction: if infeasible.is_empty() { 1.0 } else { made_feasible as f64 / infeasible.len() as f64 },
        fall_rate: per_scene.iter().filter(|s| s.fell).count() as f64 / n,
        mean_sim_time: per_scene.iter().map(|s| s.sim_time).sum::<f64>() / n,
        diversity: DiversityStats {
            scenes: diverse.len(),
            scenes_with_three_distinct: diverse.iter().filter(|&&d| d >= 3).count(),
            mean_pairwise_deviation: if deviation_pairs == 0 { 0.0 } else { deviation_sum / deviation_pairs as f64 },
        },
        per_scene,
    })
}
