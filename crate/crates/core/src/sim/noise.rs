use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DepthImage;
use crate::seed;

/// Sensor-noise model applied before post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthNoise {
    /// Standard deviation of additive Gaussian range noise, meters.
    pub sigma: f64,
    /// Per-pixel probability of a dropout hole.
    pub dropout: f64,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self { sigma: 0.005, dropout: 0.02 }
    }
}

impl DepthNoise {
    pub const NONE: DepthNoise = DepthNoise { sigma: 0.0, dropout: 0.0 };

    pub fn is_active(&self) -> bool {
        self.sigma > 0.0 || self.dropout > 0.0
    }
}

const MIN_RANGE: f64 = 1e-6;

/// Corrupts `img` with additive noise and dropout holes (`None`).
pub fn add_sensor_noise(img: &DepthImage, noise: &DepthNoise, noise_seed: u64) -> Vec<Option<f64>> {
    let mut rng = seed::derived_rng(noise_seed, &[seed::tag::DEPTH_NOISE]);
    let h = img.camera_height;
    img.values
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            if noise.dropout > 0.0 && rng.random_bool(noise.dropout.min(1.0)) {
                None
            } else {
                Some((v + noise.sigma * n).clamp(MIN_RANGE, h))
            }
        })
        .collect()
}

/// Fills each hole with the value of its nearest valid pixel (breadth-first
/// over 4-neighbors, sources visited in row-major order). An image with no
/// valid pixel at all is filled with the background range.
pub fn fill_holes(rows: usize, cols: usize, values: &[Option<f64>], background: f64) -> Vec<f64> {
    let mut out: Vec<Option<f64>> = values.to_vec();
    let mut queue: VecDeque<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if queue.is_empty() {
        return alloc::vec![background; values.len()];
    }
    while let Some(i) = queue.pop_front() {
        let v = out[i];
        let (r, c) = (i / cols, i % cols);
        let mut visit = |j: usize| {
            if out[j].is_none() {
                out[j] = v;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - cols);
        }
        if r + 1 < rows {
            visit(i + cols);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < cols {
            visit(i + 1);
        }
    }
    out.into_iter().map(|v| v.unwrap_or(background)).collect()
}

/// 3x3 median with replicated borders.
pub fn median3x3(rows: usize, cols: usize, values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut window = [0.0f64; 9];
    for r in 0..rows {
        for c in 0..cols {
            let mut k = 0;
            for dr in [-1isize, 0, 1] {
                for dc in [-1isize, 0, 1] {
                    let rr = (r as isize + dr).clamp(0, rows as isize - 1) as usize;
                    let cc = (c as isize + dc).clamp(0, cols as isize - 1) as usize;
                    window[k] = values[rr * cols + cc];
                    k += 1;
                }
            }
            window.sort_unstable_by(f64::total_cmp);
            out.push(window[4]);
        }
    }
    out
}

/// Simulated sensor corruption followed by hole filling and median filtering.
/// With an inactive noise model there is nothing to repair and the input is
/// returned unchanged.
pub fn postprocess_depth(img: &DepthImage, noise: &DepthNoise, noise_seed: u64) -> DepthImage {
    if !noise.is_active() {
        return img.clone();
    }
    let h = img.camera_height;
    let noisy = add_sensor_noise(img, noise, noise_seed);
    let filled = fill_holes(img.rows, img.cols, &noisy, h);
    let values = median3x3(img.rows, img.cols, &filled)
        .into_iter()
        .map(|v| v.clamp(MIN_RANGE, h))
        .collect();
    DepthImage {
        rows: img.rows,
        cols: img.cols,
        camera_height: h,
        values,
    }
}
