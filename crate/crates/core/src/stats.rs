//! Channel-wise style statistics and the distance between two styles.

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;
use crate::EPSILON;

/// Per-channel mean and standard deviation of one feature-map sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl ChannelStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::arg(format!(
                "mean has {} channels, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::arg("channel statistics must be finite"));
        }
        if let Some(c) = std.iter().position(|&s| s <= 0.0) {
            return Err(Error::arg(format!("std of channel {c} is not positive")));
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Mean and std concatenated into one `2C` vector.
    pub fn to_flat(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.std).copied().collect()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.mean, &mut self.std)
    }
}

/// Per-sample channel statistics with the default variance floor.
pub fn compute_stats(f: &FeatureMap) -> Result<Vec<ChannelStats>> {
    compute_stats_with_epsilon(f, EPSILON)
}

/// Per-sample channel statistics:
/// `mean = (1/HW) Σ f`, `std = sqrt((1/HW) Σ (f - mean)² + eps)`.
pub fn compute_stats_with_epsilon(f: &FeatureMap, eps: f64) -> Result<Vec<ChannelStats>> {
    let hw = f.spatial_len();
    if hw == 0 {
        return Err(Error::arg("feature map has zero-sized spatial extent"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg(format!("epsilon must be positive, got {eps}")));
    }
    let n = hw as f64;
    let stats = (0..f.batch())
        .map(|b| {
            let (mean, std) = (0..f.channels())
                .map(|c| {
                    let plane = f.plane(b, c);
                    let mu = plane.iter().sum::<f64>() / n;
                    let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    (mu, (var + eps).sqrt())
                })
                .unzip();
            ChannelStats { mean, std }
        })
        .collect();
    Ok(stats)
}

/// Squared 2-Wasserstein distance between two diagonal-Gaussian styles:
/// `Σ (μ - p_μ)² + Σ (σ² + p_σ² - 2 σ p_σ)`.
pub fn style_distance(s: &ChannelStats, p: &ChannelStats) -> Result<f64> {
    if s.channels() != p.channels() {
        return Err(Error::arg(format!(
            "channel mismatch: {} vs {}",
            s.channels(),
            p.channels()
        )));
    }
    Ok(style_distance_unchecked(s, p))
}

pub(crate) fn style_distance_unchecked(s: &ChannelStats, p: &ChannelStats) -> f64 {
    let mean_term: f64 = s
        .mean
        .iter()
        .zip(&p.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    // The expanded std term can round a hair below zero when the two stds
    // agree to ~8 digits; clamp per channel so the distance stays a metric.
    let std_term: f64 = s
        .std
        .iter()
        .zip(&p.std)
        .map(|(&a, &b)| (a * a + b * b - 2.0 * a * b).max(0.0))
        .sum();
    mean_term + std_term
}
