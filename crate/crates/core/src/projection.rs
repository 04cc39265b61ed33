//! Weighted AdaIN rectification of feature maps against a style bank.
//!
//! For each sample the bank distances `d` are turned into weights
//! `w = softmax(-d / T)`; the target style is the weighted prototype mix
//! `μ' = w · P_μ`, `σ' = w · P_σ`, and the sample is remapped per channel to
//! `((f - μ) / σ) σ' + μ'`. Every prototype participates.

use crate::bank::StyleMemoryBank;
use crate::error::{Error, Result};
use crate::stats::{compute_stats_with_epsilon, ChannelStats};
use crate::tensor::{softmax, DenseArray, FeatureMap};
use crate::EPSILON;

/// How distances become mixing weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `softmax(-d)`: nearer prototypes weigh more.
    #[default]
    NegDistance,
    /// `softmax(d)` exactly as the formula is printed; farther prototypes weigh more.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub weighting: Weighting,
    pub softmax_temperature: f64,
    pub epsilon: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            weighting: Weighting::NegDistance,
            softmax_temperature: 1.0,
            epsilon: EPSILON,
        }
    }
}

/// Projection details for one batch sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleProjection {
    /// Measured style of the input sample.
    pub source: ChannelStats,
    /// Target style `(μ', σ')`.
    pub target: ChannelStats,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub rectified: FeatureMap,
    pub samples: Vec<SampleProjection>,
}

/// Mixing weights for a distance vector.
pub fn style_weights(distances: &[f64], config: &ProjectionConfig) -> Result<Vec<f64>> {
    let t = config.softmax_temperature;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::arg(format!("softmax temperature must be positive, got {t}")));
    }
    let sign = match config.weighting {
        Weighting::NegDistance => -1.0,
        Weighting::PaperLiteral => 1.0,
    };
    let logits: Vec<f64> = distances.iter().map(|d| sign * d / t).collect();
    softmax(&logits)
}

/// Target style for a sample with known statistics.
pub fn target_style(
    bank: &StyleMemoryBank,
    source: &ChannelStats,
    config: &ProjectionConfig,
) -> Result<SampleProjection> {
    let distances = bank.distances(source)?;
    let weights = style_weights(&distances, config)?;
    let k = bank.len();
    let c = bank.channels();
    let w = DenseArray::new(vec![1, k], weights.clone())?;
    let p_mean = DenseArray::new(vec![k, c], bank.mean_matrix())?;
    let p_std = DenseArray::new(vec![k, c], bank.std_matrix())?;
    let mean = w.matmul(&p_mean)?.into_data();
    let std = w.matmul(&p_std)?.into_data();
    Ok(SampleProjection {
        source: source.clone(),
        target: ChannelStats::new(mean, std)?,
        distances,
        weights,
    })
}

/// Rectifies `f` toward the weighted prototype style, sample by sample.
pub fn project(
    bank: &StyleMemoryBank,
    f: &FeatureMap,
    config: &ProjectionConfig,
) -> Result<ProjectionResult> {
    if bank.is_empty() {
        return Err(Error::state("projection against an empty bank"));
    }
    let stats = compute_stats_with_epsilon(f, config.epsilon)?;
    let samples = stats
        .iter()
        .map(|s| target_style(bank, s, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionResult {
        rectified: apply_adain(f, &samples)?,
        samples,
    })
}

/// Applies `((f - μ)/σ) σ' + μ'` per sample and channel.
pub fn apply_adain(f: &FeatureMap, samples: &[SampleProjection]) -> Result<FeatureMap> {
    if samples.len() != f.batch() {
        return Err(Error::arg(format!(
            "{} sample projections for batch of {}",
            samples.len(),
            f.batch()
        )));
    }
    let mut out = f.clone();
    for (b, sp) in samples.iter().enumerate() {
        if sp.source.channels() != f.channels() || sp.target.channels() != f.channels() {
            return Err(Error::arg("projection channel count differs from feature map"));
        }
        for c in 0..f.channels() {
            let (mu, sigma) = (sp.source.mean()[c], sp.source.std()[c]);
            let (mu_t, sigma_t) = (sp.target.mean()[c], sp.target.std()[c]);
            let gain = sigma_t / sigma;
            for v in out.plane_mut(b, c) {
                *v = (*v - mu) * gain + mu_t;
            }
        }
    }
    Ok(out)
}

/// Projects every level of a pyramid against its own bank.
pub fn project_pyramid(
    banks: &[StyleMemoryBank],
    pyramid: &[FeatureMap],
    config: &ProjectionConfig,
) -> Result<Vec<ProjectionResult>> {
    if banks.len() != pyramid.len() {
        return Err(Error::arg(format!(
            "{} banks for {} pyramid levels",
            banks.len(),
            pyramid.len()
        )));
    }
    banks
        .iter()
        .zip(pyramid)
        .map(|(bank, level)| project(bank, level, config))
        .collect()
}
