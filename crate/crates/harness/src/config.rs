//! Run configuration: defaults, TOML file loading and command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, the
//! `SA_ADAPT_SEED` environment variable (seed only), explicit flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use styleadapt_core::bank::{BankConfig, DEFAULT_ALPHA, DEFAULT_CAPACITY, DEFAULT_LAMBDA};
use styleadapt_core::contrastive::DEFAULT_LAMBDA_C;
use styleadapt_core::projection::{self, ProjectionConfig};
use styleadapt_core::EPSILON;

use crate::error::{read_file, HarnessError, Result};

pub const SEED_ENV: &str = "SA_ADAPT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    #[default]
    NegDistance,
    PaperLiteral,
}

impl From<WeightingMode> for projection::Weighting {
    fn from(w: WeightingMode) -> Self {
        match w {
            WeightingMode::NegDistance => Self::NegDistance,
            WeightingMode::PaperLiteral => Self::PaperLiteral,
        }
    }
}

impl FromStr for WeightingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "neg-distance" => Ok(Self::NegDistance),
            "paper-literal" => Ok(Self::PaperLiteral),
            _ => Err(format!("unknown weighting `{s}` (neg-distance | paper-literal)")),
        }
    }
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NegDistance => "neg-distance",
            Self::PaperLiteral => "paper-literal",
        })
    }
}

/// Whether a test-time sample updates the bank before or after it is projected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TtaOrder {
    #[default]
    ObserveFirst,
    ProjectFirst,
}

impl FromStr for TtaOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "observe-first" => Ok(Self::ObserveFirst),
            "project-first" => Ok(Self::ProjectFirst),
            _ => Err(format!("unknown tta order `{s}` (observe-first | project-first)")),
        }
    }
}

impl fmt::Display for TtaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ObserveFirst => "observe-first",
            Self::ProjectFirst => "project-first",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Prototypes per bank.
    pub k: usize,
    /// Replacement threshold factor.
    pub alpha: f64,
    /// EMA momentum for fusion.
    pub lambda: f64,
    /// Weight of the contrastive term in the total loss.
    pub lambda_c: f64,
    /// Added to the variance before the square root.
    pub epsilon: f64,
    pub weighting: WeightingMode,
    pub softmax_temperature: f64,
    pub tta_order: TtaOrder,
    pub heads: usize,
    pub d: usize,
    pub seed: u64,

    /// Channels of every synthetic pyramid level.
    pub channels: usize,
    /// `[height, width]` of each synthetic pyramid level.
    pub level_shapes: Vec<[usize; 2]>,
    pub clusters: usize,
    pub samples_per_cluster: usize,
    pub spread: f64,

    pub tta_clusters: usize,
    pub tta_samples: usize,
    pub tta_spread: f64,
    /// Reuse this training cluster as the test stream instead of a novel style.
    pub tta_reuse_cluster: Option<usize>,

    pub categories: usize,
    pub image_size: [usize; 2],
    pub ocl_levels: Vec<[usize; 2]>,
    pub blocks: usize,
    /// Detection loss supplied to the total-loss report.
    pub l_det: f64,
    pub normalize_queries: bool,
    pub fd_step: f64,

    pub bench_runs: usize,
    pub bench_warmup: usize,
    pub bench_channels: usize,
    pub bench_levels: Vec<[usize; 2]>,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_CAPACITY,
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            lambda_c: DEFAULT_LAMBDA_C,
            epsilon: EPSILON,
            weighting: WeightingMode::NegDistance,
            softmax_temperature: 1.0,
            tta_order: TtaOrder::ObserveFirst,
            heads: 8,
            d: 256,
            seed: 7,
            channels: 64,
            level_shapes: vec![[16, 16], [8, 8], [4, 4], [2, 2]],
            clusters: 4,
            samples_per_cluster: 50,
            spread: 0.05,
            tta_clusters: 1,
            tta_samples: 100,
            tta_spread: 0.05,
            tta_reuse_cluster: None,
            categories: 3,
            image_size: [64, 64],
            ocl_levels: vec![[8, 8], [4, 4], [2, 2]],
            blocks: 2,
            l_det: 0.0,
            normalize_queries: false,
            fd_step: 1e-5,
            bench_runs: 500,
            bench_warmup: 20,
            bench_channels: 256,
            bench_levels: vec![[64, 64], [32, 32], [16, 16], [8, 8]],
            out_dir: PathBuf::from("styleadapt-out"),
        }
    }
}

/// One row of the configuration self-test.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestCheck {
    pub name: &'static str,
    pub expected: f64,
    pub actual: f64,
}

impl SelfTestCheck {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| HarnessError::parse(path.display().to_string(), e.to_string()))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| HarnessError::parse(path.display().to_string(), e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    pub fn bank_config(&self) -> BankConfig {
        BankConfig {
            capacity: self.k,
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    pub fn projection_config(&self) -> ProjectionConfig {
        ProjectionConfig {
            weighting: self.weighting.into(),
            softmax_temperature: self.softmax_temperature,
            epsilon: self.epsilon,
        }
    }

    pub fn level_tuples(&self) -> Vec<(usize, usize)> {
        self.level_shapes.iter().map(|&[h, w]| (h, w)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        self.bank_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return fail(format!("lambda_c must be non-negative, got {}", self.lambda_c));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.softmax_temperature > 0.0 && self.softmax_temperature.is_finite()) {
            return fail(format!(
                "softmax_temperature must be positive, got {}",
                self.softmax_temperature
            ));
        }
        if self.heads == 0 || self.d == 0 || self.d % self.heads != 0 {
            return fail(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.d % 2 != 0 {
            return fail(format!("d = {} must be even for sine positions", self.d));
        }
        if self.channels == 0 || self.bench_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        for (name, shapes) in [
            ("level_shapes", &self.level_shapes),
            ("ocl_levels", &self.ocl_levels),
            ("bench_levels", &self.bench_levels),
        ] {
            if shapes.is_empty() || shapes.iter().any(|&[h, w]| h == 0 || w == 0) {
                return fail(format!("{name} must be a non-empty list of positive shapes"));
            }
        }
        let [ih, iw] = self.image_size;
        if self.ocl_levels.iter().any(|&[h, w]| h > ih || w > iw) {
            return fail("ocl_levels must not exceed image_size".into());
        }
        if self.clusters == 0 || self.samples_per_cluster == 0 {
            return fail("clusters and samples_per_cluster must be positive".into());
        }
        if self.tta_clusters == 0 || self.tta_samples == 0 {
            return fail("tta_clusters and tta_samples must be positive".into());
        }
        for (name, s) in [("spread", self.spread), ("tta_spread", self.tta_spread)] {
            if !(s >= 0.0 && s.is_finite()) {
                return fail(format!("{name} must be non-negative, got {s}"));
            }
        }
        if let Some(c) = self.tta_reuse_cluster {
            if c >= self.clusters {
                return fail(format!("tta_reuse_cluster {c} outside 0..{}", self.clusters));
            }
        }
        if self.categories == 0 || self.blocks == 0 {
            return fail("categories and blocks must be positive".into());
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) || !self.l_det.is_finite() {
            return fail("fd_step must be positive and l_det finite".into());
        }
        if self.bench_runs == 0 {
            return fail("bench_runs must be positive".into());
        }
        Ok(())
    }

    /// Compares the default configuration against the published constants.
    pub fn self_test() -> Vec<SelfTestCheck> {
        let d = Self::default();
        let mut checks = vec![
            SelfTestCheck { name: "K", expected: 4.0, actual: d.k as f64 },
            SelfTestCheck { name: "alpha", expected: 0.7, actual: d.alpha },
            SelfTestCheck { name: "lambda_c", expected: 0.1, actual: d.lambda_c },
            SelfTestCheck { name: "epsilon", expected: 1e-6, actual: d.epsilon },
            SelfTestCheck { name: "lambda", expected: 0.9, actual: d.lambda },
        ];
        checks.push(SelfTestCheck {
            name: "defaults_validate",
            expected: 1.0,
            actual: f64::from(u8::from(d.validate().is_ok())),
        });
        let round_trip = Self::from_toml_str(&d.to_toml_string()).ok() == Some(d.clone());
        checks.push(SelfTestCheck {
            name: "toml_round_trip",
            expected: 1.0,
            actual: f64::from(u8::from(round_trip)),
        });
        checks
    }
}

/// Command-line overrides; every field mirrors a [`RunConfig`] key.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_c: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// neg-distance | paper-literal
    #[arg(long, global = true)]
    pub weighting: Option<WeightingMode>,
    #[arg(long, global = true)]
    pub softmax_temperature: Option<f64>,
    /// observe-first | project-first
    #[arg(long, global = true)]
    pub tta_order: Option<TtaOrder>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub clusters: Option<usize>,
    #[arg(long, global = true)]
    pub samples_per_cluster: Option<usize>,
    #[arg(long, global = true)]
    pub spread: Option<f64>,
    #[arg(long, global = true)]
    pub tta_clusters: Option<usize>,
    #[arg(long, global = true)]
    pub tta_samples: Option<usize>,
    #[arg(long, global = true)]
    pub tta_spread: Option<f64>,
    #[arg(long, global = true)]
    pub tta_reuse_cluster: Option<usize>,
    #[arg(long, global = true)]
    pub categories: Option<usize>,
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    #[arg(long, global = true)]
    pub l_det: Option<f64>,
    #[arg(long, global = true)]
    pub normalize_queries: Option<bool>,
    #[arg(long, global = true)]
    pub fd_step: Option<f64>,
    #[arg(long, global = true)]
    pub bench_runs: Option<usize>,
    #[arg(long, global = true)]
    pub bench_warmup: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    /// Loads the config file (if any), applies overrides and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        set!(
            k, alpha, lambda, lambda_c, epsilon, weighting, softmax_temperature, tta_order,
            heads, d, seed, channels, clusters, samples_per_cluster, spread, tta_clusters,
            tta_samples, tta_spread, categories, blocks, l_det, normalize_queries, fd_step,
            bench_runs, bench_warmup, out_dir
        );
        if self.tta_reuse_cluster.is_some() {
            cfg.tta_reuse_cluster = self.tta_reuse_cluster;
        }
    }
}
