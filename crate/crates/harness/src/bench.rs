//! Latency benchmark: warm-up, then a fixed number of timed runs of
//! (a) stats + distances + projection over a whole pyramid and
//! (b) one test-time observe per level.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleadapt_core::bank::{BankMode, StyleMemoryBank};
use styleadapt_core::projection::project_pyramid;
use styleadapt_core::stats::{compute_stats_with_epsilon, ChannelStats};
use styleadapt_core::tensor::FeatureMap;

use crate::config::RunConfig;
use crate::error::Result;
use crate::report::Report;

pub const OVERHEAD_LIMIT: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub runs: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        let runs = ms.len();
        ms.sort_by(f64::total_cmp);
        let idx = ((0.95 * runs as f64).ceil() as usize).clamp(1, runs) - 1;
        Self {
            runs,
            mean_ms: ms.iter().sum::<f64>() / runs as f64,
            p95_ms: ms[idx],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub projection: Timing,
    pub observe: Timing,
    pub warmup: usize,
    pub report: Report,
}

impl BenchOutcome {
    /// Mean observe time as a fraction of mean projection time.
    pub fn overhead_ratio(&self) -> f64 {
        self.observe.mean_ms / self.projection.mean_ms
    }
}

fn time_runs(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing::from_samples(ms))
}

/// Reference pyramid and one full bank per level.
pub fn reference_setup(config: &RunConfig) -> Result<(Vec<FeatureMap>, Vec<StyleMemoryBank>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.bench_channels;
    let mut pyramid = Vec::new();
    let mut banks = Vec::new();
    for &[h, w] in &config.bench_levels {
        let data = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        pyramid.push(FeatureMap::from_vec(1, c, h, w, data)?);
        let styles = (0..config.k)
            .map(|_| {
                ChannelStats::new(
                    (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..c).map(|_| rng.random_range(0.5..1.5)).collect(),
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut bank = StyleMemoryBank::from_styles(config.bank_config(), styles)?;
        bank.set_mode(BankMode::Tta);
        banks.push(bank);
    }
    Ok((pyramid, banks))
}

pub fn bench(config: &RunConfig) -> Result<BenchOutcome> {
    config.validate()?;
    let (pyramid, mut banks) = reference_setup(config)?;
    let pcfg = config.projection_config();
    let stats: Vec<ChannelStats> = pyramid
        .iter()
        .map(|f| Ok(compute_stats_with_epsilon(f, config.epsilon)?.swap_remove(0)))
        .collect::<Result<_>>()?;

    let projection = time_runs(config.bench_warmup, config.bench_runs, || {
        black_box(project_pyramid(&banks, black_box(&pyramid), &pcfg)?);
        Ok(())
    })?;
    let observe = time_runs(config.bench_warmup, config.bench_runs, || {
        for (bank, s) in banks.iter_mut().zip(&stats) {
            black_box(bank.observe(black_box(s))?);
        }
        Ok(())
    })?;

    let mut report = Report::new("bench");
    report.push_count("runs", config.bench_runs);
    report.push_count("warmup_runs", config.bench_warmup);
    report.push_count("channels", config.bench_channels);
    report.push_count("levels", config.bench_levels.len());
    report.push_count("prototypes", config.k);
    for (name, t) in [("projection", projection), ("tta_observe", observe)] {
        report.push_count(format!("{name}.runs"), t.runs);
        report.push(format!("{name}.mean"), t.mean_ms, "ms");
        report.push(format!("{name}.p95"), t.p95_ms, "ms");
    }
    let ratio = observe.mean_ms / projection.mean_ms;
    report.push("observe_overhead_ratio", ratio, "ratio");
    report.push_flag("observe_overhead_below_limit", ratio < OVERHEAD_LIMIT);
    Ok(BenchOutcome {
        projection,
        observe,
        warmup: config.bench_warmup,
        report,
    })
}

pub fn run_bench(config: &RunConfig, out_dir: &Path) -> Result<BenchOutcome> {
    let outcome = bench(config)?;
    outcome.report.write(out_dir, "bench_report", config)?;
    Ok(outcome)
}
