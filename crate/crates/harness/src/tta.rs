//! Test-time phase: banks switch to fusion-only mode and every incoming
//! pyramid is both absorbed into and rectified by its level's bank.

use std::path::Path;

use styleadapt_core::bank::{BankMode, StyleMemoryBank, UpdateAction};
use styleadapt_core::projection::{apply_adain, target_style};
use styleadapt_core::stats::{compute_stats_with_epsilon, ChannelStats};
use styleadapt_core::tensor::FeatureMap;

use crate::config::{RunConfig, TtaOrder};
use crate::error::{HarnessError, Result};
use crate::report::Report;
use crate::synth::StreamSample;
use crate::train::{load_banks, save_banks};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelTtaTrace {
    /// Distance of the input style to its nearest prototype when projected.
    pub pre: Vec<f64>,
    /// Same distance for the rectified output.
    pub post: Vec<f64>,
    /// `d_min` reported by each observe.
    pub d_min: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TtaOutcome {
    pub banks: Vec<StyleMemoryBank>,
    pub levels: Vec<LevelTtaTrace>,
    pub replacements: usize,
    pub count_constant: bool,
    pub identities_preserved: bool,
    pub report: Report,
}

fn nearest(bank: &StyleMemoryBank, s: &ChannelStats) -> Result<f64> {
    Ok(bank.distances(s)?.into_iter().fold(f64::INFINITY, f64::min))
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// Adapts `banks` to `stream` in memory.
pub fn tta_adapt(config: &RunConfig, mut banks: Vec<StyleMemoryBank>, stream: &[StreamSample]) -> Result<TtaOutcome> {
    config.validate()?;
    let pcfg = config.projection_config();
    for sample in stream {
        if sample.pyramid.len() != banks.len() {
            return Err(HarnessError::InvalidArgument(format!(
                "stream pyramid has {} levels but {} banks were loaded",
                sample.pyramid.len(),
                banks.len()
            )));
        }
        for (l, (fm, bank)) in sample.pyramid.iter().zip(&banks).enumerate() {
            if fm.channels() != bank.channels() {
                return Err(HarnessError::InvalidArgument(format!(
                    "level {l}: stream has {} channels, bank has {}",
                    fm.channels(),
                    bank.channels()
                )));
            }
        }
    }
    let counts_before: Vec<usize> = banks.iter().map(StyleMemoryBank::len).collect();
    let use_before: Vec<Vec<u64>> = banks
        .iter()
        .map(|b| b.prototypes().iter().map(|p| p.use_count).collect())
        .collect();
    for bank in &mut banks {
        bank.set_mode(BankMode::Tta);
    }

    let mut traces = vec![LevelTtaTrace::default(); banks.len()];
    let mut replacements = 0;
    let mut count_constant = true;
    let mut identities_preserved = true;
    for sample in stream {
        for (l, fm) in sample.pyramid.iter().enumerate() {
            let bank = &mut banks[l];
            let source = compute_stats_with_epsilon(fm, config.epsilon)?.swap_remove(0);
            let before: Vec<u64> = bank.prototypes().iter().map(|p| p.use_count).collect();
            let mut observe = |bank: &mut StyleMemoryBank| -> Result<()> {
                let rep = bank.observe(&source)?;
                match rep.action {
                    UpdateAction::Fused { slot } => {
                        identities_preserved &= bank.prototypes()[slot].use_count == before[slot] + 1;
                    }
                    _ => replacements += 1,
                }
                traces[l].d_min.extend(rep.d_min);
                Ok(())
            };
            let (pre, post) = match config.tta_order {
                TtaOrder::ObserveFirst => {
                    observe(bank)?;
                    rectify(bank, fm, &source, &pcfg)?
                }
                TtaOrder::ProjectFirst => {
                    let d = rectify(bank, fm, &source, &pcfg)?;
                    observe(bank)?;
                    d
                }
            };
            traces[l].pre.push(pre);
            traces[l].post.push(post);
            count_constant &= bank.len() == counts_before[l];
        }
    }
    for (bank, before) in banks.iter().zip(&use_before) {
        identities_preserved &= bank
            .prototypes()
            .iter()
            .zip(before)
            .all(|(p, &u)| p.use_count >= u);
    }

    let mut report = Report::new("tta-run");
    report.push_count("samples", stream.len());
    report.push_count("levels", banks.len());
    report.push_count("tta_order_observe_first", usize::from(config.tta_order == TtaOrder::ObserveFirst));
    report.push_count("replacements", replacements);
    report.push_flag("prototype_count_constant", count_constant);
    report.push_flag("prototype_identities_preserved", identities_preserved);
    for (l, t) in traces.iter().enumerate() {
        let p = format!("level{l}");
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        report.push_count(format!("{p}.prototypes"), banks[l].len());
        report.push(format!("{p}.mean_pre_distance"), mean(&t.pre), "style_distance");
        report.push(format!("{p}.mean_post_distance"), mean(&t.post), "style_distance");
        report.push_flag(format!("{p}.d_min_strictly_decreasing"), strictly_decreasing(&t.d_min));
        for (i, ((pre, post), d)) in t.pre.iter().zip(&t.post).zip(&t.d_min).enumerate() {
            report.push(format!("{p}.t{i}.pre_distance"), *pre, "style_distance");
            report.push(format!("{p}.t{i}.post_distance"), *post, "style_distance");
            report.push(format!("{p}.t{i}.d_min"), *d, "style_distance");
        }
    }
    Ok(TtaOutcome {
        banks,
        levels: traces,
        replacements,
        count_constant,
        identities_preserved,
        report,
    })
}

/// Projects one level and returns (pre, post) nearest-prototype distances.
fn rectify(
    bank: &StyleMemoryBank,
    fm: &FeatureMap,
    source: &ChannelStats,
    pcfg: &styleadapt_core::projection::ProjectionConfig,
) -> Result<(f64, f64)> {
    let sp = target_style(bank, source, pcfg)?;
    let pre = sp.distances.iter().copied().fold(f64::INFINITY, f64::min);
    let out = apply_adain(fm, std::slice::from_ref(&sp))?;
    let post_stats = compute_stats_with_epsilon(&out, pcfg.epsilon)?.swap_remove(0);
    Ok((pre, nearest(bank, &post_stats)?))
}

/// Loads banks from `bank_dir`, adapts them, writes the adapted banks into
/// `out_dir/tta/` and the report into `out_dir`.
pub fn run_tta_phase(config: &RunConfig, bank_dir: &Path, stream: &[StreamSample], out_dir: &Path) -> Result<TtaOutcome> {
    let banks = load_banks(bank_dir)?;
    let outcome = tta_adapt(config, banks, stream)?;
    let dir = out_dir.join("tta");
    save_banks(&dir, &outcome.banks)?;
    outcome.report.write(out_dir, "tta_report", config)?;
    Ok(outcome)
}
