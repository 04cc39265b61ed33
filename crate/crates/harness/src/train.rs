//! Train phase: every pyramid level feeds its own bank in train mode, then
//! the final prototypes are compared against an offline k-means clustering
//! of the same measured statistics.

use std::path::{Path, PathBuf};

use styleadapt_core::bank::{StyleMemoryBank, UpdateAction};
use styleadapt_core::stats::{compute_stats_with_epsilon, ChannelStats};

use crate::config::RunConfig;
use crate::error::{read_file, write_file, HarnessError, Result};
use crate::kmeans::{kmeans, match_min_cost, sq_dist};
use crate::report::Report;
use crate::synth::StreamSample;

pub const KMEANS_RESTARTS: usize = 50;

pub fn bank_file_name(level: usize) -> String {
    format!("bank_level{level}.sab")
}

pub fn save_banks(dir: &Path, banks: &[StyleMemoryBank]) -> Result<Vec<PathBuf>> {
    banks
        .iter()
        .enumerate()
        .map(|(l, bank)| {
            let path = dir.join(bank_file_name(l));
            write_file(&path, &bank.to_bytes())?;
            Ok(path)
        })
        .collect()
}

pub fn load_bank(path: &Path) -> Result<StyleMemoryBank> {
    StyleMemoryBank::from_bytes(&read_file(path)?)
        .map_err(|e| HarnessError::parse(path.display().to_string(), e.to_string()))
}

/// Loads `bank_level0.sab`, `bank_level1.sab`, ... until the first gap.
pub fn load_banks(dir: &Path) -> Result<Vec<StyleMemoryBank>> {
    let mut banks = Vec::new();
    loop {
        let path = dir.join(bank_file_name(banks.len()));
        if !path.exists() {
            break;
        }
        banks.push(load_bank(&path)?);
    }
    if banks.is_empty() {
        return Err(HarnessError::io(
            dir.join(bank_file_name(0)),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no bank files found"),
        ));
    }
    Ok(banks)
}

/// Measured style of every sample at `level` (batch entry 0).
pub fn level_stats(stream: &[StreamSample], level: usize, epsilon: f64) -> Result<Vec<ChannelStats>> {
    stream
        .iter()
        .map(|s| {
            let fm = s.pyramid.get(level).ok_or_else(|| {
                HarnessError::InvalidArgument(format!("sample has no pyramid level {level}"))
            })?;
            Ok(compute_stats_with_epsilon(fm, epsilon)?.swap_remove(0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatch {
    pub slot: usize,
    pub center: usize,
    /// Style distance from the prototype to its matched centre.
    pub distance: f64,
    /// Mean style distance of the centre's members to the centre.
    pub spread: f64,
}

impl PrototypeMatch {
    pub fn relative(&self) -> f64 {
        if self.spread > 0.0 {
            self.distance / self.spread
        } else if self.distance == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelTrainSummary {
    pub bootstraps: usize,
    pub fusions: usize,
    pub replacements: usize,
    /// Use counts discarded by replacements.
    pub evicted_use_count: u64,
    /// `(step, τ)` for every non-bootstrap update.
    pub tau: Vec<(u64, f64)>,
    pub matches: Vec<PrototypeMatch>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub banks: Vec<StyleMemoryBank>,
    pub levels: Vec<LevelTrainSummary>,
    pub report: Report,
}

/// Matches bank prototypes one-to-one onto oracle centres.
pub fn match_to_oracle(
    bank: &StyleMemoryBank,
    points: &[ChannelStats],
    k: usize,
    seed: u64,
) -> Result<Vec<PrototypeMatch>> {
    let flat: Vec<Vec<f64>> = points.iter().map(ChannelStats::to_flat).collect();
    let oracle = kmeans(&flat, k, KMEANS_RESTARTS, seed)?;
    let spreads = oracle.spreads(&flat);
    let protos: Vec<Vec<f64>> = bank.prototypes().iter().map(|p| p.style.to_flat()).collect();
    let matched = if protos.len() <= oracle.centers.len() {
        match_min_cost(&protos, &oracle.centers, sq_dist)?
    } else {
        match_min_cost(&oracle.centers, &protos, sq_dist)?
            .into_iter()
            .map(|(center, slot, distance)| (slot, center, distance))
            .collect()
    };
    let mut out: Vec<PrototypeMatch> = matched
        .into_iter()
        .map(|(slot, center, distance)| PrototypeMatch {
            slot,
            center,
            distance,
            spread: spreads[center],
        })
        .collect();
    out.sort_by_key(|m| m.slot);
    Ok(out)
}

/// Runs the train phase in memory.
pub fn train_banks(config: &RunConfig, stream: &[StreamSample]) -> Result<TrainOutcome> {
    config.validate()?;
    let first = stream
        .first()
        .ok_or_else(|| HarnessError::InvalidArgument("empty training stream".into()))?;
    let levels = first.pyramid.len();
    let mut banks = first
        .pyramid
        .iter()
        .map(|fm| StyleMemoryBank::new(config.bank_config(), fm.channels()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stats: Vec<Vec<ChannelStats>> = (0..levels)
        .map(|l| level_stats(stream, l, config.epsilon))
        .collect::<Result<_>>()?;

    let mut summaries = vec![LevelTrainSummary::default(); levels];
    for t in 0..stream.len() {
        for l in 0..levels {
            let rep = banks[l].observe(&stats[l][t])?;
            let s = &mut summaries[l];
            match rep.action {
                UpdateAction::Bootstrap { .. } => s.bootstraps += 1,
                UpdateAction::Fused { .. } => s.fusions += 1,
                UpdateAction::Replaced { evicted_use_count, .. } => {
                    s.replacements += 1;
                    s.evicted_use_count += evicted_use_count;
                }
            }
            if let Some(tau) = rep.tau {
                s.tau.push((banks[l].step(), tau));
            }
        }
    }

    let mut clusters: Vec<usize> = stream.iter().map(|s| s.label).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let k_oracle = clusters.len().min(stream.len());

    let mut report = Report::new("train-bank");
    report.push_count("samples", stream.len());
    report.push_count("clusters", k_oracle);
    report.push_count("levels", levels);
    report.push_count("kmeans_restarts", KMEANS_RESTARTS);
    for (l, (bank, s)) in banks.iter().zip(summaries.iter_mut()).enumerate() {
        s.matches = match_to_oracle(bank, &stats[l], k_oracle, config.seed)?;
        let p = format!("level{l}");
        report.push_count(format!("{p}.channels"), bank.channels());
        report.push_count(format!("{p}.prototypes"), bank.len());
        report.push_count(format!("{p}.bootstraps"), s.bootstraps);
        report.push_count(format!("{p}.fusions"), s.fusions);
        report.push_count(format!("{p}.evictions"), s.replacements);
        report.push(format!("{p}.evicted_use_count"), s.evicted_use_count as f64, "count");
        for m in &s.matches {
            let q = format!("{p}.proto{}", m.slot);
            report.push_count(format!("{q}.center"), m.center);
            report.push(format!("{q}.use_count"), bank.prototypes()[m.slot].use_count as f64, "count");
            report.push(format!("{q}.distance_to_center"), m.distance, "style_distance");
            report.push(format!("{q}.cluster_spread"), m.spread, "style_distance");
            if m.spread > 0.0 {
                report.push(format!("{q}.relative_distance"), m.relative(), "ratio");
            }
        }
        let worst = s.matches.iter().map(PrototypeMatch::relative).fold(0.0, f64::max);
        if worst.is_finite() {
            report.push(format!("{p}.max_relative_distance"), worst, "ratio");
        }
        for &(step, tau) in &s.tau {
            report.push(format!("{p}.tau.{step}"), tau, "style_distance");
        }
    }
    Ok(TrainOutcome { banks, levels: summaries, report })
}

/// Trains, then writes one bank file per level plus the report.
pub fn run_train_phase(config: &RunConfig, stream: &[StreamSample], out_dir: &Path) -> Result<TrainOutcome> {
    let outcome = train_banks(config, stream)?;
    save_banks(out_dir, &outcome.banks)?;
    outcome.report.write(out_dir, "train_report", config)?;
    Ok(outcome)
}
