//! Pipelines behind the `styleadapt` command-line tool: synthetic domain
//! streams, bank training, test-time adaptation, the object-aware contrastive
//! demo, latency benchmarking and the metric report format.

pub mod annotations;
pub mod bench;
pub mod config;
pub mod error;
pub mod kmeans;
pub mod ocl;
pub mod report;
pub mod synth;
pub mod train;
pub mod tta;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use report::Report;

use styleadapt_core::bank::{BankMode, StyleMemoryBank};

/// Header fields and per-prototype summaries of a bank.
pub fn inspect_bank(bank: &StyleMemoryBank) -> Report {
    let mut r = Report::new("inspect-bank");
    r.push_count("capacity", bank.capacity());
    r.push_count("channels", bank.channels());
    r.push("alpha", bank.config().alpha, "1");
    r.push("lambda", bank.config().lambda, "1");
    r.push_flag("tta_mode", bank.mode() == BankMode::Tta);
    r.push("step", bank.step() as f64, "count");
    r.push_count("prototypes", bank.len());
    for (i, p) in bank.prototypes().iter().enumerate() {
        let n = p.style.channels() as f64;
        r.push(format!("proto{i}.use_count"), p.use_count as f64, "count");
        r.push(format!("proto{i}.last_update"), p.last_update as f64, "step");
        r.push(format!("proto{i}.mean_of_means"), p.style.mean().iter().sum::<f64>() / n, "1");
        r.push(format!("proto{i}.mean_of_stds"), p.style.std().iter().sum::<f64>() / n, "1");
    }
    r
}
