//! Packaged experiment shapes.

use std::path::Path;

use super::config::WorkloadConfig;
use super::run::{DestinationSpec, ExperimentConfig, StoreKind};

/// Total CNs of the six eight-hour reference runs.
pub const LOCKSTEP_TOTALS: [u64; 6] = [13_819, 32_453, 6_910, 24_400, 11_850, 14_937];

/// 960 polls of 30 s: eight hours, 96 five-minute intervals.
pub const LOCKSTEP_CYCLES: u64 = 960;

pub const ACCURACY_SEEDS: u64 = 20;
pub const ACCURACY_EVENTS: u64 = 10_000;

fn scaled(total: u64, scale: f64) -> u64 {
    (total as f64 * scale).round() as u64
}

fn destinations(data_dir: Option<&Path>, run_id: &str) -> Vec<DestinationSpec> {
    let mut far = DestinationSpec::far();
    if let Some(dir) = data_dir {
        far.store = StoreKind::File(dir.join(run_id).join("far"));
    }
    vec![far, DestinationSpec::near()]
}

/// Bursty eight-hour run `run` (0-based) of the six, scaled.
pub fn lockstep(run: usize, seed: u64, scale: f64, data_dir: Option<&Path>) -> ExperimentConfig {
    let run_id = format!("run-{}", run + 1);
    let workload = WorkloadConfig {
        seed: seed.wrapping_add(run as u64),
        cycles: LOCKSTEP_CYCLES,
        total_events: Some(scaled(LOCKSTEP_TOTALS[run % LOCKSTEP_TOTALS.len()], scale)),
        ..Default::default()
    };
    let mut cfg = ExperimentConfig::new(run_id.clone(), workload);
    cfg.destinations = destinations(data_dir, &run_id);
    cfg
}

pub fn lockstep_all(seed: u64, scale: f64, data_dir: Option<&Path>) -> Vec<ExperimentConfig> {
    (0..LOCKSTEP_TOTALS.len())
        .map(|r| lockstep(r, seed, scale, data_dir))
        .collect()
}

/// One accuracy run of `events` CNs.
pub fn accuracy(seed: u64, events: u64, data_dir: Option<&Path>) -> ExperimentConfig {
    let run_id = format!("accuracy-{seed}");
    let workload = WorkloadConfig {
        seed,
        cycles: LOCKSTEP_CYCLES,
        total_events: Some(events),
        spelling_variation_prob: 0.1,
        ..Default::default()
    };
    let mut cfg = ExperimentConfig::new(run_id.clone(), workload);
    cfg.destinations = destinations(data_dir, &run_id);
    cfg
}

/// Seeds `base .. base + ACCURACY_SEEDS`.
pub fn accuracy_all(base_seed: u64, scale: f64, data_dir: Option<&Path>) -> Vec<ExperimentConfig> {
    (0..ACCURACY_SEEDS)
        .map(|i| accuracy(base_seed + i, scaled(ACCURACY_EVENTS, scale).max(1), data_dir))
        .collect()
}

/// Updates touch a tenth of each resource's lines; one Destination, one
/// pull per event (no category channels).
pub fn payload(seed: u64, scale: f64) -> ExperimentConfig {
    let workload = WorkloadConfig {
        seed,
        cycles: 240,
        total_events: Some(scaled(10_000, scale)),
        changed_fraction: 0.1,
        category_prob: 0.0,
        ..Default::default()
    };
    let mut cfg = ExperimentConfig::new(format!("payload-{seed}"), workload);
    cfg.destinations = vec![DestinationSpec::far()];
    cfg
}

/// Workload for the architecture comparison.
pub fn compare(seed: u64, scale: f64) -> WorkloadConfig {
    WorkloadConfig {
        seed,
        cycles: 60,
        total_events: Some(scaled(1_500, scale)),
        baseline_resources: 500,
        max_events_per_cycle: 200,
        category_prob: 0.0,
        ..Default::default()
    }
}

pub const COMPARE_DESTINATIONS: usize = 2;
