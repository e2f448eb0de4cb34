//! Virtual-time experiments, workload generation and replica diffing.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use pushsync::baseline::{compare_architectures, Arch, Interaction, DEFAULT_ENVELOPE_BYTES};
use pushsync::broker::{BrokerError, Publisher};
use pushsync::changeset::{list_cycles, Changeset};
use pushsync::channel::ChannelPath;
use pushsync::clock::VirtualClock;
use pushsync::destination::{FileReplica, ReplicaStore};
use pushsync::harness::presets::{self, COMPARE_DESTINATIONS};
use pushsync::harness::{
    changed_since, generate_workload, recursive_diff, render_table, run_experiment, ExperimentConfig, RunReport,
    WorkloadConfig,
};
use pushsync::notification::ChangeNotification;
use pushsync::source::Source;

use crate::args::{DiffArgs, GenerateArgs, Preset, RunArgs};
use crate::error::{io, CliError, CliResult};

fn load_config(path: &Path) -> Result<WorkloadConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io(format!("cannot read {}", path.display())))?;
    WorkloadConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_report(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(io(format!("cannot write {}", p.display()))),
        None => Ok(()),
    }
}

fn run_all(cfgs: &[ExperimentConfig]) -> Result<Vec<RunReport>, CliError> {
    cfgs.iter()
        .map(|c| run_experiment(c).map_err(|e| CliError::Usage(format!("{}: {e}", c.run_id))))
        .collect()
}

fn reports_csv(reports: &[RunReport]) -> String {
    let mut out = format!("{}\n", RunReport::csv_header());
    for r in reports {
        r.write_csv_rows(&mut out);
    }
    out
}

/// Runs `reports` checks shared by the timed presets.
fn check_runs(reports: &[RunReport], need_drain: bool) -> CliResult {
    let mut bad = Vec::new();
    for r in reports {
        if let Some(e) = &r.error {
            bad.push(format!("{}: {e}", r.run_id));
        } else if !r.complete || r.diff_count != 0 || (need_drain && !r.all_drained()) {
            bad.push(format!(
                "{}: diff {}, drained {}",
                r.run_id,
                r.diff_count,
                r.all_drained()
            ));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Criterion(bad.join("; ")))
    }
}

pub fn run(a: RunArgs) -> CliResult {
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        return Err(CliError::Usage(format!("--scale must be positive, got {}", a.scale)));
    }
    let data_dir = a.data_dir.as_deref();
    let seed = a.seed.unwrap_or(1);
    let report = a.report.as_deref();
    let Some(preset) = a.preset else {
        let path = a.config.as_deref().expect("clap requires --config without --preset");
        let mut cfg = load_config(path)?;
        if let Some(seed) = a.seed {
            cfg.seed = seed;
        }
        let reports = run_all(&[ExperimentConfig::new("custom", cfg)])?;
        print!("{}", render_table(&reports));
        write_report(report, &reports_csv(&reports))?;
        return check_runs(&reports, true);
    };
    match preset {
        Preset::Lockstep => {
            let reports = run_all(&presets::lockstep_all(seed, a.scale, data_dir))?;
            print!("{}", render_table(&reports));
            write_report(report, &reports_csv(&reports))?;
            check_runs(&reports, true)
        }
        Preset::Accuracy => {
            let reports = run_all(&presets::accuracy_all(seed, a.scale, data_dir))?;
            print!("{}", render_table(&reports));
            let total: u64 = reports.iter().map(|r| r.total_cns).sum();
            let diffs: usize = reports.iter().map(|r| r.diff_count).sum();
            println!(
                "accuracy: {} runs, {total} CNs, {diffs} differing resources",
                reports.len()
            );
            write_report(report, &reports_csv(&reports))?;
            check_runs(&reports, false)
        }
        Preset::Payload => {
            let reports = run_all(&[presets::payload(seed, a.scale)])?;
            let p = reports[0].payload;
            println!(
                "changeset bytes {}\nGET bytes {}\nchangeset/GET {:.4}\ncompressed GET estimate {} (x{})\nestimate/changeset {:.4}",
                p.changeset_bytes,
                p.get_bytes,
                p.ratio(),
                p.get_compressed_estimate,
                p.coefficient,
                p.compressed_ratio()
            );
            write_report(report, &reports_csv(&reports))?;
            check_runs(&reports, false)?;
            if (0.05..=0.3).contains(&p.ratio()) && (0.5..=2.0).contains(&p.compressed_ratio()) {
                Ok(())
            } else {
                Err(CliError::Criterion("payload ratios out of range".into()))
            }
        }
        Preset::CompareArchitectures => compare(&a),
    }
}

fn compare(a: &RunArgs) -> CliResult {
    let workload = generate_workload(&presets::compare(a.seed.unwrap_or(1), a.scale))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cycles: Vec<Changeset> = workload.cycles.iter().map(|c| c.changeset.clone()).collect();
    let r = compare_architectures(
        &workload.baseline,
        &cycles,
        COMPARE_DESTINATIONS,
        a.window,
        DEFAULT_ENVELOPE_BYTES,
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    print!("{}", r.ledger.to_csv());
    let n = r.cycles;
    println!(
        "cycles with events N={n}, destinations M={}, events {}, extra CN interactions {} (2N = {}), replicas identical {}, match source {}, missed feed entries {}",
        r.destinations,
        r.events,
        r.extra_cn_interactions(),
        2 * n,
        r.replicas_identical,
        r.replicas_match_source,
        r.missed_entries
    );
    write_report(a.report.as_deref(), &r.to_csv())?;
    let sim = |c| r.ledger.count(Arch::SimulatedPush, c);
    let ok = if a.window.is_none() {
        r.extra_cn_interactions() == 2 * n as i64 && r.replicas_identical && r.replicas_match_source
    } else {
        sim(Interaction::Ping) == n && sim(Interaction::FeedFetch) == n
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Criterion(
            "interaction counts do not match the expected difference".into(),
        ))
    }
}

pub fn generate(a: GenerateArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => WorkloadConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.scale != 1.0 {
        if !(a.scale > 0.0 && a.scale.is_finite()) {
            return Err(CliError::Usage(format!("--scale must be positive, got {}", a.scale)));
        }
        let target = cfg.target_events() as f64 * a.scale;
        cfg.total_events = Some(target.round().max(1.0) as u64);
    }
    let w = generate_workload(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    w.write_to_dir(&a.data_dir).map_err(|e| CliError::Io(e.to_string()))?;
    let k = w.kind_counts();
    println!(
        "wrote {} events ({} create, {} update, {} delete) over {} cycles to {}",
        w.total_events(),
        k.create,
        k.update,
        k.delete,
        w.cycles.len(),
        a.data_dir.display()
    );
    Ok(())
}

/// Accepts everything; used to replay changesets without a broker.
struct Discard;

impl Publisher for Discard {
    fn create_channel(&self, _path: &ChannelPath) -> Result<(), BrokerError> {
        Ok(())
    }

    fn publish_cn(&self, _cn: &ChangeNotification) -> Result<usize, BrokerError> {
        Ok(0)
    }
}

pub fn diff(a: DiffArgs) -> CliResult {
    let all: ChannelPath = "dbpedia".parse().expect("valid channel");
    let mut source = Source::new(all, Arc::new(VirtualClock::new()));
    let baseline_dir = a.data_dir.join("baseline");
    if baseline_dir.is_dir() {
        let cs = Changeset::read_from_dir(&baseline_dir, 0).map_err(|e| CliError::Io(e.to_string()))?;
        source.load_baseline(&cs);
    }
    let before = source.store().latest_listing();
    let dir = a.data_dir.join("changesets");
    for id in list_cycles(&dir).map_err(|e| CliError::Io(e.to_string()))? {
        let cs = Changeset::read_from_dir(&dir, id).map_err(|e| CliError::Io(e.to_string()))?;
        source.process_changeset(&cs, &Discard);
    }
    if !a.replica.is_dir() {
        return Err(CliError::Io(format!(
            "replica directory {} does not exist",
            a.replica.display()
        )));
    }
    let replica = FileReplica::open(&a.replica).map_err(io(format!("cannot open {}", a.replica.display())))?;
    let after = source.store().latest_listing();
    let scope = changed_since(&before, &after);
    let handle = source.handle();
    let report = recursive_diff(
        &after,
        (!a.all).then_some(&scope),
        &replica.listing(),
        |u| handle.get_representation(u).ok().map(|rv| rv.body),
        |u| replica.body(u).ok().flatten(),
    );
    let compared = if a.all { after.len() } else { scope.len() };
    println!(
        "compared {compared} resources: {} missing, {} extra, {} differing, diff {}",
        report.missing_at_dest.len(),
        report.extra_at_dest.len(),
        report.body_mismatch.len(),
        report.count
    );
    for u in report
        .missing_at_dest
        .iter()
        .chain(&report.extra_at_dest)
        .chain(&report.body_mismatch)
        .take(20)
    {
        println!("  {u}");
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Criterion(format!("{} resources differ", report.count)))
    }
}
