//! Property tests and small named examples across the core modules.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;

use proptest::prelude::*;
use pushsync::broker::{Broker, ChannelSink};
use pushsync::changeset::Changeset;
use pushsync::channel::ChannelPath;
use pushsync::clock::VirtualClock;
use pushsync::destination::{Destination, FileReplica, MemoryReplica, NoSleep, Outcome, ReplicaStore};
use pushsync::digest::Digest;
use pushsync::harness::{changed_since, generate_workload, WorkloadConfig};
use pushsync::notification::{decode_cn, encode_cn, EventKind};
use pushsync::source::Source;
use pushsync::uri::{from_file_component, normalize_uri, NormalizedUri};

use common::oracle::{fold, LineState};

fn ch(s: &str) -> ChannelPath {
    s.parse().unwrap()
}

#[test]
fn fanout_small_trees_exhaustive() {
    let stats = common::fanout::fanout_exhaustive(2, 2).unwrap();
    assert_eq!(stats.trees, 1 + 3 + 9);
}

#[test]
fn stale_race_up_to_four_events() {
    let stats = common::race::race_exhaustive(4).unwrap();
    assert!(stats.runs > 0);
}

#[test]
fn codec_round_trips() {
    common::codec::codec_round_trip(500).unwrap();
}

#[test]
fn uri_normalization_properties() {
    common::codec::uri_properties(300).unwrap();
}

#[test]
fn oracle_agrees_on_known_spellings() {
    use common::codec::oracle_normalize;
    for raw in [
        "http://dbpedia.org/resource/Caf%c3%a9",
        "http://dbpedia.org/resource/Café",
        "http://dbpedia.org/resource/AC%2fDC",
        "http://dbpedia.org/resource/%41lbum_(1)",
    ] {
        assert_eq!(normalize_uri(raw).unwrap().as_str(), oracle_normalize(raw));
    }
    assert_eq!(oracle_normalize("http://ex.org/Caf%c3%a9"), "http://ex.org/Caf%C3%A9");
    assert_eq!(oracle_normalize("http://ex.org/%41"), "http://ex.org/A");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn truncated_or_extended_frames_are_rejected(cn in common::codec::cn_strategy(), cut in 1usize..7) {
        let frame = encode_cn(&cn);
        let line = String::from_utf8(frame[..frame.len() - 1].to_vec()).unwrap();
        let fields: Vec<&str> = line.split('\t').collect();
        let short = fields[..7 - cut].join("\t") + "\n";
        prop_assert!(decode_cn(short.as_bytes()).is_err());
        let long = format!("{line}\textra\n");
        prop_assert!(decode_cn(long.as_bytes()).is_err());
    }

    #[test]
    fn broker_fanout_matches_prefix_oracle(
        subs in prop::collection::vec(0usize..7, 0..6),
    ) {
        let tree = common::fanout::Tree {
            nodes: ["t", "t/a", "t/a/x", "t/a/y", "t/b", "t/b/x", "t/c"].map(String::from).to_vec(),
        };
        common::fanout::check_placement(&tree, &subs).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn store_matches_naive_fold(seed in 0u64..10_000, spelling in 0.0f64..0.5) {
        let cfg = WorkloadConfig {
            seed,
            cycles: 30,
            total_events: Some(100),
            baseline_resources: 40,
            lines_min: 2,
            lines_max: 8,
            spelling_variation_prob: spelling,
            ..Default::default()
        };
        let w = generate_workload(&cfg).unwrap();
        let mut source = Source::new(ch("dbpedia"), Arc::new(VirtualClock::new()));
        let broker = Broker::new();
        let mut oracle = LineState::new();
        source.load_baseline(&w.baseline);
        fold(&mut oracle, &w.baseline);
        for c in &w.cycles {
            source.process_changeset(&c.changeset, &broker);
            fold(&mut oracle, &c.changeset);
        }
        let live: LineState = source
            .store()
            .latest_listing()
            .into_iter()
            .filter(|(_, s)| s.digest.is_some())
            .map(|(u, _)| {
                let body = source.handle().get_representation(&u).unwrap().body;
                (u.to_string(), String::from_utf8(body).unwrap().lines().map(str::to_owned).collect())
            })
            .collect();
        prop_assert_eq!(live, oracle);
    }

    #[test]
    fn file_listing_matches_directory_walk(ops in prop::collection::vec((0usize..6, any::<bool>(), 0u8..4), 1..30)) {
        let names = ["a", "Caf%C3%A9", "AC%2FDC", "x/y", "Q&A", "r(1)"];
        let dir = tempfile::tempdir().unwrap();
        let mut replica = FileReplica::open(dir.path()).unwrap();
        for (i, put, v) in ops {
            let uri = normalize_uri(&format!("http://ex.org/{}", names[i])).unwrap();
            if put {
                replica.put(&uri, format!("body {v}\n").as_bytes()).unwrap();
            } else {
                replica.remove(&uri).unwrap();
            }
        }
        let mut walked: Vec<(NormalizedUri, Digest)> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                let uri = from_file_component(e.file_name().to_str().unwrap()).unwrap();
                (uri, Digest::of(&fs::read(e.path()).unwrap()))
            })
            .collect();
        walked.sort();
        prop_assert_eq!(&replica.listing(), &walked);
        let reopened = FileReplica::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.listing(), walked);
    }
}

#[test]
fn sequence_numbers_follow_cycle_order() {
    let mut source = Source::new(ch("dbpedia"), Arc::new(VirtualClock::new()));
    let broker = Broker::new();
    let (sink, rx) = ChannelSink::new(64);
    broker.subscribe("d", &ch("dbpedia"), sink).unwrap();
    let mut first = Changeset::new(1);
    first.updated_lines = vec![
        "<http://ex.org/b> <p> \"1\" .".into(),
        "<http://ex.org/a> <p> \"1\" .".into(),
    ];
    let mut second = Changeset::new(2);
    second.updated_lines = vec!["<http://ex.org/a> <p> \"2\" .".into()];
    source.process_changeset(&first, &broker);
    source.process_changeset(&second, &broker);
    let cns: Vec<_> = rx.try_iter().collect();
    assert_eq!(cns.len(), 3);
    assert!(cns.windows(2).all(|w| w[0].seq < w[1].seq));
    assert_eq!(cns[2].uri.as_str(), "http://ex.org/a");
    assert_eq!(cns[2].kind, EventKind::Update);
    assert!(cns[..2].iter().all(|c| c.kind == EventKind::Create));
}

#[test]
fn two_cns_processed_after_the_second_update() {
    let clock = VirtualClock::new();
    let mut source = Source::new(ch("dbpedia"), Arc::new(clock.clone()));
    let line = |v: u32| format!("<http://ex.org/u> <p> \"{v}\" .");
    let mut base = Changeset::new(0);
    base.updated_lines = vec![line(3)];
    source.load_baseline(&base);
    let dest = Destination::new(
        "d",
        Arc::new(clock),
        1_000,
        Box::new(MemoryReplica::new()),
        Arc::new(source.handle()),
    )
    .with_sleeper(Arc::new(NoSleep));
    let broker = Broker::new();
    broker.subscribe("d", &ch("dbpedia"), dest.queue().clone()).unwrap();
    for (cycle, v) in [(1, 4), (2, 5)] {
        let mut cs = Changeset::new(cycle);
        cs.deleted_lines = vec![line(v - 1)];
        cs.updated_lines = vec![line(v)];
        source.process_changeset(&cs, &broker);
    }
    let first = dest.process_one().unwrap().unwrap();
    let second = dest.process_one().unwrap().unwrap();
    assert_eq!(first.outcome, Outcome::Applied);
    assert_eq!(second.outcome, Outcome::SkippedStale);
    let u = normalize_uri("http://ex.org/u").unwrap();
    let body = dest.replica_body(&u).unwrap().unwrap();
    assert_eq!(body, format!("{}\n", line(5)).into_bytes());
}

#[test]
fn duplicate_delivery_is_idempotent() {
    let cfg = WorkloadConfig {
        seed: 11,
        cycles: 20,
        total_events: Some(80),
        baseline_resources: 30,
        category_prob: 0.5,
        ..Default::default()
    };
    let w = generate_workload(&cfg).unwrap();
    let clock = VirtualClock::new();
    let mut source = Source::new(ch("dbpedia"), Arc::new(clock.clone()));
    source.load_baseline(&w.baseline);
    let before = source.store().latest_listing();
    let broker = Broker::new();
    let once = Destination::new(
        "once",
        Arc::new(clock.clone()),
        1_000,
        Box::new(MemoryReplica::new()),
        Arc::new(source.handle()),
    )
    .with_sleeper(Arc::new(NoSleep));
    let twice = Destination::new(
        "twice",
        Arc::new(clock),
        1_000,
        Box::new(MemoryReplica::new()),
        Arc::new(source.handle()),
    )
    .with_sleeper(Arc::new(NoSleep));
    broker.subscribe("once", &ch("dbpedia"), once.queue().clone()).unwrap();
    // subscribed on the all channel and every category: categorized events arrive three times
    broker
        .subscribe("twice", &ch("dbpedia"), twice.queue().clone())
        .unwrap();
    for cat in &cfg.categories {
        broker
            .subscribe("twice", &ch(&format!("dbpedia/{cat}")), twice.queue().clone())
            .unwrap();
    }
    for c in &w.cycles {
        source.process_changeset(&c.changeset, &broker);
    }
    while once.process_one().unwrap().is_some() {}
    while twice.process_one().unwrap().is_some() {}
    assert!(twice.counters().processed > once.counters().processed);
    assert_eq!(once.replica_digest_listing(), twice.replica_digest_listing());
    let after = source.store().latest_listing();
    let changed: BTreeSet<_> = changed_since(&before, &after);
    let expected: Vec<_> = after
        .into_iter()
        .filter(|(u, s)| changed.contains(u) && s.digest.is_some())
        .map(|(u, s)| (u, s.digest.unwrap()))
        .collect();
    assert_eq!(once.replica_digest_listing(), expected);
}

#[test]
fn workload_generation_is_deterministic() {
    let cfg = WorkloadConfig {
        seed: 21,
        cycles: 50,
        total_events: Some(500),
        baseline_resources: 100,
        ..Default::default()
    };
    let a = generate_workload(&cfg).unwrap();
    let b = generate_workload(&cfg).unwrap();
    assert_eq!(a.ops, b.ops);
    assert_eq!(a.baseline, b.baseline);
    let c = generate_workload(&WorkloadConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(a.ops, c.ops);
}
