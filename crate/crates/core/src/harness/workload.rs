//! Deterministic workload generation: a baseline dump plus one changeset
//! per poll cycle.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::config::{ConfigError, Profile, WorkloadConfig};
use crate::changeset::{Changeset, FeedError, ScheduledFeed};
use crate::notification::EventKind;
use crate::source::KindCounts;
use crate::uri::{normalize_uri, NormalizedUri};

const RESOURCE_BASE: &str = "http://dbpedia.org/resource/";
const PROPERTY_BASE: &str = "http://dbpedia.org/property/";

/// One generated event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub cycle_id: u64,
    pub kind: EventKind,
    pub uri: NormalizedUri,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledChangeset {
    pub available_at_ms: u64,
    pub changeset: Changeset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub config: WorkloadConfig,
    /// Cycle 0: the dump the Source starts from.
    pub baseline: Changeset,
    /// Cycles `1..=config.cycles`, in order.
    pub cycles: Vec<ScheduledChangeset>,
    pub ops: Vec<OpRecord>,
}

impl Workload {
    pub fn total_events(&self) -> u64 {
        self.ops.len() as u64
    }

    pub fn kind_counts(&self) -> KindCounts {
        let mut k = KindCounts::default();
        for op in &self.ops {
            k.add(op.kind);
        }
        k
    }

    pub fn events_per_cycle(&self) -> Vec<u64> {
        let mut counts = vec![0; self.cycles.len()];
        for op in &self.ops {
            counts[(op.cycle_id - 1) as usize] += 1;
        }
        counts
    }

    pub fn changeset_bytes(&self) -> u64 {
        self.cycles.iter().map(|c| c.changeset.byte_len()).sum()
    }

    pub fn feed(&self) -> ScheduledFeed {
        ScheduledFeed::new(self.cycles.iter().map(|c| (c.available_at_ms, c.changeset.clone())))
    }

    /// URIs created or updated exactly once during the run and never
    /// deleted; dropping their only CN leaves a Destination out of sync.
    pub fn single_touch_live(&self) -> Vec<NormalizedUri> {
        let mut touches: BTreeMap<&NormalizedUri, (u32, bool)> = BTreeMap::new();
        for op in &self.ops {
            let e = touches.entry(&op.uri).or_default();
            e.0 += 1;
            e.1 |= op.kind == EventKind::Delete;
        }
        touches
            .into_iter()
            .filter(|(_, (n, deleted))| *n == 1 && !deleted)
            .map(|(u, _)| u.clone())
            .collect()
    }

    /// Writes `baseline/` and `changesets/` under `dir`, plus `workload.conf`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), FeedError> {
        self.baseline.write_to_dir(&dir.join("baseline"))?;
        let changesets = dir.join("changesets");
        for c in &self.cycles {
            c.changeset.write_to_dir(&changesets)?;
        }
        let conf = dir.join("workload.conf");
        fs::write(&conf, self.config.to_text()).map_err(|source| FeedError::Io { path: conf, source })
    }
}

/// Generator state for one resource.
struct Model {
    subject: NormalizedUri,
    lines: Vec<String>,
}

struct Generator<'a> {
    cfg: &'a WorkloadConfig,
    rng: ChaCha8Rng,
    resources: Vec<Model>,
    live: Vec<usize>,
    live_pos: HashMap<usize, usize>,
    next_property: u64,
}

fn resource_name(idx: usize) -> String {
    match idx % 8 {
        0 => format!("Caf%C3%A9_{idx}"),
        1 => format!("Album_({idx})"),
        2 => format!("Jos%C3%A9_Mar%C3%ADa_{idx}"),
        3 => format!("AC%2FDC_{idx}"),
        4 => format!("Q&A_{idx}"),
        5 => format!("M%C3%BCnchen_{idx}"),
        _ => format!("Resource_{idx}"),
    }
}

fn lowercase_escapes(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if c == '%' {
            for _ in 0..2 {
                if let Some(h) = chars.next() {
                    out.push(h.to_ascii_lowercase());
                }
            }
        }
    }
    out
}

fn decode_non_ascii(s: &str) -> Option<String> {
    let replaced = s
        .replace("%C3%A9", "\u{e9}")
        .replace("%C3%AD", "\u{ed}")
        .replace("%C3%BC", "\u{fc}");
    (replaced != s).then_some(replaced)
}

fn encode_first_unreserved(s: &str) -> String {
    let tail_start = s.find("/resource/").map(|i| i + "/resource/".len()).unwrap_or(0);
    let bytes = s.as_bytes();
    match (tail_start..bytes.len()).find(|&i| bytes[i].is_ascii_alphanumeric()) {
        Some(i) => format!("{}%{:02X}{}", &s[..i], bytes[i], &s[i + 1..]),
        None => s.to_owned(),
    }
}

/// An equivalent spelling of a normalized URI.
pub fn spelling_variant<R: Rng + ?Sized>(uri: &NormalizedUri, rng: &mut R) -> String {
    let s = uri.as_str();
    match rng.random_range(0..3) {
        0 if s.contains('%') => lowercase_escapes(s),
        1 => decode_non_ascii(s).unwrap_or_else(|| encode_first_unreserved(s)),
        _ => encode_first_unreserved(s),
    }
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a WorkloadConfig) -> Self {
        Generator {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            resources: Vec::new(),
            live: Vec::new(),
            live_pos: HashMap::new(),
            next_property: 0,
        }
    }

    fn spell(&mut self, subject: &NormalizedUri) -> String {
        if self.rng.random_bool(self.cfg.spelling_variation_prob) {
            spelling_variant(subject, &mut self.rng)
        } else {
            subject.as_str().to_owned()
        }
    }

    fn line(&mut self, subject: &NormalizedUri, rest: &str) -> String {
        format!("<{}> {rest}", self.spell(subject))
    }

    fn fresh_rest(&mut self) -> String {
        const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
        let len = self.rng.random_range(10..=80);
        let text: String = (0..len)
            .map(|_| ALPHABET[self.rng.random_range(0..ALPHABET.len())] as char)
            .collect();
        let p = self.next_property;
        self.next_property += 1;
        format!("<{PROPERTY_BASE}p{p}> \"{text}\" .")
    }

    fn mark_live(&mut self, idx: usize) {
        self.live_pos.insert(idx, self.live.len());
        self.live.push(idx);
    }

    fn mark_dead(&mut self, idx: usize) {
        let pos = self.live_pos.remove(&idx).expect("resource is live");
        self.live.swap_remove(pos);
        if let Some(&moved) = self.live.get(pos) {
            self.live_pos.insert(moved, pos);
        }
    }

    fn create(&mut self, cs: &mut Changeset) -> NormalizedUri {
        let idx = self.resources.len();
        let subject =
            normalize_uri(&format!("{RESOURCE_BASE}{}", resource_name(idx))).expect("generated URIs are valid");
        let n = self.rng.random_range(self.cfg.lines_min..=self.cfg.lines_max);
        let mut lines = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let rest = self.fresh_rest();
            cs.updated_lines.push(self.line(&subject, &rest));
            lines.push(rest);
        }
        if !self.cfg.categories.is_empty() && self.rng.random_bool(self.cfg.category_prob) {
            let c = &self.cfg.categories[self.rng.random_range(0..self.cfg.categories.len())];
            let channel = self.cfg.all_channel.child(c).expect("validated category");
            cs.categories.push((subject.as_str().to_owned(), channel));
        }
        self.resources.push(Model {
            subject: subject.clone(),
            lines,
        });
        self.mark_live(idx);
        subject
    }

    fn update(&mut self, idx: usize, cs: &mut Changeset) {
        let subject = self.resources[idx].subject.clone();
        let n = self.resources[idx].lines.len();
        let changed = ((self.cfg.changed_fraction * n as f64).round() as usize).max(1);
        let mut removed = changed / 2 + usize::from(changed % 2 == 1 && self.rng.random_bool(0.5));
        removed = removed.min(n - 1);
        let added = (changed - removed.min(changed)).max(usize::from(removed == 0));
        let mut picks = index::sample(&mut self.rng, n, removed).into_vec();
        picks.sort_unstable_by(|a, b| b.cmp(a));
        for i in picks {
            let rest = self.resources[idx].lines.swap_remove(i);
            cs.deleted_lines.push(self.line(&subject, &rest));
        }
        for _ in 0..added {
            let rest = self.fresh_rest();
            cs.updated_lines.push(self.line(&subject, &rest));
            self.resources[idx].lines.push(rest);
        }
    }

    fn delete(&mut self, idx: usize, cs: &mut Changeset) {
        let subject = self.resources[idx].subject.clone();
        let lines = std::mem::take(&mut self.resources[idx].lines);
        for rest in &lines {
            cs.deleted_lines.push(self.line(&subject, rest));
        }
        self.mark_dead(idx);
    }

    /// A live resource not yet touched in this cycle.
    fn pick_untouched(&mut self, touched: &HashSet<usize>) -> Option<usize> {
        if touched.len() >= self.live.len() {
            return None;
        }
        loop {
            let idx = self.live[self.rng.random_range(0..self.live.len())];
            if !touched.contains(&idx) {
                return Some(idx);
            }
        }
    }

    fn sample_kind(&mut self) -> EventKind {
        let m = self.cfg.kind_mix;
        let u: f64 = self.rng.random();
        if u < m.create {
            EventKind::Create
        } else if u < m.create + m.delete {
            EventKind::Delete
        } else {
            EventKind::Update
        }
    }

    fn cycle_counts(&mut self) -> Vec<u64> {
        let cycles = self.cfg.cycles as usize;
        match &self.cfg.profile {
            Profile::Scripted(counts) => {
                let mut v = counts.clone();
                v.resize(cycles, 0);
                v
            }
            Profile::Random {
                idle_prob,
                spike_prob,
                spike_factor,
            } => {
                let weights: Vec<f64> = (0..cycles)
                    .map(|_| {
                        let u: f64 = self.rng.random();
                        let base: f64 = Exp1.sample(&mut self.rng);
                        if u < *idle_prob {
                            0.0
                        } else if u < idle_prob + spike_prob {
                            spike_factor * (1.0 + base)
                        } else {
                            base
                        }
                    })
                    .collect();
                let mut counts = allocate(self.cfg.target_events(), &weights);
                spill(&mut counts, self.cfg.max_events_per_cycle);
                counts
            }
        }
    }
}

/// Splits `total` across `weights` proportionally, largest remainder first.
/// All-zero weights fall back to equal shares.
pub fn allocate(total: u64, weights: &[f64]) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.to_vec()
    } else {
        vec![1.0; weights.len()]
    };
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Caps every entry at `cap`, moving the excess forward, then backward.
fn spill(counts: &mut [u64], cap: u64) {
    let mut carry = 0;
    for c in counts.iter_mut() {
        let v = *c + carry;
        *c = v.min(cap);
        carry = v - *c;
    }
    for c in counts.iter_mut().rev() {
        if carry == 0 {
            break;
        }
        let room = cap - *c;
        let moved = room.min(carry);
        *c += moved;
        carry -= moved;
    }
    debug_assert_eq!(carry, 0, "validated: total fits under the cap");
}

/// Builds a workload; the same configuration always yields the same one.
pub fn generate_workload(cfg: &WorkloadConfig) -> Result<Workload, ConfigError> {
    cfg.validate()?;
    let mut g = Generator::new(cfg);
    let mut baseline = Changeset::new(0);
    for _ in 0..cfg.baseline_resources {
        g.create(&mut baseline);
    }
    let counts = g.cycle_counts();
    let mut cycles = Vec::with_capacity(counts.len());
    let mut ops = Vec::new();
    for (i, &count) in counts.iter().enumerate() {
        let cycle_id = i as u64 + 1;
        let mut cs = Changeset::new(cycle_id);
        let mut touched = HashSet::new();
        for _ in 0..count {
            let mut kind = g.sample_kind();
            let target = match kind {
                EventKind::Create => None,
                _ => g.pick_untouched(&touched),
            };
            if target.is_none() {
                kind = EventKind::Create;
            }
            let uri = match (kind, target) {
                (EventKind::Update, Some(idx)) => {
                    g.update(idx, &mut cs);
                    touched.insert(idx);
                    g.resources[idx].subject.clone()
                }
                (EventKind::Delete, Some(idx)) => {
                    g.delete(idx, &mut cs);
                    touched.insert(idx);
                    g.resources[idx].subject.clone()
                }
                _ => {
                    let uri = g.create(&mut cs);
                    touched.insert(g.resources.len() - 1);
                    uri
                }
            };
            ops.push(OpRecord { cycle_id, kind, uri });
        }
        cycles.push(ScheduledChangeset {
            available_at_ms: i as u64 * cfg.poll_interval_ms,
            changeset: cs,
        });
    }
    Ok(Workload {
        config: cfg.clone(),
        baseline,
        cycles,
        ops,
    })
}

/// Latest expected body lines per live URI, rebuilt from the changesets
/// alone.
pub fn replay_lines(workload: &Workload) -> BTreeMap<NormalizedUri, BTreeSet<String>> {
    use crate::resource::TripleLine;
    let mut state: BTreeMap<NormalizedUri, BTreeSet<String>> = BTreeMap::new();
    for cs in std::iter::once(&workload.baseline).chain(workload.cycles.iter().map(|c| &c.changeset)) {
        for l in &cs.deleted_lines {
            let t = TripleLine::parse(l).expect("generated lines parse");
            if let Some(set) = state.get_mut(&t.subject) {
                set.remove(&t.render());
            }
        }
        for l in &cs.updated_lines {
            let t = TripleLine::parse(l).expect("generated lines parse");
            state.entry(t.subject.clone()).or_default().insert(t.render());
        }
        state.retain(|_, s| !s.is_empty());
    }
    state
}
