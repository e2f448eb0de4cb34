//! Workload configuration, read from flat `key=value` files.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::channel::ChannelPath;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Share of each event kind; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindMix {
    pub create: f64,
    pub update: f64,
    pub delete: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            create: 0.0003,
            update: 0.9937,
            delete: 0.006,
        }
    }
}

/// How events spread over cycles.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// Each cycle is idle with `idle_prob`, a spike with `spike_prob`
    /// (weight times `spike_factor`), otherwise ordinary.
    Random {
        idle_prob: f64,
        spike_prob: f64,
        spike_factor: f64,
    },
    /// Exact event count per cycle; later cycles are idle.
    Scripted(Vec<u64>),
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Random {
            idle_prob: 0.5,
            spike_prob: 0.02,
            spike_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub cycles: u64,
    pub poll_interval_ms: u64,
    /// Length of a measurement interval.
    pub interval_ms: u64,
    /// Exact number of events for the random profile; overrides the mean.
    pub total_events: Option<u64>,
    pub mean_events_per_cycle: f64,
    /// Random-profile cap; excess spills into following cycles.
    pub max_events_per_cycle: u64,
    pub profile: Profile,
    pub kind_mix: KindMix,
    pub baseline_resources: u64,
    pub lines_min: u64,
    pub lines_max: u64,
    /// Fraction of a resource's lines an update touches.
    pub changed_fraction: f64,
    pub categories: Vec<String>,
    pub category_prob: f64,
    pub all_channel: ChannelPath,
    /// Chance that a changeset line spells its subject in a non-canonical
    /// but equivalent way.
    pub spelling_variation_prob: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 1,
            cycles: 960,
            poll_interval_ms: 30_000,
            interval_ms: 300_000,
            total_events: None,
            // two changed graphs per second over a 30 s cycle
            mean_events_per_cycle: 60.0,
            max_events_per_cycle: 400,
            profile: Profile::default(),
            kind_mix: KindMix::default(),
            baseline_resources: 3000,
            lines_min: 10,
            lines_max: 40,
            changed_fraction: 0.1,
            categories: ["music", "film", "sport", "place", "person"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            category_prob: 0.1,
            all_channel: "dbpedia".parse().expect("valid channel"),
            spelling_variation_prob: 0.05,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl WorkloadConfig {
    pub fn duration_ms(&self) -> u64 {
        self.cycles * self.poll_interval_ms
    }

    /// Number of complete measurement intervals in the run.
    pub fn intervals(&self) -> u64 {
        self.duration_ms() / self.interval_ms.max(1)
    }

    /// Target event count for the random profile.
    pub fn target_events(&self) -> u64 {
        self.total_events
            .unwrap_or_else(|| (self.mean_events_per_cycle * self.cycles as f64).round() as u64)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.poll_interval_ms == 0 || self.interval_ms == 0 {
            return invalid("poll and measurement intervals must be positive");
        }
        let m = self.kind_mix;
        if ![m.create, m.update, m.delete].iter().all(|p| prob(*p))
            || (m.create + m.update + m.delete - 1.0).abs() > 1e-9
        {
            return invalid("kind mix must be probabilities summing to 1");
        }
        if !prob(self.category_prob) || !prob(self.spelling_variation_prob) || !prob(self.changed_fraction) {
            return invalid("probabilities must lie in [0, 1]");
        }
        if self.lines_min == 0 || self.lines_min > self.lines_max {
            return invalid("need 1 <= lines_min <= lines_max");
        }
        if !(self.mean_events_per_cycle >= 0.0 && self.mean_events_per_cycle.is_finite()) {
            return invalid("mean_events_per_cycle must be finite and non-negative");
        }
        match &self.profile {
            Profile::Random {
                idle_prob,
                spike_prob,
                spike_factor,
            } => {
                if !prob(*idle_prob) || !prob(*spike_prob) || idle_prob + spike_prob > 1.0 {
                    return invalid("idle_prob + spike_prob must be a probability");
                }
                if !(*spike_factor >= 1.0 && spike_factor.is_finite()) {
                    return invalid("spike_factor must be >= 1");
                }
                if self.target_events() > 0 && self.max_events_per_cycle == 0 {
                    return invalid("max_events_per_cycle must be positive");
                }
                if self.target_events() > self.max_events_per_cycle.saturating_mul(self.cycles) {
                    return invalid("more events than cycles x max_events_per_cycle");
                }
                if self.target_events() > 0 && *idle_prob >= 1.0 {
                    return invalid("every cycle idle but events requested");
                }
            }
            Profile::Scripted(counts) => {
                if counts.len() as u64 > self.cycles {
                    return invalid("more scripted counts than cycles");
                }
            }
        }
        for c in &self.categories {
            self.all_channel
                .child(c)
                .map_err(|_| ConfigError::Invalid(format!("bad category name {c:?}")))?;
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = WorkloadConfig::default();
        let mut profile_kind = None;
        let (mut idle, mut spike, mut factor) = match cfg.profile {
            Profile::Random {
                idle_prob,
                spike_prob,
                spike_factor,
            } => (idle_prob, spike_prob, spike_factor),
            Profile::Scripted(_) => unreachable!("default profile is random"),
        };
        let mut scripted = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_owned(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => cfg.seed = parse(key, value)?,
                "cycles" => cfg.cycles = parse(key, value)?,
                "poll_interval_ms" => cfg.poll_interval_ms = parse(key, value)?,
                "interval_ms" => cfg.interval_ms = parse(key, value)?,
                "total_events" => cfg.total_events = Some(parse(key, value)?),
                "mean_events_per_cycle" => cfg.mean_events_per_cycle = parse(key, value)?,
                "max_events_per_cycle" => cfg.max_events_per_cycle = parse(key, value)?,
                "profile" => match value {
                    "random" | "scripted" => profile_kind = Some(value.to_owned()),
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                },
                "idle_prob" => idle = parse(key, value)?,
                "spike_prob" => spike = parse(key, value)?,
                "spike_factor" => factor = parse(key, value)?,
                "scripted_counts" => {
                    scripted = list(value).map(|v| parse(key, v)).collect::<Result<_, _>>()?;
                }
                "mix_create" => cfg.kind_mix.create = parse(key, value)?,
                "mix_update" => cfg.kind_mix.update = parse(key, value)?,
                "mix_delete" => cfg.kind_mix.delete = parse(key, value)?,
                "baseline_resources" => cfg.baseline_resources = parse(key, value)?,
                "lines_min" => cfg.lines_min = parse(key, value)?,
                "lines_max" => cfg.lines_max = parse(key, value)?,
                "changed_fraction" => cfg.changed_fraction = parse(key, value)?,
                "categories" => cfg.categories = list(value).map(str::to_owned).collect(),
                "category_prob" => cfg.category_prob = parse(key, value)?,
                "all_channel" => cfg.all_channel = parse(key, value)?,
                "spelling_variation_prob" => cfg.spelling_variation_prob = parse(key, value)?,
                _ => return Err(ConfigError::UnknownKey(key.to_owned())),
            }
        }
        let scripted_profile = match profile_kind.as_deref() {
            Some("scripted") => true,
            Some(_) => false,
            None => !scripted.is_empty(),
        };
        cfg.profile = if scripted_profile {
            Profile::Scripted(scripted)
        } else {
            Profile::Random {
                idle_prob: idle,
                spike_prob: spike,
                spike_factor: factor,
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration so that [`WorkloadConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "cycles={}", self.cycles);
        let _ = writeln!(s, "poll_interval_ms={}", self.poll_interval_ms);
        let _ = writeln!(s, "interval_ms={}", self.interval_ms);
        if let Some(t) = self.total_events {
            let _ = writeln!(s, "total_events={t}");
        }
        let _ = writeln!(s, "mean_events_per_cycle={}", self.mean_events_per_cycle);
        let _ = writeln!(s, "max_events_per_cycle={}", self.max_events_per_cycle);
        match &self.profile {
            Profile::Random {
                idle_prob,
                spike_prob,
                spike_factor,
            } => {
                let _ = writeln!(s, "profile=random");
                let _ = writeln!(s, "idle_prob={idle_prob}");
                let _ = writeln!(s, "spike_prob={spike_prob}");
                let _ = writeln!(s, "spike_factor={spike_factor}");
            }
            Profile::Scripted(counts) => {
                let _ = writeln!(s, "profile=scripted");
                let joined: Vec<String> = counts.iter().map(u64::to_string).collect();
                let _ = writeln!(s, "scripted_counts={}", joined.join(","));
            }
        }
        let _ = writeln!(s, "mix_create={}", self.kind_mix.create);
        let _ = writeln!(s, "mix_update={}", self.kind_mix.update);
        let _ = writeln!(s, "mix_delete={}", self.kind_mix.delete);
        let _ = writeln!(s, "baseline_resources={}", self.baseline_resources);
        let _ = writeln!(s, "lines_min={}", self.lines_min);
        let _ = writeln!(s, "lines_max={}", self.lines_max);
        let _ = writeln!(s, "changed_fraction={}", self.changed_fraction);
        let _ = writeln!(s, "categories={}", self.categories.join(","));
        let _ = writeln!(s, "category_prob={}", self.category_prob);
        let _ = writeln!(s, "all_channel={}", self.all_channel);
        let _ = writeln!(s, "spelling_variation_prob={}", self.spelling_variation_prob);
        s
    }
}

impl fmt::Display for WorkloadConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
