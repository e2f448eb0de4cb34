use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pushsync", version, about = "Push-based replica synchronization")]
pub struct Cli {
    /// Log filter used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "warn", env = "PUSHSYNC_LOG")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a channelized CN broker.
    Broker(BrokerArgs),
    /// Ingest changesets, publish CNs and serve resources.
    Source(SourceArgs),
    /// Subscribe to CNs and keep a replica up to date.
    Dest(DestArgs),
    /// Run a packaged experiment in virtual time.
    Run(RunArgs),
    /// Write a synthetic workload to disk.
    Generate(GenerateArgs),
    /// Compare a replica directory against a workload's final state.
    Diff(DiffArgs),
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:7070", env = "PUSHSYNC_ADDR")]
    pub addr: String,
    /// CNs buffered per subscriber connection before it is disconnected.
    #[arg(long, default_value_t = 65_536)]
    pub sink_capacity: usize,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Resource server listen address.
    #[arg(long, default_value = "127.0.0.1:7071", env = "PUSHSYNC_ADDR")]
    pub addr: String,
    /// Broker address.
    #[arg(long, default_value = "127.0.0.1:7070", env = "PUSHSYNC_BROKER")]
    pub broker: String,
    /// Workload directory with `baseline/` and `changesets/`.
    #[arg(long, env = "PUSHSYNC_DATA_DIR")]
    pub data_dir: PathBuf,
    /// All-changes channel.
    #[arg(long, default_value = "dbpedia", env = "PUSHSYNC_CHANNEL")]
    pub channel: String,
    #[arg(long, default_value_t = 30_000)]
    pub poll_interval_ms: u64,
    /// Stop polling after this many polls.
    #[arg(long)]
    pub max_polls: Option<u64>,
    /// Keep serving resources this long after the last poll, then exit.
    /// Serves until killed when unset.
    #[arg(long)]
    pub linger_ms: Option<u64>,
    /// How long to keep retrying the broker connection.
    #[arg(long, default_value_t = 10_000)]
    pub connect_timeout_ms: u64,
}

#[derive(Debug, Args)]
pub struct DestArgs {
    /// Broker address.
    #[arg(long, default_value = "127.0.0.1:7070", env = "PUSHSYNC_BROKER")]
    pub broker: String,
    /// Source resource server address.
    #[arg(long, default_value = "127.0.0.1:7071", env = "PUSHSYNC_SOURCE")]
    pub source: String,
    /// Replica directory.
    #[arg(long, env = "PUSHSYNC_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Channels to subscribe to; repeatable.
    #[arg(long = "channel", default_value = "dbpedia", env = "PUSHSYNC_CHANNEL")]
    pub channels: Vec<String>,
    #[arg(long, default_value = "dest")]
    pub name: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Queue statistics interval.
    #[arg(long, default_value_t = pushsync::destination::DEFAULT_INTERVAL_MS)]
    pub interval_ms: u64,
    #[arg(long, default_value_t = 10_000)]
    pub connect_timeout_ms: u64,
    /// Exit once at least one CN arrived and the queue stayed empty this long.
    #[arg(long)]
    pub idle_exit_ms: Option<u64>,
    /// Write per-interval queue statistics as CSV.
    #[arg(long, env = "PUSHSYNC_REPORT")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Six eight-hour bursty runs against a far and a near Destination.
    Lockstep,
    /// Twenty seeds of ten thousand CNs each, checked for zero diff.
    Accuracy,
    /// Changeset bytes against GET bytes.
    Payload,
    /// Real push against simulated push interaction counts.
    CompareArchitectures,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, env = "PUSHSYNC_PRESET", required_unless_present = "config")]
    pub preset: Option<Preset>,
    /// Workload file for a custom run; replaces the preset.
    #[arg(long, env = "PUSHSYNC_CONFIG", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Base seed; 1 for presets, the file's own seed for `--config`.
    #[arg(long, env = "PUSHSYNC_SEED")]
    pub seed: Option<u64>,
    /// Multiplies event totals.
    #[arg(long, default_value_t = 1.0, env = "PUSHSYNC_SCALE")]
    pub scale: f64,
    /// Keep far replicas on disk under this directory.
    #[arg(long, env = "PUSHSYNC_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Write CSV results here.
    #[arg(long, env = "PUSHSYNC_REPORT")]
    pub report: Option<PathBuf>,
    /// Feed window for the simulated push comparison.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long, env = "PUSHSYNC_DATA_DIR")]
    pub data_dir: PathBuf,
    #[arg(long, env = "PUSHSYNC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, env = "PUSHSYNC_SEED")]
    pub seed: Option<u64>,
    /// Multiplies the event total.
    #[arg(long, default_value_t = 1.0, env = "PUSHSYNC_SCALE")]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Workload directory with `baseline/` and `changesets/`.
    #[arg(long, env = "PUSHSYNC_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Replica directory written by `dest`.
    #[arg(long)]
    pub replica: PathBuf,
    /// Compare every URI, not only those the changesets touched.
    #[arg(long)]
    pub all: bool,
}
