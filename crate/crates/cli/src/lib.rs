//! Command-line front-end: subcommands, configuration and report emission.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{read_settings, RunConfig, Settings, CONFIG_ENV};

/// Exit status for a bad command line.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for any failure after the command line parsed.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "chokepoint", version, about = "Censorship chokepoint analysis over AS-level routing data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand. Each one overrides the same key
/// from the config file.
#[derive(Debug, Default, Args)]
pub struct GlobalOpts {
    /// `key = value` config file (falls back to $CHOKEPOINT_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding datasets under their standard file names.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub relationships: Option<PathBuf>,
    #[arg(long, global = true)]
    pub known_paths: Option<PathBuf>,
    #[arg(long, global = true)]
    pub prefix_origins: Option<PathBuf>,
    #[arg(long, global = true)]
    pub countries: Option<PathBuf>,
    #[arg(long, global = true)]
    pub resolvers: Option<PathBuf>,
    #[arg(long, global = true)]
    pub router_traces: Option<PathBuf>,
    #[arg(long, global = true)]
    pub aliases: Option<PathBuf>,
    #[arg(long, global = true)]
    pub targets: Option<PathBuf>,
    /// Report root; each command writes to `<out>/<command>/`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Home country code [default: IN].
    #[arg(long, global = true)]
    pub home: Option<String>,
    /// AS coverage threshold [default: 0.95].
    #[arg(long, global = true)]
    pub threshold: Option<String>,
    /// Router heavy-hitter threshold [default: 0.90].
    #[arg(long, global = true)]
    pub router_threshold: Option<String>,
    /// `rank` or `greedy` [default: rank].
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Count a path's own source AS as an interceptor [default: true].
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub count_source: Option<String>,
    /// Only the attacker's neighbours evaluate a fake route.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub neighbors_only: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<String>,
}

impl GlobalOpts {
    fn settings(&self) -> Settings {
        let mut s = Settings::new();
        let paths = [
            ("data_dir", &self.data_dir),
            ("relationships", &self.relationships),
            ("known_paths", &self.known_paths),
            ("prefix_origins", &self.prefix_origins),
            ("countries", &self.countries),
            ("resolvers", &self.resolvers),
            ("router_traces", &self.router_traces),
            ("aliases", &self.aliases),
            ("targets", &self.targets),
            ("out", &self.out),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                s.insert(k.into(), p.to_string_lossy().into_owned());
            }
        }
        let values = [
            ("home", &self.home),
            ("threshold", &self.threshold),
            ("router_threshold", &self.router_threshold),
            ("mode", &self.mode),
            ("count_source", &self.count_source),
            ("neighbors_only", &self.neighbors_only),
            ("seed", &self.seed),
            ("jobs", &self.jobs),
        ];
        for (k, v) in values {
            if let Some(v) = v {
                s.insert(k.into(), v.clone());
            }
        }
        s
    }

    /// Config file settings with flags merged on top.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let file = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut s = match file {
            Some(p) => read_settings(&p)?,
            None => Settings::new(),
        };
        let flags = self.settings();
        // a data dir on the command line replaces file-level dataset paths
        if flags.contains_key("data_dir") {
            for k in ["relationships", "known_paths", "prefix_origins", "countries", "resolvers", "router_traces", "aliases", "targets"] {
                s.remove(k);
            }
        }
        s.extend(flags);
        Ok(RunConfig::from_settings(&s)?)
    }
}

#[derive(Debug, Args)]
pub struct ScopeArgs {
    /// Only ASes registered in this country count as interceptors.
    #[arg(long)]
    pub scope: Option<String>,
    /// Only paths from sources registered in this country are counted.
    #[arg(long)]
    pub source_scope: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset checks.
    Ingest {
        #[command(subcommand)]
        action: IngestAction,
    },
    /// Infers routes from every AS to every target.
    Infer,
    /// Coverage curves (rank and greedy) of interceptor ASes.
    Coverage(ScopeArgs),
    /// Smallest key-AS set reaching the coverage threshold.
    RankAs(ScopeArgs),
    /// Paths a censor set intercepts, split by source country.
    Collateral {
        /// Comma-separated censor ASNs [default: every home-country AS].
        #[arg(long)]
        censors: Option<String>,
    },
    /// Filter router selection inside each traced AS.
    Routers {
        /// Replace router identities by their digests.
        #[arg(long)]
        redact: bool,
    },
    /// Interceptor coverage of paths towards resolver prefixes.
    DnsCoverage(ScopeArgs),
    /// Prefix hijack simulation.
    Hijack(HijackArgs),
    /// Active measurement.
    Probe {
        #[command(subcommand)]
        kind: ProbeKind,
    },
    /// Generates a synthetic dataset bundle.
    Synth(SynthArgs),
    /// Compares route inference against brute force on small random graphs.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        /// Graph size, at most 16.
        #[arg(long, default_value_t = 12)]
        nodes: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum IngestAction {
    /// Loads every configured dataset and cross-checks them.
    Validate,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct HijackArgs {
    #[command(subcommand)]
    pub rank: Option<HijackRank>,
    #[arg(long)]
    pub attacker: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated claimed path starting at the attacker [default: attacker only].
    #[arg(long, alias = "claim")]
    pub claimed_path: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum HijackRank {
    /// Origin-claim hijacks by the highest-degree ASes.
    Rank {
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Single target [default: every target].
        #[arg(long)]
        target: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProbeKind {
    /// Fetches a URL corpus and classifies each URL.
    Http {
        /// `<category>|<url>` lines.
        #[arg(long)]
        corpus: PathBuf,
        /// Block-page signatures, one per line.
        #[arg(long)]
        signatures: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 0)]
        retries: u32,
        #[arg(long, default_value_t = 5)]
        max_redirects: usize,
        /// Requests per second; 0 disables pacing.
        #[arg(long, default_value_t = 10.0)]
        rate: f64,
    },
    /// Sends one A query to each address and classifies the reply.
    Dns {
        /// One IPv4 address (optionally `:port`) per line.
        #[arg(long)]
        addresses: PathBuf,
        #[arg(long, default_value = "www.example.com")]
        name: String,
        #[arg(long, default_value_t = 2_000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 50.0)]
        rate: f64,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Total AS count.
    #[arg(long, default_value_t = 200)]
    pub size: usize,
    /// Number of target prefixes.
    #[arg(long)]
    pub n_targets: Option<usize>,
    /// Country share, e.g. `IN=0.6`; repeatable.
    #[arg(long = "country", value_name = "CC=SHARE")]
    pub country_mix: Vec<String>,
    /// JSON generator spec; overrides --size.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status. Failures print a JSON error object on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.kind().to_string()}}));
            return EXIT_USAGE;
        }
    };
    match commands::execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            let kind = commands::error_kind(&e);
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({"error": {"kind": kind, "message": chain.join(": ")}}));
            EXIT_FAILURE
        }
    }
}
