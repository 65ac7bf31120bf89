//! Run configuration: a `key = value` file layered under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use chokepoint_core::chokepoint::SelectionMode;
use chokepoint_core::ingest::DatasetPaths;
use chokepoint_core::model::CountryCode;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Consulted when no `--config` flag is given.
pub const CONFIG_ENV: &str = "CHOKEPOINT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{role} file {path} does not exist")]
    MissingFile { role: String, path: PathBuf },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

const PATH_KEYS: &[&str] = &[
    "data_dir",
    "relationships",
    "known_paths",
    "prefix_origins",
    "countries",
    "resolvers",
    "router_traces",
    "aliases",
    "targets",
    "out",
];

const VALUE_KEYS: &[&str] = &[
    "home",
    "threshold",
    "router_threshold",
    "mode",
    "count_source",
    "neighbors_only",
    "seed",
    "jobs",
];

/// Every key a config file may set.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    PATH_KEYS.iter().chain(VALUE_KEYS).copied()
}

/// Raw settings by key. Later layers are merged over earlier ones.
pub type Settings = BTreeMap<String, String>;

/// Parses `key = value` lines. `#` starts a comment line. Relative paths are
/// taken relative to `base`.
pub fn parse_settings(text: &str, origin: &Path, base: &Path) -> Result<Settings, ConfigError> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ConfigError::Line {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim().replace('-', "_");
        let value = value.trim().trim_matches('"').to_string();
        if !known_keys().any(|k| k == key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        let value = if PATH_KEYS.contains(&key.as_str()) && Path::new(&value).is_relative() {
            base.join(&value).to_string_lossy().into_owned()
        } else {
            value
        };
        out.insert(key, value);
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Settings, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_settings(&text, path, base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub datasets: DatasetPaths,
    pub home: CountryCode,
    /// AS coverage threshold.
    pub threshold: f64,
    pub router_threshold: f64,
    pub mode: SelectionMode,
    pub count_source: bool,
    pub neighbors_only: bool,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            datasets: DatasetPaths::default(),
            home: "IN".parse().expect("valid code"),
            threshold: 0.95,
            router_threshold: chokepoint_core::intraas::DEFAULT_ROUTER_THRESHOLD,
            mode: SelectionMode::Rank,
            count_source: true,
            neighbors_only: false,
            out: PathBuf::from("out"),
            seed: 1,
            jobs: None,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(key, format!("expected a boolean, got `{v}`"))),
    }
}

fn parse_threshold(key: &str, v: &str) -> Result<f64, ConfigError> {
    let t: f64 = v
        .parse()
        .map_err(|_| invalid(key, format!("expected a number, got `{v}`")))?;
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(invalid(key, format!("{t} is outside (0, 1]")))
    }
}

pub fn parse_mode(v: &str) -> Result<SelectionMode, ConfigError> {
    match v {
        "rank" => Ok(SelectionMode::Rank),
        "greedy" => Ok(SelectionMode::Greedy),
        _ => Err(invalid("mode", format!("expected `rank` or `greedy`, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        for (key, v) in s {
            match key.as_str() {
                "home" => c.home = v.parse().map_err(|e| invalid(key, format!("{e}")))?,
                "threshold" | "router_threshold" => {
                    let t = parse_threshold(key, v)?;
                    if key == "threshold" {
                        c.threshold = t;
                    } else {
                        c.router_threshold = t;
                    }
                }
                "mode" => c.mode = parse_mode(v)?,
                "count_source" => c.count_source = parse_bool(key, v)?,
                "neighbors_only" => c.neighbors_only = parse_bool(key, v)?,
                "seed" => c.seed = v.parse().map_err(|_| invalid(key, format!("expected an integer, got `{v}`")))?,
                "jobs" => {
                    let j: usize = v
                        .parse()
                        .map_err(|_| invalid(key, format!("expected an integer, got `{v}`")))?;
                    if j == 0 {
                        return Err(invalid(key, "must be at least 1"));
                    }
                    c.jobs = Some(j);
                }
                "out" => c.out = PathBuf::from(v),
                _ => {}
            }
        }
        if let Some(dir) = s.get("data_dir") {
            let dir = Path::new(dir);
            if !dir.is_dir() {
                return Err(ConfigError::MissingFile {
                    role: "data_dir".into(),
                    path: dir.to_path_buf(),
                });
            }
            c.datasets = DatasetPaths::in_dir(dir);
        }
        let d = &mut c.datasets;
        for (key, slot) in [
            ("relationships", &mut d.relationships),
            ("known_paths", &mut d.known_paths),
            ("prefix_origins", &mut d.prefix_origins),
            ("countries", &mut d.countries),
            ("resolvers", &mut d.resolvers),
            ("router_traces", &mut d.router_traces),
            ("aliases", &mut d.aliases),
            ("targets", &mut d.targets),
        ] {
            if let Some(p) = s.get(key) {
                *slot = Some(PathBuf::from(p));
            }
        }
        for (role, path) in c.datasets.files() {
            if !path.is_file() {
                return Err(ConfigError::MissingFile {
                    role: role.to_string(),
                    path: path.to_path_buf(),
                });
            }
        }
        Ok(c)
    }

    /// Digest of every setting that can change a result. Paths, output
    /// location and parallelism are left out; dataset contents are
    /// checksummed separately.
    pub fn hash(&self) -> String {
        let mut canon = String::new();
        let mode = match self.mode {
            SelectionMode::Rank => "rank",
            SelectionMode::Greedy => "greedy",
        };
        let _ = writeln!(canon, "home={}", self.home);
        let _ = writeln!(canon, "threshold={}", self.threshold);
        let _ = writeln!(canon, "router_threshold={}", self.router_threshold);
        let _ = writeln!(canon, "mode={mode}");
        let _ = writeln!(canon, "count_source={}", self.count_source);
        let _ = writeln!(canon, "neighbors_only={}", self.neighbors_only);
        let _ = writeln!(canon, "seed={}", self.seed);
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Result<Settings, ConfigError> {
        parse_settings(text, Path::new("test.conf"), Path::new("/data"))
    }

    #[test]
    fn parses_keys_and_resolves_paths() {
        let s = settings("# run\nthreshold = 0.9\nmode=greedy\nout = reports\nhome = \"PK\"\n").unwrap();
        assert_eq!(s["out"], "/data/reports");
        let c = RunConfig::from_settings(&s).unwrap();
        assert_eq!(c.threshold, 0.9);
        assert_eq!(c.mode, SelectionMode::Greedy);
        assert_eq!(c.home.to_string(), "PK");
        assert_eq!(c.out, PathBuf::from("/data/reports"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(settings("bogus = 1"), Err(ConfigError::Line { line: 1, .. })));
        assert!(matches!(settings("threshold"), Err(ConfigError::Line { .. })));
        for text in ["threshold = 0", "threshold = 1.5", "jobs = 0", "count_source = maybe", "mode = best"] {
            let s = settings(text).unwrap();
            assert!(RunConfig::from_settings(&s).is_err(), "{text}");
        }
        let s = settings("relationships = missing.txt").unwrap();
        assert!(matches!(RunConfig::from_settings(&s), Err(ConfigError::MissingFile { .. })));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: "elsewhere".into(),
            jobs: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            threshold: 0.9,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }
}
