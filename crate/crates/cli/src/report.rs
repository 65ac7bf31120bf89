//! Report emission under `<out>/<command>/`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reproducibility stamp embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub version: &'static str,
    pub config_hash: String,
    /// sha256 of each input file, keyed by role.
    pub datasets: BTreeMap<String, String>,
}

impl Stamp {
    pub fn new(config: &RunConfig, extra_inputs: &[(&str, &Path)]) -> io::Result<Stamp> {
        let mut datasets = BTreeMap::new();
        for (role, path) in config.datasets.files().into_iter().chain(extra_inputs.iter().copied()) {
            datasets.insert(role.to_string(), sha256_file(path)?);
        }
        Ok(Stamp {
            version: VERSION,
            config_hash: config.hash(),
            datasets,
        })
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Rounds every non-integral number to 4 decimal places.
pub fn round_fractions(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let r = (x * 1e4).round() / 1e4;
            if let Some(m) = serde_json::Number::from_f64(r) {
                *n = m;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_fractions),
        Value::Object(map) => map.values_mut().for_each(round_fractions),
        _ => {}
    }
}

/// Four-decimal rendering for CSV cells.
pub fn frac(x: f64) -> String {
    format!("{x:.4}")
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub struct ReportDir {
    dir: PathBuf,
    command: String,
    stamp: Stamp,
    started_ms: u128,
    written: Vec<String>,
}

impl ReportDir {
    pub fn create(out: &Path, command: &str, stamp: Stamp) -> io::Result<ReportDir> {
        let dir = out.join(command);
        fs::create_dir_all(&dir)?;
        Ok(ReportDir {
            dir,
            command: command.to_string(),
            stamp,
            started_ms: now_ms(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `report.json`: the stamp plus `result` with fractions rounded.
    pub fn write_report<T: Serialize>(&mut self, result: &T) -> anyhow::Result<()> {
        let mut result = serde_json::to_value(result)?;
        round_fractions(&mut result);
        let doc = json!({
            "command": self.command,
            "version": self.stamp.version,
            "config_hash": self.stamp.config_hash,
            "datasets": self.stamp.datasets,
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(self.path("report.json"), text)?;
        self.written.push("report.json".into());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        self.written.push(name.into());
        Ok(())
    }

    /// Streams a text artifact through `f`.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(name.into());
        Ok(())
    }

    /// Writes `run-info.json`, the only file carrying wall-clock time.
    pub fn finish(self) -> io::Result<PathBuf> {
        let info = json!({
            "command": self.command,
            "version": self.stamp.version,
            "started_unix_ms": self.started_ms as u64,
            "finished_unix_ms": now_ms() as u64,
            "files": self.written,
        });
        let mut text = serde_json::to_string_pretty(&info).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join("run-info.json"), text)?;
        Ok(self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_leaves_integers_alone() {
        let mut v = json!({"a": 0.123456, "b": [1, 2.00004, 0.99995], "c": 7});
        round_fractions(&mut v);
        assert_eq!(v, json!({"a": 0.1235, "b": [1, 2.0, 1.0], "c": 7}));
        assert_eq!(frac(1.0 / 3.0), "0.3333");
    }
}
