//! CSV writing and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Seventeen significant digits; NaN and infinities as `NaN`, `inf`, `-inf`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

pub struct Table {
    header: Vec<&'static str>,
    body: String,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), body: String::new() }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.header.len());
        let cells: Vec<String> = values.iter().map(|v| fmt_float(*v)).collect();
        let _ = writeln!(self.body, "{}", cells.join(","));
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }
}

/// Fails early, before any work, if `path` cannot be created.
pub fn check_writable(path: &Path) -> Result<(), Failure> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if path.as_os_str().is_empty() || path.is_dir() || !parent.is_dir() {
        return Err(Failure::Config(anyhow!("cannot write to `{}`", path.display())));
    }
    Ok(())
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing `{}`", path.display())).map_err(Failure::Config)
}

/// Writes to `path` or, without one, to stdout.
pub fn emit(path: Option<&Path>, text: &str, outputs: &mut Vec<String>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            write_file(p, text)?;
            outputs.push(p.display().to_string());
            Ok(())
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Failure::Config(e.into()))?;
            outputs.push("<stdout>".into());
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub artifact_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
}

/// SHA-256 of the compact JSON. Object keys serialize in sorted order, so the
/// hash does not depend on the order they were inserted.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    config: Value,
    seed: Option<u64>,
    started: String,
}

impl ManifestBuilder {
    pub fn start(config: Value, seed: Option<u64>) -> Self {
        Self { config, seed, started: now() }
    }

    /// Writes the manifest to `target`, next to `out` as `<out>.manifest.json`,
    /// or to stderr when neither is given.
    pub fn finish(self, target: Option<&Path>, out: Option<&Path>, mut outputs: Vec<String>) -> Result<(), Failure> {
        let path: Option<PathBuf> = target.map(Path::to_path_buf).or_else(|| {
            out.map(|o| {
                let mut s = o.as_os_str().to_owned();
                s.push(".manifest.json");
                PathBuf::from(s)
            })
        });
        if let Some(p) = &path {
            outputs.push(p.display().to_string());
        }
        let manifest = RunManifest {
            command_line: std::env::args().collect(),
            config_hash: config_hash(&self.config),
            config: self.config,
            seed: self.seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started,
            finished: now(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Config(e.into()))? + "\n";
        match path {
            Some(p) => write_file(&p, &text),
            None => {
                eprint!("{text}");
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"beta": 1.0, "model": "dh", "d": 1}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"d": 1, "model": "dh", "beta": 1.0}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&json!({"beta": 2.0, "model": "dh", "d": 1})));
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 2.0 / 3.0, 1e-300, -123456.789, 0.0] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_float(f64::NAN), "NaN");
    }

    #[test]
    fn table_has_header() {
        let mut t = Table::new(&["a", "b"]);
        t.row(&[1.0, 2.0]);
        assert_eq!(t.render(), "a,b\n1.0000000000000000e0,2.0000000000000000e0\n");
    }
}
