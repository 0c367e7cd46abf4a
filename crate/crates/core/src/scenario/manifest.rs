//! Run manifests: what was run, what it produced (with checksums) and how
//! the embedded thresholds came out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::MfptRow;
use crate::error::{Error, Result};
use crate::scenario::config::{ScenarioConfig, ScenarioKind};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Full,
    /// Ψ evolution and the Smoluchowski solver only.
    FpOnly,
    /// Ψ evolution and the Langevin ensemble only.
    EnsembleOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    AtMost,
    AtLeast,
    Above,
}

impl Relation {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::Below => value < threshold,
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
            Relation::Above => value > threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Below => "<",
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
        }
    }
}

/// One embedded threshold and its outcome; `passed` is `None` when the run
/// mode did not produce the metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub metric: String,
    pub value: Option<f64>,
    pub relation: Relation,
    pub threshold: f64,
    pub passed: Option<bool>,
}

impl Check {
    pub fn evaluate(name: &str, metric: &str, value: Option<f64>, relation: Relation, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            metric: metric.to_string(),
            value,
            relation,
            threshold,
            passed: value.map(|v| relation.holds(v, threshold)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub scenario: ScenarioKind,
    pub mode: RunMode,
    pub config: ScenarioConfig,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
    pub metrics: BTreeMap<String, f64>,
    pub mfpt: Vec<MfptRow>,
    /// `(jumps, trajectories)` pairs, when wells are defined.
    pub jump_counts: Vec<(usize, usize)>,
    pub checks: Vec<Check>,
    /// Every evaluated check passed.
    pub passed: bool,
}

impl RunManifest {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.passed == Some(false))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The manifest as JSON without its timing field: everything a rerun
    /// with the same configuration and seed must reproduce exactly.
    pub fn reproducible_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("manifest serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("wall_clock_seconds");
        }
        v
    }

    /// Files whose checksum or size no longer matches, with a reason each.
    pub fn verify(&self, dir: &Path) -> Vec<(String, String)> {
        let mut bad = Vec::new();
        for f in &self.files {
            let p = dir.join(&f.path);
            match file_entry(dir, &p) {
                Ok(now) if now.sha256 == f.sha256 && now.bytes == f.bytes => {}
                Ok(_) => bad.push((f.path.clone(), "checksum mismatch".to_string())),
                Err(e) => bad.push((f.path.clone(), e.to_string())),
            }
        }
        bad
    }

    /// Human-readable summary of metrics and checks.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} ({:?}), seed {}", self.scenario, self.mode, self.config.master_seed);
        let _ = writeln!(s, "metrics:");
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "  {k:<28} {}", compact(*v));
        }
        let _ = writeln!(s, "checks:");
        for c in &self.checks {
            let status = match c.passed {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "SKIP",
            };
            let value = c.value.map_or_else(|| "n/a".to_string(), compact);
            let _ = writeln!(
                s,
                "  {status} {:<28} {value} {} {}",
                c.name,
                c.relation.symbol(),
                compact(c.threshold)
            );
        }
        s
    }
}

fn compact(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
        format!("{v:.4e}")
    } else {
        format!("{}", (v * 1e6).round() / 1e6)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checksum entry for `path`, recorded relative to `root`.
pub fn file_entry(root: &Path, path: &Path) -> Result<FileEntry> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rel = path.strip_prefix(root).unwrap_or(path);
    let rel = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/");
    Ok(FileEntry {
        path: rel,
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Outcome of re-checking a manifest against the files beside it.
#[derive(Debug, Clone)]
pub struct Report {
    pub manifest: RunManifest,
    pub mismatches: Vec<(String, String)>,
}

impl Report {
    pub fn checksums_ok(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = self.manifest.summary();
        if self.checksums_ok() {
            let _ = writeln!(s, "files: {} verified", self.manifest.files.len());
        } else {
            for (p, why) in &self.mismatches {
                let _ = writeln!(s, "  MISMATCH {p}: {why}");
            }
        }
        s
    }
}

/// Loads a manifest (a file, or a directory holding `manifest.json`) and
/// verifies every listed checksum.
pub fn report(path: &Path) -> Result<Report> {
    let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let manifest = RunManifest::read(&file)?;
    let dir = file.parent().unwrap_or_else(|| Path::new("."));
    let mismatches = manifest.verify(dir);
    Ok(Report { manifest, mismatches })
}
