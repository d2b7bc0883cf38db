//! Report emission: CSV tables and JSON run manifests.
//!
//! CSV bodies are the determinism contract: identical (config, seed) runs
//! must produce byte-identical tables. Wall times and other
//! non-reproducible facts live only in the manifest.

use serde::{Deserialize, Serialize};
use std::io;
use std::path::{Path, PathBuf};

/// Outcome of one module-level invariant exercised by a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// The JSON manifest written next to every run's tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: String,
    /// Echo of the configuration text the run was started from.
    pub config: String,
    pub seed: u64,
    pub crate_version: String,
    pub wall_time_secs: f64,
    pub checks: Vec<CheckResult>,
    /// File names written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Writes rows as CSV with the given header. Values are formatted by the
/// caller so numeric formatting stays deterministic.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> io::Result<PathBuf> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
    std::fs::write(&path, json)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    std::fs::write(path, json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_manifest_roundtrip() {
        let dir = std::env::temp_dir().join(format!("hyplab-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("t.csv");
        write_csv(
            &csv_path,
            &["a", "b"],
            &[vec!["1".into(), "2".into()], vec!["3".into(), "4".into()]],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&csv_path).unwrap(),
            "a,b\n1,2\n3,4\n"
        );

        let m = Manifest {
            schema_version: 1,
            experiment: "entropy".into(),
            config: "kind = \"entropy\"".into(),
            seed: 7,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_secs: 0.25,
            checks: vec![CheckResult::new("h-in-range", true, "h = 1.0")],
            outputs: vec!["t.csv".into()],
        };
        assert!(m.all_passed());
        let path = write_manifest(&dir, &m).unwrap();
        let back: Manifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back.experiment, "entropy");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
