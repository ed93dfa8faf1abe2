//! Machine-readable experiment reports.
//!
//! Every command emits JSON-lines: one self-contained object per
//! registration (or per λ in a sweep), so rows from different runs
//! concatenate into a table with `cat`. Reports carry content digests of
//! every file read or written; inputs are re-hashed after the command runs
//! so a concurrent modification cannot go unnoticed. Wall-clock timings are
//! the only non-deterministic fields.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use keysolve_core::io::raw_sidecar;
use keysolve_core::volume::{DiceScores, PhantomSpec};
use keysolve_core::{Error, Result, SolveDiagnostics};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One JSON-lines row. Optional fields are omitted when they do not apply
/// to the command that produced the row.
#[derive(Serialize)]
pub struct ReportLine {
    pub schema_version: u32,
    pub kind: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SolveDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<DiceScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff_mm: Option<BTreeMap<u16, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff95_mm: Option<BTreeMap<u16, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bending_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub displacement_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phantom_spec: Option<PhantomSpec>,
    pub timings_ms: BTreeMap<&'static str, f64>,
}

impl ReportLine {
    pub fn new(kind: &'static str, command: &str) -> Self {
        ReportLine {
            schema_version: REPORT_SCHEMA_VERSION,
            kind,
            command: command.to_string(),
            subject: None,
            lambda: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            transform: None,
            diagnostics: None,
            dice: None,
            hausdorff_mm: None,
            hausdorff95_mm: None,
            bending_energy: None,
            iterations: None,
            converged: None,
            displacement_trace: None,
            phantom_spec: None,
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn to_json_line(&self) -> String {
        let mut line =
            serde_json::to_string(self).expect("report serialization cannot fail");
        line.push('\n');
        line
    }
}

#[derive(Serialize, Clone)]
pub struct TransformSummary {
    pub family: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub path: String,
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("cannot read for digest: {e}"),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Tracks content digests of a set of files and can later prove they did
/// not change while the command ran.
#[derive(Default)]
pub struct DigestSet {
    map: BTreeMap<String, String>,
}

impl DigestSet {
    pub fn add(&mut self, path: &Path) -> Result<()> {
        self.map
            .insert(path.display().to_string(), sha256_hex(path)?);
        Ok(())
    }

    /// Digest a volume or activation-stack header together with its raw
    /// payload sidecar.
    pub fn add_with_sidecar(&mut self, header: &Path) -> Result<()> {
        self.add(header)?;
        self.add(&raw_sidecar(header)?)
    }

    pub fn verify_unchanged(&self) -> Result<()> {
        for (path, digest) in &self.map {
            let now = sha256_hex(Path::new(path))?;
            if &now != digest {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: "file changed while the command was running".into(),
                });
            }
        }
        Ok(())
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.map
    }
}

/// Stopwatch for the per-stage wall-time fields.
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(Instant::now())
    }

    /// Records the time since the last lap under `stage` and restarts.
    pub fn lap(&mut self, timings: &mut BTreeMap<&'static str, f64>, stage: &'static str) {
        let now = Instant::now();
        timings.insert(stage, now.duration_since(self.0).as_secs_f64() * 1e3);
        self.0 = now;
    }
}
