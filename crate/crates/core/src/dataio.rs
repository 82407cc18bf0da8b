//! Input discovery and the `manifest.jsonl` interchange format.
//!
//! A manifest holds one JSON object per line, one line per produced triplet
//! (or per failed input). Output paths are relative to the manifest's
//! directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_gray, load_mask};
use crate::transforms::Stage;

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Regular files in `dir` whose names match `pattern`, sorted by name.
pub fn scan_inputs(dir: impl AsRef<Path>, pattern: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::DirNotFound(dir.to_path_buf()));
    }
    let pattern = glob::Pattern::new(pattern)
        .map_err(|e| Error::InvalidConfig(format!("bad glob pattern {pattern:?}: {e}")))?;
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if pattern.matches(name) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

/// Default input pattern: every PNG or PGM.
pub fn is_image_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".png") || lower.ends_with(".pgm")
}

/// Lists PNG and PGM files in `dir`, sorted by name.
pub fn scan_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    Ok(scan_inputs(dir, "*")?
        .into_iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(is_image_name))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub source: String,
    pub syn_path: Option<String>,
    pub mask_path: Option<String>,
    pub lung_path: Option<String>,
    /// The normalized source the synthetic image was built on.
    pub norm_path: Option<String>,
    pub seed: u64,
    pub stream_id: u64,
    /// `|anomaly mask| / |lung mask|`.
    pub anomaly_area_fraction: Option<f64>,
    pub stages_applied: Vec<Stage>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
}

impl ManifestRecord {
    pub fn error(source: impl Into<String>, seed: u64, stream_id: u64, message: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            syn_path: None,
            mask_path: None,
            lung_path: None,
            norm_path: None,
            seed,
            stream_id,
            anomaly_area_fraction: None,
            stages_applied: Vec::new(),
            status: Status::Error,
            error_msg: Some(message.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

pub fn write_manifest_to(records: &[ManifestRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest_to(records, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Problems found by [`validate_manifest`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub ok_records: usize,
    pub error_records: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks every `ok` record: files exist and load, dimensions agree, the
/// anomaly mask lies inside the lung mask, the synthetic image is never darker
/// than its normalized source, and the recorded area fraction matches the
/// files.
pub fn validate_manifest(path: impl AsRef<Path>) -> Result<ValidationReport> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let records = read_manifest(path)?;
    let mut report = ValidationReport {
        records: records.len(),
        ..ValidationReport::default()
    };
    for (i, r) in records.iter().enumerate() {
        if !r.is_ok() {
            report.error_records += 1;
            continue;
        }
        report.ok_records += 1;
        if let Err(msg) = check_record(base, r) {
            report.problems.push(format!("record {}: {msg}", i + 1));
        }
    }
    Ok(report)
}

fn check_record(base: &Path, r: &ManifestRecord) -> std::result::Result<(), String> {
    let field = |name: &str, v: &Option<String>| -> std::result::Result<PathBuf, String> {
        v.as_ref()
            .map(|p| base.join(p))
            .ok_or_else(|| format!("{name} missing"))
    };
    let syn = load_gray(field("syn_path", &r.syn_path)?).map_err(|e| e.to_string())?;
    let norm = load_gray(field("norm_path", &r.norm_path)?).map_err(|e| e.to_string())?;
    let mask = load_mask(field("mask_path", &r.mask_path)?).map_err(|e| e.to_string())?;
    let lung = load_mask(field("lung_path", &r.lung_path)?).map_err(|e| e.to_string())?;
    let dims = syn.dims();
    if norm.dims() != dims || mask.dims() != dims || lung.dims() != dims {
        return Err(format!(
            "dimension mismatch: syn {:?}, norm {:?}, mask {:?}, lung {:?}",
            dims,
            norm.dims(),
            mask.dims(),
            lung.dims()
        ));
    }
    if !mask.is_subset_of(&lung).map_err(|e| e.to_string())? {
        return Err("anomaly mask leaves the lung mask".into());
    }
    if syn.pixels().iter().zip(norm.pixels()).any(|(s, n)| s < n) {
        return Err("synthetic image darker than its source".into());
    }
    let lung_area = lung.count();
    if lung_area == 0 {
        return Err("empty lung mask".into());
    }
    let fraction = mask.count() as f64 / lung_area as f64;
    match r.anomaly_area_fraction {
        Some(f) if (f - fraction).abs() <= 1e-12 => Ok(()),
        other => Err(format!(
            "anomaly_area_fraction {other:?} does not match files ({fraction})"
        )),
    }
}
