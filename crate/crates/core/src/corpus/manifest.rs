use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{LABELS, NUM_LABELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One aligned (netlist, caption, image features) sample. Paths are
/// relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub netlist_path: String,
    pub caption: String,
    pub image_feature_path: String,
    #[serde(default)]
    pub cluster_id: Option<usize>,
    #[serde(default)]
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    feature_dim: usize,
    labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub feature_dim: usize,
    pub labels: Vec<String>,
    pub records: Vec<TripletRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            feature_dim: 512,
            labels: LABELS.iter().map(|s| s.to_string()).collect(),
            records: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("feature file {path}: {message}")]
    Features { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn read_netlist(&self, r: &TripletRecord) -> Result<String, ManifestError> {
        let path = self.resolve(&r.netlist_path);
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn read_features(&self, r: &TripletRecord) -> Result<Vec<f64>, ManifestError> {
        let path = self.resolve(&r.image_feature_path);
        let v = read_feature_file(&path)?;
        if v.len() != self.feature_dim {
            return Err(ManifestError::Features {
                path,
                message: format!("{} values, expected {}", v.len(), self.feature_dim),
            });
        }
        Ok(v)
    }

    pub fn split(&self, split: Split) -> Vec<&TripletRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Checks id uniqueness, label range and the label vocabulary size.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.labels.len() != NUM_LABELS {
            return Err(ManifestError::Schema {
                line: 1,
                message: format!("label vocabulary has {} names, expected {NUM_LABELS}", self.labels.len()),
            });
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.records.iter().enumerate() {
            check_record(r, i + 1, &mut seen)?;
        }
        Ok(())
    }
}

fn check_record<'a>(r: &'a TripletRecord, line: usize, seen: &mut BTreeSet<&'a str>) -> Result<(), ManifestError> {
    if let Some(y) = r.label {
        if y >= NUM_LABELS {
            return Err(ManifestError::Schema { line, message: format!("label {y} out of range 0..{NUM_LABELS}") });
        }
    }
    if r.id.is_empty() {
        return Err(ManifestError::Schema { line, message: "empty id".into() });
    }
    if !seen.insert(r.id.as_str()) {
        return Err(ManifestError::Schema { line, message: format!("duplicate id `{}`", r.id) });
    }
    Ok(())
}

/// Reads a JSONL manifest. An optional first line
/// `{"feature_dim": F, "labels": [...]}` sets the header; otherwise
/// defaults apply. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut m = Manifest { base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(), ..Manifest::default() };
    if m.base_dir.as_os_str().is_empty() {
        m.base_dir = PathBuf::from(".");
    }
    let mut seen_records = false;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |e: serde_json::Error| ManifestError::Schema { line: lineno, message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(schema)?;
        if !seen_records && value.get("feature_dim").is_some() && value.get("id").is_none() {
            let h: Header = serde_json::from_value(value).map_err(schema)?;
            if h.labels.len() != NUM_LABELS {
                return Err(ManifestError::Schema {
                    line: lineno,
                    message: format!("label vocabulary has {} names, expected {NUM_LABELS}", h.labels.len()),
                });
            }
            m.feature_dim = h.feature_dim;
            m.labels = h.labels;
            continue;
        }
        seen_records = true;
        m.records.push(serde_json::from_value(value).map_err(schema)?);
        lines.push(lineno);
    }
    let mut seen = BTreeSet::new();
    for (r, &line) in m.records.iter().zip(&lines) {
        check_record(r, line, &mut seen)?;
    }
    Ok(m)
}

/// Writes the header line then one record per line.
pub fn save_manifest(m: &Manifest, path: &Path) -> Result<(), ManifestError> {
    m.validate()?;
    let mut out = String::new();
    let header = Header { feature_dim: m.feature_dim, labels: m.labels.clone() };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for r in &m.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

/// Reads image features: raw little-endian f32 (`.f32`) or a JSON array.
pub fn read_feature_file(path: &Path) -> Result<Vec<f64>, ManifestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |message: String| ManifestError::Features { path: path.to_path_buf(), message };
    let v: Vec<f64> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?
    } else {
        if bytes.len() % 4 != 0 {
            return Err(bad(format!("{} bytes is not a whole number of f32 values", bytes.len())));
        }
        bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect()
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Ok(v)
}

pub fn write_feature_file(path: &Path, v: &[f64]) -> Result<(), ManifestError> {
    let bytes: Vec<u8> = v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}
