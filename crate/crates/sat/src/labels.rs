//! Dataset manifests, label files and the class-name table.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use sat_core::metrics::Event;
use sat_core::N_CLASSES;

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: PathBuf,
    pub labels: Vec<usize>,
}

struct Table {
    path: PathBuf,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path, delimiter: u8, header_first: &[&str]) -> Result<Self, LabelError> {
        let read_err = |source| LabelError::Read {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(|e| read_err(e.into()))?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(file);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(read_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let fields: Vec<String> = rec.iter().map(str::to_string).collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            if rows.is_empty() && header_first.iter().any(|h| fields[0].eq_ignore_ascii_case(h)) {
                continue;
            }
            rows.push((line, fields));
        }
        Ok(Self {
            path: path.to_path_buf(),
            rows,
        })
    }

    fn err(&self, line: u64, msg: impl Into<String>) -> LabelError {
        LabelError::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn class_id(&self, line: u64, s: &str) -> Result<usize, LabelError> {
        let id: usize = s.parse().map_err(|_| self.err(line, format!("bad class id {s:?}")))?;
        if id >= N_CLASSES {
            return Err(self.err(line, format!("class id {id} out of range 0..{N_CLASSES}")));
        }
        Ok(id)
    }

    /// Class ids from a field list; each field may hold several ids
    /// separated by commas, semicolons or spaces.
    fn class_ids(&self, line: u64, fields: &[String]) -> Result<Vec<usize>, LabelError> {
        let mut ids = Vec::new();
        for f in fields {
            for tok in f.split([',', ';', ' ']).filter(|t| !t.is_empty()) {
                ids.push(self.class_id(line, tok)?);
            }
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }
}

/// Reads a tab-separated manifest: `clip_id`, `path`, optional class ids.
/// Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, LabelError> {
    let path = path.as_ref();
    let t = Table::read(path, b'\t', &["clip_id"])?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, f) in &t.rows {
        if f.len() < 2 || f[1].is_empty() {
            return Err(t.err(*line, "expected clip_id<TAB>path[<TAB>class_ids]"));
        }
        let p = PathBuf::from(&f[1]);
        out.push(ManifestEntry {
            clip_id: f[0].clone(),
            path: if p.is_absolute() { p } else { base.join(p) },
            labels: t.class_ids(*line, &f[2..])?,
        });
    }
    Ok(out)
}

/// Reads weak labels: `clip_id`, then class ids.
pub fn read_weak_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<usize>>, LabelError> {
    let t = Table::read(path.as_ref(), b',', &["clip_id"])?;
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (line, f) in &t.rows {
        let ids = t.class_ids(*line, &f[1..])?;
        let entry = out.entry(f[0].clone()).or_default();
        entry.extend(ids);
        entry.sort_unstable();
        entry.dedup();
    }
    Ok(out)
}

/// Reads strong labels: `clip_id`, `onset_s`, `offset_s`, `class_id`.
pub fn read_strong_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<Event>>, LabelError> {
    let t = Table::read(path.as_ref(), b'\t', &["clip_id"])?;
    let mut out: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for (line, f) in &t.rows {
        if f.len() != 4 {
            return Err(t.err(*line, format!("expected 4 columns, got {}", f.len())));
        }
        let secs = |s: &str| -> Result<f64, LabelError> {
            s.parse().map_err(|_| t.err(*line, format!("bad time {s:?}")))
        };
        let ev = Event::new(t.class_id(*line, &f[3])?, secs(&f[1])?, secs(&f[2])?)
            .map_err(|e| t.err(*line, e.to_string()))?;
        out.entry(f[0].clone()).or_default().push(ev);
    }
    Ok(out)
}

/// Display names for class ids; ids without an entry render as `class_<id>`.
#[derive(Debug, Clone, Default)]
pub struct ClassNames {
    names: BTreeMap<usize, String>,
}

impl ClassNames {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, LabelError> {
        let t = Table::read(path.as_ref(), b',', &["id", "index"])?;
        let mut names = BTreeMap::new();
        for (line, f) in &t.rows {
            if f.len() < 2 {
                return Err(t.err(*line, "expected id,name"));
            }
            // Three-column ontology files carry the display name last.
            names.insert(t.class_id(*line, &f[0])?, f[f.len() - 1].clone());
        }
        Ok(Self { names })
    }

    pub fn name(&self, id: usize) -> String {
        self.names.get(&id).cloned().unwrap_or_else(|| format!("class_{id}"))
    }
}
