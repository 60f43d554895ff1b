//! Persistent affordance memory.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/index.json            {"version":1,"records":[{"id","category","dir","encoders":[..]}]}
//! <root>/<dir>/crop.png        object crop
//! <root>/<dir>/points.json     contact points (crop coordinates) + provenance
//! <root>/<dir>/emb-<enc>.rft   one 1-D embedding per encoder
//! ```
//!
//! The index is always written last through a temp file and rename, so a
//! crash between the two leaves at worst an unreferenced record directory.
//! Writers hold `<root>/.lock` for the duration of a mutation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::io::{
    read_json, read_tensor, write_json, write_tensor, IoError, RasterError, RasterImage, Tensor,
    TensorError,
};

pub const INDEX_FILE: &str = "index.json";
pub const INDEX_VERSION: u32 = 1;
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("record id {0:?} already present")]
    DuplicateId(String),
    #[error("no record with id {0:?}")]
    UnknownRecord(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("memory at {0} is locked by another writer")]
    Locked(String),
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
    #[error("index references missing file {0}")]
    MissingFile(String),
    #[error("memory already exists at {0}")]
    AlreadyExists(String),
    #[error("injected failure before index write")]
    Interrupted,
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Names usable as record ids and encoder keys: ASCII alphanumerics plus
/// `-`, `_`, `.`, not starting with a dot.
pub fn is_valid_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    encoder_name: String,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(encoder_name: impl Into<String>, values: Vec<f32>) -> Result<Self, MemoryError> {
        let encoder_name = encoder_name.into();
        if values.is_empty() {
            return Err(MemoryError::InvalidEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::InvalidEmbedding("non-finite value".into()));
        }
        let norm = values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            values,
            encoder_name,
            norm,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, k: f32) -> Result<Self, MemoryError> {
        Self::new(
            self.encoder_name.clone(),
            self.values.iter().map(|v| v * k).collect(),
        )
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.values.clone()).expect("embedding is finite and 1-D")
    }

    pub fn from_tensor(encoder_name: &str, t: Tensor) -> Result<Self, MemoryError> {
        if t.shape().iter().filter(|&&d| d != 1).count() > 1 {
            return Err(MemoryError::InvalidEmbedding(format!(
                "expected a vector, got shape {:?}",
                t.shape()
            )));
        }
        Self::new(encoder_name, t.into_data())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_video: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceRecord {
    pub id: String,
    pub category: String,
    pub crop: RasterImage,
    /// Crop coordinates.
    pub contact_points: Vec<Point2>,
    pub embeddings: BTreeMap<String, EmbeddingVector>,
    pub provenance: Provenance,
}

impl AffordanceRecord {
    /// Validates and lowercases the category.
    pub fn new(
        id: impl Into<String>,
        category: &str,
        crop: RasterImage,
        contact_points: Vec<Point2>,
        provenance: Provenance,
    ) -> Result<Self, MemoryError> {
        let rec = Self {
            id: id.into(),
            category: normalize_category(category),
            crop,
            contact_points,
            embeddings: BTreeMap::new(),
            provenance,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_embedding(mut self, emb: EmbeddingVector) -> Self {
        self.embeddings.insert(emb.encoder_name.clone(), emb);
        self
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let bad = |m: String| Err(MemoryError::InvalidRecord(m));
        if !is_valid_name(&self.id) {
            return bad(format!("id {:?} is not a valid name", self.id));
        }
        if self.category.is_empty() {
            return bad("empty category".into());
        }
        if self.category != normalize_category(&self.category) {
            return bad(format!("category {:?} is not normalized", self.category));
        }
        if self.crop.is_empty() {
            return bad("empty crop".into());
        }
        if self.contact_points.is_empty() {
            return bad("no contact points".into());
        }
        if let Some(p) = self
            .contact_points
            .iter()
            .find(|p| !self.crop.size().contains(p))
        {
            return bad(format!("contact point {p:?} outside crop"));
        }
        for (k, e) in &self.embeddings {
            if k != e.encoder_name() || !is_valid_name(k) {
                return bad(format!("embedding key {k:?} mismatched or invalid"));
            }
        }
        Ok(())
    }

    pub fn embedding(&self, encoder: &str) -> Option<&EmbeddingVector> {
        self.embeddings.get(encoder)
    }
}

pub fn normalize_category(c: &str) -> String {
    c.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub category: String,
    pub dir: String,
    pub encoders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryIndex {
    pub version: u32,
    pub records: Vec<IndexEntry>,
}

impl Default for MemoryIndex {
    fn default() -> Self {
        Self {
            version: INDEX_VERSION,
            records: Vec::new(),
        }
    }
}

impl MemoryIndex {
    pub fn categories(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.category.clone()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PointsFile {
    points: Vec<Point2>,
    source_video: String,
    frame_index: usize,
}

fn emb_file(encoder: &str) -> String {
    format!("emb-{encoder}.rft")
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(root: &Path) -> Result<Self, MemoryError> {
        let p = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(_) => Ok(Self(p)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(MemoryError::Locked(root.display().to_string()))
            }
            Err(e) => Err(IoError::fs(&p, e).into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// An opened memory: the index plus every record loaded eagerly (memories
/// are small).
#[derive(Debug, Clone)]
pub struct AffordanceMemory {
    root: PathBuf,
    index: MemoryIndex,
    records: Vec<AffordanceRecord>,
}

impl AffordanceMemory {
    pub fn create(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        if root.join(INDEX_FILE).exists() {
            return Err(MemoryError::AlreadyExists(root.display().to_string()));
        }
        fs::create_dir_all(&root).map_err(|e| IoError::fs(&root, e))?;
        let index = MemoryIndex::default();
        write_json(&index, root.join(INDEX_FILE))?;
        Ok(Self {
            root,
            index,
            records: Vec::new(),
        })
    }

    pub fn open_or_create(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        if root.as_ref().join(INDEX_FILE).exists() {
            Self::open(root)
        } else {
            Self::create(root)
        }
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        let index: MemoryIndex = read_json(root.join(INDEX_FILE))?;
        if index.version != INDEX_VERSION {
            return Err(MemoryError::UnsupportedVersion(index.version));
        }
        let records = index
            .records
            .iter()
            .map(|e| load_record(&root, e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            root,
            index,
            records,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &MemoryIndex {
        &self.index
    }

    pub fn records(&self) -> &[AffordanceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AffordanceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn categories(&self) -> BTreeSet<String> {
        self.index.categories()
    }

    pub fn add(&mut self, rec: AffordanceRecord) -> Result<(), MemoryError> {
        self.add_inner(rec, false)
    }

    /// Writes the record files and then fails before touching the index,
    /// standing in for a crash at the worst moment.
    #[doc(hidden)]
    pub fn add_interrupted(&mut self, rec: AffordanceRecord) -> Result<(), MemoryError> {
        self.add_inner(rec, true)
    }

    fn add_inner(&mut self, mut rec: AffordanceRecord, interrupt: bool) -> Result<(), MemoryError> {
        rec.category = normalize_category(&rec.category);
        rec.validate()?;
        if self.get(&rec.id).is_some() {
            return Err(MemoryError::DuplicateId(rec.id));
        }
        let _lock = LockGuard::acquire(&self.root)?;
        let dir = rec.id.clone();
        let rdir = self.root.join(&dir);
        if rdir.exists() {
            // leftover from an interrupted write; it was never indexed
            fs::remove_dir_all(&rdir).map_err(|e| IoError::fs(&rdir, e))?;
        }
        fs::create_dir_all(&rdir).map_err(|e| IoError::fs(&rdir, e))?;
        rec.crop.save_png(rdir.join("crop.png"))?;
        write_json(
            &PointsFile {
                points: rec.contact_points.clone(),
                source_video: rec.provenance.source_video.clone(),
                frame_index: rec.provenance.frame_index,
            },
            rdir.join("points.json"),
        )?;
        for (enc, e) in &rec.embeddings {
            write_tensor(&e.to_tensor(), rdir.join(emb_file(enc)))?;
        }
        if interrupt {
            return Err(MemoryError::Interrupted);
        }
        let mut index = self.index.clone();
        index.records.push(IndexEntry {
            id: rec.id.clone(),
            category: rec.category.clone(),
            dir,
            encoders: rec.embeddings.keys().cloned().collect(),
        });
        write_json(&index, self.root.join(INDEX_FILE))?;
        self.index = index;
        self.records.push(rec);
        Ok(())
    }

    /// Stores (or replaces) one embedding of an existing record.
    pub fn put_embedding(&mut self, id: &str, emb: EmbeddingVector) -> Result<(), MemoryError> {
        if !is_valid_name(emb.encoder_name()) {
            return Err(MemoryError::InvalidEmbedding(format!(
                "encoder name {:?}",
                emb.encoder_name()
            )));
        }
        let pos = self
            .records
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| MemoryError::UnknownRecord(id.to_string()))?;
        let _lock = LockGuard::acquire(&self.root)?;
        let enc = emb.encoder_name().to_string();
        let rdir = self.root.join(&self.index.records[pos].dir);
        write_tensor(&emb.to_tensor(), rdir.join(emb_file(&enc)))?;
        let mut index = self.index.clone();
        let entry = &mut index.records[pos];
        if !entry.encoders.contains(&enc) {
            entry.encoders.push(enc.clone());
            entry.encoders.sort();
        }
        write_json(&index, self.root.join(INDEX_FILE))?;
        self.index = index;
        self.records[pos].embeddings.insert(enc, emb);
        Ok(())
    }

    /// Records of one category (case-insensitive), or all records.
    pub fn filter(&self, category: Option<&str>) -> Vec<&AffordanceRecord> {
        match category.map(normalize_category) {
            Some(c) => self.records.iter().filter(|r| r.category == c).collect(),
            None => self.records.iter().collect(),
        }
    }

    pub fn has_category(&self, category: &str) -> bool {
        let c = normalize_category(category);
        self.index.records.iter().any(|r| r.category == c)
    }
}

fn load_record(root: &Path, e: &IndexEntry) -> Result<AffordanceRecord, MemoryError> {
    let dir = root.join(&e.dir);
    let need = |name: &str| -> Result<PathBuf, MemoryError> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(MemoryError::MissingFile(p.display().to_string()))
        }
    };
    let crop = RasterImage::load(need("crop.png")?)?;
    let pts: PointsFile = read_json(need("points.json")?)?;
    let mut embeddings = BTreeMap::new();
    for enc in &e.encoders {
        let t = read_tensor(need(&emb_file(enc))?)?;
        embeddings.insert(enc.clone(), EmbeddingVector::from_tensor(enc, t)?);
    }
    let rec = AffordanceRecord {
        id: e.id.clone(),
        category: e.category.clone(),
        crop,
        contact_points: pts.points,
        embeddings,
        provenance: Provenance {
            source_video: pts.source_video,
            frame_index: pts.frame_index,
        },
    };
    rec.validate()?;
    Ok(rec)
}

/// Outcome of a consistency check; empty `problems` means consistent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub records: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_consistent(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks that every index entry's files exist and parse, that ids and
/// directories are unique, and that no record directory or embedding file
/// is left unreferenced.
pub fn verify(root: impl AsRef<Path>) -> Result<VerifyReport, MemoryError> {
    let root = root.as_ref();
    let index: MemoryIndex = read_json(root.join(INDEX_FILE))?;
    let mut report = VerifyReport {
        records: index.records.len(),
        problems: Vec::new(),
    };
    if index.version != INDEX_VERSION {
        report
            .problems
            .push(format!("unsupported index version {}", index.version));
    }
    let mut ids = BTreeSet::new();
    let mut dirs = BTreeSet::new();
    for e in &index.records {
        if !ids.insert(e.id.clone()) {
            report.problems.push(format!("duplicate id {:?}", e.id));
        }
        if !dirs.insert(e.dir.clone()) {
            report
                .problems
                .push(format!("directory {:?} referenced more than once", e.dir));
        }
        if e.category != normalize_category(&e.category) || e.category.is_empty() {
            report
                .problems
                .push(format!("{}: category {:?} not normalized", e.id, e.category));
        }
        if let Err(err) = load_record(root, e) {
            report.problems.push(format!("{}: {err}", e.id));
        }
        let dir = root.join(&e.dir);
        if let Ok(rd) = fs::read_dir(&dir) {
            for f in rd.filter_map(|f| f.ok()) {
                let name = f.file_name().to_string_lossy().to_string();
                if let Some(enc) = name
                    .strip_prefix("emb-")
                    .and_then(|s| s.strip_suffix(".rft"))
                {
                    if !e.encoders.iter().any(|x| x == enc) {
                        report
                            .problems
                            .push(format!("{}: unreferenced embedding file {name}", e.id));
                    }
                }
            }
        }
    }
    let rd = fs::read_dir(root).map_err(|e| IoError::fs(root, e))?;
    for f in rd.filter_map(|f| f.ok()) {
        if !f.path().is_dir() {
            continue;
        }
        let name = f.file_name().to_string_lossy().to_string();
        if !name.starts_with('.') && !dirs.contains(&name) {
            report
                .problems
                .push(format!("unreferenced record directory {name:?}"));
        }
    }
    Ok(report)
}
