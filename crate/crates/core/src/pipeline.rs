//! Stage drivers behind the `afford` command line.
//!
//! Every stage reads and writes the documented file formats only, so each
//! can be rerun on its own. Stage output is ordered deterministically
//! (sorted by id) no matter how work was scheduled.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{
    transfer_affordance, CorrespondenceError, Dihedral, FeatureExtractor, FileFeatureExtractor,
    MatchResult, ToyGridExtractor, TransferConfig, TOYGRID_NAME,
};
use crate::evaluation::{DatasetManifest, EvaluationError, Prediction};
use crate::extraction::{extract_video, ExtractionConfig, ExtractionError, VideoSequence};
use crate::fixtures::{FixtureError, VideoMeta};
use crate::grasp::GraspError;
use crate::io::{read_json, write_jsonl, IoError, RasterError, RasterImage};
use crate::memory::{AffordanceMemory, AffordanceRecord, MemoryError, Provenance};
use crate::retrieval::{
    candidate_pool, rerank_perceptual, retrieve, Dssim64, Embedder, FileEmbedder,
    PatchGramEmbedder, PerceptualDistance, Pool, RetrievalError, RetrievalResult, DSSIM64_NAME,
    PATCHGRAM_NAME,
};

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_METHOD: &str = "afford";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("extraction ({video}): {source}")]
    Extraction {
        video: String,
        #[source]
        source: ExtractionError,
    },
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("correspondence: {0}")]
    Correspondence(#[from] CorrespondenceError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("grasp: {0}")]
    Grasp(#[from] GraspError),
    #[error("fixtures: {0}")]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("image: {0}")]
    Raster(#[from] RasterError),
    #[error("nothing produced: {0}")]
    NothingProduced(String),
}

/// Settings shared by all stages. Loaded from TOML or JSON; every field has
/// a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub memory: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Precomputed `<digest>.<code>.rft` feature maps.
    pub feature_dir: Option<PathBuf>,
    /// Precomputed `<digest>.<encoder>.rft` embeddings.
    pub embedding_dir: Option<PathBuf>,
    pub encoder: String,
    pub extractor: String,
    pub top_k: usize,
    /// Perceptual distance used to narrow the shortlist to one source.
    pub rerank: Option<String>,
    pub method: String,
    pub threshold: u8,
    pub seed: u64,
    pub transfer: TransferConfig,
    pub extraction: ExtractionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            memory: None,
            manifest: None,
            feature_dir: None,
            embedding_dir: None,
            encoder: PATCHGRAM_NAME.to_string(),
            extractor: TOYGRID_NAME.to_string(),
            top_k: 5,
            rerank: None,
            method: DEFAULT_METHOD.to_string(),
            threshold: crate::evaluation::DEFAULT_THRESHOLD,
            seed: DEFAULT_SEED,
            transfer: TransferConfig::default(),
            extraction: ExtractionConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// `.toml` files are parsed as TOML, anything else as JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut cfg: PipelineConfig = if is_toml {
            let text = fs::read_to_string(path).map_err(|e| IoError::fs(path, e))?;
            toml::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            read_json(path)?
        };
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// One seed drives every random draw.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.transfer.rng_seed = seed;
        self.extraction.rng_seed = seed;
        self.extraction.homography.ransac.seed = seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        for (name, p) in [
            ("memory", &self.memory),
            ("manifest", &self.manifest),
            ("feature_dir", &self.feature_dir),
            ("embedding_dir", &self.embedding_dir),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("{name} path {} does not exist", p.display()));
                }
            }
        }
        if self.encoder != PATCHGRAM_NAME && self.embedding_dir.is_none() {
            return bad(format!("encoder {:?} needs embedding_dir", self.encoder));
        }
        if self.extractor != TOYGRID_NAME && self.feature_dir.is_none() {
            return bad(format!("extractor {:?} needs feature_dir", self.extractor));
        }
        if let Some(r) = &self.rerank {
            if r != DSSIM64_NAME {
                return bad(format!("unknown re-ranker {r:?} (available: {DSSIM64_NAME})"));
            }
        }
        Ok(())
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>, PipelineError> {
        if self.encoder == PATCHGRAM_NAME {
            return Ok(Box::new(PatchGramEmbedder));
        }
        match &self.embedding_dir {
            Some(dir) => Ok(Box::new(FileEmbedder::new(dir, &self.encoder))),
            None => Err(PipelineError::Config(format!(
                "encoder {:?} needs embedding_dir",
                self.encoder
            ))),
        }
    }

    pub fn feature_extractor(&self) -> Result<Box<dyn FeatureExtractor>, PipelineError> {
        if self.extractor == TOYGRID_NAME {
            return Ok(Box::new(ToyGridExtractor));
        }
        match &self.feature_dir {
            Some(dir) => Ok(Box::new(FileFeatureExtractor::new(dir))),
            None => Err(PipelineError::Config(format!(
                "extractor {:?} needs feature_dir",
                self.extractor
            ))),
        }
    }

    pub fn reranker(&self) -> Option<Box<dyn PerceptualDistance>> {
        self.rerank.as_deref().map(|_| Box::new(Dssim64) as Box<dyn PerceptualDistance>)
    }

    fn memory_path(&self) -> Result<&Path, PipelineError> {
        self.memory
            .as_deref()
            .ok_or_else(|| PipelineError::Config("no memory directory given".into()))
    }
}

/// An item a stage could not process, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub item: String,
    pub reason: String,
}

/// Short variant name of an error, e.g. `NoContactFrame`.
fn kind<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub added: Vec<String>,
    pub skipped: Vec<Skipped>,
}

/// Video directories under `root`: `root` itself if it holds `frames/`,
/// otherwise its subdirectories, sorted by name.
pub fn find_videos(root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if root.join("frames").is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| IoError::fs(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("frames").is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn extract_record(
    dir: &Path,
    category: Option<&str>,
    cfg: &ExtractionConfig,
) -> Result<AffordanceRecord, PipelineError> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let wrap = |source| PipelineError::Extraction {
        video: id.clone(),
        source,
    };
    let category = match category {
        Some(c) => c.to_string(),
        None => {
            let meta: VideoMeta = read_json(dir.join("meta.json"))?;
            meta.category
        }
    };
    let video = VideoSequence::load(dir).map_err(wrap)?;
    let ex = extract_video(&video, cfg).map_err(wrap)?;
    Ok(AffordanceRecord::new(
        id.clone(),
        &category,
        ex.crop,
        ex.contact_points.points,
        Provenance {
            source_video: id,
            frame_index: ex.clear_frame,
        },
    )?)
}

/// Extracts one record per video and adds it to the memory. Videos that
/// fail are listed in the summary; the error only propagates when nothing
/// at all was added.
pub fn cmd_extract(
    videos: &Path,
    mem: &mut AffordanceMemory,
    category: Option<&str>,
    cfg: &ExtractionConfig,
) -> Result<ExtractSummary, PipelineError> {
    let dirs = find_videos(videos)?;
    if dirs.is_empty() {
        return Err(PipelineError::NothingProduced(format!(
            "no video directories under {}",
            videos.display()
        )));
    }
    let results: Vec<_> = dirs
        .par_iter()
        .map(|d| (d, extract_record(d, category, cfg)))
        .collect();
    let mut summary = ExtractSummary::default();
    for (dir, res) in results {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let res = res.and_then(|rec| {
            mem.add(rec)?;
            Ok(())
        });
        match res {
            Ok(()) => summary.added.push(name),
            Err(e) => {
                let reason = match &e {
                    PipelineError::Extraction { source, .. } => kind(source),
                    PipelineError::Memory(m) => kind(m),
                    other => kind(other),
                };
                log::warn!("skipping {name}: {e}");
                summary.skipped.push(Skipped { item: name, reason });
            }
        }
    }
    if summary.added.is_empty() {
        return Err(PipelineError::NothingProduced(format!(
            "no records extracted ({} videos skipped)",
            summary.skipped.len()
        )));
    }
    Ok(summary)
}

/// One image to transfer onto.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub image_id: String,
    pub image: PathBuf,
    pub category: String,
}

pub fn targets_from_manifest(m: &DatasetManifest) -> Vec<Target> {
    m.entries
        .iter()
        .map(|(id, e)| Target {
            image_id: id.clone(),
            image: e.image.clone(),
            category: e.category.clone(),
        })
        .collect()
}

/// How one target was handled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub image_id: String,
    pub category: String,
    pub pool: Pool,
    /// Shortlist in rank order (all `k` sources considered).
    pub retrieved: Vec<RetrievalResult>,
    pub chosen: MatchResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub predictions: Vec<Prediction>,
    pub reports: Vec<TargetReport>,
    pub skipped: Vec<Skipped>,
}

impl PipelineRun {
    pub fn is_partial(&self) -> bool {
        !self.skipped.is_empty()
    }

    /// Predictions as JSON lines, sorted by image id.
    pub fn write_predictions(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        Ok(write_jsonl(&self.predictions, path)?)
    }
}

/// Retrieval plus correspondence for one in-memory target image.
pub fn transfer_image(
    mem: &AffordanceMemory,
    image_id: &str,
    img: &RasterImage,
    category: &str,
    cfg: &PipelineConfig,
    enc: &dyn Embedder,
    fx: &dyn FeatureExtractor,
    rerank: Option<&dyn PerceptualDistance>,
) -> Result<(Prediction, TargetReport), PipelineError> {
    let (pool, _) = candidate_pool(mem, category);
    let retrieved = retrieve(mem, img, category, cfg.top_k, enc)?;
    let shortlist = match rerank {
        Some(pd) => vec![rerank_perceptual(mem, &retrieved, img, pd)?],
        None => retrieved.clone(),
    };
    let sources: Vec<&AffordanceRecord> = shortlist
        .iter()
        .map(|r| {
            mem.get(&r.record_id)
                .ok_or_else(|| MemoryError::UnknownRecord(r.record_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let tgt_fm = fx.extract(img, Dihedral::R0)?;
    let outcome = transfer_affordance(&sources, img, &tgt_fm, fx, &cfg.transfer)?;
    Ok((
        Prediction {
            image_id: image_id.to_string(),
            method: cfg.method.clone(),
            points: outcome.points.points,
        },
        TargetReport {
            image_id: image_id.to_string(),
            category: category.to_string(),
            pool,
            retrieved,
            chosen: outcome.best,
        },
    ))
}

/// Transfers contact points onto every target. Targets that fail are
/// skipped and listed; configuration problems and an empty memory abort.
pub fn cmd_pipeline(
    mem: &AffordanceMemory,
    targets: &[Target],
    cfg: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    if mem.is_empty() {
        return Err(RetrievalError::EmptyMemory.into());
    }
    let enc = cfg.embedder()?;
    let fx = cfg.feature_extractor()?;
    let rerank = cfg.reranker();
    let mut results: Vec<_> = targets
        .par_iter()
        .map(|t| {
            let res = RasterImage::load(&t.image)
                .map_err(PipelineError::from)
                .and_then(|img| {
                    transfer_image(
                        mem,
                        &t.image_id,
                        &img,
                        &t.category,
                        cfg,
                        enc.as_ref(),
                        fx.as_ref(),
                        rerank.as_deref(),
                    )
                });
            (t.image_id.clone(), res)
        })
        .collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut run = PipelineRun::default();
    for (id, res) in results {
        match res {
            Ok((p, r)) => {
                run.predictions.push(p);
                run.reports.push(r);
            }
            Err(e) => {
                log::warn!("target {id} skipped: {e}");
                run.skipped.push(Skipped {
                    item: id,
                    reason: e.to_string(),
                });
            }
        }
    }
    if run.predictions.is_empty() && !targets.is_empty() {
        return Err(PipelineError::NothingProduced(format!(
            "all {} targets failed; first: {}",
            targets.len(),
            run.skipped[0].reason
        )));
    }
    Ok(run)
}

/// Convenience for callers that only have a memory path.
pub fn open_memory(cfg: &PipelineConfig) -> Result<AffordanceMemory, PipelineError> {
    Ok(AffordanceMemory::open(cfg.memory_path()?)?)
}
