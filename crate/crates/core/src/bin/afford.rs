//! `afford` command line. Exit status: 0 ok, 1 partial, 2 bad input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use afford::correspondence::AveragingMode;
use afford::evaluation::{
    evaluate_dataset, parse_threshold_range, render_overlay, sr_threshold_curve, DatasetManifest,
    EvalOptions, Prediction,
};
use afford::fixtures::generate_fixtures;
use afford::geometry::Point2;
use afford::grasp::{
    deproject_pixel, load_grasp_candidates, sample_depth, select_grasp_index, GraspError,
    DEFAULT_MAX_DISTANCE,
};
use afford::io::{load_mask, read_jsonl, write_json, CameraIntrinsics, DepthImage, RasterImage};
use afford::memory::{verify, AffordanceMemory};
use afford::pipeline::{
    cmd_extract, cmd_pipeline, targets_from_manifest, PipelineConfig, Target,
};
use afford::retrieval::{candidate_pool, ensure_embeddings, rerank_perceptual, retrieve};

#[derive(Parser)]
#[command(name = "afford", version, about = "Affordance transfer from interaction videos")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML or JSON pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract contact points from videos into a memory.
    Extract {
        #[arg(long)]
        videos: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        /// Overrides each video's meta.json category.
        #[arg(long)]
        category: Option<String>,
    },
    /// Compute missing embeddings, optionally extracting videos first.
    BuildMemory {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        videos: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<String>,
    },
    /// Print the top-k memory records for a target crop.
    Retrieve {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        category: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Transfer contact points onto one image or a manifest of images.
    Transfer {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long, conflicts_with = "manifest", requires = "category")]
        image: Option<PathBuf>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, required_unless_present = "image")]
        manifest: Option<PathBuf>,
        /// Prediction JSON lines.
        #[arg(long)]
        out: PathBuf,
        /// Per-target details (retrieved shortlist, chosen source).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for overlay PNGs.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long)]
        averaging: Option<AveragingMode>,
        /// Only search the untransformed source.
        #[arg(long)]
        no_transforms: bool,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score predictions against a dataset manifest.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 122)]
        threshold: u8,
        /// Also print an SR curve, `start:end:step`.
        #[arg(long)]
        curve: Option<String>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        allow_partial: bool,
        /// Report JSON; a CSV with the same stem is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SR as a function of the mask threshold.
    Curve {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "0:255:8")]
        range: String,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Pick the grasp nearest to a contact pixel.
    GraspSelect {
        #[arg(long)]
        candidates: PathBuf,
        /// Pixel as `u,v`.
        #[arg(long, value_parser = parse_pixel)]
        contact: (u32, u32),
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_DISTANCE)]
        max_distance: f64,
    },
    /// Check a memory directory for consistency.
    Verify {
        #[arg(long)]
        memory: PathBuf,
    },
    /// Draw predicted points (and optionally a mask) over an image.
    Visualize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        /// Which prediction to draw (default: the first).
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic test corpus.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long)]
    embedding_dir: Option<PathBuf>,
    #[arg(long)]
    feature_dir: Option<PathBuf>,
    /// Narrow the shortlist with a perceptual distance (`dssim64`).
    #[arg(long)]
    rerank: Option<String>,
}

impl ModelArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        if let Some(k) = self.topk {
            cfg.top_k = k;
        }
        if let Some(e) = self.encoder {
            cfg.encoder = e;
        }
        if let Some(x) = self.extractor {
            cfg.extractor = x;
        }
        if self.embedding_dir.is_some() {
            cfg.embedding_dir = self.embedding_dir;
        }
        if self.feature_dir.is_some() {
            cfg.feature_dir = self.feature_dir;
        }
        if self.rerank.is_some() {
            cfg.rerank = self.rerank;
        }
    }
}

fn parse_pixel(s: &str) -> Result<(u32, u32), String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    Ok((
        u.trim().parse().map_err(|e| format!("{e}"))?,
        v.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

enum Outcome {
    Done,
    Partial,
}

type Res = Result<Outcome, Box<dyn std::error::Error>>;

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Box<dyn std::error::Error>> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Res {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.cmd {
        Cmd::Extract {
            videos,
            memory,
            category,
        } => {
            let mut mem = AffordanceMemory::open_or_create(&memory)?;
            let s = cmd_extract(&videos, &mut mem, category.as_deref(), &cfg.extraction)?;
            print_json(&s)?;
            Ok(if s.skipped.is_empty() { Outcome::Done } else { Outcome::Partial })
        }
        Cmd::BuildMemory {
            memory,
            videos,
            encoder,
        } => {
            if let Some(e) = encoder {
                cfg.encoder = e;
            }
            let mut mem = AffordanceMemory::open_or_create(&memory)?;
            let mut partial = false;
            if let Some(v) = videos {
                let s = cmd_extract(&v, &mut mem, None, &cfg.extraction)?;
                partial = !s.skipped.is_empty();
                print_json(&s)?;
            }
            let enc = cfg.embedder()?;
            let n = ensure_embeddings(&mut mem, enc.as_ref())?;
            println!(
                "{} records, {n} embeddings added with {}",
                mem.len(),
                enc.name()
            );
            Ok(if partial { Outcome::Partial } else { Outcome::Done })
        }
        Cmd::Retrieve {
            memory,
            image,
            category,
            model,
        } => {
            model.apply(&mut cfg);
            cfg.validate()?;
            let mem = AffordanceMemory::open(&memory)?;
            let img = RasterImage::load(&image)?;
            let enc = cfg.embedder()?;
            let (pool, _) = candidate_pool(&mem, &category);
            let results = retrieve(&mem, &img, &category, cfg.top_k, enc.as_ref())?;
            let reranked = match cfg.reranker() {
                Some(pd) => Some(rerank_perceptual(&mem, &results, &img, pd.as_ref())?),
                None => None,
            };
            print_json(&serde_json::json!({
                "pool": pool,
                "results": results,
                "reranked": reranked,
            }))?;
            Ok(Outcome::Done)
        }
        Cmd::Transfer {
            memory,
            image,
            category,
            image_id,
            manifest,
            out,
            report,
            overlay,
            averaging,
            no_transforms,
            model,
        } => {
            model.apply(&mut cfg);
            if let Some(a) = averaging {
                cfg.transfer.averaging_mode = a;
            }
            if no_transforms {
                cfg.transfer.use_transforms = false;
            }
            cfg.memory = Some(memory.clone());
            let targets = match (image, manifest) {
                (Some(img), _) => {
                    let id = image_id.unwrap_or_else(|| {
                        img.file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default()
                    });
                    vec![Target {
                        image_id: id,
                        image: img,
                        category: category.unwrap_or_default(),
                    }]
                }
                (None, Some(m)) => targets_from_manifest(&DatasetManifest::load(m)?),
                (None, None) => unreachable!("clap requires one"),
            };
            let mem = AffordanceMemory::open(&memory)?;
            let run = cmd_pipeline(&mem, &targets, &cfg)?;
            run.write_predictions(&out)?;
            for r in &run.reports {
                println!(
                    "{}: source {} via {} (similarity {:.4}, {} considered)",
                    r.image_id,
                    r.chosen.source_record_id.as_deref().unwrap_or("-"),
                    r.chosen.transform,
                    r.chosen.similarity,
                    r.retrieved.len()
                );
            }
            for s in &run.skipped {
                eprintln!("skipped {}: {}", s.item, s.reason);
            }
            if let Some(p) = report {
                write_json(&run, p)?;
            }
            if let Some(dir) = overlay {
                std::fs::create_dir_all(&dir)?;
                for (p, t) in run
                    .predictions
                    .iter()
                    .filter_map(|p| targets.iter().find(|t| t.image_id == p.image_id).map(|t| (p, t)))
                {
                    let img = RasterImage::load(&t.image)?;
                    render_overlay(&img, &p.points, None)
                        .save_png(dir.join(format!("{}.png", p.image_id)))?;
                }
            }
            Ok(if run.is_partial() { Outcome::Partial } else { Outcome::Done })
        }
        Cmd::Evaluate {
            preds,
            manifest,
            threshold,
            curve,
            method,
            allow_partial,
            out,
        } => {
            let preds: Vec<Prediction> = read_jsonl(&preds)?;
            let m = DatasetManifest::load(&manifest)?;
            let opts = EvalOptions {
                threshold,
                allow_partial,
                method,
            };
            let report = evaluate_dataset(&preds, &m, &opts)?;
            print!("{}", report.render_table());
            if let Some(spec) = curve {
                let c = sr_threshold_curve(&preds, &m, &parse_threshold_range(&spec)?, &opts)?;
                for p in c {
                    println!("threshold {:>3}  SR {:>7.2}%", p.threshold, p.sr_percent);
                }
            }
            if let Some(p) = out {
                write_json(&report, &p)?;
                std::fs::write(p.with_extension("csv"), report.to_csv())?;
            }
            let partial = !report.missing_masks.is_empty() || !report.missing_predictions.is_empty();
            Ok(if partial { Outcome::Partial } else { Outcome::Done })
        }
        Cmd::Curve {
            preds,
            manifest,
            range,
            method,
            allow_partial,
        } => {
            let preds: Vec<Prediction> = read_jsonl(&preds)?;
            let m = DatasetManifest::load(&manifest)?;
            let opts = EvalOptions {
                allow_partial,
                method,
                ..EvalOptions::default()
            };
            let c = sr_threshold_curve(&preds, &m, &parse_threshold_range(&range)?, &opts)?;
            print_json(&c)?;
            Ok(Outcome::Done)
        }
        Cmd::GraspSelect {
            candidates,
            contact,
            depth,
            intrinsics,
            max_distance,
        } => {
            let grasps = load_grasp_candidates(&candidates)?;
            let intr = CameraIntrinsics::load(&intrinsics)?;
            let d = DepthImage::load(&depth)?;
            let (u, v) = contact;
            let raw = sample_depth(&d, u, v)?;
            let p = deproject_pixel(u as f64, v as f64, raw, &intr)?;
            let i = select_grasp_index(&grasps, &p)?;
            let distance = grasps[i].distance_to(&p);
            if distance > max_distance {
                return Err(GraspError::TooFar {
                    distance,
                    limit: max_distance,
                }
                .into());
            }
            print_json(&serde_json::json!({
                "contact_3d": p.xyz,
                "index": i,
                "distance": distance,
                "grasp": grasps[i],
            }))?;
            Ok(Outcome::Done)
        }
        Cmd::Verify { memory } => {
            let r = verify(&memory)?;
            println!("{} records", r.records);
            for p in &r.problems {
                println!("problem: {p}");
            }
            if r.is_consistent() {
                Ok(Outcome::Done)
            } else {
                Err(format!("{} problems found", r.problems.len()).into())
            }
        }
        Cmd::Visualize {
            image,
            preds,
            image_id,
            mask,
            out,
        } => {
            let preds: Vec<Prediction> = read_jsonl(&preds)?;
            let pred = match &image_id {
                Some(id) => preds.iter().find(|p| &p.image_id == id),
                None => preds.first(),
            }
            .ok_or("no matching prediction")?;
            let img = RasterImage::load(&image)?;
            let mask = mask.as_deref().map(load_mask).transpose()?;
            let points: Vec<Point2> = pred.points.clone();
            render_overlay(&img, &points, mask.as_ref()).save_png(&out)?;
            println!("wrote {}", out.display());
            Ok(Outcome::Done)
        }
        Cmd::Fixtures { out } => {
            let s = generate_fixtures(Path::new(&out), cfg.seed)?;
            println!(
                "{} videos, {} identity targets, {} dihedral targets in {}",
                s.videos.len(),
                s.identity_targets,
                s.dihedral_targets,
                out.display()
            );
            Ok(Outcome::Done)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
