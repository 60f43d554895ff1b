//! Generates the synthetic corpus, builds a memory from its videos, transfers
//! contact points onto identity and dihedral targets, and scores them.
//!
//! cargo run --release --example end_to_end [out-dir]

use std::path::PathBuf;
use std::time::Instant;

use afford::evaluation::{evaluate_dataset, DatasetManifest, EvalOptions};
use afford::fixtures::{generate_fixtures, FixtureSummary};
use afford::memory::AffordanceMemory;
use afford::pipeline::{cmd_extract, cmd_pipeline, targets_from_manifest, PipelineConfig};
use afford::retrieval::{ensure_embeddings, PatchGramEmbedder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("afford-e2e"));
    let _ = std::fs::remove_dir_all(&out);
    let start = Instant::now();

    let summary = generate_fixtures(&out, 7)?;
    println!("fixtures: {} videos", summary.videos.len());

    let mut mem = AffordanceMemory::create(out.join("memory"))?;
    let cfg = PipelineConfig {
        memory: Some(out.join("memory")),
        ..PipelineConfig::default()
    };
    let ex = cmd_extract(&FixtureSummary::videos_dir(&out), &mut mem, None, &cfg.extraction)?;
    println!("extracted {} records, skipped {:?}", ex.added.len(), ex.skipped);
    ensure_embeddings(&mut mem, &PatchGramEmbedder)?;

    for manifest in [
        FixtureSummary::identity_manifest(&out),
        FixtureSummary::dihedral_manifest(&out),
    ] {
        let m = DatasetManifest::load(&manifest)?;
        let run = cmd_pipeline(&mem, &targets_from_manifest(&m), &cfg)?;
        let report = evaluate_dataset(&run.predictions, &m, &EvalOptions::default())?;
        println!("{}", manifest.display());
        print!("{}", report.render_table());
    }
    println!("done in {:.1?}", start.elapsed());
    Ok(())
}
