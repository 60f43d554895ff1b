//! Builds a memory from the synthetic videos and queries it with a target
//! image, with and without a matching category.
//!
//! cargo run --example memory_retrieval

use afford::extraction::ExtractionConfig;
use afford::fixtures::{generate_fixtures, FixtureSummary};
use afford::io::RasterImage;
use afford::memory::AffordanceMemory;
use afford::pipeline::cmd_extract;
use afford::retrieval::{
    candidate_pool, ensure_embeddings, rerank_perceptual, retrieve, Dssim64, PatchGramEmbedder,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_fixtures(dir.path(), 7)?;
    let mut mem = AffordanceMemory::create(dir.path().join("memory"))?;
    cmd_extract(&FixtureSummary::videos_dir(dir.path()), &mut mem, None, &ExtractionConfig::default())?;
    ensure_embeddings(&mut mem, &PatchGramEmbedder)?;
    println!("memory holds {} records over {:?}", mem.len(), mem.categories());

    let target = RasterImage::load(dir.path().join("targets/knife-1.png"))?;
    for category in ["knife", "teapot"] {
        let (pool, _) = candidate_pool(&mem, category);
        let hits = retrieve(&mem, &target, category, 3, &PatchGramEmbedder)?;
        println!("query as {category:?} searches {pool:?}:");
        for h in &hits {
            println!("  #{} {} ({}) cos {:.4}", h.rank, h.record_id, h.category, h.similarity);
        }
        let best = rerank_perceptual(&mem, &hits, &target, &Dssim64)?;
        println!("  reranked: {}", best.record_id);
    }
    Ok(())
}
