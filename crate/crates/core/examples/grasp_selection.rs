//! Lifts a 2D contact point to 3D with a depth image and picks the nearest
//! grasp from the synthetic candidate set.
//!
//! cargo run --example grasp_selection

use afford::fixtures::generate_fixtures;
use afford::grasp::{deproject_pixel, load_grasp_candidates, sample_depth, select_grasp_index};
use afford::io::{CameraIntrinsics, DepthImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_fixtures(dir.path(), 7)?;
    let g = dir.path().join("grasp");
    let depth = DepthImage::load(g.join("depth.png"))?;
    let intr = CameraIntrinsics::load(g.join("intrinsics.json"))?;
    let cands = load_grasp_candidates(g.join("grasps.json"))?;

    for (u, v) in [(32, 24), (10, 40), (60, 5)] {
        let raw = sample_depth(&depth, u, v)?;
        let p = deproject_pixel(u as f64, v as f64, raw, &intr)?;
        let i = select_grasp_index(&cands, &p)?;
        println!(
            "pixel ({u}, {v}) -> {:.3?} m, grasp #{i} at {:.3?} ({:.3} m away)",
            p.xyz,
            cands[i].translation,
            cands[i].distance_to(&p)
        );
    }
    Ok(())
}
