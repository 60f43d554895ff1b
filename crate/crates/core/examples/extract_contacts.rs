//! Runs contact extraction on one synthetic video and compares the result
//! with the handle zone the generator planted.
//!
//! cargo run --example extract_contacts

use afford::extraction::{extract_video, ExtractionConfig, VideoSequence};
use afford::fixtures::{generate_fixtures, FixtureSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let summary = generate_fixtures(dir.path(), 7)?;
    let planted = &summary.videos[0];
    let video = VideoSequence::load(FixtureSummary::videos_dir(dir.path()).join(&planted.id))?;
    println!("{}: {} frames", planted.id, video.len());

    let out = extract_video(&video, &ExtractionConfig::default())?;
    println!(
        "contact frame {}, clear frame {}, object bbox {:?}",
        out.contact_frame, out.clear_frame, out.object_bbox
    );
    let zone = planted.handle_zone;
    for p in &out.contact_points.points {
        let inside = zone.contains_pixel(p.x.round() as u32, p.y.round() as u32);
        println!("  ({:5.1}, {:5.1}) in handle zone: {inside}", p.x, p.y);
    }
    Ok(())
}
