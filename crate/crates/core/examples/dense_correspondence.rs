//! Transfers contact points from a source crop onto a rotated and flipped
//! copy using the toy grid features and the dihedral search.
//!
//! The toy grid descriptor is itself rotation invariant, so a plain match
//! already lands on the right pixel and the search keeps r0. With features
//! loaded from files the search is what recovers the orientation.
//!
//! cargo run --example dense_correspondence

use afford::correspondence::{
    match_point, transfer_affordance, Dihedral, FeatureExtractor, ToyGridExtractor,
    TransferConfig,
};
use afford::geometry::Point2;
use afford::io::RasterImage;
use afford::memory::{AffordanceRecord, Provenance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a smooth pattern with a bright off-centre blob
    let (w, h) = (40u32, 28u32);
    let data = (0..w * h)
        .flat_map(|i| {
            let (x, y) = (i % w, i / w);
            let blob = if (x as i32 - 30).pow(2) + (y as i32 - 8).pow(2) < 20 { 120 } else { 0 };
            [(x * 3 + blob) as u8, (y * 9) as u8, ((x + y) * 3) as u8]
        })
        .collect();
    let src = RasterImage::new(w, h, 3, data)?;
    let contact = Point2::new(30.0, 8.0);
    let rec = AffordanceRecord::new(
        "demo",
        "cup",
        src.clone(),
        vec![contact],
        Provenance { source_video: "demo".into(), frame_index: 0 },
    )?;

    for t in [Dihedral::R0, Dihedral::R90, Dihedral::F180] {
        let tgt = t.apply(&src);
        let tgt_fm = ToyGridExtractor.extract(&tgt, Dihedral::R0)?;
        let plain = match_point(&ToyGridExtractor.extract(&src, Dihedral::R0)?, contact, &tgt_fm)?;
        let out = transfer_affordance(&[&rec], &tgt, &tgt_fm, &ToyGridExtractor, &TransferConfig::default())?;
        println!(
            "{t}: expected {:?}, no search {:?}, with search {:?} via {}",
            t.map_point(contact, src.size()),
            plain.target_point,
            out.best.target_point,
            out.best.transform
        );
    }
    Ok(())
}
