//! Scores a few predictions against a hand-made mask with SR, NSS and DTM,
//! and prints how SR falls as the threshold rises.
//!
//! cargo run --example evaluate_metrics

use afford::evaluation::{metric_dtm, metric_nss, metric_sr, DEFAULT_THRESHOLD};
use afford::geometry::Point2;
use afford::io::GroundTruthMask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a soft disc centred at (20, 15)
    let mask = GroundTruthMask::from_fn(48, 32, |x, y| {
        let d = (x as f64 - 20.0).hypot(y as f64 - 15.0);
        (255.0 * (1.0 - d / 10.0)).clamp(0.0, 255.0) as u8
    });
    let sets = [
        ("centre", vec![Point2::new(20.0, 15.0); 3]),
        ("edge", vec![Point2::new(25.0, 15.0), Point2::new(20.0, 21.0)]),
        ("outside", vec![Point2::new(44.0, 3.0), Point2::new(2.0, 30.0)]),
    ];
    let t = DEFAULT_THRESHOLD;
    println!("{:>8} {:>6} {:>6} {:>7}", "points", "SR", "NSS", "DTM");
    for (name, pts) in &sets {
        println!(
            "{name:>8} {:6.2} {:6.3} {:7.4}",
            metric_sr(pts, &mask, t)?,
            metric_nss(pts, &mask)?,
            metric_dtm(pts, &mask, t)?
        );
    }
    let edge = &sets[1].1;
    for t in (0..=250).step_by(50) {
        println!("threshold {t:3}: SR {:.2}", metric_sr(edge, &mask, t)?);
    }
    Ok(())
}
