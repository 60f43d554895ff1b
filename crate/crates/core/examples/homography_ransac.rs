//! Fits a homography to synthetic matches with 30% outliers.
//!
//! cargo run --example homography_ransac

use afford::extraction::{fit_homography_ransac, Homography, RansacConfig};
use afford::geometry::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = Homography::from_rows([
        [1.05, 0.04, 12.0],
        [-0.03, 0.97, -6.0],
        [1.5e-4, -8e-5, 1.0],
    ])?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Point2, Point2)> = (0..80)
        .map(|i| {
            let p = Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0));
            let q = if i % 10 < 3 {
                Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0))
            } else {
                truth.apply(p).unwrap()
            };
            (p, q)
        })
        .collect();

    let fit = fit_homography_ransac(&pairs, &RansacConfig::default())?;
    println!("{} of {} pairs kept as inliers", fit.inliers.len(), pairs.len());
    let err = fit
        .inliers
        .iter()
        .map(|&i| truth.apply(pairs[i].0).unwrap().distance(&fit.homography.apply(pairs[i].0).unwrap()))
        .fold(0.0, f64::max);
    println!("max deviation from the true mapping on inliers: {err:.2e} px");
    for (a, b) in fit.homography.rows().iter().zip(truth.rows()) {
        println!("  {a:9.5?}   true {b:9.5?}");
    }
    Ok(())
}
