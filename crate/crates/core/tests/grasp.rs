mod common;

use afford::grasp::{
    deproject_pixel, load_grasp_candidates, project_point, sample_depth, select_grasp_index,
    select_grasp_within, ContactPoint3D, GraspCandidate, GraspError,
};
use afford::io::{CameraIntrinsics, DepthImage};
use common::{grasp_oracle, random_candidates, random_rotation, rigidly_moved};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point(rng: &mut impl Rng) -> ContactPoint3D {
    ContactPoint3D::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.2..1.5),
    )
}

#[test]
fn selection_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = rng.random_range(1..40);
        let cands = random_candidates(&mut rng, n);
        // sometimes aim straight at a duplicated translation
        let p = if rng.random_bool(0.3) {
            let t = cands[rng.random_range(0..n)].translation;
            ContactPoint3D::new(t[0], t[1], t[2])
        } else {
            random_point(&mut rng)
        };
        assert_eq!(select_grasp_index(&cands, &p).unwrap(), grasp_oracle(&cands, &p));
    }
}

#[test]
fn rigid_motion_keeps_the_choice() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let cands = random_candidates(&mut rng, n);
        let p = random_point(&mut rng);
        let r = random_rotation(&mut rng);
        let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (moved, q) = rigidly_moved(&cands, &p, &r, t);
        assert!(moved.iter().all(GraspCandidate::is_orthonormal));
        assert_eq!(
            select_grasp_index(&moved, &q).unwrap(),
            select_grasp_index(&cands, &p).unwrap()
        );
    }
}

#[test]
fn ties_prefer_score_then_index() {
    let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let at = |x: f64, s: Option<f64>| GraspCandidate::new(eye, [x, 0.0, 0.0], 0.05, s);
    let p = ContactPoint3D::new(0.0, 0.0, 0.0);
    assert_eq!(select_grasp_index(&[at(1.0, None), at(-1.0, Some(0.1))], &p).unwrap(), 1);
    assert_eq!(select_grasp_index(&[at(1.0, Some(0.5)), at(-1.0, Some(0.1))], &p).unwrap(), 0);
    assert_eq!(select_grasp_index(&[at(1.0, None), at(-1.0, None)], &p).unwrap(), 0);
    assert_eq!(select_grasp_index(&[at(2.0, Some(9.0)), at(1.0, None)], &p).unwrap(), 1);
    assert!(matches!(select_grasp_index(&[], &p), Err(GraspError::EmptyCandidateSet)));
}

#[test]
fn distance_limit() {
    let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let c = [GraspCandidate::new(eye, [0.0, 0.0, 0.5], 0.05, None)];
    assert!(select_grasp_within(&c, &ContactPoint3D::new(0.0, 0.0, 0.45), 0.1).is_ok());
    assert!(matches!(
        select_grasp_within(&c, &ContactPoint3D::new(0.0, 0.3, 0.5), 0.1),
        Err(GraspError::TooFar { .. })
    ));
}

proptest! {
    #[test]
    fn projection_round_trip(
        u in 0.0f64..640.0, v in 0.0f64..480.0, raw in 1u16..u16::MAX,
        fx in 100.0f64..1000.0, fy in 100.0f64..1000.0,
        cx in 0.0f64..640.0, cy in 0.0f64..480.0,
        scale in prop::sample::select(vec![0.001, 0.0001, 0.00025]),
    ) {
        let intr = CameraIntrinsics::new(fx, fy, cx, cy, scale).unwrap();
        let p = deproject_pixel(u, v, raw as f64, &intr).unwrap();
        prop_assert!((p.xyz[2] - raw as f64 * scale).abs() < 1e-12);
        let (pu, pv) = project_point(&p, &intr);
        prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
    }
}

#[test]
fn zero_depth_is_rejected() {
    let intr = CameraIntrinsics::new(60.0, 60.0, 32.0, 24.0, 0.001).unwrap();
    assert!(matches!(deproject_pixel(3.0, 4.0, 0.0, &intr), Err(GraspError::ZeroDepth)));
}

#[test]
fn depth_window_median() {
    // raw depth = x + 10 y, with the centre column zeroed out
    let vals: Vec<u16> = (0..100u16)
        .map(|i| if i % 10 == 5 { 0 } else { i % 10 + 10 * (i / 10) })
        .collect();
    let d = DepthImage::new(10, 10, vals).unwrap();
    // window x 3..=7, y 3..=7 minus x=5: 20 values, middle two are 54 and 56
    assert_eq!(sample_depth(&d, 5, 5).unwrap(), 55.0);
    // corner window x 0..=2, y 0..=2 holds a raw 0 at the origin: 8 values left
    assert_eq!(sample_depth(&d, 0, 0).unwrap(), 11.5);
    assert!(matches!(sample_depth(&d, 10, 0), Err(GraspError::OutOfBounds(10, 0))));
    let empty = DepthImage::new(3, 3, vec![0; 9]).unwrap();
    assert!(matches!(sample_depth(&empty, 1, 1), Err(GraspError::ZeroDepth)));
}

#[test]
fn candidate_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grasps.json");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cands = random_candidates(&mut rng, 5);
    afford::io::write_json(&afford::grasp::GraspFile { grasps: cands.clone() }, &path).unwrap();
    assert_eq!(load_grasp_candidates(&path).unwrap(), cands);

    let skew = r#"{"grasps":[{"R":[[1,0,0],[0,1,0],[0,0,1]],"t":[0,0,1],"width":0.05},
                            {"R":[[1,0.2,0],[0,1,0],[0,0,1]],"t":[0,0,1],"width":0.05}]}"#;
    std::fs::write(&path, skew).unwrap();
    assert!(matches!(
        load_grasp_candidates(&path),
        Err(GraspError::NonOrthonormalRotation { index: 1 })
    ));
    let mirror = r#"{"grasps":[{"R":[[-1,0,0],[0,1,0],[0,0,1]],"t":[0,0,1],"width":0.05}]}"#;
    std::fs::write(&path, mirror).unwrap();
    assert!(matches!(
        load_grasp_candidates(&path),
        Err(GraspError::NonOrthonormalRotation { index: 0 })
    ));
    let negative = r#"{"grasps":[{"R":[[1,0,0],[0,1,0],[0,0,1]],"t":[0,0,1],"width":-1}]}"#;
    std::fs::write(&path, negative).unwrap();
    assert!(matches!(
        load_grasp_candidates(&path),
        Err(GraspError::InvalidCandidate { index: 0 })
    ));
    std::fs::write(&path, "{").unwrap();
    assert!(matches!(load_grasp_candidates(&path), Err(GraspError::ParseFailure { .. })));
    assert!(matches!(
        load_grasp_candidates(dir.path().join("nope.json")),
        Err(GraspError::ParseFailure { .. })
    ));
}
