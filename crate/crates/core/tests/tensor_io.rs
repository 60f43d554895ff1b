use afford::io::{
    load_mask, read_tensor, write_tensor, CameraIntrinsics, DepthImage, GroundTruthMask, IoError,
    RasterError, RasterImage, Tensor, TensorError,
};
use proptest::prelude::*;

fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    prop::collection::vec(1usize..6, 1..=4).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        (Just(shape), prop::collection::vec(-1e6f32..1e6, n))
    })
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact((shape, data) in shape_and_data()) {
        let t = Tensor::new(shape, data).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip((shape, data) in shape_and_data()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.rft");
        let t = Tensor::new(shape, data).unwrap();
        write_tensor(&t, &path).unwrap();
        prop_assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn truncation_never_panics((shape, data) in shape_and_data(), cut in 0usize..64) {
        let bytes = Tensor::new(shape, data).unwrap().to_bytes();
        let keep = bytes.len().saturating_sub(cut + 1);
        prop_assert!(Tensor::from_bytes(&bytes[..keep]).is_err());
    }
}

/// Header layout written out by hand, independent of the encoder.
fn handmade(shape: &[u64], values: &[f32]) -> Vec<u8> {
    let mut b = vec![b'R', b'A', b'T', b'K', 1, 0, 0, shape.len() as u8];
    for d in shape {
        b.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn decodes_hand_built_bytes() {
    let t = Tensor::from_bytes(&handmade(&[2, 3], &[0.0, 1.5, -2.0, 3.25, 4.0, -0.5])).unwrap();
    assert_eq!(t.shape(), &[2, 3]);
    assert_eq!(t.data(), &[0.0, 1.5, -2.0, 3.25, 4.0, -0.5]);
    assert_eq!(
        Tensor::new(vec![2, 3], t.data().to_vec()).unwrap().to_bytes(),
        handmade(&[2, 3], t.data())
    );
}

#[test]
fn header_is_little_endian() {
    let b = Tensor::from_vec(vec![1.0]).unwrap().to_bytes();
    assert_eq!(&b[..8], &[b'R', b'A', b'T', b'K', 1, 0, 0, 1]);
    assert_eq!(&b[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(&b[16..], &1.0f32.to_le_bytes());
}

#[test]
fn rejects_malformed_headers() {
    let good = handmade(&[2], &[1.0, 2.0]);

    let mut b = good.clone();
    b[0] = b'X';
    assert!(matches!(Tensor::from_bytes(&b), Err(TensorError::BadMagic(_))));

    let mut b = good.clone();
    b[4] = 2;
    assert!(matches!(Tensor::from_bytes(&b), Err(TensorError::UnsupportedVersion(2))));

    let mut b = good.clone();
    b[6] = 1;
    assert!(matches!(Tensor::from_bytes(&b), Err(TensorError::UnsupportedDtype(1))));

    assert!(matches!(
        Tensor::from_bytes(&handmade(&[], &[])),
        Err(TensorError::ShapeRejected(0))
    ));
    assert!(matches!(
        Tensor::from_bytes(&handmade(&[1, 1, 1, 1, 1], &[1.0])),
        Err(TensorError::ShapeRejected(5))
    ));

    assert!(matches!(
        Tensor::from_bytes(&good[..good.len() - 1]),
        Err(TensorError::TruncatedPayload { .. })
    ));
    let mut b = good.clone();
    b.push(0);
    assert!(matches!(Tensor::from_bytes(&b), Err(TensorError::TrailingBytes(1))));

    assert!(matches!(
        Tensor::from_bytes(&handmade(&[2], &[1.0, f32::NAN])),
        Err(TensorError::NonFiniteValue(1))
    ));
    assert!(matches!(
        Tensor::from_bytes(&handmade(&[u64::MAX, 2], &[])),
        Err(TensorError::TruncatedPayload { .. })
    ));
}

#[test]
fn constructor_checks_shape() {
    assert!(matches!(
        Tensor::new(vec![2, 2], vec![1.0; 3]),
        Err(TensorError::ShapeMismatch { .. })
    ));
    assert!(matches!(
        Tensor::new(vec![1; 5], vec![1.0]),
        Err(TensorError::ShapeRejected(5))
    ));
    assert!(matches!(
        Tensor::new(vec![1], vec![f32::INFINITY]),
        Err(TensorError::NonFiniteValue(0))
    ));
}

#[test]
fn missing_file_is_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_tensor(dir.path().join("absent.rft")),
        Err(TensorError::IoFailure { .. })
    ));
}

#[test]
fn mask_values_survive_png() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    let levels = [0u8, 122, 123, 255];
    let m = GroundTruthMask::from_fn(9, 7, |x, y| levels[((x + 2 * y) % 4) as usize]);
    m.save_png(&path).unwrap();
    let back = load_mask(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.get(1, 0), 122);
    assert_eq!(back.get(2, 0), 123);
}

#[test]
fn rgb_mask_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgb.png");
    RasterImage::filled(4, 4, [10, 20, 30]).save_png(&path).unwrap();
    assert!(matches!(
        load_mask(&path),
        Err(RasterError::WrongChannelCount { expected: 1, found: 3 })
    ));
}

#[test]
fn depth_png_keeps_16_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.png");
    let vals: Vec<u16> = (0..48u32).map(|i| (i * 1361) as u16).collect();
    let d = DepthImage::new(8, 6, vals).unwrap();
    d.save_png(&path).unwrap();
    assert_eq!(DepthImage::load(&path).unwrap(), d);
}

#[test]
fn rgb_image_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.png");
    let img = RasterImage::rgb_from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 70, 200]);
    img.save_png(&path).unwrap();
    assert_eq!(RasterImage::load(&path).unwrap(), img);
}

#[test]
fn intrinsics_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("intr.json");
    std::fs::write(&path, r#"{"fx":60,"fy":60,"cx":32,"cy":24,"depth_scale":0.001}"#).unwrap();
    let intr = CameraIntrinsics::load(&path).unwrap();
    assert_eq!(intr.fx, 60.0);
    assert_eq!(intr.depth_scale, 0.001);

    std::fs::write(&path, r#"{"fx":-1,"fy":60,"cx":32,"cy":24,"depth_scale":0.001}"#).unwrap();
    assert!(matches!(
        CameraIntrinsics::load(&path),
        Err(IoError::InvalidIntrinsics(_))
    ));
    std::fs::write(&path, r#"{"fx":60}"#).unwrap();
    assert!(matches!(CameraIntrinsics::load(&path), Err(IoError::Json { .. })));
}
