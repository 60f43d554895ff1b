//! Writes a feature tensor in the `.rft` container, reads it back and dumps
//! the header bytes.
//!
//! cargo run --example tensor_roundtrip

use afford::io::{read_tensor, write_tensor, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("features.rft");

    let (c, h, w) = (3, 4, 5);
    let data: Vec<f32> = (0..c * h * w).map(|i| (i as f32).sin()).collect();
    let t = Tensor::new(vec![c, h, w], data)?;
    write_tensor(&t, &path)?;

    let back = read_tensor(&path)?;
    assert_eq!(back, t);
    let bytes = std::fs::read(&path)?;
    println!("shape {:?}, {} bytes on disk", back.shape(), bytes.len());
    println!("header: {:02x?}", &bytes[..8 + 8 * back.shape().len()]);
    Ok(())
}
