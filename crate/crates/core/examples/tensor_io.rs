//! Writing, reading and validating `DPT1` tensor files.

use ndarray::Array2;
use zeroshot_tta::cli::inspect_summary;
use zeroshot_tta::tensor_io::{load_tensor, read_header, save_tensor, Tensor};
use zeroshot_tta::Error;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("features.dpt");

    let values = Array2::from_shape_fn((4, 3), |(i, j)| i as f64 - 0.5 * j as f64);
    let tensor = Tensor::from_array(&values)?;
    save_tensor(&tensor, &path)?;

    // The header can be read without touching the payload.
    let header = read_header(&path)?;
    println!("header: {} {:?}", header.dtype, header.shape);

    let back = load_tensor(&path)?;
    assert_eq!(back, tensor);
    assert_eq!(back.to_array2()?, values);
    println!("{}", inspect_summary(&path)?);

    // Float32 storage rounds once on the way in.
    let narrow = Tensor::from_array_f32(&values)?;
    println!("f32 payload: {} bytes vs f64: {} bytes", narrow.to_bytes().len(), tensor.to_bytes().len());

    let mut bytes = tensor.to_bytes();
    bytes[0] = b'X';
    match Tensor::from_bytes(&bytes) {
        Err(Error::BadMagic) => println!("corrupted magic rejected"),
        other => panic!("expected a bad-magic error, got {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
