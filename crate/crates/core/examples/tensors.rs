// Named tensors, dtype casts and scaled addition.

use readapt::{add_scaled, cast, frobenius_norm, subtract, DType, NamedTensor};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let w = NamedTensor::from_f32("layer.weight", vec![2, 3], vec![0.1, 0.2, 0.3, -1.0, 2.5, 4.0])?;
    let half = cast(&w, DType::BF16);
    println!("{} {:?} as {}: {:?}", w.name(), w.shape(), half.dtype().as_str(), half.to_f32());

    let bumped = add_scaled(&half, &w, 0.5)?;
    assert_eq!(bumped.dtype(), DType::BF16);

    let diff = subtract(&bumped, &half)?;
    println!("|0.5 w| = {:.4}, |diff| = {:.4}", 0.5 * frobenius_norm(&w), frobenius_norm(&diff));

    // A zero scale hands back the input bit for bit.
    assert!(add_scaled(&half, &w, 0.0)?.bitwise_eq(&half));
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
