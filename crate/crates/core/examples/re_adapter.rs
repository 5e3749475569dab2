// Extract an instruction adapter as `instruct - base` and re-apply it.

use readapt::{apply_delta, extract_delta, validate_pair, Checkpoint, ExtractOptions, NamedTensor};

fn model(shift: f32) -> Result<Checkpoint, readapt::Error> {
    Checkpoint::from_tensors([
        NamedTensor::from_f32("embed.weight", vec![4, 2], (0..8).map(|i| i as f32 + shift).collect())?,
        NamedTensor::from_f32("norm.weight", vec![2], vec![1.0, 1.0 + shift])?,
    ])
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let base = model(0.0)?;
    let instruct = model(0.25)?;
    println!("{}", validate_pair(&base, &instruct).summary());

    let delta = extract_delta(&base, &instruct, &ExtractOptions::default())?;
    println!("delta covers {} tensors ({} elements)", delta.len(), delta.total_elements());

    let restored = apply_delta(&base, &delta, 1.0, true)?;
    assert_eq!(restored.digest(), instruct.digest());

    let halfway = apply_delta(&base, &delta, 0.5, true)?;
    println!("norm.weight at half strength: {:?}", halfway.get("norm.weight").unwrap().to_f32());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
