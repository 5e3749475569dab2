// Compose `base + alpha * knowledge + beta * instruction` and sweep the strengths.

use std::collections::BTreeMap;

use readapt::merge::{compose_with, read_manifest, sweep, SweepOptions, DEFAULT_SCALE, MANIFEST_FILE};
use readapt::{Checkpoint, DeltaAdapter, NamedTensor};

fn scalar(v: f32) -> NamedTensor {
    NamedTensor::from_f32("w", vec![1], vec![v]).expect("shape")
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let base = Checkpoint::from_tensors([scalar(1.0)])?;
    let knowledge = DeltaAdapter::new([scalar(2.0)], base.digest(), "", BTreeMap::new())?;
    let instruction = DeltaAdapter::new([scalar(4.0)], base.digest(), "", BTreeMap::new())?;

    let omega = compose_with(
        &base,
        &[(&knowledge, DEFAULT_SCALE), (&instruction, DEFAULT_SCALE)],
        None,
        true,
    )?;
    println!("omega at 0.5 / 0.5: {:?}", omega.get("w").unwrap().to_f32());

    let dir = tempfile::tempdir()?;
    let grid = [0.0, 0.5, 1.0];
    sweep(&base, Some(&knowledge), Some(&instruction), &grid, &grid, dir.path(), &SweepOptions::default())?;
    for row in read_manifest(dir.path().join(MANIFEST_FILE))? {
        println!("alpha {} beta {} -> {}", row.alpha, row.beta, row.path.display());
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
