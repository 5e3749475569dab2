// Low-rank compression of a dense adapter and its parameter accounting.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use readapt::spectra::{compress, materialize, param_report_with_total, param_sweep, CompressOptions};
use readapt::{DeltaAdapter, NamedTensor};

/// `rows x cols` matrix with singular values decaying like `0.6^i`.
fn decaying(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> NamedTensor {
    let mut values = vec![0f32; rows * cols];
    for i in 0..rows.min(cols) {
        let u: Vec<f32> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f32> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = 0.6f32.powi(i as i32);
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] += s * u[r] * v[c];
            }
        }
    }
    NamedTensor::from_f32(name, vec![rows, cols], values).expect("shape")
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let delta = DeltaAdapter::new(
        [
            decaying("q.weight", 32, 32, &mut rng),
            decaying("up.weight", 48, 16, &mut rng),
            NamedTensor::from_f32("norm.weight", vec![32], vec![0.01; 32])?,
        ],
        "",
        "",
        BTreeMap::new(),
    )?;

    let lore = compress(&delta, &CompressOptions::new(0.5))?;
    for f in lore.factors() {
        println!("{}: rank {} keeps {:.3} of the variance", f.name(), f.rank(), f.retained_variance());
    }
    let report = param_report_with_total(&lore, delta.total_elements());
    println!("{} of {} parameters ({:.2}%)", report.lore_params, report.reference_params, report.percent);

    let taus = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99];
    for p in param_sweep(&delta, &taus, &CompressOptions::default(), delta.total_elements())? {
        println!("tau {:>4}: {:6.2}%", p.tau, p.percent);
    }

    let dense = materialize(&lore);
    assert_eq!(dense.len(), delta.len());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
