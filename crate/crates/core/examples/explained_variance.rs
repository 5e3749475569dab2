// Cumulative explained variance of a delta matrix and threshold rank selection.

use readapt::spectra::{explained_variance, select_rank, spectrum, SvdConfig};
use readapt::NamedTensor;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let v = explained_variance(&[2.0, 1.0, 1.0])?;
    println!("v_k for sigma = [2, 1, 1]: {v:?}");
    assert_eq!(select_rank(&v, 0.5), 1);
    assert_eq!(select_rank(&v, 0.9), 3);

    // A 6 x 5 matrix that is a sum of two outer products.
    let u1 = [1.0, 2.0, 0.0, -1.0, 0.5, 1.0];
    let v1 = [1.0, 0.0, 1.0, 0.0, 1.0];
    let u2 = [0.0, 1.0, 1.0, 1.0, 0.0, -1.0];
    let v2 = [0.0, 0.3, 0.0, -0.3, 0.0];
    let values = (0..6)
        .flat_map(|i| (0..5).map(move |j| (u1[i] * v1[j] + u2[i] * v2[j]) as f32))
        .collect();
    let t = NamedTensor::from_f32("attn.q_proj.weight", vec![6, 5], values)?;
    let s = spectrum(&t, &SvdConfig::default(), usize::MAX)?;
    for (k, (sigma, cum)) in s.singular_values.iter().zip(&s.cumulative_variance).enumerate() {
        println!("k={} sigma={sigma:.4} v_k={cum:.6}", k + 1);
    }
    assert!((s.cumulative_variance[1] - 1.0).abs() < 1e-9);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
