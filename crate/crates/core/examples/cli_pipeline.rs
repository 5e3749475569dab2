// The full pipeline through the command-line entry point, on temp files.

use readapt::cli::{run, EXIT_OK, EXIT_USAGE};
use readapt::{save_checkpoint, Checkpoint, NamedTensor};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    let weights = |shift: f32| -> Result<Checkpoint, readapt::Error> {
        let values = (0..64).map(|i| ((i * 7 % 11) as f32) * 0.1 + shift * (i % 5) as f32).collect();
        Checkpoint::from_tensors([NamedTensor::from_f32("mlp.weight", vec![8, 8], values)?])
    };
    save_checkpoint(&weights(0.0)?, path("base.safetensors"), None)?;
    save_checkpoint(&weights(0.05)?, path("instruct.safetensors"), None)?;

    let steps: [Vec<String>; 4] = [
        vec!["diff".into(), "--base".into(), path("base.safetensors"), "--instruct".into(), path("instruct.safetensors"), "--out".into(), path("delta.safetensors")],
        vec!["compress".into(), "--delta".into(), path("delta.safetensors"), "--tau".into(), "0.5".into(), "--out".into(), path("lore.safetensors")],
        vec!["merge".into(), "--base".into(), path("base.safetensors"), "--re-adapter".into(), path("lore.safetensors"), "--re-adapter-kind".into(), "lore".into(), "--out".into(), path("omega.safetensors")],
        vec!["spectrum".into(), "--delta".into(), path("delta.safetensors"), "--out-dir".into(), path("spectra"), "--sweep".into(), "0.25,0.5,0.9".into()],
    ];
    for args in steps {
        let code = run(std::iter::once("readapt".to_string()).chain(args));
        assert_eq!(code, EXIT_OK);
    }
    println!("{}", std::fs::read_to_string(path("lore.safetensors.report.json"))?);

    let bad_tau = ["readapt", "compress", "--delta", &path("delta.safetensors"), "--tau", "1.5", "--out", &path("x")];
    assert_eq!(run(bad_tau), EXIT_USAGE);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
