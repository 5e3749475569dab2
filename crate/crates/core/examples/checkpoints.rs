// Writing and reading checkpoints, single-file and sharded.

use readapt::checkpoint::read_index;
use readapt::{load_checkpoint, save_checkpoint, Checkpoint, DType, NamedTensor, TensorData};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let tensors = (0..6).map(|i| {
        let values: Vec<f32> = (0..64).map(|j| (i * 64 + j) as f32 / 7.0).collect();
        let dtype = if i % 2 == 0 { DType::F32 } else { DType::BF16 };
        NamedTensor::new(format!("layers.{i}.weight"), vec![8, 8], TensorData::from_f32(values, dtype))
    });
    let ckpt = Checkpoint::from_tensors(tensors.collect::<Result<Vec<_>, _>>()?)?;
    println!("{} tensors, {} bytes, digest {}", ckpt.len(), ckpt.total_bytes(), &ckpt.digest()[..16]);

    let single = dir.path().join("model.safetensors");
    save_checkpoint(&ckpt, &single, None)?;
    assert_eq!(load_checkpoint(&single)?.digest(), ckpt.digest());

    // Shards hold at most 600 bytes, so each holds two at most.
    let index = dir.path().join("sharded/model.safetensors.index.json");
    save_checkpoint(&ckpt, &index, Some(600))?;
    let manifest = read_index(&index)?;
    println!("shards: {:?}", manifest.shard_files());
    let back = load_checkpoint(dir.path().join("sharded"))?;
    assert_eq!(back.digest(), ckpt.digest());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
