// Densify LoRA and DoRA adapters stored in the PEFT directory layout.

use readapt::peft::{densify_dora, densify_lora, load_peft_dir, DoraModule, LoraModule};
use readapt::{apply_delta, save_checkpoint, Checkpoint, NamedTensor};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // LoRA: (alpha / r) B A.
    let a = NamedTensor::from_f32("a", vec![1, 2], vec![2.0, 3.0])?;
    let b = NamedTensor::from_f32("b", vec![2, 1], vec![1.0, 1.0])?;
    let lora = LoraModule::new("proj.weight", a, b, 1.0)?;
    println!("lora delta: {:?}", densify_lora(&lora)?.to_f32());

    // DoRA with no low-rank update only rescales rows to the magnitudes.
    let w = NamedTensor::from_f32("proj.weight", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])?;
    let zero = LoraModule::new(
        "proj.weight",
        NamedTensor::zeros("a", vec![1, 2], readapt::DType::F32)?,
        NamedTensor::zeros("b", vec![2, 1], readapt::DType::F32)?,
        1.0,
    )?;
    let dora = DoraModule::new(zero, vec![2.0, 2.0])?;
    println!("dora delta: {:?}", densify_dora(&dora, &w)?.to_f32());

    // Round trip through an adapter directory.
    let dir = tempfile::tempdir()?;
    let base = Checkpoint::from_tensors([
        NamedTensor::from_f32("layers.0.q_proj.weight", vec![3, 4], (0..12).map(|i| i as f32 * 0.1).collect())?,
        NamedTensor::from_f32("layers.0.q_proj.bias", vec![3], vec![0.0; 3])?,
    ])?;
    let weights = Checkpoint::from_tensors([
        NamedTensor::from_f32("base_model.model.layers.0.q_proj.lora_A.weight", vec![2, 4], vec![0.5; 8])?,
        NamedTensor::from_f32("base_model.model.layers.0.q_proj.lora_B.weight", vec![3, 2], vec![0.1; 6])?,
    ])?;
    save_checkpoint(&weights, dir.path().join("adapter_model.safetensors"), None)?;
    std::fs::write(
        dir.path().join("adapter_config.json"),
        r#"{"r": 2, "lora_alpha": 4, "use_dora": false, "target_modules": ["q_proj"]}"#,
    )?;
    let knowledge = load_peft_dir(dir.path())?.densify(&base)?;
    println!("knowledge adapter kind `{}` over {:?}", knowledge.kind(), knowledge.names().collect::<Vec<_>>());
    let merged = apply_delta(&base, &knowledge, 1.0, true)?;
    println!("merged q_proj row 0: {:?}", &merged.get("layers.0.q_proj.weight").unwrap().to_f32()[..4]);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
