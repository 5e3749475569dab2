use std::path::PathBuf;

use readapt::peft::{load_peft_dir, AdapterModule};
use readapt::{apply_delta, load_checkpoint, Error};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Applies the densified adapter to the fixture base and compares every
/// tensor to the checkpoint merged by the PEFT library.
fn check_against_merged(name: &str) {
    let dir = fixture(name);
    let base = load_checkpoint(dir.join("base.safetensors")).unwrap();
    let merged = load_checkpoint(dir.join("merged.safetensors")).unwrap();
    let adapter = load_peft_dir(dir.join("adapter")).unwrap();
    let delta = adapter.densify(&base).unwrap();
    assert_eq!(delta.len(), 4);
    let ours = apply_delta(&base, &delta, 1.0, true).unwrap();
    assert_eq!(ours.names().collect::<Vec<_>>(), merged.names().collect::<Vec<_>>());
    for t in merged.tensors() {
        let got = ours.get(t.name()).unwrap().to_f32();
        for (i, (g, w)) in got.iter().zip(t.to_f32().iter()).enumerate() {
            let rel = (g - w).abs() / w.abs().max(f32::MIN_POSITIVE);
            assert!(rel <= 1e-4, "{name} {}[{i}]: {g} vs {w} (rel {rel:e})", t.name());
        }
    }
}

#[test]
fn lora_matches_peft_merge() {
    check_against_merged("peft_lora");
}

#[test]
fn dora_matches_peft_merge() {
    check_against_merged("peft_dora");
}

#[test]
fn rslora_matches_peft_merge() {
    check_against_merged("peft_rslora");
}

#[test]
fn dora_fixture_parses_as_dora_modules() {
    let a = load_peft_dir(fixture("peft_dora/adapter")).unwrap();
    assert!(a.config.use_dora);
    assert_eq!(a.config.r, 4);
    assert!(a.modules.iter().all(|m| matches!(m, AdapterModule::Dora(_)) && m.lora().rank == 4));
    assert!(a.modules.iter().any(|m| m.target_name() == "layers.1.v_proj.weight"));
}

#[test]
fn empty_directory_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_peft_dir(dir.path()), Err(Error::Format(_))));
}

#[test]
fn unknown_target_pattern_is_reported() {
    let src = fixture("peft_lora/adapter");
    let dir = tempfile::tempdir().unwrap();
    let cfg = std::fs::read_to_string(src.join("adapter_config.json")).unwrap();
    let cfg = cfg.replace("\"v_proj\"", "\"o_proj\"");
    std::fs::write(dir.path().join("adapter_config.json"), cfg).unwrap();
    std::fs::copy(src.join("adapter_model.safetensors"), dir.path().join("adapter_model.safetensors")).unwrap();
    let base = load_checkpoint(fixture("peft_lora/base.safetensors")).unwrap();
    let adapter = load_peft_dir(dir.path()).unwrap();
    match adapter.densify(&base) {
        Err(Error::UnresolvedTarget(t)) => assert_eq!(t, ["o_proj"]),
        other => panic!("expected UnresolvedTarget, got {other:?}"),
    }
}
