#[allow(dead_code)]
mod bm25_retrieval {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/bm25_retrieval.rs"));
}

#[test]
fn bm25_retrieval_example_runs() {
    bm25_retrieval::run_example().expect("bm25_retrieval example should run");
}

#[allow(dead_code)]
mod checkpoints {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/checkpoints.rs"));
}

#[test]
fn checkpoints_example_runs() {
    checkpoints::run_example().expect("checkpoints example should run");
}

#[allow(dead_code)]
mod cli_pipeline {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/cli_pipeline.rs"));
}

#[test]
fn cli_pipeline_example_runs() {
    cli_pipeline::run_example().expect("cli_pipeline example should run");
}

#[allow(dead_code)]
mod explained_variance {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/explained_variance.rs"));
}

#[test]
fn explained_variance_example_runs() {
    explained_variance::run_example().expect("explained_variance example should run");
}

#[allow(dead_code)]
mod lore_compression {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/lore_compression.rs"));
}

#[test]
fn lore_compression_example_runs() {
    lore_compression::run_example().expect("lore_compression example should run");
}

#[allow(dead_code)]
mod partial_adaptation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/partial_adaptation.rs"));
}

#[test]
fn partial_adaptation_example_runs() {
    partial_adaptation::run_example().expect("partial_adaptation example should run");
}

#[allow(dead_code)]
mod peft_adapters {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/peft_adapters.rs"));
}

#[test]
fn peft_adapters_example_runs() {
    peft_adapters::run_example().expect("peft_adapters example should run");
}

#[allow(dead_code)]
mod prompts {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/prompts.rs"));
}

#[test]
fn prompts_example_runs() {
    prompts::run_example().expect("prompts example should run");
}

#[allow(dead_code)]
mod qa_scoring {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/qa_scoring.rs"));
}

#[test]
fn qa_scoring_example_runs() {
    qa_scoring::run_example().expect("qa_scoring example should run");
}

#[allow(dead_code)]
mod re_adapter {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/re_adapter.rs"));
}

#[test]
fn re_adapter_example_runs() {
    re_adapter::run_example().expect("re_adapter example should run");
}

#[allow(dead_code)]
mod tensors {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/tensors.rs"));
}

#[test]
fn tensors_example_runs() {
    tensors::run_example().expect("tensors example should run");
}
