#![allow(dead_code)]

use spdf_core::data::{pack, PackedDataset, Vocabulary};
use spdf_core::model::ModelConfig;
use spdf_core::train::{pretrain, Checkpoint, MetricRecord, PretrainStart, TrainPlan};

/// Byte-level model small enough for hundreds of steps per test.
pub fn tiny_config() -> ModelConfig {
    ModelConfig::new(2, 16, 2, 257, 16)
}

/// Repetitive byte-level corpus packed at the tiny model's context window.
pub fn tiny_corpus() -> PackedDataset {
    let docs: Vec<String> = (0..60)
        .map(|i| {
            format!(
                "the cat sat on the mat. the dog {} ran to the park.",
                ["big", "small", "red"][i % 3]
            )
        })
        .collect();
    pack(
        &Vocabulary::bytes_only(),
        &docs,
        tiny_config().context_window,
    )
    .unwrap()
}

pub fn plan(sparsity: f64, seed: u64, steps: u64) -> TrainPlan {
    let mut p = TrainPlan::pretrain(4, 1_000_000, 2_000, 3e-3, seed);
    p.sparsity = sparsity;
    p.max_steps = Some(steps);
    p
}

pub fn run(
    plan: &TrainPlan,
    start: PretrainStart,
    data: &PackedDataset,
) -> (Checkpoint, Vec<MetricRecord>) {
    let mut log = Vec::new();
    let c = pretrain(plan, start, data, &mut log).unwrap();
    (c, log)
}

pub fn losses(log: &[MetricRecord]) -> Vec<u64> {
    log.iter()
        .map(|r| r.train_loss.unwrap().to_bits())
        .collect()
}
