//! Presets, run configuration and the scripted experiment.

mod experiment;
mod presets;

pub use experiment::{
    build_data, experiment_spdf, median, Cell, ExperimentConfig, ExperimentData, ExperimentReport,
    FinetuneMode, PretrainSummary, Task,
};
pub use presets::{preset, Preset, GPT2_VOCAB, PRESET_NAMES, TOY_VOCAB};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::synthetic::{
    pretraining_corpus, restaurant_records, split_80_10_10, summarization_pairs,
};
use crate::data::{
    linearize, make_finetune_examples, make_summarization_examples, read_corpus_dir, train_bpe,
    PromptTarget, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::GenerationCase;
use crate::model::{GenConfig, ModelConfig};
use crate::train::{Phase, TaskData, TrainPlan};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

/// Where training text and task data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `.txt` files; the synthetic corpus is used when absent.
    pub corpus_dir: Option<PathBuf>,
    /// Existing vocabulary file; a new one is learned from the corpus when absent.
    pub vocab_path: Option<PathBuf>,
    pub synthetic_docs: usize,
    pub n_filler: usize,
    pub data_seed: u64,
    pub task: Task,
    /// Number of synthetic records or document pairs before the 80/10/10 split.
    pub task_items: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            vocab_path: None,
            synthetic_docs: 3000,
            n_filler: 3,
            data_seed: 1234,
            task: Task::DataToText,
            task_items: 300,
        }
    }
}

/// Everything needed to reproduce a run, stored as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub pretrain: TrainPlan,
    pub finetune: TrainPlan,
    #[serde(default)]
    pub generation: GenConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Default run for a preset, writing under `out_dir`.
    pub fn from_preset(name: &str, out_dir: &Path, seed: u64) -> Result<Self> {
        let p = preset(name)?;
        let mut pretrain = TrainPlan::pretrain(
            p.batch_size,
            p.train_tokens,
            p.train_tokens / 50,
            p.peak_lr,
            seed,
        );
        if p.flops_only {
            pretrain.schedule.warmup_tokens = crate::optim::PRETRAIN_WARMUP_TOKENS;
        }
        Ok(Self {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            seed,
            model: p.model,
            data: DataConfig::default(),
            pretrain,
            finetune: TrainPlan::finetune(8, 5, 2e-3, seed),
            generation: GenConfig::default(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (expected {RUN_CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.pretrain.phase != Phase::Pretrain || self.finetune.phase != Phase::Finetune {
            return Err(Error::Config(
                "pretrain and finetune plans have the wrong phase".into(),
            ));
        }
        Ok(())
    }

    /// Plans with the run seed applied.
    pub fn pretrain_plan(&self) -> TrainPlan {
        TrainPlan {
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn finetune_plan(&self) -> TrainPlan {
        TrainPlan {
            seed: self.seed,
            ..self.finetune.clone()
        }
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_string(self).expect("run config serializes"))
    }
}

pub fn config_hash(canonical_json: &str) -> String {
    hex::encode(Sha256::digest(canonical_json.as_bytes()))
}

/// Provenance written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub package: String,
    pub run_config_schema: u32,
    pub checkpoint_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            package: env!("CARGO_PKG_VERSION").to_string(),
            run_config_schema: RUN_CONFIG_SCHEMA_VERSION,
            checkpoint_format: crate::train::CHECKPOINT_FORMAT_VERSION,
        }
    }
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        let json = serde_json::to_string(config)?;
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash(&json),
            seed,
            versions: Versions::default(),
            config: serde_json::from_str(&json)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}

/// Pre-training documents: the `.txt` files of `corpus_dir`, or the synthetic corpus.
pub fn corpus_documents(data: &DataConfig) -> Result<Vec<String>> {
    match &data.corpus_dir {
        Some(dir) => read_corpus_dir(dir),
        None => Ok(pretraining_corpus(
            data.synthetic_docs,
            data.n_filler,
            data.data_seed.wrapping_add(2),
        )),
    }
}

/// Loads `vocab_path` when set, otherwise learns a vocabulary of the model's size from `docs`.
pub fn resolve_vocab(
    data: &DataConfig,
    model: &ModelConfig,
    docs: &[String],
) -> Result<Vocabulary> {
    let vocab = match &data.vocab_path {
        Some(p) => Vocabulary::from_json(&std::fs::read_to_string(p)?)?,
        None => train_bpe(docs, model.vocab_size)?,
    };
    check_vocab(&vocab, model)?;
    Ok(vocab)
}

pub fn check_vocab(vocab: &Vocabulary, model: &ModelConfig) -> Result<()> {
    if vocab.vocab_size() != model.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.vocab_size(),
            model.vocab_size
        )));
    }
    Ok(())
}

/// Train and validation examples plus the held-out test split of the configured task.
pub struct TaskSplit {
    pub data: TaskData,
    /// Prompts with all references, for generation and BLEU.
    pub test_cases: Vec<GenerationCase>,
    /// One example per test reference, for perplexity.
    pub test_examples: Vec<PromptTarget>,
}

pub fn task_split(data: &DataConfig, vocab: &Vocabulary) -> Result<TaskSplit> {
    match data.task {
        Task::DataToText => {
            let records = restaurant_records(data.task_items, data.data_seed);
            let (tr, va, te) = split_80_10_10(&records);
            Ok(TaskSplit {
                data: TaskData {
                    train: make_finetune_examples(vocab, &tr)?,
                    validation: make_finetune_examples(vocab, &va)?,
                },
                test_cases: te
                    .iter()
                    .map(|r| GenerationCase {
                        prompt: vocab.encode(&linearize(&r.fields)),
                        references: r.references.clone(),
                    })
                    .collect(),
                test_examples: make_finetune_examples(vocab, &te)?,
            })
        }
        Task::Summarization => {
            let pairs = summarization_pairs(
                data.task_items,
                data.n_filler,
                data.data_seed.wrapping_add(1),
            );
            let (tr, va, te) = split_80_10_10(&pairs);
            let test_examples = make_summarization_examples(vocab, &te);
            Ok(TaskSplit {
                data: TaskData {
                    train: make_summarization_examples(vocab, &tr),
                    validation: make_summarization_examples(vocab, &va),
                },
                test_cases: test_examples
                    .iter()
                    .zip(&te)
                    .map(|(e, p)| GenerationCase {
                        prompt: e.prompt.clone(),
                        references: vec![p.summary.clone()],
                    })
                    .collect(),
                test_examples,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_roundtrip_and_unknown_keys() {
        let c = RunConfig::from_preset("toy-small", Path::new("out"), 7).unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        v.as_object_mut().unwrap().remove("bogus");
        v["pretrain"]["bogus"] = serde_json::json!(1);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_preset("toy-small", Path::new("out"), 1).unwrap();
        let b = RunConfig::from_preset("toy-small", Path::new("out"), 2).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn task_split_sizes() {
        let data = DataConfig {
            synthetic_docs: 200,
            task_items: 50,
            ..DataConfig::default()
        };
        let model = ModelConfig::new(1, 16, 2, 300, 128);
        let docs = corpus_documents(&data).unwrap();
        let vocab = resolve_vocab(&data, &model, &docs).unwrap();
        let split = task_split(&data, &vocab).unwrap();
        assert_eq!(split.test_cases.len(), 5);
        assert!(split.data.train.len() >= 40);
        let summ = task_split(
            &DataConfig {
                task: Task::Summarization,
                ..data
            },
            &vocab,
        )
        .unwrap();
        assert_eq!((summ.data.train.len(), summ.test_cases.len()), (40, 5));
        assert!(check_vocab(&vocab, &ModelConfig::new(1, 16, 2, 301, 128)).is_err());
    }

    #[test]
    fn wrong_schema_rejected() {
        let mut c = RunConfig::from_preset("toy-small", Path::new("out"), 1).unwrap();
        c.schema_version = 99;
        assert!(RunConfig::from_json(&c.to_json()).is_err());
    }
}
