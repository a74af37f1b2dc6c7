//! Tokenization, sequence packing and task formatting.

mod bpe;
mod examples;
mod pack;
pub mod synthetic;

pub use bpe::{train_bpe, Vocabulary, BYTE_VOCAB, EOT_ID};
pub use examples::{
    finetune_batch, linearize, make_finetune_examples, make_summarization_examples,
    parse_linearized, DataRecord, PromptTarget, SummaryPair, FIELD_SEPARATOR, PROMPT_TERMINATOR,
};
pub use pack::{pack, PackedDataset};

use std::path::Path;

use crate::error::{Error, Result};

/// Reads every `.txt` file in `dir`, sorted by file name.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<String>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .txt files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| Ok(std::fs::read_to_string(p)?))
        .collect()
}
