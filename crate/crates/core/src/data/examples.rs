//! Prompt/target formatting for fine-tuning.
//!
//! A data record `{name: "Blue Spice", food: "French"}` linearizes to
//!
//! ```text
//! name : Blue Spice | food : French ||
//! ```
//!
//! Fields keep their input order, are joined by `" | "`, and the prompt ends
//! with `" ||"`. The target is `" " + reference` followed by end-of-text.
//! Summarization prompts are `document + " ||"` with the same target format.

use serde::{Deserialize, Serialize};

use super::bpe::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{TokenBatch, IGNORE_INDEX};
use crate::ops::TokenId;

pub const FIELD_SEPARATOR: &str = " | ";
pub const PROMPT_TERMINATOR: &str = " ||";

/// A structured record with one or more reference texts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub fields: Vec<(String, String)>,
    pub references: Vec<String>,
}

/// A document with its reference summary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPair {
    pub document: String,
    pub summary: String,
}

/// Tokenized prompt and target. The target ends with end-of-text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTarget {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl PromptTarget {
    /// Prompt followed by target.
    pub fn sequence(&self) -> Vec<TokenId> {
        let mut s = self.prompt.clone();
        s.extend_from_slice(&self.target);
        s
    }

    /// `false` on prompt positions, `true` on target positions of [`Self::sequence`].
    pub fn loss_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.prompt.len()];
        m.extend(std::iter::repeat_n(true, self.target.len()));
        m
    }

    /// Model input length when trained on this example.
    pub fn input_len(&self) -> usize {
        self.prompt.len() + self.target.len() - 1
    }
}

pub fn linearize(fields: &[(String, String)]) -> String {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{k} : {v}")).collect();
    format!("{}{}", body.join(FIELD_SEPARATOR), PROMPT_TERMINATOR)
}

/// Inverse of [`linearize`].
pub fn parse_linearized(prompt: &str) -> Option<Vec<(String, String)>> {
    let body = prompt.strip_suffix(PROMPT_TERMINATOR)?;
    body.split(FIELD_SEPARATOR)
        .map(|kv| {
            let (k, v) = kv.split_once(" : ")?;
            Some((k.to_string(), v.to_string()))
        })
        .collect()
}

fn make_example(vocab: &Vocabulary, prompt: &str, reference: &str) -> PromptTarget {
    let mut target = vocab.encode(&format!(" {reference}"));
    target.push(vocab.eot_id());
    PromptTarget {
        prompt: vocab.encode(prompt),
        target,
    }
}

/// One example per (record, reference) pair. Records with an empty field are
/// rejected; empty references are skipped with a warning.
pub fn make_finetune_examples(
    vocab: &Vocabulary,
    records: &[DataRecord],
) -> Result<Vec<PromptTarget>> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.fields.is_empty() || r.fields.iter().any(|(k, v)| k.is_empty() || v.is_empty()) {
            return Err(Error::Input(format!("record {i} has an empty field")));
        }
        let prompt = linearize(&r.fields);
        for reference in &r.references {
            if reference.trim().is_empty() {
                log::warn!("record {i}: skipping empty reference");
                continue;
            }
            out.push(make_example(vocab, &prompt, reference));
        }
    }
    Ok(out)
}

pub fn make_summarization_examples(vocab: &Vocabulary, pairs: &[SummaryPair]) -> Vec<PromptTarget> {
    pairs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if p.summary.trim().is_empty() {
                log::warn!("pair {i}: skipping empty summary");
                return None;
            }
            Some(make_example(
                vocab,
                &format!("{}{}", p.document, PROMPT_TERMINATOR),
                &p.summary,
            ))
        })
        .collect()
}

/// Right-padded batch with loss only on target positions.
pub fn finetune_batch(examples: &[&PromptTarget], pad_id: TokenId) -> Result<TokenBatch> {
    let seq_len = examples.iter().map(|e| e.input_len()).max().unwrap_or(0);
    if examples.is_empty() || seq_len == 0 {
        return Err(Error::Input("empty fine-tuning batch".into()));
    }
    let mut inputs = Vec::with_capacity(examples.len() * seq_len);
    let mut targets = Vec::with_capacity(examples.len() * seq_len);
    for e in examples {
        let s = e.sequence();
        let n = s.len() - 1;
        for i in 0..seq_len {
            if i < n {
                inputs.push(s[i]);
                targets.push(if i + 1 >= e.prompt.len() {
                    s[i + 1]
                } else {
                    IGNORE_INDEX
                });
            } else {
                inputs.push(pad_id);
                targets.push(IGNORE_INDEX);
            }
        }
    }
    TokenBatch::new(examples.len(), seq_len, inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(fields: &[(&str, &str)], refs: &[&str]) -> DataRecord {
        DataRecord {
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            references: refs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn linearization_template() {
        let r = rec(&[("name", "Blue Spice"), ("food", "French")], &["x"]);
        let s = linearize(&r.fields);
        assert_eq!(s, "name : Blue Spice | food : French ||");
        assert_eq!(parse_linearized(&s).unwrap(), r.fields);
    }

    #[test]
    fn loss_mask_covers_target_and_eot() {
        let v = Vocabulary::bytes_only();
        let r = rec(&[("name", "Aromi")], &["Aromi is nice ."]);
        let ex = make_finetune_examples(&v, &[r]).unwrap();
        assert_eq!(ex.len(), 1);
        let ref_tokens = v.encode(" Aromi is nice .").len();
        let mask = ex[0].loss_mask();
        assert_eq!(mask.iter().filter(|&&m| m).count(), ref_tokens + 1);
        assert!(mask[..ex[0].prompt.len()].iter().all(|&m| !m));
        assert_eq!(*ex[0].target.last().unwrap(), v.eot_id());
    }

    #[test]
    fn field_order_preserved_and_empty_refs_skipped() {
        let v = Vocabulary::bytes_only();
        let r = rec(&[("b", "2"), ("a", "1")], &["", "text"]);
        let ex = make_finetune_examples(&v, &[r]).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(v.decode(&ex[0].prompt).unwrap(), "b : 2 | a : 1 ||");
        let bad = rec(&[("name", "")], &["t"]);
        assert!(make_finetune_examples(&v, &[bad]).is_err());
    }

    #[test]
    fn batch_targets_only_on_completion() {
        let v = Vocabulary::bytes_only();
        let a = PromptTarget {
            prompt: vec![1, 2, 3],
            target: vec![4, 5, v.eot_id()],
        };
        let b = PromptTarget {
            prompt: vec![7],
            target: vec![8, v.eot_id()],
        };
        let batch = finetune_batch(&[&a, &b], v.pad_id()).unwrap();
        assert_eq!(batch.seq_len, 5);
        let x = IGNORE_INDEX;
        assert_eq!(&batch.targets[..5], &[x, x, 4, 5, v.eot_id()]);
        assert_eq!(&batch.targets[5..], &[8, v.eot_id(), x, x, x]);
        assert_eq!(batch.target_count(), a.target.len() + b.target.len());
    }
}
