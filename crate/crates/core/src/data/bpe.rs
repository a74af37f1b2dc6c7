//! Byte-level BPE.
//!
//! Ids `0..256` are raw bytes, `256` is end-of-text, and merge `i` produces id
//! `257 + i`. Text is split into chunks that begin at each space byte and
//! merges never cross chunk boundaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::TokenId;

pub const BYTE_VOCAB: usize = 256;
pub const EOT_ID: TokenId = 256;
const FIRST_MERGE_ID: TokenId = 257;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(TokenId, TokenId)>,
    ranks: HashMap<(TokenId, TokenId), u32>,
    token_bytes: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    format: String,
    version: u32,
    eot_id: TokenId,
    merges: Vec<(TokenId, TokenId)>,
}

const VOCAB_FORMAT: &str = "spdf-bpe";

fn chunks(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let mut i = start + 1;
        while i < bytes.len() && bytes[i] != b' ' {
            i += 1;
        }
        let c = &bytes[start..i];
        start = i;
        Some(c)
    })
}

impl Vocabulary {
    /// Raw bytes plus end-of-text, no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    pub fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Result<Self> {
        let mut token_bytes: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        token_bytes.push(Vec::new()); // end-of-text
        let mut ranks = HashMap::new();
        for (i, &(a, b)) in merges.iter().enumerate() {
            let next = FIRST_MERGE_ID as usize + i;
            let valid = |t: TokenId| (t as usize) < next && t != EOT_ID;
            if !valid(a) || !valid(b) {
                return Err(Error::Format(format!(
                    "merge {i} references undefined token ({a}, {b})"
                )));
            }
            let mut bytes = token_bytes[a as usize].clone();
            bytes.extend_from_slice(&token_bytes[b as usize]);
            token_bytes.push(bytes);
            ranks.insert((a, b), i as u32);
        }
        Ok(Self {
            merges,
            ranks,
            token_bytes,
        })
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_VOCAB + 1 + self.merges.len()
    }

    pub fn eot_id(&self) -> TokenId {
        EOT_ID
    }

    /// Padding id used for input positions past the end of a sequence.
    pub fn pad_id(&self) -> TokenId {
        EOT_ID
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(|v| v.as_slice())
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<TokenId>) {
        let mut ids: Vec<TokenId> = chunk.iter().map(|&b| b as TokenId).collect();
        loop {
            let best = ids
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let pair = self.merges[rank as usize];
            let new_id = FIRST_MERGE_ID + rank;
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            ids = merged;
        }
        out.extend(ids);
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(bytes.len());
        for c in chunks(bytes) {
            self.encode_chunk(c, &mut out);
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_bytes(text.as_bytes())
    }

    /// Concatenated bytes of `ids`. End-of-text contributes nothing.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let b = self.token_bytes(id).ok_or_else(|| {
                Error::Input(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size()
                ))
            })?;
            out.extend_from_slice(b);
        }
        Ok(out)
    }

    /// Decodes to text, replacing invalid UTF-8 sequences.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile {
            format: VOCAB_FORMAT.into(),
            version: 1,
            eot_id: EOT_ID,
            merges: self.merges.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        if f.format != VOCAB_FORMAT || f.version != 1 || f.eot_id != EOT_ID {
            return Err(Error::Format("not an spdf-bpe v1 vocabulary".into()));
        }
        Self::from_merges(f.merges)
    }

    /// Short content hash identifying the merge list.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Learns merges until the vocabulary reaches `vocab_size` or no pair repeats.
///
/// Each round merges the most frequent adjacent pair; ties go to the pair whose
/// (left bytes, right bytes) is lexicographically smallest.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocabulary> {
    if vocab_size < BYTE_VOCAB + 1 {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} below the 257 byte-level minimum"
        )));
    }
    if corpus.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::Input("empty corpus".into()));
    }
    let mut counts: HashMap<&[u8], u64> = HashMap::new();
    for doc in corpus {
        for c in chunks(doc.as_ref().as_bytes()) {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<TokenId>, u64)> = counts
        .into_iter()
        .map(|(w, n)| (w.iter().map(|&b| b as TokenId).collect(), n))
        .collect();
    words.sort();

    let mut vocab = Vocabulary::bytes_only();
    while vocab.vocab_size() < vocab_size {
        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (w, n) in &words {
            for p in w.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += n;
            }
        }
        let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (
                    &vocab.token_bytes[pa.0 as usize],
                    &vocab.token_bytes[pa.1 as usize],
                );
                let kb = (
                    &vocab.token_bytes[pb.0 as usize],
                    &vocab.token_bytes[pb.1 as usize],
                );
                kb.cmp(&ka)
            })
        });
        let Some((pair, _)) = best else { break };
        let new_id = vocab.vocab_size() as TokenId;
        for (w, _) in &mut words {
            let mut i = 0;
            let mut merged = Vec::with_capacity(w.len());
            while i < w.len() {
                if i + 1 < w.len() && (w[i], w[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(w[i]);
                    i += 1;
                }
            }
            *w = merged;
        }
        let mut merges = vocab.merges.clone();
        merges.push(pair);
        vocab = Vocabulary::from_merges(merges)?;
    }
    Ok(vocab)
}
