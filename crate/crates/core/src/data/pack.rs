//! Fixed-length sequence packing and the packed-dataset file.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! offset 0        8 bytes   magic "SPDFPACK"
//! offset 8        u32       header length H
//! offset 12       H bytes   UTF-8 JSON header {format_version, vocab_hash, seq_len, count}
//! offset 12+H     count·seq_len × u32 token ids
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bpe::Vocabulary;
use crate::error::{Error, Result};
use crate::ops::TokenId;

const MAGIC: &[u8; 8] = b"SPDFPACK";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedDataset {
    pub seq_len: usize,
    pub vocab_hash: String,
    tokens: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PackHeader {
    format_version: u32,
    vocab_hash: String,
    seq_len: usize,
    count: usize,
}

impl PackedDataset {
    pub fn from_tokens(seq_len: usize, vocab_hash: String, tokens: Vec<TokenId>) -> Result<Self> {
        if seq_len == 0 || !tokens.len().is_multiple_of(seq_len) {
            return Err(Error::Input(format!(
                "{} tokens do not split into sequences of {seq_len}",
                tokens.len()
            )));
        }
        Ok(Self {
            seq_len,
            vocab_hash,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.seq_len
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn chunk(&self, i: usize) -> &[TokenId] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn chunks(&self) -> impl Iterator<Item = &[TokenId]> {
        self.tokens.chunks_exact(self.seq_len)
    }

    pub fn total_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&PackHeader {
            format_version: 1,
            vocab_hash: self.vocab_hash.clone(),
            seq_len: self.seq_len,
            count: self.len(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut payload = Vec::with_capacity(self.tokens.len() * 4);
        for t in &self.tokens {
            payload.extend_from_slice(&t.to_le_bytes());
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a packed dataset file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let h: PackHeader = serde_json::from_slice(&header)?;
        if h.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported pack version {}",
                h.format_version
            )));
        }
        let n = h.count * h.seq_len;
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)?;
        let tokens = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if h.seq_len == 0 {
            return Err(Error::Format("zero sequence length".into()));
        }
        Self::from_tokens(h.seq_len, h.vocab_hash, tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Concatenates `encode(doc) + EOT` for every document and cuts the stream
/// into `⌊total / seq_len⌋` chunks, dropping the tail.
pub fn pack<S: AsRef<str>>(
    vocab: &Vocabulary,
    documents: &[S],
    seq_len: usize,
) -> Result<PackedDataset> {
    if seq_len < 2 {
        return Err(Error::Config(format!("sequence length {seq_len} below 2")));
    }
    let mut stream = Vec::new();
    for doc in documents {
        stream.extend(vocab.encode(doc.as_ref()));
        stream.push(vocab.eot_id());
    }
    pack_ids(stream, seq_len, vocab.hash())
}

pub(crate) fn pack_ids(
    mut stream: Vec<TokenId>,
    seq_len: usize,
    vocab_hash: String,
) -> Result<PackedDataset> {
    let keep = stream.len() / seq_len * seq_len;
    stream.truncate(keep);
    PackedDataset::from_tokens(seq_len, vocab_hash, stream)
}
