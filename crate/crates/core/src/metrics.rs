//! Corpus BLEU and generation scoring.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{PromptTarget, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{generate, GenConfig, GptModel};
use crate::ops::TokenId;
use crate::scalar::Scalar;
use crate::sparsity::MaskSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_n: usize,
    /// When set, an n-gram order with no matches uses precision `eps / total` instead of 0.
    pub smoothing_eps: Option<f64>,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing_eps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Corpus BLEU on a 0–100 scale.
    pub bleu: f64,
    /// Clipped n-gram precisions for n = 1..max_n.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub perplexity: Option<f64>,
    pub n_items: usize,
    /// Items whose generation failed and were scored as empty hypotheses.
    pub n_failed: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("BLEU = {:.2}", self.bleu);
        let p: Vec<String> = self
            .precisions
            .iter()
            .map(|p| format!("{:.1}", p * 100.0))
            .collect();
        s += &format!(
            " {} (BP = {:.3} hyp_len = {} ref_len = {})",
            p.join("/"),
            self.brevity_penalty,
            self.hypothesis_length,
            self.reference_length
        );
        if let Some(ppl) = self.perplexity {
            s += &format!("\nPPL = {ppl:.4}");
        }
        s += &format!("\nitems = {} failed = {}\n", self.n_items, self.n_failed);
        s
    }
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Standard corpus-level BLEU over whitespace-tokenized text.
///
/// `references[i]` holds every reference for `hypotheses[i]`. Hypothesis
/// n-gram counts are clipped by the maximum count in any single reference.
/// The effective reference length per item is the one closest to the
/// hypothesis length, preferring the shorter on ties.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[Vec<R>],
    opts: &BleuOptions,
) -> Result<EvalReport> {
    if hypotheses.is_empty() {
        return Err(Error::Input("no hypotheses to score".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Input(format!(
            "{} hypotheses but {} reference lists",
            hypotheses.len(),
            references.len()
        )));
    }
    if opts.max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    let max_n = opts.max_n;
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);

    for (i, (h, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::Input(format!("item {i} has no references")));
        }
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let rs: Vec<Vec<&str>> = refs
            .iter()
            .map(|r| r.as_ref().split_whitespace().collect())
            .collect();
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .expect("non-empty references");
        for n in 1..=max_n {
            let hc = ngram_counts(&h, n);
            let mut max_ref: HashMap<&[&str], u64> = HashMap::new();
            for r in &rs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in hc {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }

    let precisions: Vec<f64> = (0..max_n)
        .map(|k| {
            if totals[k] == 0 {
                0.0
            } else if matches[k] == 0 {
                opts.smoothing_eps.map_or(0.0, |eps| eps / totals[k] as f64)
            } else {
                matches[k] as f64 / totals[k] as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.iter().any(|&p| p <= 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(EvalReport {
        bleu: bleu.min(100.0),
        precisions,
        brevity_penalty,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
        matches,
        totals,
        perplexity: None,
        n_items: hypotheses.len(),
        n_failed: 0,
    })
}

/// One test prompt with its reference texts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationCase {
    pub prompt: Vec<TokenId>,
    pub references: Vec<String>,
}

/// Decoded text with the leading separator space and any end-of-text removed.
pub fn decode_hypothesis(vocab: &Vocabulary, tokens: &[TokenId]) -> String {
    vocab
        .decode(tokens)
        .map(|s| s.trim().to_string())
        .unwrap_or_default()
}

/// Generates a continuation for every case and scores it with corpus BLEU.
/// When `ppl_examples` is non-empty, target-token perplexity is included.
pub fn score_run<T: Scalar>(
    model: &GptModel<T>,
    masks: Option<&MaskSet>,
    vocab: &Vocabulary,
    cases: &[GenerationCase],
    ppl_examples: &[PromptTarget],
    gen: &GenConfig,
) -> Result<EvalReport> {
    let mut n_failed = 0;
    let hyps: Vec<String> = cases
        .iter()
        .enumerate()
        .map(|(i, c)| match generate(model, masks, &c.prompt, gen) {
            Ok(t) => decode_hypothesis(vocab, &t),
            Err(e) => {
                log::warn!("generation failed on item {i}: {e}");
                n_failed += 1;
                String::new()
            }
        })
        .collect();
    let refs: Vec<Vec<String>> = cases.iter().map(|c| c.references.clone()).collect();
    let mut report = corpus_bleu(&hyps, &refs, &BleuOptions::default())?;
    report.n_failed = n_failed;
    if !ppl_examples.is_empty() {
        report.perplexity = Some(crate::train::evaluate_ppl(
            model,
            masks,
            ppl_examples,
            vocab.pad_id(),
        )?);
    }
    Ok(report)
}
