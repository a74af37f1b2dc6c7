//! Greedy and beam-search decoding.

use serde::{Deserialize, Serialize};

use super::gpt::{DecodeState, Decoder, GptModel};
use crate::error::{Error, Result};
use crate::ops::TokenId;
use crate::scalar::Scalar;
use crate::sparsity::MaskSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub beam_size: usize,
    /// Exponent on hypothesis length when ranking finished beams.
    pub length_penalty: f64,
    /// Ban any n-gram of this size from repeating within the generated text; 0 disables.
    pub no_repeat_ngram: usize,
    pub max_new_tokens: usize,
    pub eot_id: TokenId,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            beam_size: 10,
            length_penalty: 0.9,
            no_repeat_ngram: 4,
            max_new_tokens: 64,
            eot_id: crate::data::EOT_ID,
        }
    }
}

fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let l: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    l.into_iter().map(|v| v - lse).collect()
}

/// Tokens that would complete an n-gram already present in `generated`.
fn banned_tokens(generated: &[TokenId], n: usize) -> Vec<TokenId> {
    if n == 0 || generated.len() + 1 < n {
        return Vec::new();
    }
    let prefix = &generated[generated.len() + 1 - n..];
    generated
        .windows(n)
        .filter(|w| &w[..n - 1] == prefix)
        .map(|w| w[n - 1])
        .collect()
}

fn prime<T: Scalar>(
    decoder: &Decoder<'_, T>,
    prompt: &[TokenId],
    cfg: &GenConfig,
) -> Result<(DecodeState<T>, Vec<T>)> {
    if prompt.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    if prompt.len() >= decoder.context_window() {
        return Err(Error::Input(format!(
            "prompt of {} tokens does not fit context window {}",
            prompt.len(),
            decoder.context_window()
        )));
    }
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    let mut state = decoder.new_state();
    let mut logits = Vec::new();
    for &t in prompt {
        logits = decoder.step(&mut state, t)?;
    }
    Ok((state, logits))
}

/// Argmax decoding. Returns generated tokens, excluding the end-of-text id.
pub fn greedy_decode<T: Scalar>(
    model: &GptModel<T>,
    masks: Option<&MaskSet>,
    prompt: &[TokenId],
    cfg: &GenConfig,
) -> Result<Vec<TokenId>> {
    let decoder = model.decoder(masks)?;
    let (mut state, mut logits) = prime(&decoder, prompt, cfg)?;
    let mut out = Vec::new();
    while out.len() < cfg.max_new_tokens {
        let mut scores = log_softmax(&logits);
        for b in banned_tokens(&out, cfg.no_repeat_ngram) {
            scores[b as usize] = f64::NEG_INFINITY;
        }
        // first index wins ties
        let mut best = 0usize;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let tok = best as TokenId;
        if tok == cfg.eot_id {
            break;
        }
        out.push(tok);
        if state.len() >= decoder.context_window() || out.len() == cfg.max_new_tokens {
            break;
        }
        logits = decoder.step(&mut state, tok)?;
    }
    Ok(out)
}

struct Beam<T> {
    tokens: Vec<TokenId>,
    score: f64,
    state: DecodeState<T>,
    logits: Vec<T>,
}

/// Decodes from `prompt` with beam search (`beam_size = 1` is greedy decoding).
///
/// Each step ranks the `2·beam_size` best continuations over all live beams.
/// An end-of-text continuation ranked inside the top `beam_size` finishes a
/// hypothesis with score `Σ log p / len^length_penalty`; the best non-final
/// continuations become the next beams. Search stops once `beam_size`
/// hypotheses are finished and no live beam can outrank the worst of them,
/// or at `max_new_tokens`.
pub fn generate<T: Scalar>(
    model: &GptModel<T>,
    masks: Option<&MaskSet>,
    prompt: &[TokenId],
    cfg: &GenConfig,
) -> Result<Vec<TokenId>> {
    let decoder = model.decoder(masks)?;
    let (state, logits) = prime(&decoder, prompt, cfg)?;
    let k = cfg.beam_size;
    let norm = |score: f64, len: usize| score / (len.max(1) as f64).powf(cfg.length_penalty);
    let mut finished: Vec<(f64, Vec<TokenId>)> = Vec::new();
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        score: 0.0,
        state,
        logits,
    }];

    for cur in 1..=cfg.max_new_tokens {
        // (score, beam index, token)
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            let mut lp = log_softmax(&beam.logits);
            for b in banned_tokens(&beam.tokens, cfg.no_repeat_ngram) {
                lp[b as usize] = f64::NEG_INFINITY;
            }
            cands.extend(
                lp.iter()
                    .enumerate()
                    .filter(|(_, s)| s.is_finite())
                    .map(|(t, s)| (beam.score + s, bi, t as TokenId)),
            );
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(2 * k);

        let mut next = Vec::with_capacity(k);
        for (rank, &(score, bi, tok)) in cands.iter().enumerate() {
            if tok == cfg.eot_id {
                if rank < k {
                    finished.push((norm(score, cur), beams[bi].tokens.clone()));
                }
                continue;
            }
            if next.len() == k {
                continue;
            }
            let parent = &beams[bi];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut state = parent.state.clone();
            let logits = if cur < cfg.max_new_tokens && state.len() < decoder.context_window() {
                decoder.step(&mut state, tok)?
            } else {
                Vec::new()
            };
            next.push(Beam {
                tokens,
                score,
                state,
                logits,
            });
        }
        finished.sort_by(|a, b| b.0.total_cmp(&a.0));
        finished.truncate(k);
        beams = next;

        let out_of_room = beams.iter().any(|b| b.logits.is_empty());
        if beams.is_empty() || out_of_room {
            break;
        }
        if finished.len() >= k {
            let worst = finished.last().map(|f| f.0).unwrap_or(f64::NEG_INFINITY);
            let best_live = norm(beams[0].score, cur);
            if worst >= best_live {
                break;
            }
        }
    }
    if finished.len() < k {
        for b in &beams {
            finished.push((norm(b.score, b.tokens.len()), b.tokens.clone()));
        }
        finished.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    Ok(finished.into_iter().next().map(|f| f.1).unwrap_or_default())
}
