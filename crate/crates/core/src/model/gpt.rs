//! Pre-LayerNorm decoder-only transformer with learned absolute positions.
//!
//! Weight matrices are stored `[in × out]`, so a linear layer computes `y = x·W + b`.
//! When a [`MaskSet`] is supplied, every sparsifiable matrix is multiplied
//! elementwise by its mask before use and its gradient is masked the same way.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{dim_err, Error, Result};
use crate::ops::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use crate::ops::{cross_entropy, cross_entropy_backward, TokenId, DEFAULT_LAYERNORM_EPS};
use crate::scalar::Scalar;
use crate::sparsity::MaskSet;
use crate::tensor::{DualTensor, Tensor};

/// Target id excluded from the loss (padding and prompt positions).
pub const IGNORE_INDEX: TokenId = TokenId::MAX;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    TokenEmbedding,
    PositionEmbedding,
    /// Q, K, V, Output and the two feed-forward matrices.
    Sparsifiable,
    LayerNormGain,
    LayerNormBias,
    Bias,
    /// Untied unembedding matrix `[V×d]`.
    OutputHead,
}

impl ParamKind {
    pub fn is_sparsifiable(self) -> bool {
        self == ParamKind::Sparsifiable
    }

    /// Whether decoupled weight decay applies. LayerNorm parameters and biases are exempt.
    pub fn decays(self) -> bool {
        !matches!(
            self,
            ParamKind::LayerNormGain | ParamKind::LayerNormBias | ParamKind::Bias
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: DualTensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.tensor.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.tensor.grad
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    wfc: usize,
    bfc: usize,
    wproj: usize,
    bproj: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Slots {
    wte: usize,
    wpe: usize,
    layers: Vec<LayerSlots>,
    lnf_g: usize,
    lnf_b: usize,
    head: Option<usize>,
}

/// A batch of `batch` sequences of `seq_len` input ids with per-position next-token targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub inputs: Vec<TokenId>,
    /// Target id for each input position, or [`IGNORE_INDEX`].
    pub targets: Vec<TokenId>,
}

impl TokenBatch {
    pub fn new(
        batch: usize,
        seq_len: usize,
        inputs: Vec<TokenId>,
        targets: Vec<TokenId>,
    ) -> Result<Self> {
        if batch == 0 || seq_len == 0 {
            return Err(Error::Input("empty token batch".into()));
        }
        if inputs.len() != batch * seq_len || targets.len() != batch * seq_len {
            return dim_err(format!(
                "token batch {batch}×{seq_len} got {} inputs and {} targets",
                inputs.len(),
                targets.len()
            ));
        }
        Ok(Self {
            batch,
            seq_len,
            inputs,
            targets,
        })
    }

    /// Next-token batch from equal-length sequences: inputs `s[..n-1]`, targets `s[1..]`.
    pub fn next_token<S: AsRef<[TokenId]>>(seqs: &[S]) -> Result<Self> {
        let n = seqs.first().map(|s| s.as_ref().len()).unwrap_or(0);
        if n < 2 {
            return Err(Error::Input(
                "next-token batch needs sequences of length ≥ 2".into(),
            ));
        }
        let mut inputs = Vec::with_capacity(seqs.len() * (n - 1));
        let mut targets = Vec::with_capacity(seqs.len() * (n - 1));
        for s in seqs {
            let s = s.as_ref();
            if s.len() != n {
                return dim_err("next-token batch sequences differ in length");
            }
            inputs.extend_from_slice(&s[..n - 1]);
            targets.extend_from_slice(&s[1..]);
        }
        Self::new(seqs.len(), n - 1, inputs, targets)
    }

    /// Number of positions that contribute to the loss.
    pub fn target_count(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE_INDEX).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GptModel<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    slots: Slots,
}

struct ParamBuilder<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamBuilder<T> {
    fn add(&mut self, name: String, kind: ParamKind, shape: &[usize]) -> usize {
        self.params.push(Param {
            name,
            kind,
            tensor: DualTensor::new(Tensor::zeros(shape)),
        });
        self.params.len() - 1
    }
}

impl<T: Scalar> GptModel<T> {
    /// Builds the parameter layout with all values zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.d_ff;
        let mut b = ParamBuilder { params: Vec::new() };
        let wte = b.add(
            "wte".into(),
            ParamKind::TokenEmbedding,
            &[config.vocab_size, d],
        );
        let wpe = b.add(
            "wpe".into(),
            ParamKind::PositionEmbedding,
            &[config.context_window, d],
        );
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("h.{l}.{s}");
            layers.push(LayerSlots {
                ln1_g: b.add(p("ln_1.gain"), ParamKind::LayerNormGain, &[d]),
                ln1_b: b.add(p("ln_1.bias"), ParamKind::LayerNormBias, &[d]),
                wq: b.add(p("attn.q.weight"), ParamKind::Sparsifiable, &[d, d]),
                bq: b.add(p("attn.q.bias"), ParamKind::Bias, &[d]),
                wk: b.add(p("attn.k.weight"), ParamKind::Sparsifiable, &[d, d]),
                bk: b.add(p("attn.k.bias"), ParamKind::Bias, &[d]),
                wv: b.add(p("attn.v.weight"), ParamKind::Sparsifiable, &[d, d]),
                bv: b.add(p("attn.v.bias"), ParamKind::Bias, &[d]),
                wo: b.add(p("attn.out.weight"), ParamKind::Sparsifiable, &[d, d]),
                bo: b.add(p("attn.out.bias"), ParamKind::Bias, &[d]),
                ln2_g: b.add(p("ln_2.gain"), ParamKind::LayerNormGain, &[d]),
                ln2_b: b.add(p("ln_2.bias"), ParamKind::LayerNormBias, &[d]),
                wfc: b.add(p("mlp.fc.weight"), ParamKind::Sparsifiable, &[d, f]),
                bfc: b.add(p("mlp.fc.bias"), ParamKind::Bias, &[f]),
                wproj: b.add(p("mlp.proj.weight"), ParamKind::Sparsifiable, &[f, d]),
                bproj: b.add(p("mlp.proj.bias"), ParamKind::Bias, &[d]),
            });
        }
        let lnf_g = b.add("ln_f.gain".into(), ParamKind::LayerNormGain, &[d]);
        let lnf_b = b.add("ln_f.bias".into(), ParamKind::LayerNormBias, &[d]);
        let head = if config.tie_embeddings {
            None
        } else {
            Some(b.add(
                "lm_head".into(),
                ParamKind::OutputHead,
                &[config.vocab_size, d],
            ))
        };
        Ok(Self {
            config: config.clone(),
            params: b.params,
            slots: Slots {
                wte,
                wpe,
                layers,
                lnf_g,
                lnf_b,
                head,
            },
        })
    }

    /// Random initialization: weights ~ N(0, 0.02²), residual output projections
    /// scaled by `1/√(2L)`, biases zero, LayerNorm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid =
            Normal::new(0.0, INIT_STD / (2.0 * config.n_layers as f64).sqrt()).expect("valid std");
        for p in &mut model.params {
            let is_resid =
                p.name.ends_with("attn.out.weight") || p.name.ends_with("mlp.proj.weight");
            let data = p.tensor.value.data_mut();
            match p.kind {
                ParamKind::LayerNormGain => data.iter_mut().for_each(|x| *x = T::one()),
                ParamKind::LayerNormBias | ParamKind::Bias => {}
                _ => {
                    let dist = if is_resid { &resid } else { &base };
                    data.iter_mut()
                        .for_each(|x| *x = T::of(dist.sample(&mut rng)));
                }
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Parameter count by enumerating tensors.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value().len()).sum()
    }

    pub fn count_sparsifiable_params(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.is_sparsifiable())
            .map(|p| p.value().len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Same parameters in another scalar type (values rounded as needed).
    pub fn cast<U: Scalar>(&self) -> GptModel<U> {
        GptModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: DualTensor {
                        value: p.tensor.value.cast(),
                        grad: p.tensor.grad.cast(),
                    },
                })
                .collect(),
            slots: self.slots.clone(),
        }
    }

    fn check_masks(&self, masks: Option<&MaskSet>) -> Result<()> {
        if let Some(m) = masks {
            m.check_compatible(self)?;
        }
        Ok(())
    }

    /// Sparsifiable weights multiplied by their masks; `None` where the raw value is used.
    fn effective_weights(&self, masks: Option<&MaskSet>) -> Vec<Option<Vec<T>>> {
        self.params
            .iter()
            .map(|p| {
                let mask = masks.and_then(|m| m.get(&p.name))?;
                let mut w = p.value().data().to_vec();
                mask.apply_to(&mut w);
                Some(w)
            })
            .collect()
    }

    fn validate_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.seq_len > self.config.context_window {
            return Err(Error::Input(format!(
                "sequence length {} exceeds context window {}",
                batch.seq_len, self.config.context_window
            )));
        }
        let v = self.config.vocab_size;
        if let Some(&bad) = batch.inputs.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        if let Some(&bad) = batch
            .targets
            .iter()
            .find(|&&t| t != IGNORE_INDEX && t as usize >= v)
        {
            return Err(Error::Input(format!(
                "target id {bad} out of range for vocabulary of {v}"
            )));
        }
        Ok(())
    }

    /// Mean next-token loss and logits `[B·T × V]`.
    pub fn forward_loss(
        &self,
        batch: &TokenBatch,
        masks: Option<&MaskSet>,
    ) -> Result<(T, Tensor<T>)> {
        self.validate_batch(batch)?;
        self.check_masks(masks)?;
        let eff = self.effective_weights(masks);
        let view = View {
            model: self,
            eff: &eff,
        };
        let cache = view.forward(batch)?;
        let logits = Tensor::new(
            vec![batch.batch * batch.seq_len, self.config.vocab_size],
            cache.logits,
        )?;
        Ok((cache.loss.loss, logits))
    }

    /// Sum of target negative log likelihoods and the number of targets.
    pub fn nll_sum(&self, batch: &TokenBatch, masks: Option<&MaskSet>) -> Result<(f64, usize)> {
        self.validate_batch(batch)?;
        self.check_masks(masks)?;
        let eff = self.effective_weights(masks);
        let view = View {
            model: self,
            eff: &eff,
        };
        let cache = view.forward(batch)?;
        Ok((cache.loss.nll_sum, cache.loss.count))
    }

    /// Logits `[T × V]` for a single sequence.
    pub fn logits(&self, tokens: &[TokenId], masks: Option<&MaskSet>) -> Result<Tensor<T>> {
        let batch = TokenBatch::new(
            1,
            tokens.len(),
            tokens.to_vec(),
            vec![IGNORE_INDEX; tokens.len()],
        )?;
        Ok(self.forward_loss(&batch, masks)?.1)
    }

    /// Zeroes gradients, runs forward and backward, and leaves `∂loss/∂θ` in each parameter's grad.
    pub fn loss_and_grad(&mut self, batch: &TokenBatch, masks: Option<&MaskSet>) -> Result<T> {
        self.validate_batch(batch)?;
        self.check_masks(masks)?;
        let eff = self.effective_weights(masks);
        let (loss, grads) = {
            let view = View {
                model: self,
                eff: &eff,
            };
            let cache = view.forward(batch)?;
            let loss = cache.loss.loss;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "loss".into(),
                });
            }
            (loss, view.backward(batch, &cache))
        };
        for (p, g) in self.params.iter_mut().zip(grads) {
            let mut g = g;
            if let Some(mask) = masks.and_then(|m| m.get(&p.name)) {
                mask.apply_to(&mut g);
            }
            p.tensor.grad.data_mut().copy_from_slice(&g);
        }
        Ok(loss)
    }

    /// Incremental decoder for generation. Effective (masked) weights are materialized once.
    pub fn decoder(&self, masks: Option<&MaskSet>) -> Result<Decoder<'_, T>> {
        self.check_masks(masks)?;
        let eff = self.effective_weights(masks);
        let unembed = self.unembedding().value();
        let unembed_t =
            kernels::transpose(unembed.data(), self.config.vocab_size, self.config.d_model);
        Ok(Decoder {
            model: self,
            eff,
            unembed_t,
        })
    }

    fn unembedding(&self) -> &Param<T> {
        &self.params[self.slots.head.unwrap_or(self.slots.wte)]
    }
}

struct LayerCache<T> {
    ln1_out: Vec<T>,
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    ln2_out: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
}

struct Cache<T> {
    layers: Vec<LayerCache<T>>,
    lnf_out: Vec<T>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    logits: Vec<T>,
    loss: crate::ops::CrossEntropy<T>,
}

/// Model with effective weights resolved.
struct View<'a, T> {
    model: &'a GptModel<T>,
    eff: &'a [Option<Vec<T>>],
}

impl<'a, T: Scalar> View<'a, T> {
    fn w(&self, idx: usize) -> &[T] {
        match &self.eff[idx] {
            Some(w) => w,
            None => self.model.params[idx].value().data(),
        }
    }

    fn forward(&self, batch: &TokenBatch) -> Result<Cache<T>> {
        let cfg = &self.model.config;
        let s = &self.model.slots;
        let (bsz, t, d, f) = (batch.batch, batch.seq_len, cfg.d_model, cfg.d_ff);
        let rows = bsz * t;
        let eps = T::of(DEFAULT_LAYERNORM_EPS);

        let wte = self.w(s.wte);
        let wpe = self.w(s.wpe);
        let mut x = vec![T::zero(); rows * d];
        for (r, &id) in batch.inputs.iter().enumerate() {
            let pos = r % t;
            let xr = &mut x[r * d..(r + 1) * d];
            let te = &wte[id as usize * d..(id as usize + 1) * d];
            let pe = &wpe[pos * d..(pos + 1) * d];
            for j in 0..d {
                xr[j] = te[j] + pe[j];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for ls in &s.layers {
            let mut ln1_out = vec![T::zero(); rows * d];
            let mut ln1_xhat = vec![T::zero(); rows * d];
            let mut ln1_rstd = vec![T::zero(); rows];
            kernels::layernorm_rows(
                &x,
                self.w(ls.ln1_g),
                self.w(ls.ln1_b),
                eps,
                &mut ln1_out,
                &mut ln1_xhat,
                &mut ln1_rstd,
            );

            let linear = |inp: &[T], w: usize, b: usize, out_dim: usize, in_dim: usize| {
                let mut out = vec![T::zero(); rows * out_dim];
                gemm_nn(inp, self.w(w), &mut out, rows, in_dim, out_dim, false);
                kernels::add_row_bias(&mut out, self.w(b));
                out
            };
            let q = linear(&ln1_out, ls.wq, ls.bq, d, d);
            let k = linear(&ln1_out, ls.wk, ls.bk, d, d);
            let v = linear(&ln1_out, ls.wv, ls.bv, d, d);
            let mut att = vec![T::zero(); rows * d];
            let mut probs = vec![T::zero(); bsz * cfg.n_heads * t * t];
            attention_forward(
                &q,
                &k,
                &v,
                bsz,
                t,
                cfg.n_heads,
                cfg.d_head,
                &mut att,
                &mut probs,
            );
            let y = linear(&att, ls.wo, ls.bo, d, d);
            kernels::add_in_place(&mut x, &y);

            let mut ln2_out = vec![T::zero(); rows * d];
            let mut ln2_xhat = vec![T::zero(); rows * d];
            let mut ln2_rstd = vec![T::zero(); rows];
            kernels::layernorm_rows(
                &x,
                self.w(ls.ln2_g),
                self.w(ls.ln2_b),
                eps,
                &mut ln2_out,
                &mut ln2_xhat,
                &mut ln2_rstd,
            );
            let h_pre = linear(&ln2_out, ls.wfc, ls.bfc, f, d);
            let mut h_act = vec![T::zero(); rows * f];
            kernels::gelu_into(&h_pre, &mut h_act);
            let z = linear(&h_act, ls.wproj, ls.bproj, d, f);
            kernels::add_in_place(&mut x, &z);

            layers.push(LayerCache {
                ln1_out,
                ln1_xhat,
                ln1_rstd,
                q,
                k,
                v,
                probs,
                att,
                ln2_out,
                ln2_xhat,
                ln2_rstd,
                h_pre,
                h_act,
            });
        }

        let mut lnf_out = vec![T::zero(); rows * d];
        let mut lnf_xhat = vec![T::zero(); rows * d];
        let mut lnf_rstd = vec![T::zero(); rows];
        kernels::layernorm_rows(
            &x,
            self.w(s.lnf_g),
            self.w(s.lnf_b),
            eps,
            &mut lnf_out,
            &mut lnf_xhat,
            &mut lnf_rstd,
        );

        let vocab = cfg.vocab_size;
        let head = self.model.slots.head.unwrap_or(s.wte);
        let head_t = kernels::transpose(self.w(head), vocab, d);
        let mut logits = vec![T::zero(); rows * vocab];
        gemm_nn(&lnf_out, &head_t, &mut logits, rows, d, vocab, false);
        let logits_t = Tensor::new(vec![rows, vocab], logits)?;
        let loss = cross_entropy(&logits_t, &batch.targets, IGNORE_INDEX)?;
        Ok(Cache {
            layers,
            lnf_out,
            lnf_xhat,
            lnf_rstd,
            logits: logits_t.into_data(),
            loss,
        })
    }

    /// Gradients of the mean loss with respect to every parameter's effective value, in parameter order.
    fn backward(&self, batch: &TokenBatch, cache: &Cache<T>) -> Vec<Vec<T>> {
        let cfg = &self.model.config;
        let s = &self.model.slots;
        let (bsz, t, d, f) = (batch.batch, batch.seq_len, cfg.d_model, cfg.d_ff);
        let rows = bsz * t;
        let vocab = cfg.vocab_size;
        let mut grads: Vec<Vec<T>> = self
            .model
            .params
            .iter()
            .map(|p| vec![T::zero(); p.value().len()])
            .collect();

        let dlogits = cross_entropy_backward(&cache.loss, &batch.targets, IGNORE_INDEX, T::one());
        let head = s.head.unwrap_or(s.wte);
        let mut dlnf = vec![T::zero(); rows * d];
        gemm_nn(
            dlogits.data(),
            self.w(head),
            &mut dlnf,
            rows,
            vocab,
            d,
            false,
        );
        gemm_tn(
            dlogits.data(),
            &cache.lnf_out,
            &mut grads[head],
            vocab,
            rows,
            d,
            true,
        );

        let mut dx = vec![T::zero(); rows * d];
        {
            let (dg, db) = two_mut(&mut grads, s.lnf_g, s.lnf_b);
            kernels::layernorm_rows_backward(
                &dlnf,
                &cache.lnf_xhat,
                &cache.lnf_rstd,
                self.w(s.lnf_g),
                &mut dx,
                dg,
                db,
            );
        }

        let mut tmp = vec![T::zero(); rows * d];
        for (ls, lc) in s.layers.iter().zip(&cache.layers).rev() {
            // feed-forward residual branch
            gemm_tn(&lc.h_act, &dx, &mut grads[ls.wproj], f, rows, d, true);
            kernels::accumulate_col_sums(&dx, &mut grads[ls.bproj]);
            let mut dh_act = vec![T::zero(); rows * f];
            gemm_nt(&dx, self.w(ls.wproj), &mut dh_act, rows, d, f, false);
            let mut dh_pre = vec![T::zero(); rows * f];
            kernels::gelu_backward_into(&lc.h_pre, &dh_act, &mut dh_pre);
            gemm_tn(&lc.ln2_out, &dh_pre, &mut grads[ls.wfc], d, rows, f, true);
            kernels::accumulate_col_sums(&dh_pre, &mut grads[ls.bfc]);
            let mut dln2 = vec![T::zero(); rows * d];
            gemm_nt(&dh_pre, self.w(ls.wfc), &mut dln2, rows, f, d, false);
            {
                let (dg, db) = two_mut(&mut grads, ls.ln2_g, ls.ln2_b);
                kernels::layernorm_rows_backward(
                    &dln2,
                    &lc.ln2_xhat,
                    &lc.ln2_rstd,
                    self.w(ls.ln2_g),
                    &mut tmp,
                    dg,
                    db,
                );
            }
            kernels::add_in_place(&mut dx, &tmp);

            // attention residual branch
            gemm_tn(&lc.att, &dx, &mut grads[ls.wo], d, rows, d, true);
            kernels::accumulate_col_sums(&dx, &mut grads[ls.bo]);
            let mut datt = vec![T::zero(); rows * d];
            gemm_nt(&dx, self.w(ls.wo), &mut datt, rows, d, d, false);
            let mut dq = vec![T::zero(); rows * d];
            let mut dk = vec![T::zero(); rows * d];
            let mut dv = vec![T::zero(); rows * d];
            attention_backward(
                &lc.q,
                &lc.k,
                &lc.v,
                &lc.probs,
                &datt,
                bsz,
                t,
                cfg.n_heads,
                cfg.d_head,
                &mut dq,
                &mut dk,
                &mut dv,
            );
            let mut dln1 = vec![T::zero(); rows * d];
            for (dproj, w, b) in [
                (&dq, ls.wq, ls.bq),
                (&dk, ls.wk, ls.bk),
                (&dv, ls.wv, ls.bv),
            ] {
                gemm_tn(&lc.ln1_out, dproj, &mut grads[w], d, rows, d, true);
                kernels::accumulate_col_sums(dproj, &mut grads[b]);
                gemm_nt(dproj, self.w(w), &mut dln1, rows, d, d, true);
            }
            {
                let (dg, db) = two_mut(&mut grads, ls.ln1_g, ls.ln1_b);
                kernels::layernorm_rows_backward(
                    &dln1,
                    &lc.ln1_xhat,
                    &lc.ln1_rstd,
                    self.w(ls.ln1_g),
                    &mut tmp,
                    dg,
                    db,
                );
            }
            kernels::add_in_place(&mut dx, &tmp);
        }

        for (r, &id) in batch.inputs.iter().enumerate() {
            let pos = r % t;
            let row = &dx[r * d..(r + 1) * d];
            kernels::add_in_place(
                &mut grads[s.wte][id as usize * d..(id as usize + 1) * d],
                row,
            );
            kernels::add_in_place(&mut grads[s.wpe][pos * d..(pos + 1) * d], row);
        }
        grads
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn gather_head<T: Scalar>(
    src: &[T],
    b: usize,
    t: usize,
    d: usize,
    h: usize,
    dh: usize,
    out: &mut [T],
) {
    for i in 0..t {
        let r = (b * t + i) * d + h * dh;
        out[i * dh..(i + 1) * dh].copy_from_slice(&src[r..r + dh]);
    }
}

fn scatter_head<T: Scalar>(
    src: &[T],
    b: usize,
    t: usize,
    d: usize,
    h: usize,
    dh: usize,
    out: &mut [T],
) {
    for i in 0..t {
        let r = (b * t + i) * d + h * dh;
        out[r..r + dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}

/// Causal multi-head attention over rows laid out `[B·T × d]`. Stores softmax probabilities `[B·H·T·T]`.
#[allow(clippy::too_many_arguments)]
fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    bsz: usize,
    t: usize,
    n_heads: usize,
    dh: usize,
    out: &mut [T],
    probs: &mut [T],
) {
    let d = n_heads * dh;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut qh = vec![T::zero(); t * dh];
    let mut kh = vec![T::zero(); t * dh];
    let mut vh = vec![T::zero(); t * dh];
    let mut oh = vec![T::zero(); t * dh];
    for b in 0..bsz {
        for h in 0..n_heads {
            gather_head(q, b, t, d, h, dh, &mut qh);
            gather_head(k, b, t, d, h, dh, &mut kh);
            gather_head(v, b, t, d, h, dh, &mut vh);
            let p = &mut probs[(b * n_heads + h) * t * t..(b * n_heads + h + 1) * t * t];
            gemm_nt(&qh, &kh, p, t, dh, t, false);
            for i in 0..t {
                let row = &mut p[i * t..(i + 1) * t];
                let (visible, future) = row.split_at_mut(i + 1);
                visible.iter_mut().for_each(|x| *x *= scale);
                kernels::softmax_row(visible);
                future.iter_mut().for_each(|x| *x = T::zero());
            }
            gemm_nn(p, &vh, &mut oh, t, t, dh, false);
            scatter_head(&oh, b, t, d, h, dh, out);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    bsz: usize,
    t: usize,
    n_heads: usize,
    dh: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let d = n_heads * dh;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut qh = vec![T::zero(); t * dh];
    let mut kh = vec![T::zero(); t * dh];
    let mut vh = vec![T::zero(); t * dh];
    let mut doh = vec![T::zero(); t * dh];
    let mut dp = vec![T::zero(); t * t];
    let mut ds = vec![T::zero(); t * t];
    let mut gq = vec![T::zero(); t * dh];
    let mut gk = vec![T::zero(); t * dh];
    let mut gv = vec![T::zero(); t * dh];
    for b in 0..bsz {
        for h in 0..n_heads {
            gather_head(q, b, t, d, h, dh, &mut qh);
            gather_head(k, b, t, d, h, dh, &mut kh);
            gather_head(v, b, t, d, h, dh, &mut vh);
            gather_head(dout, b, t, d, h, dh, &mut doh);
            let p = &probs[(b * n_heads + h) * t * t..(b * n_heads + h + 1) * t * t];
            gemm_nt(&doh, &vh, &mut dp, t, dh, t, false);
            gemm_tn(p, &doh, &mut gv, t, t, dh, false);
            for i in 0..t {
                let n = i + 1;
                let (vis, fut) = ds[i * t..(i + 1) * t].split_at_mut(n);
                kernels::softmax_row_backward(&p[i * t..i * t + n], &dp[i * t..i * t + n], vis);
                vis.iter_mut().for_each(|x| *x *= scale);
                fut.iter_mut().for_each(|x| *x = T::zero());
            }
            gemm_nn(&ds, &kh, &mut gq, t, t, dh, false);
            gemm_tn(&ds, &qh, &mut gk, t, t, dh, false);
            scatter_head(&gq, b, t, d, h, dh, dq);
            scatter_head(&gk, b, t, d, h, dh, dk);
            scatter_head(&gv, b, t, d, h, dh, dv);
        }
    }
}

/// Key/value cache for one sequence being decoded.
#[derive(Clone, Debug)]
pub struct DecodeState<T> {
    pos: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

impl<T> DecodeState<T> {
    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

/// Token-at-a-time evaluation with cached keys and values.
pub struct Decoder<'a, T> {
    model: &'a GptModel<T>,
    eff: Vec<Option<Vec<T>>>,
    unembed_t: Vec<T>,
}

impl<'a, T: Scalar> Decoder<'a, T> {
    pub fn new_state(&self) -> DecodeState<T> {
        let l = self.model.config.n_layers;
        DecodeState {
            pos: 0,
            keys: vec![Vec::new(); l],
            values: vec![Vec::new(); l],
        }
    }

    pub fn context_window(&self) -> usize {
        self.model.config.context_window
    }

    /// Consumes `token` at the next position and returns the next-token logits.
    pub fn step(&self, state: &mut DecodeState<T>, token: TokenId) -> Result<Vec<T>> {
        let cfg = &self.model.config;
        if state.pos >= cfg.context_window {
            return Err(Error::Input(format!(
                "decoding past context window {}",
                cfg.context_window
            )));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::Input(format!(
                "token id {token} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let view = View {
            model: self.model,
            eff: &self.eff,
        };
        let s = &self.model.slots;
        let (d, f, nh, dh) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.d_head);
        let eps = T::of(DEFAULT_LAYERNORM_EPS);
        let pos = state.pos;
        let id = token as usize;
        let mut x: Vec<T> = view.w(s.wte)[id * d..(id + 1) * d]
            .iter()
            .zip(&view.w(s.wpe)[pos * d..(pos + 1) * d])
            .map(|(&a, &b)| a + b)
            .collect();
        let mut norm = vec![T::zero(); d];
        let mut xhat = vec![T::zero(); d];
        let mut rstd = vec![T::zero(); 1];
        let scale = T::one() / T::of(dh as f64).sqrt();
        let linear = |inp: &[T], w: usize, b: usize, in_dim: usize, out_dim: usize| {
            let mut out = vec![T::zero(); out_dim];
            gemm_nn(inp, view.w(w), &mut out, 1, in_dim, out_dim, false);
            kernels::add_row_bias(&mut out, view.w(b));
            out
        };
        for (l, ls) in s.layers.iter().enumerate() {
            kernels::layernorm_rows(
                &x,
                view.w(ls.ln1_g),
                view.w(ls.ln1_b),
                eps,
                &mut norm,
                &mut xhat,
                &mut rstd,
            );
            let q = linear(&norm, ls.wq, ls.bq, d, d);
            let k = linear(&norm, ls.wk, ls.bk, d, d);
            let v = linear(&norm, ls.wv, ls.bv, d, d);
            state.keys[l].extend_from_slice(&k);
            state.values[l].extend_from_slice(&v);
            let n = pos + 1;
            let mut att = vec![T::zero(); d];
            let mut scores = vec![T::zero(); n];
            for h in 0..nh {
                let qh = &q[h * dh..(h + 1) * dh];
                for (j, sc) in scores.iter_mut().enumerate() {
                    let kh = &state.keys[l][j * d + h * dh..j * d + (h + 1) * dh];
                    *sc = qh.iter().zip(kh).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                kernels::softmax_row(&mut scores);
                let out = &mut att[h * dh..(h + 1) * dh];
                for (j, &p) in scores.iter().enumerate() {
                    let vh = &state.values[l][j * d + h * dh..j * d + (h + 1) * dh];
                    for (o, &vv) in out.iter_mut().zip(vh) {
                        *o += p * vv;
                    }
                }
            }
            let y = linear(&att, ls.wo, ls.bo, d, d);
            kernels::add_in_place(&mut x, &y);
            kernels::layernorm_rows(
                &x,
                view.w(ls.ln2_g),
                view.w(ls.ln2_b),
                eps,
                &mut norm,
                &mut xhat,
                &mut rstd,
            );
            let mut h_act = linear(&norm, ls.wfc, ls.bfc, d, f);
            let pre = h_act.clone();
            kernels::gelu_into(&pre, &mut h_act);
            let z = linear(&h_act, ls.wproj, ls.bproj, f, d);
            kernels::add_in_place(&mut x, &z);
        }
        kernels::layernorm_rows(
            &x,
            view.w(s.lnf_g),
            view.w(s.lnf_b),
            eps,
            &mut norm,
            &mut xhat,
            &mut rstd,
        );
        let mut logits = vec![T::zero(); cfg.vocab_size];
        gemm_nn(
            &norm,
            &self.unembed_t,
            &mut logits,
            1,
            d,
            cfg.vocab_size,
            false,
        );
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "logits".into(),
            });
        }
        state.pos += 1;
        Ok(logits)
    }
}
