//! The opinion model: chain prefix + fact embeddings fed to a small causal
//! pre-LayerNorm transformer decoder, trained with a reasoning plus
//! sentencing cross-entropy.
//!
//! The decoder input is `[E_chain; fact; <bos>; y₀ … y_{m−2}]` and the rows
//! from `<bos>` on predict `y₀ … y_{m−1}` (the opinion followed by
//! `<eos>`). Fact and target rows get sinusoidal position encodings with
//! the row index as position; chain rows get none.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::ChainSet;
use crate::corpus::CaseRecord;
use crate::encoder::{encode_chain_set, ensure_charge, init_encoder_params, EncoderConfig, EMBED};
use crate::error::{Error, Result};
use crate::evaluation::{extract_sentence_months, sentencing_char_span};
use crate::nn::{init_uniform, linear, positional_encoding, self_attention};
use crate::params::ParamStore;
use crate::tensor::{dot, softmax_in_place, Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::tokenizer::{Vocab, BOS, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    /// Heads of the chain-component attention.
    pub encoder_heads: usize,
    pub decoder_heads: usize,
    pub layers: usize,
    pub context: usize,
    pub dropout: f64,
    pub auto_register: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            encoder_heads: 8,
            decoder_heads: 4,
            layers: 2,
            context: 256,
            dropout: 0.1,
            auto_register: true,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        self.encoder().check()?;
        if self.decoder_heads == 0 || self.d % self.decoder_heads != 0 {
            return Err(Error::Config(format!(
                "decoder heads {} must divide width {}",
                self.decoder_heads, self.d
            )));
        }
        if self.layers == 0 || self.context < 2 {
            return Err(Error::Config("decoder needs at least one layer and a context of 2".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d: self.d,
            heads: self.encoder_heads,
            dropout: self.dropout,
            auto_register: self.auto_register,
        }
    }
}

/// A case turned into token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedCase {
    pub fact_ids: Vec<u32>,
    /// `<bos>` followed by all targets but the last.
    pub inputs: Vec<u32>,
    /// Opinion tokens followed by `<eos>`.
    pub targets: Vec<u32>,
    /// Marks the targets inside the sentencing clause.
    pub sentencing_mask: Vec<bool>,
}

/// Token interval `[start, end)` of the last sentencing clause.
pub fn mark_sentencing_span(vocab: &Vocab, opinion: &str) -> Option<Range<usize>> {
    let (chars, _) = sentencing_char_span(opinion)?;
    token_interval(vocab, opinion, chars)
}

fn token_interval(vocab: &Vocab, text: &str, chars: Range<usize>) -> Option<Range<usize>> {
    let toks = vocab.encode(text);
    let hit: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.chars.start < chars.end && chars.start < t.chars.end)
        .map(|(i, _)| i)
        .collect();
    Some(*hit.first()?..*hit.last()? + 1)
}

pub fn prepare_case(vocab: &Vocab, case: &CaseRecord) -> Result<PreparedCase> {
    let fact_ids = vocab.encode_ids(&case.fact);
    if fact_ids.is_empty() {
        return Err(Error::Argument(format!("case `{}` has an empty fact", case.case_id)));
    }
    let mut targets = vocab.encode_ids(&case.opinion);
    let [s, e] = case.sentencing_span;
    let span = if s < e {
        token_interval(vocab, &case.opinion, s..e)
    } else {
        mark_sentencing_span(vocab, &case.opinion)
    };
    let mut mask = vec![false; targets.len() + 1];
    if let Some(r) = span {
        mask[r].iter_mut().for_each(|m| *m = true);
    }
    targets.push(EOS);
    let mut inputs = vec![BOS];
    inputs.extend_from_slice(&targets[..targets.len() - 1]);
    Ok(PreparedCase {
        fact_ids,
        inputs,
        targets,
        sentencing_mask: mask,
    })
}

/// Graph value of the loss plus the two component values.
pub struct LossValue {
    pub total: Var,
    pub reasoning: f64,
    pub sentencing: f64,
}

/// Per-case logits (m×V), targets and sentencing mask.
pub struct CaseLogits<'a> {
    pub logits: Var,
    pub targets: &'a [u32],
    pub mask: &'a [bool],
}

/// `α·L_R + β·L_S`, where `L_R` is the mean cross-entropy over every target
/// token of the batch and `L_S` the mean over sentencing-mask tokens.
pub fn joint_loss_from_logits(g: &mut Graph, cases: &[CaseLogits<'_>], alpha: f64, beta: f64) -> Result<LossValue> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) || alpha + beta == 0.0 {
        return Err(Error::Argument(format!(
            "loss weights must be non-negative and not both zero (alpha {alpha}, beta {beta})"
        )));
    }
    if cases.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut n_all = 0usize;
    let mut n_mask = 0usize;
    for (i, c) in cases.iter().enumerate() {
        if c.mask.len() != c.targets.len() {
            return Err(Error::Mask(format!(
                "case {i}: mask length {} differs from target length {}",
                c.mask.len(),
                c.targets.len()
            )));
        }
        let k = c.mask.iter().filter(|&&m| m).count();
        if beta > 0.0 && k == 0 {
            return Err(Error::Mask(format!("case {i} has an empty sentencing mask")));
        }
        n_all += c.targets.len();
        n_mask += k;
    }
    if n_all == 0 {
        return Err(Error::Argument("batch has no target tokens".into()));
    }

    let mut l_r: Option<Var> = None;
    let mut l_s: Option<Var> = None;
    for c in cases {
        let all: Vec<(usize, usize)> = c.targets.iter().enumerate().map(|(j, &t)| (j, t as usize)).collect();
        let ce = g.cross_entropy(c.logits, &all, 1.0 / n_all as f64)?;
        l_r = Some(match l_r {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
        if n_mask > 0 {
            let masked: Vec<(usize, usize)> = all.iter().copied().filter(|&(j, _)| c.mask[j]).collect();
            let ce = g.cross_entropy(c.logits, &masked, 1.0 / n_mask as f64)?;
            l_s = Some(match l_s {
                Some(acc) => g.add(acc, ce)?,
                None => ce,
            });
        }
    }
    let l_r = l_r.expect("non-empty batch");
    let reasoning = g.value(l_r).item();
    let sentencing = l_s.map(|v| g.value(v).item()).unwrap_or(0.0);
    let weighted_r = g.scale(l_r, alpha);
    let total = match l_s {
        Some(s) if beta > 0.0 => {
            let weighted_s = g.scale(s, beta);
            g.add(weighted_r, weighted_s)?
        }
        _ => weighted_r,
    };
    Ok(LossValue {
        total,
        reasoning,
        sentencing,
    })
}

/// Decoder prefix (`E_chain` rows then fact rows) as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub rows: Tensor,
    pub n_chain: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub max_len: usize,
    pub mode: DecodeMode,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            max_len: 200,
            mode: DecodeMode::Greedy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OpinionOutput {
    pub text: String,
    /// Generated ids without the closing `<eos>`.
    pub token_ids: Vec<u32>,
    pub sentencing_span: Option<Range<usize>>,
    pub extracted_months: Option<u32>,
}

/// Model configuration, vocabulary and every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

fn block(i: usize, part: &str) -> String {
    format!("decoder.block{i}.{part}")
}

impl OpinionModel {
    /// Fresh model with a uniformly initialised charge map per `charges`.
    pub fn new(config: ModelConfig, vocab: Vocab, charges: &[String], seed: u64) -> Result<Self> {
        config.check()?;
        let d = config.d;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert(EMBED, Tensor::uniform(&[v, d], 1.0, &mut rng));
        init_encoder_params(&mut p, d, charges, &mut rng);
        for i in 0..config.layers {
            for ln in ["ln1", "ln2"] {
                p.insert(block(i, &format!("{ln}.gain")), Tensor::full(&[1, d], 1.0));
                p.insert(block(i, &format!("{ln}.bias")), Tensor::zeros(&[1, d]));
            }
            for w in ["wq", "wk", "wv", "wo"] {
                init_uniform(&mut p, &block(i, &format!("attn.{w}")), &[d, d], d, &mut rng);
            }
            init_uniform(&mut p, &block(i, "ffn.w1"), &[d, 4 * d], d, &mut rng);
            p.insert(block(i, "ffn.b1"), Tensor::zeros(&[1, 4 * d]));
            init_uniform(&mut p, &block(i, "ffn.w2"), &[4 * d, d], d, &mut rng);
            p.insert(block(i, "ffn.b2"), Tensor::zeros(&[1, d]));
        }
        p.insert("decoder.ln_f.gain", Tensor::full(&[1, d], 1.0));
        p.insert("decoder.ln_f.bias", Tensor::zeros(&[1, d]));
        init_uniform(&mut p, "decoder.out.w", &[d, v], d, &mut rng);
        p.insert("decoder.out.b", Tensor::zeros(&[1, v]));
        Ok(OpinionModel {
            config,
            vocab,
            params: p,
        })
    }

    /// Charges that own a charge map, sorted.
    pub fn charges(&self) -> Vec<String> {
        self.params
            .names()
            .filter_map(|n| n.strip_prefix("chain.crime.")?.strip_suffix(".w").map(str::to_string))
            .collect()
    }

    /// Registers an identity charge map for `charge` if it has none.
    pub fn ensure_charge(&mut self, charge: &str) -> bool {
        ensure_charge(&mut self.params, self.config.d, charge)
    }

    /// Prefix rows on the graph: `E_chain` (when chains are given) then the
    /// fact token embeddings.
    pub fn combine_ids(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        encoded: Option<Var>,
        fact_ids: &[u32],
    ) -> Result<Var> {
        if fact_ids.is_empty() {
            return Err(Error::Argument("fact has no tokens".into()));
        }
        let table = g.param(store, EMBED)?;
        let idx: Vec<usize> = fact_ids.iter().map(|&i| i as usize).collect();
        let facts = g.gather_rows(table, &idx)?;
        match encoded {
            Some(e) => g.concat_rows(&[e, facts]),
            None => Ok(facts),
        }
    }

    pub fn combine(&self, g: &mut Graph, store: &ParamStore, encoded: Option<Var>, fact: &str) -> Result<Var> {
        self.combine_ids(g, store, encoded, &self.vocab.encode_ids(fact))
    }

    /// Evaluation-mode prefix for generation.
    pub fn combined(&self, chains: Option<&ChainSet>, fact: &str) -> Result<Combined> {
        let mut g = Graph::new();
        let enc = match chains {
            Some(cs) => Some(encode_chain_set(&mut g, &self.params, &self.vocab, &self.config.encoder(), cs)?.e_chain),
            None => None,
        };
        let c = self.combine(&mut g, &self.params, enc, fact)?;
        Ok(Combined {
            rows: g.value(c).clone(),
            n_chain: enc.map(|e| g.value(e).rows()).unwrap_or(0),
        })
    }

    /// Logits (m×V) for the rows that predict the targets.
    pub fn decode_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: Var,
        n_chain: usize,
        inputs: &[u32],
    ) -> Result<Var> {
        let cfg = &self.config;
        let d = cfg.d;
        let p = g.value(prefix).rows();
        let t = p + inputs.len();
        if t > cfg.context {
            return Err(Error::Capacity {
                needed: t,
                capacity: cfg.context,
            });
        }
        let table = g.param(store, EMBED)?;
        let idx: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        let x = if idx.is_empty() {
            prefix
        } else {
            let emb = g.gather_rows(table, &idx)?;
            g.concat_rows(&[prefix, emb])?
        };
        let mut pe = Tensor::zeros(&[t, d]);
        let enc = positional_encoding(n_chain, t - n_chain, d);
        pe.data_mut()[n_chain * d..].copy_from_slice(enc.data());
        let mut x = g.add_const(x, &pe)?;

        for i in 0..cfg.layers {
            let gain = g.param(store, &block(i, "ln1.gain"))?;
            let bias = g.param(store, &block(i, "ln1.bias"))?;
            let h = g.layer_norm(x, gain, bias)?;
            let (a, _) = self_attention(g, store, &block(i, "attn"), h, cfg.decoder_heads, true, false)?;
            let a = g.dropout(a, cfg.dropout)?;
            x = g.add(x, a)?;

            let gain = g.param(store, &block(i, "ln2.gain"))?;
            let bias = g.param(store, &block(i, "ln2.bias"))?;
            let h = g.layer_norm(x, gain, bias)?;
            let h = linear(g, store, &block(i, "ffn.w1"), &block(i, "ffn.b1"), h)?;
            let h = g.relu(h);
            let h = linear(g, store, &block(i, "ffn.w2"), &block(i, "ffn.b2"), h)?;
            let h = g.dropout(h, cfg.dropout)?;
            x = g.add(x, h)?;
        }
        let out_rows = g.slice_rows(x, p, t)?;
        let gain = g.param(store, "decoder.ln_f.gain")?;
        let bias = g.param(store, "decoder.ln_f.bias")?;
        let h = g.layer_norm(out_rows, gain, bias)?;
        linear(g, store, "decoder.out.w", "decoder.out.b", h)
    }

    /// Joint loss of a batch. `None` chains route a case through the
    /// fact-only prefix.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[(&PreparedCase, Option<&ChainSet>)],
        alpha: f64,
        beta: f64,
    ) -> Result<LossValue> {
        let enc_cfg = self.config.encoder();
        let mut encoded: BTreeMap<&str, Var> = BTreeMap::new();
        let mut logits = Vec::with_capacity(batch.len());
        for (case, chains) in batch {
            let (e, n) = match chains {
                Some(cs) => {
                    let e = match encoded.get(cs.charge.as_str()) {
                        Some(&e) => e,
                        None => {
                            let e = encode_chain_set(g, store, &self.vocab, &enc_cfg, cs)?.e_chain;
                            encoded.insert(&cs.charge, e);
                            e
                        }
                    };
                    (Some(e), cs.len())
                }
                None => (None, 0),
            };
            let prefix = self.combine_ids(g, store, e, &case.fact_ids)?;
            logits.push(self.decode_logits(g, store, prefix, n, &case.inputs)?);
        }
        let cases: Vec<CaseLogits<'_>> = batch
            .iter()
            .zip(&logits)
            .map(|((c, _), &l)| CaseLogits {
                logits: l,
                targets: &c.targets,
                mask: &c.sentencing_mask,
            })
            .collect();
        joint_loss_from_logits(g, &cases, alpha, beta)
    }

    /// Autoregressive decoding from a prefix with a key/value cache.
    pub fn generate(&self, combined: &Combined, cfg: &GenerateConfig) -> Result<OpinionOutput> {
        let p = combined.rows.rows();
        if combined.rows.cols() != self.config.d {
            return Err(Error::dim("generate", combined.rows.shape(), &[p, self.config.d]));
        }
        if p + 1 > self.config.context {
            return Err(Error::Capacity {
                needed: p + 1,
                capacity: self.config.context,
            });
        }
        let mut ids = Vec::new();
        if cfg.max_len > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut state = DecodeState::new(self)?;
            for r in 0..p {
                let pos = (r >= combined.n_chain).then_some(r);
                state.step(combined.rows.row(r).to_vec(), pos, false)?;
            }
            let mut next = BOS;
            while ids.len() < cfg.max_len {
                let row = p + ids.len();
                if row + 1 > self.config.context {
                    break;
                }
                let x = self.params.get(EMBED)?.row(next as usize).to_vec();
                let logits = state.step(x, Some(row), true)?.expect("logits requested");
                next = pick(&logits, cfg.mode, &mut rng);
                if next == EOS {
                    break;
                }
                ids.push(next);
            }
        }
        let text = self.vocab.decode(&ids);
        let sentencing_span = mark_sentencing_span(&self.vocab, &text).map(|r| r.start.min(ids.len())..r.end.min(ids.len()));
        Ok(OpinionOutput {
            extracted_months: extract_sentence_months(&text),
            text,
            token_ids: ids,
            sentencing_span,
        })
    }

    pub fn generate_for(&self, fact: &str, chains: Option<&ChainSet>, cfg: &GenerateConfig) -> Result<OpinionOutput> {
        self.generate(&self.combined(chains, fact)?, cfg)
    }
}

fn pick<R: Rng>(logits: &[f64], mode: DecodeMode, rng: &mut R) -> u32 {
    match mode {
        DecodeMode::Greedy => argmax(logits),
        DecodeMode::TopK(k) => {
            let k = k.clamp(1, logits.len());
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            let mut probs: Vec<f64> = order[..k].iter().map(|&i| logits[i]).collect();
            softmax_in_place(&mut probs);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (j, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return order[j] as u32;
                }
            }
            order[k - 1] as u32
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

fn row_linear(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = b.data().to_vec();
    let n = w.cols();
    for (i, &xi) in x.iter().enumerate() {
        let wr = &w.data()[i * n..(i + 1) * n];
        for (o, &wv) in out.iter_mut().zip(wr) {
            *o += xi * wv;
        }
    }
    out
}

fn row_matmul(x: &[f64], w: &Tensor) -> Vec<f64> {
    let n = w.cols();
    let mut out = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        let wr = &w.data()[i * n..(i + 1) * n];
        for (o, &wv) in out.iter_mut().zip(wr) {
            *o += xi * wv;
        }
    }
    out
}

fn row_layer_norm(x: &[f64], gain: &Tensor, bias: &Tensor) -> Vec<f64> {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gain.data().iter().zip(bias.data()))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

struct LayerWeights<'a> {
    ln1: (&'a Tensor, &'a Tensor),
    attn: [&'a Tensor; 4],
    ln2: (&'a Tensor, &'a Tensor),
    ffn: [&'a Tensor; 4],
}

/// Tape-free incremental decoder state.
struct DecodeState<'a> {
    model: &'a OpinionModel,
    layers: Vec<LayerWeights<'a>>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl<'a> DecodeState<'a> {
    fn new(model: &'a OpinionModel) -> Result<Self> {
        let p = &model.params;
        let mut layers = Vec::with_capacity(model.config.layers);
        for i in 0..model.config.layers {
            let get = |s: &str| p.get(&block(i, s));
            layers.push(LayerWeights {
                ln1: (get("ln1.gain")?, get("ln1.bias")?),
                attn: [get("attn.wq")?, get("attn.wk")?, get("attn.wv")?, get("attn.wo")?],
                ln2: (get("ln2.gain")?, get("ln2.bias")?),
                ffn: [get("ffn.w1")?, get("ffn.b1")?, get("ffn.w2")?, get("ffn.b2")?],
            });
        }
        let n = layers.len();
        Ok(DecodeState {
            model,
            layers,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        })
    }

    /// Feeds one row; `pos` adds the position encoding. Returns the logits
    /// of the new row when asked.
    fn step(&mut self, mut x: Vec<f64>, pos: Option<usize>, want_logits: bool) -> Result<Option<Vec<f64>>> {
        let cfg = &self.model.config;
        let d = cfg.d;
        if let Some(pos) = pos {
            let pe = positional_encoding(pos, 1, d);
            for (v, e) in x.iter_mut().zip(pe.data()) {
                *v += e;
            }
        }
        let heads = cfg.decoder_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, w) in self.layers.iter().enumerate() {
            let h = row_layer_norm(&x, w.ln1.0, w.ln1.1);
            let q = row_matmul(&h, w.attn[0]);
            self.keys[l].push(row_matmul(&h, w.attn[1]));
            self.values[l].push(row_matmul(&h, w.attn[2]));
            let (keys, values) = (&self.keys[l], &self.values[l]);
            let mut cat = vec![0.0; d];
            for hd in 0..heads {
                let r = hd * dh..(hd + 1) * dh;
                let mut s: Vec<f64> = keys.iter().map(|k| dot(&q[r.clone()], &k[r.clone()]) * scale).collect();
                softmax_in_place(&mut s);
                for (pj, v) in s.iter().zip(values) {
                    for (o, &vv) in cat[r.clone()].iter_mut().zip(&v[r.clone()]) {
                        *o += pj * vv;
                    }
                }
            }
            let a = row_matmul(&cat, w.attn[3]);
            x.iter_mut().zip(&a).for_each(|(xi, ai)| *xi += ai);

            let h = row_layer_norm(&x, w.ln2.0, w.ln2.1);
            let mut f = row_linear(&h, w.ffn[0], w.ffn[1]);
            f.iter_mut().for_each(|v| *v = v.max(0.0));
            let f = row_linear(&f, w.ffn[2], w.ffn[3]);
            x.iter_mut().zip(&f).for_each(|(xi, fi)| *xi += fi);
        }
        if !want_logits {
            return Ok(None);
        }
        let p = &self.model.params;
        let h = row_layer_norm(&x, p.get("decoder.ln_f.gain")?, p.get("decoder.ln_f.bias")?);
        Ok(Some(row_linear(&h, p.get("decoder.out.w")?, p.get("decoder.out.b")?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::builtin_chain_set;
    use crate::tokenizer::UNK;

    fn tiny() -> (OpinionModel, ChainSet) {
        let cs = builtin_chain_set("robbery").unwrap();
        let mut texts = cs.texts();
        texts.push("Defendant Wang used violence . 42 months of fixed-term imprisonment".into());
        let vocab = Vocab::build(texts);
        let cfg = ModelConfig {
            d: 16,
            encoder_heads: 2,
            decoder_heads: 2,
            layers: 2,
            context: 64,
            dropout: 0.0,
            auto_register: true,
        };
        (OpinionModel::new(cfg, vocab, &["robbery".into()], 5).unwrap(), cs)
    }

    #[test]
    fn combine_shapes_and_first_fact_row() {
        let (m, cs) = tiny();
        let mut g = Graph::new();
        let enc = encode_chain_set(&mut g, &m.params, &m.vocab, &m.config.encoder(), &cs).unwrap();
        let fact = "Defendant Wang used violence";
        let c = m.combine(&mut g, &m.params, Some(enc.e_chain), fact).unwrap();
        let l_f = m.vocab.encode_ids(fact).len();
        assert_eq!(g.value(c).shape(), &[cs.len() + l_f, 16]);
        let first = m.vocab.encode_ids(fact)[0] as usize;
        assert_eq!(g.value(c).row(cs.len()), m.params.get(EMBED).unwrap().row(first));
        let plain = m.combine(&mut g, &m.params, None, fact).unwrap();
        assert_eq!(g.value(plain).shape(), &[l_f, 16]);
        assert!(matches!(m.combine(&mut g, &m.params, None, "  "), Err(Error::Argument(_))));
    }

    #[test]
    fn kv_cache_matches_tape_logits() {
        let (m, cs) = tiny();
        let inputs: Vec<u32> = vec![BOS, 5, 9, 7, UNK, 12];
        let combined = m.combined(Some(&cs), "Defendant Wang used violence").unwrap();
        let mut g = Graph::new();
        let prefix = g.constant(combined.rows.clone());
        let logits = m.decode_logits(&mut g, &m.params, prefix, combined.n_chain, &inputs).unwrap();
        let tape = g.value(logits).clone();

        let mut st = DecodeState::new(&m).unwrap();
        for r in 0..combined.rows.rows() {
            let pos = (r >= combined.n_chain).then_some(r);
            st.step(combined.rows.row(r).to_vec(), pos, false).unwrap();
        }
        let p = combined.rows.rows();
        for (j, &id) in inputs.iter().enumerate() {
            let x = m.params.get(EMBED).unwrap().row(id as usize).to_vec();
            let l = st.step(x, Some(p + j), true).unwrap().unwrap();
            for (a, b) in l.iter().zip(tape.row(j)) {
                assert!((a - b).abs() < 1e-10, "row {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn causality() {
        let (m, _) = tiny();
        let run = |inputs: &[u32]| {
            let mut g = Graph::new();
            let prefix = m.combine(&mut g, &m.params, None, "Defendant Wang").unwrap();
            let l = m.decode_logits(&mut g, &m.params, prefix, 0, inputs).unwrap();
            g.value(l).clone()
        };
        let a = run(&[BOS, 5, 6, 7, 8]);
        let b = run(&[BOS, 5, 6, 11, 8]);
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn context_overflow() {
        let (m, _) = tiny();
        let mut g = Graph::new();
        let prefix = m.combine(&mut g, &m.params, None, "Defendant Wang").unwrap();
        let inputs = vec![BOS; 70];
        assert!(matches!(
            m.decode_logits(&mut g, &m.params, prefix, 0, &inputs),
            Err(Error::Capacity { .. })
        ));
        let big = Combined {
            rows: Tensor::zeros(&[64, 16]),
            n_chain: 0,
        };
        assert!(matches!(m.generate(&big, &GenerateConfig::default()), Err(Error::Capacity { .. })));
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let (m, cs) = tiny();
        let c = m.combined(Some(&cs), "Defendant Wang used violence").unwrap();
        let zero = m.generate(&c, &GenerateConfig { max_len: 0, ..Default::default() }).unwrap();
        assert!(zero.text.is_empty() && zero.token_ids.is_empty());
        let cfg = GenerateConfig {
            max_len: 10,
            ..Default::default()
        };
        let a = m.generate(&c, &cfg).unwrap();
        assert_eq!(a, m.generate(&c, &cfg).unwrap());
        assert!(a.token_ids.len() <= 10);
        let k = GenerateConfig {
            max_len: 10,
            mode: DecodeMode::TopK(5),
            seed: 3,
        };
        assert_eq!(m.generate(&c, &k).unwrap(), m.generate(&c, &k).unwrap());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn sentencing_span_marking() {
        let text = "In accordance with Article 263, the judgment is as follows: 42 months of fixed-term imprisonment.";
        let vocab = Vocab::build([text]);
        let r = mark_sentencing_span(&vocab, text).unwrap();
        let pieces = vocab.pieces(&vocab.encode_ids(text)[r]);
        assert_eq!(crate::tokenizer::detokenize(&pieces), "42 months of fixed-term imprisonment");
        assert_eq!(mark_sentencing_span(&vocab, "In accordance with Article 263"), None);
        let two = "12 months of fixed-term imprisonment; 42 months of fixed-term imprisonment";
        let vocab = Vocab::build([two]);
        let r = mark_sentencing_span(&vocab, two).unwrap();
        assert_eq!(vocab.pieces(&vocab.encode_ids(two)[r.clone()])[0], "42");
    }

    #[test]
    fn loss_oracles() {
        // Two-token vocabulary, uniform logits: every CE term is ln 2.
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[3, 2]));
        let targets = [0u32, 1, 1];
        let mask = [false, true, true];
        let cases = [CaseLogits {
            logits,
            targets: &targets,
            mask: &mask,
        }];
        let l = joint_loss_from_logits(&mut g, &cases, 1.0, 1.0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((l.reasoning - ln2).abs() < 1e-15);
        assert!((l.sentencing - ln2).abs() < 1e-15);
        assert!((g.value(l.total).item() - 2.0 * ln2).abs() < 1e-15);

        let l0 = joint_loss_from_logits(&mut g, &cases, 1.0, 0.0).unwrap();
        assert_eq!(g.value(l0.total).item(), l0.reasoning);

        // Near-certain logits give a loss near zero.
        let sharp = g.leaf(Tensor::from_rows(&[vec![50.0, -50.0], vec![-50.0, 50.0], vec![-50.0, 50.0]]).unwrap());
        let cases = [CaseLogits {
            logits: sharp,
            targets: &targets,
            mask: &mask,
        }];
        let l = joint_loss_from_logits(&mut g, &cases, 1.0, 1.0).unwrap();
        assert!(g.value(l.total).item() < 1e-40);
    }

    #[test]
    fn loss_errors() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[2, 2]));
        let targets = [0u32, 1];
        let empty = [false, false];
        let cases = [CaseLogits {
            logits,
            targets: &targets,
            mask: &empty,
        }];
        assert!(matches!(joint_loss_from_logits(&mut g, &cases, 1.0, 1.0), Err(Error::Mask(_))));
        let l = joint_loss_from_logits(&mut g, &cases, 2.0, 0.0).unwrap();
        assert_eq!(l.sentencing, 0.0);
        assert!((g.value(l.total).item() - 2.0 * l.reasoning).abs() < 1e-15);
        assert!(matches!(joint_loss_from_logits(&mut g, &cases, 0.0, 0.0), Err(Error::Argument(_))));
        assert!(matches!(joint_loss_from_logits(&mut g, &cases, -1.0, 1.0), Err(Error::Argument(_))));
    }
}
