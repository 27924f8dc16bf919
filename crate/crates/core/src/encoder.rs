//! Chain-aware encoding: each chain becomes one d-vector.
//!
//! Per chain the three component texts are mean-embedded into `H` (3×d),
//! passed through self-attention with a residual connection and mean-pooled
//! to `r`. A shared transform `u = T_G(r)` and a charge-specific map
//! `v = u·W_C + b_C` are mixed by a sigmoid gate,
//! `t = g⊙v + (1−g)⊙u`, and `f = [r t]·W_fusion + b_fusion`. The chain
//! vectors stack into `E_chain` in chain-set order.
//!
//! Vectors are rows, so every weight is stored input-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainSet, LegalChain};
use crate::error::{Error, Result};
use crate::nn::{init_uniform, linear, self_attention};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, Var};
use crate::tokenizer::Vocab;

pub const EMBED: &str = "embed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Unknown charges use an identity charge map instead of failing.
    pub auto_register: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 64,
            heads: 8,
            dropout: 0.1,
            auto_register: true,
        }
    }
}

impl EncoderConfig {
    pub fn check(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder heads {} must divide width {}",
                self.heads, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

pub fn crime_param_names(charge: &str) -> (String, String) {
    (format!("chain.crime.{charge}.w"), format!("chain.crime.{charge}.b"))
}

/// Shared encoder weights plus a uniformly initialised charge map for each
/// of `charges`. The embedding table is owned by the model.
pub fn init_encoder_params<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, charges: &[String], rng: &mut R) {
    for p in ["wq", "wk", "wv", "wo"] {
        init_uniform(store, &format!("chain.attn.{p}"), &[d, d], d, rng);
    }
    init_uniform(store, "chain.general.w1", &[d, d], d, rng);
    store.insert("chain.general.b1", Tensor::zeros(&[1, d]));
    init_uniform(store, "chain.general.w2", &[d, d], d, rng);
    store.insert("chain.general.b2", Tensor::zeros(&[1, d]));
    init_uniform(store, "chain.gate.w", &[d, d], d, rng);
    store.insert("chain.gate.b", Tensor::zeros(&[1, d]));
    init_uniform(store, "chain.fusion.w", &[2 * d, d], d, rng);
    store.insert("chain.fusion.b", Tensor::zeros(&[1, d]));
    for c in charges {
        let (w, b) = crime_param_names(c);
        init_uniform(store, &w, &[d, d], d, rng);
        store.insert(&b, Tensor::zeros(&[1, d]));
    }
}

/// Adds an identity / zero charge map for `charge` unless one exists.
/// Returns whether a map was added.
pub fn ensure_charge(store: &mut ParamStore, d: usize, charge: &str) -> bool {
    let (w, b) = crime_param_names(charge);
    if store.contains(&w) {
        return false;
    }
    store.insert(&w, Tensor::eye(d));
    store.insert(&b, Tensor::zeros(&[1, d]));
    true
}

/// Mean of the token embeddings of `text` (1×d). An empty token list gives
/// the zero vector and a warning.
pub fn embed_component(g: &mut Graph, table: Var, vocab: &Vocab, text: &str) -> Result<Var> {
    let ids: Vec<usize> = vocab.encode_ids(text).into_iter().map(|i| i as usize).collect();
    if ids.is_empty() {
        log::warn!("component text {text:?} has no tokens; using the zero vector");
        let d = g.value(table).cols();
        return Ok(g.constant(Tensor::zeros(&[1, d])));
    }
    let rows = g.gather_rows(table, &ids)?;
    g.mean_rows(rows)
}

pub struct ChainEncoding {
    /// Pooled chain vector (1×d).
    pub r: Var,
    /// Head-averaged 3×3 attention between premise, situation, conclusion.
    pub weights: Tensor,
}

pub fn encode_chain(
    g: &mut Graph,
    store: &ParamStore,
    vocab: &Vocab,
    cfg: &EncoderConfig,
    chain: &LegalChain,
) -> Result<ChainEncoding> {
    let table = g.param(store, EMBED)?;
    let [p, s, c] = chain.display_texts();
    let e = [
        embed_component(g, table, vocab, &p)?,
        embed_component(g, table, vocab, &s)?,
        embed_component(g, table, vocab, &c)?,
    ];
    let h = g.concat_rows(&e)?;
    let (a, w) = self_attention(g, store, "chain.attn", h, cfg.heads, false, true)?;
    let a = g.dropout(a, cfg.dropout)?;
    let a_res = g.add(h, a)?;
    let r = g.mean_rows(a_res)?;
    Ok(ChainEncoding {
        r,
        weights: w.expect("weights requested"),
    })
}

pub struct CrimeTransform {
    pub u: Var,
    pub v: Var,
    pub gate: Var,
    pub t: Var,
}

pub fn crime_transform(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    r: Var,
    charge: &str,
) -> Result<CrimeTransform> {
    let hidden = linear(g, store, "chain.general.w1", "chain.general.b1", r)?;
    let hidden = g.relu(hidden);
    let hidden = g.dropout(hidden, cfg.dropout)?;
    let u = linear(g, store, "chain.general.w2", "chain.general.b2", hidden)?;

    let (wn, bn) = crime_param_names(charge);
    let v = if store.contains(&wn) {
        linear(g, store, &wn, &bn, u)?
    } else if cfg.auto_register {
        // Identity map until the charge is registered for training.
        u
    } else {
        return Err(Error::UnknownCharge(charge.to_string()));
    };

    let z = linear(g, store, "chain.gate.w", "chain.gate.b", u)?;
    let gate = g.sigmoid(z);
    let gv = g.mul(gate, v)?;
    let one_minus = g.one_minus(gate);
    let gu = g.mul(one_minus, u)?;
    let t = g.add(gv, gu)?;
    Ok(CrimeTransform { u, v, gate, t })
}

pub fn fuse(g: &mut Graph, store: &ParamStore, r: Var, t: Var) -> Result<Var> {
    let rt = g.concat_cols(&[r, t])?;
    linear(g, store, "chain.fusion.w", "chain.fusion.b", rt)
}

pub struct EncodedVars {
    /// n×d chain matrix.
    pub e_chain: Var,
    pub weights: Vec<Tensor>,
}

pub fn encode_chain_set(
    g: &mut Graph,
    store: &ParamStore,
    vocab: &Vocab,
    cfg: &EncoderConfig,
    cs: &ChainSet,
) -> Result<EncodedVars> {
    if cs.is_empty() {
        return Err(Error::EmptyEncoding);
    }
    let mut rows = Vec::with_capacity(cs.len());
    let mut weights = Vec::with_capacity(cs.len());
    for chain in &cs.chains {
        let enc = encode_chain(g, store, vocab, cfg, chain)?;
        let ct = crime_transform(g, store, cfg, enc.r, &cs.charge)?;
        rows.push(fuse(g, store, enc.r, ct.t)?);
        weights.push(enc.weights);
    }
    let e_chain = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
    Ok(EncodedVars { e_chain, weights })
}

/// Values of an encoded chain set, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedChainSet {
    pub e_chain: Tensor,
    pub weights: Vec<Tensor>,
}

/// Evaluation-mode encoding (no dropout, no tape kept).
pub fn encode_chain_set_eval(
    store: &ParamStore,
    vocab: &Vocab,
    cfg: &EncoderConfig,
    cs: &ChainSet,
) -> Result<EncodedChainSet> {
    let mut g = Graph::new();
    let enc = encode_chain_set(&mut g, store, vocab, cfg, cs)?;
    Ok(EncodedChainSet {
        e_chain: g.value(enc.e_chain).clone(),
        weights: enc.weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::builtin_chain_set;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, heads: usize, charges: &[&str]) -> (ParamStore, Vocab, EncoderConfig) {
        let cs = builtin_chain_set("robbery").unwrap();
        let vocab = Vocab::build(cs.texts());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        init_uniform(&mut store, EMBED, &[vocab.len(), d], d, &mut rng);
        let charges: Vec<String> = charges.iter().map(|s| s.to_string()).collect();
        init_encoder_params(&mut store, d, &charges, &mut rng);
        let cfg = EncoderConfig {
            d,
            heads,
            dropout: 0.0,
            auto_register: true,
        };
        (store, vocab, cfg)
    }

    #[test]
    fn single_token_component_is_its_row() {
        let (store, vocab, _) = setup(8, 2, &[]);
        let mut g = Graph::new();
        let table = g.param(&store, EMBED).unwrap();
        let e = embed_component(&mut g, table, &vocab, "robbed").unwrap();
        let id = vocab.id("robbed").unwrap() as usize;
        assert_eq!(g.value(e).data(), store.get(EMBED).unwrap().row(id));
    }

    #[test]
    fn two_tokens_average() {
        let (store, vocab, _) = setup(8, 2, &[]);
        let mut g = Graph::new();
        let table = g.param(&store, EMBED).unwrap();
        let e = embed_component(&mut g, table, &vocab, "robbed property").unwrap();
        let t = store.get(EMBED).unwrap();
        let (a, b) = (t.row(vocab.id("robbed").unwrap() as usize), t.row(vocab.id("property").unwrap() as usize));
        for j in 0..8 {
            assert!((g.value(e).data()[j] - (a[j] + b[j]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_component_is_zero() {
        let (store, vocab, _) = setup(8, 2, &[]);
        let mut g = Graph::new();
        let table = g.param(&store, EMBED).unwrap();
        let e = embed_component(&mut g, table, &vocab, "   ").unwrap();
        assert!(g.value(e).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_query_key_gives_uniform_weights() {
        let (mut store, vocab, cfg) = setup(8, 2, &[]);
        store.insert("chain.attn.wq", Tensor::zeros(&[8, 8]));
        store.insert("chain.attn.wk", Tensor::zeros(&[8, 8]));
        let cs = builtin_chain_set("robbery").unwrap();
        let mut g = Graph::new();
        let enc = encode_chain(&mut g, &store, &vocab, &cfg, &cs.chains[0]).unwrap();
        for x in enc.weights.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_value_output_gives_mean_of_components() {
        let (mut store, vocab, cfg) = setup(8, 2, &[]);
        store.insert("chain.attn.wv", Tensor::zeros(&[8, 8]));
        store.insert("chain.attn.wo", Tensor::zeros(&[8, 8]));
        let cs = builtin_chain_set("robbery").unwrap();
        let mut g = Graph::new();
        let enc = encode_chain(&mut g, &store, &vocab, &cfg, &cs.chains[0]).unwrap();
        let table = g.param(&store, EMBED).unwrap();
        let texts = cs.chains[0].display_texts();
        let mut mean = Tensor::zeros(&[1, 8]);
        for t in &texts {
            let e = embed_component(&mut g, table, &vocab, t).unwrap();
            mean.add_assign(g.value(e)).unwrap();
        }
        let mean = mean.scale(1.0 / 3.0);
        assert_eq!(g.value(enc.r).data(), mean.data());
    }

    #[test]
    fn zero_gate_averages_u_and_v() {
        let (mut store, vocab, cfg) = setup(8, 2, &["robbery"]);
        store.insert("chain.gate.w", Tensor::zeros(&[8, 8]));
        let _ = vocab;
        let mut g = Graph::new();
        let r = g.constant(Tensor::row_vector((0..8).map(|i| i as f64 * 0.1 - 0.3).collect()));
        let ct = crime_transform(&mut g, &store, &cfg, r, "robbery").unwrap();
        assert!(g.value(ct.gate).data().iter().all(|&x| x == 0.5));
        let (u, v, t) = (g.value(ct.u), g.value(ct.v), g.value(ct.t));
        for j in 0..8 {
            assert!((t.data()[j] - (u.data()[j] + v.data()[j]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_charge_map_is_a_fixed_point() {
        let (mut store, _, cfg) = setup(8, 2, &[]);
        assert!(ensure_charge(&mut store, 8, "robbery"));
        assert!(!ensure_charge(&mut store, 8, "robbery"));
        let mut g = Graph::new();
        let r = g.constant(Tensor::row_vector((0..8).map(|i| (i as f64).sin()).collect()));
        let ct = crime_transform(&mut g, &store, &cfg, r, "robbery").unwrap();
        assert!(g.value(ct.t).max_abs_diff(g.value(ct.u)) < 1e-15);
    }

    #[test]
    fn unknown_charge_without_auto_registration_fails() {
        let (store, _, mut cfg) = setup(8, 2, &[]);
        cfg.auto_register = false;
        let mut g = Graph::new();
        let r = g.constant(Tensor::zeros(&[1, 8]));
        assert!(matches!(
            crime_transform(&mut g, &store, &cfg, r, "arson"),
            Err(Error::UnknownCharge(_))
        ));
    }

    #[test]
    fn fusion_projections_select_halves() {
        let (mut store, _, _) = setup(4, 2, &[]);
        let eye = Tensor::eye(4);
        let zero = Tensor::zeros(&[4, 4]);
        let r_val = Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]);
        let t_val = Tensor::row_vector(vec![-1.0, 0.5, 0.0, 7.0]);
        for (w, want) in [
            (Tensor::concat_rows(&[&eye, &zero]).unwrap(), &r_val),
            (Tensor::concat_rows(&[&zero, &eye]).unwrap(), &t_val),
        ] {
            store.insert("chain.fusion.w", w);
            let mut g = Graph::new();
            let r = g.constant(r_val.clone());
            let t = g.constant(t_val.clone());
            let f = fuse(&mut g, &store, r, t).unwrap();
            assert_eq!(g.value(f), want);
        }
    }

    #[test]
    fn empty_chain_set_is_rejected() {
        let (store, vocab, cfg) = setup(8, 2, &[]);
        let cs = ChainSet {
            charge: "robbery".into(),
            chains: vec![],
        };
        assert!(matches!(
            encode_chain_set_eval(&store, &vocab, &cfg, &cs),
            Err(Error::EmptyEncoding)
        ));
    }

    #[test]
    fn duplicate_chain_duplicates_row_and_permutation_permutes() {
        let (store, vocab, cfg) = setup(8, 2, &["robbery"]);
        let mut cs = builtin_chain_set("robbery").unwrap();
        let base = encode_chain_set_eval(&store, &vocab, &cfg, &cs).unwrap();
        assert_eq!(base.e_chain.shape(), &[2, 8]);
        cs.chains.push(cs.chains[0].clone());
        let dup = encode_chain_set_eval(&store, &vocab, &cfg, &cs).unwrap();
        assert_eq!(dup.e_chain.row(2), base.e_chain.row(0));
        cs.chains.swap(0, 1);
        let perm = encode_chain_set_eval(&store, &vocab, &cfg, &cs).unwrap();
        assert_eq!(perm.e_chain.row(0), base.e_chain.row(1));
        assert_eq!(perm.e_chain.row(1), base.e_chain.row(0));
    }

    #[test]
    fn charge_isolation() {
        let (mut store, vocab, cfg) = setup(8, 2, &["robbery", "theft"]);
        let mut cs = builtin_chain_set("robbery").unwrap();
        cs.charge = "theft".into();
        let before = encode_chain_set_eval(&store, &vocab, &cfg, &cs).unwrap();
        store.get_mut("chain.crime.robbery.w").unwrap().data_mut()[3] += 5.0;
        store.get_mut("chain.crime.robbery.b").unwrap().data_mut()[0] -= 1.0;
        let after = encode_chain_set_eval(&store, &vocab, &cfg, &cs).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn every_encoder_parameter_gets_gradient() {
        let (store, vocab, cfg) = setup(8, 2, &["robbery"]);
        let cs = builtin_chain_set("robbery").unwrap();
        let mut g = Graph::new();
        let enc = encode_chain_set(&mut g, &store, &vocab, &cfg, &cs).unwrap();
        let sq = g.mul(enc.e_chain, enc.e_chain).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        for name in store.names() {
            let gr = grads.get(name).unwrap_or_else(|| panic!("{name} unbound"));
            assert!(gr.norm_sq() > 0.0, "{name} has zero gradient");
        }
        let names: Vec<String> = store.names().filter(|n| n.as_str() != EMBED).cloned().collect();
        let report = grad_check(&store, &names, 1e-5, |g, s| {
            let enc = encode_chain_set(g, s, &vocab, &cfg, &cs)?;
            let sq = g.mul(enc.e_chain, enc.e_chain)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
