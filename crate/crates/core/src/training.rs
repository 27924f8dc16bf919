//! Adam optimisation of the joint loss over a corpus split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainLibrary, ChainSet};
use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::corpus::{CaseRecord, CorpusSplit};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_opinions, MetricOptions, MetricReport};
use crate::model::{prepare_case, GenerateConfig, ModelConfig, OpinionModel, PreparedCase};
use crate::params::ParamStore;
use crate::tensor::{Gradients, Graph, Tensor};
use crate::tokenizer::Vocab;

pub const LOG_HEADER: &str = "epoch,loss_total,loss_reasoning,loss_sentencing,heldout_mae,heldout_rmse";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_chains: bool,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Held-out generation is run every `eval_every` epochs and after the
    /// last one; 0 runs it only after the last epoch.
    pub eval_every: usize,
    pub eval_max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            alpha: 1.0,
            beta: 1.0,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            use_chains: true,
            clip_norm: 1.0,
            eval_every: 1,
            eval_max_len: 160,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || self.alpha + self.beta == 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative and not both zero (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. `grads` must cover exactly the keys of
/// `params`.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.names().any(|n| !grads.contains_key(n)) {
        let missing: Vec<&String> = params.names().filter(|n| !grads.contains_key(*n)).collect();
        let extra: Vec<&String> = grads.keys().filter(|n| !params.contains(n)).collect();
        return Err(Error::Contract(format!(
            "gradient keys differ from parameters (missing {missing:?}, unexpected {extra:?})"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mh = *mi / c1;
            let vh = *vi / c2;
            *pi -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_reasoning: f64,
    pub loss_sentencing: f64,
    pub heldout_mae: Option<f64>,
    pub heldout_rmse: Option<f64>,
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            r.loss_total,
            r.loss_reasoning,
            r.loss_sentencing,
            opt(r.heldout_mae),
            opt(r.heldout_rmse)
        );
    }
    s
}

/// Where the loop writes its artefacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Overwritten after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// Rewritten after every epoch.
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub last_report: Option<MetricReport>,
}

/// Vocabulary over the training texts and every library string.
pub fn build_vocab(train: &[CaseRecord], library: &ChainLibrary) -> Vocab {
    let mut texts: Vec<String> = Vec::with_capacity(2 * train.len());
    for c in train {
        texts.push(c.fact.clone());
        texts.push(c.opinion.clone());
    }
    texts.extend(library.texts());
    Vocab::build(texts)
}

/// Greedy opinions for `cases`, scored against them.
pub fn evaluate_model(
    model: &OpinionModel,
    cases: &[CaseRecord],
    library: &ChainLibrary,
    use_chains: bool,
    gen: &GenerateConfig,
    opts: MetricOptions,
) -> Result<(Vec<(String, String)>, MetricReport)> {
    let mut generated = Vec::with_capacity(cases.len());
    for case in cases {
        let chains = if use_chains { Some(library.require(&case.charge)?) } else { None };
        let out = model.generate_for(&case.fact, chains, gen)?;
        generated.push((case.case_id.clone(), out.text));
    }
    let report = evaluate_opinions(&generated, cases, opts)?;
    Ok((generated, report))
}

fn sub_seed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Trains a fresh model on `split.train`, evaluating on `split.test`.
///
/// Initialisation, vocabulary and data order depend only on the seed, the
/// corpus and the library, so the two settings of `use_chains` differ only
/// in the chain prefix.
pub fn train(split: &CorpusSplit, library: &ChainLibrary, cfg: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.check()?;
    if split.train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    for c in split.train.iter().chain(&split.test) {
        if cfg.use_chains {
            library.require(&c.charge)?;
        }
    }
    let vocab = build_vocab(&split.train, library);
    let model = OpinionModel::new(cfg.model.clone(), vocab, &library.charges(), cfg.seed)?;
    train_model(model, split, library, cfg, outputs)
}

/// Continues training `model`.
pub fn train_model(
    mut model: OpinionModel,
    split: &CorpusSplit,
    library: &ChainLibrary,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.check()?;
    let prepared: Vec<PreparedCase> = split
        .train
        .iter()
        .map(|c| prepare_case(&model.vocab, c))
        .collect::<Result<_>>()?;
    let chains: Vec<Option<&ChainSet>> = split
        .train
        .iter()
        .map(|c| if cfg.use_chains { library.require(&c.charge).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    for (p, c) in prepared.iter().zip(&split.train) {
        let n = chains_len(library, c, cfg.use_chains);
        let need = n + p.fact_ids.len() + p.inputs.len();
        if need > model.config.context {
            return Err(Error::Capacity {
                needed: need,
                capacity: model.config.context,
            });
        }
    }

    let mut order_rng = sub_seed(cfg.seed, 1);
    let mut dropout_rng = sub_seed(cfg.seed, 2);
    let mut adam = AdamState::new(&model.params);
    let gen = GenerateConfig {
        max_len: cfg.eval_max_len,
        ..GenerateConfig::default()
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last_report = None;
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut sum_t, mut sum_r, mut sum_s, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&PreparedCase, Option<&ChainSet>)> = idx.iter().map(|&i| (&prepared[i], chains[i])).collect();
            let mut g = Graph::training(dropout_rng.next_u64());
            let loss = model.batch_loss(&mut g, &model.params, &batch, cfg.alpha, cfg.beta)?;
            let total = g.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::Evaluation(format!("loss became {total} at epoch {epoch}")));
            }
            let mut grads: Gradients = g.backward(loss.total)?.complete_for(&model.params);
            if cfg.clip_norm > 0.0 {
                grads.clip_global_norm(cfg.clip_norm);
            }
            adam_step(&mut model.params, grads.named(), &mut adam, cfg.lr)?;
            sum_t += total;
            sum_r += loss.reasoning;
            sum_s += loss.sentencing;
            batches += 1;
        }
        let nb = batches as f64;
        let due = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let (mae, rmse) = if due && !split.test.is_empty() {
            let (_, report) = evaluate_model(&model, &split.test, library, cfg.use_chains, &gen, MetricOptions::default())?;
            let r = (Some(report.mae), Some(report.rmse));
            last_report = Some(report);
            r
        } else {
            (None, None)
        };
        let row = EpochLog {
            epoch,
            loss_total: sum_t / nb,
            loss_reasoning: sum_r / nb,
            loss_sentencing: sum_s / nb,
            heldout_mae: mae,
            heldout_rmse: rmse,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (reasoning {:.5}, sentencing {:.5}){}",
            row.loss_total,
            row.loss_reasoning,
            row.loss_sentencing,
            mae.map(|m| format!(", held-out MAE {m:.3}")).unwrap_or_default()
        );
        log.push(row);
        let ck = Checkpoint {
            header: header(cfg, epoch),
            model: model.clone(),
        };
        if let Some(p) = &outputs.checkpoint {
            ck.save(p)?;
        }
        if let Some(p) = &outputs.log {
            std::fs::write(p, log_csv(&log))?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            header: header(cfg, cfg.epochs),
            model,
        },
        log,
        last_report,
    })
}

fn header(cfg: &TrainConfig, epoch: usize) -> CheckpointHeader {
    CheckpointHeader {
        model: cfg.model.clone(),
        use_chains: cfg.use_chains,
        epoch,
        seed: cfg.seed,
    }
}

fn chains_len(library: &ChainLibrary, c: &CaseRecord, use_chains: bool) -> usize {
    if use_chains {
        library.get(&c.charge).map_or(0, ChainSet::len)
    } else {
        0
    }
}

/// Settings of the whole-pipeline finite-difference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            d: 16,
            heads: 2,
            layers: 2,
            eps: 1e-5,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

const GRADCHECK_CASES: [(&str, &str, &str); 2] = [
    (
        "robbery",
        "Defendant Wang used violence and threats to rob others' property.",
        "Defendant Wang robbed others' property. 42 months of fixed-term imprisonment.",
    ),
    (
        "theft",
        "Defendant Li secretly stole a phone worth a large amount.",
        "Defendant Li committed theft. 8 months of fixed-term imprisonment.",
    ),
];

/// Compares tape gradients of the joint loss on a fixed two-case batch,
/// through the chain encoder and the decoder, with central differences.
/// Every parameter tensor is checked.
pub fn pipeline_grad_check(cfg: &GradCheckConfig) -> Result<crate::tensor::GradCheckReport> {
    let sets: Vec<ChainSet> = GRADCHECK_CASES
        .iter()
        .map(|(c, _, _)| crate::chain::builtin_chain_set(c))
        .collect::<Result<_>>()?;
    let library = ChainLibrary::from_sets(sets)?;
    let cases: Vec<CaseRecord> = GRADCHECK_CASES
        .iter()
        .enumerate()
        .map(|(i, (charge, fact, opinion))| {
            let (span, months) = crate::evaluation::sentencing_char_span(opinion).expect("fixture has a sentence");
            CaseRecord {
                case_id: format!("gradcheck-{i}"),
                fact: fact.to_string(),
                charge: charge.to_string(),
                opinion: opinion.to_string(),
                sentence_months: months,
                sentencing_span: [span.start, span.end],
                defendant: String::new(),
            }
        })
        .collect();
    let model_cfg = ModelConfig {
        d: cfg.d,
        encoder_heads: cfg.heads,
        decoder_heads: cfg.heads,
        layers: cfg.layers,
        context: 512,
        dropout: 0.0,
        auto_register: true,
    };
    let model = OpinionModel::new(model_cfg, build_vocab(&cases, &library), &library.charges(), cfg.seed)?;
    let prepared: Vec<PreparedCase> = cases.iter().map(|c| prepare_case(&model.vocab, c)).collect::<Result<_>>()?;
    let batch: Vec<(&PreparedCase, Option<&ChainSet>)> = prepared
        .iter()
        .zip(&cases)
        .map(|(p, c)| (p, library.get(&c.charge)))
        .collect();
    let names: Vec<String> = model.params.names().cloned().collect();
    crate::tensor::grad_check(&model.params, &names, cfg.eps, |g, store| {
        Ok(model.batch_loss(g, store, &batch, cfg.alpha, cfg.beta)?.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split as split_corpus, synthesize_corpus, SynthConfig};

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::row_vector(vec![1.0, -2.0]));
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g: BTreeMap<_, _> = [("w".to_string(), Tensor::zeros(&[1, 2]))].into();
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::row_vector(vec![0.0, 0.0]));
        let mut st = AdamState::new(&p);
        let g: BTreeMap<_, _> = [("w".to_string(), Tensor::row_vector(vec![3.0, -0.02]))].into();
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_key_mismatch() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(1.0));
        let mut st = AdamState::new(&p);
        let g: BTreeMap<_, _> = [("u".to_string(), Tensor::scalar(1.0))].into();
        assert!(matches!(adam_step(&mut p, &g, &mut st, 0.1), Err(Error::Contract(_))));
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                d: 16,
                encoder_heads: 2,
                decoder_heads: 2,
                layers: 1,
                context: 256,
                dropout: 0.1,
                auto_register: true,
            },
            epochs: 2,
            batch_size: 4,
            eval_every: 0,
            eval_max_len: 8,
            ..TrainConfig::default()
        }
    }

    fn small_split() -> CorpusSplit {
        let corpus = synthesize_corpus(
            &SynthConfig {
                seed: 1,
                cases_per_charge: 3,
                charges: vec!["robbery".into(), "theft".into()],
                distractors: 0,
            },
            &ChainLibrary::builtin(),
        )
        .unwrap();
        split_corpus(&corpus, 0.67, 1).unwrap()
    }

    #[test]
    fn deterministic_and_logged() {
        let lib = ChainLibrary::builtin();
        let split = small_split();
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let outs = TrainOutputs {
            checkpoint: Some(dir.path().join("m.ckpt")),
            log: Some(dir.path().join("log.csv")),
        };
        let a = train(&split, &lib, &cfg, &outs).unwrap();
        let b = train(&split, &lib, &cfg, &TrainOutputs::default()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint.model.params, b.checkpoint.model.params);
        let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert!(csv.starts_with(LOG_HEADER));
        assert_eq!(csv.lines().count(), 3);
        assert!(a.log[1].heldout_mae.is_some() && a.log[0].heldout_mae.is_none());
        let ck = Checkpoint::load(&dir.path().join("m.ckpt")).unwrap();
        assert_eq!(ck.model.params, a.checkpoint.model.params);
    }

    #[test]
    fn beta_zero_total_equals_reasoning() {
        let lib = ChainLibrary::builtin();
        let cfg = TrainConfig {
            beta: 0.0,
            ..small_cfg()
        };
        let out = train(&small_split(), &lib, &cfg, &TrainOutputs::default()).unwrap();
        for r in &out.log {
            assert_eq!(r.loss_total, r.loss_reasoning);
        }
    }

    #[test]
    fn ablation_shares_initialisation() {
        let lib = ChainLibrary::builtin();
        let split = small_split();
        let vocab = build_vocab(&split.train, &lib);
        let a = OpinionModel::new(small_cfg().model, vocab.clone(), &lib.charges(), 4).unwrap();
        let b = OpinionModel::new(small_cfg().model, vocab, &lib.charges(), 4).unwrap();
        assert_eq!(a, b);
        let cfg = TrainConfig {
            use_chains: false,
            epochs: 1,
            ..small_cfg()
        };
        train(&split, &lib, &cfg, &TrainOutputs::default()).unwrap();
    }

    #[test]
    fn missing_charge_is_config_error() {
        let split = small_split();
        let lib = ChainLibrary::from_sets(vec![crate::chain::builtin_chain_set("theft").unwrap()]).unwrap();
        assert!(matches!(
            train(&split, &lib, &small_cfg(), &TrainOutputs::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn small_pipeline_grad_check() {
        let cfg = GradCheckConfig {
            d: 8,
            layers: 1,
            ..GradCheckConfig::default()
        };
        let r = pipeline_grad_check(&cfg).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 1000);
    }

    #[test]
    fn config_checks() {
        let bad_lr = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(bad_lr.check().is_err());
        let both_zero = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            ..TrainConfig::default()
        };
        assert!(both_zero.check().is_err());
        assert!(TrainConfig::default().check().is_ok());
    }
}
