mod client;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use chain_reasoner::chain::{
    build_extraction_prompt, parse_extraction_response, serialize_chain_set, validate_chain_set, ChainLibrary,
};
use chain_reasoner::checkpoint::Checkpoint;
use chain_reasoner::corpus::{
    load_jsonl, parse_jsonl_with, split, synthesize_corpus, to_jsonl, CaseRecord, LoadMode, OpinionRecord, SynthConfig,
};
use chain_reasoner::evaluation::{
    evaluate_opinions, judge_pair, screen_corpus, AbsentPolicy, MetricOptions, Verdict,
};
use chain_reasoner::model::{DecodeMode, GenerateConfig, ModelConfig};
use chain_reasoner::training::{pipeline_grad_check, train, GradCheckConfig, TrainConfig, TrainOutputs};
use chain_reasoner::Error as CoreError;

use crate::client::HttpClient;
use crate::config::FileConfig;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Legal-chain-aware judicial opinion generation.
#[derive(Parser, Debug)]
#[command(name = "chain-reasoner", version)]
struct Cli {
    /// TOML file of option defaults; command-line flags take precedence.
    #[arg(long, global = true, env = "CHAIN_REASONER_CONFIG")]
    config: Option<PathBuf>,

    /// Log verbosity (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the chain-extraction prompt for a statutory provision.
    ExtractPrompt(ExtractPromptArgs),
    /// Turn an LLM extraction response into a chain file.
    ParseChains(ParseChainsArgs),
    /// Check chain files against the chain constraints.
    ValidateChains(ValidateArgs),
    /// Generate a deterministic synthetic corpus.
    SynthCorpus(SynthArgs),
    /// Train a model on a corpus split.
    Train(TrainArgs),
    /// Generate opinions for a case file from a checkpoint.
    Generate(GenerateArgs),
    /// Score generated opinions against gold cases.
    Evaluate(EvaluateArgs),
    /// Rule-based screening of opinions against the chain library.
    Screen(ScreenArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck(GradcheckArgs),
    /// Pairwise comparison of two opinion files by an LLM judge.
    Judge(JudgeArgs),
}

#[derive(Args, Debug)]
struct ExtractPromptArgs {
    /// File holding the provision text.
    #[arg(long)]
    provision: PathBuf,
    /// Charge identifier the provision belongs to.
    #[arg(long)]
    charge: String,
    /// Send the prompt to this completion endpoint and print the reply instead.
    #[arg(long)]
    llm_endpoint: Option<String>,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParseChainsArgs {
    /// File holding the LLM response.
    #[arg(long)]
    response: PathBuf,
    #[arg(long)]
    charge: String,
    /// Chain file to write [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Chain file or directory of chain files [default: built-in library].
    #[arg(long)]
    chains: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 20]
    #[arg(long)]
    cases_per_charge: Option<usize>,
    /// Comma-separated charges [default: every library charge].
    #[arg(long, value_delimiter = ',')]
    charges: Option<Vec<String>>,
    /// Off-charge statements per fact [default: 1].
    #[arg(long)]
    distractors: Option<usize>,
    /// Chain library [default: built-in].
    #[arg(long)]
    chains: Option<PathBuf>,
    /// Corpus file to write [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// Model width [default: 64].
    #[arg(long)]
    d: Option<usize>,
    /// Chain-encoder attention heads [default: 8].
    #[arg(long)]
    heads: Option<usize>,
    /// Decoder attention heads [default: 4].
    #[arg(long)]
    decoder_heads: Option<usize>,
    /// Decoder blocks [default: 2].
    #[arg(long)]
    layers: Option<usize>,
    /// Decoder context length [default: 256].
    #[arg(long)]
    context: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Case corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Chain library [default: built-in].
    #[arg(long)]
    chains: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelFlags,
    /// Reasoning-loss weight [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Sentencing-loss weight [default: 1].
    #[arg(long)]
    beta: Option<f64>,
    /// [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Global gradient-norm clip, 0 disables [default: 1].
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Train fraction of the stratified split [default: 0.8].
    #[arg(long)]
    ratio: Option<f64>,
    /// Held-out evaluation interval in epochs, 0 for the last epoch only [default: 1].
    #[arg(long)]
    eval_every: Option<usize>,
    /// Token limit of held-out generation [default: 160].
    #[arg(long)]
    max_len: Option<usize>,
    /// Train without the chain prefix.
    #[arg(long)]
    no_chains: bool,
    /// Checkpoint file, rewritten every epoch.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training log (CSV), rewritten every epoch.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Run report (JSON) [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Greedy,
    TopK,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cases to write opinions for (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Chain library [default: built-in].
    #[arg(long)]
    chains: Option<PathBuf>,
    /// [default: greedy]
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Candidates kept by top-k sampling [default: 5].
    #[arg(long)]
    top_k: Option<usize>,
    /// Sampling seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Token limit [default: 200].
    #[arg(long)]
    max_len: Option<usize>,
    /// Opinion file (JSONL) [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Absent {
    Zero,
    Drop,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Opinion file (JSONL, opinion or case records).
    #[arg(long)]
    opinions: PathBuf,
    /// Gold cases (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Treatment of opinions without a sentence [default: zero].
    #[arg(long, value_enum)]
    absent: Option<Absent>,
    /// Add-one smoothing for BLEU orders above 1.
    #[arg(long)]
    bleu_smoothing: bool,
    /// Highest BLEU order [default: 4].
    #[arg(long)]
    bleu_order: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScreenArgs {
    /// Opinion file: case records, or opinion records together with --corpus.
    #[arg(long)]
    opinions: PathBuf,
    /// Gold cases, required for opinion records.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Chain library [default: built-in].
    #[arg(long)]
    chains: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 16]
    #[arg(long)]
    d: Option<usize>,
    /// Heads of the encoder and decoder attention [default: 2].
    #[arg(long)]
    heads: Option<usize>,
    /// Decoder blocks [default: 2].
    #[arg(long)]
    layers: Option<usize>,
    /// Finite-difference step [default: 1e-5].
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct JudgeArgs {
    /// Gold cases supplying the facts.
    #[arg(long)]
    corpus: PathBuf,
    /// First opinion file (JSONL).
    #[arg(long)]
    opinions_a: PathBuf,
    /// Second opinion file (JSONL).
    #[arg(long)]
    opinions_b: PathBuf,
    /// Completion endpoint taking {"prompt"} and returning {"text"}.
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Maps a failure onto the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Io(_) => 3,
                CoreError::Argument(_) | CoreError::Config(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<config::UsageError>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::ExtractPrompt(a) => extract_prompt(a, &file),
        Command::ParseChains(a) => parse_chains(a),
        Command::ValidateChains(a) => validate_chains(a, &file),
        Command::SynthCorpus(a) => synth_corpus(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Generate(a) => generate(a, &file),
        Command::Evaluate(a) => evaluate(a, &file),
        Command::Screen(a) => screen(a, &file),
        Command::Gradcheck(a) => gradcheck(a, &file),
        Command::Judge(a) => judge(a, &file),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            so.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    config: C,
    result: R,
}

fn emit_report<C: Serialize, R: Serialize>(out: Option<&Path>, command: &str, config: C, result: R) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&Report { command, config, result })?;
    s.push('\n');
    emit(out, &s)
}

/// Resolved settings of a data-producing command go to stderr.
fn echo_config<C: Serialize>(command: &str, config: &C) -> Result<()> {
    eprintln!("{command} config: {}", serde_json::to_string(config)?);
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn library(flag: Option<&PathBuf>, file: &FileConfig) -> Result<(ChainLibrary, String)> {
    match flag.or(file.chains.as_ref()) {
        Some(p) => Ok((
            ChainLibrary::load(p).with_context(|| format!("loading chains from {}", p.display()))?,
            p.display().to_string(),
        )),
        None => Ok((ChainLibrary::builtin(), "builtin".into())),
    }
}

fn load_cases(path: &Path) -> Result<Vec<CaseRecord>> {
    Ok(load_jsonl(path, LoadMode::Strict)
        .with_context(|| format!("loading cases from {}", path.display()))?
        .records)
}

/// Opinions keyed by case id, read from opinion records or case records.
fn load_opinions(path: &Path) -> Result<Vec<OpinionRecord>> {
    let text = read(path)?;
    if let Ok(cases) = parse_jsonl_with::<CaseRecord, _>(&text, LoadMode::Strict, CaseRecord::check) {
        if !cases.records.is_empty() {
            return Ok(cases
                .records
                .into_iter()
                .map(|c| OpinionRecord {
                    case_id: c.case_id,
                    opinion: c.opinion,
                    extracted_months: None,
                    sentencing_span: None,
                })
                .collect());
        }
    }
    let recs = parse_jsonl_with::<OpinionRecord, _>(&text, LoadMode::Strict, |_| Ok(()))
        .with_context(|| format!("loading opinions from {}", path.display()))?
        .records;
    if recs.is_empty() {
        bail!(CoreError::Validation(format!("{} holds no opinions", path.display())));
    }
    Ok(recs)
}

#[derive(Serialize)]
struct ExtractConfig<'a> {
    provision: &'a Path,
    charge: &'a str,
    llm_endpoint: Option<&'a str>,
}

fn extract_prompt(a: ExtractPromptArgs, file: &FileConfig) -> Result<u8> {
    let provision = read(&a.provision)?;
    let prompt = build_extraction_prompt(&provision, &a.charge)?;
    let endpoint = a.llm_endpoint.as_deref().or(file.llm_endpoint.as_deref());
    echo_config(
        "extract-prompt",
        &ExtractConfig {
            provision: &a.provision,
            charge: &a.charge,
            llm_endpoint: endpoint,
        },
    )?;
    let text = match endpoint {
        Some(url) => {
            let reply = HttpClient::new(url, file.llm_api_key_env.as_deref()).complete_text(&prompt)?;
            if reply.ends_with('\n') { reply } else { reply + "\n" }
        }
        None => prompt,
    };
    emit(a.out.as_deref(), &text)?;
    Ok(0)
}

fn parse_chains(a: ParseChainsArgs) -> Result<u8> {
    let response = read(&a.response)?;
    let outcome = parse_extraction_response(&response, &a.charge)?;
    for d in &outcome.diagnostics {
        eprintln!("block {}: {}", d.block, d.message);
    }
    let set = outcome.chains;
    let report = validate_chain_set(&set);
    eprint!("{report}");
    emit(a.out.as_deref(), &serialize_chain_set(&set))?;
    Ok(if report.all_checkable_pass() { 0 } else { 2 })
}

fn validate_chains(a: ValidateArgs, file: &FileConfig) -> Result<u8> {
    let (lib, source) = library(a.chains.as_ref(), file)?;
    let reports: Vec<_> = lib.sets().map(validate_chain_set).collect();
    let ok = reports.iter().all(|r| r.all_checkable_pass());
    for r in &reports {
        eprint!("{r}");
    }
    emit_report(
        a.out.as_deref(),
        "validate-chains",
        BTreeMap::from([("chains", source)]),
        serde_json::json!({ "passed": ok, "reports": reports }),
    )?;
    Ok(if ok { 0 } else { 2 })
}

fn synth_corpus(a: SynthArgs, file: &FileConfig) -> Result<u8> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
        cases_per_charge: a.cases_per_charge.or(file.cases_per_charge).unwrap_or(d.cases_per_charge),
        charges: a.charges.or(file.charges.clone()).unwrap_or(d.charges),
        distractors: a.distractors.or(file.distractors).unwrap_or(d.distractors),
    };
    let (lib, _) = library(a.chains.as_ref(), file)?;
    echo_config("synth-corpus", &cfg)?;
    let corpus = synthesize_corpus(&cfg, &lib)?;
    emit(a.out.as_deref(), &to_jsonl(&corpus))?;
    Ok(0)
}

fn model_config(flags: &ModelFlags, file: &FileConfig) -> ModelConfig {
    let d = ModelConfig::default();
    ModelConfig {
        d: flags.d.or(file.d).unwrap_or(d.d),
        encoder_heads: flags.heads.or(file.heads).unwrap_or(d.encoder_heads),
        decoder_heads: flags.decoder_heads.or(file.decoder_heads).unwrap_or(d.decoder_heads),
        layers: flags.layers.or(file.layers).unwrap_or(d.layers),
        context: flags.context.or(file.context).unwrap_or(d.context),
        dropout: flags.dropout.or(file.dropout).unwrap_or(d.dropout),
        auto_register: d.auto_register,
    }
}

#[derive(Serialize)]
struct TrainRun {
    corpus: PathBuf,
    chains: String,
    ratio: f64,
    train: TrainConfig,
}

fn train_cmd(a: TrainArgs, file: &FileConfig) -> Result<u8> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        model: model_config(&a.model, file),
        lr: a.lr.or(file.lr).unwrap_or(d.lr),
        alpha: a.alpha.or(file.alpha).unwrap_or(d.alpha),
        beta: a.beta.or(file.beta).unwrap_or(d.beta),
        epochs: a.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: a.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
        use_chains: !(a.no_chains || file.no_chains.unwrap_or(false)),
        clip_norm: a.clip_norm.or(file.clip_norm).unwrap_or(d.clip_norm),
        eval_every: a.eval_every.or(file.eval_every).unwrap_or(d.eval_every),
        eval_max_len: a.max_len.or(file.max_len).unwrap_or(d.eval_max_len),
    };
    let ratio = a.ratio.or(file.ratio).unwrap_or(0.8);
    let (lib, source) = library(a.chains.as_ref(), file)?;
    let corpus = load_cases(&a.corpus)?;
    let sp = split(&corpus, ratio, cfg.seed)?;
    let outputs = TrainOutputs {
        checkpoint: Some(a.checkpoint.clone()),
        log: a.log.clone(),
    };
    let outcome = train(&sp, &lib, &cfg, &outputs)?;
    let run = TrainRun {
        corpus: a.corpus,
        chains: source,
        ratio,
        train: cfg,
    };
    let result = serde_json::json!({
        "train_cases": sp.train.len(),
        "heldout_cases": sp.test.len(),
        "log": outcome.log,
        "heldout": outcome.last_report.map(|r| serde_json::json!({
            "mae": r.mae, "rmse": r.rmse, "rouge1": r.rouge1, "rouge2": r.rouge2, "rouge_l": r.rouge_l,
            "bleu1": r.bleu1, "bleu2": r.bleu2, "bleu_n": r.bleu_n,
        })),
    });
    emit_report(a.out.as_deref(), "train", run, result)?;
    Ok(0)
}

#[derive(Serialize)]
struct GenerateRun {
    checkpoint: PathBuf,
    corpus: PathBuf,
    chains: String,
    use_chains: bool,
    mode: Mode,
    top_k: usize,
    seed: u64,
    max_len: usize,
}

fn generate(a: GenerateArgs, file: &FileConfig) -> Result<u8> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (lib, source) = library(a.chains.as_ref(), file)?;
    let cases = load_cases(&a.corpus)?;
    let run = GenerateRun {
        checkpoint: a.checkpoint.clone(),
        corpus: a.corpus.clone(),
        chains: source,
        use_chains: ck.header.use_chains,
        mode: a.mode.or(file.mode).unwrap_or(Mode::Greedy),
        top_k: a.top_k.or(file.top_k).unwrap_or(5),
        seed: a.seed.or(file.seed).unwrap_or(0),
        max_len: a.max_len.or(file.max_len).unwrap_or(GenerateConfig::default().max_len),
    };
    echo_config("generate", &run)?;
    let gen = GenerateConfig {
        max_len: run.max_len,
        mode: match run.mode {
            Mode::Greedy => DecodeMode::Greedy,
            Mode::TopK => DecodeMode::TopK(run.top_k),
        },
        seed: run.seed,
    };
    let mut records = Vec::with_capacity(cases.len());
    for case in &cases {
        let chains = if run.use_chains { Some(lib.require(&case.charge)?) } else { None };
        let out = ck.model.generate_for(&case.fact, chains, &gen)?;
        records.push(OpinionRecord {
            case_id: case.case_id.clone(),
            opinion: out.text,
            extracted_months: out.extracted_months,
            sentencing_span: out.sentencing_span.map(|r| [r.start, r.end]),
        });
    }
    emit(a.out.as_deref(), &to_jsonl(&records))?;
    Ok(0)
}

#[derive(Serialize)]
struct EvaluateRun {
    opinions: PathBuf,
    corpus: PathBuf,
    absent: Absent,
    bleu_smoothing: bool,
    bleu_order: usize,
}

fn evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<u8> {
    let run = EvaluateRun {
        opinions: a.opinions.clone(),
        corpus: a.corpus.clone(),
        absent: a.absent.or(file.absent).unwrap_or(Absent::Zero),
        bleu_smoothing: a.bleu_smoothing || file.bleu_smoothing.unwrap_or(false),
        bleu_order: a.bleu_order.or(file.bleu_order).unwrap_or(4),
    };
    let opinions = load_opinions(&a.opinions)?;
    let gold = load_cases(&a.corpus)?;
    let generated: Vec<(String, String)> = opinions.into_iter().map(|o| (o.case_id, o.opinion)).collect();
    let opts = MetricOptions {
        absent: match run.absent {
            Absent::Zero => AbsentPolicy::Zero,
            Absent::Drop => AbsentPolicy::Drop,
        },
        bleu_smoothing: run.bleu_smoothing,
        bleu_order: run.bleu_order,
    };
    let report = evaluate_opinions(&generated, &gold, opts)?;
    emit_report(a.out.as_deref(), "evaluate", run, report)?;
    Ok(0)
}

#[derive(Serialize)]
struct ScreenRun {
    opinions: PathBuf,
    corpus: Option<PathBuf>,
    chains: String,
}

fn screen(a: ScreenArgs, file: &FileConfig) -> Result<u8> {
    let (lib, source) = library(a.chains.as_ref(), file)?;
    let text = read(&a.opinions)?;
    let as_cases = parse_jsonl_with::<CaseRecord, _>(&text, LoadMode::Strict, CaseRecord::check)
        .ok()
        .filter(|o| !o.records.is_empty());
    let items: Vec<(String, CaseRecord)> = match (as_cases, &a.corpus) {
        (Some(cases), None) => cases.records.into_iter().map(|c| (c.opinion.clone(), c)).collect(),
        (_, Some(corpus)) => {
            let gold: BTreeMap<String, CaseRecord> =
                load_cases(corpus)?.into_iter().map(|c| (c.case_id.clone(), c)).collect();
            load_opinions(&a.opinions)?
                .into_iter()
                .map(|o| {
                    let case = gold
                        .get(&o.case_id)
                        .ok_or_else(|| anyhow!(CoreError::Validation(format!("no gold case `{}`", o.case_id))))?;
                    Ok((o.opinion, case.clone()))
                })
                .collect::<Result<_>>()?
        }
        (None, None) => {
            return Err(anyhow!(config::UsageError(
                "opinion records need --corpus to supply the defendant and charge".into()
            )))
        }
    };
    let report = screen_corpus(&items, &lib)?;
    emit_report(
        a.out.as_deref(),
        "screen",
        ScreenRun {
            opinions: a.opinions,
            corpus: a.corpus,
            chains: source,
        },
        report,
    )?;
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, file: &FileConfig) -> Result<u8> {
    let d = GradCheckConfig::default();
    let cfg = GradCheckConfig {
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
        d: a.d.or(file.d).unwrap_or(d.d),
        heads: a.heads.or(file.heads).unwrap_or(d.heads),
        layers: a.layers.or(file.layers).unwrap_or(d.layers),
        eps: a.eps.or(file.eps).unwrap_or(d.eps),
        ..d
    };
    let r = pipeline_grad_check(&cfg)?;
    let pass = r.max_rel_error < GRADCHECK_TOLERANCE;
    eprintln!("max relative error {:.3e} ({} scalars)", r.max_rel_error, r.checked);
    emit_report(
        a.out.as_deref(),
        "gradcheck",
        &cfg,
        serde_json::json!({
            "max_rel_error": r.max_rel_error,
            "worst_param": r.worst_param,
            "worst_index": r.worst_index,
            "checked": r.checked,
            "tolerance": GRADCHECK_TOLERANCE,
            "passed": pass,
        }),
    )?;
    Ok(if pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct JudgeOutcome {
    case_id: String,
    verdict: Verdict,
}

fn judge(a: JudgeArgs, file: &FileConfig) -> Result<u8> {
    let endpoint = a
        .llm_endpoint
        .clone()
        .or(file.llm_endpoint.clone())
        .ok_or_else(|| anyhow!(config::UsageError("judge needs --llm-endpoint".into())))?;
    let cases = load_cases(&a.corpus)?;
    let left: BTreeMap<String, String> = load_opinions(&a.opinions_a)?.into_iter().map(|o| (o.case_id, o.opinion)).collect();
    let right: BTreeMap<String, String> = load_opinions(&a.opinions_b)?.into_iter().map(|o| (o.case_id, o.opinion)).collect();
    let client = HttpClient::new(&endpoint, file.llm_api_key_env.as_deref());
    let mut outcomes = Vec::new();
    let mut tally = BTreeMap::from([("a", 0usize), ("b", 0), ("tie", 0)]);
    for case in &cases {
        let (Some(x), Some(y)) = (left.get(&case.case_id), right.get(&case.case_id)) else {
            continue;
        };
        let verdict = judge_pair(&client, &case.fact, x, y)?;
        *tally
            .get_mut(match verdict {
                Verdict::A => "a",
                Verdict::B => "b",
                Verdict::Tie => "tie",
            })
            .unwrap() += 1;
        outcomes.push(JudgeOutcome {
            case_id: case.case_id.clone(),
            verdict,
        });
    }
    if outcomes.is_empty() {
        bail!(CoreError::Validation("no case has an opinion in both files".into()));
    }
    emit_report(
        a.out.as_deref(),
        "judge",
        serde_json::json!({
            "corpus": a.corpus, "opinions_a": a.opinions_a, "opinions_b": a.opinions_b, "llm_endpoint": endpoint,
        }),
        serde_json::json!({ "tally": tally, "cases": outcomes }),
    )?;
    Ok(0)
}
