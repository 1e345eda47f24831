//! The `charphish` command line.
//!
//! Every subcommand resolves a [`RunConfig`] from `--config` (or
//! `CHARPHISH_CONFIG`) and `--section.key value` overrides, then runs one
//! library operation. Exit codes: 0 success, 1 operational error, 2 usage
//! error. `score` writes only its JSON payload to stdout.

mod config;

pub use config::{AttackSettings, ConfigError, ModelSettings, Paths, RunConfig, SplitSettings, CONFIG_ENV};

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::attack::{perturb_corpus, write_campaign, AttackMode, ModelOracle, Oracle};
use crate::corpus::{IngestFormat, SplitManifest, SplitRatios};
use crate::encoder::{Alphabet, EncodedEmail};
use crate::fixtures::{generate_emails, SyntheticSpec};
use crate::gradcam::{explain, render_html};
use crate::llm::{compare, run_campaign};
use crate::models::{CheckpointMeta, Model, ModelKind, NetworkSpec};
use crate::pipeline::{
    adversarial_test_set, evaluate, run_scenarios, train, train_adversarial, write_epoch_csv, CheckpointSink,
    Scenario, ScenarioConfig,
};
use crate::{CorpusSplit, CorpusStore, Label, RawEmail};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser, Debug)]
#[command(
    name = "charphish",
    version,
    about = "Character-level phishing detection: train, attack, explain, evaluate",
    after_help = "Any config key can be overridden with --section.key VALUE, e.g. --train.epochs 5."
)]
struct Cli {
    /// TOML config file; falls back to $CHARPHISH_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an eml/mbox/csv/jsonl source into the store.
    Ingest(IngestArgs),
    /// Drop emails whose normalized body was seen before.
    Dedupe,
    /// Write a stratified train/validation/test split manifest.
    Split(SeedArg),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Train on the train split plus perturbed phishing copies.
    TrainAdv(TrainArgs),
    /// Perturb phishing emails and write a campaign file.
    Attack(AttackArgs),
    /// Render a Grad-CAM heatmap for one email.
    Explain(ExplainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and evaluate clean/clean, clean/adv and adv/adv per model.
    Scenarios(ScenariosArgs),
    /// Classify one email; prints JSON.
    Score(ScoreArgs),
    /// Classify emails through a remote text-generation endpoint.
    LlmEval(LlmArgs),
    /// Write a synthetic corpus in store format.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    path: PathBuf,
    #[arg(long)]
    format: IngestFormat,
    #[arg(long, default_value = "")]
    source_tag: String,
    /// Label for every email of a single-class source.
    #[arg(long)]
    label: Option<Label>,
}

#[derive(Args, Debug)]
struct SeedArg {
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AttackFlags {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    mode: Option<AttackMode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// Checkpoint used as the oracle; required in guided mode.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Which split to perturb.
    #[arg(long, default_value = "test")]
    set: SetName,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    attack: AttackFlags,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Text file, or `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Class to explain; defaults to the predicted one.
    #[arg(long)]
    target: Option<Label>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    set: SetName,
    /// `clean/clean` evaluates the split as is; the others perturb its
    /// phishing emails first.
    #[arg(long, default_value = "clean/clean", value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    attack: AttackFlags,
}

#[derive(Args, Debug)]
struct ScenariosArgs {
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',')]
    models: Vec<ModelKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    attack: AttackFlags,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Text file, or `-` for stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct LlmArgs {
    /// Local checkpoint to compare against.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    set: SetName,
    /// Perturb the phishing emails first.
    #[arg(long)]
    adversarial: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    seq_len: usize,
    #[arg(long, default_value_t = crate::DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SetName {
    Train,
    Validation,
    Test,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::ALL.into_iter().find(|x| x.tag() == s).ok_or_else(|| format!("expected one of clean/clean, clean/adv, adv/adv; got `{s}`"))
}

type Overrides = Vec<(String, String)>;

/// Pulls `--section.key value` and `--section.key=value` pairs out of argv.
fn split_overrides(argv: Vec<OsString>) -> Result<(Vec<OsString>, Overrides), String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut overrides = Vec::new();
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy().into_owned();
        let Some(flag) = s.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| format!("--{flag} needs a value"))?;
                overrides.push((flag.to_string(), v.to_string_lossy().into_owned()));
            }
        }
    }
    Ok((rest, overrides))
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run(argv: Vec<OsString>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let (argv, mut overrides) = match split_overrides(argv) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{rendered}") } else { write!(stdout, "{rendered}") };
            return code;
        }
    };
    add_flag_overrides(&cli.command, &mut overrides);
    let config = match RunConfig::resolve(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 2;
        }
    };
    match dispatch(&cli.command, &config, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn add_flag_overrides(cmd: &Command, out: &mut Vec<(String, String)>) {
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    let quote = |s: String| format!("\"{s}\"");
    let attack = match cmd {
        Command::Attack(a) => Some(&a.attack),
        Command::Eval(a) => Some(&a.attack),
        Command::Scenarios(a) => Some(&a.attack),
        _ => None,
    };
    if let Some(a) = attack {
        push("attack.epsilon", a.epsilon.map(|v| format!("{v:?}")));
        push("attack.fraction", a.fraction.map(|v| format!("{v:?}")));
        push("attack.mode", a.mode.map(|m| quote(m.to_string())));
        push("attack.seed", a.seed.map(|v| v.to_string()));
    }
    match cmd {
        Command::Split(s) => push("split.seed", s.seed.map(|v| v.to_string())),
        Command::Train(t) | Command::TrainAdv(t) => {
            push("model.kind", t.model.map(|k| quote(k.to_string())));
            push("train.seed", t.seed.map(|v| v.to_string()));
        }
        _ => {}
    }
}

impl clap::builder::ValueParserFactory for Label {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Label>())
    }
}

impl clap::builder::ValueParserFactory for ModelKind {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<ModelKind>())
    }
}

impl clap::builder::ValueParserFactory for IngestFormat {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<IngestFormat>().map_err(|e| e.to_string()))
    }
}

impl clap::builder::ValueParserFactory for AttackMode {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<AttackMode>().map_err(|e| e.to_string()))
    }
}

/// A report together with the configuration that produced it.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    config_digest: String,
    config: &'a RunConfig,
    #[serde(flatten)]
    payload: T,
}

fn write_artifact<T: Serialize>(path: &Path, config: &RunConfig, payload: T) -> Result<(), BoxError> {
    ensure_parent(path)?;
    let a = Artifact { config_digest: config.digest(), config, payload };
    fs::write(path, serde_json::to_string_pretty(&a)? + "\n")?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), BoxError> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String, BoxError> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        crate::corpus::decode_text(&bytes).ok_or_else(|| format!("{} is not decodable text", path.display()).into())
    }
}

fn load_split(config: &RunConfig) -> Result<(CorpusStore, CorpusSplit), BoxError> {
    let store = CorpusStore::load(&config.paths.store)?;
    let split = if config.paths.split.exists() {
        SplitManifest::load(&config.paths.split)?.resolve(&store)?
    } else {
        log::warn!("no split manifest at {}; splitting with seed {}", config.paths.split.display(), config.split.seed);
        CorpusSplit::new(&store, SplitRatios(config.split.ratios), config.split.seed)?
    };
    Ok((store, split))
}

fn pick(split: &CorpusSplit, set: SetName) -> &[RawEmail] {
    match set {
        SetName::Train => &split.train,
        SetName::Validation => &split.validation,
        SetName::Test => &split.test,
    }
}

fn load_model(path: &Path, config: &RunConfig) -> Result<(Model<f32>, CheckpointMeta), BoxError> {
    let (model, meta) = Model::load(path)?;
    if model.spec().seq_len != config.encoder.max_len {
        log::info!("using the checkpoint's sequence length {} (config has {})", model.spec().seq_len, config.encoder.max_len);
    }
    Ok((model, meta))
}

fn dispatch(cmd: &Command, config: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), BoxError> {
    let digest = config.digest();
    match cmd {
        Command::Ingest(a) => {
            let mut store = CorpusStore::open_or_new(&config.paths.store)?;
            let tag = if a.source_tag.is_empty() {
                a.path.file_stem().map_or("source".into(), |s| s.to_string_lossy().into_owned())
            } else {
                a.source_tag.clone()
            };
            let stats = store.ingest(&a.path, a.format, &tag, a.label, &config.csv)?;
            ensure_parent(&config.paths.store)?;
            store.save(&config.paths.store)?;
            writeln!(stderr, "ingested {} emails ({} skipped); store holds {}", stats.count, stats.skipped, store.len())?;
        }
        Command::Dedupe => {
            let mut store = CorpusStore::load(&config.paths.store)?;
            let removed = store.deduplicate();
            store.save(&config.paths.store)?;
            writeln!(stderr, "removed {removed} duplicates; {} remain", store.len())?;
        }
        Command::Split(_) => {
            let store = CorpusStore::load(&config.paths.store)?;
            let split = CorpusSplit::new(&store, SplitRatios(config.split.ratios), config.split.seed)?;
            ensure_parent(&config.paths.split)?;
            split.manifest().save(&config.paths.split)?;
            writeln!(
                stderr,
                "split with seed {}: {} / {} / {}",
                config.split.seed,
                split.train.len(),
                split.validation.len(),
                split.test.len()
            )?;
        }
        Command::Train(_) | Command::TrainAdv(_) => {
            let adversarial = matches!(cmd, Command::TrainAdv(_));
            let (_, split) = load_split(config)?;
            let kind = config.model.kind;
            let spec = NetworkSpec::preset(kind, config.encoder.max_len);
            let model = Model::build(&spec, config.model.seed)?;
            let stem = if adversarial { format!("{kind}-adv") } else { kind.to_string() };
            fs::create_dir_all(&config.paths.checkpoints)?;
            let sink = CheckpointSink { dir: config.paths.checkpoints.clone(), stem: stem.clone(), config_digest: digest.clone() };
            writeln!(stderr, "training {kind} with seed {} on {} emails", config.train.seed, split.train.len())?;
            let outcome = if adversarial {
                let mut train_cfg = config.train.clone();
                train_cfg.adversarial.enabled = true;
                if train_cfg.adversarial.mode == AttackMode::Guided {
                    return Err("guided adversarial training needs an oracle; use `scenarios` or random mode".into());
                }
                train_adversarial(model, &split, &train_cfg, &config.encoder, None, Some(&sink))?
            } else {
                train(model, &split, &config.train, &config.encoder, Some(&sink))?
            };
            fs::create_dir_all(&config.paths.reports)?;
            let csv = config.paths.reports.join(format!("{stem}-epochs.csv"));
            write_epoch_csv(&csv, &outcome.log)?;
            writeln!(
                stderr,
                "wrote {} and {} (best epoch {}); log {}",
                sink.final_path().display(),
                sink.best_path().display(),
                outcome.best_epoch,
                csv.display()
            )?;
        }
        Command::Attack(a) => {
            let (_, split) = load_split(config)?;
            let loaded = a.model.as_deref().map(|p| load_model(p, config)).transpose()?;
            let oracle = loaded.as_ref().map(|(m, _)| ModelOracle::new(m, Alphabet::default())).transpose()?;
            let campaign = config.attack.campaign();
            let include_subject = config.encoder.include_subject;
            let prefix = move |e: &RawEmail| if include_subject { format!("{}\n", e.subject) } else { String::new() };
            let results = perturb_corpus(oracle.as_ref().map(|o| o as &dyn Oracle), pick(&split, a.set), &campaign, prefix)?;
            let out = a.out.clone().unwrap_or_else(|| config.paths.reports.join("campaign.jsonl"));
            ensure_parent(&out)?;
            write_campaign(&out, &results, &campaign, &digest)?;
            let flipped = results.iter().filter(|r| r.example.flipped).count();
            writeln!(stderr, "perturbed {} emails ({flipped} flipped) with seed {}; wrote {}", results.len(), campaign.seed, out.display())?;
        }
        Command::Explain(a) => {
            let (model, meta) = load_model(&a.model, config)?;
            let alphabet = Alphabet::from_symbols(&meta.alphabet)?;
            let text = read_input(&a.input)?;
            let ex = explain(&model, &alphabet, &text, a.target)?;
            ensure_parent(&a.out)?;
            render_html(&ex, &format!("config {digest}; checkpoint config {}", meta.config_digest), &a.out)?;
            writeln!(stderr, "{} (p_phish {:.4}); wrote {}", ex.predicted, ex.probs[1], a.out.display())?;
        }
        Command::Eval(a) => {
            let (_, split) = load_split(config)?;
            let (model, _) = load_model(&a.model, config)?;
            let encoder = crate::encoder::EncoderConfig { max_len: model.spec().seq_len, ..config.encoder.clone() };
            let set = pick(&split, a.set);
            let set = if a.scenario == Scenario::CleanClean {
                set.to_vec()
            } else {
                let oracle = ModelOracle::new(&model, Alphabet::default())?;
                let guided = config.attack.mode == AttackMode::Guided;
                adversarial_test_set(set, &config.attack.campaign(), &encoder, guided.then_some(&oracle as &dyn Oracle))?
            };
            let report = evaluate(&model, &set, &encoder, a.scenario, config.model.checkpoint, &digest)?;
            let out = a.out.clone().unwrap_or_else(|| config.paths.reports.join(format!("{}-eval.json", model.kind())));
            write_artifact(&out, config, &report)?;
            writeln!(stdout, "{}", serde_json::to_string(&report)?)?;
        }
        Command::Scenarios(a) => {
            let (_, split) = load_split(config)?;
            let kinds = if a.models.is_empty() { ModelKind::ALL.to_vec() } else { a.models.clone() };
            let specs: Vec<NetworkSpec> = kinds.iter().map(|&k| NetworkSpec::preset(k, config.encoder.max_len)).collect();
            let mut train_cfg = config.train.clone();
            train_cfg.adversarial.enabled = true;
            let sc = ScenarioConfig {
                train: train_cfg,
                encoder: config.encoder.clone(),
                test_attack: config.attack.campaign(),
                model_seed: config.model.seed,
                checkpoint: config.model.checkpoint,
            };
            fs::create_dir_all(&config.paths.checkpoints)?;
            let report = run_scenarios(&specs, &split, &sc, &digest, Some(&config.paths.checkpoints))?;
            let out = a.out.clone().unwrap_or_else(|| config.paths.reports.join("scenarios.json"));
            write_artifact(&out, config, &report)?;
            let table = report.to_table();
            fs::write(out.with_extension("txt"), format!("{table}config {digest}\n"))?;
            write!(stdout, "{table}")?;
        }
        Command::Score(a) => {
            let (model, meta) = load_model(&a.model, config)?;
            let alphabet = Alphabet::from_symbols(&meta.alphabet)?;
            let text = read_input(&a.input)?;
            if text.is_empty() {
                writeln!(stderr, "warning: empty input; scoring an all-padding sequence")?;
            }
            let prep = model.prepare()?;
            let start = Instant::now();
            let email = EncodedEmail::new("input", &text, Label::Clean, &alphabet, model.spec().seq_len);
            let p = model.predict_one(&prep, &email)?;
            let seconds = start.elapsed().as_secs_f64();
            let label = if p[1] > p[0] { Label::Phishing } else { Label::Clean };
            let payload = serde_json::json!({
                "label": label.name(),
                "p_clean": p[0] as f64,
                "p_phish": p[1] as f64,
                "seconds": seconds,
            });
            writeln!(stdout, "{payload}")?;
        }
        Command::LlmEval(a) => {
            let (_, split) = load_split(config)?;
            let mut emails = pick(&split, a.set).to_vec();
            if config.llm.max_emails > 0 {
                emails.truncate(config.llm.max_emails);
            }
            if a.adversarial {
                emails = adversarial_test_set(&emails, &config.attack.campaign(), &config.encoder, None)?;
            }
            let report = run_campaign(&config.llm, &emails)?;
            let out = a.out.clone().unwrap_or_else(|| config.paths.reports.join("llm.json"));
            let comparison = match &a.model {
                Some(p) => {
                    let (model, _) = load_model(p, config)?;
                    let encoder = crate::encoder::EncoderConfig { max_len: model.spec().seq_len, ..config.encoder.clone() };
                    let scenario = if a.adversarial { Scenario::CleanAdv } else { Scenario::CleanClean };
                    let local = evaluate(&model, &emails, &encoder, scenario, config.model.checkpoint, &digest)?;
                    let c = compare(&local, &report)?;
                    write!(stdout, "{}", c.to_table(model.kind().name(), &config.llm.model))?;
                    Some(c)
                }
                None => None,
            };
            write_artifact(&out, config, serde_json::json!({ "llm": report, "comparison": comparison }))?;
            writeln!(stderr, "{} emails, {} abstentions; wrote {}", report.records.len(), report.abstentions, out.display())?;
        }
        Command::Synth(a) => {
            let store = CorpusStore::from_emails(generate_emails(&SyntheticSpec::with_samples(a.n, a.seq_len, a.seed))?);
            ensure_parent(&a.out)?;
            store.save(&a.out)?;
            writeln!(stderr, "wrote {} synthetic emails with seed {} to {}", store.len(), a.seed, a.out.display())?;
        }
    }
    Ok(())
}
