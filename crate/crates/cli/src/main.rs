//! `ragtts`: corpus generation, training, indexing, retrieval, evaluation and
//! the two ablation sweeps, each writing into one output directory.

mod config;
mod output;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ragtts::caclap::{load_checkpoint, to_bytes, train, CaClap, CaClapConfig};
use ragtts::corpus::{generate_corpus, ContextMode, Corpus, CorpusConfig};
use ragtts::experiment::{ablate_context, ablate_prompt_count};
use ragtts::index::{EmbeddingIndex, PoolIndexes, PoolScope, GLOBAL_POOL};
use ragtts::metrics::retrieval_eval;
use ragtts::pipeline::{IdentitySynthesizer, Pipeline, RagSettings, Strategy, StubSynthesizer, Synthesizer};
use ragtts::report;
use ragtts::{Error, ErrorClass};
use serde::Serialize;
use serde_json::json;

use crate::output::RunOutput;

const DEFAULT_MODEL_SEED: u64 = 7;
const DEFAULT_SAMPLING_SEED: u64 = 0;
const INDEX_EXTENSION: &str = "caei";

#[derive(Parser)]
#[command(
    name = "ragtts",
    version,
    about = "Context-aware speech prompt retrieval experiments"
)]
#[command(args_override_self = true)]
struct Cli {
    /// Master seed; each subcommand documents what it seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic audiobook corpus (seed: corpus).
    CorpusGen(CorpusGenArgs),
    /// Train a model on the pool split (seed: init and batching).
    Train(TrainArgs),
    /// Embed the pool audio and persist one index per book.
    IndexBuild(IndexBuildArgs),
    /// Rank pool prompts for one test utterance (seed: random strategy).
    Retrieve(RetrieveArgs),
    /// Text-to-audio retrieval metrics on the test split.
    EvalRetrieval(EvalRetrievalArgs),
    /// End-to-end prompt selection, synthesis and scoring (seed: random strategy).
    EvalTts(EvalTtsArgs),
    /// Retrieval quality against context length, one model per row (seed: training).
    AblateContext(AblateContextArgs),
    /// Speech quality against the number of prompts (seed: random strategy).
    AblatePromptCount(AblatePromptCountArgs),
}

const SUBCOMMANDS: [&str; 8] = [
    "corpus-gen",
    "train",
    "index-build",
    "retrieve",
    "eval-retrieval",
    "eval-tts",
    "ablate-context",
    "ablate-prompt-count",
];

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Scope {
    SameBook,
    Global,
}

impl From<Scope> for PoolScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::SameBook => PoolScope::SameBook,
            Scope::Global => PoolScope::Global,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Synth {
    /// Deterministic prompt-conditioned generator.
    Stub,
    /// Returns the prompt unchanged.
    Identity,
}

impl Synth {
    fn build(self) -> Box<dyn Synthesizer> {
        match self {
            Synth::Stub => Box::new(StubSynthesizer),
            Synth::Identity => Box::new(IdentitySynthesizer),
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct CorpusGenArgs {
    #[arg(long, default_value_t = 32)]
    books: usize,
    #[arg(long, default_value_t = 64)]
    utterances: usize,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    styles: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    max_tokens: usize,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Last utterances of each book held out for testing.
    #[arg(long, default_value_t = 8)]
    test_per_book: usize,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct Hyper {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    proj_dim: usize,
    #[arg(long, default_value_t = 32)]
    audio_hidden: usize,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Draw each batch from a single book.
    #[arg(long)]
    same_book_batches: bool,
}

impl Hyper {
    fn model_config(&self, corpus: &Corpus, context_len: usize, seed: u64) -> CaClapConfig {
        let m = corpus.manifest();
        CaClapConfig {
            vocab_size: m.vocab_size,
            channels: m.channels,
            dim: self.dim,
            audio_hidden: self.audio_hidden,
            proj_dim: self.proj_dim,
            tau_init: self.tau,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            context_len,
            same_book_batches: self.same_book_batches,
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 5)]
    context_len: usize,
    /// Replace true neighbours with random same-book utterances.
    #[arg(long)]
    shuffled: bool,
    #[command(flatten)]
    #[serde(flatten)]
    hyper: Hyper,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct IndexBuildArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "same-book")]
    scope: Scope,
}

/// Selection flags shared by `retrieve` and `eval-tts`.
#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SelectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory written by `index-build`; built on the fly when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "same-book")]
    scope: Scope,
    #[arg(long, default_value = "caclap")]
    strategy: Strategy,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Defaults to the model's training context length.
    #[arg(long)]
    context_len: Option<usize>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct RetrieveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    #[serde(flatten)]
    select: SelectArgs,
    /// Test utterance to retrieve prompts for, e.g. `book003/0060`.
    #[arg(long)]
    key: String,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct EvalRetrievalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long, value_enum, default_value = "same-book")]
    scope: Scope,
    /// Query with shuffled context (for models trained that way).
    #[arg(long)]
    shuffled: bool,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct EvalTtsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    #[serde(flatten)]
    select: SelectArgs,
    #[arg(long, value_enum, default_value = "stub")]
    synth: Synth,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct AblateContextArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,7,10")]
    l_values: Vec<usize>,
    /// Context length of the shuffled-context control row.
    #[arg(long, default_value_t = 5)]
    control_len: usize,
    #[arg(long)]
    no_control: bool,
    #[arg(long, value_enum, default_value = "same-book")]
    scope: Scope,
    #[command(flatten)]
    #[serde(flatten)]
    hyper: Hyper,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct AblatePromptCountArgs {
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    p_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "random,text,caclap")]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long, value_enum, default_value = "same-book")]
    scope: Scope,
    #[arg(long, value_enum, default_value = "stub")]
    synth: Synth,
}

fn main() -> ExitCode {
    match run(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = classify(&e);
            let line = json!({ "error": class, "code": code, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}

/// Exit code and label: 1 usage, 2 data, 3 model.
fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err.class() {
                ErrorClass::Usage => ("usage", 1),
                ErrorClass::Data => ("data", 2),
                ErrorClass::Model => ("model", 3),
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return ("data", 2);
        }
    }
    ("usage", 1)
}

fn run(args: Vec<String>) -> Result<()> {
    let merged = config::merge(args, &SUBCOMMANDS)?;
    let cli = match Cli::try_parse_from(std::iter::once("ragtts".to_string()).chain(merged)) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(Error::Argument(first.trim_start_matches("error: ").to_string()).into());
        }
    };

    let seed = cli.seed.unwrap_or(match cli.command {
        Command::CorpusGen(_) => CorpusConfig::default().seed,
        Command::Train(_) | Command::EvalRetrieval(_) | Command::AblateContext(_) => DEFAULT_MODEL_SEED,
        _ => DEFAULT_SAMPLING_SEED,
    });
    let globals = [("seed", seed.to_string()), ("out", cli.out.display().to_string())];
    let mut out = RunOutput::create(&cli.out)?;
    let echo = match cli.command {
        Command::CorpusGen(a) => {
            corpus_gen(&a, seed, &mut out)?;
            config::echo("corpus-gen", &globals, &a)?
        }
        Command::Train(a) => {
            cmd_train(&a, seed, &mut out)?;
            config::echo("train", &globals, &a)?
        }
        Command::IndexBuild(a) => {
            index_build(&a, &mut out)?;
            config::echo("index-build", &globals, &a)?
        }
        Command::Retrieve(mut a) => {
            retrieve(&mut a, seed, &mut out)?;
            config::echo("retrieve", &globals, &a)?
        }
        Command::EvalRetrieval(mut a) => {
            eval_retrieval(&mut a, seed, &mut out)?;
            config::echo("eval-retrieval", &globals, &a)?
        }
        Command::EvalTts(mut a) => {
            eval_tts(&mut a, seed, &mut out)?;
            config::echo("eval-tts", &globals, &a)?
        }
        Command::AblateContext(a) => {
            cmd_ablate_context(&a, seed, &mut out)?;
            config::echo("ablate-context", &globals, &a)?
        }
        Command::AblatePromptCount(mut a) => {
            cmd_ablate_prompt_count(&mut a, seed, &mut out)?;
            config::echo("ablate-prompt-count", &globals, &a)?
        }
    };
    out.finish(&echo)
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_model(path: &Path) -> Result<CaClap> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Reads every `*.caei` file in `dir`; a lone `all` index means a global pool.
fn load_indexes(dir: &Path) -> Result<PoolIndexes> {
    let mut indexes = BTreeMap::new();
    let listing = fs::read_dir(dir).with_context(|| format!("reading index directory {}", dir.display()))?;
    for entry in listing {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(INDEX_EXTENSION) {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("index file name {}", path.display())))?
            .to_string();
        let index = EmbeddingIndex::load(&path).with_context(|| format!("loading index {}", path.display()))?;
        indexes.insert(name, index);
    }
    if indexes.is_empty() {
        return Err(Error::NotFound(format!("no .{INDEX_EXTENSION} files in {}", dir.display())).into());
    }
    let scope = if indexes.len() == 1 && indexes.contains_key(GLOBAL_POOL) {
        PoolScope::Global
    } else {
        PoolScope::SameBook
    };
    Ok(PoolIndexes::from_parts(scope, indexes))
}

fn check_dims(model: &CaClap, indexes: &PoolIndexes) -> Result<()> {
    let want = model.config().proj_dim;
    for (name, index) in indexes.iter() {
        if index.dim() != want {
            return Err(Error::Shape(format!(
                "index {name} has width {}, model embeds into {want}",
                index.dim()
            ))
            .into());
        }
    }
    Ok(())
}

fn corpus_gen(a: &CorpusGenArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let config = CorpusConfig {
        books: a.books,
        utterances_per_book: a.utterances,
        vocab_size: a.vocab,
        styles: a.styles,
        channels: a.channels,
        max_tokens: a.max_tokens,
        seed,
    };
    let corpus = generate_corpus(&config)?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf)?;
    out.write("corpus.jsonl", &buf)?;
    println!(
        "{} utterances in {} books -> {}",
        corpus.len(),
        a.books,
        out.path("corpus.jsonl").display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let split = corpus.split(a.split.test_per_book)?;
    let config = a.hyper.model_config(&corpus, a.context_len, seed);
    let mode = if a.shuffled {
        ContextMode::Shuffled { seed }
    } else {
        ContextMode::Neighbours
    };
    let (model, log) = train(&corpus, &split.pool, &config, mode)?;
    out.write("model.cack", &to_bytes(&model)?)?;
    let lines: Vec<_> = log
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(i, loss)| json!({ "epoch": i + 1, "loss": loss }))
        .collect();
    out.write("train_log.jsonl", report::to_jsonl(&lines)?.as_bytes())?;
    println!(
        "{} steps, final loss {:.4}, tau {:.4}",
        log.steps,
        log.epoch_losses.last().copied().unwrap_or(f64::NAN),
        model.tau()
    );
    Ok(())
}

fn index_build(a: &IndexBuildArgs, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let model = load_model(&a.model)?;
    let split = corpus.split(a.split.test_per_book)?;
    let indexes = PoolIndexes::build(&corpus, &split.pool, &model, a.scope.into())?;
    let mut total = 0;
    for (name, index) in indexes.iter() {
        out.write(&format!("index/{name}.{INDEX_EXTENSION}"), &index.to_bytes())?;
        total += index.len();
    }
    println!("{} indexes, {total} entries", indexes.iter().count());
    Ok(())
}

fn pool_indexes(
    dir: Option<&Path>,
    corpus: &Corpus,
    split: &ragtts::corpus::Split,
    model: &CaClap,
    scope: Scope,
) -> Result<PoolIndexes> {
    let indexes = match dir {
        Some(dir) => load_indexes(dir)?,
        None => PoolIndexes::build(corpus, &split.pool, model, scope.into())?,
    };
    check_dims(model, &indexes)?;
    Ok(indexes)
}

fn settings(s: &mut SelectArgs, model: &CaClap, seed: u64) -> RagSettings {
    let context_len = *s.context_len.get_or_insert(model.config().context_len);
    RagSettings {
        strategy: s.strategy,
        context_len,
        k: s.k,
        p: s.p,
        scope: s.scope.into(),
        seed,
    }
}

fn retrieve(a: &mut RetrieveArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let model = load_model(&a.select.model)?;
    let split = corpus.split(a.split.test_per_book)?;
    let test = corpus
        .index_of(&a.key)
        .ok_or_else(|| Error::NotFound(format!("utterance {}", a.key)))?;
    if !split.test.contains(&test) {
        return Err(Error::Argument(format!("{} belongs to the retrieval pool, not the test split", a.key)).into());
    }
    let indexes = pool_indexes(a.select.index.as_deref(), &corpus, &split, &model, a.select.scope)?;
    let settings = settings(&mut a.select, &model, seed);
    let mut pipeline = Pipeline::with_indexes(&corpus, &model, &split, indexes)?;
    let selection = pipeline.select(test, &settings)?;
    let records: Vec<_> = selection
        .ranked
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let chosen = selection.chosen.contains(&r.key);
            println!(
                "{:>3}  {}  {:+.6}{}",
                i + 1,
                r.key,
                r.score,
                if chosen { "  *" } else { "" }
            );
            json!({ "rank": i + 1, "key": r.key, "score": r.score, "chosen": chosen })
        })
        .collect();
    out.write("retrieve.jsonl", report::to_jsonl(&records)?.as_bytes())
}

fn eval_retrieval(a: &mut EvalRetrievalArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let model = load_model(&a.model)?;
    let split = corpus.split(a.split.test_per_book)?;
    let l = *a.context_len.get_or_insert(model.config().context_len);
    let mode = if a.shuffled {
        ContextMode::Shuffled { seed }
    } else {
        ContextMode::Neighbours
    };
    let (summary, items) = retrieval_eval(&model, &corpus, &split, l, mode, a.scope.into())?;
    out.write("retrieval.jsonl", report::to_jsonl(&items)?.as_bytes())?;
    out.write(
        "retrieval_report.json",
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    let table = report::retrieval_table(&summary);
    out.write("retrieval.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn eval_tts(a: &mut EvalTtsArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let model = load_model(&a.select.model)?;
    let split = corpus.split(a.split.test_per_book)?;
    let indexes = pool_indexes(a.select.index.as_deref(), &corpus, &split, &model, a.select.scope)?;
    let settings = settings(&mut a.select, &model, seed);
    let mut pipeline = Pipeline::with_indexes(&corpus, &model, &split, indexes)?;
    let (summary, items) = pipeline.evaluate(&settings, a.synth.build().as_ref())?;
    out.write("tts.jsonl", report::to_jsonl(&items)?.as_bytes())?;
    out.write("tts_report.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let table = report::tts_table(settings.strategy.as_str(), &summary);
    out.write("tts.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate_context(a: &AblateContextArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let split = corpus.split(a.split.test_per_book)?;
    let base = a.hyper.model_config(&corpus, 0, seed);
    let control = (!a.no_control).then_some(a.control_len);
    let rows = ablate_context(&corpus, &split, &base, &a.l_values, control, seed, a.scope.into())?;
    out.write("context.jsonl", report::to_jsonl(&rows)?.as_bytes())?;
    let table = report::context_table(&rows);
    out.write("context.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate_prompt_count(a: &mut AblatePromptCountArgs, seed: u64, out: &mut RunOutput) -> Result<()> {
    let corpus = load_corpus(&a.split.corpus)?;
    let model = load_model(&a.model)?;
    let split = corpus.split(a.split.test_per_book)?;
    let base = RagSettings {
        strategy: Strategy::CaClap,
        context_len: *a.context_len.get_or_insert(model.config().context_len),
        k: a.k,
        p: 1,
        scope: a.scope.into(),
        seed,
    };
    let synth = a.synth.build();
    let rows = ablate_prompt_count(
        &corpus,
        &split,
        &model,
        &base,
        &a.p_values,
        &a.strategies,
        synth.as_ref(),
    )?;
    out.write("prompt_count.jsonl", report::to_jsonl(&rows)?.as_bytes())?;
    let table = report::prompt_count_table(&rows);
    out.write("prompt_count.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}
