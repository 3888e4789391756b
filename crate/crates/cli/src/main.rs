//! `latemine`: encode corpora into an embedding store, train the
//! late-interaction head, run the two-pass evaluation protocol, and mine a
//! corpus for on-the-fly relation types.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latemine::embed::{embed_side_info, encode_store, toy_embedder_of, Encoder, SideInfoEmbeddings};
use latemine::eval::{run_protocol, Pass, ProtocolData};
use latemine::learn::train::{build_bank, reject_description_vec};
use latemine::learn::{read_model, train, write_model, AdamWConfig, Model, TrainHyper};
use latemine::repr::{candidate_rep, PrototypeRep};
use latemine::score::{score_vector, EntryId};
use latemine::store::Store;
use latemine::types::{parse_catalog, DEFAULT_REJECT_COUNT};
use latemine::{
    load_catalog, load_corpus, Corpus, EngineConfig, Error, MentionStrategy, ModelFamily, Rejection, TokenSpan,
    TypeCatalog,
};
use rayon::prelude::*;
use serde::Serialize;

const EXIT_USAGE: u8 = 2;
const EXIT_INCOMPATIBLE: u8 = 3;
const MINE_CHUNK: usize = 4096;

#[derive(Parser)]
#[command(name = "latemine", version, about = "Zero-shot relation extraction over offline token embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a corpus and its relation catalog into a binary store.
    Encode(EncodeArgs),
    /// Train the late-interaction head on every annotated instance.
    Train(TrainArgs),
    /// Run the retention/rejection protocol over sampled episodes.
    Eval(EvalArgs),
    /// Score every candidate of a corpus against query relation types.
    Mine(MineArgs),
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EmbedderKind {
    Toy,
    Import,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    embedder: EmbedderKind,
    /// Required for the toy embedder; checked against imported vectors.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, value_parser = parse_named::<ModelFamily>)]
    model: ModelFamily,
    #[arg(long, value_parser = parse_named::<MentionStrategy>)]
    strategy: MentionStrategy,
    #[arg(long, value_parser = parse_named::<Rejection>, default_value = "none")]
    rejection: Rejection,
    /// Number of reject prototypes; only valid with `--rejection prototypes`.
    #[arg(long)]
    reject_count: Option<usize>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    unseen: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_named::<Pass>, default_value = "retention,rejection")]
    passes: Vec<Pass>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// JSON array of relation types in catalog format.
    #[arg(long)]
    types: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Plain argmax over the query types.
    #[arg(long)]
    no_reject: bool,
}

fn parse_named<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn incompatible(message: impl Into<String>) -> Self {
        Self { code: EXIT_INCOMPATIBLE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DimensionMismatch { .. } | Error::NotFound(_) | Error::SideInfo(_) => EXIT_INCOMPATIBLE,
            Error::Io(_) | Error::NonFinite(_) => 1,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn with_path<T>(path: &Path, r: latemine::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("LATEMINE_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("LATEMINE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure { code: 1, message: e.to_string() })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mine(a) => cmd_mine(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("latemine: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Exported vectors live next to the corpus, sharing its file stem.
fn import_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("lmstore")
}

fn cmd_encode(a: EncodeArgs) -> CliResult {
    if a.dim == Some(0) {
        return Err(Failure::usage("--dim must be positive"));
    }
    let corpus = with_path(&a.corpus, load_corpus(&a.corpus))?;
    let catalog = with_path(&a.catalog, load_catalog(&a.catalog))?;
    with_path(&a.corpus, corpus.check_gold_types(&catalog))?;
    match a.embedder {
        EmbedderKind::Toy => {
            let dim = a.dim.ok_or_else(|| Failure::usage("--dim is required with --embedder toy"))?;
            let e = latemine::embed::ToyEmbedder::new(dim, a.seed)?;
            let out = BufWriter::new(File::create(&a.out)?);
            encode_store(&corpus, &catalog, &Encoder::Toy(e), dim, out)?;
        }
        EmbedderKind::Import => {
            let src_path = import_path(&a.corpus);
            if !src_path.exists() {
                return Err(Failure::usage(format!("no exported vectors at {}", src_path.display())));
            }
            let src = with_path(&src_path, Store::open(&src_path))?;
            let dim = a.dim.unwrap_or(src.dim());
            if dim != src.dim() {
                return Err(Failure::incompatible(format!(
                    "--dim {dim} does not match the exported vectors (dimension {})",
                    src.dim()
                )));
            }
            let out = BufWriter::new(File::create(&a.out)?);
            encode_store(&corpus, &catalog, &Encoder::Import(&src), dim, out)?;
        }
    }
    eprintln!("encoded {} utterances to {}", corpus.utterances.len(), a.out.display());
    Ok(())
}

/// The annotated part of a corpus.
fn annotated(corpus: &Corpus) -> CliResult<Corpus> {
    let instances = corpus.instances.iter().filter(|i| i.gold_type.is_some()).cloned().collect();
    Ok(Corpus::new(corpus.utterances.clone(), instances)?)
}

#[derive(Serialize)]
struct Trace<'a> {
    config: &'a EngineConfig,
    hyper: &'a TrainHyper,
    train_types: &'a BTreeSet<String>,
    instances: usize,
    epoch_losses: &'a [f64],
}

fn trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace.json");
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    if a.reject_count.is_some() && a.rejection != Rejection::Prototypes {
        return Err(Failure::usage(format!(
            "--reject-count only applies to --rejection prototypes, not `{}`",
            a.rejection
        )));
    }
    if a.batch == 0 {
        return Err(Failure::usage("--batch must be positive"));
    }
    if !(a.lr.is_finite() && a.lr >= 0.0) {
        return Err(Failure::usage("--lr must be a non-negative number"));
    }
    let store = with_path(&a.store, Store::open(&a.store))?;
    let corpus = annotated(&with_path(&a.corpus, load_corpus(&a.corpus))?)?;
    let catalog = with_path(&a.catalog, load_catalog(&a.catalog))?;
    with_path(&a.corpus, corpus.check_gold_types(&catalog))?;
    let config = EngineConfig::new(
        a.model,
        a.strategy,
        a.rejection,
        a.reject_count.unwrap_or(DEFAULT_REJECT_COUNT),
        store.dim(),
        a.seed,
    )?;
    let hyper = TrainHyper {
        optim: AdamWConfig { lr: a.lr, ..AdamWConfig::default() },
        epochs: a.epochs,
        batch_size: a.batch,
    };
    let t_train: BTreeSet<String> = corpus.instances.iter().filter_map(|i| i.gold_type.clone()).collect();
    let out = train(&corpus, &store, &catalog, &t_train, &config, &hyper)?;
    let model = Model { config: config.clone(), hyper, params: out.params };
    write_model(&model, &a.out)?;
    let trace = Trace {
        config: &config,
        hyper: &hyper,
        train_types: &t_train,
        instances: corpus.instances.len(),
        epoch_losses: &out.epoch_losses,
    };
    let mut f = BufWriter::new(File::create(trace_path(&a.out))?);
    serde_json::to_writer_pretty(&mut f, &trace)?;
    f.write_all(b"\n")?;
    f.flush()?;
    eprintln!("{} epochs, final loss {:.6}", out.epoch_losses.len(), out.epoch_losses.last().copied().unwrap_or(0.0));
    Ok(())
}

fn load_model_for(model_path: &Path, store_dim: usize) -> CliResult<Model> {
    let model = with_path(model_path, read_model(model_path))?;
    if model.config.dim != store_dim {
        return Err(Failure::incompatible(format!(
            "model dimension {} does not match store dimension {}",
            model.config.dim, store_dim
        )));
    }
    Ok(model)
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let store = with_path(&a.store, Store::open(&a.store))?;
    let model = load_model_for(&a.model, store.dim())?;
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be positive"));
    }
    if a.passes.contains(&Pass::Rejection) && model.config.rejection == Rejection::None {
        return Err(Failure::usage("the rejection pass needs a model trained with a rejection mechanism"));
    }
    let corpus = with_path(&a.corpus, load_corpus(&a.corpus))?;
    let catalog = with_path(&a.catalog, load_catalog(&a.catalog))?;
    let corpus = annotated(&corpus)?;
    let data = ProtocolData::load(&corpus, &store, &catalog, &model.config)?;
    let report = run_protocol(&data, &model.config, &model.hyper, &a.unseen, a.seeds, &a.passes)?;
    let mut f = BufWriter::new(File::create(&a.out)?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.write_all(b"\n")?;
    f.flush()?;
    print!("{}", report.table());
    Ok(())
}

#[derive(Serialize)]
struct MineResult<'a> {
    instance: usize,
    utterance_id: &'a str,
    head: TokenSpan,
    tail: TokenSpan,
    /// A query type id, or `REJECTED`.
    prediction: String,
    score: f64,
    scores: serde_json::Map<String, serde_json::Value>,
}

/// Side information for query types: embedded on the fly with the store's
/// toy embedder, or looked up among imported vectors.
fn query_side_info<B: AsRef<[u8]> + Sync>(store: &Store<B>, query: &TypeCatalog) -> CliResult<SideInfoEmbeddings> {
    if let Some(e) = toy_embedder_of(store.meta(), store.dim()) {
        return Ok(embed_side_info(query, &e, store.dim())?);
    }
    let side = SideInfoEmbeddings::from_source(query.ids(), store)?;
    for id in query.ids() {
        if side.get(id).and_then(|s| s.desc_vec.as_ref()).is_none() {
            return Err(Failure::incompatible(format!(
                "store has no toy embedder marker and no imported vectors for query type `{id}`"
            )));
        }
    }
    Ok(side)
}

fn cmd_mine(a: MineArgs) -> CliResult {
    let query = with_path(&a.types, parse_catalog(&std::fs::read_to_string(&a.types)?))?;
    if query.is_empty() {
        return Err(Failure::usage(format!("{}: the query type list is empty", a.types.display())));
    }
    let store = with_path(&a.store, Store::open(&a.store))?;
    let model = load_model_for(&a.model, store.dim())?;
    let corpus = with_path(&a.corpus, load_corpus(&a.corpus))?;
    let cfg = &model.config;
    let side = query_side_info(&store, &query)?;
    let reject = reject_description_vec(cfg, &store)?;
    let bank = build_bank(&side, query.ids(), cfg, reject.as_deref())?;
    let targets: Vec<(String, PrototypeRep)> = bank.types.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mechanism = if a.no_reject { Rejection::None } else { cfg.rejection };

    let mut out = BufWriter::new(File::create(&a.out)?);
    let (mut rows, mut rejected) = (0usize, 0usize);
    let indices: Vec<usize> = (0..corpus.instances.len()).collect();
    for chunk in indices.chunks(MINE_CHUNK) {
        let lines: Vec<(bool, String)> = chunk
            .par_iter()
            .map(|&i| -> CliResult<(bool, String)> {
                let inst = &corpus.instances[i];
                let rec = store.get(&inst.utterance_id)?;
                let cand = candidate_rep(&rec, inst.head, inst.tail, cfg.model_family, cfg.mention_strategy, &model.params)?;
                let w = score_vector(&cand, &targets, &model.params, mechanism, bank.reject_desc.as_ref())?;
                let (best, score) = w.argmax();
                let is_reject = best.is_reject();
                let prediction = match best {
                    EntryId::Type(t) => t.clone(),
                    EntryId::Reject(_) => "REJECTED".to_string(),
                };
                let scores = w.entries().iter().map(|(id, v)| (id.to_string(), serde_json::json!(v))).collect();
                let row = MineResult {
                    instance: i,
                    utterance_id: &inst.utterance_id,
                    head: inst.head,
                    tail: inst.tail,
                    prediction,
                    score,
                    scores,
                };
                Ok((is_reject, serde_json::to_string(&row)?))
            })
            .collect::<CliResult<_>>()?;
        for (is_reject, line) in lines {
            rows += 1;
            rejected += is_reject as usize;
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    eprintln!("{rows} candidates, {rejected} rejected");
    Ok(())
}
