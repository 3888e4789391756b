//! Browser bindings. Every entry point returns a JSON string.

use latemine::embed::{embed_side_info, reject_description_record, ToyEmbedder};
use latemine::eval::{make_episode, rejection_pass, retention_pass, HeadPredictor};
use latemine::learn::{build_bank, loss_rej, Model, TrainHyper};
use latemine::repr::{candidate_rep, prototype_rep, reject_description_proto, CandidateFeatures, ParamSet};
use latemine::score::{score_vector, ScoreVector};
use latemine::store::RecordSource;
use latemine::synth::{synth_separable, SynthSpec};
use latemine::types::parse_catalog;
use latemine::{EngineConfig, MentionStrategy, ModelFamily, Rejection, TokenSpan, Utterance};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_DIM: usize = 256;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(err)
}

#[derive(Serialize)]
struct LossView {
    pos_vs_neg: f64,
    pos_vs_rej: f64,
    rej_vs_neg: f64,
    total: f64,
    prediction: String,
}

/// Loss terms for type scores `types` (gold at index `gold`) and reject
/// scores `rejects`.
#[wasm_bindgen]
pub fn loss_terms(types: Vec<f64>, rejects: Vec<f64>, gold: usize) -> Result<String, String> {
    if gold >= types.len() {
        return Err(format!("gold index {gold} out of range for {} types", types.len()));
    }
    let named = types.iter().enumerate().map(|(i, &w)| (format!("t{i}"), w)).collect();
    let w = ScoreVector::new(named, rejects).map_err(err)?;
    let terms = loss_rej(&w, &format!("t{gold}")).map_err(err)?;
    to_json(&LossView {
        pos_vs_neg: terms.pos_vs_neg,
        pos_vs_rej: terms.pos_vs_rej,
        rej_vs_neg: terms.rej_vs_neg,
        total: terms.total(),
        prediction: w.argmax().0.to_string(),
    })
}

#[derive(Serialize, Debug)]
struct SweepPoint {
    u_thr: f64,
    macro_f1: f64,
    rejection_accuracy: f64,
}

#[derive(Serialize, Debug)]
struct Sweep {
    t_eval: Vec<String>,
    eval_instances: usize,
    threshold: Vec<SweepPoint>,
    description: SweepPoint,
}

fn episode_point(
    data: &latemine::synth::SynthData,
    episode: &latemine::eval::Episode,
    features: &[CandidateFeatures],
    rejection: Rejection,
    u_thr: f64,
) -> Result<SweepPoint, String> {
    let config =
        EngineConfig::new(ModelFamily::AlignreMean, MentionStrategy::MeanPool, rejection, 1, data.store.dim(), 0)
            .map_err(err)?;
    let side = latemine::embed::SideInfoEmbeddings::from_source(data.catalog.ids(), &data.store).map_err(err)?;
    let reject = latemine::learn::train::reject_description_vec(&config, &data.store).map_err(err)?;
    let bank = build_bank(&side, data.catalog.ids(), &config, reject.as_deref()).map_err(err)?;
    let mut params = ParamSet::init(&config);
    if rejection == Rejection::Threshold {
        params.u_thr = Some(u_thr);
    }
    let model = Model { config, hyper: TrainHyper::default(), params };
    let predictor = HeadPredictor { model: &model, features, bank: &bank };
    Ok(SweepPoint {
        u_thr,
        macro_f1: retention_pass(&predictor, episode, &data.corpus).map_err(err)?.macro_f1,
        rejection_accuracy: rejection_pass(&predictor, episode, &data.corpus).map_err(err)?,
    })
}

/// Samples separable synthetic data and one episode, then sweeps the
/// threshold of an untrained mean-pooled head from 0 to 1 in `steps`
/// increments, next to description rejection on the same episode.
#[wasm_bindgen]
pub fn threshold_sweep(
    n_types: usize,
    n_per_type: usize,
    dim: usize,
    sigma: f64,
    unseen: usize,
    steps: usize,
    seed: u32,
) -> Result<String, String> {
    let seed = u64::from(seed);
    if dim > MAX_DIM || n_types * n_per_type > 5000 || !(1..=200).contains(&steps) {
        return Err(format!("demo limits: dim <= {MAX_DIM}, at most 5000 instances, 1 to 200 steps"));
    }
    let data = synth_separable(SynthSpec::new(n_types, n_per_type, dim, seed).with_sigma(sigma)).map_err(err)?;
    let episode = make_episode(&data.catalog, &data.corpus, unseen, seed).map_err(err)?;
    let features: Vec<CandidateFeatures> = data
        .corpus
        .instances
        .iter()
        .map(|inst| {
            let rec = data.store.record(&inst.utterance_id).map_err(err)?;
            CandidateFeatures::extract(&rec, inst.head, inst.tail).map_err(err)
        })
        .collect::<Result<_, String>>()?;
    let threshold = (0..=steps)
        .map(|k| episode_point(&data, &episode, &features, Rejection::Threshold, k as f64 / steps as f64))
        .collect::<Result<_, _>>()?;
    let description = episode_point(&data, &episode, &features, Rejection::Description, f64::NAN)?;
    to_json(&Sweep {
        t_eval: episode.t_eval.iter().cloned().collect(),
        eval_instances: episode.eval.len(),
        threshold,
        description: SweepPoint { u_thr: 0.0, ..description },
    })
}

#[derive(Serialize)]
struct StrategyScores {
    strategy: &'static str,
    prediction: String,
    scores: Vec<(String, f64)>,
}

fn parse_span(s: &str, n: usize) -> Result<TokenSpan, String> {
    let (a, b) = s.split_once(['-', ':']).unwrap_or((s, s));
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad span {s:?}, expected start-end"));
    let span = TokenSpan::new(parse(a)?, parse(b)?);
    span.check(n).map_err(err)?;
    Ok(span)
}

/// Toy-embeds `sentence` (whitespace tokens) and the relation types in
/// `catalog_json`, then scores the candidate under each pooling strategy
/// with description rejection.
#[wasm_bindgen]
pub fn score_sentence(
    sentence: &str,
    head: &str,
    tail: &str,
    catalog_json: &str,
    dim: usize,
    seed: u32,
) -> Result<String, String> {
    let seed = u64::from(seed);
    if dim == 0 || dim > MAX_DIM {
        return Err(format!("dimension must be between 1 and {MAX_DIM}"));
    }
    let tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err("empty sentence".into());
    }
    let (head, tail) = (parse_span(head, tokens.len())?, parse_span(tail, tokens.len())?);
    let catalog = parse_catalog(catalog_json).map_err(err)?;
    if catalog.is_empty() {
        return Err("no relation types".into());
    }
    let embedder = ToyEmbedder::new(dim, seed).map_err(err)?;
    let rec = embedder.embed(&Utterance::new("query", tokens));
    let side = embed_side_info(&catalog, &embedder, dim).map_err(err)?;
    let reject = reject_description_proto(&reject_description_record(&embedder).sentence_vec);
    let family = ModelFamily::AlignreMean;
    let protos: Vec<_> = catalog
        .ids()
        .map(|id| Ok((id.to_string(), prototype_rep(id, &side, family)?)))
        .collect::<latemine::Result<_>>()
        .map_err(err)?;
    let out = [MentionStrategy::First, MentionStrategy::MeanPool, MentionStrategy::MaxPool]
        .into_iter()
        .map(|strategy| {
            let config = EngineConfig::new(family, strategy, Rejection::Description, 1, dim, seed).map_err(err)?;
            let params = ParamSet::init(&config);
            let cand = candidate_rep(&rec, head, tail, family, strategy, &params).map_err(err)?;
            let w = score_vector(&cand, &protos, &params, Rejection::Description, Some(&reject)).map_err(err)?;
            Ok(StrategyScores {
                strategy: strategy.name(),
                prediction: w.argmax().0.to_string(),
                scores: w.entries().iter().map(|(id, s)| (id.to_string(), *s)).collect(),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    to_json(&out)
}
