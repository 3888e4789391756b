//! Zero-shot episodes, the retention and rejection passes, and the
//! multi-seed protocol.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::SideInfoEmbeddings;
use crate::error::{Error, Result};
use crate::learn::train::{build_bank, reject_description_vec, train_examples, TrainHyper};
use crate::learn::{Example, Model, PrototypeBank};
use crate::repr::{candidate_from_features, CandidateFeatures, PrototypeRep};
use crate::rng::{derive_seed, rng_from_seed};
use crate::score::{score_vector, EntryId, ScoreVector};
use crate::store::RecordSource;
use crate::types::{Corpus, EngineConfig, Rejection, TypeCatalog};

pub const DEFAULT_UNSEEN_COUNTS: [usize; 3] = [5, 10, 15];
pub const DEFAULT_SEEDS: usize = 3;

/// A split of relation types into seen (training) and unseen (evaluation)
/// types, with instances assigned by their gold type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub t_train: BTreeSet<String>,
    pub t_eval: BTreeSet<String>,
    /// Instance indices into the corpus.
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

pub fn make_episode(catalog: &TypeCatalog, corpus: &Corpus, unseen_count: usize, seed: u64) -> Result<Episode> {
    let mut populated = BTreeSet::new();
    for (i, inst) in corpus.instances.iter().enumerate() {
        let t = inst.gold_type.as_ref().ok_or_else(|| {
            Error::Validation(format!("instance {i} (`{}`) has no gold type", inst.utterance_id))
        })?;
        if !catalog.contains(t) {
            return Err(Error::Validation(format!("gold type `{t}` of instance {i} is not in the catalog")));
        }
        populated.insert(t.clone());
    }
    if unseen_count == 0 || populated.len() <= unseen_count {
        return Err(Error::Protocol(format!(
            "cannot hold out {unseen_count} of {} populated relation types and keep a training set",
            populated.len()
        )));
    }
    let mut pool: Vec<&String> = populated.iter().collect();
    let mut rng = rng_from_seed(derive_seed(seed, "episode"));
    pool.shuffle(&mut rng);
    let t_eval: BTreeSet<String> = pool[..unseen_count].iter().map(|s| s.to_string()).collect();
    let t_train: BTreeSet<String> = populated.difference(&t_eval).cloned().collect();
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, inst) in corpus.instances.iter().enumerate() {
        if t_eval.contains(inst.gold_type.as_deref().unwrap_or_default()) {
            eval.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(Episode { t_train, t_eval, train, eval })
}

/// Per-type counts and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub type_id: String,
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Macro F1 over `types`. A `None` prediction is a rejection: it misses the
/// gold type and is counted against no type.
pub fn macro_f1(gold: &[&str], predicted: &[Option<&str>], types: &BTreeSet<String>) -> (f64, Vec<TypeMetrics>) {
    let mut support: HashMap<&str, usize> = HashMap::new();
    let mut pred: HashMap<&str, usize> = HashMap::new();
    let mut correct: HashMap<&str, usize> = HashMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        *support.entry(g).or_default() += 1;
        if let Some(p) = p {
            *pred.entry(p).or_default() += 1;
            if p == g {
                *correct.entry(g).or_default() += 1;
            }
        }
    }
    let per_type: Vec<TypeMetrics> = types
        .iter()
        .map(|t| {
            let (s, p, c) = (
                support.get(t.as_str()).copied().unwrap_or(0),
                pred.get(t.as_str()).copied().unwrap_or(0),
                correct.get(t.as_str()).copied().unwrap_or(0),
            );
            let precision = ratio(c, p);
            let recall = ratio(c, s);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            TypeMetrics { type_id: t.clone(), support: s, predicted: p, correct: c, precision, recall, f1 }
        })
        .collect();
    let macro_f1 = if per_type.is_empty() { 0.0 } else { per_type.iter().map(|m| m.f1).sum::<f64>() / per_type.len() as f64 };
    (macro_f1, per_type)
}

/// Anything that maps an instance and a targeted type set to an entry.
pub trait Predictor: Sync {
    fn predict(&self, instance: usize, targets: &[&str]) -> Result<EntryId>;
    fn has_rejection(&self) -> bool;
}

/// Predicts through a trained head over precomputed features.
pub struct HeadPredictor<'a> {
    pub model: &'a Model,
    pub features: &'a [CandidateFeatures],
    pub bank: &'a PrototypeBank,
}

impl HeadPredictor<'_> {
    pub fn scores(&self, instance: usize, targets: &[&str]) -> Result<ScoreVector> {
        let cfg = &self.model.config;
        let cand = candidate_from_features(&self.features[instance], cfg.model_family, cfg.mention_strategy, &self.model.params)?;
        let protos: Vec<(String, PrototypeRep)> =
            targets.iter().map(|t| Ok((t.to_string(), self.bank.get(t)?.clone()))).collect::<Result<_>>()?;
        score_vector(&cand, &protos, &self.model.params, cfg.rejection, self.bank.reject_desc.as_ref())
    }
}

impl Predictor for HeadPredictor<'_> {
    fn predict(&self, instance: usize, targets: &[&str]) -> Result<EntryId> {
        Ok(self.scores(instance, targets)?.argmax().0.clone())
    }

    fn has_rejection(&self) -> bool {
        self.model.config.rejection != Rejection::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionResult {
    pub macro_f1: f64,
    pub per_type: Vec<TypeMetrics>,
}

/// Every evaluation instance is scored against all unseen types (plus any
/// reject entries); choosing a reject entry counts as a miss.
pub fn retention_pass(predictor: &dyn Predictor, episode: &Episode, corpus: &Corpus) -> Result<RetentionResult> {
    let targets: Vec<&str> = episode.t_eval.iter().map(String::as_str).collect();
    let preds: Vec<EntryId> =
        episode.eval.par_iter().map(|&i| predictor.predict(i, &targets)).collect::<Result<_>>()?;
    let gold: Vec<&str> = episode.eval.iter().map(|&i| corpus.instances[i].gold_type.as_deref().unwrap_or_default()).collect();
    let predicted: Vec<Option<&str>> = preds.iter().map(EntryId::type_id).collect();
    let (macro_f1, per_type) = macro_f1(&gold, &predicted, &episode.t_eval);
    Ok(RetentionResult { macro_f1, per_type })
}

/// Every evaluation instance is scored with its gold type removed from the
/// targeted set; returns the fraction of rejected instances.
pub fn rejection_pass(predictor: &dyn Predictor, episode: &Episode, corpus: &Corpus) -> Result<f64> {
    if !predictor.has_rejection() {
        return Err(Error::Protocol("the rejection pass needs a rejection mechanism".into()));
    }
    if episode.eval.is_empty() {
        return Ok(0.0);
    }
    let rejected: Vec<bool> = episode
        .eval
        .par_iter()
        .map(|&i| {
            let gold = corpus.instances[i].gold_type.as_deref().unwrap_or_default();
            let targets: Vec<&str> = episode.t_eval.iter().map(String::as_str).filter(|t| *t != gold).collect();
            if targets.is_empty() {
                return Err(Error::Protocol("rejection pass needs at least two unseen types".into()));
            }
            Ok(predictor.predict(i, &targets)?.is_reject())
        })
        .collect::<Result<_>>()?;
    Ok(ratio(rejected.iter().filter(|&&r| r).count(), rejected.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Retention,
    Rejection,
}

impl std::str::FromStr for Pass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retention" => Ok(Self::Retention),
            "rejection" => Ok(Self::Rejection),
            other => Err(Error::Config(format!("unknown pass `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { values, mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub t_eval: Vec<String>,
    pub macro_f1_retention: Option<f64>,
    pub rejection_accuracy: Option<f64>,
    pub per_type: Vec<TypeMetrics>,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub unseen: usize,
    pub runs: Vec<RunResult>,
    pub macro_f1_retention: Option<Stat>,
    pub rejection_accuracy: Option<Stat>,
}

type StatOf = fn(&Cell) -> Option<&Stat>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub config: EngineConfig,
    pub cells: Vec<Cell>,
}

impl EvalReport {
    pub fn cell(&self, unseen: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.unseen == unseen)
    }

    /// Aligned text table: one row per metric, one column per unseen count,
    /// values in percent as `mean ± std`.
    pub fn table(&self) -> String {
        let mut cols: Vec<String> = vec!["model".into(), "metric".into()];
        cols.extend(self.cells.iter().map(|c| format!("|T_eval|={}", c.unseen)));
        let mut rows = vec![cols];
        let metrics: [(&str, StatOf); 2] = [
            ("macro F1 (retention)", |c| c.macro_f1_retention.as_ref()),
            ("rejection accuracy", |c| c.rejection_accuracy.as_ref()),
        ];
        for (name, get) in metrics {
            if self.cells.iter().all(|c| get(c).is_none()) {
                continue;
            }
            let mut row = vec![self.model.clone(), name.to_string()];
            row.extend(self.cells.iter().map(|c| match get(c) {
                Some(s) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
                None => "-".into(),
            }));
            rows.push(row);
        }
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> =
                row.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            }
        }
        out
    }
}

/// Inputs shared by every episode of a protocol run.
pub struct ProtocolData<'a> {
    pub corpus: &'a Corpus,
    pub catalog: &'a TypeCatalog,
    pub features: Vec<CandidateFeatures>,
    pub side: SideInfoEmbeddings,
    pub reject_desc: Option<Vec<f32>>,
}

impl<'a> ProtocolData<'a> {
    pub fn load(corpus: &'a Corpus, src: &dyn RecordSource, catalog: &'a TypeCatalog, config: &EngineConfig) -> Result<Self> {
        if src.dim() != config.dim {
            return Err(Error::DimensionMismatch { expected: config.dim, found: src.dim() });
        }
        corpus.check_gold_types(catalog)?;
        let features = corpus
            .instances
            .iter()
            .map(|inst| CandidateFeatures::extract(&*src.record(&inst.utterance_id)?, inst.head, inst.tail))
            .collect::<Result<_>>()?;
        let side = SideInfoEmbeddings::from_source(catalog.ids(), src)?;
        let reject_desc = reject_description_vec(config, src)?;
        Ok(Self { corpus, catalog, features, side, reject_desc })
    }
}

/// Trains on the episode's seen types and runs the requested passes.
pub fn run_episode(
    data: &ProtocolData<'_>,
    config: &EngineConfig,
    hyper: &TrainHyper,
    episode: &Episode,
    passes: &[Pass],
) -> Result<(RunResult, Model)> {
    if passes.contains(&Pass::Rejection) && config.rejection == Rejection::None {
        return Err(Error::Protocol("the rejection pass needs a rejection mechanism".into()));
    }
    let examples: Vec<Example> = episode
        .train
        .iter()
        .map(|&i| Example {
            features: data.features[i].clone(),
            gold: data.corpus.instances[i].gold_type.clone().unwrap_or_default(),
        })
        .collect();
    let ids = episode.t_train.iter().chain(&episode.t_eval).map(String::as_str);
    let bank = build_bank(&data.side, ids, config, data.reject_desc.as_deref())?;
    let out = train_examples(&examples, &bank, config, hyper)?;
    let model = Model { config: config.clone(), hyper: *hyper, params: out.params };
    let predictor = HeadPredictor { model: &model, features: &data.features, bank: &bank };
    let (mut f1, mut per_type, mut rej) = (None, Vec::new(), None);
    if passes.contains(&Pass::Retention) {
        let r = retention_pass(&predictor, episode, data.corpus)?;
        f1 = Some(r.macro_f1);
        per_type = r.per_type;
    }
    if passes.contains(&Pass::Rejection) {
        rej = Some(rejection_pass(&predictor, episode, data.corpus)?);
    }
    let run = RunResult {
        seed: config.seed,
        t_eval: episode.t_eval.iter().cloned().collect(),
        macro_f1_retention: f1,
        rejection_accuracy: rej,
        per_type,
        epoch_losses: out.epoch_losses,
    };
    Ok((run, model))
}

/// For each unseen count and each of `seeds` runs: sample an episode,
/// train, evaluate. Run `k` uses seed `config.seed + k` for both episode
/// sampling and initialization.
pub fn run_protocol(
    data: &ProtocolData<'_>,
    config: &EngineConfig,
    hyper: &TrainHyper,
    unseen_counts: &[usize],
    seeds: usize,
    passes: &[Pass],
) -> Result<EvalReport> {
    if seeds == 0 || unseen_counts.is_empty() || passes.is_empty() {
        return Err(Error::Protocol("need at least one seed, one unseen count and one pass".into()));
    }
    let mut counts = unseen_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let jobs: Vec<(usize, u64)> =
        counts.iter().flat_map(|&u| (0..seeds as u64).map(move |k| (u, config.seed.wrapping_add(k)))).collect();
    let runs: Vec<(usize, RunResult)> = jobs
        .par_iter()
        .map(|&(unseen, seed)| {
            let cfg = EngineConfig { seed, ..config.clone() };
            let episode = make_episode(data.catalog, data.corpus, unseen, seed)?;
            Ok((unseen, run_episode(data, &cfg, hyper, &episode, passes)?.0))
        })
        .collect::<Result<_>>()?;
    let mut grouped: BTreeMap<usize, Vec<RunResult>> = BTreeMap::new();
    for (u, r) in runs {
        grouped.entry(u).or_default().push(r);
    }
    let cells = grouped
        .into_iter()
        .map(|(unseen, runs)| {
            let stat = |f: fn(&RunResult) -> Option<f64>| -> Option<Stat> {
                runs.iter().map(f).collect::<Option<Vec<f64>>>().map(Stat::of)
            };
            Cell {
                unseen,
                macro_f1_retention: stat(|r| r.macro_f1_retention),
                rejection_accuracy: stat(|r| r.rejection_accuracy),
                runs,
            }
        })
        .collect();
    Ok(EvalReport { model: config.label(), config: config.clone(), cells })
}
