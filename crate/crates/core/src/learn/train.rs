//! Mini-batch training loop over frozen features.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embed::SideInfoEmbeddings;
use crate::error::{Error, Result};
use crate::learn::grad::{batch_loss_grad, Example, PrototypeBank};
use crate::learn::optim::{AdamW, AdamWConfig};
use crate::repr::{prototype_rep, reject_description_proto, CandidateFeatures, ParamSet};
use crate::rng::{derive_seed, rng_from_seed};
use crate::store::{RecordSource, REJECT_DESCRIPTION_ID};
use crate::types::{Corpus, EngineConfig, RelationInstance, Rejection, TypeCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub optim: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { optim: AdamWConfig::default(), epochs: 5, batch_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ParamSet,
    /// Mean per-instance loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Frozen features of annotated instances.
pub fn extract_examples(instances: &[RelationInstance], src: &dyn RecordSource) -> Result<Vec<Example>> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let gold = inst.gold_type.clone().ok_or_else(|| {
                Error::Validation(format!("instance {i} (`{}`) has no gold type", inst.utterance_id))
            })?;
            let rec = src.record(&inst.utterance_id)?;
            Ok(Example { features: CandidateFeatures::extract(&rec, inst.head, inst.tail)?, gold })
        })
        .collect()
}

/// Reads the rejection-description vector when the mechanism needs it.
pub fn reject_description_vec(config: &EngineConfig, src: &dyn RecordSource) -> Result<Option<Vec<f32>>> {
    if config.rejection != Rejection::Description {
        return Ok(None);
    }
    if !src.contains(REJECT_DESCRIPTION_ID) {
        return Err(Error::SideInfo("store has no embedded rejection description".into()));
    }
    Ok(Some(src.record(REJECT_DESCRIPTION_ID)?.sentence_vec.clone()))
}

/// Prototypes for `ids` under the configured model family.
pub fn build_bank<'a>(
    side: &SideInfoEmbeddings,
    ids: impl IntoIterator<Item = &'a str>,
    config: &EngineConfig,
    reject_desc: Option<&[f32]>,
) -> Result<PrototypeBank> {
    let types = ids
        .into_iter()
        .map(|id| Ok((id.to_string(), prototype_rep(id, side, config.model_family)?)))
        .collect::<Result<_>>()?;
    Ok(PrototypeBank { types, reject_desc: reject_desc.map(reject_description_proto) })
}

/// Trains the head on precomputed examples.
pub fn train_examples(
    examples: &[Example],
    bank: &PrototypeBank,
    config: &EngineConfig,
    hyper: &TrainHyper,
) -> Result<TrainOutput> {
    if examples.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut params = ParamSet::init(config);
    let mut opt = AdamW::new(hyper.optim, &params);
    let mut rng = rng_from_seed(derive_seed(config.seed, "shuffle"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = batch_loss_grad(&batch, bank, config, &params, !params.is_empty())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss {loss}, parameters finite: {}, optimizer steps: {}",
                    params.is_finite(),
                    opt.steps()
                )));
            }
            sum += loss * batch.len() as f64;
            if let Some(g) = grad {
                opt.step(&mut params, &g);
            }
        }
        epoch_losses.push(sum / examples.len() as f64);
    }
    Ok(TrainOutput { params, epoch_losses })
}

/// Trains on the instances of `corpus` whose gold type is in `t_train`.
/// Every annotated instance must fall in `t_train`.
pub fn train(
    corpus: &Corpus,
    src: &dyn RecordSource,
    catalog: &TypeCatalog,
    t_train: &BTreeSet<String>,
    config: &EngineConfig,
    hyper: &TrainHyper,
) -> Result<TrainOutput> {
    if src.dim() != config.dim {
        return Err(Error::DimensionMismatch { expected: config.dim, found: src.dim() });
    }
    for t in t_train {
        if !catalog.contains(t) {
            return Err(Error::Validation(format!("training type `{t}` is not in the catalog")));
        }
    }
    for (i, inst) in corpus.instances.iter().enumerate() {
        match &inst.gold_type {
            Some(t) if t_train.contains(t) => {}
            other => {
                return Err(Error::Validation(format!(
                    "instance {i} (`{}`) has gold type {:?} outside the training set",
                    inst.utterance_id, other
                )))
            }
        }
    }
    let examples = extract_examples(&corpus.instances, src)?;
    let side = SideInfoEmbeddings::from_source(t_train.iter().map(String::as_str), src)?;
    let reject = reject_description_vec(config, src)?;
    let bank = build_bank(&side, t_train.iter().map(String::as_str), config, reject.as_deref())?;
    train_examples(&examples, &bank, config, hyper)
}
