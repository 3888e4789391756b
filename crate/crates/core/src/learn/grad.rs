//! Forward pass with reverse-mode gradients of the training loss.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learn::loss::{loss_rej_indexed, LossTerms};
use crate::repr::{candidate_backward, candidate_from_features, CandidateFeatures, CandidateRep, ParamSet, PrototypeRep};
use crate::score::cosine_with_grad;
use crate::types::{EngineConfig, Rejection};

/// A training input with precomputed frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: CandidateFeatures,
    pub gold: String,
}

/// Prototypes of the relation types a model may target, plus the embedded
/// rejection description when the description mechanism is used.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeBank {
    pub types: BTreeMap<String, PrototypeRep>,
    pub reject_desc: Option<PrototypeRep>,
}

impl PrototypeBank {
    pub fn get(&self, id: &str) -> Result<&PrototypeRep> {
        self.types.get(id).ok_or_else(|| Error::SideInfo(format!("no prototype for relation type `{id}`")))
    }
}

/// Score of a candidate against a prototype with the gradient with
/// respect to the candidate.
fn type_score_grad(cand: &CandidateRep, proto: &PrototypeRep) -> Result<(f64, CandidateRep)> {
    match (cand, proto) {
        (CandidateRep::Fused(c), PrototypeRep::Fused(p)) => {
            let (s, g, _) = cosine_with_grad(c, p)?;
            Ok((s, CandidateRep::Fused(g)))
        }
        (CandidateRep::Triple { sent, head, tail }, PrototypeRep::Triple { desc, head_type, tail_type }) => {
            let (a, ga, _) = cosine_with_grad(sent, desc)?;
            let (b, gb, _) = cosine_with_grad(head, head_type)?;
            let (c, gc, _) = cosine_with_grad(tail, tail_type)?;
            Ok(((a + b + c) / 3.0, CandidateRep::Triple { sent: ga / 3.0, head: gb / 3.0, tail: gc / 3.0 }))
        }
        (CandidateRep::Triple { sent, .. }, PrototypeRep::Fused(desc)) => {
            let (s, g, _) = cosine_with_grad(sent, desc)?;
            let mut out = cand.zeros_like();
            if let CandidateRep::Triple { sent, .. } = &mut out {
                *sent = g;
            }
            Ok((s, out))
        }
        (CandidateRep::Fused(_), PrototypeRep::Triple { .. }) => {
            Err(Error::Config("a fused candidate cannot be scored against a triple prototype".into()))
        }
    }
}

fn axpy(acc: &mut CandidateRep, alpha: f64, g: &CandidateRep) {
    match (acc, g) {
        (CandidateRep::Fused(a), CandidateRep::Fused(b)) => a.axpy(alpha, b, 1.0),
        (CandidateRep::Triple { sent, head, tail }, CandidateRep::Triple { sent: s, head: h, tail: t }) => {
            sent.axpy(alpha, s, 1.0);
            head.axpy(alpha, h, 1.0);
            tail.axpy(alpha, t, 1.0);
        }
        _ => unreachable!("candidate shapes are fixed by the model family"),
    }
}

/// Where a reject score came from, for the backward pass.
enum RejectSource {
    Threshold,
    Description(CandidateRep),
    Prototype { row: usize, d_cand: CandidateRep, d_row: DVector<f64> },
}

fn reject_scores_grad(
    cand: &CandidateRep,
    config: &EngineConfig,
    params: &ParamSet,
    reject_desc: Option<&PrototypeRep>,
) -> Result<Vec<(f64, RejectSource)>> {
    match config.rejection {
        Rejection::None => Ok(Vec::new()),
        Rejection::Threshold => {
            let u = params.u_thr.ok_or_else(|| Error::Config("threshold rejection needs u_thr".into()))?;
            Ok(vec![(u, RejectSource::Threshold)])
        }
        Rejection::Description => {
            let p = reject_desc.ok_or_else(|| Error::Config("description rejection needs the rejection sentence".into()))?;
            let (s, g) = type_score_grad(cand, p)?;
            Ok(vec![(s, RejectSource::Description(g))])
        }
        Rejection::Prototypes => {
            let protos = params
                .reject_protos
                .as_ref()
                .ok_or_else(|| Error::Config("prototype rejection needs reject prototypes".into()))?;
            let d = cand.dim();
            let mut out = Vec::with_capacity(protos.nrows());
            for row in 0..protos.nrows() {
                let r: DVector<f64> = protos.row(row).transpose();
                match cand {
                    CandidateRep::Fused(c) if r.len() == d => {
                        let (s, gc, gr) = cosine_with_grad(c, &r)?;
                        out.push((s, RejectSource::Prototype { row, d_cand: CandidateRep::Fused(gc), d_row: gr }));
                    }
                    CandidateRep::Triple { sent, head, tail } if r.len() == 3 * d => {
                        let seg = |k: usize| r.rows(k * d, d).into_owned();
                        let (a, ga, ra) = cosine_with_grad(sent, &seg(0))?;
                        let (b, gb, rb) = cosine_with_grad(head, &seg(1))?;
                        let (c, gc, rc) = cosine_with_grad(tail, &seg(2))?;
                        let d_row = DVector::from_fn(3 * d, |i, _| match i / d {
                            0 => ra[i],
                            1 => rb[i - d],
                            _ => rc[i - 2 * d],
                        }) / 3.0;
                        out.push((
                            (a + b + c) / 3.0,
                            RejectSource::Prototype {
                                row,
                                d_cand: CandidateRep::Triple { sent: ga / 3.0, head: gb / 3.0, tail: gc / 3.0 },
                                d_row,
                            },
                        ));
                    }
                    _ => return Err(Error::DimensionMismatch { expected: r.len(), found: d }),
                }
            }
            Ok(out)
        }
    }
}

/// Loss of one example against `targets` (canonical order). When `grads`
/// is given, parameter gradients scaled by `scale` are accumulated into it.
pub(crate) fn example_loss(
    ex: &Example,
    targets: &[(&str, &PrototypeRep)],
    config: &EngineConfig,
    params: &ParamSet,
    reject_desc: Option<&PrototypeRep>,
    grads: Option<(&mut ParamSet, f64)>,
) -> Result<LossTerms> {
    let gold = targets
        .iter()
        .position(|(id, _)| *id == ex.gold)
        .ok_or_else(|| Error::Query(format!("gold type `{}` is not in the targeted set", ex.gold)))?;
    let cand = candidate_from_features(&ex.features, config.model_family, config.mention_strategy, params)?;
    let mut scores = Vec::with_capacity(targets.len() + config.reject_entries());
    let mut type_grads = Vec::with_capacity(targets.len());
    for (_, proto) in targets {
        let (s, g) = type_score_grad(&cand, proto)?;
        scores.push(s);
        type_grads.push(g);
    }
    let rejects = reject_scores_grad(&cand, config, params, reject_desc)?;
    scores.extend(rejects.iter().map(|r| r.0));

    let (terms, dw) = loss_rej_indexed(&scores, targets.len(), gold);

    if let Some((grads, scale)) = grads {
        let mut d_cand = cand.zeros_like();
        for (g, &w) in type_grads.iter().zip(&dw) {
            if w != 0.0 {
                axpy(&mut d_cand, w * scale, g);
            }
        }
        for ((_, src), &w) in rejects.iter().zip(&dw[targets.len()..]) {
            if w == 0.0 {
                continue;
            }
            match src {
                RejectSource::Threshold => {
                    if let Some(u) = &mut grads.u_thr {
                        *u += w * scale;
                    }
                }
                RejectSource::Description(g) => axpy(&mut d_cand, w * scale, g),
                RejectSource::Prototype { row, d_cand: g, d_row } => {
                    axpy(&mut d_cand, w * scale, g);
                    if let Some(m) = &mut grads.reject_protos {
                        for (j, g) in d_row.iter().enumerate() {
                            m[(*row, j)] += w * scale * g;
                        }
                    }
                }
            }
        }
        candidate_backward(&ex.features, config.model_family, config.mention_strategy, params, &d_cand, grads)?;
    }
    Ok(terms)
}

/// Sorted distinct gold types of a batch.
pub fn batch_types(batch: &[&Example]) -> Vec<String> {
    let mut t: Vec<String> = batch.iter().map(|e| e.gold.clone()).collect();
    t.sort();
    t.dedup();
    t
}

const CHUNK: usize = 8;

/// Mean loss of a batch, with the targeted set taken to be the gold types
/// present in the batch, and optionally its gradient.
///
/// Examples are processed in fixed chunks whose partial gradients are
/// summed in chunk order, so the result does not depend on thread count.
pub fn batch_loss_grad(
    batch: &[&Example],
    bank: &PrototypeBank,
    config: &EngineConfig,
    params: &ParamSet,
    want_grad: bool,
) -> Result<(f64, Option<ParamSet>)> {
    if batch.is_empty() {
        return Err(Error::Query("empty batch".into()));
    }
    let type_ids = batch_types(batch);
    let targets: Vec<(&str, &PrototypeRep)> =
        type_ids.iter().map(|id| Ok((id.as_str(), bank.get(id)?))).collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<(f64, Option<ParamSet>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = want_grad.then(|| params.zeros_like());
            let mut loss = 0.0;
            for ex in chunk {
                let terms = example_loss(
                    ex,
                    &targets,
                    config,
                    params,
                    bank.reject_desc.as_ref(),
                    g.as_mut().map(|g| (g, scale)),
                )?;
                loss += terms.total();
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad: Option<ParamSet> = None;
    for (l, g) in partials {
        total += l;
        if let Some(g) = g {
            match &mut grad {
                None => grad = Some(g),
                Some(acc) => add_assign(acc, &g),
            }
        }
    }
    Ok((total * scale, grad))
}

pub(crate) fn add_assign(acc: &mut ParamSet, other: &ParamSet) {
    for ((_, a), (_, _, b)) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::MentionTokens;
    use crate::types::{MentionStrategy, ModelFamily};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn example(head: &[f64], tail: &[f64], gold: &str) -> Example {
        Example {
            features: CandidateFeatures {
                sent: dv(&[0.0, 0.0, 1.0]),
                head: MentionTokens { first: dv(head), last: dv(head) },
                tail: MentionTokens { first: dv(tail), last: dv(tail) },
            },
            gold: gold.into(),
        }
    }

    #[test]
    fn satisfied_margins_give_zero_gradient() {
        // gold cosine 1, other type -1: every margin is exceeded by 1
        let mut bank = PrototypeBank::default();
        bank.types.insert("a".into(), PrototypeRep::Fused(dv(&[1.0, 0.0, 0.0])));
        bank.types.insert("b".into(), PrototypeRep::Fused(dv(&[-1.0, 0.0, 0.0])));
        let cfg = EngineConfig::new(ModelFamily::AlignreMean, MentionStrategy::First, Rejection::None, 1, 3, 0).unwrap();
        let exs = [example(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], "a"), example(&[-1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], "b")];
        let batch: Vec<&Example> = exs.iter().collect();
        let (loss, _) = batch_loss_grad(&batch, &bank, &cfg, &ParamSet::empty(), true).unwrap();
        assert_eq!(loss, 0.0);

        let cfg = EngineConfig::new(ModelFamily::EmmaConcat, MentionStrategy::Projection, Rejection::None, 1, 3, 0).unwrap();
        let mut params = ParamSet::init(&cfg);
        // fusion keeps only the head block so candidates align with gold
        params.w_fuse = Some(nalgebra::DMatrix::from_fn(3, 9, |r, c| if c == r + 3 { 1.0 } else { 0.0 }));
        let (loss, g) = batch_loss_grad(&batch, &bank, &cfg, &params, true).unwrap();
        assert_eq!(loss, 0.0);
        let g = g.unwrap();
        assert!(g.tensors().iter().all(|t| t.2.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn threshold_gradient_is_positive_when_gold_barely_wins() {
        // gold cosine 1, other type -1, threshold 0.5: term 2 is violated
        // (slack 0.5), term 3 is not (slack 1 - 0.5 - 1 < 0)
        let mut bank = PrototypeBank::default();
        bank.types.insert("a".into(), PrototypeRep::Fused(dv(&[1.0, 0.0, 0.0])));
        bank.types.insert("b".into(), PrototypeRep::Fused(dv(&[-1.0, 0.0, 0.0])));
        let cfg = EngineConfig::new(ModelFamily::AlignreMean, MentionStrategy::First, Rejection::Threshold, 1, 3, 0).unwrap();
        let mut params = ParamSet::init(&cfg);
        params.u_thr = Some(0.5);
        let exs = [example(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], "a"), example(&[-1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], "b")];
        let batch: Vec<&Example> = exs.iter().collect();
        let (_, g) = batch_loss_grad(&batch, &bank, &cfg, &params, true).unwrap();
        let du = g.unwrap().u_thr.unwrap();
        // d/du = 2 * slack = 1.0 per example; mean over the batch is 1.0
        assert!(du > 0.0);
        assert!((du - 1.0).abs() < 1e-12, "{du}");
    }
}
