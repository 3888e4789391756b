//! Score vectors over targeted relation types plus reject entries, and the
//! argmax prediction rule.

use std::fmt;

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::repr::{CandidateRep, ParamSet, PrototypeRep};
use crate::types::Rejection;

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok(ab / (aa.sqrt() * bb.sqrt()))
}

/// Cosine with its gradients with respect to both arguments.
pub(crate) fn cosine_with_grad(a: &DVector<f64>, b: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok((0.0, DVector::zeros(a.len()), DVector::zeros(b.len())));
    }
    let c = cosine(a.as_slice(), b.as_slice())?;
    let ga = b / (na * nb) - a * (c / (na * na));
    let gb = a / (na * nb) - b * (c / (nb * nb));
    Ok((c, ga, gb))
}

fn cos(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    cosine(a.as_slice(), b.as_slice())
}

/// Similarity between a candidate and a relation-type prototype.
pub fn type_score(cand: &CandidateRep, proto: &PrototypeRep) -> Result<f64> {
    match (cand, proto) {
        (CandidateRep::Fused(c), PrototypeRep::Fused(p)) => cos(c, p),
        (CandidateRep::Triple { sent, head, tail }, PrototypeRep::Triple { desc, head_type, tail_type }) => {
            Ok((cos(sent, desc)? + cos(head, head_type)? + cos(tail, tail_type)?) / 3.0)
        }
        (CandidateRep::Triple { sent, .. }, PrototypeRep::Fused(desc)) => cos(sent, desc),
        (CandidateRep::Fused(_), PrototypeRep::Triple { .. }) => {
            Err(Error::Config("a fused candidate cannot be scored against a triple prototype".into()))
        }
    }
}

/// Entry of an augmented score vector. The derived order is the canonical
/// one: relation types by id, then reject entries by index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryId {
    Type(String),
    Reject(usize),
}

impl EntryId {
    pub fn is_reject(&self) -> bool {
        matches!(self, Self::Reject(_))
    }

    pub fn type_id(&self) -> Option<&str> {
        match self {
            Self::Type(t) => Some(t),
            Self::Reject(_) => None,
        }
    }
}

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Type(t) => f.write_str(t),
            Self::Reject(k) => write!(f, "__reject__/r{k}"),
        }
    }
}

impl Serialize for EntryId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Weights over `T' ∪ R` in canonical entry order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    entries: Vec<(EntryId, f64)>,
}

impl ScoreVector {
    /// Builds from relation-type scores and reject scores. Type ids must be
    /// distinct.
    pub fn new(types: Vec<(String, f64)>, rejects: Vec<f64>) -> Result<Self> {
        let mut entries: Vec<(EntryId, f64)> = types.into_iter().map(|(t, w)| (EntryId::Type(t), w)).collect();
        entries.extend(rejects.into_iter().enumerate().map(|(k, w)| (EntryId::Reject(k), w)));
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Query("duplicate relation type in the targeted set".into()));
        }
        if entries.is_empty() {
            return Err(Error::Query("empty score vector".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(EntryId, f64)] {
        &self.entries
    }

    pub fn get(&self, id: &EntryId) -> Option<f64> {
        self.entries.binary_search_by(|e| e.0.cmp(id)).ok().map(|i| self.entries[i].1)
    }

    pub fn type_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.0.is_reject()).count()
    }

    pub fn reject_count(&self) -> usize {
        self.entries.len() - self.type_count()
    }

    /// Maximum entry; ties go to the first entry in canonical order.
    pub fn argmax(&self) -> (&EntryId, f64) {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate().skip(1) {
            if e.1 > self.entries[best].1 {
                best = i;
            }
        }
        (&self.entries[best].0, self.entries[best].1)
    }

    /// Highest reject weight, if any reject entry exists.
    pub fn best_reject(&self) -> Option<f64> {
        self.entries.iter().filter(|e| e.0.is_reject()).map(|e| e.1).reduce(f64::max)
    }
}

fn triple_slots(cand: &CandidateRep) -> Option<[&DVector<f64>; 3]> {
    match cand {
        CandidateRep::Triple { sent, head, tail } => Some([sent, head, tail]),
        CandidateRep::Fused(_) => None,
    }
}

/// Reject weights for one candidate.
pub fn reject_scores(
    cand: &CandidateRep,
    params: &ParamSet,
    mechanism: Rejection,
    reject_desc: Option<&PrototypeRep>,
) -> Result<Vec<f64>> {
    match mechanism {
        Rejection::None => Err(Error::Config("no rejection mechanism configured".into())),
        Rejection::Threshold => {
            let u = params.u_thr.ok_or_else(|| Error::Config("threshold rejection needs u_thr".into()))?;
            Ok(vec![u])
        }
        Rejection::Description => {
            let proto = reject_desc
                .ok_or_else(|| Error::Config("description rejection needs the embedded rejection sentence".into()))?;
            Ok(vec![type_score(cand, proto)?])
        }
        Rejection::Prototypes => {
            let protos = params
                .reject_protos
                .as_ref()
                .ok_or_else(|| Error::Config("prototype rejection needs reject prototypes".into()))?;
            let d = cand.dim();
            protos
                .row_iter()
                .map(|row| {
                    let row: Vec<f64> = row.iter().copied().collect();
                    match triple_slots(cand) {
                        Some(slots) if row.len() == 3 * d => {
                            let mut s = 0.0;
                            for (k, v) in slots.iter().enumerate() {
                                s += cosine(v.as_slice(), &row[k * d..(k + 1) * d])?;
                            }
                            Ok(s / 3.0)
                        }
                        None if row.len() == d => cosine(cand_fused(cand), &row),
                        _ => Err(Error::DimensionMismatch { expected: row.len(), found: d }),
                    }
                })
                .collect()
        }
    }
}

fn cand_fused(cand: &CandidateRep) -> &[f64] {
    match cand {
        CandidateRep::Fused(v) => v.as_slice(),
        CandidateRep::Triple { sent, .. } => sent.as_slice(),
    }
}

/// Assembles the augmented score vector for one candidate.
pub fn score_vector(
    cand: &CandidateRep,
    targets: &[(String, PrototypeRep)],
    params: &ParamSet,
    mechanism: Rejection,
    reject_desc: Option<&PrototypeRep>,
) -> Result<ScoreVector> {
    if targets.is_empty() {
        return Err(Error::Query("the targeted type set is empty".into()));
    }
    let types = targets
        .iter()
        .map(|(id, p)| Ok((id.clone(), type_score(cand, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let rejects = match mechanism {
        Rejection::None => Vec::new(),
        m => reject_scores(cand, params, m, reject_desc)?,
    };
    ScoreVector::new(types, rejects)
}

/// Predicted entry; a reject entry means no relation is predicted.
pub fn predict(
    cand: &CandidateRep,
    targets: &[(String, PrototypeRep)],
    params: &ParamSet,
    mechanism: Rejection,
    reject_desc: Option<&PrototypeRep>,
) -> Result<EntryId> {
    Ok(score_vector(cand, targets, params, mechanism, reject_desc)?.argmax().0.clone())
}
