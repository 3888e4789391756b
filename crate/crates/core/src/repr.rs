//! Relation-candidate and relation-type representations.
//!
//! Candidate vectors are built from frozen token embeddings; the only
//! trainable pieces are the shared mention projection, the concatenation
//! fusion head and the rejection parameters, collected in [`ParamSet`].

use nalgebra::{DMatrix, DVector};

use crate::embed::{SideInfoEmbeddings, TypeSideInfo};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, unit_vec};
use crate::store::UtteranceRecord;
use crate::types::{EngineConfig, MentionStrategy, ModelFamily, Rejection, TokenSpan};

pub const THRESHOLD_INIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateRep {
    Fused(DVector<f64>),
    Triple { sent: DVector<f64>, head: DVector<f64>, tail: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrototypeRep {
    Fused(DVector<f64>),
    Triple { desc: DVector<f64>, head_type: DVector<f64>, tail_type: DVector<f64> },
}

impl CandidateRep {
    pub fn dim(&self) -> usize {
        match self {
            Self::Fused(v) => v.len(),
            Self::Triple { sent, .. } => sent.len(),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        match self {
            Self::Fused(v) => Self::Fused(DVector::zeros(v.len())),
            Self::Triple { sent, .. } => {
                let d = sent.len();
                Self::Triple { sent: DVector::zeros(d), head: DVector::zeros(d), tail: DVector::zeros(d) }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Fused(v) => v.iter().all(|x| x.is_finite()),
            Self::Triple { sent, head, tail } => {
                sent.iter().chain(head.iter()).chain(tail.iter()).all(|x| x.is_finite())
            }
        }
    }
}

/// Trainable parameters. Only those required by the engine configuration
/// are present.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `d x 2d` projection of `first ⊕ last`, shared by head and tail.
    pub w_pair: Option<DMatrix<f64>>,
    /// `d x 3d` fusion of `sentence ⊕ head ⊕ tail`.
    pub w_fuse: Option<DMatrix<f64>>,
    pub u_thr: Option<f64>,
    /// One reject prototype per row: `d` wide, or `3d` (three stacked
    /// segments) for the triple family.
    pub reject_protos: Option<DMatrix<f64>>,
}

fn stacked_identity(d: usize, blocks: usize) -> DMatrix<f64> {
    let scale = 1.0 / blocks as f64;
    DMatrix::from_fn(d, blocks * d, |r, c| if c % d == r { scale } else { 0.0 })
}

impl ParamSet {
    pub fn empty() -> Self {
        Self { w_pair: None, w_fuse: None, u_thr: None, reject_protos: None }
    }

    /// Initial parameters: `[I|I]/2` for the projection, `[I|I|I]/3` for
    /// the fusion head, 0.5 for the threshold and unit-norm seeded rows for
    /// the reject prototypes.
    pub fn init(config: &EngineConfig) -> Self {
        let d = config.dim;
        let mut p = Self::empty();
        if config.mention_strategy == MentionStrategy::Projection {
            p.w_pair = Some(stacked_identity(d, 2));
        }
        if config.model_family == ModelFamily::EmmaConcat {
            p.w_fuse = Some(stacked_identity(d, 3));
        }
        match config.rejection {
            Rejection::Threshold => p.u_thr = Some(THRESHOLD_INIT),
            Rejection::Prototypes => {
                let segments = if config.model_family == ModelFamily::RematchTriple { 3 } else { 1 };
                let mut rng = rng_from_seed(derive_seed(config.seed, "reject-prototypes"));
                let k = config.reject_count;
                let mut m = DMatrix::zeros(k, segments * d);
                for r in 0..k {
                    for s in 0..segments {
                        for (j, x) in unit_vec(&mut rng, d).into_iter().enumerate() {
                            m[(r, s * d + j)] = x;
                        }
                    }
                }
                p.reject_protos = Some(m);
            }
            Rejection::None | Rejection::Description => {}
        }
        p
    }

    /// Zero-valued copy with the same active parameters.
    pub fn zeros_like(&self) -> Self {
        Self {
            w_pair: self.w_pair.as_ref().map(|m| DMatrix::zeros(m.nrows(), m.ncols())),
            w_fuse: self.w_fuse.as_ref().map(|m| DMatrix::zeros(m.nrows(), m.ncols())),
            u_thr: self.u_thr.map(|_| 0.0),
            reject_protos: self.reject_protos.as_ref().map(|m| DMatrix::zeros(m.nrows(), m.ncols())),
        }
    }

    /// Active tensors as `(name, shape, values)`; values are in nalgebra's
    /// column-major storage order.
    pub fn tensors(&self) -> Vec<(&'static str, (usize, usize), &[f64])> {
        let mut out = Vec::new();
        if let Some(m) = &self.w_pair {
            out.push(("w_pair", m.shape(), m.as_slice()));
        }
        if let Some(m) = &self.w_fuse {
            out.push(("w_fuse", m.shape(), m.as_slice()));
        }
        if let Some(u) = &self.u_thr {
            out.push(("u_thr", (1, 1), std::slice::from_ref(u)));
        }
        if let Some(m) = &self.reject_protos {
            out.push(("reject_protos", m.shape(), m.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        if let Some(m) = &mut self.w_pair {
            out.push(("w_pair", m.as_mut_slice()));
        }
        if let Some(m) = &mut self.w_fuse {
            out.push(("w_fuse", m.as_mut_slice()));
        }
        if let Some(u) = &mut self.u_thr {
            out.push(("u_thr", std::slice::from_mut(u)));
        }
        if let Some(m) = &mut self.reject_protos {
            out.push(("reject_protos", m.as_mut_slice()));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn to_dvec(v: &[f32]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| x as f64))
}

/// Frozen inputs of one candidate: the sentence vector and the boundary
/// tokens of both mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFeatures {
    pub sent: DVector<f64>,
    pub head: MentionTokens,
    pub tail: MentionTokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MentionTokens {
    pub first: DVector<f64>,
    pub last: DVector<f64>,
}

impl MentionTokens {
    pub fn extract(record: &UtteranceRecord, span: TokenSpan) -> Result<Self> {
        span.check(record.n_tokens as usize)
            .map_err(|e| Error::Span(format!("`{}`: {e}", record.utterance_id)))?;
        Ok(Self { first: to_dvec(record.token(span.start)), last: to_dvec(record.token(span.end)) })
    }

    fn concat(&self) -> DVector<f64> {
        let d = self.first.len();
        DVector::from_fn(2 * d, |i, _| if i < d { self.first[i] } else { self.last[i - d] })
    }
}

impl CandidateFeatures {
    pub fn extract(record: &UtteranceRecord, head: TokenSpan, tail: TokenSpan) -> Result<Self> {
        Ok(Self {
            sent: to_dvec(&record.sentence_vec),
            head: MentionTokens::extract(record, head)?,
            tail: MentionTokens::extract(record, tail)?,
        })
    }
}

fn projection(params: &ParamSet) -> Result<&DMatrix<f64>> {
    params.w_pair.as_ref().ok_or_else(|| Error::Config("projection strategy needs w_pair".into()))
}

fn fusion(params: &ParamSet) -> Result<&DMatrix<f64>> {
    params.w_fuse.as_ref().ok_or_else(|| Error::Config("concatenation family needs w_fuse".into()))
}

pub(crate) fn mention_from_tokens(
    tokens: &MentionTokens,
    strategy: MentionStrategy,
    params: &ParamSet,
) -> Result<DVector<f64>> {
    Ok(match strategy {
        MentionStrategy::First => tokens.first.clone(),
        MentionStrategy::Projection => projection(params)? * tokens.concat(),
        MentionStrategy::MeanPool => (&tokens.first + &tokens.last) * 0.5,
        MentionStrategy::MaxPool => tokens.first.zip_map(&tokens.last, f64::max),
    })
}

/// Mention vector of `span` under `strategy`.
pub fn mention_embed(
    record: &UtteranceRecord,
    span: TokenSpan,
    strategy: MentionStrategy,
    params: &ParamSet,
) -> Result<DVector<f64>> {
    mention_from_tokens(&MentionTokens::extract(record, span)?, strategy, params)
}

fn concat3(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    let d = a.len();
    DVector::from_fn(3 * d, |i, _| match i / d {
        0 => a[i],
        1 => b[i - d],
        _ => c[i - 2 * d],
    })
}

pub fn candidate_from_features(
    f: &CandidateFeatures,
    family: ModelFamily,
    strategy: MentionStrategy,
    params: &ParamSet,
) -> Result<CandidateRep> {
    let head = mention_from_tokens(&f.head, strategy, params)?;
    let tail = mention_from_tokens(&f.tail, strategy, params)?;
    Ok(match family {
        ModelFamily::EmmaConcat => CandidateRep::Fused(fusion(params)? * concat3(&f.sent, &head, &tail)),
        ModelFamily::AlignreMean => CandidateRep::Fused((head + tail) * 0.5),
        ModelFamily::RematchTriple => CandidateRep::Triple { sent: f.sent.clone(), head, tail },
    })
}

pub fn candidate_rep(
    record: &UtteranceRecord,
    head: TokenSpan,
    tail: TokenSpan,
    family: ModelFamily,
    strategy: MentionStrategy,
    params: &ParamSet,
) -> Result<CandidateRep> {
    candidate_from_features(&CandidateFeatures::extract(record, head, tail)?, family, strategy, params)
}

/// Accumulates parameter gradients of a candidate representation given the
/// upstream gradient `upstream` (same shape as the candidate).
pub(crate) fn candidate_backward(
    f: &CandidateFeatures,
    family: ModelFamily,
    strategy: MentionStrategy,
    params: &ParamSet,
    upstream: &CandidateRep,
    grads: &mut ParamSet,
) -> Result<()> {
    let d = f.sent.len();
    let (g_head, g_tail) = match (family, upstream) {
        (ModelFamily::EmmaConcat, CandidateRep::Fused(g)) => {
            let head = mention_from_tokens(&f.head, strategy, params)?;
            let tail = mention_from_tokens(&f.tail, strategy, params)?;
            let z = concat3(&f.sent, &head, &tail);
            if let Some(gw) = &mut grads.w_fuse {
                gw.ger(1.0, g, &z, 1.0);
            }
            let gz = fusion(params)?.tr_mul(g);
            (gz.rows(d, d).into_owned(), gz.rows(2 * d, d).into_owned())
        }
        (ModelFamily::AlignreMean, CandidateRep::Fused(g)) => (g * 0.5, g * 0.5),
        (ModelFamily::RematchTriple, CandidateRep::Triple { head, tail, .. }) => (head.clone(), tail.clone()),
        _ => return Err(Error::Config("candidate gradient does not match the model family".into())),
    };
    if strategy == MentionStrategy::Projection {
        if let Some(gw) = &mut grads.w_pair {
            gw.ger(1.0, &g_head, &f.head.concat(), 1.0);
            gw.ger(1.0, &g_tail, &f.tail.concat(), 1.0);
        }
    }
    Ok(())
}

fn mean_of(vecs: &[&Vec<f32>]) -> DVector<f64> {
    let d = vecs[0].len();
    let mut acc = DVector::zeros(d);
    for v in vecs {
        acc += to_dvec(v);
    }
    acc / vecs.len() as f64
}

pub fn prototype_from_side(type_id: &str, side: &TypeSideInfo, family: ModelFamily) -> Result<PrototypeRep> {
    let desc = side
        .desc_vec
        .as_ref()
        .ok_or_else(|| Error::SideInfo(format!("relation type `{type_id}` has no description vector")))?;
    Ok(match family {
        ModelFamily::EmmaConcat => PrototypeRep::Fused(to_dvec(desc)),
        ModelFamily::AlignreMean => {
            let mut parts: Vec<&Vec<f32>> = side.name_vec.iter().collect();
            parts.push(desc);
            parts.extend(side.alias_vecs.iter());
            PrototypeRep::Fused(mean_of(&parts))
        }
        ModelFamily::RematchTriple => match (&side.head_type_vec, &side.tail_type_vec) {
            (Some(h), Some(t)) => PrototypeRep::Triple { desc: to_dvec(desc), head_type: to_dvec(h), tail_type: to_dvec(t) },
            _ => PrototypeRep::Fused(to_dvec(desc)),
        },
    })
}

/// Prototype of the relation type `type_id`.
pub fn prototype_rep(type_id: &str, side: &SideInfoEmbeddings, family: ModelFamily) -> Result<PrototypeRep> {
    let info = side
        .get(type_id)
        .ok_or_else(|| Error::SideInfo(format!("no side information for relation type `{type_id}`")))?;
    prototype_from_side(type_id, info, family)
}

/// Prototype of the rejection description: the description vector alone.
pub fn reject_description_proto(vec: &[f32]) -> PrototypeRep {
    PrototypeRep::Fused(to_dvec(vec))
}
