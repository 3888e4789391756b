//! Synthetic separable data: relation types on (near-)orthogonal
//! directions, mentions as noisy copies of their gold type vector.

use crate::embed::{SideInfoEmbeddings, TypeSideInfo};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, gaussian_vec, rng_from_seed, unit_vec};
use crate::store::{MemoryStore, UtteranceRecord, REJECT_DESCRIPTION_ID};
use crate::types::{Corpus, RelationInstance, RelationType, TokenSpan, TypeCatalog, Utterance};

/// Weight of the shared "relation" direction in every type vector. The
/// embedded rejection description points along that direction.
pub const SHARED_WEIGHT: f64 = 0.5;
pub const DEFAULT_SIGMA: f64 = 0.05;
const UTTERANCE_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_types: usize,
    pub n_per_type: usize,
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_types: usize, n_per_type: usize, dim: usize, seed: u64) -> Self {
        Self { n_types, n_per_type, dim, sigma: DEFAULT_SIGMA, seed }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }
}

pub struct SynthData {
    pub corpus: Corpus,
    pub store: MemoryStore,
    pub catalog: TypeCatalog,
    /// Unit vector of each type, in catalog order.
    pub type_vectors: Vec<Vec<f64>>,
}

pub fn type_id(k: usize) -> String {
    format!("T{k:03}")
}

/// Orthonormalizes as many random directions as the dimension allows;
/// any remaining directions stay random unit vectors.
fn directions(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(derive_seed(seed, "directions"));
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut v = gaussian_vec(&mut rng, dim);
        if i < dim {
            for u in &out {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        out.push(v);
    }
    out
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn f32s(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn synth_separable(spec: SynthSpec) -> Result<SynthData> {
    let SynthSpec { n_types, n_per_type, dim, sigma, seed } = spec;
    if n_types < 2 {
        return Err(Error::Config("need at least two relation types".into()));
    }
    if dim < n_types {
        return Err(Error::Config(format!("dimension {dim} cannot hold {n_types} near-orthogonal types")));
    }
    let dirs = directions(n_types + 1, dim, seed);
    let shared = &dirs[n_types];
    let type_vectors: Vec<Vec<f64>> = dirs[..n_types]
        .iter()
        .map(|e| normalized(e.iter().zip(shared).map(|(a, b)| a + SHARED_WEIGHT * b).collect()))
        .collect();

    let catalog = TypeCatalog::from_types((0..n_types).map(|k| {
        let mut t = RelationType::new(type_id(k), format!("synthetic relation {k}"), format!("synthetic relation number {k}"));
        t.head_type_name = Some(format!("head entity {k}"));
        t.tail_type_name = Some(format!("tail entity {k}"));
        t
    }))?;

    let mut side = SideInfoEmbeddings { dim, ..Default::default() };
    for (k, v) in type_vectors.iter().enumerate() {
        let v = f32s(v);
        side.types.insert(
            type_id(k),
            TypeSideInfo {
                name_vec: Some(v.clone()),
                desc_vec: Some(v.clone()),
                alias_vecs: Vec::new(),
                head_type_vec: Some(v.clone()),
                tail_type_vec: Some(v),
            },
        );
    }

    let mut rng = rng_from_seed(derive_seed(seed, "instances"));
    let mut store = MemoryStore::new(dim);
    let mut utterances = Vec::with_capacity(n_types * n_per_type);
    let mut instances = Vec::with_capacity(n_types * n_per_type);
    for j in 0..n_per_type {
        for (k, tv) in type_vectors.iter().enumerate() {
            let id = format!("s{k:03}-{j:04}");
            let head_len = 1 + (rand::Rng::random::<bool>(&mut rng) as usize);
            let tail_len = 1 + (rand::Rng::random::<bool>(&mut rng) as usize);
            let head = TokenSpan::new(1, head_len);
            let tail = TokenSpan::new(5, 4 + tail_len);
            let mut tokens = Vec::with_capacity(UTTERANCE_LEN);
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(UTTERANCE_LEN);
            for i in 0..UTTERANCE_LEN {
                let in_mention = (head.start..=head.end).contains(&i) || (tail.start..=tail.end).contains(&i);
                if in_mention {
                    let noise = gaussian_vec(&mut rng, dim);
                    rows.push(tv.iter().zip(noise).map(|(a, n)| a + sigma * n).collect());
                    tokens.push(format!("m{k}"));
                } else {
                    rows.push(unit_vec(&mut rng, dim));
                    tokens.push(format!("w{i}"));
                }
            }
            let mut sent = vec![0.0; dim];
            for r in &rows {
                sent.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
            let sent = normalized(sent);
            store.insert(UtteranceRecord::new(id.clone(), f32s(&sent), rows.iter().flat_map(|r| f32s(r)).collect())?)?;
            instances.push(RelationInstance { utterance_id: id.clone(), head, tail, gold_type: Some(type_id(k)) });
            utterances.push(Utterance::new(id, tokens));
        }
    }
    for r in side.records() {
        store.insert(r)?;
    }
    store.insert(UtteranceRecord::vector(REJECT_DESCRIPTION_ID, f32s(shared)))?;

    Ok(SynthData { corpus: Corpus::new(utterances, instances)?, store, catalog, type_vectors })
}
