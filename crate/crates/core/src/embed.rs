//! Deterministic toy embedder and relation-type side-information vectors.

use std::collections::BTreeMap;
use std::io::{Seek, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{hash_with_seed, rng_from_seed, unit_vec};
use crate::store::{side_info_id, RecordSource, StoreWriter, UtteranceRecord, META_PREFIX, REJECT_DESCRIPTION_ID};
use crate::types::{Corpus, TypeCatalog, Utterance};

/// Description sentence used by the description rejection mechanism.
pub const REJECT_DESCRIPTION: &str = "There is no relation between the two entities.";

const SELF_WEIGHT: f64 = 0.8;
const NEIGHBOR_WEIGHT: f64 = 0.1;

/// Stand-in for a frozen contextual encoder. Each token maps to a seeded
/// unit vector which is then blended with its immediate neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyEmbedder {
    pub dim: usize,
    pub seed: u64,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl ToyEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn base_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = rng_from_seed(hash_with_seed(token, self.seed));
        unit_vec(&mut rng, self.dim)
    }

    /// Contextual token vectors plus the normalized mean as sentence vector.
    fn encode(&self, tokens: &[String]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let base: Vec<Vec<f64>> = tokens.iter().map(|t| self.base_vector(t)).collect();
        let mixed: Vec<Vec<f64>> = (0..base.len())
            .map(|i| {
                let mut v: Vec<f64> = base[i].iter().map(|x| SELF_WEIGHT * x).collect();
                for j in [i.wrapping_sub(1), i + 1] {
                    if let Some(nb) = base.get(j) {
                        v.iter_mut().zip(nb).for_each(|(a, b)| *a += NEIGHBOR_WEIGHT * b);
                    }
                }
                normalize(&mut v);
                v
            })
            .collect();
        let mut sent = vec![0.0; self.dim];
        for v in &mixed {
            sent.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        let n = mixed.len().max(1) as f64;
        sent.iter_mut().for_each(|x| *x /= n);
        normalize(&mut sent);
        (sent, mixed)
    }

    pub fn embed(&self, utterance: &Utterance) -> UtteranceRecord {
        let (sent, mixed) = self.encode(&utterance.tokens);
        UtteranceRecord {
            utterance_id: utterance.id.clone(),
            n_tokens: mixed.len() as u32,
            sentence_vec: to_f32(&sent),
            token_matrix: mixed.iter().flat_map(|v| to_f32(v)).collect(),
        }
    }

    /// Marker record identifying this embedder inside a store.
    pub fn meta_id(&self) -> String {
        format!("{META_PREFIX}embedder=toy;seed={}", self.seed)
    }

    /// Parses a marker written by [`ToyEmbedder::meta_id`].
    pub fn from_meta(meta: &str, dim: usize) -> Option<Self> {
        let seed = meta.strip_prefix("embedder=toy;seed=")?.parse().ok()?;
        Some(Self { dim, seed })
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Turns free text into one sentence-level vector.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Vec<f32>;
}

impl TextEmbedder for ToyEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            tokens.push(String::new());
        }
        to_f32(&self.encode(&tokens).0)
    }
}

/// Side-information vectors of one relation type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeSideInfo {
    pub name_vec: Option<Vec<f32>>,
    pub desc_vec: Option<Vec<f32>>,
    pub alias_vecs: Vec<Vec<f32>>,
    pub head_type_vec: Option<Vec<f32>>,
    pub tail_type_vec: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SideInfoEmbeddings {
    pub dim: usize,
    pub types: BTreeMap<String, TypeSideInfo>,
}

fn alias_field(k: usize) -> String {
    format!("alias{k}")
}

impl SideInfoEmbeddings {
    pub fn get(&self, type_id: &str) -> Option<&TypeSideInfo> {
        self.types.get(type_id)
    }

    /// Flattens to vector-only records under the reserved id namespace.
    pub fn records(&self) -> Vec<UtteranceRecord> {
        let mut out = Vec::new();
        for (id, s) in &self.types {
            let mut push = |field: &str, v: &Option<Vec<f32>>| {
                if let Some(v) = v {
                    out.push(UtteranceRecord::vector(side_info_id(id, field), v.clone()));
                }
            };
            push("name", &s.name_vec);
            push("desc", &s.desc_vec);
            push("head_type", &s.head_type_vec);
            push("tail_type", &s.tail_type_vec);
            for (k, v) in s.alias_vecs.iter().enumerate() {
                out.push(UtteranceRecord::vector(side_info_id(id, &alias_field(k)), v.clone()));
            }
        }
        out
    }

    /// Reads the vectors of the given type ids back from a record source.
    /// Types with no stored field at all are skipped.
    pub fn from_source<'a>(ids: impl IntoIterator<Item = &'a str>, src: &dyn RecordSource) -> Result<Self> {
        let get = |id: &str, field: &str| -> Result<Option<Vec<f32>>> {
            let key = side_info_id(id, field);
            if src.contains(&key) {
                Ok(Some(src.record(&key)?.sentence_vec.clone()))
            } else {
                Ok(None)
            }
        };
        let mut types = BTreeMap::new();
        for id in ids {
            let mut alias_vecs = Vec::new();
            while let Some(v) = get(id, &alias_field(alias_vecs.len()))? {
                alias_vecs.push(v);
            }
            let info = TypeSideInfo {
                name_vec: get(id, "name")?,
                desc_vec: get(id, "desc")?,
                alias_vecs,
                head_type_vec: get(id, "head_type")?,
                tail_type_vec: get(id, "tail_type")?,
            };
            if info.name_vec.is_some() || info.desc_vec.is_some() {
                types.insert(id.to_string(), info);
            }
        }
        Ok(Self { dim: src.dim(), types })
    }
}

/// Embeds every side-information field of every catalog entry with
/// `embedder`. `expected_dim` is the store dimension the vectors must match.
pub fn embed_side_info(
    catalog: &TypeCatalog,
    embedder: &dyn TextEmbedder,
    expected_dim: usize,
) -> Result<SideInfoEmbeddings> {
    if embedder.dim() != expected_dim {
        return Err(Error::Config(format!(
            "side-information embedder has dimension {}, store has {}",
            embedder.dim(),
            expected_dim
        )));
    }
    let types = catalog
        .iter()
        .map(|t| {
            let info = TypeSideInfo {
                name_vec: Some(embedder.embed_text(&t.name)),
                desc_vec: Some(embedder.embed_text(&t.description)),
                alias_vecs: t.aliases.iter().map(|a| embedder.embed_text(a)).collect(),
                head_type_vec: t.head_type_name.as_deref().map(|s| embedder.embed_text(s)),
                tail_type_vec: t.tail_type_name.as_deref().map(|s| embedder.embed_text(s)),
            };
            (t.id.clone(), info)
        })
        .collect();
    Ok(SideInfoEmbeddings { dim: expected_dim, types })
}

/// Record holding the embedded rejection description.
pub fn reject_description_record(embedder: &dyn TextEmbedder) -> UtteranceRecord {
    UtteranceRecord::vector(REJECT_DESCRIPTION_ID, embedder.embed_text(REJECT_DESCRIPTION))
}

/// Where utterance and side-information vectors come from.
pub enum Encoder<'a> {
    Toy(ToyEmbedder),
    /// Vectors exported ahead of time into a store by an external encoder.
    Import(&'a dyn RecordSource),
}

/// Marker id written for imported vectors.
pub const IMPORT_META: &str = "embedder=import";

const ENCODE_CHUNK: usize = 1024;

fn meta_record(meta: &str, dim: usize) -> UtteranceRecord {
    UtteranceRecord::vector(format!("{META_PREFIX}{meta}"), vec![0.0; dim])
}

/// Writes a complete store: utterances in corpus order, then the
/// side-information of every catalog type, the rejection description and
/// an embedder marker.
pub fn encode_store<W: Write + Seek>(
    corpus: &Corpus,
    catalog: &TypeCatalog,
    encoder: &Encoder<'_>,
    dim: usize,
    out: W,
) -> Result<W> {
    let mut w = StoreWriter::new(out, dim)?;
    match encoder {
        Encoder::Toy(e) => {
            if e.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.dim });
            }
            for chunk in corpus.utterances.chunks(ENCODE_CHUNK) {
                let recs: Vec<UtteranceRecord> = chunk.par_iter().map(|u| e.embed(u)).collect();
                for r in &recs {
                    w.push(r)?;
                }
            }
            for r in embed_side_info(catalog, e, dim)?.records() {
                w.push(&r)?;
            }
            w.push(&reject_description_record(e))?;
            w.push(&meta_record(&e.meta_id()[META_PREFIX.len()..], dim))?;
        }
        Encoder::Import(src) => {
            if src.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: src.dim() });
            }
            for u in &corpus.utterances {
                let rec = src.record(&u.id)?;
                if rec.n_tokens as usize != u.len() {
                    return Err(Error::Validation(format!(
                        "imported record `{}` has {} tokens, corpus has {}",
                        u.id,
                        rec.n_tokens,
                        u.len()
                    )));
                }
                w.push(&rec)?;
            }
            let side = SideInfoEmbeddings::from_source(catalog.ids(), *src)?;
            for id in catalog.ids() {
                if side.get(id).and_then(|s| s.desc_vec.as_ref()).is_none() {
                    return Err(Error::SideInfo(format!("no imported description vector for type `{id}`")));
                }
            }
            for r in side.records() {
                w.push(&r)?;
            }
            if src.contains(REJECT_DESCRIPTION_ID) {
                w.push(&*src.record(REJECT_DESCRIPTION_ID)?)?;
            }
            w.push(&meta_record(IMPORT_META, dim))?;
        }
    }
    w.finish()
}

/// The toy embedder recorded in a store's marker, if any.
pub fn toy_embedder_of<'a>(meta: impl IntoIterator<Item = &'a str>, dim: usize) -> Option<ToyEmbedder> {
    meta.into_iter().find_map(|m| ToyEmbedder::from_meta(m, dim))
}
