//! Zero-shot relation extraction with late interaction over offline
//! token embeddings.
//!
//! Utterances are encoded once into a [`store`]; relation types arrive at
//! query time as side information and are turned into prototypes
//! ([`repr`]); candidates are scored against prototypes plus optional
//! reject entries ([`score`]). The small trainable head is fitted with
//! [`learn`] and measured with [`eval`].

pub mod embed;
pub mod error;
pub mod eval;
pub mod learn;
pub mod repr;
pub mod rng;
pub mod score;
pub mod store;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    load_catalog, load_corpus, Corpus, EngineConfig, MentionStrategy, ModelFamily, Rejection, RelationInstance,
    RelationType, TokenSpan, TypeCatalog, Utterance,
};
