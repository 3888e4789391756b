//! Domain types plus corpus and catalog ingestion.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive token span, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(index: usize) -> Self {
        Self { start: index, end: index }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Checks `start <= end < n_tokens`.
    pub fn check(&self, n_tokens: usize) -> Result<()> {
        if self.start > self.end || self.end >= n_tokens {
            return Err(Error::Span(format!(
                "[{}, {}] on an utterance of {} tokens",
                self.start, self.end, n_tokens
            )));
        }
        Ok(())
    }
}

impl From<[usize; 2]> for TokenSpan {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(s: TokenSpan) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self { id: id.into(), tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One relation candidate: an utterance, a head and a tail mention, and
/// (for annotated data) the gold relation type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub utterance_id: String,
    pub head: TokenSpan,
    pub tail: TokenSpan,
    pub gold_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_type_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_type_name: Option<String>,
}

impl RelationType {
    pub fn new(id: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            aliases: Vec::new(),
            head_type_name: None,
            tail_type_name: None,
        }
    }
}

/// Relation types keyed by id, iterated in lexicographic id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeCatalog {
    types: BTreeMap<String, RelationType>,
}

impl TypeCatalog {
    pub fn from_types(types: impl IntoIterator<Item = RelationType>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in types {
            if t.name.trim().is_empty() {
                return Err(Error::Validation(format!("relation type `{}` has an empty name", t.id)));
            }
            if t.description.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "relation type `{}` has an empty description",
                    t.id
                )));
            }
            if map.contains_key(&t.id) {
                return Err(Error::DuplicateId(t.id));
            }
            map.insert(t.id.clone(), t);
        }
        Ok(Self { types: map })
    }

    pub fn get(&self, id: &str) -> Option<&RelationType> {
        self.types.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.types.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationType> {
        self.types.values()
    }

    pub fn to_json(&self) -> Result<String> {
        let v: Vec<&RelationType> = self.types.values().collect();
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Parsed corpus: deduplicated utterances plus the instances over them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub instances: Vec<RelationInstance>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>, instances: Vec<RelationInstance>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if u.tokens.is_empty() {
                return Err(Error::Validation(format!("utterance `{}` has no tokens", u.id)));
            }
            if crate::store::is_reserved_id(&u.id) {
                return Err(Error::Validation(format!("utterance id `{}` uses a reserved prefix", u.id)));
            }
            if by_id.insert(u.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate utterance id `{}`", u.id)));
            }
        }
        let corpus = Self { utterances, instances, by_id };
        for (i, inst) in corpus.instances.iter().enumerate() {
            corpus.check_instance(i, inst)?;
        }
        Ok(corpus)
    }

    fn check_instance(&self, index: usize, inst: &RelationInstance) -> Result<()> {
        let u = self.utterance(&inst.utterance_id).ok_or_else(|| {
            Error::Validation(format!(
                "instance {index} references unknown utterance `{}`",
                inst.utterance_id
            ))
        })?;
        for (role, span) in [("head", inst.head), ("tail", inst.tail)] {
            span.check(u.len()).map_err(|e| {
                Error::Validation(format!("instance {index} (`{}`) {role}: {e}", inst.utterance_id))
            })?;
        }
        Ok(())
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.by_id.get(id).map(|&i| &self.utterances[i])
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Checks every gold type against the catalog.
    pub fn check_gold_types(&self, catalog: &TypeCatalog) -> Result<()> {
        for (i, inst) in self.instances.iter().enumerate() {
            if let Some(t) = &inst.gold_type {
                if !catalog.contains(t) {
                    return Err(Error::Validation(format!(
                        "instance {i} (`{}`) has gold type `{t}` missing from the catalog",
                        inst.utterance_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serializes back to JSON-lines, one line per instance.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for inst in &self.instances {
            let u = &self.utterances[self.by_id[&inst.utterance_id]];
            let line = CorpusLine {
                id: u.id.clone(),
                tokens: u.tokens.clone(),
                head: inst.head,
                tail: inst.tail,
                gold_type: inst.gold_type.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    id: String,
    tokens: Vec<String>,
    head: TokenSpan,
    tail: TokenSpan,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    gold_type: Option<String>,
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut utterances: Vec<Utterance> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut instances = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.tokens.is_empty() {
            return Err(Error::Parse { line: line_no, message: format!("utterance `{}` has no tokens", rec.id) });
        }
        for (role, span) in [("head", rec.head), ("tail", rec.tail)] {
            span.check(rec.tokens.len()).map_err(|e| {
                Error::Validation(format!("line {line_no}, instance on `{}`, {role}: {e}", rec.id))
            })?;
        }
        match by_id.get(&rec.id) {
            Some(&i) if utterances[i].tokens != rec.tokens => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("utterance `{}` repeated with different tokens", rec.id),
                });
            }
            Some(_) => {}
            None => {
                by_id.insert(rec.id.clone(), utterances.len());
                utterances.push(Utterance::new(rec.id.clone(), rec.tokens));
            }
        }
        instances.push(RelationInstance {
            utterance_id: rec.id,
            head: rec.head,
            tail: rec.tail,
            gold_type: rec.gold_type,
        });
    }
    Corpus::new(utterances, instances)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let f = std::fs::File::open(path)?;
    parse_corpus(BufReader::new(f))
}

pub fn parse_catalog(json: &str) -> Result<TypeCatalog> {
    let types: Vec<RelationType> = serde_json::from_str(json)?;
    TypeCatalog::from_types(types)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<TypeCatalog> {
    parse_catalog(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    /// Sentence and both mentions concatenated, then fused to `d`.
    #[serde(rename = "emma")]
    EmmaConcat,
    /// Mean of the two mention vectors.
    #[serde(rename = "alignre")]
    AlignreMean,
    /// Sentence, head and tail kept apart; three cosines averaged.
    #[serde(rename = "rematching")]
    RematchTriple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MentionStrategy {
    #[serde(rename = "first")]
    First,
    #[serde(rename = "projection")]
    Projection,
    #[serde(rename = "mean")]
    MeanPool,
    #[serde(rename = "max")]
    MaxPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rejection {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "threshold")]
    Threshold,
    #[serde(rename = "description")]
    Description,
    #[serde(rename = "prototypes")]
    Prototypes,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [Self::EmmaConcat, Self::AlignreMean, Self::RematchTriple];
}

impl MentionStrategy {
    pub const ALL: [MentionStrategy; 4] = [Self::First, Self::Projection, Self::MeanPool, Self::MaxPool];
}

impl Rejection {
    pub const ALL: [Rejection; 4] = [Self::None, Self::Threshold, Self::Description, Self::Prototypes];
}

macro_rules! named_enum {
    ($($t:ty),*) => {$(
        impl $t {
            /// The lowercase name used on the command line and in files.
            pub fn name(&self) -> &'static str {
                let i = Self::ALL.iter().position(|x| x == self).unwrap_or(0);
                Self::NAMES[i]
            }
        }

        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                Self::NAMES
                    .iter()
                    .position(|n| *n == s)
                    .map(|i| Self::ALL[i])
                    .ok_or_else(|| Error::Config(format!("unknown value `{s}`")))
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    )*};
}

impl ModelFamily {
    const NAMES: &'static [&'static str] = &["emma", "alignre", "rematching"];
}
impl MentionStrategy {
    const NAMES: &'static [&'static str] = &["first", "projection", "mean", "max"];
}
impl Rejection {
    const NAMES: &'static [&'static str] = &["none", "threshold", "description", "prototypes"];
}

named_enum!(ModelFamily, MentionStrategy, Rejection);

pub const DEFAULT_REJECT_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub model_family: ModelFamily,
    pub mention_strategy: MentionStrategy,
    pub rejection: Rejection,
    pub reject_count: usize,
    pub dim: usize,
    pub seed: u64,
}

impl EngineConfig {
    /// Builds a validated configuration. `reject_count` is forced to 1 for
    /// the threshold and description mechanisms.
    pub fn new(
        model_family: ModelFamily,
        mention_strategy: MentionStrategy,
        rejection: Rejection,
        reject_count: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let reject_count = match rejection {
            Rejection::Threshold | Rejection::Description => 1,
            Rejection::Prototypes if reject_count == 0 => {
                return Err(Error::Config("prototype rejection needs reject_count >= 1".into()))
            }
            _ => reject_count,
        };
        Ok(Self { model_family, mention_strategy, rejection, reject_count, dim, seed })
    }

    /// Number of reject entries appended to every score vector.
    pub fn reject_entries(&self) -> usize {
        match self.rejection {
            Rejection::None => 0,
            Rejection::Threshold | Rejection::Description => 1,
            Rejection::Prototypes => self.reject_count,
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.model_family, self.mention_strategy, self.rejection)
    }
}
