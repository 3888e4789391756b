//! Binary store of precomputed token embeddings.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! header   "LMSTORE1" | dim: u32 | count: u64 | index_offset: u64
//! record*  id_len: u16 | id: utf-8 | n_tokens: u32 | sentence_vec: dim x f32 | tokens: n_tokens x dim x f32
//! index    count x (id_len: u16 | id: utf-8 | offset: u64)
//! ```
//!
//! Relation-type side information lives in the same container under
//! reserved ids (see [`side_info_id`]); such records carry `n_tokens = 0`
//! and keep their vector in the sentence slot.

use std::borrow::Cow;
use std::collections::HashMap;
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 8] = b"LMSTORE1";
pub const HEADER_LEN: usize = 8 + 4 + 8 + 8;

pub const TYPE_PREFIX: &str = "__type__/";
pub const REJECT_DESCRIPTION_ID: &str = "__reject__/description";
pub const META_PREFIX: &str = "__meta__/";

/// One stored utterance: a sentence vector and a row-major token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub n_tokens: u32,
    pub sentence_vec: Vec<f32>,
    pub token_matrix: Vec<f32>,
}

impl UtteranceRecord {
    pub fn new(utterance_id: impl Into<String>, sentence_vec: Vec<f32>, token_matrix: Vec<f32>) -> Result<Self> {
        let dim = sentence_vec.len();
        if dim == 0 {
            return Err(Error::Config("record dimension must be positive".into()));
        }
        if !token_matrix.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: token_matrix.len() % dim });
        }
        let n_tokens = (token_matrix.len() / dim) as u32;
        Ok(Self { utterance_id: utterance_id.into(), n_tokens, sentence_vec, token_matrix })
    }

    /// A vector-only record, used for side information.
    pub fn vector(id: impl Into<String>, v: Vec<f32>) -> Self {
        Self { utterance_id: id.into(), n_tokens: 0, sentence_vec: v, token_matrix: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.sentence_vec.len()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.token_matrix[i * d..(i + 1) * d]
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: self.dim() });
        }
        if self.token_matrix.len() != self.n_tokens as usize * dim {
            return Err(Error::Format(format!(
                "record `{}` declares {} tokens but carries {} values",
                self.utterance_id,
                self.n_tokens,
                self.token_matrix.len()
            )));
        }
        if self.utterance_id.len() > u16::MAX as usize {
            return Err(Error::Format(format!("record id too long ({} bytes)", self.utterance_id.len())));
        }
        if !self.sentence_vec.iter().chain(&self.token_matrix).all(|x| x.is_finite()) {
            return Err(Error::Format(format!("record `{}` has non-finite values", self.utterance_id)));
        }
        Ok(())
    }

    /// Encoded size of this record in bytes.
    pub fn encoded_len(&self) -> usize {
        record_len(self.utterance_id.len(), self.n_tokens as usize, self.dim())
    }
}

/// Byte length of one record.
pub fn record_len(id_len: usize, n_tokens: usize, dim: usize) -> usize {
    2 + id_len + 4 + (n_tokens + 1) * dim * 4
}

/// Byte length of one index entry.
pub fn index_entry_len(id_len: usize) -> usize {
    2 + id_len + 8
}

/// Ids in the reserved namespaces never name utterances.
pub fn is_reserved_id(id: &str) -> bool {
    [TYPE_PREFIX, "__reject__/", META_PREFIX].iter().any(|p| id.starts_with(p))
}

/// Reserved id of a side-information field, e.g. `__type__/P306/desc`.
pub fn side_info_id(type_id: &str, field: &str) -> String {
    format!("{TYPE_PREFIX}{type_id}/{field}")
}

/// Streaming writer. Records are appended in call order; the index and
/// the final header are written by [`StoreWriter::finish`].
pub struct StoreWriter<W: Write + Seek> {
    out: W,
    dim: usize,
    pos: u64,
    index: Vec<(String, u64)>,
    seen: HashMap<String, ()>,
}

impl<W: Write + Seek> StoreWriter<W> {
    pub fn new(mut out: W, dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Config(format!("invalid store dimension {dim}")));
        }
        out.write_all(&[0u8; HEADER_LEN])?;
        Ok(Self { out, dim, pos: HEADER_LEN as u64, index: Vec::new(), seen: HashMap::new() })
    }

    pub fn push(&mut self, rec: &UtteranceRecord) -> Result<()> {
        rec.check(self.dim)?;
        if self.seen.insert(rec.utterance_id.clone(), ()).is_some() {
            return Err(Error::Validation(format!("duplicate store id `{}`", rec.utterance_id)));
        }
        let mut buf = Vec::with_capacity(rec.encoded_len());
        buf.extend_from_slice(&(rec.utterance_id.len() as u16).to_le_bytes());
        buf.extend_from_slice(rec.utterance_id.as_bytes());
        buf.extend_from_slice(&rec.n_tokens.to_le_bytes());
        for x in rec.sentence_vec.iter().chain(&rec.token_matrix) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.index.push((rec.utterance_id.clone(), self.pos));
        self.pos += buf.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        let index_offset = self.pos;
        for (id, off) in &self.index {
            self.out.write_all(&(id.len() as u16).to_le_bytes())?;
            self.out.write_all(id.as_bytes())?;
            self.out.write_all(&off.to_le_bytes())?;
        }
        self.out.seek(SeekFrom::Start(0))?;
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(STORE_MAGIC);
        header.extend_from_slice(&(self.dim as u32).to_le_bytes());
        header.extend_from_slice(&(self.index.len() as u64).to_le_bytes());
        header.extend_from_slice(&index_offset.to_le_bytes());
        self.out.write_all(&header)?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_store<'a>(
    records: impl IntoIterator<Item = &'a UtteranceRecord>,
    dim: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = StoreWriter::new(f, dim)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn store_to_bytes<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>, dim: usize) -> Result<Vec<u8>> {
    let mut w = StoreWriter::new(std::io::Cursor::new(Vec::new()), dim)?;
    for r in records {
        w.push(r)?;
    }
    Ok(w.finish()?.into_inner())
}

/// Anything that can hand out records by id.
pub trait RecordSource: Sync {
    fn dim(&self) -> usize;
    fn record(&self, id: &str) -> Result<Cow<'_, UtteranceRecord>>;
    fn contains(&self, id: &str) -> bool;
}

/// Read handle over an encoded store. Only the index is decoded on open;
/// records are decoded on lookup.
pub struct Store<B> {
    bytes: B,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

#[cfg(feature = "mmap")]
impl Store<memmap2::Mmap> {
    /// Maps `path` read-only.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        // SAFETY: the store is opened read-only and the engine never writes
        // to a store file while a reader is alive.
        let map = unsafe { memmap2::Mmap::map(&file)? };
        Self::from_bytes(map)
    }
}

pub fn read_store(path: impl AsRef<Path>) -> Result<Store<Vec<u8>>> {
    Store::from_bytes(std::fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated store: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(format!("id is not utf-8: {e}")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl<B: AsRef<[u8]>> Store<B> {
    pub fn from_bytes(bytes: B) -> Result<Self> {
        let buf = bytes.as_ref();
        let mut c = Cursor { buf, pos: 0 };
        if c.take(8).ok() != Some(STORE_MAGIC.as_slice()) {
            return Err(Error::Format("bad magic, not an LMSTORE1 file".into()));
        }
        let dim = c.u32()? as usize;
        let count = c.u64()?;
        let index_offset = c.u64()? as usize;
        if dim == 0 {
            return Err(Error::Format("store dimension is zero".into()));
        }
        if index_offset < HEADER_LEN || index_offset > buf.len() {
            return Err(Error::Format(format!("index offset {index_offset} out of bounds")));
        }
        let mut c = Cursor { buf, pos: index_offset };
        let mut ids = Vec::new();
        let mut index = HashMap::new();
        for _ in 0..count {
            let id = c.string()?;
            let off = c.u64()? as usize;
            if off < HEADER_LEN || off >= index_offset {
                return Err(Error::Format(format!("record offset {off} for `{id}` out of bounds")));
            }
            if index.insert(id.clone(), off).is_some() {
                return Err(Error::Format(format!("duplicate index entry `{id}`")));
            }
            ids.push(id);
        }
        if c.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after index", buf.len() - c.pos)));
        }
        Ok(Self { bytes, dim, ids, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in file order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Result<UtteranceRecord> {
        let &off = self.index.get(id).ok_or_else(|| Error::NotFound(id.to_string()))?;
        let mut c = Cursor { buf: self.bytes.as_ref(), pos: off };
        let stored_id = c.string()?;
        if stored_id != id {
            return Err(Error::Format(format!("index points `{id}` at record `{stored_id}`")));
        }
        let n_tokens = c.u32()?;
        let sentence_vec = c.f32s(self.dim)?;
        let token_matrix = c.f32s(n_tokens as usize * self.dim)?;
        Ok(UtteranceRecord { utterance_id: stored_id, n_tokens, sentence_vec, token_matrix })
    }

    /// Decodes every record and checks it; returns the number of records.
    pub fn validate(&self) -> Result<usize> {
        for id in &self.ids {
            self.get(id)?.check(self.dim)?;
        }
        Ok(self.ids.len())
    }

    /// Number of records outside the reserved namespaces.
    pub fn utterance_count(&self) -> usize {
        self.ids.iter().filter(|id| !is_reserved_id(id)).count()
    }

    /// Scans the reserved metadata namespace.
    pub fn meta(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().filter_map(|id| id.strip_prefix(META_PREFIX))
    }
}

impl<B: AsRef<[u8]> + Sync> RecordSource for Store<B> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, id: &str) -> Result<Cow<'_, UtteranceRecord>> {
        self.get(id).map(Cow::Owned)
    }

    fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }
}

/// In-memory record set with the same lookup contract as [`Store`].
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    dim: usize,
    order: Vec<String>,
    records: HashMap<String, UtteranceRecord>,
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, order: Vec::new(), records: HashMap::new() }
    }

    pub fn insert(&mut self, rec: UtteranceRecord) -> Result<()> {
        rec.check(self.dim)?;
        if self.records.contains_key(&rec.utterance_id) {
            return Err(Error::Validation(format!("duplicate store id `{}`", rec.utterance_id)));
        }
        self.order.push(rec.utterance_id.clone());
        self.records.insert(rec.utterance_id.clone(), rec);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &UtteranceRecord> {
        self.order.iter().map(|id| &self.records[id])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        store_to_bytes(self.records(), self.dim)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_store(self.records(), self.dim, path)
    }
}

impl RecordSource for MemoryStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, id: &str) -> Result<Cow<'_, UtteranceRecord>> {
        self.records.get(id).map(Cow::Borrowed).ok_or_else(|| Error::NotFound(id.to_string()))
    }

    fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }
}
