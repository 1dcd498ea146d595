//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! "HALF1"  u32 version
//! u8 model kind (0 half, 1 lfm)
//! hyperparameters: 8 × u64 (vocab, D, K, w, T, N, f, a), u8 activation
//! user ids, item ids: u64 count, then strings in dense-index order
//! vocabulary: u64 count, then the corpus tokens from index 2 on
//! user bundles, item bundles: per entity N × T u32 tokens and N u8 mask flags
//! tensors: u64 count, then per tensor a string name, u32 rank,
//!          rank × u64 dims and the f64 payload
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::path::Path;

use half_core::corpus::{ReviewBundle, Vocabulary};
use half_core::model::{Activation, HyperParams, ModelKind, ParamSet};
use half_core::params::{Frozen, ParamStore};
use half_core::tensor::Tensor;

use crate::error::CliError;

pub const MAGIC: &[u8; 5] = b"HALF1";
pub const VERSION: u32 = 1;

/// Everything needed to predict for known users and items.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub params: ParamSet,
    /// Entity ids by dense index.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub vocab: Vocabulary,
    pub user_bundles: Vec<ReviewBundle>,
    pub item_bundles: Vec<ReviewBundle>,
}

impl Checkpoint {
    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id)
    }
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

fn kind_code(k: ModelKind) -> u8 {
    match k {
        ModelKind::Half => 0,
        ModelKind::Lfm => 1,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Sigmoid => 2,
    }
}

pub fn to_bytes(c: &Checkpoint) -> Vec<u8> {
    let mut o = Out(Vec::new());
    o.0.extend_from_slice(MAGIC);
    o.u32(VERSION);
    o.u8(kind_code(c.kind));
    let hp = &c.params.hp;
    for v in [
        hp.vocab_size,
        hp.embed_dim,
        hp.filters,
        hp.window,
        hp.review_len,
        hp.reviews_per_entity,
        hp.factor_dim,
        hp.attn_dim,
    ] {
        o.len(v);
    }
    o.u8(activation_code(hp.activation));
    for ids in [&c.user_ids, &c.item_ids] {
        o.len(ids.len());
        for id in ids {
            o.str(id);
        }
    }
    let words = &c.vocab.corpus_tokens();
    o.len(words.len());
    for w in words.iter() {
        o.str(w);
    }
    for bundles in [&c.user_bundles, &c.item_bundles] {
        for b in bundles {
            for row in &b.reviews {
                for &t in row {
                    o.u32(t);
                }
            }
            for &m in &b.mask {
                o.u8(u8::from(m));
            }
        }
    }
    let store = &c.params.store;
    o.len(store.len());
    for e in store.entries() {
        o.str(&e.name);
        o.u32(e.tensor.rank() as u32);
        for &d in e.tensor.shape() {
            o.len(d);
        }
        for v in e.tensor.data() {
            o.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    o.0
}

struct In<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count whose items each occupy at least `min_bytes`, so a corrupt
    /// length cannot trigger a huge allocation.
    fn count(&mut self, min_bytes: usize) -> Result<usize, CliError> {
        let n = self.u64()?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(min_bytes as u64) > left {
            return Err(corrupt(format!("count {n} exceeds the remaining {left} bytes")));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String, CliError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}

fn read_bundles(
    r: &mut In<'_>,
    ids: &[String],
    n: usize,
    t: usize,
    vocab: usize,
) -> Result<Vec<ReviewBundle>, CliError> {
    let per = n.saturating_mul(t).saturating_mul(4).saturating_add(n);
    if per.saturating_mul(ids.len()) > r.bytes.len() - r.pos {
        return Err(corrupt("review bundles are larger than the file"));
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mut reviews = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = Vec::with_capacity(t);
            for _ in 0..t {
                let tok = r.u32()?;
                if tok as usize >= vocab {
                    return Err(corrupt(format!("token {tok} outside vocabulary of {vocab}")));
                }
                row.push(tok);
            }
            reviews.push(row);
        }
        let mut mask = Vec::with_capacity(n);
        for _ in 0..n {
            mask.push(match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(corrupt(format!("bad mask byte {other}"))),
            });
        }
        out.push(ReviewBundle {
            owner_id: id.clone(),
            reviews,
            mask,
        });
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CliError> {
    let mut r = In { bytes, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| corrupt("file too short for a header"))?;
    if magic != MAGIC {
        return Err(corrupt("bad magic bytes; not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!(
            "unsupported format version {version} (this build reads version {VERSION})"
        )));
    }
    let kind = match r.u8()? {
        0 => ModelKind::Half,
        1 => ModelKind::Lfm,
        other => return Err(corrupt(format!("unknown model kind {other}"))),
    };
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflows usize"))?;
    }
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Sigmoid,
        other => return Err(corrupt(format!("unknown activation {other}"))),
    };
    let [vocab_size, embed_dim, filters, window, review_len, reviews_per_entity, factor_dim, attn_dim] =
        dims;
    let hp = HyperParams {
        vocab_size,
        embed_dim,
        filters,
        window,
        review_len,
        reviews_per_entity,
        factor_dim,
        attn_dim,
        activation,
    };
    hp.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut tables = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = r.count(4)?;
        let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
        tables.push(ids);
    }
    let item_ids = tables.pop().expect("two tables");
    let user_ids = tables.pop().expect("two tables");

    let nw = r.count(4)?;
    let words = (0..nw).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::from_tokens(words);
    if vocab.len() != hp.vocab_size {
        return Err(corrupt(format!(
            "vocabulary has {} entries, hyperparameters say {}",
            vocab.len(),
            hp.vocab_size
        )));
    }
    let (n, t) = (hp.reviews_per_entity, hp.review_len);
    let user_bundles = read_bundles(&mut r, &user_ids, n, t, hp.vocab_size)?;
    let item_bundles = read_bundles(&mut r, &item_ids, n, t, hp.vocab_size)?;

    let nt = r.count(4)?;
    let mut store = ParamStore::new();
    for _ in 0..nt {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(corrupt(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflows usize"))?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l.saturating_mul(8) <= bytes.len() - r.pos)
            .ok_or_else(|| corrupt(format!("tensor {name} is larger than the file")))?;
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
        store.push(name, tensor, Frozen::None);
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = ParamSet::from_store(hp, user_ids.len(), item_ids.len(), store)
        .map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint {
        kind,
        params,
        user_ids,
        item_ids,
        vocab,
        user_bundles,
        item_bundles,
    })
}

pub fn save(path: &Path, c: &Checkpoint) -> Result<(), CliError> {
    std::fs::write(path, to_bytes(c)).map_err(|e| CliError::io("cannot write checkpoint", path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes).map_err(|e| match e {
        CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
