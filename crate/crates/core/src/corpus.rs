//! Review corpus preparation: tokenization, vocabulary, deterministic
//! splitting and fixed-shape per-entity review bundles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CorpusError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

/// One raw review as read from a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub item_id: String,
    pub text: String,
    pub rating: f64,
}

/// One encoded training example. `tokens` always has the configured length.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub tokens: Vec<u32>,
}

/// Records that carry a (user, item) key.
pub trait Keyed {
    fn user_id(&self) -> &str;
    fn item_id(&self) -> &str;
}

impl Keyed for RawRecord {
    fn user_id(&self) -> &str {
        &self.user_id
    }
    fn item_id(&self) -> &str {
        &self.item_id
    }
}

impl Keyed for Interaction {
    fn user_id(&self) -> &str {
        &self.user_id
    }
    fn item_id(&self) -> &str {
        &self.item_id
    }
}

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// Token ↔ index map. Index 0 is PAD, index 1 is UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    pub const PAD_TOKEN: &'static str = "<pad>";
    pub const UNK_TOKEN: &'static str = "<unk>";

    /// Rebuilds a vocabulary from corpus tokens listed in index order,
    /// starting at index 2.
    pub fn from_tokens(corpus_tokens: Vec<String>) -> Self {
        let mut tokens = vec![
            String::from(Self::PAD_TOKEN),
            String::from(Self::UNK_TOKEN),
        ];
        tokens.extend(corpus_tokens);
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Number of indices in use, including PAD and UNK.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    /// Corpus tokens in index order (indices 2..).
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Keeps the `size - 2` most frequent tokens of the given texts; equal counts
/// are ordered lexicographically.
pub fn build_vocab<'a, I>(texts: I, size: usize) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = &'a str>,
{
    if size < 3 {
        return Err(CorpusError::VocabTooSmall(size));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps it for ties.
    ranked.sort_by_key(|r| core::cmp::Reverse(r.1));
    ranked.truncate(size - 2);
    Ok(Vocabulary::from_tokens(
        ranked.into_iter().map(|(t, _)| t).collect(),
    ))
}

/// Maps tokens to indices, truncating the tail or right-padding with PAD to
/// exactly `len` entries.
pub fn encode_review<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = tokens
        .iter()
        .take(len)
        .map(|t| vocab.lookup(t.as_ref()))
        .collect();
    out.resize(len, PAD);
    out
}

/// Outcome counts of [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitReport {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub dropped_validation: usize,
    pub dropped_test: usize,
    pub warnings: Vec<String>,
}

impl SplitReport {
    pub fn dropped(&self) -> usize {
        self.dropped_validation + self.dropped_test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<R> {
    pub train: Vec<R>,
    pub validation: Vec<R>,
    pub test: Vec<R>,
    /// Validation/test records whose user or item never occurs in train.
    pub dropped: Vec<R>,
    pub user_index: BTreeMap<String, usize>,
    pub item_index: BTreeMap<String, usize>,
    pub report: SplitReport,
}

impl<R> DatasetSplit<R> {
    pub fn num_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_index.len()
    }

    /// Applies `f` to every record, keeping indices and report.
    pub fn map<S>(self, mut f: impl FnMut(R) -> S) -> DatasetSplit<S> {
        DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect(),
            validation: self.validation.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
            dropped: self.dropped.into_iter().map(&mut f).collect(),
            user_index: self.user_index,
            item_index: self.item_index,
            report: self.report,
        }
    }
}

/// Seeded 64-bit hash of a (user, item) key.
pub fn pair_hash(seed: u64, user_id: &str, item_id: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(user_id.bytes())
        .chain(core::iter::once(0x1f))
        .chain(item_id.bytes());
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer to spread FNV's weak low bits
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Which split a key hashes into: 0 train, 1 validation, 2 test.
pub fn assign_split(seed: u64, user_id: &str, item_id: &str, ratios: [f64; 3]) -> usize {
    let u = (pair_hash(seed, user_id, item_id) >> 11) as f64 / (1u64 << 53) as f64;
    if u < ratios[0] {
        0
    } else if u < ratios[0] + ratios[1] {
        1
    } else {
        2
    }
}

/// Splits records by a seeded hash of their (user, item) key, then drops
/// validation/test records whose user or item is absent from train.
pub fn split_dataset<R: Keyed>(
    records: Vec<R>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<R>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }

    let mut parts: [Vec<R>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for r in records {
        let k = assign_split(seed, r.user_id(), r.item_id(), ratios);
        parts[k].push(r);
    }
    let [train, val, test] = parts;
    Ok(split_from_parts(train, val, test))
}

/// Builds a split from records already divided into train, validation and
/// test, dropping cold-start evaluation records as [`split_dataset`] does.
pub fn split_from_parts<R: Keyed>(train: Vec<R>, val: Vec<R>, test: Vec<R>) -> DatasetSplit<R> {
    let mut user_index = BTreeMap::new();
    let mut item_index = BTreeMap::new();
    for r in &train {
        let n = user_index.len();
        user_index.entry(String::from(r.user_id())).or_insert(n);
        let n = item_index.len();
        item_index.entry(String::from(r.item_id())).or_insert(n);
    }

    let covered =
        |r: &R| user_index.contains_key(r.user_id()) && item_index.contains_key(r.item_id());
    let mut dropped = Vec::new();
    let (validation, dv): (Vec<R>, Vec<R>) = val.into_iter().partition(|r| covered(r));
    let (test, dt): (Vec<R>, Vec<R>) = test.into_iter().partition(|r| covered(r));
    let report_counts = (dv.len(), dt.len());
    dropped.extend(dv);
    dropped.extend(dt);

    let mut report = SplitReport {
        train: train.len(),
        validation: validation.len(),
        test: test.len(),
        dropped_validation: report_counts.0,
        dropped_test: report_counts.1,
        warnings: Vec::new(),
    };
    for (name, n) in [
        ("train", report.train),
        ("validation", report.validation),
        ("test", report.test),
    ] {
        if n == 0 {
            report.warnings.push(format!("{name} split is empty"));
        }
    }

    DatasetSplit {
        train,
        validation,
        test,
        dropped,
        user_index,
        item_index,
        report,
    }
}

/// A fixed `N × T` block of one entity's reviews.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewBundle {
    pub owner_id: String,
    pub reviews: Vec<Vec<u32>>,
    /// `true` for real reviews, `false` for all-PAD filler rows.
    pub mask: Vec<bool>,
}

impl ReviewBundle {
    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-user and per-item bundles built from the training split only,
/// indexed by the split's dense user and item indices.
pub fn build_bundles(
    split: &DatasetSplit<Interaction>,
    reviews_per_entity: usize,
    review_len: usize,
) -> Result<(Vec<ReviewBundle>, Vec<ReviewBundle>), CorpusError> {
    if reviews_per_entity == 0 {
        return Err(CorpusError::ZeroLength("reviews per entity"));
    }
    if review_len == 0 {
        return Err(CorpusError::ZeroLength("review length"));
    }
    let users = group_bundles(
        &split.train,
        &split.user_index,
        |r| &r.user_id,
        reviews_per_entity,
        review_len,
    );
    let items = group_bundles(
        &split.train,
        &split.item_index,
        |r| &r.item_id,
        reviews_per_entity,
        review_len,
    );
    Ok((users, items))
}

fn group_bundles<'a>(
    train: &'a [Interaction],
    index: &BTreeMap<String, usize>,
    key: impl Fn(&'a Interaction) -> &'a String,
    n: usize,
    t: usize,
) -> Vec<ReviewBundle> {
    let mut owners = vec![String::new(); index.len()];
    for (id, &i) in index {
        owners[i] = id.clone();
    }
    let mut bundles: Vec<ReviewBundle> = owners
        .into_iter()
        .map(|owner_id| ReviewBundle {
            owner_id,
            reviews: Vec::with_capacity(n),
            mask: Vec::with_capacity(n),
        })
        .collect();
    for r in train {
        let b = &mut bundles[index[key(r)]];
        if b.reviews.len() < n {
            let mut toks = r.tokens.clone();
            toks.resize(t, PAD);
            b.reviews.push(toks);
            b.mask.push(true);
        }
    }
    for b in &mut bundles {
        while b.reviews.len() < n {
            b.reviews.push(vec![PAD; t]);
            b.mask.push(false);
        }
    }
    bundles
}

/// Corpus pipeline settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub review_len: usize,
    pub reviews_per_entity: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Everything the model needs from a raw dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub split: DatasetSplit<Interaction>,
    pub user_bundles: Vec<ReviewBundle>,
    pub item_bundles: Vec<ReviewBundle>,
}

/// Encodes an already split raw dataset: vocabulary from train texts only,
/// then fixed-length token sequences and bundles.
pub fn prepare_split(
    split: DatasetSplit<RawRecord>,
    vocab_size: usize,
    review_len: usize,
    reviews_per_entity: usize,
) -> Result<PreparedCorpus, CorpusError> {
    if review_len == 0 {
        return Err(CorpusError::ZeroLength("review length"));
    }
    let vocab = build_vocab(split.train.iter().map(|r| r.text.as_str()), vocab_size)?;
    let split = split.map(|r| encode_record(r, &vocab, review_len));
    let (user_bundles, item_bundles) = build_bundles(&split, reviews_per_entity, review_len)?;
    Ok(PreparedCorpus {
        vocab,
        split,
        user_bundles,
        item_bundles,
    })
}

/// Full pipeline: split, vocabulary, encoding, bundles.
pub fn prepare(records: Vec<RawRecord>, config: &CorpusConfig) -> Result<PreparedCorpus, CorpusError> {
    let split = split_dataset(records, config.ratios, config.seed)?;
    prepare_split(
        split,
        config.vocab_size,
        config.review_len,
        config.reviews_per_entity,
    )
}

pub fn encode_record(r: RawRecord, vocab: &Vocabulary, review_len: usize) -> Interaction {
    let tokens = encode_review(&tokenize(&r.text), vocab, review_len);
    Interaction {
        user_id: r.user_id,
        item_id: r.item_id,
        rating: r.rating,
        tokens,
    }
}
