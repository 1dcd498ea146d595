//! The HALF rating model and its plain latent-factor baseline.
//!
//! Each side (User-Net, Item-Net) encodes every review in the entity's
//! bundle with a same-padded CNN followed by word-level attention, then
//! pools the review vectors with an attention whose query is the entity's
//! own latent factor row. The head concatenates review features with the
//! factor row per side, multiplies the two sides element-wise, maps the
//! result to a scalar and adds the shared biases before a final ReLU.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ReviewBundle, PAD};
use crate::error::{KernelError, ModelError};
use crate::params::{Frozen, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Half,
    Lfm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Half => "half",
            ModelKind::Lfm => "lfm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "half" => Some(ModelKind::Half),
            "lfm" => Some(ModelKind::Lfm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperParams {
    /// Vocabulary size, PAD and UNK included.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filters: usize,
    /// Convolution window; must be odd.
    pub window: usize,
    pub review_len: usize,
    pub reviews_per_entity: usize,
    pub factor_dim: usize,
    pub attn_dim: usize,
    pub activation: Activation,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            vocab_size: 20_000,
            embed_dim: 64,
            filters: 64,
            window: 3,
            review_len: 100,
            reviews_per_entity: 10,
            factor_dim: 16,
            attn_dim: 64,
            activation: Activation::Relu,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("filters", self.filters),
            ("window", self.window),
            ("review_len", self.review_len),
            ("reviews_per_entity", self.reviews_per_entity),
            ("factor_dim", self.factor_dim),
            ("attn_dim", self.attn_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::HyperParams(format!("{name} must be positive")));
            }
        }
        if self.window.is_multiple_of(2) {
            return Err(ModelError::HyperParams(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if self.vocab_size < 3 {
            return Err(ModelError::HyperParams(format!(
                "vocab_size must be at least 3, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl Side {
    fn suffix(self) -> &'static str {
        match self {
            Side::User => "u",
            Side::Item => "i",
        }
    }
}

/// Parameter handles of one review-encoding network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    /// Word-attention projection `a × K`.
    pub word_proj: ParamId,
    /// Word-attention query `a`.
    pub word_query: ParamId,
    /// Review-attention bilinear map `f × K`.
    pub review_proj: ParamId,
}

/// Every learnable tensor of the model, plus typed handles into the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub hp: HyperParams,
    pub num_users: usize,
    pub num_items: usize,
    pub store: ParamStore,
    pub embedding: ParamId,
    pub user_net: SideParams,
    pub item_net: SideParams,
    pub user_factors: ParamId,
    pub item_factors: ParamId,
    pub user_bias: ParamId,
    pub item_bias: ParamId,
    pub global_bias: ParamId,
    pub fuse: ParamId,
}

/// Names and shapes of every tensor, in storage order.
pub fn param_layout(hp: &HyperParams, users: usize, items: usize) -> Vec<(String, Vec<usize>)> {
    let (v, d, k, w, f, a) = (
        hp.vocab_size,
        hp.embed_dim,
        hp.filters,
        hp.window,
        hp.factor_dim,
        hp.attn_dim,
    );
    let mut out = vec![(String::from("E"), vec![v, d])];
    for side in [Side::User, Side::Item] {
        let s = side.suffix();
        out.push((format!("ConvW_{s}"), vec![k, d, w]));
        out.push((format!("ConvB_{s}"), vec![k]));
        out.push((format!("A_{s}"), vec![a, k]));
        out.push((format!("qw_{s}"), vec![a]));
        out.push((format!("A2_{s}"), vec![f, k]));
    }
    out.push((String::from("Q"), vec![users, f]));
    out.push((String::from("P"), vec![items, f]));
    out.push((String::from("Bu"), vec![users]));
    out.push((String::from("Bi"), vec![items]));
    out.push((String::from("mu"), vec![1]));
    out.push((String::from("Wfuse"), vec![1, k + f]));
    out
}

impl ParamSet {
    /// Wraps a store whose names and shapes follow [`param_layout`].
    pub fn from_store(
        hp: HyperParams,
        num_users: usize,
        num_items: usize,
        mut store: ParamStore,
    ) -> Result<Self, ModelError> {
        hp.validate()?;
        let layout = param_layout(&hp, num_users, num_items);
        if store.len() != layout.len() {
            return Err(ModelError::HyperParams(format!(
                "expected {} tensors, found {}",
                layout.len(),
                store.len()
            )));
        }
        for (i, (name, shape)) in layout.iter().enumerate() {
            let e = store.entry(ParamId(i));
            if &e.name != name || e.tensor.shape() != shape.as_slice() {
                return Err(ModelError::HyperParams(format!(
                    "tensor {i}: expected {name}{shape:?}, found {}{:?}",
                    e.name,
                    e.tensor.shape()
                )));
            }
            if !e.tensor.is_finite() {
                return Err(ModelError::Kernel(KernelError::NonFinite { op: "load" }));
            }
        }
        // PAD row is frozen whatever the source said.
        let embedding = ParamId(0);
        let rebuilt = store
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let frozen = if i == 0 {
                    Frozen::Rows(vec![PAD as usize])
                } else {
                    Frozen::None
                };
                (e.name.clone(), e.tensor.clone(), frozen)
            })
            .collect::<Vec<_>>();
        store = ParamStore::new();
        for (n, t, f) in rebuilt {
            store.push(n, t, f);
        }
        let side = |base: usize| SideParams {
            conv_w: ParamId(base),
            conv_b: ParamId(base + 1),
            word_proj: ParamId(base + 2),
            word_query: ParamId(base + 3),
            review_proj: ParamId(base + 4),
        };
        Ok(ParamSet {
            hp,
            num_users,
            num_items,
            store,
            embedding,
            user_net: side(1),
            item_net: side(6),
            user_factors: ParamId(11),
            item_factors: ParamId(12),
            user_bias: ParamId(13),
            item_bias: ParamId(14),
            global_bias: ParamId(15),
            fuse: ParamId(16),
        })
    }

    pub fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::User => &self.user_net,
            Side::Item => &self.item_net,
        }
    }

    pub fn global_mean(&self) -> f64 {
        self.store.get(self.global_bias).item()
    }

    fn check_user(&self, u: usize) -> Result<(), ModelError> {
        if u >= self.num_users {
            return Err(ModelError::UnknownEntity {
                kind: "user",
                index: u,
                count: self.num_users,
            });
        }
        Ok(())
    }

    fn check_item(&self, i: usize) -> Result<(), ModelError> {
        if i >= self.num_items {
            return Err(ModelError::UnknownEntity {
                kind: "item",
                index: i,
                count: self.num_items,
            });
        }
        Ok(())
    }
}

/// Glorot-uniform matrices, zero biases, `mu` set to the given mean and a
/// zero, frozen PAD embedding row. Deterministic in `seed`.
pub fn init_params(
    hp: &HyperParams,
    num_users: usize,
    num_items: usize,
    seed: u64,
    global_mean_rating: f64,
) -> Result<ParamSet, ModelError> {
    hp.validate()?;
    if !global_mean_rating.is_finite() {
        return Err(ModelError::HyperParams(format!(
            "global mean rating must be finite, got {global_mean_rating}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in param_layout(hp, num_users, num_items) {
        let tensor = match name.as_str() {
            "ConvB_u" | "ConvB_i" | "Bu" | "Bi" => Tensor::zeros(&shape),
            "mu" => Tensor::scalar(global_mean_rating),
            _ => {
                let (fan_in, fan_out) = fans(&shape);
                let s = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                let mut t = uniform(&shape, s, &mut rng);
                if name == "E" {
                    t.row_mut(PAD as usize).iter_mut().for_each(|v| *v = 0.0);
                }
                t
            }
        };
        store.push(name, tensor, Frozen::None);
    }
    ParamSet::from_store(*hp, num_users, num_items, store)
}

/// Fan-in and fan-out of a weight tensor: `[out, in]` matrices, `[out, in,
/// w]` filters, and vectors treated as single columns.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [r, c] => (*c, *r),
        [k, d, w] => (d * w, k * w),
        _ => (1, 1),
    }
}

fn uniform(shape: &[usize], s: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-s..s);
    }
    t
}

fn apply_activation(tape: &mut Tape<'_>, act: Activation, x: Var) -> Result<Var, KernelError> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Tape nodes for one encoded review.
#[derive(Debug, Clone, Copy)]
pub struct EncodedReview {
    /// Review vector `d`, shape `[K]`.
    pub d: Var,
    /// Word weights, shape `[T]`.
    pub alpha: Var,
}

/// Tape nodes for one side's review pooling.
#[derive(Debug, Clone)]
pub struct PooledSide {
    /// Feature vector `m`, shape `[K]`.
    pub m: Var,
    /// Review weights, shape `[N]`.
    pub beta: Var,
    /// Per-review word weights; `None` for masked or empty reviews.
    pub reviews: Vec<Option<EncodedReview>>,
}

/// Tape nodes for a full HALF prediction.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub rating: Var,
    pub user: PooledSide,
    pub item: PooledSide,
}

/// Embedding lookup: a `D×T` matrix whose column `t` is `E[tokens[t]]`.
pub fn embed_review_on(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    tokens: &[u32],
) -> Result<Var, ModelError> {
    let v = params.hp.vocab_size;
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
        return Err(ModelError::TokenOutOfRange {
            index: bad,
            vocab: v,
        });
    }
    Ok(tape.gather_columns(params.embedding, tokens)?)
}

/// Word-level encoder. Returns `None` for a review made only of PAD.
pub fn encode_review_on(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    tokens: &[u32],
    side: Side,
) -> Result<Option<EncodedReview>, ModelError> {
    let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
    let embedded = embed_review_on(tape, params, tokens)?;
    if !mask.iter().any(|&m| m) {
        return Ok(None);
    }
    let sp = *params.side(side);
    let t = tokens.len();
    let (w, b) = (tape.param(sp.conv_w), tape.param(sp.conv_b));
    let conv = tape.conv1d(embedded, w, b)?;
    let z = apply_activation(tape, params.hp.activation, conv)?; // K×T

    // g_t = qwᵀ · A · z_t
    let q = tape.param(sp.word_query);
    let q = tape.reshape(q, &[1, params.hp.attn_dim])?;
    let a = tape.param(sp.word_proj);
    let qa = tape.matmul(q, a)?; // 1×K
    let g = tape.matmul(qa, z)?; // 1×T
    let g = tape.reshape(g, &[t])?;
    let alpha = tape.softmax(g, Some(&mask))?;
    let zt = tape.transpose(z)?; // T×K
    let d = tape.weighted_sum(alpha, zt)?;
    Ok(Some(EncodedReview { d, alpha }))
}

/// Review-level attention over `ds` (rows of `N×K`), queried by a factor row.
/// `e_j = queryᵀ · A2 · d_j`; masked rows get exactly zero weight.
pub fn review_attention_on(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    ds: Var,
    mask: &[bool],
    query: Var,
    side: Side,
) -> Result<(Var, Var), ModelError> {
    if !mask.iter().any(|&m| m) {
        return Err(ModelError::EmptyBundle);
    }
    let sp = *params.side(side);
    let n = mask.len();
    let q = tape.reshape(query, &[1, params.hp.factor_dim])?;
    let a2 = tape.param(sp.review_proj);
    let qa = tape.matmul(q, a2)?; // 1×K
    let dst = tape.transpose(ds)?; // K×N
    let e = tape.matmul(qa, dst)?; // 1×N
    let e = tape.reshape(e, &[n])?;
    let beta = tape.softmax(e, Some(mask))?;
    let m = tape.weighted_sum(beta, ds)?;
    Ok((m, beta))
}

/// Encodes all reviews of a bundle and pools them with review attention.
pub fn pool_side_on(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    bundle: &ReviewBundle,
    query: Var,
    side: Side,
) -> Result<PooledSide, ModelError> {
    let k = params.hp.filters;
    let mut rows = Vec::with_capacity(bundle.reviews.len());
    let mut reviews = Vec::with_capacity(bundle.reviews.len());
    let mut zero = None;
    for (tokens, &real) in bundle.reviews.iter().zip(&bundle.mask) {
        let enc = if real {
            encode_review_on(tape, params, tokens, side)?
        } else {
            None
        };
        let d = match enc {
            Some(e) => e.d,
            None => *zero.get_or_insert(tape.constant(Tensor::zeros(&[k]))?),
        };
        rows.push(d);
        reviews.push(enc);
    }
    let ds = tape.stack(&rows)?;
    let (m, beta) = review_attention_on(tape, params, ds, &bundle.mask, query, side)?;
    Ok(PooledSide { m, beta, reviews })
}

/// `qᵤᵀ pᵢ + bᵤ + bᵢ + μ` on the tape.
pub fn lfm_on(tape: &mut Tape<'_>, params: &ParamSet, u: usize, i: usize) -> Result<Var, ModelError> {
    params.check_user(u)?;
    params.check_item(i)?;
    let q = tape.param_row(params.user_factors, u)?;
    let p = tape.param_row(params.item_factors, i)?;
    let qp = tape.hadamard(q, p)?;
    let dot = tape.sum(qp)?;
    add_biases(tape, params, dot, u, i)
}

/// `x + (bᵤ + bᵢ) + μ`. Summing the two entity biases first keeps the
/// result exactly symmetric under swapping users and items.
fn add_biases(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    x: Var,
    u: usize,
    i: usize,
) -> Result<Var, ModelError> {
    let bu = tape.param_elem(params.user_bias, u)?;
    let bi = tape.param_elem(params.item_bias, i)?;
    let mu = tape.param(params.global_bias);
    let b = tape.add(bu, bi)?;
    let y = tape.add(x, b)?;
    Ok(tape.add(y, mu)?)
}

/// `ReLU(W·((mᵤ ⊕ qᵤ) ⊙ (mᵢ ⊕ pᵢ)) + bᵤ + bᵢ + μ)` on the tape.
pub fn fuse_on(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    m_user: Var,
    m_item: Var,
    u: usize,
    i: usize,
) -> Result<Var, ModelError> {
    params.check_user(u)?;
    params.check_item(i)?;
    let width = params.hp.filters + params.hp.factor_dim;
    let q = tape.param_row(params.user_factors, u)?;
    let p = tape.param_row(params.item_factors, i)?;
    let pu = tape.concat(m_user, q)?;
    let qi = tape.concat(m_item, p)?;
    let h = tape.hadamard(pu, qi)?;
    let h = tape.reshape(h, &[width, 1])?;
    let w = tape.param(params.fuse);
    let s = tape.matmul(w, h)?;
    let s = tape.reshape(s, &[1])?;
    let pre = add_biases(tape, params, s, u, i)?;
    Ok(tape.relu(pre)?)
}

/// Full HALF forward for one (user, item) pair. The user side is queried
/// by `qᵤ`, the item side by `pᵢ`.
pub fn forward_on(
    tape: &mut Tape<'_>,
    params: &ParamSet,
    u: usize,
    i: usize,
    user_bundle: &ReviewBundle,
    item_bundle: &ReviewBundle,
) -> Result<ForwardNodes, ModelError> {
    params.check_user(u)?;
    params.check_item(i)?;
    let q = tape.param_row(params.user_factors, u)?;
    let user = pool_side_on(tape, params, user_bundle, q, Side::User)?;
    let p = tape.param_row(params.item_factors, i)?;
    let item = pool_side_on(tape, params, item_bundle, p, Side::Item)?;
    let rating = fuse_on(tape, params, user.m, item.m, u, i)?;
    Ok(ForwardNodes { rating, user, item })
}

/// A HALF prediction with every attention distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub rating: f64,
    /// Word weights per user review; all zeros for masked rows.
    pub word_attn_user: Vec<Vec<f64>>,
    pub word_attn_item: Vec<Vec<f64>>,
    pub review_attn_user: Vec<f64>,
    pub review_attn_item: Vec<f64>,
}

fn word_weights(tape: &Tape<'_>, side: &PooledSide, t: usize) -> Vec<Vec<f64>> {
    side.reviews
        .iter()
        .map(|r| match r {
            Some(e) => tape.value(e.alpha).data().to_vec(),
            None => vec![0.0; t],
        })
        .collect()
}

pub fn forward(
    params: &ParamSet,
    u: usize,
    i: usize,
    user_bundle: &ReviewBundle,
    item_bundle: &ReviewBundle,
) -> Result<Prediction, ModelError> {
    let mut tape = Tape::new(&params.store);
    let nodes = forward_on(&mut tape, params, u, i, user_bundle, item_bundle)?;
    let t = params.hp.review_len;
    Ok(Prediction {
        rating: tape.value(nodes.rating).item(),
        word_attn_user: word_weights(&tape, &nodes.user, t),
        word_attn_item: word_weights(&tape, &nodes.item, t),
        review_attn_user: tape.value(nodes.user.beta).data().to_vec(),
        review_attn_item: tape.value(nodes.item.beta).data().to_vec(),
    })
}

pub fn lfm_predict(params: &ParamSet, u: usize, i: usize) -> Result<f64, ModelError> {
    let mut tape = Tape::new(&params.store);
    let r = lfm_on(&mut tape, params, u, i)?;
    Ok(tape.value(r).item())
}

/// Rating prediction under either model kind.
pub fn predict(
    kind: ModelKind,
    params: &ParamSet,
    u: usize,
    i: usize,
    user_bundle: &ReviewBundle,
    item_bundle: &ReviewBundle,
) -> Result<f64, ModelError> {
    match kind {
        ModelKind::Half => forward(params, u, i, user_bundle, item_bundle).map(|p| p.rating),
        ModelKind::Lfm => lfm_predict(params, u, i),
    }
}

/// The `D×T` embedded review as a plain tensor.
pub fn embed_review(params: &ParamSet, tokens: &[u32]) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new(&params.store);
    let v = embed_review_on(&mut tape, params, tokens)?;
    Ok(tape.value(v).clone())
}

/// Encoded review `(d, α)`; an all-PAD review yields zero vectors and
/// `flagged = true`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewEncoding {
    pub d: Tensor,
    pub alpha: Tensor,
    pub flagged: bool,
}

pub fn encode_review(params: &ParamSet, tokens: &[u32], side: Side) -> Result<ReviewEncoding, ModelError> {
    let mut tape = Tape::new(&params.store);
    Ok(match encode_review_on(&mut tape, params, tokens, side)? {
        Some(e) => ReviewEncoding {
            d: tape.value(e.d).clone(),
            alpha: tape.value(e.alpha).clone(),
            flagged: false,
        },
        None => ReviewEncoding {
            d: Tensor::zeros(&[params.hp.filters]),
            alpha: Tensor::zeros(&[tokens.len()]),
            flagged: true,
        },
    })
}

/// Review attention over explicit review vectors; returns `(m, β)`.
pub fn review_attention(
    params: &ParamSet,
    ds: &Tensor,
    mask: &[bool],
    query: &Tensor,
    side: Side,
) -> Result<(Tensor, Tensor), ModelError> {
    let mut tape = Tape::new(&params.store);
    let ds = tape.constant(ds.clone())?;
    let q = tape.constant(query.clone())?;
    let (m, beta) = review_attention_on(&mut tape, params, ds, mask, q, side)?;
    Ok((tape.value(m).clone(), tape.value(beta).clone()))
}

/// Prediction head from explicit review features.
pub fn fuse_and_predict(
    params: &ParamSet,
    m_user: &Tensor,
    m_item: &Tensor,
    u: usize,
    i: usize,
) -> Result<f64, ModelError> {
    let mut tape = Tape::new(&params.store);
    let mu = tape.constant(m_user.clone())?;
    let mi = tape.constant(m_item.clone())?;
    let r = fuse_on(&mut tape, params, mu, mi, u, i)?;
    Ok(tape.value(r).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn tiny_hp() -> HyperParams {
        HyperParams {
            vocab_size: 12,
            embed_dim: 4,
            filters: 3,
            window: 3,
            review_len: 5,
            reviews_per_entity: 3,
            factor_dim: 2,
            attn_dim: 3,
            activation: Activation::Relu,
        }
    }

    fn bundle(rows: Vec<Vec<u32>>, mask: Vec<bool>) -> ReviewBundle {
        ReviewBundle {
            owner_id: String::from("x"),
            reviews: rows,
            mask,
        }
    }

    #[test]
    fn layout_shapes_and_pad_row() {
        let hp = tiny_hp();
        let p = init_params(&hp, 4, 5, 3, 3.5).unwrap();
        assert_eq!(p.store.get(p.embedding).shape(), &[12, 4]);
        assert!(p.store.get(p.embedding).row(0).iter().all(|&v| v == 0.0));
        assert_eq!(p.store.get(p.user_net.conv_w).shape(), &[3, 4, 3]);
        assert_eq!(p.store.get(p.fuse).shape(), &[1, 5]);
        assert_eq!(p.global_mean(), 3.5);
        assert!(p.store.is_frozen(p.embedding, 2));
        assert!(!p.store.is_frozen(p.embedding, 4));
    }

    #[test]
    fn init_is_deterministic() {
        let hp = tiny_hp();
        assert_eq!(
            init_params(&hp, 4, 5, 9, 1.0).unwrap(),
            init_params(&hp, 4, 5, 9, 1.0).unwrap()
        );
        assert_ne!(
            init_params(&hp, 4, 5, 9, 1.0).unwrap(),
            init_params(&hp, 4, 5, 10, 1.0).unwrap()
        );
    }

    #[test]
    fn rejects_bad_hyperparams() {
        let mut hp = tiny_hp();
        hp.window = 2;
        assert!(init_params(&hp, 1, 1, 0, 0.0).is_err());
        hp.window = 3;
        hp.filters = 0;
        assert!(init_params(&hp, 1, 1, 0, 0.0).is_err());
    }

    #[test]
    fn embed_all_pad_is_zero_and_bad_index_is_rejected() {
        let p = init_params(&tiny_hp(), 1, 1, 0, 0.0).unwrap();
        let m = embed_review(&p, &[0, 0, 0]).unwrap();
        assert_eq!(m.shape(), &[4, 3]);
        assert!(m.data().iter().all(|&v| v == 0.0));
        let one = embed_review(&p, &[7]).unwrap();
        assert_eq!(one.data(), p.store.get(p.embedding).row(7));
        assert!(matches!(
            embed_review(&p, &[12]),
            Err(ModelError::TokenOutOfRange { index: 12, .. })
        ));
    }

    #[test]
    fn all_pad_review_is_flagged() {
        let p = init_params(&tiny_hp(), 1, 1, 0, 0.0).unwrap();
        let e = encode_review(&p, &[0; 5], Side::User).unwrap();
        assert!(e.flagged);
        assert!(e.d.data().iter().all(|&v| v == 0.0));
        assert!(e.alpha.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_review() {
        let mut hp = tiny_hp();
        hp.review_len = 1;
        let p = init_params(&hp, 1, 1, 4, 0.0).unwrap();
        let e = encode_review(&p, &[5], Side::Item).unwrap();
        assert_eq!(e.alpha.data(), &[1.0]);
        // d = z₁ = relu(conv) at the only column: centre tap only
        let emb = p.store.get(p.embedding).row(5);
        let w = p.store.get(p.item_net.conv_w);
        for j in 0..3 {
            let z: f64 = (0..4).map(|c| w.data()[(j * 4 + c) * 3 + 1] * emb[c]).sum();
            assert!((e.d.data()[j] - z.max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_tokens_with_unit_window_give_uniform_alpha() {
        let mut hp = tiny_hp();
        hp.window = 1;
        hp.activation = Activation::Tanh;
        let p = init_params(&hp, 1, 1, 1, 0.0).unwrap();
        let e = encode_review(&p, &[4, 4, 4, 0, 0], Side::User).unwrap();
        for &a in &e.alpha.data()[..3] {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(&e.alpha.data()[3..], &[0.0, 0.0]);
        let z = encode_review(&p, &[4], Side::User).unwrap();
        for (a, b) in e.d.data().iter().zip(z.d.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn review_attention_symmetric_and_one_hot() {
        let p = init_params(&tiny_hp(), 1, 1, 2, 0.0).unwrap();
        let q = Tensor::vector(vec![0.4, -0.7]);
        let ds = Tensor::matrix(3, 3, [0.1, 0.2, 0.3].repeat(3)).unwrap();
        let (m, beta) = review_attention(&p, &ds, &[true; 3], &q, Side::User).unwrap();
        for &b in beta.data() {
            assert!((b - 1.0 / 3.0).abs() < 1e-12);
        }
        for (a, b) in m.data().iter().zip([0.1, 0.2, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }

        let ds = Tensor::matrix(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let (m, beta) = review_attention(&p, &ds, &[false, true, false], &q, Side::Item).unwrap();
        assert_eq!(beta.data(), &[0.0, 1.0, 0.0]);
        assert_eq!(m.data(), &[4.0, 5.0, 6.0]);

        assert_eq!(
            review_attention(&p, &ds, &[false; 3], &q, Side::Item),
            Err(ModelError::EmptyBundle)
        );
    }

    macro_rules! set {
        ($p:ident . $field:ident, $data:expr) => {{
            let id = $p.$field;
            $p.store.get_mut(id).data_mut().copy_from_slice(&$data);
        }};
    }

    #[test]
    fn lfm_hand_values() {
        let mut hp = tiny_hp();
        hp.factor_dim = 2;
        let mut p = init_params(&hp, 1, 1, 0, 3.0).unwrap();
        set!(p.user_factors, [1.0, 2.0]);
        set!(p.item_factors, [0.5, 0.5]);
        set!(p.user_bias, [0.1]);
        set!(p.item_bias, [0.2]);
        assert!((lfm_predict(&p, 0, 0).unwrap() - 4.8).abs() < 1e-12);

        set!(p.item_factors, [2.0, -1.0]);
        assert!((lfm_predict(&p, 0, 0).unwrap() - 3.3).abs() < 1e-12);

        set!(p.user_factors, [0.0, 0.0]);
        set!(p.user_bias, [0.0]);
        set!(p.item_bias, [0.0]);
        assert_eq!(lfm_predict(&p, 0, 0).unwrap(), 3.0);

        assert!(matches!(
            lfm_predict(&p, 1, 0),
            Err(ModelError::UnknownEntity { kind: "user", .. })
        ));
    }

    #[test]
    fn dead_fusion_path_and_relu_clamp() {
        let mut p = init_params(&tiny_hp(), 2, 2, 5, 2.0).unwrap();
        set!(p.fuse, [0.0; 5]);
        set!(p.user_bias, [0.25, 0.0]);
        set!(p.item_bias, [0.0, -0.5]);
        let m = Tensor::vector(vec![1.0, -2.0, 0.5]);
        assert_eq!(fuse_and_predict(&p, &m, &m, 0, 1).unwrap(), 1.75);

        set!(p.global_bias, [-1.75]);
        set!(p.user_bias, [0.0, 0.0]);
        set!(p.item_bias, [0.25, 0.0]);
        // pre-activation −1.5
        assert_eq!(fuse_and_predict(&p, &m, &m, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_deterministic_and_in_range() {
        let p = init_params(&tiny_hp(), 2, 2, 11, 3.0).unwrap();
        let ub = bundle(
            vec![vec![2, 3, 4, 0, 0], vec![5, 6, 0, 0, 0], vec![0; 5]],
            vec![true, true, false],
        );
        let ib = bundle(
            vec![vec![7, 8, 9, 10, 11], vec![0; 5], vec![0; 5]],
            vec![true, false, false],
        );
        let a = forward(&p, 1, 0, &ub, &ib).unwrap();
        let b = forward(&p, 1, 0, &ub, &ib).unwrap();
        assert_eq!(a, b);
        assert!(a.rating >= 0.0);
        assert_eq!(a.review_attn_item, vec![1.0, 0.0, 0.0]);
        assert_eq!(a.review_attn_user[2], 0.0);
        assert_eq!(a.word_attn_user[2], vec![0.0; 5]);
        assert_eq!(&a.word_attn_user[1][2..], &[0.0, 0.0, 0.0]);
        assert!(predict(ModelKind::Half, &p, 2, 0, &ub, &ib).is_err());
    }
}
