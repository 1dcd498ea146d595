//! MSE training with Adam, minibatching and early stopping.

use alloc::format;
use alloc::vec::Vec;
use alloc::collections::BTreeMap;
use alloc::string::String;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Interaction, PreparedCorpus, ReviewBundle};
use crate::error::{KernelError, ModelError, TrainError};
use crate::model::{self, HyperParams, ModelKind, ParamSet};
use crate::params::{Frozen, ParamGrads, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub model: ModelKind,
    /// Global L2 gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            model: ModelKind::Half,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let a = &self.adam;
        let bad = |msg: &str| Err(TrainError::Config(String::from(msg)));
        if !(a.learning_rate > 0.0) || !(a.eps > 0.0) {
            return bad("learning_rate and adam_eps must be positive");
        }
        if !(a.beta1 > 0.0 && a.beta1 < 1.0) || !(a.beta2 > 0.0 && a.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.tensor.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Frozen coordinates are left untouched.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(cfg.beta2, f64::from(t));
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let frozen = store.entry(id).frozen.clone();
        if frozen == Frozen::All {
            continue;
        }
        let g = grads.get(id).data();
        let m = state.m[id.0].data_mut();
        let v = state.v[id.0].data_mut();
        let tensor = store.get_mut(id);
        let row_len = tensor.row_len().max(1);
        let theta = tensor.data_mut();
        for k in 0..theta.len() {
            if let Frozen::Rows(rows) = &frozen {
                if rows.contains(&(k / row_len)) {
                    continue;
                }
            }
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            theta[k] -= cfg.learning_rate * mhat / (libm::sqrt(vhat) + cfg.eps);
        }
    }
}

/// `(1/B) Σ (p − t)²`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if predictions.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if predictions.len() != targets.len() {
        return Err(TrainError::Model(ModelError::Kernel(KernelError::ShapeMismatch {
            op: "mse_loss",
            left: alloc::vec![predictions.len()],
            right: alloc::vec![targets.len()],
        })));
    }
    let s: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(s / predictions.len() as f64)
}

/// A rating with its entity ids resolved to dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Resolves string ids; unknown users or items are errors.
pub fn resolve(
    interactions: &[Interaction],
    user_index: &BTreeMap<String, usize>,
    item_index: &BTreeMap<String, usize>,
) -> Result<Vec<Example>, ModelError> {
    interactions
        .iter()
        .map(|r| {
            let user = *user_index.get(&r.user_id).ok_or(ModelError::UnknownEntity {
                kind: "user",
                index: usize::MAX,
                count: user_index.len(),
            })?;
            let item = *item_index.get(&r.item_id).ok_or(ModelError::UnknownEntity {
                kind: "item",
                index: usize::MAX,
                count: item_index.len(),
            })?;
            Ok(Example {
                user,
                item,
                rating: r.rating,
            })
        })
        .collect()
}

/// Anything that predicts a rating on a tape from a parameter store.
pub trait RatingModel {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn predict_on<'a>(&'a self, tape: &mut Tape<'a>, example: &Example) -> Result<Var, ModelError>;
}

/// HALF or the LFM baseline together with the bundles it reads.
#[derive(Debug, Clone)]
pub struct Recommender<'b> {
    pub kind: ModelKind,
    pub params: ParamSet,
    pub user_bundles: &'b [ReviewBundle],
    pub item_bundles: &'b [ReviewBundle],
}

impl RatingModel for Recommender<'_> {
    fn store(&self) -> &ParamStore {
        &self.params.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params.store
    }

    fn predict_on<'a>(&'a self, tape: &mut Tape<'a>, ex: &Example) -> Result<Var, ModelError> {
        match self.kind {
            ModelKind::Lfm => model::lfm_on(tape, &self.params, ex.user, ex.item),
            ModelKind::Half => {
                let ub = self.user_bundles.get(ex.user).ok_or(ModelError::UnknownEntity {
                    kind: "user",
                    index: ex.user,
                    count: self.user_bundles.len(),
                })?;
                let ib = self.item_bundles.get(ex.item).ok_or(ModelError::UnknownEntity {
                    kind: "item",
                    index: ex.item,
                    count: self.item_bundles.len(),
                })?;
                Ok(model::forward_on(tape, &self.params, ex.user, ex.item, ub, ib)?.rating)
            }
        }
    }
}

pub fn predict_one<M: RatingModel>(model: &M, ex: &Example) -> Result<f64, ModelError> {
    let mut tape = Tape::new(model.store());
    let r = model.predict_on(&mut tape, ex)?;
    Ok(tape.value(r).item())
}

/// Mean squared error over `examples`; never mutates the model.
pub fn evaluate<M: RatingModel>(model: &M, examples: &[Example]) -> Result<f64, TrainError> {
    let mut preds = Vec::with_capacity(examples.len());
    for ex in examples {
        preds.push(predict_one(model, ex)?);
    }
    let targets: Vec<f64> = examples.iter().map(|e| e.rating).collect();
    mse_loss(&preds, &targets)
}

/// Squared-error sum of one minibatch, with its gradient (of the batch
/// mean) accumulated into `grads`.
pub fn batch_gradient<M: RatingModel>(
    model: &M,
    batch: &[Example],
    grads: &mut ParamGrads,
) -> Result<f64, ModelError> {
    let scale = 1.0 / batch.len() as f64;
    let mut sse = 0.0;
    for ex in batch {
        let mut tape = Tape::new(model.store());
        let pred = model.predict_on(&mut tape, ex)?;
        let target = tape.constant(Tensor::scalar(ex.rating))?;
        let loss = tape.mse(pred, target)?;
        let loss = tape.scale(loss, scale)?;
        sse += tape.value(loss).item() / scale;
        tape.backward_into(loss, grads)?;
    }
    grads.mask_frozen(model.store());
    Ok(sse)
}

/// Wall-clock source for epoch timings.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that always reads zero.
impl Clock for () {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    /// `None` when there is no validation data.
    pub validation_mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_score: f64,
}

fn diverged(e: ModelError, epoch: usize, batch: usize) -> TrainError {
    match e {
        ModelError::Kernel(KernelError::NonFinite { .. }) => TrainError::Diverged { epoch, batch },
        other => TrainError::Model(other),
    }
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation MSE (train MSE when `validation` is
/// empty). Deterministic for a fixed config.
pub fn train<M: RatingModel>(
    model: &mut M,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut state = AdamState::new(model.store());
    let mut grads = ParamGrads::zeros_like(model.store());
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut reports = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let start = clock.seconds();
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut batch_buf = Vec::with_capacity(cfg.batch_size);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&k| train_set[k]));
            grads.fill_zero();
            let batch_sse =
                batch_gradient(model, &batch_buf, &mut grads).map_err(|e| diverged(e, epoch, b))?;
            if !batch_sse.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            sse += batch_sse;
            if let Some(cap) = cfg.grad_clip {
                let norm = grads.l2_norm();
                if norm > cap {
                    grads.scale(cap / norm);
                }
            }
            adam_step(model.store_mut(), &grads, &mut state, &cfg.adam);
            if !model.store().all_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
        }
        let train_mse = sse / train_set.len() as f64;
        let validation_mse = if validation.is_empty() {
            None
        } else {
            Some(evaluate(model, validation)?)
        };
        let report = EpochReport {
            epoch,
            train_mse,
            validation_mse,
            seconds: clock.seconds() - start,
        };
        on_epoch(&report);
        reports.push(report);

        let score = validation_mse.unwrap_or(train_mse);
        match &best {
            Some((b, _, _)) if score >= *b => stale += 1,
            _ => {
                best = Some((score, epoch, model.store().clone()));
                stale = 0;
            }
        }
        if stale >= cfg.patience {
            break;
        }
    }

    let (best_score, best_epoch, store) = best.expect("at least one epoch ran");
    *model.store_mut() = store;
    Ok(TrainSummary {
        reports,
        best_epoch,
        best_score,
    })
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: ParamSet,
    pub summary: TrainSummary,
}

/// Mean rating of a set of interactions.
pub fn mean_rating(interactions: &[Interaction]) -> f64 {
    if interactions.is_empty() {
        return 0.0;
    }
    interactions.iter().map(|r| r.rating).sum::<f64>() / interactions.len() as f64
}

/// Initializes parameters for a prepared corpus and trains them. The
/// vocabulary size is taken from the corpus; `hp.review_len` and
/// `hp.reviews_per_entity` must match the bundles.
pub fn fit(
    corpus: &PreparedCorpus,
    hp: &HyperParams,
    cfg: &TrainConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<FitOutcome, TrainError> {
    let mut hp = *hp;
    hp.vocab_size = corpus.vocab.len().max(3);
    if let Some(b) = corpus.user_bundles.first() {
        if b.reviews.len() != hp.reviews_per_entity
            || b.reviews.first().map(Vec::len) != Some(hp.review_len)
        {
            return Err(TrainError::Config(format!(
                "bundles are {}x{}, hyperparameters say {}x{}",
                b.reviews.len(),
                b.reviews.first().map_or(0, Vec::len),
                hp.reviews_per_entity,
                hp.review_len
            )));
        }
    }
    let split = &corpus.split;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let train_set = resolve(&split.train, &split.user_index, &split.item_index)?;
    let validation = resolve(&split.validation, &split.user_index, &split.item_index)?;
    let params = model::init_params(
        &hp,
        split.num_users(),
        split.num_items(),
        cfg.seed,
        mean_rating(&split.train),
    )?;
    let mut rec = Recommender {
        kind: cfg.model,
        params,
        user_bundles: &corpus.user_bundles,
        item_bundles: &corpus.item_bundles,
    };
    let summary = train(&mut rec, &train_set, &validation, cfg, clock, on_epoch)?;
    Ok(FitOutcome {
        params: rec.params,
        summary,
    })
}
