//! Seeded random models and bundles shared by the integration suites.

#![allow(dead_code)]

use half_core::corpus::{ReviewBundle, PAD};
use half_core::model::{self, Activation, HyperParams, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_hp(rng: &mut ChaCha8Rng) -> HyperParams {
    let activation = match rng.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        _ => Activation::Sigmoid,
    };
    HyperParams {
        vocab_size: rng.random_range(5..40),
        embed_dim: rng.random_range(1..7),
        filters: rng.random_range(1..7),
        window: [1, 3, 5][rng.random_range(0..3)],
        review_len: rng.random_range(1..9),
        reviews_per_entity: rng.random_range(1..5),
        factor_dim: rng.random_range(1..5),
        attn_dim: rng.random_range(1..6),
        activation,
    }
}

/// A bundle with at least one real review. Real reviews may be ragged,
/// and occasionally entirely PAD when `allow_empty` is set.
pub fn random_bundle(rng: &mut ChaCha8Rng, hp: &HyperParams, allow_empty: bool) -> ReviewBundle {
    let (n, t) = (hp.reviews_per_entity, hp.review_len);
    let mut reviews = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for r in 0..n {
        let real = r == 0 || rng.random_bool(0.6);
        let mut row = vec![PAD; t];
        if real {
            let len = if allow_empty && r > 0 && rng.random_bool(0.1) {
                0
            } else {
                rng.random_range(1..=t)
            };
            for slot in row.iter_mut().take(len) {
                *slot = rng.random_range(1..hp.vocab_size as u32);
            }
        }
        reviews.push(row);
        mask.push(real);
    }
    ReviewBundle {
        owner_id: String::from("x"),
        reviews,
        mask,
    }
}

/// Initialized parameters with every tensor, including biases, randomized.
pub fn random_params(rng: &mut ChaCha8Rng, hp: &HyperParams, users: usize, items: usize) -> ParamSet {
    let seed = rng.random();
    let mut p = model::init_params(hp, users, items, seed, 3.0).unwrap();
    for id in p.store.ids().collect::<Vec<_>>() {
        let name = p.store.name(id).to_string();
        let scale = if name == "mu" { 3.0 } else { 1.0 };
        for v in p.store.get_mut(id).data_mut() {
            *v = scale * rng.random_range(-1.0..1.0);
        }
    }
    let e = p.embedding;
    p.store.get_mut(e).row_mut(PAD as usize).fill(0.0);
    p
}

/// One random HALF instance: parameters plus a user and item bundle.
pub struct Case {
    pub params: ParamSet,
    pub user: usize,
    pub item: usize,
    pub user_bundle: ReviewBundle,
    pub item_bundle: ReviewBundle,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = rng(seed);
    let hp = random_hp(&mut rng);
    let (users, items) = (rng.random_range(1..4), rng.random_range(1..4));
    let params = random_params(&mut rng, &hp, users, items);
    Case {
        user: rng.random_range(0..users),
        item: rng.random_range(0..items),
        user_bundle: random_bundle(&mut rng, &hp, true),
        item_bundle: random_bundle(&mut rng, &hp, true),
        params,
    }
}
