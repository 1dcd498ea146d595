//! Planted-factor review datasets for desk-scale experiments.
//!
//! Ratings come from a latent factor model with known parameters plus
//! Gaussian noise. Every review carries sentiment words whose distribution
//! depends on the rating (word `good{r}` is most likely under rating `r`),
//! aspect words describing the item's planted factors, taste words
//! describing the user's planted factors, and uniformly drawn filler.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::RawRecord;

/// Dimension of the planted factor model.
pub const PLANTED_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    /// Number of distinct (user, item) pairs to rate.
    pub interactions: usize,
    /// Size of the filler vocabulary.
    pub vocab_words: usize,
    pub noise_sd: f64,
    pub global_mean: f64,
    pub bias_sd: f64,
    pub factor_sd: f64,
    /// Words per review: sentiment, aspect, taste and filler.
    pub sentiment_words: usize,
    pub aspect_words: usize,
    pub taste_words: usize,
    pub filler_words: usize,
    /// Probability that a sentiment word names the exact rounded rating.
    pub sentiment_precision: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            users: 200,
            items: 200,
            interactions: 4000,
            vocab_words: 200,
            noise_sd: 0.3,
            global_mean: 3.5,
            bias_sd: 0.4,
            factor_sd: 0.6,
            sentiment_words: 3,
            aspect_words: 4,
            taste_words: 4,
            filler_words: 6,
            sentiment_precision: 0.7,
        }
    }
}

/// The generator's hidden parameters, for oracle computations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: Vec<[f64; PLANTED_DIM]>,
    pub item_factors: Vec<[f64; PLANTED_DIM]>,
    pub noise_sd: f64,
}

impl PlantedModel {
    /// Noise-free rating before clamping to `[1, 5]`.
    pub fn score(&self, u: usize, i: usize) -> f64 {
        let dot: f64 = self.user_factors[u]
            .iter()
            .zip(&self.item_factors[i])
            .map(|(a, b)| a * b)
            .sum();
        self.global_mean + self.user_bias[u] + self.item_bias[i] + dot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<RawRecord>,
    pub planted: PlantedModel,
    /// `(user index, item index)` of each record.
    pub pairs: Vec<(usize, usize)>,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:04}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i:04}")
}

/// Sentiment word most associated with rounded rating `r` in `1..=5`.
pub fn sentiment_word(r: usize) -> String {
    format!("good{r}")
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

/// Generates a dataset; identical configs give identical output.
pub fn make_synthetic(cfg: &SyntheticConfig) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bias = Normal::new(0.0, cfg.bias_sd.max(0.0)).expect("finite sd");
    let factor = Normal::new(0.0, cfg.factor_sd.max(0.0)).expect("finite sd");
    let noise = Normal::new(0.0, cfg.noise_sd.max(0.0)).expect("finite sd");

    let draw_factors = |n: usize, rng: &mut ChaCha8Rng| -> Vec<[f64; PLANTED_DIM]> {
        (0..n)
            .map(|_| {
                let mut f = [0.0; PLANTED_DIM];
                f.iter_mut().for_each(|v| *v = factor.sample(rng));
                f
            })
            .collect()
    };
    let user_factors = draw_factors(cfg.users, &mut rng);
    let item_factors = draw_factors(cfg.items, &mut rng);
    let user_bias: Vec<f64> = (0..cfg.users).map(|_| bias.sample(&mut rng)).collect();
    let item_bias: Vec<f64> = (0..cfg.items).map(|_| bias.sample(&mut rng)).collect();
    let planted = PlantedModel {
        global_mean: cfg.global_mean,
        user_bias,
        item_bias,
        user_factors,
        item_factors,
        noise_sd: cfg.noise_sd,
    };

    let capacity = cfg.users * cfg.items;
    let wanted = cfg.interactions.min(capacity);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(wanted);
    while pairs.len() < wanted {
        let p = (rng.random_range(0..cfg.users), rng.random_range(0..cfg.items));
        if seen.insert(p) {
            pairs.push(p);
        }
    }

    let mut records = Vec::with_capacity(wanted);
    for &(u, i) in &pairs {
        let rating = (planted.score(u, i) + noise.sample(&mut rng)).clamp(1.0, 5.0);
        let text = review_text(cfg, &planted, u, i, rating, &mut rng);
        records.push(RawRecord {
            user_id: user_id(u),
            item_id: item_id(i),
            text,
            rating,
        });
    }
    SyntheticDataset {
        records,
        planted,
        pairs,
    }
}

/// Word for a signed factor coordinate: `{prefix}{k}hi` / `{prefix}{k}lo`.
fn factor_word(prefix: &str, k: usize, value: f64) -> String {
    format!("{prefix}{k}{}", if value >= 0.0 { "hi" } else { "lo" })
}

/// Picks a factor coordinate with probability proportional to `|value|`.
fn weighted_coord(f: &[f64; PLANTED_DIM], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = f.iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        return rng.random_range(0..PLANTED_DIM);
    }
    let mut x = rng.random_range(0.0..total);
    for (k, v) in f.iter().enumerate() {
        x -= v.abs();
        if x < 0.0 {
            return k;
        }
    }
    PLANTED_DIM - 1
}

fn review_text(
    cfg: &SyntheticConfig,
    planted: &PlantedModel,
    u: usize,
    i: usize,
    rating: f64,
    rng: &mut ChaCha8Rng,
) -> String {
    let r = libm::round(rating).clamp(1.0, 5.0) as usize;
    let mut words: Vec<String> = Vec::new();
    for _ in 0..cfg.sentiment_words {
        let level = if rng.random_bool(cfg.sentiment_precision.clamp(0.0, 1.0)) {
            r
        } else {
            let neighbours: Vec<usize> = [r.wrapping_sub(1), r + 1]
                .into_iter()
                .filter(|k| (1..=5).contains(k))
                .collect();
            pick(rng, &neighbours)
        };
        words.push(sentiment_word(level));
    }
    for _ in 0..cfg.aspect_words {
        let k = weighted_coord(&planted.item_factors[i], rng);
        words.push(factor_word("aspect", k, planted.item_factors[i][k]));
    }
    for _ in 0..cfg.taste_words {
        let k = weighted_coord(&planted.user_factors[u], rng);
        words.push(factor_word("taste", k, planted.user_factors[u][k]));
    }
    for _ in 0..cfg.filler_words {
        words.push(format!("w{}", rng.random_range(0..cfg.vocab_words.max(1))));
    }
    // Fisher-Yates so signal words appear at random positions
    for k in (1..words.len()).rev() {
        let j = rng.random_range(0..=k);
        words.swap(k, j);
    }
    let mut text = words.join(" ");
    text.push('.');
    text
}
