mod support;

use std::collections::{BTreeMap, BTreeSet};

use half_core::corpus::{
    build_vocab, encode_review, prepare, split_dataset, tokenize, CorpusConfig, RawRecord, PAD, UNK,
};
use half_core::synthetic::{make_synthetic, SyntheticConfig};
use proptest::prelude::*;
use rand::Rng;
use support::cases;

fn raw(u: usize, i: usize, text: &str, rating: f64) -> RawRecord {
    RawRecord {
        user_id: format!("u{u}"),
        item_id: format!("i{i}"),
        text: text.to_string(),
        rating,
    }
}

#[test]
fn vocabulary_keeps_the_most_frequent_tokens() {
    // 60 distinct words with seeded frequencies; V = 52 keeps the top 50.
    let mut rng = cases::rng(3);
    let words: Vec<String> = (0..60).map(|k| format!("tok{k}")).collect();
    let corpus: Vec<&str> = (0..1000)
        .map(|_| {
            // skewed draw so counts differ
            let a = rng.random_range(0..60);
            let b = rng.random_range(0..=a);
            words[b].as_str()
        })
        .collect();
    let text = corpus.join(" ");
    let vocab = build_vocab([text.as_str()], 52).unwrap();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &corpus {
        *counts.entry(w).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let want: Vec<&str> = ranked.iter().take(50).map(|(w, _)| *w).collect();

    assert_eq!(vocab.len(), 52);
    assert_eq!(vocab.token(PAD), Some("<pad>"));
    assert_eq!(vocab.token(UNK), Some("<unk>"));
    let got: Vec<&str> = (2..52).map(|k| vocab.token(k).unwrap()).collect();
    assert_eq!(got, want);
    for (w, _) in ranked.iter().skip(50) {
        assert_eq!(vocab.lookup(w), UNK);
    }
}

#[test]
fn encoding_pads_and_truncates() {
    let vocab = build_vocab(["a b c"], 10).unwrap();
    let toks = tokenize("c a zzz");
    let enc = encode_review(&toks, &vocab, 5);
    assert_eq!(enc.len(), 5);
    assert_eq!(&enc[3..], [PAD, PAD]);
    assert_eq!(enc[2], UNK);
    assert_eq!(encode_review(&toks, &vocab, 2).len(), 2);
}

proptest! {
    #[test]
    fn tokens_are_lowercase_alphanumeric_runs(text in "\\PC{0,60}") {
        let toks = tokenize(&text);
        // character-class oracle
        let mut want = Vec::new();
        let mut cur = String::new();
        for c in text.chars() {
            if c.is_alphanumeric() {
                cur.extend(c.to_lowercase());
            } else if !cur.is_empty() {
                want.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            want.push(cur);
        }
        prop_assert_eq!(toks, want);
    }
}

fn synthetic_records(seed: u64) -> Vec<RawRecord> {
    make_synthetic(&SyntheticConfig {
        seed,
        ..Default::default()
    })
    .records
}

#[test]
fn split_sizes_follow_the_ratios() {
    let records = synthetic_records(0);
    let n = records.len() as f64;
    let split = split_dataset(records, [0.8, 0.1, 0.1], 7).unwrap();
    let r = &split.report;
    let counts = [r.train, r.validation + r.dropped_validation, r.test + r.dropped_test];
    for (c, ratio) in counts.iter().zip([0.8, 0.1, 0.1]) {
        let frac = *c as f64 / n;
        assert!((frac - ratio).abs() < 0.05, "{frac} vs {ratio}");
    }
    assert_eq!(r.train + r.validation + r.test + r.dropped(), n as usize);
}

#[test]
fn split_is_idempotent_and_order_free() {
    let records = synthetic_records(1);
    let a = split_dataset(records.clone(), [0.7, 0.15, 0.15], 3).unwrap();
    let b = split_dataset(records.clone(), [0.7, 0.15, 0.15], 3).unwrap();
    assert_eq!(a, b);
    let mut reversed = records;
    reversed.reverse();
    let c = split_dataset(reversed, [0.7, 0.15, 0.15], 3).unwrap();
    let keys = |v: &[RawRecord]| -> BTreeSet<(String, String)> {
        v.iter().map(|r| (r.user_id.clone(), r.item_id.clone())).collect()
    };
    assert_eq!(keys(&a.train), keys(&c.train));
    assert_eq!(keys(&a.test), keys(&c.test));
}

#[test]
fn evaluation_entities_all_appear_in_train() {
    let split = split_dataset(synthetic_records(2), [0.6, 0.2, 0.2], 11).unwrap();
    let users: BTreeSet<&str> = split.train.iter().map(|r| r.user_id.as_str()).collect();
    let items: BTreeSet<&str> = split.train.iter().map(|r| r.item_id.as_str()).collect();
    for r in split.validation.iter().chain(&split.test) {
        assert!(users.contains(r.user_id.as_str()) && items.contains(r.item_id.as_str()));
    }
    for r in &split.dropped {
        assert!(!users.contains(r.user_id.as_str()) || !items.contains(r.item_id.as_str()));
    }
    assert_eq!(split.num_users(), users.len());
}

#[test]
fn bundles_hold_the_first_train_reviews_of_each_entity() {
    let cfg = CorpusConfig {
        vocab_size: 300,
        review_len: 12,
        reviews_per_entity: 4,
        ratios: [0.8, 0.1, 0.1],
        seed: 5,
    };
    let corpus = prepare(synthetic_records(3), &cfg).unwrap();
    let split = &corpus.split;

    // group-by oracle
    let mut by_user: BTreeMap<&str, Vec<&Vec<u32>>> = BTreeMap::new();
    for r in &split.train {
        by_user.entry(&r.user_id).or_default().push(&r.tokens);
    }
    for (id, &u) in &split.user_index {
        let b = &corpus.user_bundles[u];
        assert_eq!(&b.owner_id, id);
        let own = &by_user[id.as_str()];
        let real = own.len().min(4);
        assert_eq!(b.real_count(), real);
        for k in 0..4 {
            if k < real {
                assert_eq!(&b.reviews[k], own[k]);
            } else {
                assert!(!b.mask[k]);
                assert!(b.reviews[k].iter().all(|&t| t == PAD));
            }
        }
    }
    assert_eq!(corpus.item_bundles.len(), split.num_items());
}

#[test]
fn evaluation_text_never_reaches_vocabulary_or_bundles() {
    let mut records = synthetic_records(4);
    let split = split_dataset(records.clone(), [0.8, 0.1, 0.1], 9).unwrap();
    let held: BTreeSet<(String, String)> = split
        .validation
        .iter()
        .chain(&split.test)
        .map(|r| (r.user_id.clone(), r.item_id.clone()))
        .collect();
    for r in &mut records {
        if held.contains(&(r.user_id.clone(), r.item_id.clone())) {
            r.text = format!("leaked{} {}", r.user_id, r.text);
        }
    }
    let corpus = prepare(
        records,
        &CorpusConfig {
            vocab_size: 5000,
            review_len: 30,
            reviews_per_entity: 50,
            ratios: [0.8, 0.1, 0.1],
            seed: 9,
        },
    )
    .unwrap();
    assert!(corpus.vocab.corpus_tokens().iter().all(|t| !t.starts_with("leaked")));
    let n_train_reviews: usize = corpus.user_bundles.iter().map(|b| b.real_count()).sum();
    assert_eq!(n_train_reviews, corpus.split.train.len());
}

#[test]
fn split_rejects_bad_inputs() {
    assert!(split_dataset(Vec::<RawRecord>::new(), [0.8, 0.1, 0.1], 0).is_err());
    assert!(split_dataset(vec![raw(0, 0, "x", 1.0)], [0.8, 0.3, 0.1], 0).is_err());
    assert!(split_dataset(vec![raw(0, 0, "x", 1.0)], [1.0, 0.0, 0.0], 0).is_err());
    assert!(build_vocab(["x"], 2).is_err());
}

#[test]
fn synthetic_ratings_match_the_planted_mean() {
    let cfg = SyntheticConfig::default();
    let d = make_synthetic(&cfg);
    let n = d.records.len() as f64;
    let planted: f64 = d.pairs.iter().map(|&(u, i)| d.planted.score(u, i).clamp(1.0, 5.0)).sum::<f64>() / n;
    let observed: f64 = d.records.iter().map(|r| r.rating).sum::<f64>() / n;
    // clamping after the noise shifts this only slightly at noise_sd 0.3
    let three_sigma = 3.0 * cfg.noise_sd / n.sqrt();
    assert!((observed - planted).abs() < three_sigma, "{observed} vs {planted}");
    assert_eq!(d.records.len(), cfg.interactions);
}

#[test]
fn sentiment_words_carry_information_about_ratings() {
    let d = make_synthetic(&SyntheticConfig::default());
    // joint distribution of (rounded rating, sentiment level of each word)
    let mut joint = [[0.0f64; 6]; 6];
    for r in &d.records {
        let level = r.rating.round() as usize;
        for tok in tokenize(&r.text) {
            if let Some(k) = tok.strip_prefix("good").and_then(|k| k.parse::<usize>().ok()) {
                joint[level][k] += 1.0;
            }
        }
    }
    let total: f64 = joint.iter().flatten().sum();
    let row: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let col: Vec<f64> = (0..6).map(|k| joint.iter().map(|r| r[k]).sum::<f64>() / total).collect();
    let mut mi = 0.0;
    for a in 0..6 {
        for b in 0..6 {
            let p = joint[a][b] / total;
            if p > 0.0 {
                mi += p * (p / (row[a] * col[b])).ln();
            }
        }
    }
    assert!(mi > 0.1, "mutual information {mi}");
}

#[test]
fn tokenizer_handles_punctuation_and_cjk() {
    assert_eq!(tokenize("A+ sound,  A+价格"), ["a", "sound", "a", "价格"]);
    assert_eq!(tokenize("  \t\n"), Vec::<String>::new());
    assert_eq!(tokenize("Don't STOP"), ["don", "t", "stop"]);
}
