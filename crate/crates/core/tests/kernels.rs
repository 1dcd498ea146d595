mod support;

use half_core::gradcheck::{grad_check, GradCheckConfig};
use half_core::params::{Frozen, ParamStore};
use half_core::tensor::{self, Tensor};
use half_core::Tape;
use proptest::prelude::*;
use rand::Rng;
use support::{cases, oracle};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matmul_matches_loops() {
    for seed in 0..100 {
        let mut rng = cases::rng(seed);
        let (m, k, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let a = cases::random_vec(&mut rng, m * k);
        let b = cases::random_vec(&mut rng, k * n);
        let got = tensor::matmul(
            &Tensor::matrix(m, k, a.clone()).unwrap(),
            &Tensor::matrix(k, n, b.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(got.shape(), [m, n]);
        assert!(max_abs_diff(got.data(), &oracle::naive_matmul(&a, &b, m, k, n)) < 1e-12);
    }
}

#[test]
fn conv1d_matches_loops() {
    for seed in 0..100 {
        let mut rng = cases::rng(1000 + seed);
        let (d, t, k) = (rng.random_range(1..6), rng.random_range(1..10), rng.random_range(1..6));
        let w = [1, 3, 5, 7][rng.random_range(0..4)];
        let x = cases::random_vec(&mut rng, d * t);
        let f = cases::random_vec(&mut rng, k * d * w);
        let b = cases::random_vec(&mut rng, k);
        let got = tensor::conv1d(
            &Tensor::new(vec![d, t], x.clone()).unwrap(),
            &Tensor::new(vec![k, d, w], f.clone()).unwrap(),
            &Tensor::vector(b.clone()),
        )
        .unwrap();
        assert_eq!(got.shape(), [k, t]);
        let want = oracle::naive_conv1d(&x, &f, &b, d, t, k, w);
        assert!(max_abs_diff(got.data(), &want) < 1e-12, "seed {seed}");
    }
}

#[test]
fn weighted_sum_matches_loops() {
    for seed in 0..100 {
        let mut rng = cases::rng(2000 + seed);
        let (n, k) = (rng.random_range(1..9), rng.random_range(1..9));
        let w = cases::random_vec(&mut rng, n);
        let v = cases::random_vec(&mut rng, n * k);
        let got = tensor::weighted_sum(
            &Tensor::vector(w.clone()),
            &Tensor::matrix(n, k, v.clone()).unwrap(),
        )
        .unwrap();
        assert!(max_abs_diff(got.data(), &oracle::naive_weighted_sum(&w, &v, k)) < 1e-12);
    }
}

fn logits_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(x, mut m)| {
                m[0] = true;
                (x, m)
            })
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution_on_the_mask((x, mask) in logits_and_mask()) {
        let s = tensor::softmax(&Tensor::vector(x), Some(&mask)).unwrap();
        let total: f64 = s.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (p, keep) in s.data().iter().zip(&mask) {
            prop_assert!(*p >= 0.0);
            if !keep {
                prop_assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn softmax_ignores_a_constant_shift((x, mask) in logits_and_mask(), c in -100.0f64..100.0) {
        let a = tensor::softmax(&Tensor::vector(x.clone()), Some(&mask)).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = tensor::softmax(&Tensor::vector(shifted), Some(&mask)).unwrap();
        prop_assert!(max_abs_diff(a.data(), b.data()) < 1e-12);
    }

    #[test]
    fn softmax_matches_the_reference((x, mask) in logits_and_mask()) {
        let s = tensor::softmax(&Tensor::vector(x.clone()), Some(&mask)).unwrap();
        prop_assert!(max_abs_diff(s.data(), &oracle::masked_softmax(&x, &mask)) < 1e-12);
    }

    #[test]
    fn softmax_is_monotone_in_the_logits((x, mask) in logits_and_mask()) {
        let s = tensor::softmax(&Tensor::vector(x.clone()), Some(&mask)).unwrap();
        for i in 0..x.len() {
            for j in 0..x.len() {
                if mask[i] && mask[j] && x[i] > x[j] {
                    prop_assert!(s.data()[i] >= s.data()[j]);
                }
            }
        }
    }
}

fn store_with(tensors: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in tensors {
        s.push(String::from(*name), t.clone(), Frozen::None);
    }
    s
}

#[test]
fn elementwise_ops_pass_finite_differences() {
    let mut rng = cases::rng(7);
    let store = store_with(&[
        ("a", Tensor::vector(cases::random_vec(&mut rng, 5))),
        ("b", Tensor::vector(cases::random_vec(&mut rng, 5))),
        ("c", Tensor::vector(cases::random_vec(&mut rng, 10))),
    ]);
    let ids: Vec<_> = store.ids().collect();
    let report = grad_check(
        &store,
        |tape: &mut Tape<'_>| {
            let (a, b, c) = (tape.param(ids[0]), tape.param(ids[1]), tape.param(ids[2]));
            let ta = tape.tanh(a)?;
            let sb = tape.sigmoid(b)?;
            let h = tape.hadamard(ta, sb)?;
            let cat = tape.concat(h, ta)?;
            let prod = tape.hadamard(cat, c)?;
            let sq = tape.hadamard(prod, prod)?;
            tape.sum(sq)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn attention_chain_passes_finite_differences() {
    let mut rng = cases::rng(8);
    let store = store_with(&[
        ("x", Tensor::new(vec![3, 6], cases::random_vec(&mut rng, 18)).unwrap()),
        ("f", Tensor::new(vec![4, 3, 3], cases::random_vec(&mut rng, 36)).unwrap()),
        ("b", Tensor::vector(cases::random_vec(&mut rng, 4))),
        ("q", Tensor::matrix(1, 4, cases::random_vec(&mut rng, 4)).unwrap()),
    ]);
    let ids: Vec<_> = store.ids().collect();
    let mask = [true, true, false, true, true, false];
    let report = grad_check(
        &store,
        |tape: &mut Tape<'_>| {
            let x = tape.param(ids[0]);
            let f = tape.param(ids[1]);
            let b = tape.param(ids[2]);
            let q = tape.param(ids[3]);
            let z = tape.conv1d(x, f, b)?;
            let z = tape.tanh(z)?;
            let g = tape.matmul(q, z)?;
            let g = tape.reshape(g, &[6])?;
            let alpha = tape.softmax(g, Some(&mask))?;
            let zt = tape.transpose(z)?;
            let d = tape.weighted_sum(alpha, zt)?;
            let dd = tape.hadamard(d, d)?;
            tape.sum(dd)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn fan_out_accumulates_gradients() {
    // y = sum(x ⊙ x + 3x) has gradient 2x + 3; x is read three times.
    let x0 = vec![0.5, -1.25, 2.0];
    let mut tape = Tape::detached();
    let x = tape.leaf(Tensor::vector(x0.clone())).unwrap();
    let sq = tape.hadamard(x, x).unwrap();
    let lin = tape.scale(x, 3.0).unwrap();
    let s = tape.add(sq, lin).unwrap();
    let y = tape.sum(s).unwrap();
    let g = tape.backward(y).unwrap().wrt(&tape, x);
    let want: Vec<f64> = x0.iter().map(|v| 2.0 * v + 3.0).collect();
    assert!(max_abs_diff(g.data(), &want) < 1e-15);
}

#[test]
fn every_tape_op_rejects_non_finite_output() {
    let mut tape = Tape::detached();
    let big = tape.leaf(Tensor::vector(vec![1e200])).unwrap();
    assert!(tape.hadamard(big, big).is_err());
    assert!(tape.leaf(Tensor::vector(vec![f64::NAN])).is_err());
}
