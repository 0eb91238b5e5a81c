//! Shape, causality and padding behaviour of both forecasters.

mod common;

use common::{random_tensor, rng};
use proptest::prelude::*;
use seismogpt::models::{array_forward, single_forward, ModelConfig, ModelKind, SeismoGpt};
use seismogpt::tokenizer::PaddingMask;
use seismogpt::Tensor;

fn small(kind: ModelKind, n: usize, stations: usize) -> SeismoGpt {
    let cfg = ModelConfig {
        kind,
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        token_len: 4,
        context_tokens: n,
        n_stations: stations,
    };
    SeismoGpt::new(cfg, 3).unwrap()
}

/// Adds `delta` to every sample of time token `j` (axis `time_axis`).
fn perturb_token(x: &Tensor, time_axis: usize, j: usize, delta: f64) -> Tensor {
    let shape = x.shape().to_vec();
    let inner: usize = shape[time_axis + 1..].iter().product();
    let n = shape[time_axis];
    let mut y = x.clone();
    for (k, v) in y.data_mut().iter_mut().enumerate() {
        if (k / inner) % n == j {
            *v += delta;
        }
    }
    y
}

#[test]
fn single_shapes_follow_input() {
    let m = small(ModelKind::Single, 8, 1);
    for n in [1, 3, 8] {
        let x = random_tensor(&[n, 4, 3], &mut rng(n as u64));
        assert_eq!(m.predict(&x, None).unwrap().shape(), &[n, 4, 3]);
    }
}

#[test]
fn single_rejects_wrong_token_shape() {
    let m = small(ModelKind::Single, 8, 1);
    assert!(m.predict(&Tensor::zeros(&[4, 5, 3]), None).is_err());
    assert!(m.predict(&Tensor::zeros(&[4, 4, 2]), None).is_err());
}

#[test]
fn array_forward_flattens_time() {
    let SeismoGpt::Array(m) = small(ModelKind::Array, 6, 3) else { unreachable!() };
    let x = random_tensor(&[2, 3, 6, 4, 3], &mut rng(1));
    assert_eq!(array_forward(&m, &x, None).unwrap().shape(), &[2, 3, 24, 3]);
    assert!(array_forward(&m, &random_tensor(&[1, 2, 6, 4, 3], &mut rng(1)), None).is_err());
}

#[test]
fn single_prefix_outputs_ignore_later_tokens() {
    let SeismoGpt::Single(m) = small(ModelKind::Single, 8, 1) else { unreachable!() };
    let x = random_tensor(&[8, 4, 3], &mut rng(5));
    let base = single_forward(&m, &x, None).unwrap();
    let tw = 12;
    for j in 0..8 {
        let y = single_forward(&m, &perturb_token(&x, 0, j, 0.7), None).unwrap();
        assert_eq!(&y.data()[..j * tw], &base.data()[..j * tw], "token {j}");
        assert_ne!(&y.data()[j * tw..], &base.data()[j * tw..], "token {j} had no effect");
    }
}

#[test]
fn array_prefix_outputs_ignore_later_tokens_at_every_station() {
    let SeismoGpt::Array(m) = small(ModelKind::Array, 6, 3) else { unreachable!() };
    let x = random_tensor(&[1, 3, 6, 4, 3], &mut rng(6));
    let base = array_forward(&m, &x, None).unwrap();
    for s in 0..3 {
        for j in 0..6 {
            let mut y = x.clone();
            let off = (s * 6 + j) * 12;
            y.data_mut()[off..off + 12].iter_mut().for_each(|v| *v -= 0.5);
            let out = array_forward(&m, &y, None).unwrap();
            for st in 0..3 {
                let row = |t: &Tensor| t.data()[st * 72..st * 72 + j * 12].to_vec();
                assert_eq!(row(&out), row(&base), "station {s} token {j} leaked into {st}");
            }
        }
    }
}

#[test]
fn padded_tokens_do_not_reach_kept_positions() {
    let SeismoGpt::Single(m) = small(ModelKind::Single, 8, 1) else { unreachable!() };
    let pad = PaddingMask::suffix(8, 5).unwrap();
    let x = random_tensor(&[8, 4, 3], &mut rng(8));
    let base = single_forward(&m, &x, Some(&pad)).unwrap();
    let mut y = x.clone();
    y.data_mut()[5 * 12..].iter_mut().for_each(|v| *v = 100.0);
    let out = single_forward(&m, &y, Some(&pad)).unwrap();
    assert_eq!(&out.data()[..60], &base.data()[..60]);
    assert!(out.is_finite());
}

#[test]
fn array_padding_keeps_kept_positions() {
    let SeismoGpt::Array(m) = small(ModelKind::Array, 6, 2) else { unreachable!() };
    let pad = PaddingMask::suffix(6, 4).unwrap();
    let x = random_tensor(&[1, 2, 6, 4, 3], &mut rng(9));
    let base = array_forward(&m, &x, Some(&pad)).unwrap();
    let y = perturb_token(&x, 2, 5, 3.0);
    let out = array_forward(&m, &y, Some(&pad)).unwrap();
    for st in 0..2 {
        let row = |t: &Tensor| t.data()[st * 72..st * 72 + 48].to_vec();
        assert_eq!(row(&out), row(&base));
    }
}

#[test]
fn same_seed_same_weights() {
    let a = small(ModelKind::Single, 8, 1);
    let b = small(ModelKind::Single, 8, 1);
    let x = random_tensor(&[8, 4, 3], &mut rng(2));
    assert_eq!(a.predict(&x, None).unwrap(), b.predict(&x, None).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_finite_and_shaped(n in 1usize..=8, seed in 0u64..1000, amp in 0.0f64..50.0) {
        let m = small(ModelKind::Single, 8, 1);
        let x = Tensor::from_fn(&[n, 4, 3], |i| amp * ((i as f64 + seed as f64) * 0.37).sin());
        let y = m.predict(&x, None).unwrap();
        prop_assert_eq!(y.shape(), &[n, 4, 3]);
        prop_assert!(y.is_finite());
    }

    #[test]
    fn shorter_input_matches_prefix(n in 2usize..=8, cut in 1usize..8, seed in 0u64..1000) {
        let cut = cut.min(n);
        let m = small(ModelKind::Single, 8, 1);
        let x = random_tensor(&[n, 4, 3], &mut rng(seed));
        let full = m.predict(&x, None).unwrap();
        let part = m.predict(&x.slice_outer(0, cut).unwrap(), None).unwrap();
        prop_assert_eq!(part.data(), &full.data()[..cut * 12]);
    }
}
