mod common;

use minet_core::autodiff::linalg::softmax_rows;
use minet_core::autodiff::{pixel_shuffle, pixel_unshuffle, Tape};
use minet_core::config::KeyValues;
use minet_core::model::{Checkpoint, MINetConfig, MINetParams, Variant};
use minet_core::Tensor;
use proptest::prelude::*;

use common::rng;

fn shape_and_data(max_rank: usize) -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..5, 0..=max_rank).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        (Just(shape), prop::collection::vec(any::<f64>(), n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn shuffle_then_unshuffle_is_identity(
        b in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5,
        r in 1usize..4, seed in any::<u64>(),
    ) {
        let x = Tensor::uniform(&[b, c * r * r, h, w], -1.0, 1.0, &mut rng(seed));
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[b, c, h * r, w * r][..]);
        prop_assert!(pixel_unshuffle(&y, r).unwrap().bit_eq(&x));
        let z = Tensor::uniform(&[b, c, h * r, w * r], -1.0, 1.0, &mut rng(seed ^ 1));
        prop_assert!(pixel_shuffle(&pixel_unshuffle(&z, r).unwrap(), r).unwrap().bit_eq(&z));
    }

    #[test]
    fn tensor_bytes_round_trip_bit_exactly((shape, data) in shape_and_data(4)) {
        let t = Tensor::new(shape, data).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        prop_assert!(back.bit_eq(&t));
        prop_assert_eq!(back.to_bytes(), t.to_bytes());
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        rows in 1usize..6, cols in 1usize..8, seed in any::<u64>(), shift in -50.0f64..50.0,
    ) {
        let x = Tensor::uniform(&[rows, cols], -10.0, 10.0, &mut rng(seed));
        let s = softmax_rows(&x).unwrap();
        for row in s.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let shifted = softmax_rows(&x.map(|v| v + shift)).unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), variant_idx in 0usize..4, lr in 1e-6f64..1.0) {
        let cfg = MINetConfig { groups: 1, channels: 4, blocks: 1, ..MINetConfig::default() };
        let variant = Variant::ALL[variant_idx];
        let mut params = MINetParams::init(&cfg, variant, seed).unwrap();
        // perturb everything so zero-initialised tensors are exercised too
        let mut g = rng(seed);
        for (_, t) in params.iter_mut() {
            *t = t.zip_map(&Tensor::uniform(t.shape(), -1.0, 1.0, &mut g), |a, b| a + b).unwrap();
        }
        let mut config = KeyValues::new();
        cfg.write_kv(&mut config);
        config.set("variant", variant);
        config.set("lr", lr);
        let ck = Checkpoint { config, params };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert!(back.params.bit_eq(&ck.params));
        prop_assert_eq!(&back.config, &ck.config);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn replayed_tapes_give_identical_values_and_gradients() {
    let run = || {
        let mut g = rng(3);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut g));
        let w = tape.param(Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut g));
        let b = tape.param(Tensor::uniform(&[4], -1.0, 1.0, &mut g));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let y = tape.relu(y);
        let y = tape.sigmoid(y);
        let s = tape.sum(y);
        let v = tape.value(s).item();
        let grads = tape.backward(s).unwrap();
        (v, [x, w, b].map(|p| grads.get(p).unwrap().clone()))
    };
    let (va, ga) = run();
    let (vb, gb) = run();
    assert_eq!(va.to_bits(), vb.to_bits());
    for (a, b) in ga.iter().zip(&gb) {
        assert!(a.bit_eq(b));
    }
}
