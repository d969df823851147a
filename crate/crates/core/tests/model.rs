#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::BTreeSet;

use minet_core::autodiff::Tape;
use minet_core::model::{
    backbone_forward, minet_forward, multi_stage_integration, shallow_extract, Batch, MINet, MINetConfig,
    MINetParams, ParamVars, Variant,
};
use minet_core::train::AdamState;
use minet_core::Tensor;
use proptest::prelude::*;

use common::{brute_force_affinity, brute_force_affinity_scaled, image_pair, rng};

fn small(groups: usize, channels: usize) -> MINetConfig {
    MINetConfig { groups, channels, blocks: 1, ..MINetConfig::default() }
}

#[test]
fn zero_gates_make_full_and_no_int_bit_identical() {
    let cfg = small(3, 8);
    let (x, y) = image_pair(2, 6, 2, 11);
    for seed in 0..3 {
        let full = MINet::new(cfg.clone(), Variant::Full).unwrap();
        let no_int = MINet::new(cfg.clone(), Variant::NoInt).unwrap();
        let (a_sr, a_t1) = full.predict(&full.init_params(seed).unwrap(), &x, &y).unwrap();
        let (b_sr, b_t1) = no_int.predict(&no_int.init_params(seed).unwrap(), &x, &y).unwrap();
        assert!(a_sr.bit_eq(&b_sr), "seed {seed}: T2 outputs differ");
        assert!(a_t1.unwrap().bit_eq(&b_t1.unwrap()), "seed {seed}: T1 outputs differ");
    }
}

#[test]
fn zero_gates_pass_features_through_unchanged() {
    let cfg = small(2, 4);
    let params = MINetParams::init(&cfg, Variant::Full, 5).unwrap();
    let (x, y) = image_pair(1, 5, 2, 3);
    let mut tape = Tape::new();
    let pv = ParamVars::load(&mut tape, &params, false);
    let (xv, yv) = (tape.constant(x), tape.constant(y));
    let trace = minet_forward(&mut tape, &pv, xv, yv, &cfg, Variant::Full).unwrap();
    let &(last_t1, last_t2) = trace.features.stages.last().unwrap();
    assert!(tape.value(trace.g_t2).bit_eq(tape.value(last_t2)));
    assert!(tape.value(trace.g_t1.unwrap()).bit_eq(tape.value(last_t1)));
    let int = trace.integration.unwrap();
    assert!(tape.value(int.enriched).bit_eq(tape.value(trace.features.concatenated)));
    assert!(tape.value(int.output).data().iter().all(|&v| v == 0.0));
}

fn integration_affinity(features: &Tensor, stages: usize, gamma: f64) -> Tensor {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let g = tape.constant(Tensor::new(vec![1], vec![gamma]).unwrap());
    let c = features.shape()[1];
    let w = tape.constant(Tensor::zeros(&[1, c, 1, 1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let trace = multi_stage_integration(&mut tape, f, stages, g, w, b).unwrap();
    tape.value(trace.affinity).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affinity_matches_brute_force(
        stages in 1usize..=8, c in 1usize..=4, h in 1usize..=4, w in 1usize..=4,
        b in 1usize..=2, seed in any::<u64>(), gamma in -1.0f64..1.0,
    ) {
        let f = Tensor::uniform(&[b, stages * c, h, w], -1.0, 1.0, &mut rng(seed));
        let s = integration_affinity(&f, stages, gamma);
        let oracle = brute_force_affinity(&f, stages);
        prop_assert_eq!(s.shape(), &[b, stages, stages][..]);
        for bi in 0..b {
            for i in 0..stages {
                let row = &s.data()[(bi * stages + i) * stages..][..stages];
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for j in 0..stages {
                    prop_assert!((row[j] - oracle[bi][i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scaling_features_scales_logits_by_c_squared(
        stages in 2usize..=6, seed in any::<u64>(), c in 0.25f64..2.0,
    ) {
        let f = Tensor::uniform(&[1, stages * 2, 3, 3], -1.0, 1.0, &mut rng(seed));
        let scaled = integration_affinity(&f.map(|v| c * v), stages, 0.5);
        let oracle = brute_force_affinity_scaled(&f, stages, c * c);
        for i in 0..stages {
            for j in 0..stages {
                prop_assert!((scaled.data()[i * stages + j] - oracle[0][i][j]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn t2_branch_depends_on_t1_but_not_conversely() {
    let cfg = small(2, 4);
    let params = MINetParams::init(&cfg, Variant::Full, 9).unwrap();
    let stage_values = |x: &Tensor, y: &Tensor| -> Vec<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let pv = ParamVars::load(&mut tape, &params, false);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let (f1, f2) = shallow_extract(&mut tape, &pv, xv, yv, &cfg).unwrap();
        let feats = backbone_forward(&mut tape, &pv, f1, f2, &cfg).unwrap();
        feats.stages.iter().map(|&(a, b)| (tape.value(a).clone(), tape.value(b).clone())).collect()
    };
    let (x, y) = image_pair(1, 4, 2, 1);
    let (x2, y2) = image_pair(1, 4, 2, 2);
    let base = stage_values(&x, &y);
    let other_t1 = stage_values(&x2, &y);
    let other_t2 = stage_values(&x, &y2);
    for l in 0..cfg.groups {
        assert!(!base[l].1.bit_eq(&other_t1[l].1), "stage {l}: T2 ignores T1");
        assert!(base[l].0.bit_eq(&other_t2[l].0), "stage {l}: T1 sees T2");
    }
}

#[test]
fn output_shapes_over_config_grid() {
    for n in [4, 6] {
        for r in [2, 4] {
            for groups in [1, 2] {
                for channels in [4, 8] {
                    let cfg = MINetConfig { groups, channels, blocks: 1, scale: r, ..MINetConfig::default() };
                    for variant in Variant::ALL {
                        let net = MINet::new(cfg.clone(), variant).unwrap();
                        let (x, y) = image_pair(2, n, r, 0);
                        let (sr, t1) = net.predict(&net.init_params(0).unwrap(), &x, &y).unwrap();
                        assert_eq!(sr.shape(), &[2, 1, r * n, r * n]);
                        assert_eq!(t1.is_some(), variant.uses_aux());
                    }
                }
            }
        }
    }
}

#[test]
fn mismatched_input_sizes_are_rejected() {
    let net = MINet::new(small(1, 4), Variant::Full).unwrap();
    let p = net.init_params(0).unwrap();
    let (x, _) = image_pair(1, 4, 2, 0);
    let (_, y) = image_pair(1, 5, 2, 0);
    assert!(net.predict(&p, &x, &y).is_err());
}

#[test]
fn one_small_step_decreases_the_loss() {
    let cfg = small(2, 8);
    for seed in 0..5 {
        let net = MINet::new(cfg.clone(), Variant::Full).unwrap();
        let params = net.init_params(seed).unwrap();
        let (x_t1, y_t2) = image_pair(2, 6, 2, 100 + seed);
        let (x_t2, _) = image_pair(2, 6, 2, 200 + seed);
        let batch = Batch { x_t1, y_t2, x_t2 };
        let step = net.step(&params, &batch).unwrap();
        let decreased = [1e-3, 1e-4, 1e-5, 1e-6].iter().any(|&lr| {
            let mut p = params.clone();
            AdamState::new(lr).step(p.iter_mut(), &step.grads).unwrap();
            net.step(&p, &batch).unwrap().loss < step.loss
        });
        assert!(decreased, "seed {seed}: no learning rate down to 1e-6 lowered the loss");
    }
}

#[test]
fn variant_manifests_differ_in_exactly_the_documented_tensors() {
    let cfg = small(2, 4);
    let names = |v: Variant| -> BTreeSet<String> {
        MINetParams::manifest(&cfg, v).into_iter().map(|(n, _)| n).collect()
    };
    let full = names(Variant::Full);
    let removed = |v: Variant| -> BTreeSet<String> { full.difference(&names(v)).cloned().collect() };
    let set = |xs: &[&str]| -> BTreeSet<String> { xs.iter().map(|s| s.to_string()).collect() };
    assert_eq!(removed(Variant::NoInt), set(&["int.gamma", "int.reduce.b", "int.reduce.w"]));
    assert_eq!(
        removed(Variant::NoAtt),
        set(&["att_t1.b", "att_t1.lambda", "att_t1.w", "att_t2.b", "att_t2.lambda", "att_t2.w"])
    );
    assert_eq!(removed(Variant::NoAux), set(&["att_t1.b", "att_t1.lambda", "att_t1.w", "rec_t1.b", "rec_t1.w"]));
    for v in Variant::ALL {
        assert!(names(v).is_subset(&full), "{v} adds tensors");
    }
}

#[test]
fn no_aux_ignores_the_t1_input() {
    let net = MINet::new(small(2, 4), Variant::NoAux).unwrap();
    let p = net.init_params(3).unwrap();
    let (x, y) = image_pair(1, 4, 2, 0);
    let (x2, _) = image_pair(1, 4, 2, 1);
    let (a, t1) = net.predict(&p, &x, &y).unwrap();
    let (b, _) = net.predict(&p, &x2, &y).unwrap();
    assert!(t1.is_none());
    assert!(a.bit_eq(&b));
    assert_eq!(net.loss_weights().1, 0.0);
}

#[test]
fn tape_replay_is_bit_identical() {
    let net = MINet::new(small(2, 4), Variant::Full).unwrap();
    let p = net.init_params(4).unwrap();
    let (x_t1, y_t2) = image_pair(2, 4, 2, 8);
    let (x_t2, _) = image_pair(2, 4, 2, 9);
    let batch = Batch { x_t1, y_t2, x_t2 };
    let a = net.step(&p, &batch).unwrap();
    let b = net.step(&p, &batch).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    for ((na, ga), (nb, gb)) in a.grads.iter().zip(&b.grads) {
        assert_eq!(na, nb);
        assert!(ga.bit_eq(gb), "{na}");
    }
}
