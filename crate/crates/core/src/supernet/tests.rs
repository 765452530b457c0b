use proptest::prelude::*;

use super::*;
use crate::data::{normal_tensor, seeded_rng};

fn spec(layers: usize) -> SupernetSpec {
    SupernetSpec {
        dim: 4,
        classes: 3,
        layers,
    }
}

fn net(layers: usize, variant: NormVariant, seed: u64) -> Supernet {
    let mut n = Supernet::new(spec(layers), seed).unwrap();
    n.attach_norm_variant(variant).unwrap();
    n
}

fn input(seed: u64) -> Tensor {
    normal_tensor(&mut seeded_rng(seed), vec![6, 4], 1.0).unwrap()
}

fn mixed(n: &Supernet, layer: usize, x: &Tensor, cond: Option<usize>) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = n.params().bind(&mut g);
    let xv = g.constant(x.clone());
    let out = n.mixed_forward(&mut g, &b, layer, xv, cond)?;
    Ok(g.value(out).clone())
}

fn op_output(n: &Supernet, layer: usize, op: usize, x: &Tensor, cond: Option<usize>) -> Tensor {
    let mut g = Graph::new();
    let b = n.params().bind(&mut g);
    let xv = g.constant(x.clone());
    let out = n.op_forward(&mut g, &b, layer, op, xv, cond).unwrap();
    g.value(out).clone()
}

fn logits(n: &Supernet, x: &Tensor, conds: &[Option<usize>]) -> Tensor {
    let mut g = Graph::new();
    let b = n.params().bind(&mut g);
    let xv = g.constant(x.clone());
    let out = n.forward_with(&mut g, &b, xv, conds).unwrap();
    g.value(out).clone()
}

#[test]
fn saturated_alpha_selects_one_op() {
    let mut n = net(1, NormVariant::Affine, 1);
    let x = input(2);
    for op in 0..N_OPS {
        let mut a = vec![-1e9; N_OPS];
        a[op] = 0.7;
        n.set_alpha(0, Tensor::vector(a).unwrap()).unwrap();
        let out = mixed(&n, 0, &x, None).unwrap();
        let single = op_output(&n, 0, op, &x, None);
        assert!(out.max_abs_diff(&single).unwrap() < 1e-6, "op {op}");
    }
}

#[test]
fn uniform_alpha_averages_ops() {
    let n = net(1, NormVariant::Affine, 3);
    let x = input(4);
    let out = mixed(&n, 0, &x, None).unwrap();
    let mut mean = Tensor::zeros(vec![6, 4]).unwrap();
    for op in 0..N_OPS {
        mean = mean.zip_with(&op_output(&n, 0, op, &x, None), |a, b| a + b / 4.0).unwrap();
    }
    assert!(out.max_abs_diff(&mean).unwrap() < 1e-12);
}

#[test]
fn mixed_forward_matches_loop_oracle() {
    let mut rng = seeded_rng(5);
    for variant in NormVariant::ALL {
        let mut n = net(2, variant, 6);
        for l in 0..2 {
            n.set_alpha(l, normal_tensor(&mut rng, vec![N_OPS], 2.0).unwrap()).unwrap();
        }
        let x = input(7);
        let cond = n.needs_condition(1).then_some(2);
        let out = mixed(&n, 1, &x, cond).unwrap();
        let a = n.alpha(1).unwrap().data().to_vec();
        let m = a.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = a.iter().map(|v| (v - m).exp()).sum();
        let outs: Vec<Tensor> = (0..N_OPS).map(|op| op_output(&n, 1, op, &x, cond)).collect();
        for r in 0..6 {
            for c in 0..4 {
                let mut expected = 0.0;
                for (op, o) in outs.iter().enumerate() {
                    expected += (a[op] - m).exp() / z * o.get(&[r, c]).unwrap();
                }
                assert!((out.get(&[r, c]).unwrap() - expected).abs() < 1e-10, "{variant}");
            }
        }
    }
}

#[test]
fn condition_index_contract() {
    let x = input(8);
    let n = net(2, NormVariant::Ccbn, 9);
    assert!(matches!(mixed(&n, 1, &x, None), Err(Error::MissingConditionIndex)));
    assert!(matches!(mixed(&n, 1, &x, Some(4)), Err(Error::IndexOutOfRange { .. })));
    assert!(mixed(&n, 0, &x, Some(0)).is_err());
    assert!(mixed(&n, 0, &x, None).is_ok());
    let plain = net(2, NormVariant::Affine, 9);
    assert!(mixed(&plain, 1, &x, None).is_ok());
    assert!(mixed(&plain, 1, &x, Some(0)).is_err());
}

#[test]
fn attach_contract() {
    let mut n = Supernet::new(spec(2), 1).unwrap();
    let x = input(1);
    assert!(matches!(mixed(&n, 0, &x, None), Err(Error::NotAttached)));
    n.attach_norm_variant(NormVariant::Sabn).unwrap();
    assert!(matches!(
        n.attach_norm_variant(NormVariant::Ccbn),
        Err(Error::AlreadyAttached)
    ));
    assert_eq!(n.variant(), Some(NormVariant::Sabn));
}

#[test]
fn variant_reductions_at_initialization() {
    let x = input(10);
    let none = net(3, NormVariant::NoneAffine, 11);
    let affine = net(3, NormVariant::Affine, 11);
    let conds = [None, None, None];
    assert_eq!(logits(&none, &x, &conds), logits(&affine, &x, &conds));

    let ccbn = net(3, NormVariant::Ccbn, 11);
    let sabn = net(3, NormVariant::Sabn, 11);
    let mut r1 = seeded_rng(12);
    let mut r2 = seeded_rng(12);
    let c1 = ccbn.sample_conditions(&mut r1).unwrap();
    let c2 = sabn.sample_conditions(&mut r2).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(logits(&ccbn, &x, &c1), logits(&sabn, &x, &c2));
}

#[test]
fn parameter_count_arithmetic() {
    let counts: Vec<usize> = NormVariant::ALL
        .iter()
        .map(|&v| net(3, v, 0).params().trainable_count(Group::Weight))
        .collect();
    let (none, affine, ccbn, sabn) = (counts[0], counts[1], counts[2], counts[3]);
    let n = net(3, NormVariant::Sabn, 0);
    let normed = n.normed_op_count();
    let d = n.spec().dim;
    assert_eq!(normed, 6);
    assert_eq!(affine, none + 2 * d * normed);
    // First layer banks hold one entry, later layers one per op.
    assert_eq!(ccbn, none + 2 * d * (2 + 4 * (normed - 2)));
    assert_eq!(sabn, ccbn + 2 * d * normed);
}

#[test]
fn sampler_edge_cases() {
    let mut rng = seeded_rng(13);
    let one = Tensor::vector(vec![3.7]).unwrap();
    for _ in 0..100 {
        assert_eq!(sample_condition_index(&one, &mut rng).unwrap(), 0);
    }
    let bad = Tensor::vector(vec![0.0, f64::NAN]).unwrap();
    assert!(matches!(sample_condition_index(&bad, &mut rng), Err(Error::NonFiniteAlpha)));
    assert!(matches!(argmax(&bad), Err(Error::NonFiniteAlpha)));
}

#[test]
fn sampler_frequencies() {
    let mut rng = seeded_rng(14);
    let alpha = Tensor::vector(vec![3f64.ln(), 0.0]).unwrap();
    let draws = 100_000;
    let zeros = (0..draws)
        .filter(|_| sample_condition_index(&alpha, &mut rng).unwrap() == 0)
        .count();
    assert!((zeros as f64 / draws as f64 - 0.75).abs() < 0.01);

    let base = Tensor::vector(vec![0.3, -1.2, 0.9, 0.0]).unwrap();
    let shifted = base.map(|v| v + 17.5);
    let freq = |a: &Tensor, seed: u64| {
        let mut rng = seeded_rng(seed);
        let mut f = [0.0; 4];
        for _ in 0..draws {
            f[sample_condition_index(a, &mut rng).unwrap()] += 1.0 / draws as f64;
        }
        f
    };
    let (fa, fb) = (freq(&base, 15), freq(&shifted, 16));
    let p = softmax(base.data());
    for i in 0..4 {
        assert!((fa[i] - fb[i]).abs() < 0.01);
        assert!((fa[i] - p[i]).abs() < 0.01);
    }
}

#[test]
fn derive_examples() {
    assert_eq!(argmax(&Tensor::vector(vec![0.1, 0.9, 0.3]).unwrap()).unwrap(), 1);
    assert_eq!(argmax(&Tensor::vector(vec![0.5, 0.9, 0.9]).unwrap()).unwrap(), 1);

    let levels = [0.0, 0.5, 1.0];
    let mut vectors: Vec<[f64; 3]> = Vec::new();
    for a in levels {
        for b in levels {
            for c in levels {
                vectors.push([a, b, c]);
            }
        }
    }
    let brute = |v: &[f64; 3]| {
        let m = v.iter().cloned().fold(f64::MIN, f64::max);
        v.iter().position(|&x| x == m).unwrap()
    };
    for e0 in &vectors {
        for e1 in &vectors {
            for e2 in &vectors {
                for (k, e) in [e0, e1, e2].into_iter().enumerate() {
                    let shift = [0.0, -3.25, 1e3][k];
                    let t = Tensor::vector(e.iter().map(|v| v + shift).collect()).unwrap();
                    assert_eq!(argmax(&t).unwrap(), brute(e));
                }
            }
        }
    }
}

#[test]
fn derive_on_network() {
    let mut n = net(3, NormVariant::Affine, 17);
    n.set_alpha(0, Tensor::vector(vec![0.0, 0.2, 0.1, -1.0]).unwrap()).unwrap();
    n.set_alpha(1, Tensor::vector(vec![0.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
    n.set_alpha(2, Tensor::vector(vec![-2.0, 0.0, 0.4, 0.5]).unwrap()).unwrap();
    assert_eq!(n.derive_architecture().unwrap(), vec![1, 0, 3]);
    n.set_alpha(2, Tensor::vector(vec![-2.0, 0.0, f64::INFINITY, 0.5]).unwrap()).unwrap();
    assert!(matches!(n.derive_architecture(), Err(Error::NonFiniteAlpha)));
}

fn batch(seed: u64) -> (Tensor, Vec<usize>) {
    let x = input(seed);
    (x, vec![0, 1, 2, 0, 1, 2])
}

#[test]
fn frozen_groups_are_bit_identical() {
    for variant in NormVariant::ALL {
        let (xt, yt) = batch(20);
        let (xv, yv) = batch(21);
        let mut n = net(3, variant, 22);
        let mut rng = seeded_rng(23);
        let before = n.alphas();
        n.alternate_step((&xt, &yt), (&xv, &yv), 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(n.alphas(), before);

        let mut n = net(3, variant, 22);
        let weights: Vec<Tensor> = n
            .params()
            .ids()
            .filter(|&id| n.params().group(id) == Group::Weight)
            .map(|id| n.params().value(id).clone())
            .collect();
        let s = n.alternate_step((&xt, &yt), (&xv, &yv), 0.0, 0.5, &mut rng).unwrap();
        let after: Vec<Tensor> = n
            .params()
            .ids()
            .filter(|&id| n.params().group(id) == Group::Weight)
            .map(|id| n.params().value(id).clone())
            .collect();
        assert_eq!(weights, after);
        assert_ne!(n.alphas(), net(3, variant, 22).alphas());
        assert!(s.train_loss.is_finite() && s.val_loss.is_finite());
    }
}

#[test]
fn search_is_reproducible() {
    let data = planted_task(3, 8, 4, 64, 64).unwrap();
    let run = || {
        let mut n = Supernet::new(SupernetSpec { dim: 8, classes: 4, layers: 3 }, 3).unwrap();
        n.attach_norm_variant(NormVariant::Sabn).unwrap();
        let r = search_planted(&mut n, &data, 12, 16, 2.0, 2.0, 3).unwrap();
        (r, n.alphas())
    };
    assert_eq!(run(), run());
}

#[test]
fn planted_task_shape() {
    let (train, val) = planted_task(1, 8, 4, 100, 40).unwrap();
    assert_eq!(train.features.shape(), &[100, 8]);
    assert_eq!(val.len(), 40);
    assert!(train.features.data().iter().all(|&v| v <= -1.0));
    let mut counts = [0; 4];
    train.labels.iter().for_each(|&l| counts[l] += 1);
    assert_eq!(counts, [25; 4]);
    assert!(planted_task(1, 8, 1, 10, 10).is_err());
}

#[test]
fn planted_search_recovers_skip() {
    for seed in 0..8 {
        let data = planted_task(seed, 8, 4, 256, 256).unwrap();
        let mut n = Supernet::new(SupernetSpec { dim: 8, classes: 4, layers: 1 }, seed).unwrap();
        n.attach_norm_variant(NormVariant::Affine).unwrap();
        let r = search_planted(&mut n, &data, 200, 64, 2.0, 2.0, seed).unwrap();
        assert_eq!(r.architecture, vec![OP_SKIP], "seed {seed}");
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(a in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&a);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_shift_invariant(
        a in prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.25), 1..8),
        c in -100.0f64..100.0,
    ) {
        let t = Tensor::vector(a.clone()).unwrap();
        prop_assert_eq!(argmax(&t).unwrap(), argmax(&t.map(|v| v + c)).unwrap());
    }
}
