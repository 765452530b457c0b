use proptest::prelude::*;
use rand::Rng;

use super::ops::{self, Condition};
use super::*;
use crate::data::{normal_tensor, seeded_rng, SeededRng};
use crate::error::Error;
use crate::tensor::{gradient_error, Graph, Tensor};

const EPS: NormEps = NormEps::DEFAULT;

fn rand_affine(rng: &mut SeededRng, c: usize) -> ChannelAffine {
    ChannelAffine::from_vecs(
        (0..c).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..c).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn rand_bank(rng: &mut SeededRng, k: usize, c: usize) -> ConditionalAffineBank {
    ConditionalAffineBank::new((0..k).map(|_| rand_affine(rng, c)).collect()).unwrap()
}

fn batch1(c: usize) -> BranchStats {
    BranchStats::batch(1, c).unwrap()
}

/// Per-channel mean and biased variance by explicit loops over (N, H, W).
fn loop_channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut total = 0.0;
        for i in 0..n {
            for y in 0..h {
                for z in 0..w {
                    total += x.get(&[i, ch, y, z]).unwrap();
                }
            }
        }
        let count = (n * h * w) as f64;
        mean[ch] = total / count;
        let mut sq = 0.0;
        for i in 0..n {
            for y in 0..h {
                for z in 0..w {
                    sq += (x.get(&[i, ch, y, z]).unwrap() - mean[ch]).powi(2);
                }
            }
        }
        var[ch] = sq / count;
    }
    (mean, var)
}

/// `outer(inner(xhat))` elementwise with loops, where `inner` and `outer` are
/// optional per-channel affines.
fn loop_bn(x: &Tensor, inner: Option<&ChannelAffine>, outer: &ChannelAffine) -> Tensor {
    let (mean, var) = loop_channel_moments(x);
    Tensor::from_fn(x.shape().to_vec(), |i| {
        let ch = i[1];
        let mut v = (x.get(i).unwrap() - mean[ch]) / (var[ch] + EPS.get()).sqrt();
        if let Some(a) = inner {
            v = a.gamma.data()[ch] * v + a.beta.data()[ch];
        }
        outer.gamma.data()[ch] * v + outer.beta.data()[ch]
    })
    .unwrap()
}

/// Per-(n, c) mean and sqrt(var + eps) by loops over (H, W).
fn loop_instance(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut mu = vec![0.0; n * c];
    let mut sigma = vec![0.0; n * c];
    for i in 0..n {
        for ch in 0..c {
            let vals: Vec<f64> = (0..h)
                .flat_map(|y| (0..w).map(move |z| (y, z)))
                .map(|(y, z)| x.get(&[i, ch, y, z]).unwrap())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|e| (e - m).powi(2)).sum::<f64>() / vals.len() as f64;
            mu[i * c + ch] = m;
            sigma[i * c + ch] = (v + EPS.get()).sqrt();
        }
    }
    (mu, sigma)
}

fn loop_adain(content: &Tensor, style: &Tensor, sandwich: Option<&ChannelAffine>) -> Tensor {
    let c = content.shape()[1];
    let (mx, sx) = loop_instance(content);
    let (my, sy) = loop_instance(style);
    let sn = style.shape()[0];
    Tensor::from_fn(content.shape().to_vec(), |i| {
        let (n, ch) = (i[0], i[1]);
        let si = if sn == 1 { ch } else { n * c + ch };
        let mut v = (content.get(i).unwrap() - mx[n * c + ch]) / sx[n * c + ch];
        if let Some(a) = sandwich {
            v = a.gamma.data()[ch] * v + a.beta.data()[ch];
        }
        sy[si] * v + my[si]
    })
    .unwrap()
}

#[test]
fn bn_output_is_standardized() {
    let mut rng = seeded_rng(1);
    let x = normal_tensor(&mut rng, vec![6, 3, 2, 2], 3.0).unwrap();
    let x = x.map(|v| v + 4.0);
    let out = bn_forward(&x, &ChannelAffine::identity(3).unwrap(), &mut batch1(3), EPS).unwrap();
    let (in_mean, in_var) = loop_channel_moments(&x);
    let (mean, var) = loop_channel_moments(&out);
    for ch in 0..3 {
        assert!(mean[ch].abs() < 1e-8);
        let expected = in_var[ch] / (in_var[ch] + EPS.get());
        assert!((var[ch] - expected).abs() < 1e-8);
        assert!((var[ch] - 1.0).abs() < 1e-5);
        assert!(in_mean[ch].is_finite());
    }
}

#[test]
fn constant_channel_maps_to_beta() {
    let mut rng = seeded_rng(2);
    let mut x = normal_tensor(&mut rng, vec![4, 2, 3, 3], 1.0).unwrap().into_data();
    let plane = 9;
    for n in 0..4 {
        for p in 0..plane {
            x[n * 2 * plane + plane + p] = 0.7;
        }
    }
    let x = Tensor::new(vec![4, 2, 3, 3], x).unwrap();
    let affine = ChannelAffine::from_vecs(vec![2.0, 3.0], vec![-1.0, 0.25]).unwrap();
    let out = bn_forward(&x, &affine, &mut batch1(2), EPS).unwrap();
    for n in 0..4 {
        for y in 0..3 {
            for z in 0..3 {
                assert!((out.get(&[n, 1, y, z]).unwrap() - 0.25).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn bn_matches_loop_oracle() {
    let mut rng = seeded_rng(3);
    let x = normal_tensor(&mut rng, vec![4, 3, 2, 2], 1.5).unwrap();
    let affine = rand_affine(&mut rng, 3);
    let out = bn_forward(&x, &affine, &mut batch1(3), EPS).unwrap();
    assert!(out.max_abs_diff(&loop_bn(&x, None, &affine)).unwrap() < 1e-10);
}

#[test]
fn bn_accepts_matrix_input() {
    let mut rng = seeded_rng(33);
    let x = normal_tensor(&mut rng, vec![5, 3], 1.0).unwrap();
    let affine = rand_affine(&mut rng, 3);
    let out = bn_forward(&x, &affine, &mut batch1(3), EPS).unwrap();
    let x4 = x.reshape(vec![5, 3, 1, 1]).unwrap();
    let oracle = loop_bn(&x4, None, &affine).reshape(vec![5, 3]).unwrap();
    assert!(out.max_abs_diff(&oracle).unwrap() < 1e-10);
}

#[test]
fn bn_channel_mismatch() {
    let x = Tensor::zeros(vec![2, 3, 1, 1]).unwrap();
    let r = bn_forward(&x, &ChannelAffine::identity(3).unwrap(), &mut batch1(2), EPS);
    assert!(matches!(r, Err(Error::ChannelMismatch { .. })));
    let r = bn_forward(&x, &ChannelAffine::identity(2).unwrap(), &mut batch1(3), EPS);
    assert!(matches!(r, Err(Error::ChannelMismatch { .. })));
}

#[test]
fn running_mode_tracks_and_then_uses_estimates() {
    let mut rng = seeded_rng(4);
    let x = normal_tensor(&mut rng, vec![8, 2, 2, 2], 2.0).unwrap();
    let mut stats = BranchStats::running(1, 2).unwrap();
    let affine = ChannelAffine::identity(2).unwrap();
    bn_forward(&x, &affine, &mut stats, EPS).unwrap();
    let (mean, var) = loop_channel_moments(&x);
    for ch in 0..2 {
        assert!((stats.running_mean(0).unwrap().data()[ch] - 0.1 * mean[ch]).abs() < 1e-12);
        assert!((stats.running_var(0).unwrap().data()[ch] - (0.9 + 0.1 * var[ch])).abs() < 1e-12);
    }

    stats.set_training(false);
    let frozen = stats.clone();
    let out = bn_forward(&x, &affine, &mut stats, EPS).unwrap();
    assert_eq!(stats, frozen);
    let rm = frozen.running_mean(0).unwrap().data().to_vec();
    let rv = frozen.running_var(0).unwrap().data().to_vec();
    let expected = Tensor::from_fn(x.shape().to_vec(), |i| {
        (x.get(i).unwrap() - rm[i[1]]) / (rv[i[1]] + EPS.get()).sqrt()
    })
    .unwrap();
    assert!(out.max_abs_diff(&expected).unwrap() < 1e-12);
}

#[test]
fn ccbn_single_class_is_bn() {
    let mut rng = seeded_rng(5);
    let x = normal_tensor(&mut rng, vec![3, 4, 2, 3], 1.0).unwrap();
    let affine = rand_affine(&mut rng, 4);
    let bank = ConditionalAffineBank::new(vec![affine.clone()]).unwrap();
    let a = ccbn_forward(&x, 0, &bank, &mut batch1(4), EPS).unwrap();
    let b = bn_forward(&x, &affine, &mut batch1(4), EPS).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ccbn_class_affine_relation() {
    let mut rng = seeded_rng(6);
    let x = normal_tensor(&mut rng, vec![4, 2, 2, 2], 1.0).unwrap();
    let bank = ConditionalAffineBank::new(vec![
        ChannelAffine::identity(2).unwrap(),
        ChannelAffine::from_vecs(vec![2.0, 2.0], vec![1.0, 1.0]).unwrap(),
    ])
    .unwrap();
    let out0 = ccbn_forward(&x, 0, &bank, &mut batch1(2), EPS).unwrap();
    let out1 = ccbn_forward(&x, 1, &bank, &mut batch1(2), EPS).unwrap();
    assert_eq!(out1, out0.map(|v| 2.0 * v + 1.0));
}

#[test]
fn ccbn_matches_loop_oracle_and_checks_index() {
    let mut rng = seeded_rng(7);
    let x = normal_tensor(&mut rng, vec![3, 3, 2, 2], 1.0).unwrap();
    let bank = rand_bank(&mut rng, 4, 3);
    for k in 0..4 {
        let out = ccbn_forward(&x, k, &bank, &mut batch1(3), EPS).unwrap();
        let oracle = loop_bn(&x, None, bank.entry(k).unwrap());
        assert!(out.max_abs_diff(&oracle).unwrap() < 1e-10);
    }
    assert!(matches!(
        ccbn_forward(&x, 4, &bank, &mut batch1(3), EPS),
        Err(Error::IndexOutOfRange { index: 4, len: 4 })
    ));
}

#[test]
fn per_sample_condition_matches_single_class_rows() {
    let mut rng = seeded_rng(8);
    let x = normal_tensor(&mut rng, vec![5, 3], 1.0).unwrap();
    let bank = rand_bank(&mut rng, 3, 3);
    let classes = [2, 0, 1, 1, 2];
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let b = bank.bind(&mut g).unwrap();
    let out = ops::ccbn(&mut g, xv, Condition::PerSample(&classes), b, &mut batch1(3), EPS).unwrap();
    for (row, &k) in classes.iter().enumerate() {
        let single = ccbn_forward(&x, k, &bank, &mut batch1(3), EPS).unwrap();
        let a = g.value(out).row(row).unwrap();
        let b = single.row(row).unwrap();
        for (p, q) in a.iter().zip(b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn sabn_reductions() {
    let mut rng = seeded_rng(9);
    let x = normal_tensor(&mut rng, vec![4, 3, 2, 2], 1.0).unwrap();
    let bank = rand_bank(&mut rng, 3, 3);
    let identity = ChannelAffine::identity(3).unwrap();
    for k in 0..3 {
        let sabn = sabn_forward(&x, k, &identity, &bank, &mut batch1(3), EPS).unwrap();
        let ccbn = ccbn_forward(&x, k, &bank, &mut batch1(3), EPS).unwrap();
        assert_eq!(sabn, ccbn);
    }
    let sandwich = rand_affine(&mut rng, 3);
    let identity_bank = ConditionalAffineBank::identity(3, 3).unwrap();
    let sabn = sabn_forward(&x, 1, &sandwich, &identity_bank, &mut batch1(3), EPS).unwrap();
    let bn = bn_forward(&x, &sandwich, &mut batch1(3), EPS).unwrap();
    assert_eq!(sabn, bn);
}

#[test]
fn sabn_matches_loop_oracle_and_merged_ccbn() {
    let mut rng = seeded_rng(10);
    for _ in 0..50 {
        let c = rng.random_range(1..6);
        let k = rng.random_range(1..5);
        let n = rng.random_range(2..5);
        let x = normal_tensor(&mut rng, vec![n, c, 2, 3], 2.0).unwrap();
        let sandwich = rand_affine(&mut rng, c);
        let bank = rand_bank(&mut rng, k, c);
        let merged = merge_sandwich(&sandwich, &bank).unwrap();
        let i = rng.random_range(0..k);
        let sabn = sabn_forward(&x, i, &sandwich, &bank, &mut batch1(c), EPS).unwrap();
        let oracle = loop_bn(&x, Some(&sandwich), bank.entry(i).unwrap());
        let ccbn = ccbn_forward(&x, i, &merged, &mut batch1(c), EPS).unwrap();
        assert!(sabn.max_abs_diff(&oracle).unwrap() < 1e-10);
        assert!(sabn.max_abs_diff(&ccbn).unwrap() < 1e-10);
    }
}

#[test]
fn sabn_errors() {
    let x = Tensor::zeros(vec![2, 3, 1, 1]).unwrap();
    let bank = ConditionalAffineBank::identity(2, 3).unwrap();
    let r = sabn_forward(&x, 0, &ChannelAffine::identity(2).unwrap(), &bank, &mut batch1(3), EPS);
    assert!(matches!(r, Err(Error::ChannelMismatch { .. })));
    let r = sabn_forward(&x, 2, &ChannelAffine::identity(3).unwrap(), &bank, &mut batch1(3), EPS);
    assert!(matches!(r, Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn auxbn_branch_disjointness() {
    let mut rng = seeded_rng(11);
    let mut stats = BranchStats::running(2, 3).unwrap();
    let initial = stats.clone();
    let bank = rand_bank(&mut rng, 2, 3);
    for _ in 0..5 {
        let x = normal_tensor(&mut rng, vec![4, 3, 2, 2], 1.0).unwrap();
        auxbn_forward(&x, ADV_BRANCH, &mut stats, &bank, EPS).unwrap();
    }
    assert_eq!(stats.running_mean(CLEAN_BRANCH).unwrap(), initial.running_mean(CLEAN_BRANCH).unwrap());
    assert_eq!(stats.running_var(CLEAN_BRANCH).unwrap(), initial.running_var(CLEAN_BRANCH).unwrap());
    assert_ne!(stats.running_mean(ADV_BRANCH).unwrap(), initial.running_mean(ADV_BRANCH).unwrap());
    assert!(matches!(
        auxbn_forward(&Tensor::zeros(vec![2, 3]).unwrap(), 2, &mut stats, &bank, EPS),
        Err(Error::IndexOutOfRange { .. })
    ));
}

#[test]
fn auxbn_symmetric_branches_agree() {
    let mut rng = seeded_rng(12);
    let x = normal_tensor(&mut rng, vec![4, 3, 2, 2], 1.0).unwrap();
    let a = rand_affine(&mut rng, 3);
    let bank = ConditionalAffineBank::new(vec![a.clone(), a]).unwrap();
    let mut stats = BranchStats::batch(2, 3).unwrap();
    let out0 = auxbn_forward(&x, 0, &mut stats, &bank, EPS).unwrap();
    let out1 = auxbn_forward(&x, 1, &mut stats, &bank, EPS).unwrap();
    assert_eq!(out0, out1);
}

#[test]
fn auxbn_diverged_running_stats_rescale() {
    let mut rng = seeded_rng(13);
    let x = normal_tensor(&mut rng, vec![3, 2, 2, 2], 1.0).unwrap();
    let mut stats = BranchStats::running(2, 2).unwrap();
    let mean = Tensor::vector(vec![0.3, -0.2]).unwrap();
    let var0 = Tensor::vector(vec![0.5, 2.0]).unwrap();
    let var1 = Tensor::vector(vec![4.0, 0.25]).unwrap();
    stats.set_running(0, mean.clone(), var0.clone()).unwrap();
    stats.set_running(1, mean, var1.clone()).unwrap();
    stats.set_training(false);
    let bank = ConditionalAffineBank::identity(2, 2).unwrap();
    let out0 = auxbn_forward(&x, 0, &mut stats, &bank, EPS).unwrap();
    let out1 = auxbn_forward(&x, 1, &mut stats, &bank, EPS).unwrap();
    let sigma = |v: &Tensor, c: usize| (v.data()[c] + EPS.get()).sqrt();
    let predicted = Tensor::from_fn(x.shape().to_vec(), |i| {
        let c = i[1];
        out1.get(i).unwrap() * sigma(&var1, c) / sigma(&var0, c)
    })
    .unwrap();
    assert!(out0.max_abs_diff(&predicted).unwrap() < 1e-12);
}

#[test]
fn sa_auxbn_reductions() {
    let mut rng = seeded_rng(14);
    let x = normal_tensor(&mut rng, vec![4, 3, 2, 2], 1.0).unwrap();
    let bank = rand_bank(&mut rng, 2, 3);
    let sandwich = rand_affine(&mut rng, 3);
    let merged = merge_sandwich(&sandwich, &bank).unwrap();
    let mut stats = BranchStats::running(2, 3).unwrap();
    stats
        .set_running(1, Tensor::vector(vec![0.1, 0.2, -0.3]).unwrap(), Tensor::vector(vec![1.5, 0.5, 2.5]).unwrap())
        .unwrap();
    stats.set_training(false);
    for branch in 0..2 {
        let id = sa_auxbn_forward(&x, branch, &mut stats, &ChannelAffine::identity(3).unwrap(), &bank, EPS).unwrap();
        let aux = auxbn_forward(&x, branch, &mut stats, &bank, EPS).unwrap();
        assert_eq!(id, aux);

        let sa = sa_auxbn_forward(&x, branch, &mut stats, &sandwich, &bank, EPS).unwrap();
        let merged_out = auxbn_forward(&x, branch, &mut stats, &merged, EPS).unwrap();
        assert!(sa.max_abs_diff(&merged_out).unwrap() < 1e-10);
    }
}

#[test]
fn sa_auxbn_prenormalized_input() {
    // Rows {-1, 1} per channel have batch mean 0 and variance 1 exactly.
    let x = Tensor::new(vec![2, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
    let sandwich = ChannelAffine::from_vecs(vec![1.5, -0.5], vec![0.2, 0.3]).unwrap();
    let bank = ConditionalAffineBank::new(vec![
        ChannelAffine::from_vecs(vec![2.0, 3.0], vec![-1.0, 1.0]).unwrap(),
        ChannelAffine::identity(2).unwrap(),
    ])
    .unwrap();
    let mut stats = BranchStats::batch(2, 2).unwrap();
    let out = sa_auxbn_forward(&x, 0, &mut stats, &sandwich, &bank, EPS).unwrap();
    let b0 = bank.entry(0).unwrap();
    let expected = Tensor::from_fn(vec![2, 2], |i| {
        let c = i[1];
        b0.gamma.data()[c] * (sandwich.gamma.data()[c] * x.get(i).unwrap() + sandwich.beta.data()[c])
            + b0.beta.data()[c]
    })
    .unwrap();
    // eps shrinks the normalized value by 1/sqrt(1 + eps).
    assert!(out.max_abs_diff(&expected).unwrap() < 5e-5);
}

#[test]
fn instance_moments_cases() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (mu, sigma) = instance_moments(&x, EPS).unwrap();
    assert_eq!(mu.shape(), &[1, 1]);
    assert!((mu.data()[0] - 2.5).abs() < 1e-15);
    assert!((sigma.data()[0] - (1.25 + EPS.get()).sqrt()).abs() < 1e-15);

    let flat = Tensor::full(vec![2, 3, 2, 2], 0.4).unwrap();
    let (mu, sigma) = instance_moments(&flat, EPS).unwrap();
    assert!(mu.data().iter().all(|v| (v - 0.4).abs() < 1e-15));
    assert!(sigma.data().iter().all(|v| (v - EPS.get().sqrt()).abs() < 1e-12));

    let perm = Tensor::new(vec![1, 1, 2, 2], vec![4.0, 1.0, 2.0, 3.0]).unwrap();
    let (mu2, sigma2) = instance_moments(&perm, EPS).unwrap();
    let (mu, sigma) = instance_moments(&x, EPS).unwrap();
    assert_eq!((mu, sigma), (mu2, sigma2));
}

#[test]
fn adain_properties() {
    let mut rng = seeded_rng(15);
    let content = normal_tensor(&mut rng, vec![2, 3, 4, 4], 1.0).unwrap();
    let style = normal_tensor(&mut rng, vec![2, 3, 4, 4], 2.0).unwrap().map(|v| v + 1.0);

    let same = adain_forward(&content, &content, EPS).unwrap();
    assert!(same.max_abs_diff(&content).unwrap() < 1e-8);

    let out = adain_forward(&content, &style, EPS).unwrap();
    let (mo, so) = instance_moments(&out, EPS).unwrap();
    let (ms, ss) = instance_moments(&style, EPS).unwrap();
    assert!(mo.max_abs_diff(&ms).unwrap() < 1e-6);
    // Output variance is sigma(y)^2 * var(x) / (var(x) + eps).
    let (_, sx) = instance_moments(&content, EPS).unwrap();
    let e = EPS.get();
    for k in 0..6 {
        let (o, s, x) = (so.data()[k], ss.data()[k], sx.data()[k]);
        let expected = s * s * (x * x - e) / (x * x);
        assert!((o * o - e - expected).abs() < 1e-9);
    }

    assert!(out.max_abs_diff(&loop_adain(&content, &style, None)).unwrap() < 1e-10);

    let one_style = normal_tensor(&mut rng, vec![1, 3, 2, 2], 1.0).unwrap();
    let out = adain_forward(&content, &one_style, EPS).unwrap();
    assert!(out.max_abs_diff(&loop_adain(&content, &one_style, None)).unwrap() < 1e-10);

    let bad = Tensor::zeros(vec![3, 3, 2, 2]).unwrap();
    assert!(adain_forward(&content, &bad, EPS).is_err());
    let bad = Tensor::zeros(vec![2, 2, 2, 2]).unwrap();
    assert!(matches!(adain_forward(&content, &bad, EPS), Err(Error::ChannelMismatch { .. })));
}

#[test]
fn saadain_properties() {
    let mut rng = seeded_rng(16);
    let content = normal_tensor(&mut rng, vec![2, 3, 3, 3], 1.0).unwrap();
    let style = normal_tensor(&mut rng, vec![2, 3, 3, 3], 0.5).unwrap().map(|v| v - 2.0);
    let identity = ChannelAffine::identity(3).unwrap();
    assert_eq!(
        saadain_forward(&content, &style, &identity, EPS).unwrap(),
        adain_forward(&content, &style, EPS).unwrap()
    );

    let sandwich = rand_affine(&mut rng, 3);
    let out = saadain_forward(&content, &style, &sandwich, EPS).unwrap();
    assert!(out.max_abs_diff(&loop_adain(&content, &style, Some(&sandwich))).unwrap() < 1e-10);

    // Instance mean of the output is mu(y) + sigma(y) * mean(gamma_sa * xhat + beta_sa),
    // and xhat has zero instance mean, so this is mu(y) + sigma(y) * beta_sa.
    let (mo, _) = instance_moments(&out, EPS).unwrap();
    let (ms, ss) = instance_moments(&style, EPS).unwrap();
    for n in 0..2 {
        for c in 0..3 {
            let k = n * 3 + c;
            let expected = ms.data()[k] + ss.data()[k] * sandwich.beta.data()[c];
            assert!((mo.data()[k] - expected).abs() < 1e-10);
        }
    }
}

/// Weighted sum so the loss is not invariant to the normalized output.
fn weighted_sum(g: &mut Graph, h: crate::tensor::Var, seed: u64) -> crate::Result<crate::tensor::Var> {
    let mut rng = seeded_rng(seed);
    let w = normal_tensor(&mut rng, g.shape(h).to_vec(), 1.0)?;
    let wv = g.constant(w);
    let p = g.mul(h, wv)?;
    g.sum_all(p)
}

#[test]
fn layers_pass_gradient_checks() {
    for seed in 0..20u64 {
        let mut rng = seeded_rng(100 + seed);
        let x = normal_tensor(&mut rng, vec![3, 2, 2, 2], 1.0).unwrap();
        let sandwich = rand_affine(&mut rng, 2);
        let bank = rand_bank(&mut rng, 2, 2);
        let style = normal_tensor(&mut rng, vec![3, 2, 2, 2], 1.0).unwrap();

        let checks: Vec<(&str, f64)> = vec![
            (
                "sabn/x",
                gradient_error(
                    |g, xv| {
                        let s = sandwich.bind(g);
                        let b = bank.bind(g)?;
                        let h = ops::sabn(g, xv, Condition::Class(1), s, b, &mut batch1(2), EPS)?;
                        weighted_sum(g, h, seed)
                    },
                    &x,
                    1e-6,
                )
                .unwrap(),
            ),
            (
                "sabn/gamma_sa",
                gradient_error(
                    |g, gv| {
                        let xv = g.constant(x.clone());
                        let beta = g.constant(sandwich.beta.clone());
                        let b = bank.bind(g)?;
                        let s = AffineVars { gamma: gv, beta };
                        let h = ops::sabn(g, xv, Condition::Class(0), s, b, &mut batch1(2), EPS)?;
                        weighted_sum(g, h, seed)
                    },
                    &sandwich.gamma,
                    1e-6,
                )
                .unwrap(),
            ),
            (
                "sa_auxbn/x",
                gradient_error(
                    |g, xv| {
                        let s = sandwich.bind(g);
                        let b = bank.bind(g)?;
                        let mut st = BranchStats::running(2, 2)?;
                        let h = ops::sa_auxbn(g, xv, 0, &mut st, s, b, EPS)?;
                        weighted_sum(g, h, seed)
                    },
                    &x,
                    1e-6,
                )
                .unwrap(),
            ),
            (
                "saadain/content",
                gradient_error(
                    |g, xv| {
                        let s = sandwich.bind(g);
                        let y = g.constant(style.clone());
                        let h = ops::saadain(g, xv, y, s, EPS)?;
                        weighted_sum(g, h, seed)
                    },
                    &x,
                    1e-6,
                )
                .unwrap(),
            ),
            (
                "adain/style",
                gradient_error(
                    |g, yv| {
                        let xv = g.constant(x.clone());
                        let h = ops::adain(g, xv, yv, EPS)?;
                        weighted_sum(g, h, seed)
                    },
                    &style,
                    1e-6,
                )
                .unwrap(),
            ),
        ];
        for (name, err) in checks {
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_equivalence(
        seed in any::<u64>(),
        n in 1usize..5,
        c in 1usize..17,
        k in 1usize..9,
        hw in 1usize..4,
    ) {
        let mut rng = seeded_rng(seed);
        let x = normal_tensor(&mut rng, vec![n, c, hw, hw], 3.0).unwrap();
        let sandwich = rand_affine(&mut rng, c);
        let bank = rand_bank(&mut rng, k, c);
        let merged = merge_sandwich(&sandwich, &bank).unwrap();
        for i in 0..k {
            let a = sabn_forward(&x, i, &sandwich, &bank, &mut batch1(c), EPS).unwrap();
            let b = ccbn_forward(&x, i, &merged, &mut batch1(c), EPS).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
        }
    }

    #[test]
    fn branch_isolation(seed in any::<u64>(), updates in 1usize..6, branch in 0usize..2) {
        let mut rng = seeded_rng(seed);
        let mut stats = BranchStats::running(2, 2).unwrap();
        let sandwich = rand_affine(&mut rng, 2);
        let bank = rand_bank(&mut rng, 2, 2);
        let warm = normal_tensor(&mut rng, vec![3, 2], 1.0).unwrap();
        sa_auxbn_forward(&warm, 1 - branch, &mut stats, &sandwich, &bank, EPS).unwrap();
        let other = (stats.running_mean(1 - branch).unwrap().clone(), stats.running_var(1 - branch).unwrap().clone());
        for _ in 0..updates {
            let x = normal_tensor(&mut rng, vec![4, 2], 2.0).unwrap();
            sa_auxbn_forward(&x, branch, &mut stats, &sandwich, &bank, EPS).unwrap();
        }
        prop_assert_eq!(stats.running_mean(1 - branch).unwrap(), &other.0);
        prop_assert_eq!(stats.running_var(1 - branch).unwrap(), &other.1);
    }
}
