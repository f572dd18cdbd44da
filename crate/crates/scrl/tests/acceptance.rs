//! Acceptance suite: one test per shipped guarantee, each printing a
//! PASS line with its headline numbers.
//!
//! Criteria 6–8 train real models on the synthetic dataset and take several
//! minutes each; the whole suite is sized to finish on a laptop-class CPU.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use scrl::encoders::{apply_normalization, compute_normalization, TinyCnn};
use scrl::gradcheck::{finite_diff_grad, finite_diff_grad_at, max_rel_err};
use scrl::graph::{ParamSet, Tape, Var};
use scrl::losses::{
    cosine_distance, hinge_consistency_term, joint_loss, pairwise_loss, LossConfig,
};
use scrl::mfcc::{compute_mfcc, dct_matrix, mel_filterbank, MfccConfig};
use scrl::model::{ImageMode, ModelConfig, ScrlModel, IMAGE_FEAT_DIM};
use scrl::retrieval::{evaluate, mean_ap, EmbeddingCorpus, Protocol};
use scrl::seeding;
use scrl::tensor::Tensor;
use scrl::trainer::{
    compute_image_features, normalize_encoders, prepare_voice_inputs, split_indices, Trainer,
    TrainConfig,
};
use scrl::wav::Waveform;
use scrl::Result;

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random values kept at least `margin` away from zero (for ReLU kinks).
fn rand_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < margin {
                margin * 2.0 * v.signum().max(-1.0).min(1.0) + v
            } else {
                v
            }
        })
        .map(|v| if v == 0.0 { 3.0 * margin } else { v })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Max relative error between reverse-mode and finite-difference gradients of
/// `build` (a scalar-valued graph over one parameter tensor).
fn grad_check<F>(x0: &Tensor, build: F) -> f64
where
    F: Fn(&mut Tape, &ParamSet, Var) -> Result<Var>,
{
    let mut ps = ParamSet::new();
    let id = ps.add("x", x0.clone(), false, true);
    let mut tape = Tape::new();
    let xv = tape.param(&ps, id);
    let loss = build(&mut tape, &ps, xv).expect("forward");
    tape.backward(loss, &mut ps).expect("backward");
    let ad = ps.grad(id).data().to_vec();

    let fd = finite_diff_grad(
        |t| {
            let mut ps2 = ParamSet::new();
            let id2 = ps2.add("x", t.clone(), false, true);
            let mut tape2 = Tape::new();
            let xv2 = tape2.param(&ps2, id2);
            let loss2 = build(&mut tape2, &ps2, xv2)?;
            Ok(tape2.value(loss2).item())
        },
        x0,
        FD_STEP,
    )
    .expect("finite differences");
    max_rel_err(&ad, fd.data())
}

/// Weighted sum of an op output so gradients are non-uniform.
fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = seeding::rng_for(20240, 99);
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;

    for trial in 0..6 {
        let m = 1 + (trial % 3);
        let k = 2 + (trial % 3);
        let n = 1 + ((trial + 1) % 3);

        // matmul w.r.t. both operands
        let b_const = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let w_out = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let b = t.constant(b_const.clone());
            let y = t.matmul(x, b)?;
            weighted_sum(t, y, &w_out)
        }));
        let a_const = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let a = t.constant(a_const.clone());
            let y = t.matmul(a, x)?;
            weighted_sum(t, y, &w_out)
        }));

        // bias broadcast w.r.t. bias
        let rows = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[n], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let r = t.constant(rows.clone());
            let y = t.add_row(r, x)?;
            weighted_sum(t, y, &w_out)
        }));

        // elementwise add / mul / scale / add_const
        let other = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let o = t.constant(other.clone());
            let s = t.add(x, o)?;
            let p = t.mul(s, x)?;
            let sc = t.scale(p, 1.7);
            let ac = t.add_const(sc, 0.3);
            weighted_sum(t, ac, &w_out)
        }));

        // activations: relu (off-kink), tanh, log (positive), softmax
        let x0 = rand_tensor_off_zero(&mut rng, &[m, n], 1e-2);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.relu(x);
            weighted_sum(t, y, &w_out)
        }));
        let x0 = rand_tensor(&mut rng, &[m, n], -2.0, 2.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.tanh(x);
            weighted_sum(t, y, &w_out)
        }));
        let x0 = rand_tensor(&mut rng, &[m, n], 0.1, 2.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.log(x);
            weighted_sum(t, y, &w_out)
        }));
        let x0 = rand_tensor(&mut rng, &[m, n], -2.0, 2.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.softmax_rows(x)?;
            weighted_sum(t, y, &w_out)
        }));

        // stack / gather / diag / reshape / sum
        let width = 3 + (trial % 3);
        let other_row = rand_tensor(&mut rng, &[width], -1.0, 1.0);
        let w_stack = rand_tensor(&mut rng, &[2, width], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[width], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let o = t.constant(other_row.clone());
            let y = t.stack_rows(&[x, o])?;
            weighted_sum(t, y, &w_stack)
        }));
        let idx: Vec<usize> = (0..m).map(|i| (i * 2 + trial) % n.max(1)).collect();
        let w_gather = rand_tensor(&mut rng, &[m], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let idx2 = idx.clone();
        worst = worst.max(grad_check(&x0, move |t, _, x| {
            let y = t.gather_rows(x, idx2.clone())?;
            weighted_sum(t, y, &w_gather)
        }));
        let sq = 2 + (trial % 3);
        let w_diag = rand_tensor(&mut rng, &[sq], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[sq, sq], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.diag(x)?;
            weighted_sum(t, y, &w_diag)
        }));
        let x0 = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.reshape(x, vec![n, m])?;
            let s = t.sum(y);
            Ok(t.scale(s, 0.7))
        }));

        // cosine distance matrix: cross and self pairings
        let d = 3 + (trial % 4);
        let rows_b = rand_tensor(&mut rng, &[2, d], -1.0, 1.0);
        let w_cos = rand_tensor(&mut rng, &[m, 2], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[m, d], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let b = t.constant(rows_b.clone());
            let y = t.cosine_matrix(x, b)?;
            weighted_sum(t, y, &w_cos)
        }));
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let b = t.constant(rows_b.clone());
            let y = t.cosine_matrix(b, x)?;
            let w = rand_tensor(&mut seeding::rng_for(7, 7), &[2, m], -1.0, 1.0);
            weighted_sum(t, y, &w)
        }));
        let w_self = rand_tensor(&mut rng, &[m, m], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.cosine_matrix(x, x)?;
            weighted_sum(t, y, &w_self)
        }));

        // conv1d w.r.t. input, weights, bias
        let (len, cin, cout, kk) = (5 + trial, 1 + (trial % 2), 1 + ((trial + 1) % 3), 2 + (trial % 2));
        let stride = 1 + (trial % 2);
        let dilation = 1 + (trial % 3);
        let (lout, _) = scrl::ops::same_padding(len, kk, stride, dilation);
        let wt = rand_tensor(&mut rng, &[kk, cin, cout], -1.0, 1.0);
        let bt = rand_tensor(&mut rng, &[cout], -0.5, 0.5);
        let w_conv = rand_tensor(&mut rng, &[lout, cout], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[len, cin], -1.0, 1.0);
        for target in 0..3 {
            let (wt, bt, x0) = (wt.clone(), bt.clone(), x0.clone());
            let w_conv = w_conv.clone();
            let probe = match target {
                0 => x0.clone(),
                1 => wt.clone(),
                _ => bt.clone(),
            };
            worst = worst.max(grad_check(&probe, move |t, _, x| {
                let (xv, wv, bv) = match target {
                    0 => (x, t.constant(wt.clone()), t.constant(bt.clone())),
                    1 => (t.constant(x0.clone()), x, t.constant(bt.clone())),
                    _ => (t.constant(x0.clone()), t.constant(wt.clone()), x),
                };
                let y = t.conv1d(xv, wv, bv, stride, dilation)?;
                weighted_sum(t, y, &w_conv)
            }));
            checks += 1;
        }

        // max pool (values well separated so the argmax is stable)
        let x0 = {
            let mut t = rand_tensor(&mut rng, &[6, 2], -1.0, 1.0);
            let data = t.data_mut();
            for (i, v) in data.iter_mut().enumerate() {
                *v += i as f64 * 0.05;
            }
            t
        };
        let w_pool = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.maxpool1d(x, 2, 2)?;
            weighted_sum(t, y, &w_pool)
        }));

        // conv2d and global average pool
        let (h, w2, cin2, cout2) = (3 + (trial % 2), 4, 1 + (trial % 2), 2);
        let s2 = 1 + (trial % 2);
        let (oh, _) = scrl::ops::same_padding(h, 3, s2, 1);
        let (ow, _) = scrl::ops::same_padding(w2, 3, s2, 1);
        let wt2 = rand_tensor(&mut rng, &[3, 3, cin2, cout2], -0.7, 0.7);
        let bt2 = rand_tensor(&mut rng, &[cout2], -0.3, 0.3);
        let w_conv2 = rand_tensor(&mut rng, &[oh, ow, cout2], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[h, w2, cin2], -1.0, 1.0);
        for target in 0..3 {
            let (wt2, bt2, x0) = (wt2.clone(), bt2.clone(), x0.clone());
            let w_conv2 = w_conv2.clone();
            let probe = match target {
                0 => x0.clone(),
                1 => wt2.clone(),
                _ => bt2.clone(),
            };
            worst = worst.max(grad_check(&probe, move |t, _, x| {
                let (xv, wv, bv) = match target {
                    0 => (x, t.constant(wt2.clone()), t.constant(bt2.clone())),
                    1 => (t.constant(x0.clone()), x, t.constant(bt2.clone())),
                    _ => (t.constant(x0.clone()), t.constant(wt2.clone()), x),
                };
                let y = t.conv2d(xv, wv, bv, s2)?;
                weighted_sum(t, y, &w_conv2)
            }));
            checks += 1;
        }
        let w_gap = rand_tensor(&mut rng, &[cin2], -1.0, 1.0);
        let x0 = rand_tensor(&mut rng, &[h, w2, cin2], -1.0, 1.0);
        worst = worst.max(grad_check(&x0, |t, _, x| {
            let y = t.global_avg_pool(x)?;
            weighted_sum(t, y, &w_gap)
        }));

        checks += 17;
    }
    assert!(checks >= 100, "only {checks} op-level gradient checks ran");
    assert!(worst < GRAD_TOL, "op-level max relative error {worst}");

    // Full joint loss on a 4-sample micro-batch, every hinge argument at
    // least 1e-3 from its kink.
    let micro_mfcc = MfccConfig { target_frames: 16, n_coeffs: 4, ..Default::default() };
    let micro = ModelConfig {
        mfcc: micro_mfcc,
        hidden_dim: 6,
        rep_dim: 5,
        n_classes: 3,
        dilation_override: None,
        image_mode: ImageMode::Precomputed,
    };
    let model = ScrlModel::init(micro, 2024).unwrap();
    let mut rng = seeding::rng_for(31, 77);
    let labels = [0usize, 1, 2, 0];
    let cfg = LossConfig::default();
    let feats = rand_tensor(&mut rng, &[4, IMAGE_FEAT_DIM], -0.5, 0.5);
    let voices: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, &[64], -1.0, 1.0)).collect();

    // Verify the kink margin on the actual representations.
    let phi_i = model.embed_image_features(&feats).unwrap();
    let phi_v = model.embed_voice_inputs(&voices).unwrap();
    let mut min_margin = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            let ell = if labels[i] == labels[j] { 1.0 } else { -1.0 };
            for (a, b, margin) in [
                (phi_i.row(i), phi_i.row(j), cfg.xi),
                (phi_v.row(i), phi_v.row(j), cfg.xi),
                (phi_v.row(i), phi_i.row(j), cfg.zeta),
                (phi_i.row(i), phi_v.row(j), cfg.zeta),
            ] {
                let d = cosine_distance(a, b).unwrap();
                min_margin = min_margin.min((1.0 - ell * (margin - d)).abs());
            }
        }
    }
    assert!(min_margin >= 1e-3, "hinge argument within {min_margin} of a kink; pick a new seed");

    let loss_of = |params: &ParamSet| -> Result<f64> {
        let mut m2 = model.clone();
        m2.params = params.clone();
        let refs: Vec<&Tensor> = voices.iter().collect();
        let mut tape = Tape::new();
        let (pi, pv) = m2.batch_forward(&mut tape, &feats, &refs)?;
        let (lv, _) = joint_loss(
            &mut tape,
            &m2.params,
            pi,
            pv,
            &labels,
            &m2.image_classifier,
            &m2.voice_classifier,
            &cfg,
        )?;
        Ok(tape.value(lv).item())
    };

    // One reverse pass over the real training graph.
    let mut m_ad = model.clone();
    let refs: Vec<&Tensor> = voices.iter().collect();
    let mut tape = Tape::new();
    let (pi, pv) = m_ad.batch_forward(&mut tape, &feats, &refs).unwrap();
    let (lv, _) = joint_loss(
        &mut tape,
        &m_ad.params,
        pi,
        pv,
        &labels,
        &m_ad.image_classifier,
        &m_ad.voice_classifier,
        &cfg,
    )
    .unwrap();
    m_ad.params.zero_grads();
    tape.backward(lv, &mut m_ad.params).unwrap();

    let mut sample_rng = seeding::rng_for(5150, 1);
    let mut joint_worst: f64 = 0.0;
    let names: Vec<String> = m_ad.params.iter().map(|(_, e)| e.name.clone()).collect();
    for name in &names {
        let pid = m_ad.params.by_name(name).unwrap();
        let value = m_ad.params.value(pid).clone();
        let n = value.numel();
        let coords: Vec<usize> = if n <= 6 {
            (0..n).collect()
        } else {
            (0..6).map(|_| sample_rng.random_range(0..n)).collect()
        };
        let base = model.params.clone();
        let fd = finite_diff_grad_at(
            |t| {
                let mut ps = base.clone();
                *ps.value_mut(pid) = t.clone();
                loss_of(&ps)
            },
            &value,
            FD_STEP,
            &coords,
        )
        .unwrap();
        let ad = m_ad.params.grad(pid);
        for &c in &coords {
            let err = max_rel_err(&[ad.data()[c]], &[fd.data()[c]]);
            joint_worst = joint_worst.max(err);
        }
    }
    assert!(joint_worst < GRAD_TOL, "joint-loss max relative error {joint_worst}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "gradient checks took {elapsed:.1}s, budget is 120s");
    println!(
        "criterion 1 (gradient correctness): PASS — {checks} op checks worst {worst:.2e}, joint loss worst {joint_worst:.2e}, {elapsed:.1}s"
    );
}

#[test]
fn criterion_2_shape_conformance() {
    // Voice ladder on a 24000-sample input.
    let cfg = ModelConfig::with_defaults(8);
    let model = ScrlModel::init(cfg, 99).unwrap();
    assert_eq!(
        model.voice_encoder.layer_shapes(),
        vec![(24000, 1), (12000, 6), (6000, 12), (3000, 12), (1500, 24), (750, 48), (375, 48)]
    );
    assert_eq!(model.voice_encoder.flat_dim(), 18000);

    // Image path: 224×224×3 → 7×7×512 → 512 pooled.
    let scrl::encoders::ImageFeatureProvider::TinyCnn(ref cnn) = model.image_provider else {
        panic!("default image mode is the conv stack");
    };
    let img = Tensor::filled(&[224, 224, 3], 0.3);
    let fmap = cnn.infer(&model.params, &img).unwrap();
    assert_eq!(fmap.shape(), &[7, 7, 512]);
    let (h, w, c) = fmap.dims3().unwrap();
    let pooled = scrl::ops::gap2d_forward(fmap.data(), h, w, c);
    assert_eq!(pooled.len(), 512);

    // Representations are 1024-d for both branches.
    let feats = Tensor::new(vec![1, IMAGE_FEAT_DIM], pooled).unwrap();
    let phi_i = model.embed_image_features(&feats).unwrap();
    assert_eq!(phi_i.shape(), &[1, 1024]);
    let voice = Tensor::zeros(&[24000]);
    let phi_v = model.embed_voice_inputs(&[voice]).unwrap();
    assert_eq!(phi_v.shape(), &[1, 1024]);

    println!("criterion 2 (shape conformance): PASS — voice ladder, 7×7×512→512 image path, 1024-d representations");
}

#[test]
fn criterion_3_normalization_fixed_point() {
    let mut params = ParamSet::new();
    let mut rng = seeding::rng_for(314, 1);
    let cnn = TinyCnn::build(&mut params, &mut rng, false).unwrap();
    let calib: Vec<Tensor> = (0..16).map(|_| rand_tensor(&mut rng, &[224, 224, 3], 0.0, 1.0)).collect();

    let stats = compute_normalization(&cnn, &params, &calib).unwrap();
    apply_normalization(&cnn, &mut params, &stats).unwrap();

    let recheck = compute_normalization(&cnn, &params, &calib).unwrap();
    let mut n_scaled = 0usize;
    let mut worst: f64 = 0.0;
    for layer in recheck.per_layer.iter().flatten() {
        for &s in layer {
            if s > 0.0 {
                n_scaled += 1;
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    assert!(n_scaled > 0);
    assert!(worst <= 1e-6, "recomputed mean activation off by {worst}");

    // Second application is a no-op within 1e-9.
    let before: Vec<Vec<f64>> = params.iter().map(|(_, e)| e.value.data().to_vec()).collect();
    apply_normalization(&cnn, &mut params, &recheck).unwrap();
    let mut drift: f64 = 0.0;
    for ((_, e), prev) in params.iter().zip(&before) {
        for (a, b) in e.value.data().iter().zip(prev) {
            drift = drift.max((a - b).abs());
        }
    }
    assert!(drift <= 1e-9, "second application moved parameters by {drift}");
    println!(
        "criterion 3 (normalization fixed point): PASS — {n_scaled} filters at 1±{worst:.1e}, reapply drift {drift:.1e}"
    );
}

#[test]
fn criterion_4_loss_algebra() {
    // Cosine distance properties over 1e5 random pairs.
    let mut rng = seeding::rng_for(46, 4);
    let mut max_self: f64 = 0.0;
    for _ in 0..100_000 {
        let d = rng.random_range(1..=8);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let dist = cosine_distance(&x, &y).unwrap();
        assert!((-1e-9..=2.0 + 1e-9).contains(&dist), "distance {dist} out of range");
        let fwd = cosine_distance(&x, &y).unwrap();
        let rev = cosine_distance(&y, &x).unwrap();
        assert_eq!(fwd.to_bits(), rev.to_bits(), "symmetry must be exact");
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= 1e-6 {
            max_self = max_self.max(cosine_distance(&x, &x).unwrap().abs());
        }
    }
    assert!(max_self <= 1e-9, "self distance {max_self}");

    // Closed-form hinge examples.
    assert_eq!(hinge_consistency_term(1.0, 0.4, 0.0), 0.6);
    assert_eq!(hinge_consistency_term(-1.0, 0.4, 2.0), 0.0);
    assert_eq!(hinge_consistency_term(-1.0, 0.4, 0.0), 1.4);

    // Uniform classification over C=4: the ε-exact closed form is
    // −2·ln(1/4 + ε), which is 2·ln 4 up to the documented ε shift.
    let mut params = ParamSet::new();
    let mut zrng = seeding::rng_for(1, 1);
    let ih = scrl::losses::ClassifierHead::build(&mut params, &mut zrng, "ci", 3, 4).unwrap();
    let vh = scrl::losses::ClassifierHead::build(&mut params, &mut zrng, "cv", 3, 4).unwrap();
    for (_, e) in params.iter_mut() {
        e.value.data_mut().fill(0.0);
    }
    let cfg = LossConfig::default();
    let mut tape = Tape::new();
    let pi = tape.constant(Tensor::new(vec![2, 3], vec![0.4, 0.1, 0.2, 0.9, 0.8, 0.7]).unwrap());
    let pv = tape.constant(Tensor::new(vec![2, 3], vec![0.3, 0.3, 0.3, 0.1, 0.2, 0.5]).unwrap());
    let l = scrl::losses::classification_loss(&mut tape, &params, pi, pv, &[0, 2], &ih, &vh, &cfg).unwrap();
    let exact = -2.0 * (0.25f64 + cfg.epsilon).ln();
    assert!((tape.value(l).item() - exact).abs() <= 1e-12, "{} vs {}", tape.value(l).item(), exact);
    assert!((tape.value(l).item() - 2.0 * 4.0f64.ln()).abs() <= 1e-8);

    // η₁ = η₂ = 0 collapses the joint loss to the pairwise loss exactly.
    let zero = LossConfig { eta1: 0.0, eta2: 0.0, ..Default::default() };
    let rows_i = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64) * 0.17 - 1.0).collect()).unwrap();
    let rows_v = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64) * 0.1 - 0.4).collect()).unwrap();
    let mut t1 = Tape::new();
    let a1 = t1.constant(rows_i.clone());
    let b1 = t1.constant(rows_v.clone());
    let (j, _) =
        joint_loss(&mut t1, &params, a1, b1, &[0, 1, 2], &ih, &vh, &zero).unwrap();
    let mut t2 = Tape::new();
    let a2 = t2.constant(rows_i);
    let b2 = t2.constant(rows_v);
    let p = pairwise_loss(&mut t2, a2, b2).unwrap();
    assert_eq!(t1.value(j).item().to_bits(), t2.value(p).item().to_bits());

    println!("criterion 4 (loss algebra): PASS — 1e5 cosine pairs, closed forms, η=0 collapse");
}

/// Independent definition-loop reference for ranking and metrics.
mod reference {
    pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut nx = 0.0;
        let mut ny = 0.0;
        for i in 0..x.len() {
            dot += x[i] * y[i];
            nx += x[i] * x[i];
            ny += y[i] * y[i];
        }
        1.0 - dot / ((nx.sqrt() + 1e-12) * (ny.sqrt() + 1e-12))
    }

    pub struct RefMetrics {
        pub map: f64,
        pub p_at: Vec<(usize, f64)>,
        pub curve: Vec<f64>,
    }

    /// Brute-force evaluation: selection-sorted ranking per query, AP and
    /// precision directly from their definitions.
    pub fn evaluate(
        ids: &[String],
        labels: &[usize],
        queries: &[Vec<f64>],
        targets: &[Vec<f64>],
        ks: &[usize],
    ) -> RefMetrics {
        let n = ids.len();
        let mut ap_sum = 0.0;
        let mut ap_n = 0usize;
        let mut curve = vec![0.0; n];
        for q in 0..n {
            // selection sort by (distance, id)
            let mut order: Vec<usize> = (0..n).collect();
            let dist: Vec<f64> = (0..n).map(|t| cosine(&queries[q], &targets[t])).collect();
            for i in 0..n {
                let mut best = i;
                for j in i + 1..n {
                    let better = dist[order[j]] < dist[order[best]]
                        || (dist[order[j]] == dist[order[best]] && ids[order[j]] < ids[order[best]]);
                    if better {
                        best = j;
                    }
                }
                order.swap(i, best);
            }
            let rel: Vec<bool> = order.iter().map(|&t| labels[t] == labels[q]).collect();
            let total_rel = rel.iter().filter(|&&r| r).count();
            if total_rel > 0 {
                let mut hits = 0usize;
                let mut ap = 0.0;
                for (k, &r) in rel.iter().enumerate() {
                    if r {
                        hits += 1;
                        ap += hits as f64 / (k + 1) as f64;
                    }
                }
                ap_sum += ap / total_rel as f64;
                ap_n += 1;
            }
            let mut hits = 0usize;
            for (k, &r) in rel.iter().enumerate() {
                if r {
                    hits += 1;
                }
                curve[k] += hits as f64 / (k + 1) as f64;
            }
        }
        for v in curve.iter_mut() {
            *v /= n as f64;
        }
        let p_at = ks.iter().filter(|&&k| k <= n).map(|&k| (k, curve[k - 1])).collect();
        RefMetrics { map: ap_sum / ap_n as f64, p_at, curve }
    }
}

#[test]
fn criterion_5_metric_oracle_equivalence() {
    // The AP worked example: relevant at ranks 1 and 3 of 4.
    {
        use scrl::retrieval::{average_precision, RankedResult};
        let r = RankedResult {
            query_id: "q".into(),
            protocol: Protocol::ImageToVoice,
            entries: vec![(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)],
            relevant: vec![true, false, true, false],
        };
        assert_eq!(average_precision(&r), Some(5.0 / 6.0));
    }

    let mut rng = seeding::rng_for(2025, 55);
    let mut worst: f64 = 0.0;
    for corpus_no in 0..200 {
        let n = rng.random_range(3..=50);
        let c = rng.random_range(1..=5usize);
        let d = rng.random_range(2..=8);
        let ids: Vec<String> = (0..n).map(|i| format!("s{:03}", i)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let img: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let voc: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

        let corpus = EmbeddingCorpus {
            ids: ids.clone(),
            labels: labels.clone(),
            image_reps: Tensor::new(vec![n, d], img.iter().flatten().copied().collect()).unwrap(),
            voice_reps: Tensor::new(vec![n, d], voc.iter().flatten().copied().collect()).unwrap(),
        };
        let ks: Vec<usize> = [1usize, 5, 10].iter().copied().filter(|&k| k <= n).collect();
        for protocol in [Protocol::ImageToVoice, Protocol::VoiceToImage] {
            let got = evaluate(&corpus, protocol, &ks, None).unwrap();
            let (queries, targets) = match protocol {
                Protocol::ImageToVoice => (&img, &voc),
                Protocol::VoiceToImage => (&voc, &img),
            };
            let want = reference::evaluate(&ids, &labels, queries, targets, &ks);
            worst = worst.max((got.map - want.map).abs());
            assert!(
                (got.map - want.map).abs() <= 1e-12,
                "corpus {corpus_no} {protocol:?}: mAP {} vs reference {}",
                got.map,
                want.map
            );
            for (&(k, gv), &(rk, rv)) in got.p_at.iter().zip(&want.p_at) {
                assert_eq!(k, rk);
                assert!((gv - rv).abs() <= 1e-12, "P@{k}: {gv} vs {rv}");
            }
            for (i, &(_, gv)) in got.curve.iter().enumerate() {
                assert!((gv - want.curve[i]).abs() <= 1e-12);
            }
        }
    }
    println!("criterion 5 (metric oracle equivalence): PASS — 200 corpora, worst mAP gap {worst:.2e}");
}

/// Monte-Carlo baseline: mAP of random embeddings with the given labels.
fn random_embedding_map(labels: &[usize], seed: u64) -> f64 {
    let mut rng = seeding::rng_for(seed, 9090);
    let n = labels.len();
    let d = 16;
    let mk = |rng: &mut ChaCha8Rng| -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let mut acc = 0.0;
    let trials = 5;
    for _ in 0..trials {
        let corpus = EmbeddingCorpus {
            ids: (0..n).map(|i| format!("r{i:03}")).collect(),
            labels: labels.to_vec(),
            image_reps: mk(&mut rng),
            voice_reps: mk(&mut rng),
        };
        let (map, _) = mean_ap(&corpus, Protocol::ImageToVoice).unwrap();
        acc += map;
    }
    acc / trials as f64
}

#[test]
fn criterion_6_end_to_end_learning() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let spec = scrl::synth::SynthSpec { classes: 8, per_class: 50, seed: 42, ..Default::default() };
    let manifest = scrl::synth::synth_dataset(&spec, tmp.path()).unwrap();

    let cfg = TrainConfig { epochs: 40, ..Default::default() };
    let mut trainer = Trainer::new(&manifest, cfg).unwrap();
    trainer.run(|e, l| println!("  epoch {e}: loss {l:.4}")).unwrap();

    // Monotonic decrease over the first five epochs.
    assert!(trainer.loss_log.len() >= 5);
    for w in trainer.loss_log[..5].windows(2) {
        assert!(w[1] < w[0], "loss not monotone over first 5 epochs: {:?}", &trainer.loss_log[..5]);
    }

    let corpus = trainer.embed(&trainer.test_idx).unwrap();
    let (map_i2v, _) = mean_ap(&corpus, Protocol::ImageToVoice).unwrap();
    let (map_v2i, _) = mean_ap(&corpus, Protocol::VoiceToImage).unwrap();
    let baseline = random_embedding_map(&corpus.labels, 7);
    assert!(
        (0.05..=0.35).contains(&baseline),
        "random-embedding baseline {baseline} outside the class-prior band"
    );
    assert!(map_i2v >= 0.90, "I→V mAP {map_i2v} < 0.90 (baseline {baseline:.3})");
    assert!(map_v2i >= 0.90, "V→I mAP {map_v2i} < 0.90 (baseline {baseline:.3})");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 900.0, "end-to-end run took {elapsed:.0}s, budget is 900s");
    println!(
        "criterion 6 (end-to-end learning): PASS — mAP i2v {map_i2v:.3} v2i {map_v2i:.3} vs baseline {baseline:.3}, {elapsed:.0}s"
    );
}

#[test]
fn criterion_7_ablation_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = scrl::synth::SynthSpec { classes: 8, per_class: 50, seed: 42, ..Default::default() };
    let manifest = scrl::synth::synth_dataset(&spec, tmp.path()).unwrap();

    // Ablation runs share the dataset and, per seed, the frozen image
    // backbone's features; only the loss switches / dilation differ.
    let seeds = [11u64, 12, 13];
    let base = TrainConfig { epochs: 12, hidden_dim: 256, rep_dim: 256, ..Default::default() };
    let variants: Vec<(&str, Box<dyn Fn(&mut TrainConfig) + Sync>)> = vec![
        ("full", Box::new(|_| {})),
        ("no-pair", Box::new(|c| c.loss.enable_pair = false)),
        ("no-intra", Box::new(|c| c.loss.enable_intra = false)),
        ("no-inter", Box::new(|c| c.loss.enable_inter = false)),
        ("no-class", Box::new(|c| c.loss.enable_class = false)),
        ("dilation-1", Box::new(|c| c.dilation_override = Some(1))),
    ];

    let voice_inputs = prepare_voice_inputs(&manifest, &base.mfcc).unwrap();
    let n = manifest.records.len();

    // One entry per (seed, variant): mean test mAP over both protocols.
    let mut scores = vec![vec![0.0f64; variants.len()]; seeds.len()];
    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|s| (0..variants.len()).map(move |v| (s, v)))
        .collect();

    // Image features per seed are identical across variants (the backbone is
    // frozen and normalized on the same calibration images).
    let mut feats_per_seed: Vec<Option<Tensor>> = vec![None; seeds.len()];
    for (si, &seed) in seeds.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let (train_idx, _) = split_indices(n, cfg.train_frac, cfg.seed);
        let calib: Vec<usize> = train_idx.iter().copied().take(cfg.calib_size).collect();
        let mut model = ScrlModel::init(cfg.model_config(manifest.n_classes), cfg.seed).unwrap();
        normalize_encoders(&mut model, &manifest, &voice_inputs, &calib).unwrap();
        feats_per_seed[si] = Some(compute_image_features(&model, &manifest).unwrap());
    }

    let run_job = |(si, vi): (usize, usize)| -> (usize, usize, f64) {
        let mut cfg = base.clone();
        cfg.seed = seeds[si];
        (variants[vi].1)(&mut cfg);
        let (train_idx, test_idx) = split_indices(n, cfg.train_frac, cfg.seed);
        let calib: Vec<usize> = train_idx.iter().copied().take(cfg.calib_size).collect();
        let mut model = ScrlModel::init(cfg.model_config(manifest.n_classes), cfg.seed).unwrap();
        normalize_encoders(&mut model, &manifest, &voice_inputs, &calib).unwrap();
        let data = scrl::trainer::PreparedDataset {
            ids: manifest.records.iter().map(|r| r.id.clone()).collect(),
            labels: manifest.records.iter().map(|r| r.label).collect(),
            n_classes: manifest.n_classes,
            voice_inputs: voice_inputs.clone(),
            image_feats: feats_per_seed[si].clone().unwrap(),
        };
        let mut trainer = Trainer::from_parts(cfg, model, data, train_idx, test_idx).unwrap();
        trainer.run(|_, _| {}).unwrap();
        let corpus = trainer.embed(&trainer.test_idx).unwrap();
        let (m1, _) = mean_ap(&corpus, Protocol::ImageToVoice).unwrap();
        let (m2, _) = mean_ap(&corpus, Protocol::VoiceToImage).unwrap();
        (si, vi, (m1 + m2) / 2.0)
    };

    // Two worker threads; each run is itself single-threaded and seeded.
    let results: Vec<(usize, usize, f64)> = std::thread::scope(|scope| {
        let mid = jobs.len() / 2;
        let (left, right) = jobs.split_at(mid);
        let h1 = scope.spawn(|| left.iter().map(|&j| run_job(j)).collect::<Vec<_>>());
        let mut out: Vec<(usize, usize, f64)> = right.iter().map(|&j| run_job(j)).collect();
        out.extend(h1.join().unwrap());
        out
    });
    for (si, vi, map) in results {
        scores[si][vi] = map;
    }

    let means: Vec<f64> = (0..variants.len())
        .map(|v| seeds.iter().enumerate().map(|(s, _)| scores[s][v]).sum::<f64>() / seeds.len() as f64)
        .collect();
    for (vi, (name, _)) in variants.iter().enumerate() {
        println!("  {name}: seed mAPs {:?}, mean {:.4}", (0..seeds.len()).map(|s| scores[s][vi]).collect::<Vec<_>>(), means[vi]);
    }

    let full = means[0];
    for (vi, (name, _)) in variants.iter().enumerate().skip(1) {
        assert!(
            full >= means[vi],
            "full model ({full:.4}) must not trail ablation {name} ({:.4})",
            means[vi]
        );
    }
    // Among the loss ablations, removing the pairwise term hurts most.
    let pair = means[1];
    for (vi, (name, _)) in variants.iter().enumerate().take(5).skip(2) {
        assert!(
            pair <= means[vi],
            "no-pair ({pair:.4}) should degrade at least as much as {name} ({:.4})",
            means[vi]
        );
    }
    println!(
        "criterion 7 (ablation ordering): PASS — full {full:.4} ≥ ablations, no-pair lowest loss-ablation at {pair:.4}"
    );
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_scrl"))
        .args(args)
        .env_remove("SCRL_SEED")
        .output()
        .expect("spawn scrl binary");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("read {}: {e}", p.display()))
}

#[test]
fn criterion_8_determinism_and_persistence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ds = |name: &str| dir.join(name).display().to_string();

    // Two synth runs are byte-identical.
    for suffix in ["a", "b"] {
        let (code, _, err) = run_cli(&[
            "synth",
            "--out",
            &ds(&format!("ds_{suffix}")),
            "--classes",
            "4",
            "--per-class",
            "16",
            "--seed",
            "7",
            "--image-size",
            "64",
            "--voice-secs",
            "1.0",
        ]);
        assert_eq!(code, 0, "synth failed: {err}");
    }
    let manifest_a = dir.join("ds_a/manifest.tsv");
    assert_eq!(read_bytes(&manifest_a), read_bytes(&dir.join("ds_b/manifest.tsv")));
    for rec in ["images/c0_s000.ppm", "voices/c3_s015.wav"] {
        assert_eq!(read_bytes(&dir.join("ds_a").join(rec)), read_bytes(&dir.join("ds_b").join(rec)));
    }

    let manifest = manifest_a.display().to_string();
    let common: Vec<String> = [
        "--manifest",
        &manifest,
        "--batch-size",
        "16",
        "--hidden-dim",
        "96",
        "--rep-dim",
        "96",
        "--seed",
        "7",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    // Two full 50-epoch runs are byte-identical (checkpoints and metrics).
    for suffix in ["a", "b"] {
        let ck = ds(&format!("ck_{suffix}.scrl"));
        let mut args: Vec<String> =
            vec!["train".into(), "--out".into(), ck.clone(), "--epochs".into(), "50".into()];
        args.extend(common.iter().cloned());
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let (code, _, err) = run_cli(&argrefs);
        assert_eq!(code, 0, "train failed: {err}");
        let (code, _, err) = run_cli(&[
            "eval",
            "--ckpt",
            &ck,
            "--manifest",
            &manifest,
            "--protocol",
            "both",
            "--k",
            "1,5,10",
            "--split",
            "test",
            "--out",
            &ds(&format!("metrics_{suffix}.csv")),
            "--curve",
            &ds(&format!("curve_{suffix}.csv")),
        ]);
        assert_eq!(code, 0, "eval failed: {err}");
    }
    assert_eq!(read_bytes(&dir.join("ck_a.scrl")), read_bytes(&dir.join("ck_b.scrl")));
    assert_eq!(read_bytes(&dir.join("metrics_a.csv")), read_bytes(&dir.join("metrics_b.csv")));
    for p in ["curve_a.i2v.csv", "curve_a.v2i.csv"] {
        let q = p.replace("_a", "_b");
        assert_eq!(read_bytes(&dir.join(p)), read_bytes(&dir.join(q)));
    }

    // Interrupt at epoch 10, resume to 50: bitwise equal to the straight run.
    let ck10 = ds("ck_10.scrl");
    let mut args: Vec<String> =
        vec!["train".into(), "--out".into(), ck10.clone(), "--epochs".into(), "10".into()];
    args.extend(common.iter().cloned());
    let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let (code, _, err) = run_cli(&argrefs);
    assert_eq!(code, 0, "10-epoch train failed: {err}");
    let ck_resumed = ds("ck_resumed.scrl");
    let (code, _, err) = run_cli(&[
        "train",
        "--manifest",
        &manifest,
        "--out",
        &ck_resumed,
        "--resume",
        &ck10,
        "--epochs",
        "50",
    ]);
    assert_eq!(code, 0, "resume failed: {err}");
    assert_eq!(
        read_bytes(&dir.join("ck_resumed.scrl")),
        read_bytes(&dir.join("ck_a.scrl")),
        "resumed checkpoint differs from the uninterrupted run"
    );
    println!("criterion 8 (determinism & persistence): PASS — byte-identical runs and resume");
}

#[test]
fn criterion_9_dsp_sanity() {
    let cfg = MfccConfig::default();

    // DCT-II orthonormality within 1e-10.
    let m = dct_matrix(cfg.n_mels, cfg.n_mels);
    for i in 0..cfg.n_mels {
        for j in 0..cfg.n_mels {
            let dot: f64 = (0..cfg.n_mels).map(|k| m[i][k] * m[j][k]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expect).abs() < 1e-10);
        }
    }

    // A 1 kHz tone localizes in the mel filter whose center is nearest 1 kHz.
    let bank = mel_filterbank(&cfg);
    let rate = cfg.target_rate;
    let tone = Waveform {
        samples: (0..rate as usize / 2)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / rate as f64).sin())
            .collect(),
        sample_rate: rate,
    };
    let frame_len = cfg.frame_len();
    let window: Vec<f64> = (0..frame_len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (frame_len - 1) as f64).cos())
        .collect();
    let frame: Vec<f64> = (0..frame_len).map(|i| tone.samples[i + 1000] * window[i]).collect();
    let mags = scrl::mfcc::magnitude_spectrum(&frame, cfg.fft_size);
    let energies: Vec<f64> = bank
        .weights
        .iter()
        .map(|row| row.iter().zip(&mags).map(|(w, m)| w * m).sum())
        .collect();
    let argmax = energies.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
    let nearest = bank
        .centers_hz
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1000.0).abs().partial_cmp(&(b.1 - 1000.0).abs()).unwrap())
        .unwrap()
        .0;
    assert_eq!(argmax, nearest, "tone localized in filter {argmax}, nearest center is {nearest}");

    // Zero-signal MFCC closed form within 1e-9.
    let silent = Waveform { samples: vec![0.0; 22050], sample_rate: 22050 };
    let mf = compute_mfcc(&silent, &cfg).unwrap();
    let c0 = (cfg.n_mels as f64).sqrt() * cfg.log_floor.ln();
    for f in 0..mf.frames.shape()[0] {
        let row = mf.frames.row(f);
        assert!((row[0] - c0).abs() < 1e-9);
        for &c in &row[1..] {
            assert!(c.abs() < 1e-9);
        }
    }

    // Hand-laid 44-byte WAV fixture decodes sample-exactly.
    let mut fixture = Vec::new();
    fixture.extend_from_slice(b"RIFF");
    fixture.extend_from_slice(&40u32.to_le_bytes());
    fixture.extend_from_slice(b"WAVE");
    fixture.extend_from_slice(b"fmt ");
    fixture.extend_from_slice(&16u32.to_le_bytes());
    fixture.extend_from_slice(&1u16.to_le_bytes());
    fixture.extend_from_slice(&1u16.to_le_bytes());
    fixture.extend_from_slice(&22050u32.to_le_bytes());
    fixture.extend_from_slice(&44100u32.to_le_bytes());
    fixture.extend_from_slice(&2u16.to_le_bytes());
    fixture.extend_from_slice(&16u16.to_le_bytes());
    fixture.extend_from_slice(b"data");
    fixture.extend_from_slice(&4u32.to_le_bytes());
    fixture.extend_from_slice(&0i16.to_le_bytes());
    fixture.extend_from_slice(&32767i16.to_le_bytes());
    let w = scrl::wav::read_wav(&fixture).unwrap();
    assert_eq!(w.sample_rate, 22050);
    assert_eq!(w.samples, vec![0.0, 32767.0 / 32768.0]);

    println!("criterion 9 (dsp sanity): PASS — DCT orthonormal, mel localization, silence closed form, WAV fixture");
}
