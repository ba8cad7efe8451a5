//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use dtjrd_core::autodiff::{Graph, Tensor};
use dtjrd_core::dataset::{group_split, preprocess_all, write_synth_dataset, ObjectRecord, Split};
use dtjrd_core::geometry::BBox;
use dtjrd_core::imaging::Plane;
use dtjrd_core::labels::{
    gaussian_soft_labels, one_hot, soft_cross_entropy, LabelDistribution, LabelKind,
};
use dtjrd_core::metrics::{
    bd_rate, mae_ea, mae_range, map_at_iou, psnr, ssim, Detection, JrdSample, RateAccuracyCurve,
};
use dtjrd_core::model::{
    encode_checkpoint, interpolate_pos_embed, DtJrdModel, ModelConfig, Normalization,
};
use dtjrd_core::parallel::Parallelism;
use dtjrd_core::trainer::{
    epoch_log_csv, evaluate_ea, fit, freeze_mask, predict_samples, Sample, SgdMomentum, Strategy,
    TrainConfig,
};
use dtjrd_core::vcm::{
    assign_qps, classify_ctus, pipeline_images, proxy_encode, run_rate_accuracy, settings_to_csv,
    ProxyCodec, QpMap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// gradient oracle

fn grad_config() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        patch_size: 8,
        dim: 16,
        depth: 2,
        heads: 2,
        mlp_dim: 32,
        num_classes: 64,
    }
}

fn logits_of(model: &DtJrdModel<f64>, images: &Tensor<f64>) -> Vec<f64> {
    model.forward(images).unwrap().into_data()
}

/// `loss(z_plus) - loss(z_minus)` for mean soft cross-entropy, evaluated from
/// the logit differences so the two ~4-nat losses are never subtracted.
fn loss_difference(z_plus: &[f64], z_minus: &[f64], labels: &[LabelDistribution]) -> f64 {
    let n = labels[0].len();
    let mut total = 0.0;
    for (b, l) in labels.iter().enumerate() {
        let (zp, zm) = (&z_plus[b * n..(b + 1) * n], &z_minus[b * n..(b + 1) * n]);
        let m = zm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = zm.iter().map(|v| (v - m).exp()).sum();
        // lse(zp) - lse(zm) = log1p(sum softmax(zm)_j * expm1(d_j))
        let mixed: f64 = zp
            .iter()
            .zip(zm)
            .map(|(p, q)| (q - m).exp() / z * (p - q).exp_m1())
            .sum();
        let linear: f64 = zp
            .iter()
            .zip(zm)
            .zip(l.probs())
            .map(|((p, q), w)| w * (p - q))
            .sum();
        total += mixed.ln_1p() - linear;
    }
    total / labels.len() as f64
}

fn gradient_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = DtJrdModel::<f64>::new(grad_config(), 3).map_err(|e| e.to_string())?;
    // move away from the near-degenerate initialization so every parameter
    // carries a visible gradient
    let jitter = Normal::new(0.0, 0.2).unwrap();
    for p in model.parameters_mut() {
        for v in p.tensor.data_mut() {
            *v += jitter.sample(&mut rng);
        }
    }
    let images = Tensor::from_fn(&[2, 3, 32, 32], |_| rng.random_range(-1.0..1.0));
    let labels = vec![
        gaussian_soft_labels(17, 3.0, 64).unwrap(),
        gaussian_soft_labels(40, 3.0, 64).unwrap(),
    ];

    let mut g = Graph::new();
    let bound = model.bind(&mut g).map_err(|e| e.to_string())?;
    let logits = model
        .forward_graph(&mut g, &bound, &images)
        .map_err(|e| e.to_string())?;
    let loss = soft_cross_entropy(&mut g, logits, &labels).map_err(|e| e.to_string())?;
    let grads = g.backward(loss).map_err(|e| e.to_string())?;
    model.zero_grad();
    model
        .accumulate_grads(&bound, &grads)
        .map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = model
        .parameters()
        .iter()
        .map(|p| p.tensor.grad().expect("every parameter trainable").to_vec())
        .collect();

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for pi in 0..model.parameters().len() {
        let n = model.parameters()[pi].tensor.numel();
        for k in 0..n {
            let orig = model.parameters()[pi].tensor.data()[k];
            model.parameters_mut()[pi].tensor.data_mut()[k] = orig + h;
            let up = logits_of(&model, &images);
            model.parameters_mut()[pi].tensor.data_mut()[k] = orig - h;
            let down = logits_of(&model, &images);
            model.parameters_mut()[pi].tensor.data_mut()[k] = orig;
            let numeric = loss_difference(&up, &down, &labels) / (2.0 * h);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]", model.parameters()[pi].name));
            }
            count += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "max relative error {:.2e} at {} over {count} scalars, {secs:.1} s",
        worst.0, worst.1
    );
    ensure(worst.0 < 1e-4 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// soft labels

fn gdsl_suite() -> Check {
    let mut checked = 0;
    for sigma in 2..=7 {
        let s = sigma as f64;
        for mu in 0..64usize {
            let l = gaussian_soft_labels(mu, s, 64).map_err(|e| e.to_string())?;
            let p = l.probs();
            let sum: f64 = p.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || {
                format!("mu {mu} sigma {s}: sum {sum}")
            })?;
            let argmax = (0..64).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            ensure(argmax == mu, || {
                format!("mu {mu} sigma {s}: argmax {argmax}")
            })?;
            for k in 1..64 {
                if mu + k <= 63 && mu >= k {
                    ensure(p[mu + k] == p[mu - k], || {
                        format!("mu {mu} sigma {s}: asymmetric at {k}")
                    })?;
                }
            }
            if mu + 3 <= 63 {
                let want = (-9.0 / (2.0 * s * s)).exp();
                let got = p[mu + 3] / p[mu];
                ensure((got - want).abs() <= 1e-12, || {
                    format!("mu {mu} sigma {s}: ratio {got} vs {want}")
                })?;
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} (mu, sigma) pairs: normalized, peaked, symmetric, closed-form ratio"
    ))
}

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, n) = (3usize, 64usize);
    let logits: Vec<f64> = (0..b * n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let mus = [3usize, 31, 63];

    // one-hot reduces to -log softmax[mu]
    let mut worst_reduce = 0.0f64;
    for (row, &mu) in mus.iter().enumerate() {
        let x = &logits[row * n..(row + 1) * n];
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let want = lse - x[mu];
        let mut g = Graph::new();
        let v = g.constant(&[1, n], x.to_vec()).unwrap();
        let loss = soft_cross_entropy(&mut g, v, &[one_hot(mu, n).unwrap()]).unwrap();
        worst_reduce = worst_reduce.max((g.value(loss)[0] - want).abs());
    }
    ensure(worst_reduce <= 1e-12, || {
        format!("one-hot reduction off by {worst_reduce:e}")
    })?;

    let mut g = Graph::new();
    let v = g.constant(&[1, n], vec![0.25; n]).unwrap();
    let loss = soft_cross_entropy(&mut g, v, &[one_hot(9, n).unwrap()]).unwrap();
    let uniform_err = (g.value(loss)[0] - (64f64).ln()).abs();
    ensure(uniform_err <= 1e-12, || {
        format!("uniform logits: off ln 64 by {uniform_err:e}")
    })?;

    // d loss / d logits = (softmax - L) / B
    let labels: Vec<LabelDistribution> = mus
        .iter()
        .map(|&m| gaussian_soft_labels(m, 3.0, n).unwrap())
        .collect();
    let mut g = Graph::new();
    let leaf = g
        .leaf(
            &Tensor::new(vec![b, n], logits.clone())
                .unwrap()
                .with_requires_grad(true),
        )
        .unwrap();
    let loss = soft_cross_entropy(&mut g, leaf, &labels).unwrap();
    let grads = g.backward(loss).unwrap();
    let got = grads.get(leaf).unwrap();
    let mut worst_grad = 0.0f64;
    for row in 0..b {
        let x = &logits[row * n..(row + 1) * n];
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
        for j in 0..n {
            let p = (x[j] - m).exp() / z;
            let want = (p - labels[row].probs()[j]) / b as f64;
            worst_grad = worst_grad.max((got[row * n + j] - want).abs());
        }
    }
    ensure(worst_grad <= 1e-10, || {
        format!("analytic gradient off by {worst_grad:e}")
    })?;
    Ok(format!(
        "reduction {worst_reduce:.1e}, ln 64 {uniform_err:.1e}, (p - L)/B {worst_grad:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// position table resize

/// Keys cubic convolution weight, a = -0.5.
fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Direct non-separable evaluation of one output sample.
fn bicubic_reference(
    grid: &[f64],
    side: usize,
    d: usize,
    out_side: usize,
    oy: usize,
    ox: usize,
    ch: usize,
) -> f64 {
    let scale = side as f64 / out_side as f64;
    let sy = (oy as f64 + 0.5) * scale - 0.5;
    let sx = (ox as f64 + 0.5) * scale - 0.5;
    let (fy, fx) = (sy.floor(), sx.floor());
    let mut acc = 0.0;
    for j in -1..=2 {
        for i in -1..=2 {
            let yy = (fy as i64 + j).clamp(0, side as i64 - 1) as usize;
            let xx = (fx as i64 + i).clamp(0, side as i64 - 1) as usize;
            let w = keys(sy - (fy + j as f64)) * keys(sx - (fx + i as f64));
            acc += w * grid[(yy * side + xx) * d + ch];
        }
    }
    acc
}

fn pos_embed_interpolation() -> Check {
    let d = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = Tensor::<f64>::from_fn(&[50, d], |_| rng.random_range(-1.0..1.0));

    let same = interpolate_pos_embed(&table, 7).map_err(|e| e.to_string())?;
    let id_err = same
        .data()
        .iter()
        .zip(table.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(id_err <= 1e-6, || {
        format!("identity resize error {id_err:e}")
    })?;

    let flat = Tensor::<f64>::full(&[50, d], 0.375);
    let grown = interpolate_pos_embed(&flat, 12).map_err(|e| e.to_string())?;
    let const_err = grown
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max((v - 0.375).abs()));
    ensure(const_err <= 1e-6, || {
        format!("constant resize error {const_err:e}")
    })?;

    // ramp plus noise, 7x7 -> 12x12
    let ramp = Tensor::<f64>::from_fn(&[50, d], |i| {
        let (row, ch) = (i / d, i % d);
        if row == 0 {
            -3.0
        } else {
            let (y, x) = ((row - 1) / 7, (row - 1) % 7);
            0.3 * x as f64 - 0.7 * y as f64 + ch as f64 + 0.05 * ((row * 7 + ch) % 5) as f64
        }
    });
    let out = interpolate_pos_embed(&ramp, 12).map_err(|e| e.to_string())?;
    ensure(out.shape() == [145, d], || {
        format!("shape {:?}", out.shape())
    })?;
    ensure(out.data()[..d] == ramp.data()[..d], || {
        "class row changed".into()
    })?;
    let grid = &ramp.data()[d..];
    let mut worst = 0.0f64;
    for oy in 0..12 {
        for ox in 0..12 {
            for ch in 0..d {
                let want = bicubic_reference(grid, 7, d, 12, oy, ox, ch);
                let got = out.data()[(1 + oy * 12 + ox) * d + ch];
                worst = worst.max((want - got).abs());
            }
        }
    }
    ensure(worst <= 1e-5, || {
        format!("7x7 -> 12x12 deviates from reference by {worst:e}")
    })?;
    Ok(format!(
        "identity {id_err:.1e}, constant {const_err:.1e}, 49 -> 144 vs reference {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// freeze masks

fn freeze_invariants() -> Check {
    let cfg = grad_config();
    let mut model = DtJrdModel::<f32>::new(cfg, 4).map_err(|e| e.to_string())?;
    let mask = freeze_mask(&model, Strategy::DistortionAware).map_err(|e| e.to_string())?;
    mask.apply(&mut model).map_err(|e| e.to_string())?;
    let frozen_bytes = |m: &DtJrdModel<f32>| -> Vec<u8> {
        m.parameters()
            .iter()
            .filter(|p| !p.trainable)
            .flat_map(|p| p.tensor.to_le_bytes())
            .collect()
    };
    let before = frozen_bytes(&model);
    let head_before = model.param("head.w").unwrap().tensor.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut opt = SgdMomentum::new(0.9, 5e-5).unwrap();
    for step in 0..10 {
        // nonzero gradient everywhere, including the frozen tensors' slots
        let images = Tensor::from_fn(&[2, 3, 32, 32], |_| rng.random_range(-1.0f32..1.0));
        let labels = vec![one_hot(step, 64).unwrap(), one_hot(63 - step, 64).unwrap()];
        let mut g = Graph::new();
        let bound = model.bind(&mut g).map_err(|e| e.to_string())?;
        let logits = model
            .forward_graph(&mut g, &bound, &images)
            .map_err(|e| e.to_string())?;
        let loss = soft_cross_entropy(&mut g, logits, &labels).map_err(|e| e.to_string())?;
        let grads = g.backward(loss).map_err(|e| e.to_string())?;
        model.zero_grad();
        model
            .accumulate_grads(&bound, &grads)
            .map_err(|e| e.to_string())?;
        for p in model.parameters_mut().iter_mut().filter(|p| !p.trainable) {
            let n = p.tensor.numel();
            p.tensor.accumulate_grad(&vec![1.0; n]).unwrap();
        }
        opt.step(model.parameters_mut(), 0.05)
            .map_err(|e| e.to_string())?;
    }
    ensure(frozen_bytes(&model) == before, || {
        "a frozen parameter changed".into()
    })?;
    let head_after = &model.param("head.w").unwrap().tensor;
    ensure(head_after.data() != head_before.data(), || {
        "head did not move under DAFT".into()
    })?;

    let set = |s: Strategy| -> Vec<String> {
        freeze_mask(&model, s)
            .unwrap()
            .trainable_names()
            .map(str::to_owned)
            .collect()
    };
    let (lp, daft, ff) = (
        set(Strategy::LinearProbe),
        set(Strategy::DistortionAware),
        set(Strategy::FullFineTune),
    );
    ensure(lp.iter().all(|n| daft.contains(n)), || {
        "LP not within DAFT".into()
    })?;
    ensure(daft.iter().all(|n| ff.contains(n)), || {
        "DAFT not within FF".into()
    })?;
    ensure(lp.len() < daft.len() && daft.len() < ff.len(), || {
        "nesting not strict".into()
    })?;
    Ok(format!(
        "frozen bytes unchanged after 10 steps; trainable sets {} < {} < {}",
        lp.len(),
        daft.len(),
        ff.len()
    ))
}

// ---------------------------------------------------------------------------
// metrics

/// Independent AP: enumerate every cut of the ranked list.
fn brute_force_ap(tp: &[bool], n_gt: usize) -> f64 {
    let cuts: Vec<(f64, f64)> = (1..=tp.len())
        .map(|k| {
            let hits = tp[..k].iter().filter(|&&t| t).count() as f64;
            (hits / n_gt as f64, hits / k as f64)
        })
        .collect();
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            cuts.iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn metric_oracles() -> Check {
    let one = [
        JrdSample::new("a", 32.0, 30.0),
        JrdSample::new("a", 26.0, 30.0),
    ];
    let ea1 = mae_ea(&one).unwrap();
    ensure(ea1 == 3.0, || format!("one image {{2, 4}} gave {ea1}"))?;
    let two = [
        JrdSample::new("a", 33.0, 30.0),
        JrdSample::new("b", 15.0, 10.0),
        JrdSample::new("b", 25.0, 20.0),
        JrdSample::new("b", 35.0, 40.0),
    ];
    let ea2 = mae_ea(&two).unwrap();
    ensure(ea2 == 4.0, || {
        format!("per-image means {{3, 5}} gave {ea2}")
    })?;
    let rng_case = [
        JrdSample::new("a", 28.0, 30.0),
        JrdSample::new("b", 34.0, 30.0),
    ];
    let er = mae_range(&rng_case, 27.0, 51.0).unwrap();
    ensure(er == 3.0, || format!("range MAE gave {er}"))?;

    let gt = vec![
        Detection {
            image_id: "i".into(),
            category: "car".into(),
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            score: None,
        },
        Detection {
            image_id: "i".into(),
            category: "car".into(),
            bbox: BBox::new(50.0, 50.0, 60.0, 60.0),
            score: None,
        },
    ];
    // IoU 0.9 with the first ground-truth box
    let dets = vec![
        Detection {
            image_id: "i".into(),
            category: "car".into(),
            bbox: BBox::new(0.0, 0.0, 10.0, 9.0),
            score: Some(0.9),
        },
        Detection {
            image_id: "i".into(),
            category: "car".into(),
            bbox: BBox::new(20.0, 20.0, 30.0, 30.0),
            score: Some(0.8),
        },
    ];
    let map = map_at_iou(&dets, &gt, 0.5).unwrap();
    let want = 100.0 * brute_force_ap(&[true, false], 2);
    ensure((map - want).abs() < 1e-9, || {
        format!("toy mAP {map} vs enumeration {want}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Plane::from_fn(40, 30, |_, _| rng.random_range(0.0..255.0f64).round());
    let s = ssim(&x, &x).unwrap();
    ensure((s - 1.0).abs() < 1e-12, || format!("SSIM(x, x) = {s}"))?;
    let p = psnr(&Plane::filled(32, 32, 77.0), &Plane::filled(32, 32, 78.0)).unwrap();
    let p_want = 20.0 * 255f64.log10();
    ensure((p - p_want).abs() <= 1e-9, || {
        format!("PSNR {p} vs {p_want}")
    })?;

    let anchor = RateAccuracyCurve::from_pairs(&[
        (0.05, 52.0),
        (0.09, 61.5),
        (0.16, 68.0),
        (0.3, 72.5),
        (0.55, 74.8),
    ])
    .unwrap();
    let shifted: Vec<(f64, f64)> = anchor
        .points()
        .iter()
        .map(|p| (p.rate * 1.1, p.metric))
        .collect();
    let bd = bd_rate(&anchor, &RateAccuracyCurve::from_pairs(&shifted).unwrap()).unwrap();
    ensure((bd - 10.0).abs() <= 0.1, || {
        format!("pure rate shift gave {bd}%")
    })?;
    Ok(format!(
        "E_A {ea1}/{ea2}, E_[27,51] {er}, toy mAP {map:.3} = enumeration, SSIM 1, PSNR {p:.4} dB, BD-rate {bd:.4}%"
    ))
}

// ---------------------------------------------------------------------------
// QP maps

fn qp_map_suite() -> Check {
    let two = classify_ctus(
        128,
        128,
        &[
            BBox::new(0.0, 0.0, 40.0, 40.0),
            BBox::new(10.0, 10.0, 50.0, 50.0),
        ],
    )
    .unwrap();
    let min_rule = assign_qps(&two, &[30, 36], 0, 40).unwrap().map.qp(0, 0);
    ensure(min_rule == 30, || format!("min rule gave {min_rule}"))?;
    let clamp = assign_qps(&two, &[2, 36], -4, 40).unwrap().map.qp(0, 0);
    ensure(clamp == 0, || format!("clamp gave {clamp}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for layout in 0..1000 {
        let w = rng.random_range(1..=300usize);
        let h = rng.random_range(1..=300usize);
        let k = rng.random_range(0..=6usize);
        let boxes: Vec<BBox> = (0..k)
            .map(|_| {
                let x0 = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                let x1 = rng.random_range(x0 + 1..=w);
                let y1 = rng.random_range(y0 + 1..=h);
                BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
            })
            .collect();
        let jrds: Vec<u8> = (0..k).map(|_| rng.random_range(0..=63)).collect();
        let delta = rng.random_range(-4..=0);
        let qp_b = rng.random_range(0..=63u8);
        let grid = classify_ctus(w, h, &boxes).map_err(|e| format!("layout {layout}: {e}"))?;
        let got =
            assign_qps(&grid, &jrds, delta, qp_b).map_err(|e| format!("layout {layout}: {e}"))?;
        let map = &got.map;

        // oracle: enumerate pixels of every cell
        let (rows, cols) = (h.div_ceil(64), w.div_ceil(64));
        let mut want_obj: Vec<Option<u8>> = vec![None; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut hit: Vec<usize> = Vec::new();
                for (i, b) in boxes.iter().enumerate() {
                    let touches = (r * 64..((r + 1) * 64).min(h)).any(|y| {
                        (c * 64..((c + 1) * 64).min(w)).any(|x| {
                            (x as f64) >= b.x_ul
                                && (x as f64) < b.x_lr
                                && (y as f64) >= b.y_ul
                                && (y as f64) < b.y_lr
                        })
                    });
                    if touches {
                        hit.push(i);
                    }
                }
                want_obj[r * cols + c] = hit
                    .iter()
                    .map(|&i| (jrds[i] as i32 + delta).clamp(0, 63) as u8)
                    .min();
            }
        }
        let max_obj = want_obj.iter().flatten().copied().max();
        let want_bg = max_obj.map_or(qp_b, |m| m.max(qp_b));
        ensure(map.rows == rows && map.cols == cols, || {
            format!("layout {layout}: grid size")
        })?;
        for (i, want) in want_obj.iter().enumerate() {
            let expected = want.unwrap_or(want_bg);
            ensure(map.qps[i] == expected, || {
                format!(
                    "layout {layout} cell {i}: qp {} expected {expected}",
                    map.qps[i]
                )
            })?;
        }
        map.check_invariant()
            .map_err(|e| format!("layout {layout}: {e}"))?;
    }
    Ok("min rule, clamp, and 1000 random layouts match the pixel-enumeration oracle".into())
}

// ---------------------------------------------------------------------------
// proxy codec

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Plane {
    let (ax, ay) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let base = rng.random_range(40.0..200.0);
    let amp = rng.random_range(2.0..60.0);
    let cell = [2usize, 4, 8, 16][rng.random_range(0..4)];
    let blocks: Vec<f64> = (0..w.div_ceil(cell) * h.div_ceil(cell))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let bw = w.div_ceil(cell);
    let mut p = Plane::from_fn(w, h, |x, y| {
        base + ax * x as f64 + ay * y as f64 + amp * blocks[(y / cell) * bw + x / cell]
    });
    p.quantize_u8();
    p
}

fn proxy_codec_statistics() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut mse_ok, mut bits_ok) = (0, 0);
    let trials = 200;
    for _ in 0..trials {
        let (w, h) = (rng.random_range(64..=160), rng.random_range(64..=128));
        let plane = random_plane(&mut rng, w, h);
        let mse = |qp: u8| -> f64 {
            let out = proxy_encode(&plane, &QpMap::uniform(w, h, qp).unwrap()).unwrap();
            dtjrd_core::metrics::mse(&plane, &out.recon).unwrap()
        };
        if mse(40) >= mse(20) {
            mse_ok += 1;
        }
        let qp = rng.random_range(10..=45u8);
        let bits = |q: u8| {
            proxy_encode(&plane, &QpMap::uniform(w, h, q).unwrap())
                .unwrap()
                .bits
        };
        if bits(qp + 6) <= bits(qp) {
            bits_ok += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "MSE(40) >= MSE(20) on {mse_ok}/{trials}, bits(QP+6) <= bits(QP) on {bits_ok}/{trials}, {secs:.1} s"
    );
    ensure(
        mse_ok * 100 >= 95 * trials && bits_ok * 100 >= 95 * trials && secs < 300.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// end-to-end training

fn samples(records: &[&ObjectRecord], dir: &Path, cfg: &ModelConfig) -> Vec<Sample<f32>> {
    let imgs = preprocess_all::<f32>(
        records,
        dir,
        cfg.image_size,
        &Normalization::default(),
        Parallelism::from_env(),
    )
    .unwrap();
    records
        .iter()
        .zip(imgs)
        .map(|(r, image)| Sample {
            object_id: r.object_id.clone(),
            image_id: r.source_image_id.clone(),
            image,
            jrd: r.jrd,
        })
        .collect()
}

fn end_to_end_training() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = write_synth_dataset(300, 2024, dir.path()).map_err(|e| e.to_string())?;
    let split = group_split(&data.records, [8, 1, 1], 2024).unwrap();
    let cfg = ModelConfig::toy();
    let train = samples(&split.select(&data.records, Split::Train), dir.path(), &cfg);
    let val = samples(&split.select(&data.records, Split::Val), dir.path(), &cfg);
    let run = |kind: LabelKind| {
        let tc = TrainConfig {
            strategy: Strategy::DistortionAware,
            label_kind: kind,
            epochs: 50,
            seed: 2024,
            ..TrainConfig::default()
        };
        fit(
            DtJrdModel::<f32>::new(cfg.clone(), 2024).unwrap(),
            &train,
            &val,
            &tc,
        )
        .unwrap()
    };
    let gdsl = run(LabelKind::Gdsl { sigma: 3.0 });
    let train_ea = evaluate_ea(&gdsl.model, &train, 64).unwrap();
    let decreasing = gdsl.log[..=10]
        .windows(2)
        .filter(|w| w[1].train_loss < w[0].train_loss)
        .count();
    let secs = started.elapsed().as_secs_f64();

    let onehot = run(LabelKind::OneHot);
    let onehot_val = onehot.log[onehot.best_epoch].val_ea;
    let gdsl_val = gdsl.log[gdsl.best_epoch].val_ea;
    let detail = format!(
        "{} train objects, train E_A {train_ea:.3}, loss fell on {decreasing}/10 early epochs, {secs:.0} s; \
         best val E_A gdsl {gdsl_val:.3} vs one-hot {onehot_val:.3} (reported only)",
        train.len()
    );
    ensure(train_ea <= 3.0 && decreasing >= 8 && secs < 900.0, || {
        detail.clone()
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// determinism

fn pipeline_artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let data = write_synth_dataset(60, 99, dir).unwrap();
    let split = group_split(&data.records, [8, 1, 1], 99).unwrap();
    let cfg = ModelConfig::toy();
    let train = samples(&split.select(&data.records, Split::Train), dir, &cfg);
    let val = samples(&split.select(&data.records, Split::Val), dir, &cfg);
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 99,
        ..TrainConfig::default()
    };
    let out = fit(
        DtJrdModel::<f32>::new(cfg.clone(), 99).unwrap(),
        &train,
        &val,
        &tc,
    )
    .unwrap();
    let mut artifacts = vec![
        (
            "checkpoint".to_string(),
            encode_checkpoint(&out.model).unwrap(),
        ),
        (
            "epochs.csv".to_string(),
            epoch_log_csv(&out.log).into_bytes(),
        ),
    ];
    let all: Vec<&ObjectRecord> = data.records.iter().collect();
    let every = samples(&all, dir, &cfg);
    let preds = predict_samples(&out.model, &every, 32).unwrap();
    let mut csv = String::from("object_id,source_image_id,jrd\n");
    for (r, p) in all.iter().zip(&preds) {
        csv.push_str(&format!("{},{},{p}\n", r.object_id, r.source_image_id));
    }
    artifacts.push(("predictions.csv".into(), csv.into_bytes()));
    let pred_of: std::collections::HashMap<&str, u8> = all
        .iter()
        .zip(&preds)
        .map(|(r, &p)| (r.object_id.as_str(), p as u8))
        .collect();
    let images = pipeline_images(
        &all,
        dir,
        |r| pred_of[r.object_id.as_str()],
        Parallelism::from_env(),
    )
    .unwrap();
    let settings = run_rate_accuracy(
        &images,
        &[27, 31],
        &[-2, 0],
        &ProxyCodec,
        Parallelism::from_env(),
        false,
    )
    .unwrap();
    for s in &settings {
        for im in &s.images {
            artifacts.push((
                format!("qpmap_{}_{}_{}", s.base_qp, s.delta_qp, im.source_image_id),
                im.qpmap.to_sidecar().into_bytes(),
            ));
        }
    }
    artifacts.push(("curve.csv".into(), settings_to_csv(&settings).into_bytes()));
    artifacts
}

fn determinism() -> Check {
    std::env::set_var(dtjrd_core::parallel::THREADS_ENV, "0");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_artifacts(a.path());
    let second = pipeline_artifacts(b.path());
    ensure(first.len() == second.len(), || {
        "artifact count differs".into()
    })?;
    for ((na, ba), (nb, bb)) in first.iter().zip(&second) {
        ensure(na == nb && ba == bb, || {
            format!("artifact {na} differs between runs")
        })?;
    }
    Ok(format!(
        "{} artifacts bitwise identical across two seeded runs",
        first.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("gradient oracle", gradient_oracle),
        ("soft-label suite", gdsl_suite),
        ("loss identities", loss_identities),
        ("position-table interpolation", pos_embed_interpolation),
        ("freeze invariants", freeze_invariants),
        ("metric oracles", metric_oracles),
        ("QP-map suite", qp_map_suite),
        ("proxy-codec statistics", proxy_codec_statistics),
        ("end-to-end trainability", end_to_end_training),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
