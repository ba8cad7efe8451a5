use dtjrd_core::autodiff::Tensor;
use dtjrd_core::labels::LabelKind;
use dtjrd_core::model::{
    load_checkpoint, load_checkpoint_with_config, save_checkpoint, DtJrdModel, ModelConfig,
};
use dtjrd_core::trainer::{fit, freeze_mask, Sample, Strategy, TrainConfig};
use dtjrd_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(image_size: usize) -> ModelConfig {
    ModelConfig {
        image_size,
        patch_size: 16,
        dim: 16,
        depth: 2,
        heads: 2,
        mlp_dim: 32,
        num_classes: 64,
    }
}

fn random_images(seed: u64, b: usize, s: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[b, 3, s, s], |_| rng.random_range(-1.0..1.0))
}

fn toy_samples(n: usize, s: usize) -> Vec<Sample<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    (0..n)
        .map(|i| {
            let jrd = rng.random_range(20..50u8);
            // brightness encodes the label, so the task is learnable
            let level = (jrd as f32 - 35.0) / 15.0;
            Sample {
                object_id: format!("o{i}"),
                image_id: format!("img{}", i / 2),
                image: Tensor::from_fn(&[3, s, s], |_| level + rng.random_range(-0.05..0.05)),
                jrd,
            }
        })
        .collect()
}

#[test]
fn checkpoint_file_roundtrip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let model = DtJrdModel::<f32>::new(small(32), 1).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let back: DtJrdModel<f32> = load_checkpoint(&path).unwrap();
    let x = random_images(2, 3, 32);
    assert_eq!(model.forward(&x).unwrap(), back.forward(&x).unwrap());
}

#[test]
fn low_resolution_checkpoint_runs_at_higher_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_checkpoint(&DtJrdModel::<f32>::new(small(32), 1).unwrap(), &path).unwrap();
    let big: DtJrdModel<f32> = load_checkpoint_with_config(&path, &small(64)).unwrap();
    assert_eq!(big.param("pos_embed").unwrap().tensor.shape(), &[17, 16]);
    let logits = big.forward(&random_images(3, 2, 64)).unwrap();
    assert_eq!(logits.shape(), &[2, 64]);
    assert!(logits.is_finite());
}

#[test]
fn single_and_double_precision_agree() {
    let m32 = DtJrdModel::<f32>::new(small(32), 4).unwrap();
    let m64: DtJrdModel<f64> = m32.cast();
    let x = random_images(5, 2, 32);
    let a = m32.forward(&x).unwrap();
    let b = m64.forward(&x.cast()).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((*p as f64 - q).abs() < 1e-4, "{p} vs {q}");
    }
}

#[test]
fn batch_rows_are_independent() {
    let m = DtJrdModel::<f64>::new(small(32), 6).unwrap();
    let x = random_images(7, 3, 32).cast::<f64>();
    let all = m.forward(&x).unwrap();
    let per = 3 * 32 * 32;
    for b in 0..3 {
        let one = Tensor::new(
            vec![1, 3, 32, 32],
            x.data()[b * per..(b + 1) * per].to_vec(),
        )
        .unwrap();
        let row = m.forward(&one).unwrap();
        for (p, q) in row.data().iter().zip(&all.data()[b * 64..(b + 1) * 64]) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_probe_moves_only_the_head() {
    let model = DtJrdModel::<f32>::new(small(32), 8).unwrap();
    let before = model.clone();
    let data = toy_samples(24, 32);
    let cfg = TrainConfig {
        strategy: Strategy::LinearProbe,
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = fit(model, &data, &data[..6], &cfg).unwrap();
    let mask = freeze_mask(&out.model, Strategy::LinearProbe).unwrap();
    for (p, q) in out.model.parameters().iter().zip(before.parameters()) {
        if mask.trainable(&p.name) == Some(true) {
            assert_ne!(p.tensor.data(), q.tensor.data(), "{} should move", p.name);
        } else {
            assert_eq!(p.tensor.data(), q.tensor.data(), "{} should stay", p.name);
        }
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let model = DtJrdModel::<f32>::new(small(32), 8).unwrap();
    let data = toy_samples(8, 32);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = fit(model.clone(), &data, &[], &cfg).unwrap();
    assert_eq!(out.log.len(), 1);
    for (p, q) in out.model.parameters().iter().zip(model.parameters()) {
        assert_eq!(p.tensor.data(), q.tensor.data());
    }
}

#[test]
fn training_is_seeded() {
    let data = toy_samples(20, 32);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 6,
        seed: 3,
        label_kind: LabelKind::OneHot,
        ..TrainConfig::default()
    };
    let a = fit(
        DtJrdModel::<f32>::new(small(32), 1).unwrap(),
        &data,
        &data[..4],
        &cfg,
    )
    .unwrap();
    let b = fit(
        DtJrdModel::<f32>::new(small(32), 1).unwrap(),
        &data,
        &data[..4],
        &cfg,
    )
    .unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(
        a.log
            .iter()
            .map(|e| e.train_loss.to_bits())
            .collect::<Vec<_>>(),
        b.log
            .iter()
            .map(|e| e.train_loss.to_bits())
            .collect::<Vec<_>>()
    );
}

#[test]
fn absurd_learning_rate_reports_divergence() {
    let data = toy_samples(16, 32);
    let cfg = TrainConfig {
        strategy: Strategy::FullFineTune,
        lr0: 1e30,
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    match fit(
        DtJrdModel::<f32>::new(small(32), 1).unwrap(),
        &data,
        &[],
        &cfg,
    ) {
        Err(Error::Diverged { batch_ids, .. }) => assert!(!batch_ids.is_empty()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn bad_configuration_is_rejected_up_front() {
    let data = toy_samples(4, 32);
    let m = DtJrdModel::<f32>::new(small(32), 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        fit(m.clone(), &data, &[], &cfg),
        Err(Error::Config(_))
    ));
    assert!(fit(m, &[], &[], &TrainConfig::default()).is_err());
}
