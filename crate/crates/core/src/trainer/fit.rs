use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::freeze::{freeze_mask, Strategy};
use super::optim::{cosine_lr, SgdMomentum};
use crate::autodiff::{Graph, Scalar, Tensor};
use crate::dataset::hflip;
use crate::error::{Error, Result};
use crate::labels::{soft_cross_entropy, LabelDistribution, LabelKind};
use crate::metrics::{mae_ea, JrdSample};
use crate::model::{predict_batch, DtJrdModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub label_kind: LabelKind,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub flip_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::DistortionAware,
            label_kind: LabelKind::default(),
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-5,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            flip_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "initial learning rate {} must be positive",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay {} is negative",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// One preprocessed object crop with its ground truth.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub object_id: String,
    pub image_id: String,
    /// `[3, S, S]`, already normalized.
    pub image: Tensor<T>,
    pub jrd: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no validation set.
    pub val_ea: f64,
    /// Rate used by the epoch's last step.
    pub lr: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_EA,lr";

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        s.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_ea, e.lr
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    /// Model from the epoch with the lowest validation E_A (the last one
    /// when there is no validation set).
    pub model: DtJrdModel<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

fn stack<T: Scalar>(images: impl Iterator<Item = Tensor<T>>, size: usize) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut b = 0;
    for t in images {
        data.extend_from_slice(t.data());
        b += 1;
    }
    Tensor::new(vec![b, 3, size, size], data)
}

/// Argmax predictions, in sample order.
pub fn predict_samples<T: Scalar>(
    model: &DtJrdModel<T>,
    samples: &[Sample<T>],
    batch: usize,
) -> Result<Vec<usize>> {
    let size = model.config().image_size;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let images = stack(chunk.iter().map(|s| s.image.clone()), size)?;
        out.extend(predict_batch(&model.forward(&images)?)?);
    }
    Ok(out)
}

pub fn evaluate_ea<T: Scalar>(
    model: &DtJrdModel<T>,
    samples: &[Sample<T>],
    batch: usize,
) -> Result<f64> {
    let preds = predict_samples(model, samples, batch)?;
    let pairs: Vec<JrdSample> = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| JrdSample::new(&s.image_id, p as f64, s.jrd as f64))
        .collect();
    mae_ea(&pairs)
}

/// Mean loss over `samples` without augmentation.
pub fn evaluate_loss<T: Scalar>(
    model: &DtJrdModel<T>,
    samples: &[Sample<T>],
    labels: &[LabelDistribution],
    batch: usize,
) -> Result<f64> {
    let size = model.config().image_size;
    let mut total = 0.0;
    for (chunk, lab) in samples
        .chunks(batch.max(1))
        .zip(labels.chunks(batch.max(1)))
    {
        let images = stack(chunk.iter().map(|s| s.image.clone()), size)?;
        let logits = model.forward(&images)?;
        let mut g = Graph::new();
        let l = g.leaf(&logits)?;
        let loss = soft_cross_entropy(&mut g, l, lab)?;
        total += g.value(loss)[0].as_f64() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn diverged(step: usize, lr: f64, batch: &[&Sample<impl Scalar>], reason: String) -> Error {
    Error::Diverged {
        step,
        lr,
        batch_ids: batch.iter().map(|s| s.object_id.clone()).collect(),
        reason,
    }
}

/// Trains `model` in place under `config` and returns the best snapshot.
///
/// Batches are drawn from a seeded shuffle each epoch; each image is mirrored
/// with probability `flip_prob` (labels unchanged). The learning rate follows
/// a per-step cosine decay over the whole run.
pub fn fit<T: Scalar>(
    mut model: DtJrdModel<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    config: &TrainConfig,
) -> Result<FitOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let n_classes = model.config().num_classes;
    let label_of =
        |s: &Sample<T>| LabelDistribution::build(config.label_kind, s.jrd as usize, n_classes);
    let train_labels = train.iter().map(label_of).collect::<Result<Vec<_>>>()?;
    for s in val {
        label_of(s)?;
    }

    freeze_mask(&model, config.strategy)?.apply(&mut model)?;
    let eval_batch = config.batch_size.max(32);
    let val_ea = |m: &DtJrdModel<T>| {
        if val.is_empty() {
            Ok(f64::NAN)
        } else {
            evaluate_ea(m, val, eval_batch)
        }
    };

    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: evaluate_loss(&model, train, &train_labels, eval_batch)?,
        val_ea: val_ea(&model)?,
        lr: config.lr0,
    }];
    let mut best = (model.clone(), 0usize, log[0].val_ea);
    if config.epochs == 0 {
        return Ok(FitOutcome {
            model,
            best_epoch: 0,
            log,
        });
    }

    let size = model.config().image_size;
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut opt = SgdMomentum::new(config.momentum, config.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut lr = config.lr0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample<T>> = idx.iter().map(|&i| &train[i]).collect();
            lr = cosine_lr(step, total_steps, config.lr0)?;
            let flips: Vec<bool> = batch
                .iter()
                .map(|_| rng.random_bool(config.flip_prob))
                .collect();
            let images = stack(
                batch
                    .iter()
                    .zip(&flips)
                    .map(|(s, &f)| if f { hflip(&s.image) } else { s.image.clone() }),
                size,
            )?;
            let labels: Vec<LabelDistribution> =
                idx.iter().map(|&i| train_labels[i].clone()).collect();

            let wrap = |e: Error| match e {
                Error::Numeric { op } => {
                    diverged(step, lr, &batch, format!("non-finite value in {op}"))
                }
                other => other,
            };
            let mut g = Graph::new();
            let bound = model.bind(&mut g).map_err(wrap)?;
            let logits = model.forward_graph(&mut g, &bound, &images).map_err(wrap)?;
            let loss = soft_cross_entropy(&mut g, logits, &labels).map_err(wrap)?;
            let loss_value = g.value(loss)[0].as_f64();
            if !loss_value.is_finite() {
                return Err(diverged(step, lr, &batch, format!("loss is {loss_value}")));
            }
            let grads = g.backward(loss).map_err(wrap)?;
            model.zero_grad();
            model.accumulate_grads(&bound, &grads)?;
            opt.step(model.parameters_mut(), lr)?;
            if model.parameters().iter().any(|p| !p.tensor.is_finite()) {
                return Err(diverged(
                    step,
                    lr,
                    &batch,
                    "parameters became non-finite".into(),
                ));
            }
            loss_sum += loss_value * batch.len() as f64;
            step += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_ea: val_ea(&model)?,
            lr,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, val E_A {:.3}, lr {:.2e}",
            entry.train_loss,
            entry.val_ea,
            entry.lr
        );
        log.push(entry);
        if val.is_empty() || entry.val_ea < best.2 {
            best = (model.clone(), epoch, entry.val_ea);
        }
    }
    model.zero_grad();
    let (mut best_model, best_epoch, _) = best;
    best_model.zero_grad();
    Ok(FitOutcome {
        model: best_model,
        best_epoch,
        log,
    })
}
