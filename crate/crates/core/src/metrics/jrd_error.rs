use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One object's predicted and ground-truth JRD, tagged with its source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JrdSample {
    pub image_id: String,
    pub pred: f64,
    pub gt: f64,
}

impl JrdSample {
    pub fn new(image_id: impl Into<String>, pred: f64, gt: f64) -> Self {
        Self {
            image_id: image_id.into(),
            pred,
            gt,
        }
    }

    fn abs_err(&self) -> f64 {
        (self.pred - self.gt).abs()
    }
}

/// Mean over images of the per-image mean absolute error. Images weigh
/// equally regardless of how many objects they hold.
pub fn mae_ea(samples: &[JrdSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("E_A of an empty prediction set"));
    }
    // (sum, count) per image, kept in first-seen order so the reduction
    // order is fixed
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut acc: Vec<(f64, usize)> = Vec::new();
    for s in samples {
        let i = *slot.entry(&s.image_id).or_insert_with(|| {
            acc.push((0.0, 0));
            acc.len() - 1
        });
        acc[i].0 += s.abs_err();
        acc[i].1 += 1;
    }
    let per_image: f64 = acc.iter().map(|&(sum, n)| sum / n as f64).sum();
    Ok(per_image / acc.len() as f64)
}

/// Object-weighted MAE over objects whose ground truth lies in `[lo, hi]`.
pub fn mae_range(samples: &[JrdSample], lo: f64, hi: f64) -> Result<f64> {
    let (sum, n) = samples
        .iter()
        .filter(|s| s.gt >= lo && s.gt <= hi)
        .fold((0.0, 0usize), |(sum, n), s| (sum + s.abs_err(), n + 1));
    if n == 0 {
        return Err(Error::contract(format!(
            "no objects with ground truth in [{lo}, {hi}]"
        )));
    }
    Ok(sum / n as f64)
}

pub const RANGE_LO: f64 = 27.0;
pub const RANGE_HI: f64 = 51.0;
