//! Target distributions over QP classes and the soft-target cross-entropy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};

/// Default Gaussian width for soft labels.
pub const DEFAULT_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKind {
    OneHot,
    /// `eps` on the true class, the remainder spread evenly.
    Smooth {
        eps: f64,
    },
    /// Discretized Gaussian centred on the true class.
    Gdsl {
        sigma: f64,
    },
}

impl Default for LabelKind {
    fn default() -> Self {
        LabelKind::Gdsl {
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelKind::OneHot => write!(f, "one_hot"),
            LabelKind::Smooth { eps } => write!(f, "smooth({eps})"),
            LabelKind::Gdsl { sigma } => write!(f, "gdsl({sigma})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
    kind: LabelKind,
    mu: usize,
}

fn check_mu(mu: usize, n: usize) -> Result<()> {
    if n == 0 || mu >= n {
        return Err(Error::contract(format!("label {mu} outside [0, {n})")));
    }
    Ok(())
}

impl LabelDistribution {
    pub fn build(kind: LabelKind, mu: usize, n: usize) -> Result<Self> {
        match kind {
            LabelKind::OneHot => one_hot(mu, n),
            LabelKind::Smooth { eps } => smooth_labels(mu, n, eps),
            LabelKind::Gdsl { sigma } => gaussian_soft_labels(mu, sigma, n),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats; the minimum of the cross-entropy over all
    /// predicted distributions.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

pub fn one_hot(mu: usize, n: usize) -> Result<LabelDistribution> {
    check_mu(mu, n)?;
    let mut probs = vec![0.0; n];
    probs[mu] = 1.0;
    Ok(LabelDistribution {
        probs,
        kind: LabelKind::OneHot,
        mu,
    })
}

pub fn smooth_labels(mu: usize, n: usize, eps: f64) -> Result<LabelDistribution> {
    check_mu(mu, n)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::contract(format!(
            "smoothing eps {eps} outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::contract("smooth labels need at least two classes"));
    }
    let rest = (1.0 - eps) / (n - 1) as f64;
    let mut probs = vec![rest; n];
    probs[mu] = eps;
    Ok(LabelDistribution {
        probs,
        kind: LabelKind::Smooth { eps },
        mu,
    })
}

/// `probs[x] ∝ exp(-(x - mu)^2 / (2 sigma^2))`, normalized over the `n`
/// classes. The Gaussian's `1 / (sqrt(2 pi) sigma)` factor cancels.
pub fn gaussian_soft_labels(mu: usize, sigma: f64, n: usize) -> Result<LabelDistribution> {
    check_mu(mu, n)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::contract(format!("sigma {sigma} must be positive")));
    }
    let two_var = 2.0 * sigma * sigma;
    let weights: Vec<f64> = (0..n)
        .map(|x| {
            let d = x as f64 - mu as f64;
            (-(d * d) / two_var).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(LabelDistribution {
        probs: weights.iter().map(|w| w / z).collect(),
        kind: LabelKind::Gdsl { sigma },
        mu,
    })
}

/// Mean over the batch of `-Σ_x L(x) log softmax(logits)(x)`.
///
/// `logits` is `[B, N]`; one label distribution per row. The log-softmax is
/// evaluated in shifted form so distant classes never underflow to `log 0`.
pub fn soft_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[LabelDistribution],
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let (b, n) = match shape.as_slice() {
        [b, n] => (*b, *n),
        other => {
            return Err(Error::contract(format!(
                "expected logits [B, N], got {other:?}"
            )))
        }
    };
    if labels.len() != b {
        return Err(Error::contract(format!(
            "{} label rows for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| l.len() != n) {
        return Err(Error::contract(format!(
            "label length {} does not match {n} logits",
            l.len()
        )));
    }
    let targets: Vec<T> = labels
        .iter()
        .flat_map(|l| l.probs.iter().map(|&p| T::from_f64(p)))
        .collect();
    let targets = g.constant(&[b, n], targets)?;
    let log_p = g.log_softmax(logits)?;
    let weighted = g.mul(log_p, targets)?;
    let total = g.sum(weighted)?;
    g.scale(total, T::from_f64(-1.0 / b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn one_hot_and_smooth_values() {
        let o = one_hot(5, 64).unwrap();
        assert_eq!(o.probs()[5], 1.0);
        assert_eq!(o.probs().iter().sum::<f64>(), 1.0);
        let s = smooth_labels(5, 64, 0.9).unwrap();
        assert_eq!(s.probs()[5], 0.9);
        assert!((s.probs()[0] - 0.1 / 63.0).abs() < 1e-15);
        assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_approaches_one_hot() {
        let o = one_hot(7, 64).unwrap();
        let s = smooth_labels(7, 64, 1.0 - 1e-12).unwrap();
        let gap = o
            .probs()
            .iter()
            .zip(s.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-11);
    }

    #[test]
    fn invalid_inputs_are_contract_errors() {
        assert!(gaussian_soft_labels(64, 3.0, 64).is_err());
        assert!(gaussian_soft_labels(3, 0.0, 64).is_err());
        assert!(gaussian_soft_labels(3, -1.0, 64).is_err());
        assert!(smooth_labels(3, 64, 1.0).is_err());
        assert!(smooth_labels(3, 64, 0.0).is_err());
        assert!(one_hot(70, 64).is_err());
    }

    #[test]
    fn gaussian_neighbour_ratio() {
        let l = gaussian_soft_labels(30, 3.0, 64).unwrap();
        let r = l.probs()[33] / l.probs()[30];
        assert!((r - (-0.5f64).exp()).abs() < 1e-12);
        assert!((r - 0.60653).abs() < 1e-5);
        for k in 0..=30 {
            if 30 + k <= 63 {
                assert_eq!(l.probs()[30 + k], l.probs()[30 - k]);
            }
        }
    }

    #[test]
    fn uniform_logits_one_hot_loss_is_ln_n() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(&Tensor::zeros(&[1, 64])).unwrap();
        let loss = soft_cross_entropy(&mut g, logits, &[one_hot(12, 64).unwrap()]).unwrap();
        assert!((g.value(loss)[0] - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(&Tensor::zeros(&[1, 10])).unwrap();
        let r = soft_cross_entropy(&mut g, logits, &[one_hot(1, 64).unwrap()]);
        assert!(matches!(r, Err(Error::Contract(_))));
        let r = soft_cross_entropy(&mut g, logits, &[]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
