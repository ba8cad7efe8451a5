//! Bjontegaard deltas between rate/accuracy curves, classic cubic fit.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "rate_bpp,metric";
const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub metric: f64,
}

/// At least four points with positive, strictly increasing rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAccuracyCurve {
    points: Vec<CurvePoint>,
}

impl RateAccuracyCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::contract(format!(
                "a rate/accuracy curve needs at least {MIN_POINTS} points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.rate > 0.0 && p.rate.is_finite()) || !p.metric.is_finite() {
                return Err(Error::contract(format!(
                    "curve point {i} is invalid: {p:?}"
                )));
            }
            if i > 0 && p.rate <= points[i - 1].rate {
                return Err(Error::contract(format!(
                    "curve rates not strictly increasing at point {i}"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(rate, metric)| CurvePoint { rate, metric })
                .collect(),
        )
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate.log10()).collect()
    }

    fn metrics(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.metric).collect()
    }

    fn metric_is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].metric > w[0].metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CURVE_HEADER}\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.rate, p.metric));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CURVE_HEADER => {}
            _ => {
                return Err(Error::validation(
                    Some(1),
                    format!("expected header `{CURVE_HEADER}`"),
                ))
            }
        }
        let mut pts = Vec::new();
        for (i, line) in lines {
            let mut parts = line.split(',').map(str::trim);
            let parse = |v: Option<&str>| -> Result<f64> {
                v.and_then(|s| s.parse().ok()).ok_or_else(|| {
                    Error::validation(Some(i + 1), format!("malformed curve row `{line}`"))
                })
            };
            let rate = parse(parts.next())?;
            let metric = parse(parts.next())?;
            pts.push(CurvePoint { rate, metric });
        }
        Self::new(pts)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

/// Least-squares cubic in a centred and scaled variable, kept in that form
/// so the Vandermonde system stays well conditioned.
struct Cubic {
    coef: [f64; 4],
    centre: f64,
    scale: f64,
}

impl Cubic {
    fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        let centre = x.iter().sum::<f64>() / n as f64;
        let spread = x.iter().fold(0.0f64, |m, v| m.max((v - centre).abs()));
        let scale = if spread > 0.0 { spread } else { 1.0 };
        let a = DMatrix::from_fn(n, 4, |r, c| ((x[r] - centre) / scale).powi(c as i32));
        let b = DVector::from_column_slice(y);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|_| Error::Numeric { op: "cubic fit" })?;
        Ok(Self {
            coef: [sol[0], sol[1], sol[2], sol[3]],
            centre,
            scale,
        })
    }

    /// Antiderivative in the original variable.
    fn primitive(&self, x: f64) -> f64 {
        let u = (x - self.centre) / self.scale;
        let c = &self.coef;
        self.scale
            * (c[0] * u + c[1] * u * u / 2.0 + c[2] * u.powi(3) / 3.0 + c[3] * u.powi(4) / 4.0)
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.primitive(hi) - self.primitive(lo)
    }
}

fn overlap(a: &[f64], b: &[f64], what: &str) -> Result<(f64, f64)> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if hi <= lo {
        return Err(Error::contract(format!("curves do not overlap in {what}")));
    }
    Ok((lo, hi))
}

fn warn_non_monotone(anchor: &RateAccuracyCurve, test: &RateAccuracyCurve) {
    for (name, c) in [("anchor", anchor), ("test", test)] {
        if !c.metric_is_monotone() {
            log::warn!("{name} curve metric is not monotone in rate; fitting anyway");
        }
    }
}

/// Average rate difference of `test` against `anchor` at equal metric, in
/// percent. Negative means `test` needs fewer bits.
pub fn bd_rate(anchor: &RateAccuracyCurve, test: &RateAccuracyCurve) -> Result<f64> {
    warn_non_monotone(anchor, test);
    let (ma, mt) = (anchor.metrics(), test.metrics());
    let (lo, hi) = overlap(&ma, &mt, "metric")?;
    let fa = Cubic::fit(&ma, &anchor.log_rates())?;
    let ft = Cubic::fit(&mt, &test.log_rates())?;
    let avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

/// Average metric difference of `test` against `anchor` at equal rate.
pub fn bd_metric(anchor: &RateAccuracyCurve, test: &RateAccuracyCurve) -> Result<f64> {
    warn_non_monotone(anchor, test);
    let (ra, rt) = (anchor.log_rates(), test.log_rates());
    let (lo, hi) = overlap(&ra, &rt, "rate")?;
    let fa = Cubic::fit(&ra, &anchor.metrics())?;
    let ft = Cubic::fit(&rt, &test.metrics())?;
    Ok((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdReport {
    pub bd_rate_percent: f64,
    pub bd_metric: f64,
    pub method: &'static str,
}

pub const BD_METHOD: &str = "cubic polynomial fit, log10 rate";

pub fn bd_report(anchor: &RateAccuracyCurve, test: &RateAccuracyCurve) -> Result<BdReport> {
    Ok(BdReport {
        bd_rate_percent: bd_rate(anchor, test)?,
        bd_metric: bd_metric(anchor, test)?,
        method: BD_METHOD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor() -> RateAccuracyCurve {
        RateAccuracyCurve::from_pairs(&[
            (0.1, 30.0),
            (0.2, 33.5),
            (0.4, 36.0),
            (0.8, 38.0),
            (1.6, 39.2),
        ])
        .unwrap()
    }

    #[test]
    fn identical_curves() {
        let a = anchor();
        assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
        assert!(bd_metric(&a, &a).unwrap().abs() < 1e-9);
    }

    #[test]
    fn rate_scale_and_metric_shift() {
        let a = anchor();
        let scaled: Vec<_> = a
            .points()
            .iter()
            .map(|p| (p.rate * 1.1, p.metric))
            .collect();
        let t = RateAccuracyCurve::from_pairs(&scaled).unwrap();
        assert!((bd_rate(&a, &t).unwrap() - 10.0).abs() < 1e-6);
        let lifted: Vec<_> = a
            .points()
            .iter()
            .map(|p| (p.rate, p.metric + 2.0))
            .collect();
        let t = RateAccuracyCurve::from_pairs(&lifted).unwrap();
        assert!((bd_metric(&a, &t).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_curves_rejected() {
        let a = anchor();
        let far: Vec<_> = a
            .points()
            .iter()
            .map(|p| (p.rate, p.metric + 100.0))
            .collect();
        assert!(bd_rate(&a, &RateAccuracyCurve::from_pairs(&far).unwrap()).is_err());
    }

    #[test]
    fn curve_validation_and_csv() {
        assert!(RateAccuracyCurve::from_pairs(&[(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)]).is_err());
        assert!(
            RateAccuracyCurve::from_pairs(&[(0.1, 1.0), (0.1, 2.0), (0.3, 3.0), (0.4, 4.0)])
                .is_err()
        );
        let a = anchor();
        assert_eq!(RateAccuracyCurve::parse_csv(&a.to_csv()).unwrap(), a);
        assert!(RateAccuracyCurve::parse_csv("bpp,m\n").is_err());
    }
}
