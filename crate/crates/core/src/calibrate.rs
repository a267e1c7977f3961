//! Platt scaling of classifier probabilities and reliability curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logits.
pub const PROB_EPSILON: f64 = 1e-7;

const MAX_ITERATIONS: usize = 100;
/// Bound on the norm of the per-sample mean score.
const GRADIENT_TOLERANCE: f64 = 1e-8;

pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// `ln p - ln(1 - p)` after clamping.
pub fn logit(p: f64, eps: f64) -> f64 {
    let p = clamp_prob(p, eps);
    p.ln() - (-p).ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub deviance: f64,
    pub gradient_norm: f64,
    pub n_samples: usize,
}

/// `logit(pi) = beta0 + beta1 * logit(p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub beta0: f64,
    pub beta1: f64,
    pub epsilon: f64,
    pub diagnostics: Option<FitDiagnostics>,
}

impl PlattModel {
    pub fn identity() -> Self {
        PlattModel {
            beta0: 0.0,
            beta1: 1.0,
            epsilon: PROB_EPSILON,
            diagnostics: None,
        }
    }

    /// Calibrated log-odds for an uncalibrated probability.
    pub fn calibrated_logit(&self, p: f64) -> f64 {
        self.beta0 + self.beta1 * logit(p, self.epsilon)
    }

    /// A non-positive slope reverses the ordering of probabilities, so
    /// surface maximizers are no longer preserved.
    pub fn quality_warning(&self) -> Option<String> {
        (self.beta1 <= 0.0).then(|| {
            format!(
                "calibration slope beta1 = {} is not positive; calibrated surfaces will not share the uncalibrated maximizer",
                self.beta1
            )
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let model: PlattModel = serde_json::from_slice(&bytes)
            .map_err(|e| Error::format(format!("calibration model: {e}")))?;
        if !(model.beta0.is_finite() && model.beta1.is_finite()) {
            return Err(Error::format("calibration coefficients are not finite"));
        }
        Ok(model)
    }
}

/// `sigma(beta0 + beta1 * logit(clamp(p)))`.
pub fn apply_platt(model: &PlattModel, p: f64) -> f64 {
    sigmoid(model.calibrated_logit(p))
}

fn deviance(x: &[f64], y: &[f64], b0: f64, b1: f64) -> f64 {
    // -2 log-likelihood, using log(1 + e^eta) in a stable form
    let mut d = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let eta = b0 + b1 * xi;
        let softplus = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        d += softplus - yi * eta;
    }
    2.0 * d
}

/// Logistic regression of the class-one indicator on `logit(p)` by
/// iteratively reweighted least squares with step halving.
pub fn fit_platt(probs: &[f64], labels: &[bool]) -> Result<PlattModel> {
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let ones = labels.iter().filter(|&&l| l).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::invalid("calibration data must contain both classes"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let eps = PROB_EPSILON;
    let x: Vec<f64> = probs.iter().map(|&p| logit(p, eps)).collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let (mut b0, mut b1) = (0.0, 1.0);
    let mut dev = deviance(&x, &y, b0, b1);
    let mut iterations = 0;
    let mut gnorm = f64::INFINITY;
    while iterations < MAX_ITERATIONS {
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(&y) {
            let mu = sigmoid(b0 + b1 * xi);
            let r = yi - mu;
            let w = mu * (1.0 - mu);
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        gnorm = g0.hypot(g1) / x.len() as f64;
        if gnorm < GRADIENT_TOLERANCE {
            break;
        }
        iterations += 1;
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::Numeric(format!(
                "calibration information matrix is singular at iteration {iterations}"
            )));
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        loop {
            let (n0, n1) = (b0 + step * d0, b1 + step * d1);
            let nd = deviance(&x, &y, n0, n1);
            if nd <= dev || step < 1e-10 {
                b0 = n0;
                b1 = n1;
                dev = nd;
                break;
            }
            step *= 0.5;
        }
        if !(b0.is_finite() && b1.is_finite() && dev.is_finite()) {
            return Err(Error::Numeric("calibration fit diverged".into()));
        }
    }
    Ok(PlattModel {
        beta0: b0,
        beta1: b1,
        epsilon: eps,
        diagnostics: Some(FitDiagnostics {
            iterations,
            deviance: dev,
            gradient_norm: gnorm,
            n_samples: probs.len(),
        }),
    })
}

/// Mean binary cross-entropy of probabilities against labels, clamped.
pub fn log_loss(probs: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            let p = clamp_prob(p, PROB_EPSILON);
            if l {
                -p.ln()
            } else {
                -(-p).ln_1p()
            }
        })
        .sum();
    total / probs.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// `None` for empty bins.
    pub mean_predicted: Option<f64>,
    pub empirical_frequency: Option<f64>,
    pub count: usize,
}

/// Equal-width bins over `[0, 1]`; `p = 1` falls in the last bin.
pub fn reliability_curve(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if n_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if probs.len() != labels.len() {
        return Err(Error::invalid("probabilities and labels differ in length"));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &l) in probs.iter().zip(labels) {
        let b = ((p.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[b] += p;
        sum_y[b] += if l { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    Ok((0..n_bins)
        .map(|b| {
            let c = count[b];
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                mean_predicted: (c > 0).then(|| sum_p[b] / c as f64),
                empirical_frequency: (c > 0).then(|| sum_y[b] / c as f64),
                count: c,
            }
        })
        .collect())
}
