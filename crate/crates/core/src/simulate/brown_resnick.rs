use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::br_pairwise::{check_br_theta, semivariogram_unchecked};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, SpatialField};
use crate::linalg::{cholesky, Matrix};
use crate::rng::SimRng;
use crate::scalar::Scalar;

pub const DEFAULT_SPECTRAL_TERMS: usize = 500;

/// Truncated spectral sampler for the Brown-Resnick process.
///
/// A field is `max_{k <= K} eta_k * exp(eps_k(s) - gamma(s - s0))`, where
/// `eta_k = 1 / (E_1 + .. + E_k)` are the largest points of a Poisson
/// process with intensity `eta^-2 d eta` and `eps_k` are independent
/// Gaussian fields with `eps(s0) = 0` and covariance
/// `gamma(s - s0) + gamma(t - s0) - gamma(s - t)`. The anchor `s0` is
/// location 0. Truncating at `K` terms under-represents the upper tail at
/// sites far from the anchor.
#[derive(Debug, Clone)]
pub struct BrSimulator {
    grid: GridSpec,
    n_spectral: usize,
    /// Factor of the covariance of `eps` on locations `1..s`.
    chol: Matrix<f64>,
    /// `gamma(s - s0)` for every location.
    drift: Vec<f64>,
    /// Diagonal jitter that was needed to factor the covariance.
    pub jitter: f64,
}

impl BrSimulator {
    pub fn new(theta: &Parameter, grid: &GridSpec, n_spectral: usize) -> Result<Self> {
        let (lambda, nu) = theta.pair()?;
        check_br_theta(lambda, nu)?;
        if n_spectral == 0 {
            return Err(Error::invalid("need at least one spectral term"));
        }
        let locs = grid.locations();
        let s0 = locs[0];
        let gamma = |a: [f64; 2], b: [f64; 2]| {
            semivariogram_unchecked((a[0] - b[0]).hypot(a[1] - b[1]), lambda, nu)
        };
        let drift: Vec<f64> = locs.iter().map(|&p| gamma(p, s0)).collect();
        let p = locs.len() - 1;
        let cov = Matrix::from_fn(p, p, |a, b| {
            drift[a + 1] + drift[b + 1] - gamma(locs[a + 1], locs[b + 1])
        });
        let (chol, jitter) = if p == 0 {
            (Matrix::zeros(0, 0), 0.0)
        } else {
            factor_with_jitter(cov)?
        };
        Ok(BrSimulator {
            grid: *grid,
            n_spectral,
            chol,
            drift,
            jitter,
        })
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        let s = self.grid.len();
        let p = s - 1;
        let k = self.n_spectral;
        let mut eta = Vec::with_capacity(k);
        let mut arrival = 0.0;
        for _ in 0..k {
            let e: f64 = rng.sample(Exp1);
            arrival += e;
            eta.push(1.0 / arrival);
        }
        let mut out = vec![0.0f64; s];
        // anchor: eps(s0) = 0 and gamma(0) = 0, so the max is eta_1
        out[0] = eta[0];
        if p == 0 {
            return out;
        }
        let g: Vec<f64> = (0..k * p).map(|_| rng.sample(StandardNormal)).collect();
        // E (k x p) = G (k x p) * L^T
        let mut eps = vec![0.0; k * p];
        f64::gemm(k, p, p, 1.0, &g, false, self.chol.as_slice(), true, 0.0, &mut eps);
        for (t, row) in eps.chunks(p).enumerate() {
            let log_eta = eta[t].ln();
            for (loc, &e) in row.iter().enumerate() {
                let v = (log_eta + e - self.drift[loc + 1]).exp();
                if v > out[loc + 1] {
                    out[loc + 1] = v;
                }
            }
        }
        out
    }
}

fn factor_with_jitter(mut cov: Matrix<f64>) -> Result<(Matrix<f64>, f64)> {
    if let Ok(l) = cholesky(&cov) {
        return Ok((l, 0.0));
    }
    let n = cov.rows();
    let scale = (0..n).map(|i| cov[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut added = 0.0;
    for exp in [-12, -10, -8, -6] {
        let target = scale * 10f64.powi(exp);
        for i in 0..n {
            cov[(i, i)] += target - added;
        }
        added = target;
        if let Ok(l) = cholesky(&cov) {
            return Ok((l, added));
        }
    }
    Err(Error::Numeric(
        "increment covariance is not positive definite even with jitter".into(),
    ))
}

/// Draw one field with unit Frechet margins.
pub fn simulate_brown_resnick(
    theta: &Parameter,
    grid: &GridSpec,
    seed: u64,
    n_spectral: usize,
) -> Result<SpatialField> {
    let sim = BrSimulator::new(theta, grid, n_spectral)?;
    let mut rng = crate::rng::stream(seed, &[]);
    SpatialField::new(*grid, sim.sample(&mut rng))
}
