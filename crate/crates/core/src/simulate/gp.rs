use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, SpatialField};
use crate::linalg::{cholesky, Matrix};
use crate::rng::SimRng;
use crate::scalar::{cast, Scalar};

pub(crate) fn check_gp_theta(nu: f64, ell: f64) -> Result<()> {
    if !(nu > 0.0 && ell > 0.0 && nu.is_finite() && ell.is_finite()) {
        return Err(Error::invalid(format!(
            "Gaussian process needs nu > 0 and ell > 0, got ({nu}, {ell})"
        )));
    }
    Ok(())
}

/// Exponential covariance `nu * exp(-|x_i - x_j| / ell)` over all grid
/// locations.
pub fn exp_covariance<T: Scalar>(theta: &Parameter, grid: &GridSpec) -> Result<Matrix<T>> {
    let (nu, ell) = theta.pair()?;
    check_gp_theta(nu, ell)?;
    Ok(correlation_matrix::<T>(ell, grid).scaled(cast(nu)))
}

/// Unit-variance exponential correlation matrix for range `ell`.
pub(crate) fn correlation_matrix<T: Scalar>(ell: f64, grid: &GridSpec) -> Matrix<T> {
    let locs = grid.locations();
    let n = locs.len();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = T::one();
        for j in 0..i {
            let d = (locs[i][0] - locs[j][0]).hypot(locs[i][1] - locs[j][1]);
            let v: T = cast((-d / ell).exp());
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

impl<T: Scalar> Matrix<T> {
    pub(crate) fn scaled(mut self, c: T) -> Self {
        for v in self.as_mut_slice() {
            *v *= c;
        }
        self
    }
}

/// Zero-mean Gaussian-process sampler with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GpSimulator {
    grid: GridSpec,
    chol: Matrix<f64>,
}

impl GpSimulator {
    pub fn new(theta: &Parameter, grid: &GridSpec) -> Result<Self> {
        let sigma = exp_covariance::<f64>(theta, grid)?;
        let chol = cholesky(&sigma).map_err(|e| {
            Error::Numeric(format!("covariance factorization failed for theta {:?}: {e}", theta.values))
        })?;
        Ok(GpSimulator { grid: *grid, chol })
    }

    /// One draw `y = L z`, `z ~ N(0, I)`.
    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.grid.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.matvec(&z)
    }

    /// One draw per generator, computed as a single matrix product.
    pub fn sample_many(&self, rngs: &mut [SimRng]) -> Vec<Vec<f64>> {
        let s = self.grid.len();
        let k = rngs.len();
        let mut z = Vec::with_capacity(k * s);
        for rng in rngs.iter_mut() {
            z.extend((0..s).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        // Y^T (k x s) = Z^T (k x s) * L^T
        let mut y = vec![0.0; k * s];
        f64::gemm(k, s, s, 1.0, &z, false, self.chol.as_slice(), true, 0.0, &mut y);
        y.chunks(s).map(|c| c.to_vec()).collect()
    }
}

/// Draw one field from the zero-mean exponential-covariance process.
pub fn simulate_gp(theta: &Parameter, grid: &GridSpec, seed: u64) -> Result<SpatialField> {
    let sim = GpSimulator::new(theta, grid)?;
    let mut rng = crate::rng::stream(seed, &[]);
    SpatialField::new(*grid, sim.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn diagonal_is_variance_and_entries_follow_distance() {
        let grid = GridSpec::square(3, 0.0, 2.0).unwrap();
        let sigma = exp_covariance::<f64>(&Parameter::gp(1.7, 0.8), &grid).unwrap();
        for i in 0..9 {
            assert!((sigma[(i, i)] - 1.7).abs() < 1e-15);
        }
        // locations 0 and 1 are one unit apart
        assert!((sigma[(0, 1)] - 1.7 * (-1.0f64 / 0.8).exp()).abs() < 1e-15);
    }

    #[test]
    fn matches_pairwise_brute_force() {
        let grid = GridSpec::square(3, -1.0, 1.0).unwrap();
        let sigma = exp_covariance::<f64>(&Parameter::gp(1.0, 1.0), &grid).unwrap();
        let xs = [-1.0f64, 0.0, 1.0];
        let mut pts = vec![];
        for y in xs {
            for x in xs {
                pts.push((x, y));
            }
        }
        for (i, a) in pts.iter().enumerate() {
            for (j, b) in pts.iter().enumerate() {
                let d = ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt();
                assert!((sigma[(i, j)] - (-d).exp()).abs() < 1e-15);
            }
        }
        assert!(cholesky(&sigma).is_ok());
    }

    #[test]
    fn rejects_non_positive_parameters() {
        let grid = GridSpec::square(2, 0.0, 1.0).unwrap();
        assert!(exp_covariance::<f64>(&Parameter::gp(0.0, 1.0), &grid).is_err());
        assert!(exp_covariance::<f64>(&Parameter::gp(1.0, -1.0), &grid).is_err());
        assert!(simulate_gp(&Parameter::gp(1.0, 0.0), &grid, 1).is_err());
    }

    #[test]
    fn fixed_seed_reproduces_field() {
        let grid = GridSpec::square(5, -10.0, 10.0).unwrap();
        let theta = Parameter::gp(0.7, 1.3);
        assert_eq!(simulate_gp(&theta, &grid, 42).unwrap(), simulate_gp(&theta, &grid, 42).unwrap());
        assert_ne!(simulate_gp(&theta, &grid, 42).unwrap(), simulate_gp(&theta, &grid, 43).unwrap());
    }

    #[test]
    fn batched_sampling_matches_single_draws() {
        let grid = GridSpec::square(4, -10.0, 10.0).unwrap();
        let sim = GpSimulator::new(&Parameter::gp(1.2, 2.0), &grid).unwrap();
        let mut rngs: Vec<_> = (0..3).map(|j| stream(5, &[j])).collect();
        let batch = sim.sample_many(&mut rngs);
        for (j, b) in batch.iter().enumerate() {
            let single = sim.sample(&mut stream(5, &[j as u64]));
            for (u, v) in b.iter().zip(&single) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_site_moments_are_standard_normal() {
        let grid = GridSpec::square(1, 0.0, 1.0).unwrap();
        let sim = GpSimulator::new(&Parameter::gp(1.0, 1.0), &grid).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|j| sim.sample(&mut stream(3, &[j]))[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn two_by_two_sample_covariance_matches_kernel() {
        let grid = GridSpec::square(2, 0.0, 1.0).unwrap();
        let theta = Parameter::gp(1.0, 1.5);
        let sigma = exp_covariance::<f64>(&theta, &grid).unwrap();
        let sim = GpSimulator::new(&theta, &grid).unwrap();
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|j| sim.sample(&mut stream(17, &[j]))).collect();
        for a in 0..4 {
            for b in 0..4 {
                let c = draws.iter().map(|y| y[a] * y[b]).sum::<f64>() / n as f64;
                assert!((c - sigma[(a, b)]).abs() < 0.05, "entry ({a},{b}): {c} vs {}", sigma[(a, b)]);
            }
        }
    }
}
