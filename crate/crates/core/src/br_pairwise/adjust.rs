//! Curvature adjustment of the pairwise likelihood.
//!
//! `H` and `J` are estimated at a known parameter from simulated fields by
//! finite differences, then `theta -> theta_hat + C (theta - theta_hat)`
//! with `C = M^-1 M_adj`, `M^T M = H` and `M_adj^T M_adj = H J^-1 H`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{br_axes, check_br_theta, PairScheme, PairwiseEvaluator};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, ParameterGrid, SpatialField};
use crate::rng::{stream, tag};
use crate::simulate::{BrSimulator, DEFAULT_SPECTRAL_TERMS};
use crate::surface::{Surface, SurfaceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SqrtMethod {
    #[default]
    Cholesky,
    Eigen,
}

/// Sign patterns of the one-sided Hessian stencils, tried in order:
/// upper-right, lower-left, lower-right, upper-left.
pub const HESSIAN_STENCILS: [[f64; 2]; 4] = [[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GodambeConfig {
    pub n_fields: usize,
    pub fd_step: f64,
    pub n_spectral: usize,
    pub seed: u64,
    pub sqrt_method: SqrtMethod,
}

impl Default for GodambeConfig {
    fn default() -> Self {
        GodambeConfig {
            n_fields: 1000,
            fd_step: 0.05,
            n_spectral: DEFAULT_SPECTRAL_TERMS,
            seed: 0,
            sqrt_method: SqrtMethod::Cholesky,
        }
    }
}

/// Oracle curvature estimates at `theta_star` and, once computed, the
/// adjustment matrix `C`. Matrices are stored as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentModel {
    pub theta_star: Parameter,
    pub delta: f64,
    pub h_hat: Vec<Vec<f64>>,
    pub j_hat: Vec<Vec<f64>>,
    pub c: Option<Vec<Vec<f64>>>,
    pub sqrt_method: SqrtMethod,
    pub fd_step: f64,
    pub n_fields: usize,
    /// Fields with a negative-definite Hessian stencil.
    pub n_used: usize,
}

impl AdjustmentModel {
    /// Model with given curvature matrices, e.g. for tests or externally
    /// estimated information.
    pub fn from_matrices(
        theta_star: Parameter,
        delta: f64,
        h_hat: Vec<Vec<f64>>,
        j_hat: Vec<Vec<f64>>,
        sqrt_method: SqrtMethod,
    ) -> Self {
        AdjustmentModel {
            theta_star,
            delta,
            h_hat,
            j_hat,
            c: None,
            sqrt_method,
            fd_step: 0.0,
            n_fields: 0,
            n_used: 0,
        }
    }

    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("adjustment model: {e}")))
    }

    pub fn c_matrix(&self) -> Result<DMatrix<f64>> {
        let c = self
            .c
            .as_ref()
            .ok_or_else(|| Error::AdjustmentUnavailable("adjustment matrix not computed".into()))?;
        to_dmatrix(c)
    }
}

fn to_dmatrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("expected a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Forward-difference gradient `(f(theta + h e_i) - f(theta)) / h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Option<Vec<f64>> {
    let f0 = f(theta);
    let mut g = Vec::with_capacity(theta.len());
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let fi = f(&x);
        x[i] = theta[i];
        let gi = (fi - f0) / h;
        if !gi.is_finite() {
            return None;
        }
        g.push(gi);
    }
    Some(g)
}

/// One-sided Hessian stencil with step `s_i h` along axis `i`:
///
/// `H_ii = [f(theta + 2 s_i h e_i) - 2 f(theta + s_i h e_i) + f(theta)] / h^2`
/// `H_ij = s_i s_j [f(theta + s_i h e_i + s_j h e_j) - f(theta + s_i h e_i)
///         - f(theta + s_j h e_j) + f(theta)] / h^2`
///
/// Exact for quadratics. `None` if any evaluation is not finite.
pub fn fd_hessian(
    f: impl Fn(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
    signs: &[f64],
) -> Option<Vec<Vec<f64>>> {
    let k = theta.len();
    let at = |steps: &[(usize, f64)]| {
        let mut x = theta.to_vec();
        for &(i, mult) in steps {
            x[i] += mult * signs[i] * h;
        }
        f(&x)
    };
    let f0 = f(theta);
    let single: Vec<f64> = (0..k).map(|i| at(&[(i, 1.0)])).collect();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        out[i][i] = (at(&[(i, 2.0)]) - 2.0 * single[i] + f0) / (h * h);
        for j in 0..i {
            let v = signs[i] * signs[j] * (at(&[(i, 1.0), (j, 1.0)]) - single[i] - single[j] + f0)
                / (h * h);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out.iter().flatten().all(|v| v.is_finite()).then_some(out)
}

fn is_negative_definite(h: &[Vec<f64>]) -> bool {
    let m = DMatrix::from_fn(h.len(), h.len(), |i, j| -h[i][j]);
    m.cholesky().is_some()
}

/// Monte Carlo `H` and `J` from per-field log-likelihoods `loglik(f, theta)`.
/// Returns `(H, J, n_used)`; `J` averages over all fields, `H` over fields
/// where one of the stencils in [`HESSIAN_STENCILS`] order is negative
/// definite.
pub fn estimate_godambe_with(
    theta_star: &[f64],
    n_fields: usize,
    fd_step: f64,
    loglik: impl Fn(usize, &[f64]) -> f64 + Sync,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
    if n_fields == 0 {
        return Err(Error::invalid("need at least one field"));
    }
    if !(fd_step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {fd_step}")));
    }
    let k = theta_star.len();
    let per_field: Vec<(Option<Vec<f64>>, Option<Vec<Vec<f64>>>)> = (0..n_fields)
        .into_par_iter()
        .map(|f| {
            let ll = |t: &[f64]| loglik(f, t);
            let g = fd_gradient(ll, theta_star, fd_step);
            let h = HESSIAN_STENCILS.iter().find_map(|signs| {
                let signs: Vec<f64> = (0..k).map(|i| signs[i % 2]).collect();
                fd_hessian(ll, theta_star, fd_step, &signs).filter(|h| is_negative_definite(h))
            });
            (g, h)
        })
        .collect();
    let mut j = vec![vec![0.0; k]; k];
    let mut n_grad = 0;
    let mut h = vec![vec![0.0; k]; k];
    let mut n_used = 0;
    for (g, hess) in &per_field {
        if let Some(g) = g {
            n_grad += 1;
            for a in 0..k {
                for b in 0..k {
                    j[a][b] += g[a] * g[b];
                }
            }
        }
        if let Some(hess) = hess {
            n_used += 1;
            for a in 0..k {
                for b in 0..k {
                    h[a][b] -= hess[a][b];
                }
            }
        }
    }
    if n_used == 0 {
        return Err(Error::AdjustmentUnavailable(format!(
            "no negative-definite Hessian among {n_fields} fields"
        )));
    }
    if n_grad == 0 {
        return Err(Error::AdjustmentUnavailable("no finite gradient".into()));
    }
    for row in &mut h {
        row.iter_mut().for_each(|v| *v /= n_used as f64);
    }
    for row in &mut j {
        row.iter_mut().for_each(|v| *v /= n_grad as f64);
    }
    Ok((h, j, n_used))
}

/// Oracle `H`, `J` at `theta_star` from `config.n_fields` simulated
/// Brown-Resnick fields, field `f` drawn from stream `(seed, GODAMBE, f)`.
pub fn estimate_godambe(
    theta_star: &Parameter,
    grid: &GridSpec,
    delta: f64,
    config: &GodambeConfig,
) -> Result<AdjustmentModel> {
    let (lambda, nu) = theta_star.pair()?;
    check_br_theta(lambda, nu)?;
    let scheme = PairScheme::new(grid, delta)?;
    if scheme.is_empty() {
        return Err(Error::invalid(format!(
            "no location pairs within delta = {delta}; delta is below the minimum grid spacing"
        )));
    }
    let sim = BrSimulator::new(theta_star, grid, config.n_spectral)?;
    let evaluators: Vec<PairwiseEvaluator> = (0..config.n_fields)
        .into_par_iter()
        .map(|f| {
            let mut rng = stream(config.seed, &[tag::GODAMBE, f as u64]);
            let y = SpatialField::new(*grid, sim.sample(&mut rng))?;
            PairwiseEvaluator::new(&y, &scheme)
        })
        .collect::<Result<_>>()?;
    let (h_hat, j_hat, n_used) =
        estimate_godambe_with(&theta_star.values, config.n_fields, config.fd_step, |f, t| {
            evaluators[f].log_likelihood(t[0], t[1])
        })?;
    Ok(AdjustmentModel {
        theta_star: theta_star.clone(),
        delta,
        h_hat,
        j_hat,
        c: None,
        sqrt_method: config.sqrt_method,
        fd_step: config.fd_step,
        n_fields: config.n_fields,
        n_used,
    })
}

/// Square root `M` with `M^T M = A`.
fn matrix_sqrt(a: &DMatrix<f64>, method: SqrtMethod) -> Result<DMatrix<f64>> {
    match method {
        SqrtMethod::Cholesky => a
            .clone()
            .cholesky()
            .map(|c| c.l().transpose())
            .ok_or_else(|| Error::AdjustmentUnavailable("matrix is not positive definite".into())),
        SqrtMethod::Eigen => {
            let eig = SymmetricEigen::new(a.clone());
            if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::AdjustmentUnavailable(
                    "matrix is not positive definite".into(),
                ));
            }
            let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
            Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
        }
    }
}

/// Fill in `C = M^-1 M_adj`.
pub fn adjustment_matrix(mut model: AdjustmentModel) -> Result<AdjustmentModel> {
    let h = to_dmatrix(&model.h_hat)?;
    let j = to_dmatrix(&model.j_hat)?;
    if h.nrows() != j.nrows() {
        return Err(Error::invalid("H and J differ in size"));
    }
    let h = (&h + h.transpose()) * 0.5;
    let j_inv = j
        .clone()
        .lu()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numeric("J is singular".into()))?;
    // H J^-1 H = H exactly when J = H; skip the rounding of the product
    let h_adj = if j == h {
        h.clone()
    } else {
        let p = &h * j_inv * &h;
        (&p + p.transpose()) * 0.5
    };
    let m = matrix_sqrt(&h, model.sqrt_method)?;
    let m_adj = matrix_sqrt(&h_adj, model.sqrt_method)?;
    let c = if m_adj == m {
        DMatrix::identity(m.nrows(), m.ncols())
    } else {
        m.lu()
            .solve(&m_adj)
            .ok_or_else(|| Error::Numeric("square root of H is singular".into()))?
    };
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("adjustment matrix is not finite".into()));
    }
    model.c = Some(to_rows(&c));
    Ok(model)
}

/// Adjusted surface from an unadjusted one: the value at `theta` is the
/// pairwise log-likelihood at `theta + (C - I)(theta - theta_hat)`, where
/// `theta_hat` is the argmax of `unadjusted`. Invalid transformed points
/// get `-inf`.
pub fn adjusted_surface_from(
    evaluator: &PairwiseEvaluator,
    unadjusted: &Surface,
    model: &AdjustmentModel,
) -> Result<Surface> {
    let grid = &unadjusted.grid;
    let (li, ni) = br_axes(grid)?;
    let c = model.c_matrix()?;
    if c.nrows() != 2 {
        return Err(Error::invalid("adjustment matrix must be 2 x 2"));
    }
    let best = unadjusted.argmax().ok_or(Error::NoValidPoint)?;
    let p = grid.point(best);
    let hat = [p[li], p[ni]];
    let shift = [[c[(0, 0)] - 1.0, c[(0, 1)]], [c[(1, 0)], c[(1, 1)] - 1.0]];
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let p = grid.point(idx);
            let t = [p[li], p[ni]];
            let d = [t[0] - hat[0], t[1] - hat[1]];
            let lambda = t[0] + (shift[0][0] * d[0] + shift[0][1] * d[1]);
            let nu = t[1] + (shift[1][0] * d[0] + shift[1][1] * d[1]);
            evaluator.log_likelihood(lambda, nu)
        })
        .collect();
    let mut s = Surface::new(grid.clone(), values, SurfaceKind::PairwiseAdjusted)?;
    s.meta.delta = Some(model.delta);
    s.meta.theta_hat = Some(hat.to_vec());
    Ok(s)
}

pub fn adjusted_surface(
    y: &SpatialField,
    grid: &ParameterGrid,
    delta: f64,
    model: &AdjustmentModel,
) -> Result<Surface> {
    let scheme = PairScheme::new(y.grid(), delta)?;
    let evaluator = PairwiseEvaluator::new(y, &scheme)?;
    let unadjusted = evaluator.surface(grid)?;
    adjusted_surface_from(&evaluator, &unadjusted, model)
}
