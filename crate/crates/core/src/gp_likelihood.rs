//! Exact Gaussian-process log-likelihood through one Cholesky factorization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, ParameterGrid, SpatialField};
use crate::linalg::{cholesky, cholesky_log_det, cholesky_quad_form, Matrix};
use crate::scalar::{cast, Scalar};
use crate::simulate::{check_gp_theta, correlation_matrix, exp_covariance};
use crate::surface::{Surface, SurfaceKind};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `-1/2 y^T Sigma^{-1} y - s/2 log(2 pi) - 1/2 log det Sigma` for the
/// exponential covariance with `theta = (nu, ell)`.
pub fn gp_log_likelihood<T: Scalar>(
    y: &SpatialField<T>,
    theta: &Parameter,
    grid: &GridSpec,
) -> Result<T> {
    if y.grid() != grid {
        return Err(Error::invalid("field grid does not match the likelihood grid"));
    }
    let sigma = exp_covariance::<T>(theta, grid)?;
    let l = cholesky(&sigma)?;
    let half: T = cast(0.5);
    let s: T = cast(grid.len() as f64);
    Ok(-half * cholesky_quad_form(&l, y.values()) - half * s * cast(LN_2PI) - half * cholesky_log_det(&l))
}

/// Exact surfaces for many fields on one parameter lattice.
///
/// `Sigma(nu, ell) = nu * R(ell)`, so one factorization of the correlation
/// matrix per distinct `ell` serves every `nu` on the lattice and every
/// field:
/// `log L = -q / (2 nu) - s/2 log(2 pi) - s/2 log nu - 1/2 log det R`
/// with `q = y^T R^{-1} y`.
pub struct GpSurfaceEvaluator {
    grid: ParameterGrid,
    spatial: GridSpec,
    nu_axis: usize,
    ell_axis: usize,
    /// `(factor, log det R)` per `ell` value; `None` if factorization failed.
    factors: Vec<Option<(Matrix<f64>, f64)>>,
}

impl GpSurfaceEvaluator {
    pub fn new(grid: &ParameterGrid, spatial: &GridSpec) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::invalid("Gaussian-process lattice must be two-dimensional"));
        }
        let names = grid.names();
        let pos = |n: &str| names.iter().position(|x| x == n);
        let (nu_axis, ell_axis) = match (pos("nu"), pos("ell")) {
            (Some(a), Some(b)) => (a, b),
            _ => (0, 1),
        };
        for axis in &grid.axes {
            let lo = axis.value(0);
            if !(lo > 0.0) {
                return Err(Error::invalid(format!(
                    "lattice axis {} reaches non-positive value {lo}",
                    axis.name
                )));
            }
        }
        let ells = grid.axes[ell_axis].values();
        let factors = ells
            .par_iter()
            .map(|&ell| {
                let r = correlation_matrix::<f64>(ell, spatial);
                cholesky(&r).ok().map(|l| {
                    let ld = cholesky_log_det(&l);
                    (l, ld)
                })
            })
            .collect();
        Ok(GpSurfaceEvaluator {
            grid: grid.clone(),
            spatial: *spatial,
            nu_axis,
            ell_axis,
            factors,
        })
    }

    pub fn evaluate(&self, y: &SpatialField) -> Result<Surface> {
        Ok(self.evaluate_many(std::slice::from_ref(y))?.remove(0))
    }

    pub fn evaluate_many(&self, fields: &[SpatialField]) -> Result<Vec<Surface>> {
        let s = self.spatial.len();
        if let Some(f) = fields.iter().find(|f| f.grid() != &self.spatial) {
            return Err(Error::invalid(format!(
                "field on grid {:?} does not match evaluator grid {:?}",
                f.grid(),
                self.spatial
            )));
        }
        let nf = fields.len();
        // s x nf right-hand sides, one column per field
        let mut rhs = vec![0.0; s * nf];
        for (c, f) in fields.iter().enumerate() {
            for (r, &v) in f.values().iter().enumerate() {
                rhs[r * nf + c] = v;
            }
        }
        // quad[ell][field]
        let quads: Vec<Option<(Vec<f64>, f64)>> = self
            .factors
            .par_iter()
            .map(|f| {
                f.as_ref()
                    .map(|(l, ld)| (quad_forms_many(l, &rhs, nf), *ld))
            })
            .collect();
        let nus = self.grid.axes[self.nu_axis].values();
        let sf = s as f64;
        let mut out = Vec::with_capacity(nf);
        for c in 0..nf {
            let mut values = vec![f64::NEG_INFINITY; self.grid.len()];
            for (idx, v) in values.iter_mut().enumerate() {
                let multi = self.grid.multi_index(idx);
                let (ni, li) = (multi[self.nu_axis], multi[self.ell_axis]);
                if let Some((q, ld)) = &quads[li] {
                    let nu = nus[ni];
                    *v = -0.5 * q[c] / nu - 0.5 * sf * (LN_2PI + nu.ln()) - 0.5 * ld;
                }
            }
            out.push(Surface::new(self.grid.clone(), values, SurfaceKind::GpExact)?);
        }
        Ok(out)
    }
}

/// Column-wise `||L^{-1} y_c||^2` for the `s x nf` row-major block `rhs`.
fn quad_forms_many(l: &Matrix<f64>, rhs: &[f64], nf: usize) -> Vec<f64> {
    let s = l.rows();
    let mut z = vec![0.0; s * nf];
    for i in 0..s {
        let (done, rest) = z.split_at_mut(i * nf);
        let zi = &mut rest[..nf];
        zi.copy_from_slice(&rhs[i * nf..(i + 1) * nf]);
        let li = l.row(i);
        for (k, &lik) in li[..i].iter().enumerate() {
            if lik != 0.0 {
                let zk = &done[k * nf..(k + 1) * nf];
                for (a, &b) in zi.iter_mut().zip(zk) {
                    *a -= lik * b;
                }
            }
        }
        let d = li[i];
        for a in zi.iter_mut() {
            *a /= d;
        }
    }
    let mut q = vec![0.0; nf];
    for row in z.chunks(nf) {
        for (acc, &v) in q.iter_mut().zip(row) {
            *acc += v * v;
        }
    }
    q
}

/// Exact log-likelihood at every lattice point. Points whose covariance
/// cannot be factored hold `-inf` and are listed in the metadata.
pub fn gp_surface(y: &SpatialField, grid: &ParameterGrid) -> Result<Surface> {
    GpSurfaceEvaluator::new(grid, y.grid())?.evaluate(y)
}

/// Point-by-point surface: one covariance build and factorization per
/// lattice point.
pub fn gp_surface_pointwise(y: &SpatialField, grid: &ParameterGrid) -> Result<Surface> {
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let theta = grid.parameter(i);
            let (nu, ell) = theta.pair()?;
            check_gp_theta(nu, ell)?;
            Ok(gp_log_likelihood(y, &theta, y.grid()).unwrap_or(f64::NEG_INFINITY))
        })
        .collect::<Result<Vec<f64>>>()?;
    Surface::new(grid.clone(), values, SurfaceKind::GpExact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_parameter_grid, ParameterSpace};
    use crate::simulate::simulate_gp;

    #[test]
    fn one_site_zero_field_is_normal_constant() {
        let grid = GridSpec::square(1, 0.0, 1.0).unwrap();
        let y = SpatialField::new(grid, vec![0.0]).unwrap();
        let ll: f64 = gp_log_likelihood(&y, &Parameter::gp(1.0, 1.0), &grid).unwrap();
        assert!((ll + 0.918_938_533_204_672_8).abs() < 1e-14);
    }

    #[test]
    fn single_site_closed_form() {
        let grid = GridSpec::square(1, 0.0, 1.0).unwrap();
        for (nu, y) in [(1.0, 0.0), (0.3, 1.7), (2.4, -0.8)] {
            let field = SpatialField::new(grid, vec![y]).unwrap();
            let got = gp_log_likelihood(&field, &Parameter::gp(nu, 0.7), &grid).unwrap();
            let want = -0.5 * (2.0 * std::f64::consts::PI * nu).ln() - y * y / (2.0 * nu);
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn scale_equivariance() {
        let grid = GridSpec::square(4, -10.0, 10.0).unwrap();
        let y = simulate_gp(&Parameter::gp(0.9, 1.4), &grid, 3).unwrap();
        let c: f64 = 1.7;
        let cy = SpatialField::new(grid, y.values().iter().map(|v| c * v).collect()).unwrap();
        let a = gp_log_likelihood(&y, &Parameter::gp(0.9, 1.4), &grid).unwrap();
        let b = gp_log_likelihood(&cy, &Parameter::gp(0.9 * c * c, 1.4), &grid).unwrap();
        assert!((b - (a - 16.0 * c.ln())).abs() < 1e-10);
    }

    #[test]
    fn factored_surface_equals_pointwise_surface() {
        let grid = GridSpec::square(5, -10.0, 10.0).unwrap();
        let y = simulate_gp(&Parameter::gp(1.1, 0.6), &grid, 8).unwrap();
        let lattice = make_parameter_grid(&ParameterSpace::gp(2.0), &[6, 7]).unwrap();
        let fast = gp_surface(&y, &lattice).unwrap();
        let slow = gp_surface_pointwise(&y, &lattice).unwrap();
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
        assert_eq!(fast.kind, SurfaceKind::GpExact);
        assert_eq!(fast, gp_surface(&y, &lattice).unwrap());
    }

    #[test]
    fn single_point_lattice_matches_likelihood() {
        let grid = GridSpec::square(3, -10.0, 10.0).unwrap();
        let y = simulate_gp(&Parameter::gp(1.0, 1.0), &grid, 1).unwrap();
        let space = ParameterSpace::gp(1.5);
        let lattice = make_parameter_grid(&space, &[1, 1]).unwrap();
        let s = gp_surface(&y, &lattice).unwrap();
        let ll = gp_log_likelihood(&y, &Parameter::gp(1.5, 1.5), &grid).unwrap();
        assert!((s.values[0] - ll).abs() < 1e-10);
    }

    #[test]
    fn many_fields_match_one_at_a_time() {
        let grid = GridSpec::square(4, -10.0, 10.0).unwrap();
        let fields: Vec<_> = (0..3)
            .map(|k| simulate_gp(&Parameter::gp(1.0, 1.0), &grid, k).unwrap())
            .collect();
        let lattice = make_parameter_grid(&ParameterSpace::gp(2.0), &[4, 4]).unwrap();
        let ev = GpSurfaceEvaluator::new(&lattice, &grid).unwrap();
        let many = ev.evaluate_many(&fields).unwrap();
        for (f, s) in fields.iter().zip(&many) {
            let one = ev.evaluate(f).unwrap();
            for (a, b) in one.values.iter().zip(&s.values) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let grid = GridSpec::square(3, -10.0, 10.0).unwrap();
        let other = GridSpec::square(4, -10.0, 10.0).unwrap();
        let y = simulate_gp(&Parameter::gp(1.0, 1.0), &grid, 1).unwrap();
        assert!(gp_log_likelihood(&y, &Parameter::gp(1.0, 1.0), &other).is_err());
    }
}
