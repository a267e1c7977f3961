//! Pairwise composite log-likelihood for Brown-Resnick fields and its
//! curvature adjustment.

mod adjust;
mod exponent;

pub use adjust::{
    adjusted_surface, adjusted_surface_from, adjustment_matrix, estimate_godambe,
    estimate_godambe_with, fd_gradient, fd_hessian, AdjustmentModel, GodambeConfig, SqrtMethod,
    HESSIAN_STENCILS,
};
pub(crate) use exponent::{check_br_theta, semivariogram_unchecked};
pub use exponent::{
    bivariate_log_likelihood, hr_exponent, norm_cdf, norm_pdf, semivariogram, HrExponent,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, ParameterGrid, SpatialField};
use crate::surface::{Surface, SurfaceKind};

/// Location pairs closer than a cut-off distance, grouped by distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScheme {
    pub delta: f64,
    pub grid: GridSpec,
    /// `(distance, pairs at that distance)`, distances ascending.
    groups: Vec<(f64, Vec<(u32, u32)>)>,
}

impl PairScheme {
    /// All unordered pairs `j1 < j2` with `|s_j1 - s_j2| <= delta`.
    /// Distances within `1e-9` relative of `delta` count as included.
    pub fn new(grid: &GridSpec, delta: f64) -> Result<Self> {
        grid.validate()?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("cut-off delta must be positive, got {delta}")));
        }
        let cut = delta * (1.0 + 1e-9);
        let locs = grid.locations();
        let mut pairs: Vec<(f64, u32, u32)> = Vec::new();
        for a in 0..locs.len() {
            for b in a + 1..locs.len() {
                let d = (locs[a][0] - locs[b][0]).hypot(locs[a][1] - locs[b][1]);
                if d <= cut {
                    pairs.push((d, a as u32, b as u32));
                }
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut groups: Vec<(f64, Vec<(u32, u32)>)> = Vec::new();
        for (d, a, b) in pairs {
            match groups.last_mut() {
                Some((g, list)) if (d - *g).abs() <= 1e-9 * g.max(1.0) => list.push((a, b)),
                _ => groups.push((d, vec![(a, b)])),
            }
        }
        Ok(PairScheme {
            delta,
            grid: *grid,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, p)| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.groups
            .iter()
            .flat_map(|(_, p)| p.iter().map(|&(a, b)| (a as usize, b as usize)))
    }

    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().map(|(d, _)| *d)
    }
}

/// A field prepared for repeated pairwise evaluation: logs and reciprocals
/// of every location value are computed once.
#[derive(Debug, Clone)]
pub struct PairwiseEvaluator {
    scheme: PairScheme,
    log_z: Vec<f64>,
    inv_z: Vec<f64>,
}

impl PairwiseEvaluator {
    pub fn new(y: &SpatialField, scheme: &PairScheme) -> Result<Self> {
        if scheme.is_empty() {
            return Err(Error::invalid(format!(
                "no location pairs within delta = {}; delta is below the minimum grid spacing",
                scheme.delta
            )));
        }
        if y.grid() != &scheme.grid {
            return Err(Error::invalid("field grid does not match the pair scheme grid"));
        }
        if let Some(i) = y.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::invalid(format!(
                "field value at location {i} is {}, pairwise likelihood needs positive values",
                y.values()[i]
            )));
        }
        Ok(PairwiseEvaluator {
            scheme: scheme.clone(),
            log_z: y.values().iter().map(|v| v.ln()).collect(),
            inv_z: y.values().iter().map(|v| 1.0 / v).collect(),
        })
    }

    /// Composite log-likelihood at `(lambda, nu)`; `-inf` outside the
    /// valid parameter domain.
    pub fn log_likelihood(&self, lambda: f64, nu: f64) -> f64 {
        if check_br_theta(lambda, nu).is_err() {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for (d, pairs) in &self.scheme.groups {
            let a = (2.0 * semivariogram_unchecked(*d, lambda, nu)).sqrt();
            if !(a > 0.0 && a.is_finite()) {
                return f64::NEG_INFINITY;
            }
            let ln_a = a.ln();
            for &(j1, j2) in pairs {
                let (j1, j2) = (j1 as usize, j2 as usize);
                total += exponent::pair_term(
                    self.inv_z[j1],
                    self.inv_z[j2],
                    self.log_z[j1],
                    self.log_z[j2],
                    a,
                    ln_a,
                );
            }
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    pub fn scheme(&self) -> &PairScheme {
        &self.scheme
    }

    /// Unadjusted surface over `grid`, whose axes are `(lambda, nu)`.
    pub fn surface(&self, grid: &ParameterGrid) -> Result<Surface> {
        let (li, ni) = br_axes(grid)?;
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let p = grid.point(idx);
                self.log_likelihood(p[li], p[ni])
            })
            .collect();
        let mut s = Surface::new(grid.clone(), values, SurfaceKind::Pairwise)?;
        s.meta.delta = Some(self.scheme.delta);
        Ok(s)
    }
}

/// Positions of `lambda` and `nu` among the lattice axes, by name when the
/// axes are named and positionally otherwise.
pub(crate) fn br_axes(grid: &ParameterGrid) -> Result<(usize, usize)> {
    if grid.dim() != 2 {
        return Err(Error::invalid("Brown-Resnick lattice must be two-dimensional"));
    }
    let names = grid.names();
    let pos = |n: &str| names.iter().position(|x| x == n);
    Ok(match (pos("lambda"), pos("nu")) {
        (Some(a), Some(b)) => (a, b),
        _ => (0, 1),
    })
}

pub fn pairwise_log_likelihood(y: &SpatialField, theta: &Parameter, scheme: &PairScheme) -> Result<f64> {
    let (lambda, nu) = theta.pair()?;
    check_br_theta(lambda, nu)?;
    Ok(PairwiseEvaluator::new(y, scheme)?.log_likelihood(lambda, nu))
}

pub fn pairwise_surface(y: &SpatialField, grid: &ParameterGrid, delta: f64) -> Result<Surface> {
    let scheme = PairScheme::new(y.grid(), delta)?;
    PairwiseEvaluator::new(y, &scheme)?.surface(grid)
}
