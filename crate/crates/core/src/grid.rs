//! Spatial grids, fields, parameters and the parameter evaluation lattice.
//!
//! Everything is row-major: spatial location `(row, col)` has linear index
//! `row * side + col`, and parameter-lattice point `(i0, i1, ..)` has linear
//! index with the last axis varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Regular `side x side` lattice of locations over a rectangular domain.
///
/// Column index moves along the first coordinate axis, row index along the
/// second. Location 0 is the corner at `domain_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side: usize,
    pub domain_min: [f64; 2],
    pub domain_max: [f64; 2],
}

impl GridSpec {
    pub fn new(side: usize, domain_min: [f64; 2], domain_max: [f64; 2]) -> Result<Self> {
        let grid = GridSpec {
            side,
            domain_min,
            domain_max,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid over `[lo, hi]^2`.
    pub fn square(side: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(side, [lo, lo], [hi, hi])
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::invalid("grid side must be at least 1"));
        }
        for axis in 0..2 {
            let (lo, hi) = (self.domain_min[axis], self.domain_max[axis]);
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid(format!(
                    "grid domain axis {axis} must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// Distance between neighbouring locations along each axis. Zero for a
    /// single-location grid.
    pub fn spacing(&self) -> [f64; 2] {
        if self.side < 2 {
            return [0.0, 0.0];
        }
        let d = (self.side - 1) as f64;
        [
            (self.domain_max[0] - self.domain_min[0]) / d,
            (self.domain_max[1] - self.domain_min[1]) / d,
        ]
    }

    pub fn location(&self, index: usize) -> [f64; 2] {
        let (row, col) = (index / self.side, index % self.side);
        let h = self.spacing();
        [
            self.domain_min[0] + h[0] * col as f64,
            self.domain_min[1] + h[1] * row as f64,
        ]
    }

    pub fn locations(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.location(i)).collect()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.location(a), self.location(b));
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

/// One realization of a process on a [`GridSpec`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField<T: Scalar = f64> {
    grid: GridSpec,
    values: Vec<T>,
}

impl<T: Scalar> SpatialField<T> {
    pub fn new(grid: GridSpec, values: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values but grid has {} locations",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("field value at {i} is not finite")));
        }
        Ok(SpatialField { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.grid.side + col]
    }

    /// Same field in another precision.
    pub fn cast<U: Scalar>(&self) -> SpatialField<U> {
        SpatialField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|&v| crate::scalar::cast(crate::scalar::to_f64(v)))
                .collect(),
        }
    }
}

/// Named parameter vector, e.g. `(nu, ell)` for the Gaussian process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub values: Vec<f64>,
    pub names: Vec<String>,
}

impl Parameter {
    pub fn new(values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if values.len() != names.len() {
            return Err(Error::invalid("parameter values and names differ in length"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {values:?} is not finite")));
        }
        Ok(Parameter { values, names })
    }

    /// Gaussian-process parameter: variance `nu`, range `ell`.
    pub fn gp(nu: f64, ell: f64) -> Self {
        Parameter {
            values: vec![nu, ell],
            names: vec!["nu".into(), "ell".into()],
        }
    }

    /// Brown-Resnick parameter: range `lambda`, smoothness `nu`.
    pub fn br(lambda: f64, nu: f64) -> Self {
        Parameter {
            values: vec![lambda, nu],
            names: vec!["lambda".into(), "nu".into()],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub(crate) fn pair(&self) -> Result<(f64, f64)> {
        match self.values.as_slice() {
            [a, b] => Ok((*a, *b)),
            other => Err(Error::invalid(format!(
                "expected a two-component parameter, got {} components",
                other.len()
            ))),
        }
    }
}

/// Bounded box `prod_j (lo_j, hi_j)` of named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
}

impl ParameterSpace {
    pub fn new(names: Vec<String>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let space = ParameterSpace { names, bounds };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.bounds.len() || self.bounds.is_empty() {
            return Err(Error::invalid("parameter space needs one bound per name"));
        }
        for (name, &(lo, hi)) in self.names.iter().zip(&self.bounds) {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid(format!(
                    "bounds for {name} must satisfy lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn gp(hi: f64) -> Self {
        ParameterSpace {
            names: vec!["nu".into(), "ell".into()],
            bounds: vec![(0.0, hi), (0.0, hi)],
        }
    }

    pub fn br(hi: f64) -> Self {
        ParameterSpace {
            names: vec!["lambda".into(), "nu".into()],
            bounds: vec![(0.0, hi), (0.0, hi)],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn parameter(&self, values: Vec<f64>) -> Parameter {
        Parameter {
            values,
            names: self.names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub start: f64,
    pub spacing: f64,
    pub count: usize,
}

impl GridAxis {
    /// Coordinate of the `i`-th point (0-based), `start + spacing * (i + 1)`.
    pub fn value(&self, i: usize) -> f64 {
        self.start + self.spacing * (i + 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }

    /// Index of the lattice value closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.start) / self.spacing).round() - 1.0;
        i.clamp(0.0, (self.count - 1) as f64) as usize
    }
}

/// Regular evaluation lattice over a bounded parameter space.
///
/// Along each axis the points sit at `lo + alpha * i` for `i = 1..=count`
/// with `alpha = (hi - lo) / count`, so the lower boundary is excluded and
/// the upper boundary is the last point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    pub axes: Vec<GridAxis>,
}

pub fn make_parameter_grid(space: &ParameterSpace, counts: &[usize]) -> Result<ParameterGrid> {
    space.validate()?;
    if counts.len() != space.dim() {
        return Err(Error::invalid(format!(
            "{} counts given for a {}-dimensional space",
            counts.len(),
            space.dim()
        )));
    }
    let mut axes = Vec::with_capacity(counts.len());
    for ((name, &(lo, hi)), &count) in space.names.iter().zip(&space.bounds).zip(counts) {
        if count == 0 {
            return Err(Error::invalid(format!("axis {name} needs a positive count")));
        }
        axes.push(GridAxis {
            name: name.clone(),
            start: lo,
            spacing: (hi - lo) / count as f64,
            count,
        });
    }
    Ok(ParameterGrid { axes })
}

impl ParameterGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("parameter grid needs at least one axis"));
        }
        for a in &axes {
            if a.count == 0 || !(a.spacing > 0.0) || !a.start.is_finite() {
                return Err(Error::invalid(format!("invalid grid axis {a:?}")));
            }
        }
        Ok(ParameterGrid { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    /// Per-axis indices of linear index `index`.
    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (slot, axis) in out.iter_mut().zip(&self.axes).rev() {
            *slot = index % axis.count;
            index /= axis.count;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.count + i)
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis.value(i))
            .collect()
    }

    pub fn parameter(&self, index: usize) -> Parameter {
        Parameter {
            values: self.point(index),
            names: self.names(),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Linear index of the lattice point nearest to `theta`.
    pub fn nearest_index(&self, theta: &[f64]) -> usize {
        let multi: Vec<usize> = theta
            .iter()
            .zip(&self.axes)
            .map(|(&x, axis)| axis.nearest(x))
            .collect();
        self.linear_index(&multi)
    }

    /// Area (volume) of one lattice cell, `prod_j alpha_j`.
    pub fn cell_area(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing).product()
    }
}
