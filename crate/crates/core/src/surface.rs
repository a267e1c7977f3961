//! Log-likelihood surfaces over a [`ParameterGrid`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::read_manifest;
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::tensor::{read_tensor, to_f32, write_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    NeuralUncalibrated,
    NeuralCalibrated,
    GpExact,
    Pairwise,
    PairwiseAdjusted,
}

impl SurfaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceKind::NeuralUncalibrated => "neural-uncalibrated",
            SurfaceKind::NeuralCalibrated => "neural-calibrated",
            SurfaceKind::GpExact => "gp-exact",
            SurfaceKind::Pairwise => "pairwise",
            SurfaceKind::PairwiseAdjusted => "pairwise-adjusted",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeta {
    pub field_id: Option<String>,
    pub delta: Option<f64>,
    pub calibration_id: Option<String>,
    /// Grid points whose evaluation failed and hold the `-inf` sentinel.
    pub failed_points: Vec<usize>,
    /// Number of classifier outputs clamped away from 0 or 1.
    pub clamped_points: usize,
    /// Pairwise maximizer used by the curvature adjustment.
    pub theta_hat: Option<Vec<f64>>,
}

/// Log-scale values, one per grid point in row-major order. Failed points
/// carry `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub grid: ParameterGrid,
    pub values: Vec<f64>,
    pub kind: SurfaceKind,
    pub meta: SurfaceMeta,
}

impl Surface {
    pub fn new(grid: ParameterGrid, values: Vec<f64>, kind: SurfaceKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "surface has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric("surface contains NaN or +inf".into()));
        }
        let failed_points = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == f64::NEG_INFINITY)
            .map(|(i, _)| i)
            .collect();
        Ok(Surface {
            grid,
            values,
            kind,
            meta: SurfaceMeta {
                failed_points,
                ..SurfaceMeta::default()
            },
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest finite value, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v.is_finite() && best.is_none_or(|b| v > self.values[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_tensor(dir.join("surface.nlt"), &self.grid.counts(), &to_f32(&self.values))?;
        let manifest = SurfaceManifest {
            format: SURFACE_FORMAT.into(),
            kind: self.kind,
            grid: self.grid.clone(),
            meta: self.meta.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: SurfaceManifest = read_manifest(dir)?;
        if manifest.format != SURFACE_FORMAT {
            return Err(Error::format(format!("unknown surface format {}", manifest.format)));
        }
        let t = read_tensor(dir.join("surface.nlt"))?;
        if t.shape != manifest.grid.counts() {
            return Err(Error::format(format!(
                "surface.nlt shape {:?} does not match grid {:?}",
                t.shape,
                manifest.grid.counts()
            )));
        }
        Ok(Surface {
            grid: manifest.grid,
            values: t.data.iter().map(|&v| v as f64).collect(),
            kind: manifest.kind,
            meta: manifest.meta,
        })
    }
}

pub const SURFACE_FORMAT: &str = "nlsurf-surface/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceManifest {
    format: String,
    kind: SurfaceKind,
    grid: ParameterGrid,
    meta: SurfaceMeta,
}
