//! Log-psi surfaces from the classifier, grid maximum likelihood and
//! likelihood-ratio confidence regions.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::calibrate::{apply_platt, clamp_prob, sigmoid, PlattModel, PROB_EPSILON};
use crate::dataset::read_manifest;
use crate::error::{Error, Result};
use crate::grid::{Parameter, ParameterGrid, SpatialField};
use crate::neural::CnnModel;
use crate::scalar::{cast, Scalar};
use crate::surface::{Surface, SurfaceKind};
use crate::tensor::{read_tensor, write_tensor};

/// Parameter rows pushed through the dense head at once.
const HEAD_CHUNK: usize = 4096;

/// `ln(h / (1 - h))` with `h` clamped to `[eps, 1 - eps]`.
pub fn log_psi(h: f64) -> f64 {
    log_psi_flagged(h).0
}

/// [`log_psi`] plus whether the clamp was active.
pub fn log_psi_flagged(h: f64) -> (f64, bool) {
    let c = clamp_prob(h, PROB_EPSILON);
    (c.ln() - (-c).ln_1p(), c != h)
}

fn check_model_input<T: Scalar>(model: &CnnModel<T>, y: &SpatialField, grid: &ParameterGrid) -> Result<()> {
    if y.grid().side != model.side() {
        return Err(Error::invalid(format!(
            "field side {} does not match model input side {}",
            y.grid().side,
            model.side()
        )));
    }
    if grid.dim() != model.arch.param_dim {
        return Err(Error::invalid(format!(
            "grid has {} axes, model expects {} parameters",
            grid.dim(),
            model.arch.param_dim
        )));
    }
    Ok(())
}

fn surface_from_probs(grid: &ParameterGrid, probs: &[f64], platt: Option<&PlattModel>) -> Result<Surface> {
    let mut clamped = 0;
    let values: Vec<f64> = probs
        .iter()
        .map(|&h| {
            let p = platt.map_or(h, |m| apply_platt(m, h));
            let (v, hit) = log_psi_flagged(p);
            clamped += usize::from(hit);
            v
        })
        .collect();
    let kind = if platt.is_some() {
        SurfaceKind::NeuralCalibrated
    } else {
        SurfaceKind::NeuralUncalibrated
    };
    let mut s = Surface::new(grid.clone(), values, kind)?;
    s.meta.clamped_points = clamped;
    Ok(s)
}

/// Classifier surface over the whole grid. The convolutional trunk runs
/// once for `y`; the dense head sees every grid parameter in one batch.
pub fn neural_surface<T: Scalar>(
    model: &CnnModel<T>,
    platt: Option<&PlattModel>,
    y: &SpatialField,
    grid: &ParameterGrid,
) -> Result<Surface> {
    check_model_input(model, y, grid)?;
    let prepared = model.prepare_field(y.values())?;
    let feats = model.trunk_features(&prepared, 1);
    let thetas: Vec<T> = grid.points().into_iter().flatten().map(cast).collect();
    let k = grid.dim();
    let mut probs = Vec::with_capacity(grid.len());
    for chunk in thetas.chunks(HEAD_CHUNK * k) {
        let logits = model.head_logit_shared(&feats, chunk, chunk.len() / k);
        probs.extend(logits.into_iter().map(sigmoid));
    }
    surface_from_probs(grid, &probs, platt)
}

/// Same surface computed with one full forward pass per grid point.
pub fn neural_surface_unvectorized<T: Scalar>(
    model: &CnnModel<T>,
    platt: Option<&PlattModel>,
    y: &SpatialField,
    grid: &ParameterGrid,
) -> Result<Surface> {
    check_model_input(model, y, grid)?;
    let probs = (0..grid.len())
        .map(|i| model.forward(y, &grid.parameter(i)).map(|p| p[0]))
        .collect::<Result<Vec<_>>>()?;
    surface_from_probs(grid, &probs, platt)
}

/// [`neural_surface`] for many fields, in parallel across fields.
pub fn neural_surfaces<T: Scalar>(
    model: &CnnModel<T>,
    platt: Option<&PlattModel>,
    fields: &[SpatialField],
    grid: &ParameterGrid,
) -> Result<Vec<Surface>> {
    fields
        .par_iter()
        .map(|y| neural_surface(model, platt, y, grid))
        .collect()
}

/// Joint surface of independent realizations: pointwise sum of logs.
pub fn multi_surface(surfaces: &[Surface]) -> Result<Surface> {
    let first = surfaces
        .first()
        .ok_or_else(|| Error::invalid("multi_surface needs at least one surface"))?;
    let mut values = first.values.clone();
    for s in &surfaces[1..] {
        if s.grid != first.grid {
            return Err(Error::invalid("surfaces are defined on different grids"));
        }
        if s.kind != first.kind {
            return Err(Error::invalid(format!(
                "cannot combine {} and {} surfaces",
                first.kind.as_str(),
                s.kind.as_str()
            )));
        }
        for (a, b) in values.iter_mut().zip(&s.values) {
            *a += b;
        }
    }
    let mut out = Surface::new(first.grid.clone(), values, first.kind)?;
    out.meta.clamped_points = surfaces.iter().map(|s| s.meta.clamped_points).sum();
    out.meta.delta = first.meta.delta;
    out.meta.calibration_id = first.meta.calibration_id.clone();
    Ok(out)
}

/// Grid maximizer, lowest linear index on ties.
pub fn grid_mle(surface: &Surface) -> Result<(Parameter, f64)> {
    let i = surface.argmax().ok_or(Error::NoValidPoint)?;
    Ok((surface.grid.parameter(i), surface.values[i]))
}

/// Upper `alpha` quantile of the chi-squared distribution with `k`
/// degrees of freedom.
pub fn chi2_quantile(alpha: f64, k: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if k == 0 {
        return Err(Error::invalid("chi-squared needs at least one degree of freedom"));
    }
    if k == 2 {
        return Ok(-2.0 * alpha.ln());
    }
    let target = 1.0 - alpha;
    let a = k as f64 / 2.0;
    let cdf = |x: f64| gamma_lr(a, x / 2.0);
    let mut hi = k as f64;
    while cdf(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub grid: ParameterGrid,
    pub membership: Vec<bool>,
    pub alpha: f64,
    pub cutoff: f64,
    pub kind: SurfaceKind,
    pub argmax: usize,
    pub source_id: Option<String>,
}

impl ConfidenceRegion {
    pub fn len(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Membership of the grid point nearest to `theta`.
    pub fn contains(&self, theta: &[f64]) -> bool {
        self.membership[self.grid.nearest_index(theta)]
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mask: Vec<f32> = self.membership.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        write_tensor(dir.join("mask.nlt"), &self.grid.counts(), &mask)?;
        let manifest = RegionManifest {
            format: REGION_FORMAT.into(),
            grid: self.grid.clone(),
            alpha: self.alpha,
            cutoff: self.cutoff,
            kind: self.kind,
            argmax: self.argmax,
            source_id: self.source_id.clone(),
            members: self.len(),
            area: region_area(self),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: RegionManifest = read_manifest(dir)?;
        if m.format != REGION_FORMAT {
            return Err(Error::format(format!("unknown region format {}", m.format)));
        }
        let t = read_tensor(dir.join("mask.nlt"))?;
        if t.shape != m.grid.counts() {
            return Err(Error::format("mask shape does not match the region grid"));
        }
        let membership = t
            .data
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::format(format!("mask holds {other}, expected 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if m.argmax >= membership.len() || !membership[m.argmax] {
            return Err(Error::format("region does not contain its maximizer"));
        }
        Ok(ConfidenceRegion {
            grid: m.grid,
            membership,
            alpha: m.alpha,
            cutoff: m.cutoff,
            kind: m.kind,
            argmax: m.argmax,
            source_id: m.source_id,
        })
    }
}

pub const REGION_FORMAT: &str = "nlsurf-region/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionManifest {
    format: String,
    grid: ParameterGrid,
    alpha: f64,
    cutoff: f64,
    kind: SurfaceKind,
    argmax: usize,
    source_id: Option<String>,
    members: usize,
    area: f64,
}

/// Grid points whose likelihood-ratio statistic `2 (max - value)` is at
/// most the chi-squared cutoff with `k = grid.dim()`.
pub fn confidence_region(surface: &Surface, alpha: f64) -> Result<ConfidenceRegion> {
    let cutoff = chi2_quantile(alpha, surface.grid.dim())?;
    let (_, max) = grid_mle(surface)?;
    let argmax = surface.argmax().ok_or(Error::NoValidPoint)?;
    let membership = surface
        .values
        .iter()
        .map(|&v| v.is_finite() && 2.0 * (max - v) <= cutoff)
        .collect();
    Ok(ConfidenceRegion {
        grid: surface.grid.clone(),
        membership,
        alpha,
        cutoff,
        kind: surface.kind,
        argmax,
        source_id: surface.meta.field_id.clone(),
    })
}

/// Member count times the grid cell area.
pub fn region_area(region: &ConfidenceRegion) -> f64 {
    region.len() as f64 * region.grid.cell_area()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_parameter_grid, GridSpec, ParameterSpace};
    use crate::neural::Architecture;
    use crate::InputTransform;
    use proptest::prelude::*;

    fn grid(n: usize) -> ParameterGrid {
        make_parameter_grid(&ParameterSpace::gp(2.0), &[n, n]).unwrap()
    }

    fn surface(values: Vec<f64>) -> Surface {
        let n = (values.len() as f64).sqrt() as usize;
        Surface::new(grid(n), values, SurfaceKind::GpExact).unwrap()
    }

    #[test]
    fn log_psi_values() {
        assert_eq!(log_psi(0.5), 0.0);
        assert!((log_psi(0.9) - 9f64.ln()).abs() < 1e-14);
        assert!((9f64.ln() - 2.197_224_577).abs() < 1e-9);
        let (v, hit) = log_psi_flagged(1.0);
        assert!(hit && (v - 16.118_095_6).abs() < 1e-6);
        assert!(!log_psi_flagged(0.3).1);
    }

    #[test]
    fn chi2_cutoffs() {
        assert!((chi2_quantile(0.01, 2).unwrap() - 9.21).abs() < 0.01);
        assert!((chi2_quantile(0.05, 2).unwrap() - 5.991_464_547).abs() < 1e-8);
        assert!(chi2_quantile(1.0 - 1e-12, 2).unwrap() < 1e-10);
        // tabulated quantiles
        assert!((chi2_quantile(0.05, 1).unwrap() - 3.841_458_821).abs() < 1e-7);
        assert!((chi2_quantile(0.01, 3).unwrap() - 11.344_866_73).abs() < 1e-6);
        assert!((chi2_quantile(0.05, 10).unwrap() - 18.307_038_05).abs() < 1e-6);
        assert!(chi2_quantile(0.0, 2).is_err());
        assert!(chi2_quantile(0.5, 0).is_err());
    }

    #[test]
    fn general_path_agrees_with_closed_form() {
        let target = 0.95;
        let x = chi2_quantile(0.05, 2).unwrap();
        assert!((gamma_lr(1.0, x / 2.0) - target).abs() < 1e-12);
    }

    #[test]
    fn grid_mle_tie_rule_and_errors() {
        let mut v = vec![0.0; 16];
        v[7] = 3.0;
        let (p, val) = grid_mle(&surface(v.clone())).unwrap();
        assert_eq!(val, 3.0);
        assert_eq!(p.values, grid(4).point(7));
        v[3] = 3.0;
        v[9] = 3.0;
        assert_eq!(surface(v).argmax(), Some(3));
        let dead = surface(vec![f64::NEG_INFINITY; 4]);
        assert!(matches!(grid_mle(&dead), Err(Error::NoValidPoint)));
    }

    #[test]
    fn regions_and_areas() {
        let full = confidence_region(&surface(vec![1.5; 1600]), 0.05).unwrap();
        assert_eq!(full.len(), 1600);
        assert!((region_area(&full) - 4.0).abs() < 1e-12);
        let mut v = vec![-100.0; 1600];
        v[10] = 0.0;
        let single = confidence_region(&surface(v), 0.05).unwrap();
        assert_eq!(single.len(), 1);
        assert!((region_area(&single) - 0.0025).abs() < 1e-15);
        assert!(single.membership[10]);
    }

    #[test]
    fn region_persists() {
        let v: Vec<f64> = (0..25).map(|i| -((i as f64) - 12.0).powi(2) / 4.0).collect();
        let r = confidence_region(&surface(v), 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_dir(dir.path()).unwrap();
        assert_eq!(ConfidenceRegion::read_dir(dir.path()).unwrap(), r);
    }

    #[test]
    fn multi_surface_adds_and_checks_grids() {
        let a = surface(vec![1.0, 2.0, 3.0, 4.0]);
        let b = surface(vec![0.5, -1.0, 0.0, 2.0]);
        assert_eq!(multi_surface(std::slice::from_ref(&a)).unwrap().values, a.values);
        let s = multi_surface(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.values, vec![1.5, 1.0, 3.0, 6.0]);
        let other = Surface::new(grid(3), vec![0.0; 9], SurfaceKind::GpExact).unwrap();
        assert!(multi_surface(&[a, other]).is_err());
        assert!(multi_surface(&[]).is_err());
    }

    fn toy_model() -> CnnModel<f32> {
        CnnModel::new(Architecture::standard(16, 2).unwrap(), InputTransform::Identity, 8).unwrap()
    }

    fn toy_field(seed: u64) -> SpatialField {
        let g = GridSpec::square(16, -10.0, 10.0).unwrap();
        crate::simulate::simulate_gp(&Parameter::gp(1.0, 1.0), &g, seed).unwrap()
    }

    #[test]
    fn vectorized_surface_matches_pointwise_passes() {
        let model = toy_model();
        let y = toy_field(3);
        let g = grid(10);
        let fast = neural_surface(&model, None, &y, &g).unwrap();
        let slow = neural_surface_unvectorized(&model, None, &y, &g).unwrap();
        assert_eq!(fast.kind, SurfaceKind::NeuralUncalibrated);
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        let ident = neural_surface(&model, Some(&PlattModel::identity()), &y, &g).unwrap();
        assert_eq!(ident.kind, SurfaceKind::NeuralCalibrated);
        for (a, b) in fast.values.iter().zip(&ident.values) {
            assert!((a - b).abs() < 1e-9);
        }
        let many = neural_surfaces(&model, None, &[y.clone(), toy_field(4)], &g).unwrap();
        assert_eq!(many[0], fast);
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let model = toy_model();
        let g = GridSpec::square(12, -10.0, 10.0).unwrap();
        let y = SpatialField::new(g, vec![0.0; 144]).unwrap();
        assert!(matches!(neural_surface(&model, None, &y, &grid(4)), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn shift_invariance_and_nesting(
            vals in proptest::collection::vec(-20.0f64..5.0, 36),
            shift in -1e3f64..1e3,
            a1 in 0.001f64..0.5,
            a2 in 0.001f64..0.5,
        ) {
            let s = surface(vals.clone());
            let shifted = surface(vals.iter().map(|v| v + shift).collect());
            prop_assert_eq!(s.argmax(), shifted.argmax());
            let r = confidence_region(&s, 0.05).unwrap();
            let rs = confidence_region(&shifted, 0.05).unwrap();
            // values are O(1e3) after shifting, so allow ties at rounding level
            let borderline = vals.iter().any(|v| {
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (2.0 * (max - v) - r.cutoff).abs() < 1e-9
            });
            if !borderline {
                prop_assert_eq!(&r.membership, &rs.membership);
            }
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let wide = confidence_region(&s, lo).unwrap();
            let narrow = confidence_region(&s, hi).unwrap();
            for (w, n) in wide.membership.iter().zip(&narrow.membership) {
                prop_assert!(*w || !*n);
            }
            prop_assert!(narrow.membership[narrow.argmax]);
        }

        #[test]
        fn platt_keeps_the_argmax(
            probs in proptest::collection::vec(0.01f64..0.99, 16),
            b0 in -3.0f64..3.0,
            b1 in 0.05f64..2.5,
        ) {
            let g = grid(4);
            let platt = PlattModel { beta0: b0, beta1: b1, ..PlattModel::identity() };
            let raw = surface_from_probs(&g, &probs, None).unwrap();
            let cal = surface_from_probs(&g, &probs, Some(&platt)).unwrap();
            prop_assert_eq!(raw.argmax(), cal.argmax());
        }

        #[test]
        fn multi_surface_is_order_free(
            a in proptest::collection::vec(-5.0f64..5.0, 9),
            b in proptest::collection::vec(-5.0f64..5.0, 9),
            c in proptest::collection::vec(-5.0f64..5.0, 9),
        ) {
            let (a, b, c) = (surface(a), surface(b), surface(c));
            let x = multi_surface(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let y = multi_surface(&[c, a, b]).unwrap();
            for (u, v) in x.values.iter().zip(&y.values) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
