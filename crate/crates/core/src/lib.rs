//! Neural likelihood surfaces for gridded spatial processes.
//!
//! A classifier trained to tell dependent `(field, parameter)` pairs from
//! independent ones yields, through `psi = h / (1 - h)`, a surrogate
//! likelihood that can be evaluated on a parameter lattice for any new
//! field. Exact Gaussian-process and pairwise Brown-Resnick likelihoods
//! serve as baselines.

pub mod br_pairwise;
pub mod calibrate;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gp_likelihood;
pub mod grid;
pub mod inference;
pub mod linalg;
pub mod neural;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod surface;
pub mod tensor;

pub use dataset::{ClassLabel, InputTransform, LabeledPair, PairDataset, Process};
pub use error::{Error, Result};
pub use grid::{
    make_parameter_grid, GridAxis, GridSpec, Parameter, ParameterGrid, ParameterSpace,
    SpatialField,
};
pub use scalar::Scalar;
pub use surface::{Surface, SurfaceKind, SurfaceMeta};

/// Double-precision field, the precision of simulation and exact likelihoods.
pub type Field = SpatialField<f64>;
/// Single-precision field, the precision of network inputs.
pub type Field32 = SpatialField<f32>;

/// Network in its stored precision.
pub type Model = neural::CnnModel<f32>;
/// Double-precision network, used for gradient checks.
pub type Model64 = neural::CnnModel<f64>;
