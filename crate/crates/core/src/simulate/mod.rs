//! Training and evaluation data: parameter sampling, field simulators and
//! the two-class construction.

mod brown_resnick;
mod gp;
mod lhs;

pub use brown_resnick::{simulate_brown_resnick, BrSimulator, DEFAULT_SPECTRAL_TERMS};
pub use gp::{exp_covariance, simulate_gp, GpSimulator};
pub(crate) use gp::{check_gp_theta, correlation_matrix};
pub use lhs::lhs_sample;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PairDataset, Process};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, ParameterSpace};
use crate::rng::{stream, tag, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub process: Process,
    pub grid: GridSpec,
    pub m: usize,
    pub n: usize,
    pub space: ParameterSpace,
    pub seed: u64,
    #[serde(default = "default_spectral")]
    pub n_spectral: usize,
}

fn default_spectral() -> usize {
    DEFAULT_SPECTRAL_TERMS
}

impl SimConfig {
    /// Training defaults: `(0, 2.5)^2` for the Gaussian process and
    /// `(0, 2)^2` for Brown-Resnick.
    pub fn training(process: Process, grid: GridSpec, m: usize, n: usize, seed: u64) -> Self {
        let space = match process {
            Process::Gp => ParameterSpace::gp(2.5),
            Process::BrownResnick => ParameterSpace::br(2.0),
        };
        SimConfig {
            process,
            grid,
            m,
            n,
            space,
            seed,
            n_spectral: DEFAULT_SPECTRAL_TERMS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.space.validate()?;
        if self.m == 0 || self.n == 0 {
            return Err(Error::invalid("simulation needs m >= 1 and n >= 1"));
        }
        if self.space.bounds.iter().any(|&(lo, _)| lo < 0.0) {
            return Err(Error::invalid("parameter bounds must be non-negative"));
        }
        if self.space.dim() != 2 {
            return Err(Error::invalid("both processes take two parameters"));
        }
        Ok(())
    }
}

/// Sampler for one parameter value of either process.
#[derive(Debug, Clone)]
pub enum Simulator {
    Gp(GpSimulator),
    BrownResnick(BrSimulator),
}

impl Simulator {
    pub fn new(process: Process, theta: &Parameter, grid: &GridSpec, n_spectral: usize) -> Result<Self> {
        Ok(match process {
            Process::Gp => Simulator::Gp(GpSimulator::new(theta, grid)?),
            Process::BrownResnick => {
                Simulator::BrownResnick(BrSimulator::new(theta, grid, n_spectral)?)
            }
        })
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        match self {
            Simulator::Gp(s) => s.sample(rng),
            Simulator::BrownResnick(s) => s.sample(rng),
        }
    }

    pub fn sample_many(&self, rngs: &mut [SimRng]) -> Vec<Vec<f64>> {
        match self {
            Simulator::Gp(s) => s.sample_many(rngs),
            Simulator::BrownResnick(s) => rngs.iter_mut().map(|r| s.sample(r)).collect(),
        }
    }
}

/// Generator for replicate `j` of parameter `i` under `root`.
pub fn field_stream(root: u64, i: usize, j: usize) -> SimRng {
    stream(root, &[tag::FIELD, i as u64, j as u64])
}

/// Simulate `n` fields for every parameter, replicate `j` of parameter `i`
/// drawn from `field_stream(seed, i, j)`.
pub fn simulate_replicates(
    process: Process,
    params: &[Parameter],
    grid: &GridSpec,
    n: usize,
    seed: u64,
    n_spectral: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    params
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let sim = Simulator::new(process, theta, grid, n_spectral).map_err(|e| {
                Error::Numeric(format!("parameter {i} {:?}: {e}", theta.values))
            })?;
            let mut rngs: Vec<SimRng> = (0..n).map(|j| field_stream(seed, i, j)).collect();
            let fields = sim.sample_many(&mut rngs);
            if let Some(j) = fields.iter().position(|f| f.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!(
                    "non-finite field for parameter {i}, replicate {j}"
                )));
            }
            Ok(fields)
        })
        .collect()
}

/// First class: `m` Latin-hypercube parameters, each paired with the `n`
/// fields it generated.
pub fn build_first_class(config: &SimConfig) -> Result<PairDataset> {
    config.validate()?;
    let params = lhs_sample(config.m, &config.space, config.seed)?;
    let fields = simulate_replicates(
        config.process,
        &params,
        &config.grid,
        config.n,
        config.seed,
        config.n_spectral,
    )?;
    let flat: Vec<f32> = fields.iter().flatten().flatten().map(|&v| v as f32).collect();
    let n_spectral = (config.process == Process::BrownResnick).then_some(config.n_spectral);
    PairDataset::first_class(
        config.process,
        config.grid,
        config.space.clone(),
        config.seed,
        n_spectral,
        config.n,
        params,
        flat,
    )
}

/// Second class: for every replicate column `j`, an independent uniform
/// permutation `pi_j` of the parameters is paired with the column's fields.
/// Identity assignments are kept.
pub fn build_second_class(first: PairDataset, seed: u64) -> Result<PairDataset> {
    if first.has_second_class() {
        return Err(Error::invalid("dataset already holds both classes"));
    }
    let perms = (0..first.n)
        .map(|j| {
            let mut rng = stream(seed, &[tag::PERMUTATION, j as u64]);
            let mut p: Vec<usize> = (0..first.m).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    first.with_permutations(perms, Some(seed))
}

/// Both classes in one call, permutations seeded from the config seed.
pub fn build_dataset(config: &SimConfig) -> Result<PairDataset> {
    let first = build_first_class(config)?;
    build_second_class(first, config.seed)
}
