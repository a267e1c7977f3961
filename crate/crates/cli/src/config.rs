use std::path::Path;

use serde::{Deserialize, Serialize};

use nlsurf::eval::{EvalConfig, Method};
use nlsurf::neural::TrainConfig;
use nlsurf::rng::derive_seed;
use nlsurf::simulate::{SimConfig, DEFAULT_SPECTRAL_TERMS};
use nlsurf::{Error, GridSpec, ParameterSpace, Process, Result};

/// Stage tags under the root seed.
const SIM: u64 = 1;
const CALIBRATE: u64 = 2;
const TRAIN: u64 = 3;
const EVAL: u64 = 4;
const GODAMBE: u64 = 5;

/// Full pipeline configuration. Unknown keys are rejected at every level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. When set, every stage seed is derived from it and the
    /// per-section seeds are ignored.
    pub seed: Option<u64>,
    pub sim: SimSection,
    pub calibrate: CalibrateSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub process: Process,
    pub grid: GridSpec,
    pub m: usize,
    pub n: usize,
    /// Defaults to the training space of the process.
    pub space: Option<ParameterSpace>,
    pub seed: u64,
    pub n_spectral: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            process: Process::Gp,
            grid: GridSpec::square(25, -10.0, 10.0).expect("valid default grid"),
            m: 300,
            n: 50,
            space: None,
            seed: 0,
            n_spectral: DEFAULT_SPECTRAL_TERMS,
        }
    }
}

/// Held-out data for Platt scaling. Shares the process and grid of `sim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub m: usize,
    pub n: usize,
    /// Defaults to the evaluation space.
    pub space: Option<ParameterSpace>,
    pub seed: u64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection { m: 100, n: 20, space: None, seed: 1 }
    }
}

fn default_space(process: Process, hi: f64) -> ParameterSpace {
    match process {
        Process::Gp => ParameterSpace::gp(hi),
        Process::BrownResnick => ParameterSpace::br(hi),
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<Vec<u8>>)> {
        let Some(path) = path else {
            return Ok((RunConfig::default(), None));
        };
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Configuration(format!("cannot read config {}: {e}", path.display())))?;
        let config = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Configuration(format!("config {}: {e}", path.display())))?;
        Ok((config, Some(bytes)))
    }

    /// Switch the process of every stage, resetting parameter spaces and
    /// dropping evaluation methods that belong to the other process.
    pub fn set_process(&mut self, process: Process) {
        let names: Vec<String> = process.parameter_names().iter().map(|s| s.to_string()).collect();
        self.sim.process = process;
        self.eval.process = process;
        for space in [&mut self.sim.space, &mut self.calibrate.space] {
            if space.as_ref().is_some_and(|s| s.names != names) {
                *space = None;
            }
        }
        if self.eval.space.names != names {
            self.eval.space = default_space(process, 2.0);
        }
        self.eval.methods.retain(|m| match m {
            Method::GpExact => process == Process::Gp,
            Method::Pairwise { .. } | Method::PairwiseAdjusted { .. } => process == Process::BrownResnick,
            _ => true,
        });
        if self.eval.methods.is_empty() {
            self.eval.methods.push(Method::NeuralCalibrated);
        }
    }

    /// Fill derived seeds and check every section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(root) = self.seed {
            self.sim.seed = derive_seed(root, &[SIM]);
            self.calibrate.seed = derive_seed(root, &[CALIBRATE]);
            self.train.seed = derive_seed(root, &[TRAIN]);
            self.eval.seed = derive_seed(root, &[EVAL]);
            self.eval.godambe.seed = derive_seed(root, &[GODAMBE]);
        }
        if self.eval.process != self.sim.process {
            return Err(Error::Configuration(format!(
                "sim.process is {:?} but eval.process is {:?}",
                self.sim.process, self.eval.process
            )));
        }
        self.training_sim().validate()?;
        self.calibration_sim().validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(self)
    }

    pub fn training_sim(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            process: s.process,
            grid: s.grid,
            m: s.m,
            n: s.n,
            space: s.space.clone().unwrap_or_else(|| {
                SimConfig::training(s.process, s.grid, s.m, s.n, s.seed).space
            }),
            seed: s.seed,
            n_spectral: s.n_spectral,
        }
    }

    pub fn calibration_sim(&self) -> SimConfig {
        let c = &self.calibrate;
        SimConfig {
            m: c.m,
            n: c.n,
            space: c.space.clone().unwrap_or_else(|| self.eval.space.clone()),
            seed: c.seed,
            ..self.training_sim()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [r#"{"sim": {"mm": 3}}"#, r#"{"bogus": 1}"#, r#"{"train": {"lr": 0.1}}"#] {
            assert!(serde_json::from_str::<RunConfig>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"sim": {"m": 7}, "eval": {"replicates": 3}}"#).unwrap();
        assert_eq!(c.sim.m, 7);
        assert_eq!(c.sim.n, SimSection::default().n);
        assert_eq!(c.eval.replicates, 3);
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn root_seed_drives_every_stage() {
        let a = RunConfig { seed: Some(3), ..RunConfig::default() }.resolve().unwrap();
        let b = RunConfig { seed: Some(4), ..RunConfig::default() }.resolve().unwrap();
        let seeds = |c: &RunConfig| [c.sim.seed, c.calibrate.seed, c.train.seed, c.eval.seed, c.eval.godambe.seed];
        let sa = seeds(&a);
        assert!(sa.iter().zip(seeds(&b)).all(|(x, y)| *x != y));
        let mut sorted = sa.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn switching_process_resets_foreign_spaces() {
        let mut c = RunConfig::default();
        c.set_process(Process::BrownResnick);
        let c = c.resolve().unwrap();
        assert_eq!(c.eval.space, ParameterSpace::br(2.0));
        assert_eq!(c.training_sim().space, ParameterSpace::br(2.0));
        assert_eq!(c.eval.methods, vec![Method::NeuralCalibrated]);
    }
}
