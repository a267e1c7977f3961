//! Labeled (field, parameter) pairs for the two-class construction, and
//! their on-disk directory form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Parameter, ParameterSpace};
use crate::tensor::{read_tensor, write_tensor};

/// Which spatial process generated the fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    Gp,
    BrownResnick,
}

impl Process {
    /// Transform applied to raw field values before they enter the network.
    pub fn input_transform(self) -> InputTransform {
        match self {
            Process::Gp => InputTransform::Identity,
            Process::BrownResnick => InputTransform::Log,
        }
    }

    pub fn parameter_names(self) -> [&'static str; 2] {
        match self {
            Process::Gp => ["nu", "ell"],
            Process::BrownResnick => ["lambda", "nu"],
        }
    }
}

impl std::str::FromStr for Process {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(Process::Gp),
            "br" | "brown-resnick" => Ok(Process::BrownResnick),
            other => Err(Error::Configuration(format!("unknown process {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputTransform {
    Identity,
    Log,
}

impl InputTransform {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            InputTransform::Identity => x,
            InputTransform::Log => x.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    /// The parameter generated the field.
    Dependent = 1,
    /// The parameter was permuted onto the field.
    Independent = 2,
}

impl ClassLabel {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn is_dependent(self) -> bool {
        self == ClassLabel::Dependent
    }
}

/// View of one pair inside a [`PairDataset`].
#[derive(Debug, Clone, Copy)]
pub struct LabeledPair<'a> {
    pub field: &'a [f32],
    pub theta: &'a Parameter,
    pub label: ClassLabel,
    /// Flat index `i * n + j` of the field.
    pub field_index: usize,
    /// Index of the parameter in `0..m`.
    pub theta_index: usize,
}

/// Fields `y_{i,j}` for `m` parameters and `n` replicates, class 1 pairs
/// `(y_{i,j}, theta_i)` and, once permutations are attached, class 2 pairs
/// `(y_{i,j}, theta_{pi_j(i)})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub process: Process,
    pub grid: GridSpec,
    pub space: ParameterSpace,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub permutation_seed: Option<u64>,
    pub n_spectral: Option<usize>,
    params: Vec<Parameter>,
    fields: Vec<f32>,
    permutations: Option<Vec<Vec<usize>>>,
}

impl PairDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn first_class(
        process: Process,
        grid: GridSpec,
        space: ParameterSpace,
        seed: u64,
        n_spectral: Option<usize>,
        n: usize,
        params: Vec<Parameter>,
        fields: Vec<f32>,
    ) -> Result<Self> {
        let m = params.len();
        if m == 0 || n == 0 {
            return Err(Error::invalid("dataset needs m >= 1 and n >= 1"));
        }
        if fields.len() != m * n * grid.len() {
            return Err(Error::invalid(format!(
                "expected {} field values for m={m}, n={n}, got {}",
                m * n * grid.len(),
                fields.len()
            )));
        }
        Ok(PairDataset {
            process,
            grid,
            space,
            m,
            n,
            seed,
            permutation_seed: None,
            n_spectral,
            params,
            fields,
            permutations: None,
        })
    }

    /// Attach one permutation of `0..m` per replicate column.
    pub fn with_permutations(mut self, perms: Vec<Vec<usize>>, seed: Option<u64>) -> Result<Self> {
        if perms.len() != self.n {
            return Err(Error::invalid(format!(
                "need {} permutations, got {}",
                self.n,
                perms.len()
            )));
        }
        for p in &perms {
            let mut seen = vec![false; self.m];
            if p.len() != self.m {
                return Err(Error::invalid("permutation has wrong length"));
            }
            for &k in p {
                if k >= self.m || std::mem::replace(&mut seen[k], true) {
                    return Err(Error::invalid(format!("{p:?} is not a permutation")));
                }
            }
        }
        self.permutations = Some(perms);
        self.permutation_seed = seed;
        Ok(self)
    }

    pub fn has_second_class(&self) -> bool {
        self.permutations.is_some()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn param(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn field(&self, i: usize, j: usize) -> &[f32] {
        self.field_flat(i * self.n + j)
    }

    pub fn field_flat(&self, index: usize) -> &[f32] {
        let s = self.grid.len();
        &self.fields[index * s..(index + 1) * s]
    }

    pub fn raw_fields(&self) -> &[f32] {
        &self.fields
    }

    pub fn permutations(&self) -> Option<&[Vec<usize>]> {
        self.permutations.as_deref()
    }

    pub fn len(&self) -> usize {
        let per_class = self.m * self.n;
        if self.has_second_class() {
            2 * per_class
        } else {
            per_class
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pair `k` in the canonical order: all class 1 pairs by `(i, j)`, then
    /// all class 2 pairs by `(i, j)`.
    pub fn pair(&self, k: usize) -> LabeledPair<'_> {
        let per_class = self.m * self.n;
        let (label, idx) = if k < per_class {
            (ClassLabel::Dependent, k)
        } else {
            (ClassLabel::Independent, k - per_class)
        };
        let (i, j) = (idx / self.n, idx % self.n);
        let theta_index = match label {
            ClassLabel::Dependent => i,
            ClassLabel::Independent => {
                self.permutations.as_ref().expect("second class not built")[j][i]
            }
        };
        LabeledPair {
            field: self.field_flat(idx),
            theta: &self.params[theta_index],
            label,
            field_index: idx,
            theta_index,
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = LabeledPair<'_>> {
        (0..self.len()).map(move |k| self.pair(k))
    }

    pub fn class_counts(&self) -> (usize, usize) {
        self.pairs().fold((0, 0), |(a, b), p| match p.label {
            ClassLabel::Dependent => (a + 1, b),
            ClassLabel::Independent => (a, b + 1),
        })
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let (m, n, s, k) = (self.m, self.n, self.grid.side, self.space.dim());
        write_tensor(dir.join("fields.nlt"), &[m * n, s, s], &self.fields)?;
        let params: Vec<f32> = self
            .params
            .iter()
            .flat_map(|p| p.values.iter().map(|&v| v as f32))
            .collect();
        write_tensor(dir.join("params.nlt"), &[m, k], &params)?;
        let labels: Vec<f32> = self.pairs().map(|p| p.label.tag() as f32).collect();
        write_tensor(dir.join("labels.nlt"), &[labels.len()], &labels)?;
        if let Some(perms) = &self.permutations {
            let mut permuted = Vec::with_capacity(m * n * k);
            for i in 0..m {
                for perm in perms {
                    permuted.extend(self.params[perm[i]].values.iter().map(|&v| v as f32));
                }
            }
            write_tensor(dir.join("permuted_params.nlt"), &[m * n, k], &permuted)?;
            let flat: Vec<f32> = perms.iter().flatten().map(|&p| p as f32).collect();
            write_tensor(dir.join("permutations.nlt"), &[n, m], &flat)?;
        }
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            process: self.process,
            grid: self.grid,
            space: self.space.clone(),
            m,
            n,
            seed: self.seed,
            permutation_seed: self.permutation_seed,
            n_spectral: self.n_spectral,
            classes: if self.has_second_class() { vec![1, 2] } else { vec![1] },
            layout: "fields[i * n + j] pairs with params[i]; class 2 uses params[permutations[j][i]]"
                .into(),
            input_transform: self.process.input_transform(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: DatasetManifest = read_manifest(dir)?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::format(format!("unknown dataset format {}", manifest.format)));
        }
        let (m, n, s, k) = (manifest.m, manifest.n, manifest.grid.side, manifest.space.dim());
        let fields = read_tensor(dir.join("fields.nlt"))?;
        if fields.shape != [m * n, s, s] {
            return Err(Error::format(format!("fields.nlt has shape {:?}", fields.shape)));
        }
        let params = read_tensor(dir.join("params.nlt"))?;
        if params.shape != [m, k] {
            return Err(Error::format(format!("params.nlt has shape {:?}", params.shape)));
        }
        let params = params
            .data
            .chunks(k)
            .map(|c| manifest.space.parameter(c.iter().map(|&v| v as f64).collect()))
            .collect();
        let ds = PairDataset::first_class(
            manifest.process,
            manifest.grid,
            manifest.space.clone(),
            manifest.seed,
            manifest.n_spectral,
            n,
            params,
            fields.data,
        )?;
        if manifest.classes.contains(&2) {
            let perms = read_tensor(dir.join("permutations.nlt"))?;
            if perms.shape != [n, m] {
                return Err(Error::format(format!(
                    "permutations.nlt has shape {:?}",
                    perms.shape
                )));
            }
            let perms = perms
                .data
                .chunks(m)
                .map(|c| c.iter().map(|&v| v as usize).collect())
                .collect();
            return ds
                .with_permutations(perms, manifest.permutation_seed)
                .map_err(|e| Error::format(e.to_string()));
        }
        Ok(ds)
    }
}

pub const DATASET_FORMAT: &str = "nlsurf-dataset/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub process: Process,
    pub grid: GridSpec,
    pub space: ParameterSpace,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub permutation_seed: Option<u64>,
    pub n_spectral: Option<usize>,
    pub classes: Vec<u8>,
    pub layout: String,
    pub input_transform: InputTransform,
}

pub(crate) fn read_manifest<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path)
        .map_err(|e| Error::format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("bad manifest {}: {e}", path.display())))
}
