use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution and pooling stages applied to the field before flattening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum TrunkLayer {
    /// Valid, stride-1 convolution with ReLU.
    Conv { filters: usize, kernel: usize },
    /// Non-overlapping max pooling, floor semantics.
    MaxPool { size: usize },
}

/// Layer stack of the classifier: a convolutional trunk over the field,
/// flattening, concatenation with the parameter vector, then dense layers
/// (ReLU between, two-way softmax at the end).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_side: usize,
    pub param_dim: usize,
    pub trunk: Vec<TrunkLayer>,
    /// Widths of the dense layers; the last must be 2.
    pub dense: Vec<usize>,
}

/// Shape `(channels, side)` of an activation in the trunk.
pub type TrunkShape = (usize, usize);

impl Architecture {
    /// conv(128) -> pool -> conv(128) -> pool -> conv(16) -> flatten ->
    /// concat(theta) -> dense 64 -> 16 -> 8 -> 2.
    ///
    /// A 25 x 25 input flattens to 2 * 2 * 16 = 64 features. For inputs too
    /// small to keep both pools, pools are dropped from the last one
    /// backwards until every convolution sees at least a 3 x 3 input.
    pub fn standard(input_side: usize, param_dim: usize) -> Result<Self> {
        let conv = |filters| TrunkLayer::Conv { filters, kernel: 3 };
        let pool = TrunkLayer::MaxPool { size: 2 };
        let full = [conv(128), pool, conv(128), pool, conv(16)];
        let pool_positions = [3usize, 1];
        for drop in 0..=pool_positions.len() {
            let trunk: Vec<TrunkLayer> = full
                .iter()
                .enumerate()
                .filter(|(i, _)| !pool_positions[..drop].contains(i))
                .map(|(_, l)| *l)
                .collect();
            let arch = Architecture {
                input_side,
                param_dim,
                trunk,
                dense: vec![64, 16, 8, 2],
            };
            if arch.validate().is_ok() {
                return Ok(arch);
            }
        }
        Err(Error::invalid(format!(
            "input side {input_side} is too small for three 3x3 convolutions"
        )))
    }

    /// Small stack used for gradient checks and toy problems.
    pub fn miniature(input_side: usize, param_dim: usize) -> Self {
        Architecture {
            input_side,
            param_dim,
            trunk: vec![
                TrunkLayer::Conv { filters: 4, kernel: 3 },
                TrunkLayer::MaxPool { size: 2 },
                TrunkLayer::Conv { filters: 4, kernel: 3 },
            ],
            dense: vec![16, 8, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk_shapes()?;
        if self.dense.last() != Some(&2) {
            return Err(Error::invalid("the last dense layer must have two units"));
        }
        if self.dense.contains(&0) {
            return Err(Error::invalid("dense layers need at least one unit"));
        }
        if self.param_dim == 0 {
            return Err(Error::invalid("parameter dimension must be positive"));
        }
        Ok(())
    }

    /// Activation shapes from the input through every trunk layer.
    pub fn trunk_shapes(&self) -> Result<Vec<TrunkShape>> {
        let mut shapes = vec![(1, self.input_side)];
        let (mut c, mut s) = (1, self.input_side);
        for layer in &self.trunk {
            match *layer {
                TrunkLayer::Conv { filters, kernel } => {
                    if kernel == 0 || filters == 0 || s < kernel {
                        return Err(Error::invalid(format!(
                            "convolution with kernel {kernel} does not fit a {s}x{s} input"
                        )));
                    }
                    c = filters;
                    s = s - kernel + 1;
                }
                TrunkLayer::MaxPool { size } => {
                    if size == 0 || s < size {
                        return Err(Error::invalid(format!(
                            "pooling of size {size} does not fit a {s}x{s} input"
                        )));
                    }
                    s /= size;
                }
            }
            shapes.push((c, s));
        }
        Ok(shapes)
    }

    /// Length of the flattened trunk output.
    pub fn flat_features(&self) -> usize {
        let (c, s) = *self
            .trunk_shapes()
            .expect("validated architecture")
            .last()
            .unwrap();
        c * s * s
    }

    /// `(weight shape, bias shape)` of every layer with parameters, trunk
    /// convolutions first.
    pub fn parameter_shapes(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let shapes = self.trunk_shapes().expect("validated architecture");
        let mut out = Vec::new();
        for (layer, &(cin, _)) in self.trunk.iter().zip(&shapes) {
            if let TrunkLayer::Conv { filters, kernel } = *layer {
                out.push((vec![filters, cin, kernel, kernel], vec![filters]));
            }
        }
        let mut width = self.flat_features() + self.param_dim;
        for &units in &self.dense {
            out.push((vec![units, width], vec![units]));
            width = units;
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }
}
