use rand::Rng;

use super::arch::{Architecture, TrunkLayer};
use super::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, flatten, pool_backward,
    pool_forward, unflatten,
};
use crate::dataset::InputTransform;
use crate::error::{Error, Result};
use crate::grid::{Parameter, SpatialField};
use crate::rng::{stream, tag};
use crate::scalar::{cast, to_f64, Scalar};

/// Rows processed together when a caller hands over a very large batch.
pub const INFERENCE_CHUNK: usize = 256;

/// Convolutional classifier `h(y, theta)`, the probability that `theta`
/// generated `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Scalar = f32> {
    pub arch: Architecture,
    pub input_transform: InputTransform,
    /// One weight tensor per parameterized layer, trunk convolutions first.
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &CnnModel<T>) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Inputs for a batch: transformed fields `[b, side * side]`, parameters
/// `[b, param_dim]` and, for training, labels (`true` = dependent pair).
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a, T> {
    pub fields: &'a [T],
    pub thetas: &'a [T],
    pub labels: &'a [bool],
    pub len: usize,
}

struct TrunkCache<T> {
    /// Input of every trunk layer plus the final output.
    acts: Vec<Vec<T>>,
    cols: Vec<Option<Vec<T>>>,
    argmax: Vec<Option<Vec<u32>>>,
}

struct HeadCache<T> {
    /// Input of every dense layer plus the logits.
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> CnnModel<T> {
    /// He-uniform weights (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`) and
    /// zero biases, drawn in `f64` so both precisions agree for one seed.
    pub fn new(arch: Architecture, input_transform: InputTransform, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream(seed, &[tag::INIT]);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (wshape, bshape) in arch.parameter_shapes() {
            let fan_in: usize = wshape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let n: usize = wshape.iter().product();
            weights.push((0..n).map(|_| cast(rng.random_range(-limit..limit))).collect());
            biases.push(vec![T::zero(); bshape[0]]);
        }
        Ok(CnnModel {
            arch,
            input_transform,
            weights,
            biases,
        })
    }

    /// Build from explicit tensors, checking every shape.
    pub fn from_parts(
        arch: Architecture,
        input_transform: InputTransform,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
    ) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.parameter_shapes();
        if weights.len() != shapes.len() || biases.len() != shapes.len() {
            return Err(Error::format(format!(
                "architecture has {} parameterized layers, got {} weight and {} bias tensors",
                shapes.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (l, ((ws, bs), (w, b))) in shapes.iter().zip(weights.iter().zip(&biases)).enumerate() {
            if w.len() != ws.iter().product::<usize>() || b.len() != bs[0] {
                return Err(Error::format(format!("tensor sizes of layer {l} do not match")));
            }
            if w.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(Error::format(format!("layer {l} holds non-finite values")));
            }
        }
        Ok(CnnModel {
            arch,
            input_transform,
            weights,
            biases,
        })
    }

    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        let conv = |t: &Vec<T>| t.iter().map(|&v| cast::<U>(to_f64(v))).collect();
        CnnModel {
            arch: self.arch.clone(),
            input_transform: self.input_transform,
            weights: self.weights.iter().map(conv).collect(),
            biases: self.biases.iter().map(conv).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn side(&self) -> usize {
        self.arch.input_side
    }

    /// Apply the input transform to raw field values.
    pub fn prepare_field<U: Scalar>(&self, raw: &[U]) -> Result<Vec<T>> {
        let s = self.side();
        if raw.len() != s * s {
            return Err(Error::invalid(format!(
                "field has {} values, model expects a {s}x{s} grid",
                raw.len()
            )));
        }
        raw.iter()
            .enumerate()
            .map(|(i, &v)| {
                let x = self.input_transform.apply(to_f64(v));
                if x.is_finite() {
                    Ok(cast(x))
                } else {
                    Err(Error::invalid(format!(
                        "input transform of value {} at location {i} is not finite",
                        to_f64(v)
                    )))
                }
            })
            .collect()
    }

    fn check_theta(&self, theta: &Parameter) -> Result<()> {
        if theta.dim() != self.arch.param_dim {
            return Err(Error::invalid(format!(
                "parameter has {} components, model expects {}",
                theta.dim(),
                self.arch.param_dim
            )));
        }
        Ok(())
    }

    fn trunk_forward(&self, fields: &[T], b: usize, keep: bool) -> (Vec<T>, Option<TrunkCache<T>>) {
        let shapes = self.arch.trunk_shapes().expect("validated architecture");
        // [b, s, s] is already [1, b, s, s]
        let mut x = fields.to_vec();
        let mut cache = TrunkCache {
            acts: Vec::new(),
            cols: Vec::new(),
            argmax: Vec::new(),
        };
        let mut conv_index = 0;
        for (layer, &(cin, s)) in self.arch.trunk.iter().zip(&shapes) {
            match *layer {
                TrunkLayer::Conv { filters, kernel } => {
                    let (out, cols) = conv_forward(
                        &x,
                        cin,
                        b,
                        s,
                        &self.weights[conv_index],
                        &self.biases[conv_index],
                        filters,
                        kernel,
                    );
                    conv_index += 1;
                    if keep {
                        cache.acts.push(std::mem::replace(&mut x, out));
                        cache.cols.push(Some(cols));
                        cache.argmax.push(None);
                    } else {
                        x = out;
                    }
                }
                TrunkLayer::MaxPool { size } => {
                    let (out, arg) = pool_forward(&x, cin * b, s, size);
                    if keep {
                        cache.acts.push(std::mem::replace(&mut x, out));
                        cache.cols.push(None);
                        cache.argmax.push(Some(arg));
                    } else {
                        x = out;
                    }
                }
            }
        }
        let &(c, s) = shapes.last().unwrap();
        let feats = flatten(&x, c, b, s * s);
        if keep {
            cache.acts.push(x);
            (feats, Some(cache))
        } else {
            (feats, None)
        }
    }

    fn conv_layers(&self) -> usize {
        self.arch
            .trunk
            .iter()
            .filter(|l| matches!(l, TrunkLayer::Conv { .. }))
            .count()
    }

    /// Dense stack on `[b, width]` rows; returns logits `[b, 2]`.
    fn head_forward(&self, x: Vec<T>, b: usize, keep: bool) -> (Vec<T>, Option<HeadCache<T>>) {
        let first = self.conv_layers();
        let mut width = self.arch.flat_features() + self.arch.param_dim;
        let mut acts = Vec::new();
        let mut x = x;
        let n = self.arch.dense.len();
        for (l, &units) in self.arch.dense.iter().enumerate() {
            let y = dense_forward(
                &x,
                b,
                &self.weights[first + l],
                &self.biases[first + l],
                width,
                units,
                l + 1 < n,
            );
            if keep {
                acts.push(std::mem::replace(&mut x, y));
            } else {
                x = y;
            }
            width = units;
        }
        if keep {
            acts.push(x.clone());
            (x, Some(HeadCache { acts }))
        } else {
            (x, None)
        }
    }

    fn concat(&self, feats: &[T], thetas: &[T], b: usize) -> Vec<T> {
        let f = self.arch.flat_features();
        let k = self.arch.param_dim;
        let mut x = Vec::with_capacity(b * (f + k));
        for i in 0..b {
            x.extend_from_slice(&feats[i * f..(i + 1) * f]);
            x.extend_from_slice(&thetas[i * k..(i + 1) * k]);
        }
        x
    }

    /// Flattened trunk output `[b, flat_features]` for prepared fields.
    pub fn trunk_features(&self, fields: &[T], b: usize) -> Vec<T> {
        let per = self.side() * self.side();
        let f = self.arch.flat_features();
        let mut out = Vec::with_capacity(b * f);
        for start in (0..b).step_by(INFERENCE_CHUNK) {
            let len = INFERENCE_CHUNK.min(b - start);
            let (feats, _) =
                self.trunk_forward(&fields[start * per..(start + len) * per], len, false);
            out.extend(feats);
        }
        out
    }

    /// Logit differences `z_0 - z_1` (= `logit(h)`) for one shared feature
    /// vector against many parameters, in one pass over the head.
    pub fn head_logit_shared(&self, feats: &[T], thetas: &[T], count: usize) -> Vec<f64> {
        let f = self.arch.flat_features();
        let k = self.arch.param_dim;
        let mut x = Vec::with_capacity(count * (f + k));
        for i in 0..count {
            x.extend_from_slice(feats);
            x.extend_from_slice(&thetas[i * k..(i + 1) * k]);
        }
        let (logits, _) = self.head_forward(x, count, false);
        logits
            .chunks(2)
            .map(|z| to_f64(z[0]) - to_f64(z[1]))
            .collect()
    }

    /// `logit(h)` for prepared fields and parameters, row by row.
    pub fn logit_batch(&self, fields: &[T], thetas: &[T], b: usize) -> Vec<f64> {
        let per = self.side() * self.side();
        let k = self.arch.param_dim;
        let mut out = Vec::with_capacity(b);
        for start in (0..b).step_by(INFERENCE_CHUNK) {
            let len = INFERENCE_CHUNK.min(b - start);
            let (feats, _) =
                self.trunk_forward(&fields[start * per..(start + len) * per], len, false);
            let x = self.concat(&feats, &thetas[start * k..(start + len) * k], len);
            let (logits, _) = self.head_forward(x, len, false);
            out.extend(logits.chunks(2).map(|z| to_f64(z[0]) - to_f64(z[1])));
        }
        out
    }

    /// `(h, 1 - h)` for one field and parameter.
    pub fn forward(&self, field: &SpatialField, theta: &Parameter) -> Result<[f64; 2]> {
        Ok(self.forward_batch(&[field], std::slice::from_ref(theta))?[0])
    }

    /// `(h, 1 - h)` for each `(field, theta)` row.
    pub fn forward_batch(&self, fields: &[&SpatialField], thetas: &[Parameter]) -> Result<Vec<[f64; 2]>> {
        if fields.len() != thetas.len() {
            return Err(Error::invalid("batch needs one parameter per field"));
        }
        let mut x = Vec::with_capacity(fields.len() * self.side() * self.side());
        let mut t = Vec::with_capacity(thetas.len() * self.arch.param_dim);
        for (f, theta) in fields.iter().zip(thetas) {
            if f.grid().side != self.side() {
                return Err(Error::invalid(format!(
                    "field side {} does not match model input side {}",
                    f.grid().side,
                    self.side()
                )));
            }
            self.check_theta(theta)?;
            x.extend(self.prepare_field(f.values())?);
            t.extend(theta.values.iter().map(|&v| cast::<T>(v)));
        }
        Ok(self
            .logit_batch(&x, &t, fields.len())
            .into_iter()
            .map(probability_pair)
            .collect())
    }

    /// Mean cross-entropy of a labeled batch.
    pub fn loss(&self, batch: BatchRef<'_, T>) -> f64 {
        let z = self.logit_batch(batch.fields, batch.thetas, batch.len);
        z.iter()
            .zip(batch.labels)
            .map(|(&d, &l)| cross_entropy(d, l))
            .sum::<f64>()
            / batch.len.max(1) as f64
    }

    /// Sum of per-row cross-entropies, with `scale * d(sum)/d(params)`
    /// added into `grads`.
    pub fn accumulate_gradients(&self, batch: BatchRef<'_, T>, scale: f64, grads: &mut Gradients<T>) -> f64 {
        let b = batch.len;
        let (feats, trunk) = self.trunk_forward(batch.fields, b, true);
        let x = self.concat(&feats, batch.thetas, b);
        let (logits, head) = self.head_forward(x, b, true);
        let trunk = trunk.unwrap();
        let head = head.unwrap();

        let mut total = 0.0;
        let mut dy = vec![T::zero(); b * 2];
        for (i, (z, &label)) in logits.chunks(2).zip(batch.labels).enumerate() {
            let d = to_f64(z[0]) - to_f64(z[1]);
            total += cross_entropy(d, label);
            let h = sigmoid(d);
            let target = if label { 1.0 } else { 0.0 };
            // softmax cross-entropy: dL/dz0 = h - y, dL/dz1 = y - h
            dy[2 * i] = cast((h - target) * scale);
            dy[2 * i + 1] = cast((target - h) * scale);
        }

        let first = self.conv_layers();
        let f = self.arch.flat_features();
        let k = self.arch.param_dim;
        let mut widths = vec![f + k];
        widths.extend(self.arch.dense.iter().copied());
        for l in (0..self.arch.dense.len()).rev() {
            let input = &head.acts[l];
            let dx = dense_backward(
                &dy,
                input,
                &self.weights[first + l],
                b,
                widths[l],
                widths[l + 1],
                &mut grads.weights[first + l],
                &mut grads.biases[first + l],
            );
            dy = dx;
            if l > 0 {
                for (g, &a) in dy.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
        }

        let shapes = self.arch.trunk_shapes().expect("validated architecture");
        let &(c_out, s_out) = shapes.last().unwrap();
        let mut g = unflatten(&dy, f + k, c_out, b, s_out * s_out);
        let mut conv_index = first;
        for (li, layer) in self.arch.trunk.iter().enumerate().rev() {
            let (cin, s) = shapes[li];
            match *layer {
                TrunkLayer::Conv { filters, kernel } => {
                    conv_index -= 1;
                    let dx = conv_backward(
                        &mut g,
                        &trunk.acts[li + 1],
                        trunk.cols[li].as_ref().unwrap(),
                        &self.weights[conv_index],
                        cin,
                        b,
                        s,
                        filters,
                        kernel,
                        &mut grads.weights[conv_index],
                        &mut grads.biases[conv_index],
                        li > 0,
                    );
                    match dx {
                        Some(dx) => g = dx,
                        None => break,
                    }
                }
                TrunkLayer::MaxPool { .. } => {
                    g = pool_backward(&g, trunk.argmax[li].as_ref().unwrap(), trunk.acts[li].len());
                }
            }
        }
        total
    }

    /// Mean loss and its gradient for one batch.
    pub fn loss_and_gradients(&self, batch: BatchRef<'_, T>) -> (f64, Gradients<T>) {
        let mut grads = Gradients::zeros_like(self);
        let scale = 1.0 / batch.len.max(1) as f64;
        let total = self.accumulate_gradients(batch, scale, &mut grads);
        (total * scale, grads)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    crate::calibrate::sigmoid(x)
}

/// `(h, 1 - h)` from the logit difference.
pub fn probability_pair(d: f64) -> [f64; 2] {
    let h = sigmoid(d);
    [h, sigmoid(-d)]
}

/// `-ln h` for dependent pairs and `-ln(1 - h)` otherwise, with
/// `h = sigmoid(d)`, in a form that cannot overflow.
pub(crate) fn cross_entropy(d: f64, dependent: bool) -> f64 {
    let x = if dependent { -d } else { d };
    // softplus(x) = ln(1 + e^x)
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
