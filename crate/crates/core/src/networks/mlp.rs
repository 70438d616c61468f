use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkError, ParamVector, Segment};
use crate::autodiff::Scalar;

/// Negative-side slope of the leaky-relu activation.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Softplus,
    Quadratic,
}

impl Activation {
    /// `(σ, σ', σ'', σ''')` at `z`. Leaky-relu puts its kink on the negative side.
    #[inline]
    pub fn jet(self, z: f64) -> [f64; 4] {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    [z, 1.0, 0.0, 0.0]
                } else {
                    [LEAKY_SLOPE * z, LEAKY_SLOPE, 0.0, 0.0]
                }
            }
            Activation::Softplus => {
                let s = crate::autodiff::primitive::sigmoid(z);
                let d2 = s * (1.0 - s);
                [crate::autodiff::primitive::softplus(z), s, d2, d2 * (1.0 - 2.0 * s)]
            }
            Activation::Quadratic => [z * z, 2.0 * z, 2.0, 0.0],
        }
    }

    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::LeakyRelu => z.leaky_relu(LEAKY_SLOPE),
            Activation::Softplus => z.softplus(),
            Activation::Quadratic => z * z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Every layer `U(−1/√fan_in, 1/√fan_in)`.
    UniformFanIn,
    /// Hidden layers as above, output layer zero.
    #[default]
    ZeroLastLayer,
}

/// Fully connected feedforward architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Fraction of each hidden layer (its trailing neurons) using the
    /// quadratic activation instead of `activation`.
    #[serde(default)]
    pub quadratic_fraction: Option<f64>,
    pub output_dim: usize,
    #[serde(default)]
    pub init: Init,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(NetworkError::InvalidSpec("layer widths must be at least 1".into()));
        }
        if let Some(f) = self.quadratic_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(NetworkError::InvalidSpec(format!(
                    "quadratic fraction must lie in [0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every affine layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for (l, (o, i)) in self.layer_shapes().into_iter().enumerate() {
            out.push(Segment {
                name: format!("w{l}"),
                len: o * i,
            });
            out.push(Segment {
                name: format!("b{l}"),
                len: o,
            });
        }
        out
    }

    /// Number of quadratic neurons in a hidden layer of `width`.
    pub fn quadratic_count(&self, width: usize) -> usize {
        match self.quadratic_fraction {
            Some(f) => (f * width as f64).round() as usize,
            None if self.activation == Activation::Quadratic => width,
            None => 0,
        }
    }

    /// Activation of neuron `j` in a hidden layer of `width`.
    pub fn activation_at(&self, width: usize, j: usize) -> Activation {
        if j >= width - self.quadratic_count(width) {
            Activation::Quadratic
        } else {
            self.activation
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut values = Vec::with_capacity(self.param_count());
        for (l, (o, i)) in shapes.into_iter().enumerate() {
            let zero = l == last && self.init == Init::ZeroLastLayer;
            let bound = 1.0 / (i as f64).sqrt();
            for _ in 0..o * i + o {
                values.push(if zero { 0.0 } else { rng.random_range(-bound..bound) });
            }
        }
        ParamVector::new(values, self.layout()).expect("layout matches parameter count")
    }

    /// Scalar-generic forward pass, the reference for the batched kernels.
    pub fn eval<T: Scalar>(&self, params: &[T], x: &[T]) -> Result<Vec<T>, NetworkError> {
        check_len("parameters", self.param_count(), params.len())?;
        check_len("input", self.input_dim, x.len())?;
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut h = x.to_vec();
        let mut off = 0;
        for (l, (o, i)) in shapes.into_iter().enumerate() {
            let w = &params[off..off + o * i];
            let b = &params[off + o * i..off + o * i + o];
            off += o * i + o;
            let mut z = Vec::with_capacity(o);
            for r in 0..o {
                let mut acc = b[r];
                for c in 0..i {
                    acc = acc + w[r * i + c] * h[c];
                }
                z.push(if l == last {
                    acc
                } else {
                    self.activation_at(o, r).apply(acc)
                });
            }
            h = z;
        }
        Ok(h)
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NetworkError> {
    if expected != got {
        return Err(NetworkError::Dimension { what, expected, got });
    }
    Ok(())
}

/// Weight and bias views of each affine layer inside a flat parameter slice.
pub(crate) fn layer_views<'p>(spec: &MlpSpec, params: &'p [f64]) -> Vec<(ArrayView2<'p, f64>, &'p [f64])> {
    let mut off = 0;
    spec.layer_shapes()
        .into_iter()
        .map(|(o, i)| {
            let w = ArrayView2::from_shape((o, i), &params[off..off + o * i]).expect("layer shape");
            let b = &params[off + o * i..off + o * i + o];
            off += o * i + o;
            (w, b)
        })
        .collect()
}

/// Activations cached by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input of every affine layer (`fan_in × batch`).
    inputs: Vec<Array2<f64>>,
    /// Activation slope at every hidden pre-activation.
    slopes: Vec<Array2<f64>>,
}

/// Batched forward pass: `x` is `input_dim × batch`, output `output_dim × batch`.
pub fn mlp_forward(spec: &MlpSpec, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape), NetworkError> {
    check_len("parameters", spec.param_count(), params.len())?;
    check_len("input", spec.input_dim, x.nrows())?;
    let layers = layer_views(spec, params);
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut slopes = Vec::with_capacity(last);
    let mut h = x.to_owned();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = w.dot(&h);
        for (mut row, bias) in z.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row += *bias;
        }
        inputs.push(h);
        if l == last {
            return Ok((z, MlpTape { inputs, slopes }));
        }
        let width = z.nrows();
        let mut slope = Array2::zeros(z.raw_dim());
        for (j, (mut zr, mut sr)) in z.axis_iter_mut(Axis(0)).zip(slope.axis_iter_mut(Axis(0))).enumerate() {
            let act = spec.activation_at(width, j);
            for (zv, sv) in zr.iter_mut().zip(sr.iter_mut()) {
                let [v, d, _, _] = act.jet(*zv);
                *zv = v;
                *sv = d;
            }
        }
        slopes.push(slope);
        h = z;
    }
    unreachable!("network has an output layer")
}

/// Parameter gradient given the output adjoint `out_bar` (`output_dim × batch`).
pub fn mlp_backward(spec: &MlpSpec, params: &[f64], tape: &MlpTape, out_bar: ArrayView2<f64>) -> Vec<f64> {
    let layers = layer_views(spec, params);
    let mut grad = vec![0.0; spec.param_count()];
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for (w, _) in &layers {
        offsets.push(off);
        off += w.len() + w.nrows();
    }
    let mut zbar = out_bar.to_owned();
    for l in (0..layers.len()).rev() {
        let (w, _) = &layers[l];
        let (o, i) = w.dim();
        let gw = zbar.dot(&tape.inputs[l].t());
        let o0 = offsets[l];
        grad[o0..o0 + o * i].copy_from_slice(gw.as_slice().expect("standard layout"));
        for (r, row) in zbar.axis_iter(Axis(0)).enumerate() {
            grad[o0 + o * i + r] = row.sum();
        }
        if l > 0 {
            let mut hbar = w.t().dot(&zbar);
            hbar *= &tape.slopes[l - 1];
            zbar = hbar;
        }
    }
    grad
}
