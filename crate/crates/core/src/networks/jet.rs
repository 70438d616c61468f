//! Batched second-order forward propagation through an MLP Lagrangian.
//!
//! Every sample carries `1 + 2n + 2n²` channels through the network: the
//! value, the first derivative along each of the `2n` phase-space inputs and
//! the second derivatives `∂²/∂q̇ᵢ∂xⱼ` for all velocity rows `i` and inputs
//! `j`. All channels share the weight matrices, so one GEMM per layer moves
//! the whole jet. The backward pass is written by hand against the same
//! channel algebra.

use ndarray::{Array2, ArrayView2, Axis};

use super::mlp::{check_len, layer_views, MlpSpec};
use super::NetworkError;

/// Channel indexing for a Lagrangian over `n` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub n: usize,
}

impl Channels {
    pub fn count(self) -> usize {
        1 + 2 * self.n + 2 * self.n * self.n
    }

    /// First derivative along input `d` (`q` first, then `q̇`).
    pub fn first(self, d: usize) -> usize {
        1 + d
    }

    /// `∂²/∂q̇ᵢ∂xⱼ`.
    pub fn second(self, i: usize, j: usize) -> usize {
        1 + 2 * self.n + i * 2 * self.n + j
    }

    pub fn dq(self, j: usize) -> usize {
        self.first(j)
    }

    pub fn dqdot(self, i: usize) -> usize {
        self.first(self.n + i)
    }

    /// `∂²/∂q̇ᵢ∂q̇ⱼ`.
    pub fn hess(self, i: usize, j: usize) -> usize {
        self.second(i, self.n + j)
    }

    /// `∂²/∂q̇ᵢ∂qⱼ`.
    pub fn mixed(self, i: usize, j: usize) -> usize {
        self.second(i, j)
    }
}

#[derive(Debug, Clone)]
pub struct JetTape {
    ch: Channels,
    batch: usize,
    /// Input of every affine layer, `fan_in × (channels·batch)`.
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations, all channels.
    pre: Vec<Array2<f64>>,
    /// `σ', σ'', σ'''` at each hidden value pre-activation, `width × batch`.
    derivs: Vec<[Array2<f64>; 3]>,
}

/// Propagates the jets of `x` (`2n × batch`) and returns the output channels
/// as a `channels × batch` matrix.
pub fn jet_forward(spec: &MlpSpec, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, JetTape), NetworkError> {
    check_len("parameters", spec.param_count(), params.len())?;
    check_len("input", spec.input_dim, x.nrows())?;
    check_len("output", 1, spec.output_dim)?;
    if !spec.input_dim.is_multiple_of(2) {
        return Err(NetworkError::InvalidSpec("Lagrangian input must be (q, q̇)".into()));
    }
    let ch = Channels { n: spec.input_dim / 2 };
    let nc = ch.count();
    let bsz = x.ncols();
    let mut h = Array2::<f64>::zeros((2 * ch.n, nc * bsz));
    h.slice_mut(ndarray::s![.., 0..bsz]).assign(&x);
    for d in 0..2 * ch.n {
        let c = ch.first(d);
        h.slice_mut(ndarray::s![d, c * bsz..(c + 1) * bsz]).fill(1.0);
    }
    let layers = layer_views(spec, params);
    let last = layers.len() - 1;
    let mut tape = JetTape {
        ch,
        batch: bsz,
        inputs: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(last),
        derivs: Vec::with_capacity(last),
    };
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = w.dot(&h);
        for (mut row, bias) in z.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.slice_mut(ndarray::s![0..bsz]).mapv_inplace(|v| v + bias);
        }
        tape.inputs.push(h);
        if l == last {
            let out = z.into_shape_with_order((nc, bsz)).expect("channel-major output");
            return Ok((out, tape));
        }
        let width = z.nrows();
        let mut a = Array2::<f64>::zeros(z.raw_dim());
        let mut d1 = Array2::<f64>::zeros((width, bsz));
        let mut d2 = d1.clone();
        let mut d3 = d1.clone();
        for r in 0..width {
            let act = spec.activation_at(width, r);
            let zr = z.row(r);
            let zr = zr.as_slice().expect("row-major");
            let mut ar = a.row_mut(r);
            let ar = ar.as_slice_mut().expect("row-major");
            for bi in 0..bsz {
                let [s0, s1, s2, s3] = act.jet(zr[bi]);
                d1[[r, bi]] = s1;
                d2[[r, bi]] = s2;
                d3[[r, bi]] = s3;
                ar[bi] = s0;
                for d in 0..2 * ch.n {
                    let c = ch.first(d) * bsz + bi;
                    ar[c] = s1 * zr[c];
                }
                for i in 0..ch.n {
                    let zi = zr[ch.dqdot(i) * bsz + bi];
                    for j in 0..2 * ch.n {
                        let zj = zr[ch.first(j) * bsz + bi];
                        let c = ch.second(i, j) * bsz + bi;
                        ar[c] = s2 * zi * zj + s1 * zr[c];
                    }
                }
            }
        }
        tape.pre.push(z);
        tape.derivs.push([d1, d2, d3]);
        h = a;
    }
    unreachable!("network has an output layer")
}

/// Parameter gradient of `Σ out_bar ∘ out` for the channels returned by
/// [`jet_forward`].
pub fn jet_backward(spec: &MlpSpec, params: &[f64], tape: &JetTape, out_bar: ArrayView2<f64>) -> Vec<f64> {
    let ch = tape.ch;
    let nc = ch.count();
    let bsz = tape.batch;
    let layers = layer_views(spec, params);
    let mut grad = vec![0.0; spec.param_count()];
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for (w, _) in &layers {
        offsets.push(off);
        off += w.len() + w.nrows();
    }
    let mut zbar = out_bar
        .to_owned()
        .into_shape_with_order((1, nc * bsz))
        .expect("channel-major adjoint");
    for l in (0..layers.len()).rev() {
        let (w, _) = &layers[l];
        let (o, i) = w.dim();
        let gw = zbar.dot(&tape.inputs[l].t());
        let o0 = offsets[l];
        grad[o0..o0 + o * i].copy_from_slice(gw.as_slice().expect("standard layout"));
        for r in 0..o {
            grad[o0 + o * i + r] = zbar.slice(ndarray::s![r, 0..bsz]).sum();
        }
        if l == 0 {
            break;
        }
        let abar = w.t().dot(&zbar);
        let z = &tape.pre[l - 1];
        let [d1, d2, d3] = &tape.derivs[l - 1];
        let mut next = Array2::<f64>::zeros(abar.raw_dim());
        for r in 0..abar.nrows() {
            let ar = abar.row(r);
            let ar = ar.as_slice().expect("row-major");
            let zr = z.row(r);
            let zr = zr.as_slice().expect("row-major");
            let mut nr = next.row_mut(r);
            let nr = nr.as_slice_mut().expect("row-major");
            for bi in 0..bsz {
                let (s1, s2, s3) = (d1[[r, bi]], d2[[r, bi]], d3[[r, bi]]);
                let mut acc0 = ar[bi] * s1;
                for d in 0..2 * ch.n {
                    let c = ch.first(d) * bsz + bi;
                    nr[c] += ar[c] * s1;
                    acc0 += ar[c] * s2 * zr[c];
                }
                for i in 0..ch.n {
                    let ci = ch.dqdot(i) * bsz + bi;
                    let zi = zr[ci];
                    for j in 0..2 * ch.n {
                        let cj = ch.first(j) * bsz + bi;
                        let zj = zr[cj];
                        let c = ch.second(i, j) * bsz + bi;
                        let g = ar[c];
                        if g == 0.0 {
                            continue;
                        }
                        nr[c] += g * s1;
                        acc0 += g * (s3 * zi * zj + s2 * zr[c]);
                        nr[ci] += g * s2 * zj;
                        nr[cj] += g * s2 * zi;
                    }
                }
                nr[bi] += acc0;
            }
        }
        zbar = next;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Dual, Scalar};
    use crate::networks::{Activation, Init};

    fn lnn_spec(n: usize, act: Activation, frac: Option<f64>) -> MlpSpec {
        MlpSpec {
            input_dim: 2 * n,
            hidden: vec![6, 5],
            activation: act,
            quadratic_fraction: frac,
            output_dim: 1,
            init: Init::UniformFanIn,
        }
    }

    /// Second derivative of the reference network along inputs `a`, `b`.
    fn reference(spec: &MlpSpec, p: &[f64], x: &[f64], a: usize, b: usize) -> (f64, f64, f64) {
        let pp: Vec<Dual<Dual<f64>>> = p.iter().map(|v| Dual::constant(*v)).collect();
        let xx: Vec<Dual<Dual<f64>>> = x
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let inner = Dual::new(*v, if k == b { 1.0 } else { 0.0 });
                Dual::new(inner, Dual::constant(if k == a { 1.0 } else { 0.0 }))
            })
            .collect();
        let y = spec.eval(&pp, &xx).unwrap()[0];
        (y.re.re, y.re.eps, y.eps.eps)
    }

    #[test]
    fn channels_match_nested_duals() {
        for n in [1, 2] {
            for (act, frac) in [
                (Activation::Softplus, Some(0.5)),
                (Activation::Softplus, None),
                (Activation::Quadratic, None),
            ] {
                let spec = lnn_spec(n, act, frac);
                let p = spec.init_params(4);
                let bsz = 3;
                let x = Array2::from_shape_fn((2 * n, bsz), |(d, b)| 0.4 * d as f64 - 0.3 * b as f64 + 0.1);
                let (out, _) = jet_forward(&spec, p.values(), x.view()).unwrap();
                let ch = Channels { n };
                for b in 0..bsz {
                    let xs: Vec<f64> = x.column(b).to_vec();
                    for i in 0..n {
                        for j in 0..2 * n {
                            let (v, dj, dij) = reference(&spec, p.values(), &xs, n + i, j);
                            assert!((out[[0, b]] - v).abs() < 1e-12);
                            assert!((out[[ch.first(j), b]] - dj).abs() < 1e-12);
                            assert!((out[[ch.second(i, j), b]] - dij).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let n = 2;
        let spec = lnn_spec(n, Activation::Softplus, Some(0.5));
        let p = spec.init_params(8).into_values();
        let bsz = 2;
        let ch = Channels { n };
        let x = Array2::from_shape_fn((2 * n, bsz), |(d, b)| 0.3 * d as f64 - 0.5 * b as f64 + 0.2);
        let wts = Array2::from_shape_fn((ch.count(), bsz), |(c, b)| ((c * 7 + b * 3) % 5) as f64 - 2.0);
        let objective = |p: &[f64]| (&jet_forward(&spec, p, x.view()).unwrap().0 * &wts).sum();
        let (_, tape) = jet_forward(&spec, &p, x.view()).unwrap();
        let g = jet_backward(&spec, &p, &tape, wts.view());
        for k in (0..p.len()).step_by(3) {
            let h = 1e-5;
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[k] += h;
            lo[k] -= h;
            let fd = (objective(&hi) - objective(&lo)) / (2.0 * h);
            assert!(
                (g[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "param {k}: {} vs {fd}",
                g[k]
            );
        }
    }
}
