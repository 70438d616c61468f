use ndarray::{Array2, ArrayView2};

use super::jet::{jet_backward, jet_forward, Channels, JetTape};
use super::mlp::{check_len, MlpSpec};
use super::template::TemplateLagrangian;
use super::{NetworkError, ParamVector, Segment};
use crate::autodiff::linalg::Lu;
use crate::autodiff::{AutodiffError, Dual, Scalar};
use crate::dynamics::State;

/// Initial value of every template coefficient.
pub const TEMPLATE_INIT: f64 = 0.1;

/// Parametrized Lagrangian `ℒ_NN(q, q̇) + ½·a·q̇ᵀq̇`.
#[derive(Debug, Clone, PartialEq)]
pub enum LagrangianModel {
    Mlp { spec: MlpSpec, split_a: f64 },
    Template { template: TemplateLagrangian, split_a: f64 },
}

/// Output channels for a batch plus what the backward pass needs.
#[derive(Debug, Clone)]
pub enum ChannelTape {
    Mlp(JetTape),
    /// Feature channels, `features × (channels·batch)` per sample column.
    Template(Vec<Vec<f64>>),
}

/// Forces `f_c = H⁻¹(∇_qℒ − M q̇)` for a batch of states.
#[derive(Debug, Clone)]
pub struct LnnForces {
    /// `n × batch`; zero in columns whose mass matrix was singular.
    pub f: Array2<f64>,
    /// Condition estimate of each singular sample, `None` where solved.
    pub singular: Vec<Option<f64>>,
    channels: Array2<f64>,
    lus: Vec<Option<Lu>>,
    qdot: Array2<f64>,
    tape: ChannelTape,
}

impl LnnForces {
    pub fn singular_count(&self) -> usize {
        self.singular.iter().filter(|s| s.is_some()).count()
    }

    /// First singular column with its condition estimate.
    pub fn first_singular(&self) -> Option<(usize, f64)> {
        self.singular.iter().enumerate().find_map(|(b, s)| s.map(|c| (b, c)))
    }

    /// Output channels (`channels × batch`) of the learned part of ℒ.
    pub fn channels(&self) -> &Array2<f64> {
        &self.channels
    }
}

fn phase_matrix(states: &[&State], n: usize) -> Result<Array2<f64>, NetworkError> {
    let mut x = Array2::zeros((2 * n, states.len()));
    for (b, s) in states.iter().enumerate() {
        check_len("state", n, s.q.len())?;
        check_len("state", n, s.qdot.len())?;
        for i in 0..n {
            x[[i, b]] = s.q[i];
            x[[n + i, b]] = s.qdot[i];
        }
    }
    Ok(x)
}

impl LagrangianModel {
    pub fn n(&self) -> usize {
        match self {
            LagrangianModel::Mlp { spec, .. } => spec.input_dim / 2,
            LagrangianModel::Template { template, .. } => template.n(),
        }
    }

    pub fn split_a(&self) -> f64 {
        match self {
            LagrangianModel::Mlp { split_a, .. } | LagrangianModel::Template { split_a, .. } => *split_a,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LagrangianModel::Mlp { spec, .. } => spec.param_count(),
            LagrangianModel::Template { template, .. } => template.len(),
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(self.split_a() >= 0.0) {
            return Err(NetworkError::InvalidSpec("split constant must be non-negative".into()));
        }
        if let LagrangianModel::Mlp { spec, .. } = self {
            spec.validate()?;
            if spec.input_dim % 2 != 0 || spec.output_dim != 1 {
                return Err(NetworkError::InvalidSpec(
                    "Lagrangian network maps (q, q̇) to a scalar".into(),
                ));
            }
        }
        Ok(())
    }

    /// Seeded initial parameters; template coefficients all start at
    /// [`TEMPLATE_INIT`].
    pub fn init_params(&self, seed: u64) -> ParamVector {
        match self {
            LagrangianModel::Mlp { spec, .. } => spec.init_params(seed),
            LagrangianModel::Template { template, .. } => {
                let layout = template
                    .feature_names()
                    .iter()
                    .map(|name| Segment {
                        name: name.clone(),
                        len: 1,
                    })
                    .collect();
                ParamVector::new(vec![TEMPLATE_INIT; template.len()], layout).expect("one slot per feature")
            }
        }
    }

    /// Channels of the learned part of ℒ (without the split term).
    pub fn channels(&self, params: &[f64], states: &[&State]) -> Result<(Array2<f64>, ChannelTape), NetworkError> {
        check_len("parameters", self.param_count(), params.len())?;
        let n = self.n();
        let ch = Channels { n };
        match self {
            LagrangianModel::Mlp { spec, .. } => {
                let x = phase_matrix(states, n)?;
                let (out, tape) = jet_forward(spec, params, x.view())?;
                Ok((out, ChannelTape::Mlp(tape)))
            }
            LagrangianModel::Template { template, .. } => {
                let mut out = Array2::zeros((ch.count(), states.len()));
                let mut feats = Vec::with_capacity(states.len());
                for (b, s) in states.iter().enumerate() {
                    let phi = template.feature_channels(s)?;
                    for c in 0..ch.count() {
                        out[[c, b]] = (0..template.len()).map(|k| params[k] * phi[k * ch.count() + c]).sum();
                    }
                    feats.push(phi);
                }
                Ok((out, ChannelTape::Template(feats)))
            }
        }
    }

    /// Parameter gradient of `Σ out_bar ∘ channels`.
    pub fn channels_backward(&self, params: &[f64], tape: &ChannelTape, out_bar: ArrayView2<f64>) -> Vec<f64> {
        match (self, tape) {
            (LagrangianModel::Mlp { spec, .. }, ChannelTape::Mlp(t)) => jet_backward(spec, params, t, out_bar),
            (LagrangianModel::Template { template, .. }, ChannelTape::Template(feats)) => {
                let nc = out_bar.nrows();
                let mut g = vec![0.0; template.len()];
                for (b, phi) in feats.iter().enumerate() {
                    for (k, gk) in g.iter_mut().enumerate() {
                        *gk += (0..nc).map(|c| out_bar[[c, b]] * phi[k * nc + c]).sum::<f64>();
                    }
                }
                g
            }
            _ => panic!("channel tape does not belong to this model"),
        }
    }

    /// Batched force law. Singular mass matrices are flagged per sample
    /// rather than failing the batch; callers choose the policy.
    pub fn forces(&self, params: &[f64], states: &[&State]) -> Result<LnnForces, NetworkError> {
        let n = self.n();
        let ch = Channels { n };
        let a = self.split_a();
        let (out, tape) = self.channels(params, states)?;
        let bsz = states.len();
        let mut f = Array2::zeros((n, bsz));
        let mut qdot = Array2::zeros((n, bsz));
        let mut lus = Vec::with_capacity(bsz);
        let mut singular = Vec::with_capacity(bsz);
        for (b, s) in states.iter().enumerate() {
            let mut h = vec![0.0; n * n];
            let mut r = vec![0.0; n];
            for i in 0..n {
                qdot[[i, b]] = s.qdot[i];
                r[i] = out[[ch.dq(i), b]];
                for j in 0..n {
                    h[i * n + j] = out[[ch.hess(i, j), b]] + if i == j { a } else { 0.0 };
                    r[i] -= out[[ch.mixed(i, j), b]] * s.qdot[j];
                }
            }
            match Lu::factor(&h, n) {
                Ok(lu) => {
                    let x = lu.solve(&r);
                    for i in 0..n {
                        f[[i, b]] = x[i];
                    }
                    lus.push(Some(lu));
                    singular.push(None);
                }
                Err(AutodiffError::SingularMatrix { condition }) => {
                    lus.push(None);
                    singular.push(Some(condition));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(LnnForces {
            f,
            singular,
            channels: out,
            lus,
            qdot,
            tape,
        })
    }

    /// Parameter gradient of `Σ f_bar ∘ f` through the solve; singular
    /// columns contribute nothing.
    pub fn forces_backward(&self, params: &[f64], fwd: &LnnForces, f_bar: ArrayView2<f64>) -> Vec<f64> {
        let n = self.n();
        let ch = Channels { n };
        let bsz = fwd.f.ncols();
        let mut out_bar = Array2::zeros((ch.count(), bsz));
        for b in 0..bsz {
            let Some(lu) = &fwd.lus[b] else { continue };
            let fb: Vec<f64> = (0..n).map(|i| f_bar[[i, b]]).collect();
            if fb.iter().all(|v| *v == 0.0) {
                continue;
            }
            // f = H⁻¹r: r̄ = H⁻ᵀ f̄, H̄ = −r̄ fᵀ, and r = ∇_qℒ − M q̇
            let rbar = lu.solve_transpose(&fb);
            for i in 0..n {
                out_bar[[ch.dq(i), b]] += rbar[i];
                for j in 0..n {
                    out_bar[[ch.mixed(i, j), b]] -= rbar[i] * fwd.qdot[[j, b]];
                    out_bar[[ch.hess(i, j), b]] -= rbar[i] * fwd.f[[j, b]];
                }
            }
        }
        self.channels_backward(params, &fwd.tape, out_bar.view())
    }

    /// Full Lagrangian including the split term.
    pub fn lagrangian_value(&self, params: &[f64], state: &State) -> Result<f64, NetworkError> {
        let (out, _) = self.channels(params, &[state])?;
        let kin: f64 = state.qdot.iter().map(|v| v * v).sum();
        Ok(out[[0, 0]] + 0.5 * self.split_a() * kin)
    }

    /// `f_c` at a single state; a singular mass matrix is an error carrying the state.
    pub fn lnn_force(&self, params: &[f64], state: &State) -> Result<Vec<f64>, NetworkError> {
        let fwd = self.forces(params, &[state])?;
        if let Some(condition) = fwd.singular[0] {
            return Err(NetworkError::SingularMass {
                state: state.clone(),
                condition,
            });
        }
        Ok(fwd.f.column(0).to_vec())
    }

    /// Energy `∇_q̇ℒ·q̇ − ℒ`.
    pub fn energy(&self, params: &[f64], state: &State) -> Result<f64, NetworkError> {
        let ch = Channels { n: self.n() };
        let (out, _) = self.channels(params, &[state])?;
        let mut e = -out[[0, 0]];
        for (i, v) in state.qdot.iter().enumerate() {
            e += out[[ch.dqdot(i), 0]] * v;
        }
        let kin: f64 = state.qdot.iter().map(|v| v * v).sum();
        Ok(e + 0.5 * self.split_a() * kin)
    }

    /// Energies for many states in one batched pass.
    pub fn energies(&self, params: &[f64], states: &[&State]) -> Result<Vec<f64>, NetworkError> {
        let ch = Channels { n: self.n() };
        let (out, _) = self.channels(params, states)?;
        Ok(states
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let mut e = -out[[0, b]];
                for (i, v) in s.qdot.iter().enumerate() {
                    e += out[[ch.dqdot(i), b]] * v;
                }
                e + 0.5 * self.split_a() * s.qdot.iter().map(|v| v * v).sum::<f64>()
            })
            .collect())
    }

    /// ℒ evaluated in any scalar type.
    pub fn lagrangian_generic<T: Scalar>(&self, params: &[T], x: &[T]) -> Result<T, NetworkError> {
        let n = self.n();
        let learned = match self {
            LagrangianModel::Mlp { spec, .. } => spec.eval(params, x)?[0],
            LagrangianModel::Template { template, .. } => template.eval(params, x)?,
        };
        let mut kin = T::constant(0.0);
        for v in &x[n..] {
            kin = kin + *v * *v;
        }
        Ok(learned + T::constant(0.5 * self.split_a()) * kin)
    }

    /// Scalar-generic force law built from nested duals and
    /// [`Scalar::solve`]. With `T = Var` the result is differentiable in the
    /// parameters through [`grad_through`](crate::autodiff::grad_through).
    pub fn lnn_force_generic<T: Scalar>(&self, params: &[T], state: &State) -> Result<Vec<T>, NetworkError> {
        let n = self.n();
        check_len("state", n, state.q.len())?;
        let lifted: Vec<Dual<Dual<T>>> = params.iter().map(|p| Dual::lift(Dual::lift(*p))).collect();
        let base: Vec<f64> = state.q.iter().chain(&state.qdot).copied().collect();
        let mut h = vec![T::constant(0.0); n * n];
        let mut r = vec![T::constant(0.0); n];
        for i in 0..n {
            for j in 0..2 * n {
                let x: Vec<Dual<Dual<T>>> = base
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let inner = Dual::new(T::constant(*v), T::constant(if k == j { 1.0 } else { 0.0 }));
                        let outer = if k == n + i { 1.0 } else { 0.0 };
                        Dual::new(inner, Dual::constant(outer))
                    })
                    .collect();
                let l = self.lagrangian_generic(&lifted, &x)?;
                let d2 = l.eps.eps;
                if j < n {
                    if i == 0 {
                        r[j] = r[j] + l.re.eps;
                    }
                    r[i] = r[i] - d2 * T::constant(state.qdot[j]);
                } else {
                    h[i * n + (j - n)] = d2;
                }
            }
        }
        T::solve(&h, &r, n).map_err(|e| match e {
            AutodiffError::SingularMatrix { condition } => NetworkError::SingularMass {
                state: state.clone(),
                condition,
            },
            other => other.into(),
        })
    }
}
