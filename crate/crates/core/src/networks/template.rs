use crate::autodiff::{Expression, Scalar, Slot, SlotKind, Sym};
use crate::dynamics::State;

use super::jet::Channels;
use super::NetworkError;

/// Lagrangian restricted to a linear combination of closed-form features of
/// `(q, q̇)`; only the coefficients are learned.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLagrangian {
    name: String,
    n: usize,
    feature_names: Vec<String>,
    features: Vec<Expression>,
}

fn phase_slots(n: usize) -> Vec<SlotKind> {
    let mut kinds = vec![SlotKind::Coordinate; n];
    kinds.extend(vec![SlotKind::Velocity; n]);
    kinds
}

impl TemplateLagrangian {
    /// Builds a template from features traced over `(q₁..qₙ, q̇₁..q̇ₙ)`.
    pub fn new<F>(name: &str, n: usize, features: Vec<(&str, F)>) -> Self
    where
        F: for<'b> Fn(&[Sym<'b>]) -> Sym<'b>,
    {
        let kinds = phase_slots(n);
        let (names, exprs) = features
            .into_iter()
            .map(|(label, f)| (label.to_string(), Expression::trace(&kinds, |x| f(x))))
            .unzip();
        TemplateLagrangian {
            name: name.to_string(),
            n,
            feature_names: names,
            features: exprs,
        }
    }

    /// `cos θ₁, cos θ₂, θ̇₁², θ̇₂², θ̇₁θ̇₂ cos(θ₁−θ₂)`.
    pub fn double_pendulum() -> Self {
        type Feature = for<'b> fn(&[Sym<'b>]) -> Sym<'b>;
        let f: Vec<(&str, Feature)> = vec![
            ("cos_theta1", |x| x[0].cos()),
            ("cos_theta2", |x| x[1].cos()),
            ("theta1dot_sq", |x| x[2] * x[2]),
            ("theta2dot_sq", |x| x[3] * x[3]),
            ("coupling", |x| x[2] * x[3] * (x[0] - x[1]).cos()),
        ];
        TemplateLagrangian::new("double-pendulum", 2, f)
    }

    /// `ẋ², ẏ², 1/√(x²+y²)`.
    pub fn kepler() -> Self {
        type Feature = for<'b> fn(&[Sym<'b>]) -> Sym<'b>;
        let f: Vec<(&str, Feature)> = vec![
            ("xdot_sq", |x| x[2] * x[2]),
            ("ydot_sq", |x| x[3] * x[3]),
            ("inv_r", |x| Sym::Const(1.0) / (x[0] * x[0] + x[1] * x[1]).sqrt()),
        ];
        TemplateLagrangian::new("kepler", 2, f)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "double-pendulum" => Some(Self::double_pendulum()),
            "kepler" => Some(Self::kepler()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn leaves(&self, s: &State) -> Result<Vec<f64>, NetworkError> {
        if s.q.len() != self.n || s.qdot.len() != self.n {
            return Err(NetworkError::Dimension {
                what: "state",
                expected: self.n,
                got: s.q.len(),
            });
        }
        Ok(s.q.iter().chain(&s.qdot).copied().collect())
    }

    /// Channel values of every feature at `s`, feature-major
    /// (`features × channels`).
    pub fn feature_channels(&self, s: &State) -> Result<Vec<f64>, NetworkError> {
        let x = self.leaves(s)?;
        let ch = Channels { n: self.n };
        let all: Vec<Slot> = (0..2 * self.n).map(Slot).collect();
        let vel: Vec<Slot> = (self.n..2 * self.n).map(Slot).collect();
        let mut out = vec![0.0; self.len() * ch.count()];
        for (k, e) in self.features.iter().enumerate() {
            let row = &mut out[k * ch.count()..(k + 1) * ch.count()];
            row[0] = e.evaluate(&x)?;
            for (d, g) in e.grad(&x, &all)?.into_iter().enumerate() {
                row[ch.first(d)] = g;
            }
            let block = e.second_block(&x, &vel, &all)?;
            for (i, r) in block.iter().enumerate() {
                for (j, v) in r.iter().enumerate() {
                    row[ch.second(i, j)] = *v;
                }
            }
        }
        Ok(out)
    }

    /// `Σ c_k φ_k` with every feature evaluated in the scalar type `T`.
    pub fn eval<T: Scalar>(&self, coeffs: &[T], x: &[T]) -> Result<T, NetworkError> {
        let mut acc = T::constant(0.0);
        for (c, e) in coeffs.iter().zip(&self.features) {
            acc = acc + *c * e.eval_with(x)?;
        }
        Ok(acc)
    }
}
