use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SymbolicError;
use crate::dynamics::State;

/// How a free parameter maps from the unit interval onto its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Linear,
    /// Geometric interpolation; both bounds must be positive.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl FreeParam {
    fn new(name: &str, lower: f64, upper: f64, scale: Scale) -> Self {
        FreeParam {
            name: name.to_string(),
            lower,
            upper,
            scale,
        }
    }

    /// Value at unit coordinate `u ∈ [0, 1]`.
    pub fn from_unit(&self, u: f64) -> f64 {
        match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => self.lower * (self.upper / self.lower).powf(u),
        }
    }

    pub fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v / self.lower).ln() / (self.upper / self.lower).ln(),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Closed-form candidate families for the non-conservative force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    /// `f = −D q̇` with a full 2×2 matrix `D`.
    LinearFriction,
    /// Pull of a point mass on a circular orbit of radius `r_n` and angular
    /// velocity `ω_n`, starting on the positive x axis.
    NeptunePull,
    /// `f = −A (ẋ² + ẏ²)^s (ẋ, ẏ)`.
    PowerLawDrag,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 3] = [
        TemplateKind::LinearFriction,
        TemplateKind::NeptunePull,
        TemplateKind::PowerLawDrag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::LinearFriction => "linear-friction",
            TemplateKind::NeptunePull => "neptune-pull",
            TemplateKind::PowerLawDrag => "power-law-drag",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateKind {
    type Err = SymbolicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SymbolicError::UnknownTemplate(s.to_string()))
    }
}

/// A template family with its bounded free parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub kind: TemplateKind,
    pub params: Vec<FreeParam>,
    /// Gravitational constant used by the point-mass pull.
    pub gravity: f64,
}

impl Template {
    /// Default bounds: friction entries in `[−1, 1]`; the orbit radius in
    /// `[0.5, 10]`, its angular velocity in `[0.01, 1]` and mass in
    /// `[1e-4, 0.1]`; the drag amplitude in `[1e-6, 1]` and exponent in
    /// `[0.1, 8]`.
    pub fn new(kind: TemplateKind) -> Self {
        use Scale::*;
        let params = match kind {
            TemplateKind::LinearFriction => ["d11", "d12", "d21", "d22"]
                .iter()
                .map(|n| FreeParam::new(n, -1.0, 1.0, Linear))
                .collect(),
            TemplateKind::NeptunePull => vec![
                FreeParam::new("M_n", 1e-4, 0.1, Log),
                FreeParam::new("r_n", 0.5, 10.0, Linear),
                FreeParam::new("omega_n", 0.01, 1.0, Linear),
            ],
            TemplateKind::PowerLawDrag => vec![
                FreeParam::new("A", 1e-6, 1.0, Log),
                FreeParam::new("s", 0.1, 8.0, Linear),
            ],
        };
        Template {
            kind,
            params,
            gravity: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn dof(&self) -> usize {
        2
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    /// Force predicted by the template at `s`.
    pub fn eval(&self, values: &[f64], s: &State) -> Result<Vec<f64>, SymbolicError> {
        if values.len() != self.params.len() {
            return Err(SymbolicError::Dimension {
                what: "template parameters",
                expected: self.params.len(),
                got: values.len(),
            });
        }
        if s.dim() != self.dof() {
            return Err(SymbolicError::Dimension {
                what: "state",
                expected: self.dof(),
                got: s.dim(),
            });
        }
        let v = &s.qdot;
        Ok(match self.kind {
            TemplateKind::LinearFriction => vec![
                -(values[0] * v[0] + values[1] * v[1]),
                -(values[2] * v[0] + values[3] * v[1]),
            ],
            TemplateKind::NeptunePull => {
                let (m, r, w) = (values[0], values[1], values[2]);
                let dx = r * (w * s.t).cos() - s.q[0];
                let dy = r * (w * s.t).sin() - s.q[1];
                let d = dx.hypot(dy);
                let k = self.gravity * m / (d * d * d);
                vec![k * dx, k * dy]
            }
            TemplateKind::PowerLawDrag => {
                let (a, e) = (values[0], values[1]);
                let k = -a * (v[0] * v[0] + v[1] * v[1]).powf(e);
                vec![k * v[0], k * v[1]]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rk4_integrate, true_force, SimConfig, SystemKind, SystemSpec};

    #[test]
    fn neptune_template_reproduces_registry_pull_on_trajectory() {
        let spec = SystemSpec::new(SystemKind::Neptune);
        let cfg = SimConfig {
            initial_state: State::new(vec![2.0, 0.0], vec![0.0, 0.5f64.sqrt()], 0.0),
            step_size: 0.1,
            n_steps: 99,
            seed: 0,
        };
        let traj = rk4_integrate(&spec, &cfg).unwrap();
        assert_eq!(traj.len(), 100);
        let t = Template::new(TemplateKind::NeptunePull);
        let vals = [spec.param("M_n"), spec.param("r_n"), spec.param("omega_n")];
        for s in &traj {
            let (_, _, fnn) = true_force(&spec, &s.state).unwrap();
            let got = t.eval(&vals, &s.state).unwrap();
            for i in 0..2 {
                assert!((got[i] - fnn[i]).abs() <= 1e-9 * fnn[i].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn drag_matches_radiation_term() {
        let spec = SystemSpec::new(SystemKind::GravRadiation);
        let t = Template::new(TemplateKind::PowerLawDrag);
        let s = State::new(vec![0.0, 2.0], vec![-1.0, 0.1], 0.0);
        let (_, _, fnn) = true_force(&spec, &s).unwrap();
        let got = t.eval(&[spec.radiation_coefficient(), 4.0], &s).unwrap();
        for i in 0..2 {
            assert!((got[i] - fnn[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn unit_mapping_round_trips() {
        for kind in TemplateKind::ALL {
            for p in Template::new(kind).params {
                for u in [0.0, 0.3, 1.0] {
                    assert!((p.to_unit(p.from_unit(u)) - u).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn names_parse() {
        for kind in TemplateKind::ALL {
            assert_eq!(kind.name().parse::<TemplateKind>().unwrap(), kind);
        }
        assert!("quadratic-drag".parse::<TemplateKind>().is_err());
    }
}
