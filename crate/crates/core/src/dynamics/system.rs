use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DynamicsError, State};

/// Separation below which the gravitational systems report a singularity.
pub const SINGULAR_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemKind {
    /// Harmonic oscillator in a magnetic field.
    HoMf,
    /// Harmonic oscillator under constant gravity.
    HoCg,
    /// Harmonic oscillator with linear damping.
    HoLd,
    /// Harmonic oscillator with constant (Coulomb) damping.
    HoCd,
    /// Harmonic oscillator with a periodic drive.
    HoPf,
    DampedDoublePendulum,
    /// Uranus around a fixed Sun, perturbed by a circular Neptune.
    Neptune,
    /// Relative motion of an inspiralling binary.
    GravRadiation,
}

impl SystemKind {
    pub const ALL: [SystemKind; 8] = [
        SystemKind::HoMf,
        SystemKind::HoCg,
        SystemKind::HoLd,
        SystemKind::HoCd,
        SystemKind::HoPf,
        SystemKind::DampedDoublePendulum,
        SystemKind::Neptune,
        SystemKind::GravRadiation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::HoMf => "HO+MF",
            SystemKind::HoCg => "HO+CG",
            SystemKind::HoLd => "HO+LD",
            SystemKind::HoCd => "HO+CD",
            SystemKind::HoPf => "HO+PF",
            SystemKind::DampedDoublePendulum => "damped-double-pendulum",
            SystemKind::Neptune => "neptune",
            SystemKind::GravRadiation => "grav-radiation",
        }
    }

    /// Degrees of freedom.
    pub fn dof(self) -> usize {
        match self {
            SystemKind::HoCg | SystemKind::HoLd | SystemKind::HoCd | SystemKind::HoPf => 1,
            _ => 2,
        }
    }

    pub fn time_dependent(self) -> bool {
        matches!(self, SystemKind::HoPf | SystemKind::Neptune)
    }

    /// Parameter names with their default values.
    pub fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            SystemKind::HoMf => &[("k", 1.0), ("B", 1.0)],
            SystemKind::HoCg => &[("k", 1.0), ("g", 1.0)],
            SystemKind::HoLd | SystemKind::HoCd => &[("k", 1.0), ("gamma", 0.5)],
            SystemKind::HoPf => &[("k", 1.0), ("a", 0.5)],
            SystemKind::DampedDoublePendulum => &[
                ("m1", 1.0),
                ("m2", 1.0),
                ("g", 1.0),
                ("l1", 1.0),
                ("l2", 1.0),
                ("gamma", 0.02),
            ],
            SystemKind::Neptune => &[
                ("G", 1.0),
                ("M_sun", 1.0),
                ("M_n", 0.005),
                ("r_n", 3.0),
                // 3^(-3/2): circular orbit at r_n
                ("omega_n", 0.19245008972987526),
            ],
            SystemKind::GravRadiation => &[("G", 1.0), ("M1", 1.0), ("M2", 1.0), ("c", 3.0)],
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DynamicsError::UnknownSystem(s.to_string()))
    }
}

impl Serialize for SystemKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SystemKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A registered system together with its physical constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    params: BTreeMap<String, f64>,
}

impl SystemSpec {
    pub fn new(kind: SystemKind) -> Self {
        let params = kind.default_params().iter().map(|(k, v)| (k.to_string(), *v)).collect();
        SystemSpec { kind, params }
    }

    /// Defaults with the given overrides; unknown names are rejected.
    pub fn with_overrides<'a, I>(kind: SystemKind, overrides: I) -> Result<Self, DynamicsError>
    where
        I: IntoIterator<Item = (&'a String, &'a f64)>,
    {
        let mut spec = SystemSpec::new(kind);
        for (name, value) in overrides {
            spec.set(name, *value)?;
        }
        Ok(spec)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), DynamicsError> {
        if !value.is_finite() {
            return Err(DynamicsError::InvalidParam {
                name: name.to_string(),
                value,
            });
        }
        match self.params.get_mut(name) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(DynamicsError::UnknownParam {
                system: self.kind.name().to_string(),
                name: name.to_string(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn n(&self) -> usize {
        self.kind.dof()
    }

    pub fn time_dependent(&self) -> bool {
        self.kind.time_dependent()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Value of a registered parameter. Panics on names outside the registry,
    /// which is a programming error rather than a data error.
    pub fn param(&self, name: &str) -> f64 {
        match self.params.get(name) {
            Some(v) => *v,
            None => panic!("system {} has no parameter {name}", self.kind),
        }
    }

    /// Coefficient of the radiation-reaction drag `−C·|v|⁸·v`.
    pub fn radiation_coefficient(&self) -> f64 {
        let (g, m1, m2, c) = (self.param("G"), self.param("M1"), self.param("M2"), self.param("c"));
        32.0 * m1 * m2 * (m1 * m1 + m2 * m2) / (5.0 * g * c.powi(5) * (m1 + m2).powi(5))
    }

    /// Position of Neptune at time `t`.
    pub fn neptune_position(&self, t: f64) -> [f64; 2] {
        let (r, w) = (self.param("r_n"), self.param("omega_n"));
        [r * (w * t).cos(), r * (w * t).sin()]
    }

    /// Energy of the conservative part.
    ///
    /// Potential energies are offset to vanish at the rest configuration
    /// (pendulum hanging down, oscillators at the origin).
    pub fn conservative_energy(&self, s: &State) -> f64 {
        let kin = 0.5 * s.qdot.iter().map(|v| v * v).sum::<f64>();
        let q2 = s.q.iter().map(|v| v * v).sum::<f64>();
        match self.kind {
            SystemKind::HoMf | SystemKind::HoLd | SystemKind::HoCd | SystemKind::HoPf => {
                kin + 0.5 * self.param("k") * q2
            }
            SystemKind::HoCg => kin + 0.5 * self.param("k") * q2 + self.param("g") * s.q[0],
            SystemKind::DampedDoublePendulum => self.pendulum_energy(s),
            SystemKind::Neptune => kin - self.param("G") * self.param("M_sun") / q2.sqrt(),
            SystemKind::GravRadiation => kin - self.param("G") * (self.param("M1") + self.param("M2")) / q2.sqrt(),
        }
    }

    fn pendulum_energy(&self, s: &State) -> f64 {
        let (m1, m2, g, l1, l2) = (
            self.param("m1"),
            self.param("m2"),
            self.param("g"),
            self.param("l1"),
            self.param("l2"),
        );
        let (t1, t2) = (s.q[0], s.q[1]);
        let (w1, w2) = (s.qdot[0], s.qdot[1]);
        let kin = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1
            + 0.5 * m2 * l2 * l2 * w2 * w2
            + m2 * l1 * l2 * w1 * w2 * (t1 - t2).cos();
        let pot = (m1 + m2) * g * l1 * (1.0 - t1.cos()) + m2 * g * l2 * (1.0 - t2.cos());
        kin + pot
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(f, f_c, f_n)` at one state.
pub type ForceSplit = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Oracle acceleration `f = f_c + f_n` with its analytic split.
pub fn true_force(spec: &SystemSpec, state: &State) -> Result<ForceSplit, DynamicsError> {
    let n = spec.n();
    if state.q.len() != n || state.qdot.len() != n {
        return Err(DynamicsError::Dimension {
            expected: n,
            got: state.q.len().max(state.qdot.len()),
        });
    }
    let q = &state.q;
    let v = &state.qdot;
    let t = state.t;
    let p = |name| spec.param(name);
    let (fc, fn_): (Vec<f64>, Vec<f64>) = match spec.kind {
        SystemKind::HoMf => {
            let (k, b) = (p("k"), p("B"));
            (vec![-k * q[0] + b * v[1], -k * q[1] - b * v[0]], vec![0.0, 0.0])
        }
        SystemKind::HoCg => (vec![-p("k") * q[0] - p("g")], vec![0.0]),
        SystemKind::HoLd => (vec![-p("k") * q[0]], vec![-p("gamma") * v[0]]),
        SystemKind::HoCd => (vec![-p("k") * q[0]], vec![-p("gamma") * sign0(v[0])]),
        SystemKind::HoPf => (vec![-p("k") * q[0]], vec![p("a") * t.sin()]),
        SystemKind::DampedDoublePendulum => {
            let (m1, m2, g, l1, l2) = (p("m1"), p("m2"), p("g"), p("l1"), p("l2"));
            let gamma = p("gamma");
            let (t1, t2) = (q[0], q[1]);
            let (w1, w2) = (v[0], v[1]);
            let d = t2 - t1;
            let (sd, cd) = d.sin_cos();
            let den1 = (m1 + m2) * l1 - m2 * l1 * cd * cd;
            let den2 = (l2 / l1) * den1;
            let a1 = (m2 * l1 * w1 * w1 * sd * cd + m2 * g * t2.sin() * cd + m2 * l2 * w2 * w2 * sd
                - (m1 + m2) * g * t1.sin())
                / den1;
            let a2 = (-m2 * l2 * w2 * w2 * sd * cd
                + (m1 + m2) * (g * t1.sin() * cd - l1 * w1 * w1 * sd - g * t2.sin()))
                / den2;
            (vec![a1, a2], vec![-gamma * w1, -gamma * w2])
        }
        SystemKind::Neptune => {
            let r = q[0].hypot(q[1]);
            let pn = spec.neptune_position(t);
            let (dx, dy) = (pn[0] - q[0], pn[1] - q[1]);
            let dn = dx.hypot(dy);
            if r < SINGULAR_DISTANCE || dn < SINGULAR_DISTANCE {
                return Err(DynamicsError::Singularity { t, distance: r.min(dn) });
            }
            let sun = p("G") * p("M_sun") / (r * r * r);
            let nep = p("G") * p("M_n") / (dn * dn * dn);
            (vec![-sun * q[0], -sun * q[1]], vec![nep * dx, nep * dy])
        }
        SystemKind::GravRadiation => {
            let r = q[0].hypot(q[1]);
            if r < SINGULAR_DISTANCE {
                return Err(DynamicsError::Singularity { t, distance: r });
            }
            let mu = p("G") * (p("M1") + p("M2")) / (r * r * r);
            let v2 = v[0] * v[0] + v[1] * v[1];
            let drag = spec.radiation_coefficient() * v2.powi(4);
            (vec![-mu * q[0], -mu * q[1]], vec![-drag * v[0], -drag * v[1]])
        }
    };
    let f = fc.iter().zip(&fn_).map(|(a, b)| a + b).collect();
    Ok((f, fc, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Expression, Scalar, Slot, SlotKind};
    use rand::{Rng, SeedableRng};

    fn state(q: &[f64], v: &[f64], t: f64) -> State {
        State::new(q.to_vec(), v.to_vec(), t)
    }

    #[test]
    fn toy_system_examples() {
        let ld = SystemSpec::new(SystemKind::HoLd);
        let (f, fc, fn_) = true_force(&ld, &state(&[1.0], &[2.0], 0.0)).unwrap();
        assert_eq!((f[0], fc[0], fn_[0]), (-2.0, -1.0, -1.0));
        let cd = SystemSpec::new(SystemKind::HoCd);
        let (f, fc, fn_) = true_force(&cd, &state(&[0.0], &[-3.0], 0.0)).unwrap();
        assert_eq!((f[0], fc[0], fn_[0]), (0.5, 0.0, 0.5));
    }

    #[test]
    fn radiation_coefficient_value() {
        let c = SystemSpec::new(SystemKind::GravRadiation).radiation_coefficient();
        let expected = 32.0 * 2.0 / (5.0 * 243.0 * 32.0);
        assert!((c - expected).abs() < 1e-18);
        assert!((c - 0.0016461).abs() < 1e-7);
    }

    #[test]
    fn overrides_are_validated() {
        let mut o = BTreeMap::new();
        o.insert("gamma".to_string(), 0.3);
        let s = SystemSpec::with_overrides(SystemKind::HoLd, &o).unwrap();
        assert_eq!(s.param("gamma"), 0.3);
        o.insert("mass".to_string(), 1.0);
        assert!(matches!(
            SystemSpec::with_overrides(SystemKind::HoLd, &o),
            Err(DynamicsError::UnknownParam { .. })
        ));
        assert!("HO+XX".parse::<SystemKind>().is_err());
        assert_eq!("neptune".parse::<SystemKind>().unwrap(), SystemKind::Neptune);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = SystemSpec::new(SystemKind::HoMf);
        assert!(matches!(
            true_force(&s, &state(&[1.0], &[1.0], 0.0)),
            Err(DynamicsError::Dimension { expected: 2, got: 1 })
        ));
    }

    fn random_state(kind: SystemKind, rng: &mut impl Rng) -> State {
        let n = kind.dof();
        let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        if matches!(kind, SystemKind::Neptune | SystemKind::GravRadiation) {
            q[0] += 1.5;
        }
        let v = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        State::new(q, v, rng.random_range(0.0..20.0))
    }

    #[test]
    fn split_sums_to_total() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for kind in SystemKind::ALL {
            let spec = SystemSpec::new(kind);
            for _ in 0..1000 {
                let s = random_state(kind, &mut rng);
                let Ok((f, fc, fn_)) = true_force(&spec, &s) else {
                    continue;
                };
                for i in 0..spec.n() {
                    assert!((f[i] - fc[i] - fn_[i]).abs() <= 1e-12);
                }
                if matches!(kind, SystemKind::HoMf | SystemKind::HoCg) {
                    assert!(fn_.iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    /// Pull of a point mass at `src` on a unit test mass at `at`.
    fn point_mass_pull(mass: f64, src: [f64; 2], at: [f64; 2]) -> [f64; 2] {
        let d = [src[0] - at[0], src[1] - at[1]];
        let r2 = d[0] * d[0] + d[1] * d[1];
        let s = mass / (r2 * r2.sqrt());
        [s * d[0], s * d[1]]
    }

    #[test]
    fn neptune_term_is_point_mass_pull() {
        let spec = SystemSpec::new(SystemKind::Neptune);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = random_state(SystemKind::Neptune, &mut rng);
            let (_, _, fn_) = true_force(&spec, &s).unwrap();
            let w = 3f64.powf(-1.5);
            let src = [3.0 * (w * s.t).cos(), 3.0 * (w * s.t).sin()];
            let expect = point_mass_pull(0.005, src, [s.q[0], s.q[1]]);
            for i in 0..2 {
                assert!((fn_[i] - expect[i]).abs() <= 1e-12 * expect[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn neptune_collision_is_singular() {
        let spec = SystemSpec::new(SystemKind::Neptune);
        let s = state(&[3.0, 0.0], &[0.0, 0.5], 0.0);
        assert!(matches!(true_force(&spec, &s), Err(DynamicsError::Singularity { .. })));
    }

    /// Euler-Lagrange acceleration from a traced Lagrangian over
    /// `(θ₁, θ₂, θ̇₁, θ̇₂)`, solved for q̈ with Cramer's rule.
    fn euler_lagrange_2(e: &Expression, x: &[f64]) -> [f64; 2] {
        let q = [Slot(0), Slot(1)];
        let v = [Slot(2), Slot(3)];
        let g = e.grad(x, &q).unwrap();
        let h = e.second_block(x, &v, &v).unwrap();
        let m = e.second_block(x, &v, &q).unwrap();
        let r = [
            g[0] - m[0][0] * x[2] - m[0][1] * x[3],
            g[1] - m[1][0] * x[2] - m[1][1] * x[3],
        ];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        [
            (r[0] * h[1][1] - h[0][1] * r[1]) / det,
            (h[0][0] * r[1] - h[1][0] * r[0]) / det,
        ]
    }

    #[test]
    fn pendulum_matches_euler_lagrange() {
        // Unequal constants exercise every parameter in the closed form.
        let mut spec = SystemSpec::new(SystemKind::DampedDoublePendulum);
        for (k, v) in [("m1", 1.3), ("m2", 0.7), ("g", 9.8), ("l1", 1.1), ("l2", 0.6)] {
            spec.set(k, v).unwrap();
        }
        let (m1, m2, g, l1, l2) = (1.3, 0.7, 9.8, 1.1, 0.6);
        let kinds = [
            SlotKind::Coordinate,
            SlotKind::Coordinate,
            SlotKind::Velocity,
            SlotKind::Velocity,
        ];
        let lag = Expression::trace(&kinds, |x| {
            let c = <crate::autodiff::Sym as Scalar>::constant;
            let kin = c(0.5 * (m1 + m2) * l1 * l1) * x[2] * x[2]
                + c(0.5 * m2 * l2 * l2) * x[3] * x[3]
                + c(m2 * l1 * l2) * x[2] * x[3] * (x[0] - x[1]).cos();
            kin + c((m1 + m2) * g * l1) * x[0].cos() + c(m2 * g * l2) * x[1].cos()
        });
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_state(SystemKind::DampedDoublePendulum, &mut rng);
            let (_, fc, fn_) = true_force(&spec, &s).unwrap();
            let x = [s.q[0], s.q[1], s.qdot[0], s.qdot[1]];
            let el = euler_lagrange_2(&lag, &x);
            for i in 0..2 {
                assert!((fc[i] - el[i]).abs() <= 1e-9 * el[i].abs().max(1.0), "{fc:?} vs {el:?}");
                assert_eq!(fn_[i], -0.02 * s.qdot[i]);
            }
        }
    }

    #[test]
    fn pendulum_initial_energy() {
        let spec = SystemSpec::new(SystemKind::DampedDoublePendulum);
        let e = spec.conservative_energy(&state(&[1.0, 0.0], &[0.0, 0.0], 0.0));
        assert!((e - 2.0 * (1.0 - 1f64.cos())).abs() < 1e-15);
    }
}
