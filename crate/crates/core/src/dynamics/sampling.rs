use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DynamicsError, ForceSample, State, SystemSpec};

/// Coverage and imbalance settings for the single-degree-of-freedom data
/// quality experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataQualityConfig {
    #[serde(default = "one")]
    pub coverage_alpha: f64,
    #[serde(default = "half")]
    pub imbalance_beta: f64,
    pub n_train: usize,
    #[serde(default)]
    pub n_test: usize,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl DataQualityConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [
            ("coverage_alpha", self.coverage_alpha),
            ("imbalance_beta", self.imbalance_beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DynamicsError::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.n_train == 0 {
            return Err(DynamicsError::InvalidConfig("n_train must be at least 1".into()));
        }
        Ok(())
    }
}

fn gaussian_state(n: usize, rng: &mut ChaCha8Rng) -> State {
    let q = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let qdot = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    State::new(q, qdot, rng.sample(StandardNormal))
}

/// States with every coordinate, velocity and time i.i.d. standard normal.
pub fn sample_gaussian_states(
    spec: &SystemSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ForceSample>, DynamicsError> {
    if n_samples == 0 {
        return Err(DynamicsError::EmptyDataset("n_samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| ForceSample::observe(spec, gaussian_state(spec.n(), &mut rng)))
        .collect()
}

/// Whether the polar angle of `(q, q̇)`, measured counterclockwise from the
/// positive-q axis into `[0, 2π)`, lies in `[0, 2πα)`.
pub fn in_wedge(s: &State, alpha: f64) -> bool {
    let mut angle = s.qdot[0].atan2(s.q[0]);
    if angle < 0.0 {
        angle += TAU;
    }
    angle < TAU * alpha
}

fn require_1dof(spec: &SystemSpec) -> Result<(), DynamicsError> {
    if spec.n() != 1 {
        return Err(DynamicsError::InvalidConfig(format!(
            "{} has {} degrees of freedom; phase-plane filters need 1",
            spec.name(),
            spec.n()
        )));
    }
    Ok(())
}

/// Keeps the samples inside the coverage wedge and tops the set back up to
/// its original size with fresh Gaussian draws from the same wedge.
pub fn apply_coverage_wedge(
    spec: &SystemSpec,
    samples: Vec<ForceSample>,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ForceSample>, DynamicsError> {
    require_1dof(spec)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DynamicsError::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Err(DynamicsError::EmptyDataset(
            "coverage fraction 0 admits no samples".into(),
        ));
    }
    let target = samples.len();
    let mut kept: Vec<ForceSample> = samples.into_iter().filter(|s| in_wedge(&s.state, alpha)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while kept.len() < target {
        let s = gaussian_state(1, &mut rng);
        if in_wedge(&s, alpha) {
            kept.push(ForceSample::observe(spec, s)?);
        }
    }
    Ok(kept)
}

/// Exactly `round(β·n_total)` Gaussian states with `q̇ > 0` followed by the
/// remainder with `q̇ < 0`, drawn by rejection.
pub fn apply_imbalance(
    spec: &SystemSpec,
    beta: f64,
    n_total: usize,
    seed: u64,
) -> Result<Vec<ForceSample>, DynamicsError> {
    require_1dof(spec)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(DynamicsError::InvalidConfig(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    let upper = (beta * n_total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut up = Vec::with_capacity(upper);
    let mut down = Vec::with_capacity(n_total - upper);
    while up.len() < upper || down.len() < n_total - upper {
        let s = gaussian_state(1, &mut rng);
        if s.qdot[0] > 0.0 && up.len() < upper {
            up.push(ForceSample::observe(spec, s)?);
        } else if s.qdot[0] < 0.0 && down.len() < n_total - upper {
            down.push(ForceSample::observe(spec, s)?);
        }
    }
    up.extend(down);
    Ok(up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemKind;

    fn cd() -> SystemSpec {
        SystemSpec::new(SystemKind::HoCd)
    }

    #[test]
    fn gaussian_sampling_is_deterministic() {
        let a = sample_gaussian_states(&cd(), 1000, 5).unwrap();
        let b = sample_gaussian_states(&cd(), 1000, 5).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
        assert_ne!(a, sample_gaussian_states(&cd(), 1000, 6).unwrap());
        assert!(sample_gaussian_states(&cd(), 0, 5).is_err());
    }

    #[test]
    fn gaussian_mean_is_near_zero() {
        let s = sample_gaussian_states(&cd(), 100_000, 11).unwrap();
        let mean = s.iter().map(|x| x.state.q[0]).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn wedge_membership() {
        let spec = cd();
        let base = sample_gaussian_states(&spec, 1000, 1).unwrap();
        let full = apply_coverage_wedge(&spec, base.clone(), 1.0, 2).unwrap();
        assert_eq!(full, base);
        let half = apply_coverage_wedge(&spec, base.clone(), 0.5, 2).unwrap();
        assert_eq!(half.len(), 1000);
        assert!(half.iter().all(|s| s.state.qdot[0] >= 0.0));
        let quarter = apply_coverage_wedge(&spec, base.clone(), 0.25, 2).unwrap();
        assert_eq!(quarter.len(), 1000);
        assert!(quarter.iter().all(|s| s.state.q[0] >= 0.0 && s.state.qdot[0] >= 0.0));
        assert!(apply_coverage_wedge(&spec, base, 0.0, 2).is_err());
    }

    #[test]
    fn imbalance_counts() {
        let spec = SystemSpec::new(SystemKind::HoLd);
        for (beta, upper) in [(0.5, 500), (0.9, 900), (0.1, 100)] {
            let s = apply_imbalance(&spec, beta, 1000, 3).unwrap();
            assert_eq!(s.len(), 1000);
            assert_eq!(s.iter().filter(|x| x.state.qdot[0] > 0.0).count(), upper);
            assert_eq!(s.iter().filter(|x| x.state.qdot[0] < 0.0).count(), 1000 - upper);
        }
    }

    #[test]
    fn filters_need_one_degree_of_freedom() {
        let spec = SystemSpec::new(SystemKind::HoMf);
        assert!(apply_imbalance(&spec, 0.5, 10, 0).is_err());
    }
}
