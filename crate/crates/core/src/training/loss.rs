use serde::{Deserialize, Serialize};

use crate::autodiff::primitive::sign0;

/// Inside-root guard for the `p > 1` gradient at zero loss.
pub const ROOT_GUARD: f64 = 1e-30;

/// Norm used by both loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNorm {
    /// `((1/(Nn)) Σ|r|^p)^{1/p}`.
    P(u8),
    /// `(1/(Nn)) Σ|r|²` without the root.
    Mse,
}

impl LossNorm {
    pub fn validate(self) -> Result<(), String> {
        match self {
            LossNorm::P(1..=3) | LossNorm::Mse => Ok(()),
            LossNorm::P(p) => Err(format!("loss exponent must be 1, 2 or 3, got {p}")),
        }
    }

    /// Exponent applied to each component.
    pub fn exponent(self) -> f64 {
        match self {
            LossNorm::P(p) => f64::from(p),
            LossNorm::Mse => 2.0,
        }
    }

    /// Normalized norm of a flat residual vector.
    pub fn value(self, r: &[f64]) -> f64 {
        if r.is_empty() {
            return 0.0;
        }
        let s = mean_power(r, self.exponent());
        match self {
            LossNorm::P(1) | LossNorm::Mse => s,
            LossNorm::P(p) => s.powf(1.0 / f64::from(p)),
        }
    }

    /// Gradient of [`value`](Self::value) with respect to each entry, scaled
    /// by `weight` and accumulated into `out`.
    pub fn accumulate_grad(self, r: &[f64], weight: f64, out: &mut [f64]) {
        if r.is_empty() || weight == 0.0 {
            return;
        }
        let count = r.len() as f64;
        match self {
            LossNorm::P(1) => {
                for (o, v) in out.iter_mut().zip(r) {
                    *o += weight * sign0(*v) / count;
                }
            }
            LossNorm::Mse => {
                for (o, v) in out.iter_mut().zip(r) {
                    *o += weight * 2.0 * v / count;
                }
            }
            LossNorm::P(p) => {
                let p = f64::from(p);
                let s = mean_power(r, p);
                let outer = (s + ROOT_GUARD).powf(1.0 / p - 1.0) / count;
                for (o, v) in out.iter_mut().zip(r) {
                    *o += weight * outer * v.abs().powf(p - 1.0) * sign0(*v);
                }
            }
        }
    }
}

fn mean_power(r: &[f64], p: f64) -> f64 {
    let sum: f64 = if p == 1.0 {
        r.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        r.iter().map(|v| v * v).sum()
    } else {
        r.iter().map(|v| v.abs().powf(p)).sum()
    };
    sum / r.len() as f64
}

/// Recovery error, penalty and the penalized total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "Le")]
    pub l_e: f64,
    #[serde(rename = "Lb")]
    pub l_b: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_e: f64, l_b: f64, lambda: f64) -> Self {
        LossReport {
            l_e,
            l_b,
            total: l_e + lambda * l_b,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_e.is_finite() && self.l_b.is_finite() && self.total.is_finite()
    }
}

/// Loss of flattened predictions against targets: `f_c + f_n − f` for the
/// recovery error and `f_n` for the penalty.
pub fn loss_from_forces(f: &[f64], f_c: &[f64], f_n: &[f64], lambda: f64, norm: LossNorm) -> LossReport {
    let r: Vec<f64> = f.iter().zip(f_c).zip(f_n).map(|((f, c), n)| c + n - f).collect();
    LossReport::new(norm.value(&r), norm.value(f_n), lambda)
}

/// Checks the penalized-loss bounds on a finite sample set.
///
/// For `λ > 1` the candidate must satisfy
/// `L_e + λ·L_b ≥ ‖f − f_c‖ + (λ − 1)·‖f_n‖`. For `λ < 1` the candidate must
/// satisfy `L_e + λ·L_b ≥ λ·‖f − f_c‖`, with equality at the interpolating
/// choice `f_n = f − f_c`. All norms are the normalized `p`-norm of the loss.
/// Returns false for `λ = 1` or mismatched lengths.
pub fn penalty_bounds_hold(f: &[f64], f_c: &[f64], f_n: &[f64], lambda: f64, p: u8) -> bool {
    if f.len() != f_c.len() || f.len() != f_n.len() || lambda == 1.0 || !(lambda > 0.0) {
        return false;
    }
    let norm = LossNorm::P(p);
    let gap: Vec<f64> = f.iter().zip(f_c).map(|(a, b)| a - b).collect();
    let gap_norm = norm.value(&gap);
    let fn_norm = norm.value(f_n);
    let total = loss_from_forces(f, f_c, f_n, lambda, norm).total;
    let tol = 1e-9 * (1.0 + gap_norm + lambda * fn_norm);
    if lambda > 1.0 {
        total + tol >= gap_norm + (lambda - 1.0) * fn_norm
    } else {
        let interpolated = loss_from_forces(f, f_c, &gap, lambda, norm).total;
        total + tol >= lambda * gap_norm && (interpolated - lambda * gap_norm).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn exact_fit_has_zero_loss() {
        let f = [1.0, -2.0, 0.5];
        let r = loss_from_forces(&f, &f, &[0.0; 3], 0.7, LossNorm::P(2));
        assert_eq!((r.l_e, r.l_b, r.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_sample_substitution() {
        let r = loss_from_forces(&[2.0], &[0.0], &[0.0], 0.5, LossNorm::P(1));
        assert_eq!(r.total, 2.0);
    }

    #[test]
    fn mse_squares_without_root() {
        let r = loss_from_forces(&[0.0, 0.0], &[1.0, 3.0], &[0.0, 2.0], 2.0, LossNorm::Mse);
        assert_eq!(r.l_e, (1.0 + 25.0) / 2.0);
        assert_eq!(r.l_b, 2.0);
        assert_eq!(r.total, 13.0 + 4.0);
    }

    #[test]
    fn p3_value() {
        let v = LossNorm::P(3).value(&[1.0, -2.0]);
        assert!((v - 4.5f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn floor_for_linear_damping_matches_half_mean_absolute_normal() {
        // f = −q − q̇/2 with f_c = −q, f_n = 0: L_e = E|q̇|/2
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let n = 200_000;
        let mut f = Vec::with_capacity(n);
        let mut fc = Vec::with_capacity(n);
        for _ in 0..n {
            let q: f64 = rng.sample(rand_distr::StandardNormal);
            let qd: f64 = rng.sample(rand_distr::StandardNormal);
            f.push(-q - 0.5 * qd);
            fc.push(-q);
        }
        let r = loss_from_forces(&f, &fc, &vec![0.0; n], 10.0, LossNorm::P(1));
        let expected = (2.0 / std::f64::consts::PI).sqrt() / 2.0;
        assert!((r.l_e - expected).abs() < 0.005, "{}", r.l_e);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r = [0.3, -1.2, 0.7, 2.0];
        for norm in [LossNorm::P(1), LossNorm::P(2), LossNorm::P(3), LossNorm::Mse] {
            let mut g = vec![0.0; 4];
            norm.accumulate_grad(&r, 1.5, &mut g);
            for k in 0..4 {
                let h = 1e-6;
                let mut hi = r;
                let mut lo = r;
                hi[k] += h;
                lo[k] -= h;
                let fd = 1.5 * (norm.value(&hi) - norm.value(&lo)) / (2.0 * h);
                assert!((g[k] - fd).abs() < 1e-7, "{norm:?} {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn guarded_gradient_is_finite_at_zero() {
        let mut g = vec![0.0; 3];
        LossNorm::P(2).accumulate_grad(&[0.0; 3], 1.0, &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimum_forms() {
        let f = [1.0, -0.5, 2.0, 0.25];
        let fc = [0.5, 0.5, 1.0, 0.0];
        let gap: Vec<f64> = f.iter().zip(&fc).map(|(a, b)| a - b).collect();
        let gap_norm = LossNorm::P(1).value(&gap);
        let below = loss_from_forces(&f, &fc, &gap, 0.5, LossNorm::P(1));
        assert!((below.total - 0.5 * gap_norm).abs() < 1e-15);
        let above = loss_from_forces(&f, &fc, &[0.0; 4], 2.0, LossNorm::P(1));
        assert!((above.total - gap_norm).abs() < 1e-15);
        assert!(penalty_bounds_hold(&f, &fc, &[0.0; 4], 2.0, 1));
        assert!(penalty_bounds_hold(&f, &fc, &gap, 0.5, 1));
    }

    #[test]
    fn random_candidates_respect_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let len = 20;
            let v = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()
            };
            let (f, fc, fnn) = (v(&mut rng), v(&mut rng), v(&mut rng));
            assert!(penalty_bounds_hold(&f, &fc, &fnn, 2.0, 1));
        }
    }

    proptest! {
        #[test]
        fn total_identity(
            r in proptest::collection::vec(-5.0f64..5.0, 1..20),
            lambda in 0.01f64..100.0,
            p in 1u8..=3,
        ) {
            let f = vec![0.0; r.len()];
            let fc: Vec<f64> = r.iter().map(|v| v * 0.5).collect();
            let rep = loss_from_forces(&f, &fc, &r, lambda, LossNorm::P(p));
            prop_assert!((rep.total - (rep.l_e + lambda * rep.l_b)).abs() <= 1e-12 * rep.total.abs().max(1.0));
        }

        #[test]
        fn bounds_hold_for_random_instances(
            data in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..30),
            lambda in prop_oneof![0.01f64..0.99, 1.01f64..100.0],
            p in 1u8..=3,
        ) {
            let f: Vec<f64> = data.iter().map(|d| d.0).collect();
            let fc: Vec<f64> = data.iter().map(|d| d.1).collect();
            let fnn: Vec<f64> = data.iter().map(|d| d.2).collect();
            prop_assert!(penalty_bounds_hold(&f, &fc, &fnn, lambda, p));
        }
    }
}
