//! Small dense linear algebra: partial-pivot LU for the `n <= 4` systems
//! that appear in the Euler-Lagrange solve.

use super::AutodiffError;

/// Largest 1-norm condition number accepted before a matrix is declared singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Row-major LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factors the row-major `n x n` matrix `a`, rejecting singular or
    /// ill-conditioned input.
    pub fn factor(a: &[f64], n: usize) -> Result<Self, AutodiffError> {
        assert_eq!(a.len(), n * n, "matrix storage does not match dimension");
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(AutodiffError::SingularMatrix {
                    condition: f64::INFINITY,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let m = lu[i * n + k] / pivot;
                lu[i * n + k] = m;
                for j in k + 1..n {
                    lu[i * n + j] -= m * lu[k * n + j];
                }
            }
        }
        let out = Lu { n, lu, perm };
        let condition = out.condition_1(a);
        if !(condition <= CONDITION_LIMIT) {
            return Err(AutodiffError::SingularMatrix { condition });
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A = P^T L U, so A^T = U^T L^T P.
        let mut y = b.to_vec();
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.lu[j * n + i] * y[j];
            }
            y[i] /= self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.lu[j * n + i] * y[j];
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Exact 1-norm condition number `|A|_1 |A^-1|_1`.
    fn condition_1(&self, a: &[f64]) -> f64 {
        let n = self.n;
        let norm = |m: &dyn Fn(usize, usize) -> f64| {
            (0..n)
                .map(|j| (0..n).map(|i| m(i, j).abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let a_norm = norm(&|i, j| a[i * n + j]);
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        a_norm * norm(&|i, j| inv[i * n + j])
    }
}

/// Convenience wrapper: factor and solve in one call.
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>, AutodiffError> {
    Ok(Lu::factor(a, n)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_with_pivoting() {
        let a = [0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x_true[j]).sum()).collect();
        let x = solve(&a, &b, 3).unwrap();
        for (u, v) in x.iter().zip(x_true) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_solve_matches() {
        let a = [4.0, 1.0, 2.0, 3.0];
        let lu = Lu::factor(&a, 2).unwrap();
        let x = lu.solve_transpose(&[1.0, 2.0]);
        // A^T x = b
        let r0 = a[0] * x[0] + a[2] * x[1];
        let r1 = a[1] * x[0] + a[3] * x[1];
        assert!((r0 - 1.0).abs() < 1e-14 && (r1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_singular_and_ill_conditioned() {
        assert!(matches!(
            Lu::factor(&[1.0, 2.0, 2.0, 4.0], 2),
            Err(AutodiffError::SingularMatrix { .. })
        ));
        assert!(matches!(
            Lu::factor(&[1.0, 0.0, 0.0, 1e-14], 2),
            Err(AutodiffError::SingularMatrix { .. })
        ));
        assert!(Lu::factor(&[1.0, 0.0, 0.0, 1e-9], 2).is_ok());
    }
}
