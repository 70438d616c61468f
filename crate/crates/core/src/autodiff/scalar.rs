use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::linalg;
use super::primitive::{self, Unary};
use super::AutodiffError;

/// Number-like type that every differentiable computation in the crate is
/// written against.
///
/// Implemented by `f64` (plain evaluation), [`Dual`] (forward derivatives,
/// nestable for higher orders), [`Var`](super::Var) (reverse tape) and
/// [`Sym`](super::Sym) (graph tracing).
pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;

    /// Primal value. Tracing types that carry no value return NaN.
    fn value(&self) -> f64;

    fn unary(self, op: Unary) -> Self;

    /// `self^e` for a positive base.
    fn pow(self, e: Self) -> Self;

    /// Solves the row-major `n x n` system `A x = b`.
    fn solve(a: &[Self], b: &[Self], n: usize) -> Result<Vec<Self>, AutodiffError>;

    fn exp(self) -> Self {
        self.unary(Unary::Exp)
    }
    fn ln(self) -> Self {
        self.unary(Unary::Ln)
    }
    fn sin(self) -> Self {
        self.unary(Unary::Sin)
    }
    fn cos(self) -> Self {
        self.unary(Unary::Cos)
    }
    fn sqrt(self) -> Self {
        self.unary(Unary::Sqrt)
    }
    fn tanh(self) -> Self {
        self.unary(Unary::Tanh)
    }
    fn softplus(self) -> Self {
        self.unary(Unary::Softplus)
    }
    fn sigmoid(self) -> Self {
        self.unary(Unary::Sigmoid)
    }
    fn leaky_relu(self, slope: f64) -> Self {
        self.unary(Unary::LeakyRelu(slope))
    }
    fn sign(self) -> Self {
        self.unary(Unary::Sign)
    }
    fn abs(self) -> Self {
        self.unary(Unary::Abs)
    }
    fn powc(self, e: f64) -> Self {
        self.unary(Unary::PowC(e))
    }
    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn unary(self, op: Unary) -> Self {
        primitive::unary(op, self).0
    }
    fn pow(self, e: Self) -> Self {
        self.powf(e)
    }
    fn solve(a: &[Self], b: &[Self], n: usize) -> Result<Vec<Self>, AutodiffError> {
        linalg::solve(a, b, n)
    }
}

/// First-order forward-mode dual number `re + eps·ε`, `ε² = 0`.
///
/// Nesting (`Dual<Dual<f64>>`) yields mixed second derivatives in the
/// innermost-times-outermost `eps` slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// A variable seeded with unit tangent.
    pub fn variable(re: T) -> Self {
        Dual {
            re,
            eps: T::constant(1.0),
        }
    }

    pub fn lift(re: T) -> Self {
        Dual {
            re,
            eps: T::constant(0.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let v = self.re / o.re;
        Dual::new(v, (self.eps - v * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn constant(v: f64) -> Self {
        Dual::lift(T::constant(v))
    }

    fn value(&self) -> f64 {
        self.re.value()
    }

    fn unary(self, op: Unary) -> Self {
        let x = self.re;
        let d = self.eps;
        match op {
            Unary::Neg => -self,
            Unary::Exp => {
                let e = x.exp();
                Dual::new(e, d * e)
            }
            Unary::Ln => Dual::new(x.ln(), d / x),
            Unary::Sin => Dual::new(x.sin(), d * x.cos()),
            Unary::Cos => Dual::new(x.cos(), -(d * x.sin())),
            Unary::Sqrt => {
                let s = x.sqrt();
                Dual::new(s, d / (s * T::constant(2.0)))
            }
            Unary::Tanh => {
                let t = x.tanh();
                Dual::new(t, d * (T::constant(1.0) - t * t))
            }
            Unary::Softplus => Dual::new(x.softplus(), d * x.sigmoid()),
            Unary::Sigmoid => {
                let s = x.sigmoid();
                Dual::new(s, d * (s * (T::constant(1.0) - s)))
            }
            Unary::LeakyRelu(a) => Dual::new(x.leaky_relu(a), d * x.unary(Unary::Step(a))),
            Unary::Step(a) => Dual::lift(x.unary(Unary::Step(a))),
            Unary::Sign => Dual::lift(x.sign()),
            Unary::Abs => Dual::new(x.abs(), d * x.sign()),
            Unary::PowC(e) => {
                if e == 0.0 {
                    Dual::constant(1.0)
                } else {
                    Dual::new(x.powc(e), d * (x.powc(e - 1.0) * T::constant(e)))
                }
            }
        }
    }

    fn pow(self, e: Self) -> Self {
        let v = self.re.pow(e.re);
        let da = self.eps * (e.re * self.re.pow(e.re - T::constant(1.0)));
        let db = e.eps * (v * self.re.ln());
        Dual::new(v, da + db)
    }

    /// `x = A⁻¹b`, `ẋ = A⁻¹(ḃ − Ȧx)`: two solves against the primal matrix.
    fn solve(a: &[Self], b: &[Self], n: usize) -> Result<Vec<Self>, AutodiffError> {
        let a_re: Vec<T> = a.iter().map(|v| v.re).collect();
        let b_re: Vec<T> = b.iter().map(|v| v.re).collect();
        let x = T::solve(&a_re, &b_re, n)?;
        let rhs: Vec<T> = (0..n)
            .map(|i| {
                let mut r = b[i].eps;
                for j in 0..n {
                    r = r - a[i * n + j].eps * x[j];
                }
                r
            })
            .collect();
        let x_eps = T::solve(&a_re, &rhs, n)?;
        Ok(x.into_iter().zip(x_eps).map(|(re, eps)| Dual::new(re, eps)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_dual_gives_second_derivative() {
        // f(x) = x^3 at 2: f' = 12, f'' = 12
        let x = Dual::variable(Dual::variable(2.0));
        let y = x * x * x;
        assert_eq!(y.re.re, 8.0);
        assert_eq!(y.re.eps, 12.0);
        assert_eq!(y.eps.re, 12.0);
        assert_eq!(y.eps.eps, 12.0);
    }

    #[test]
    fn dual_solve_matches_derivative_of_inverse() {
        // A(s) = [[2+s, 1], [1, 3]], b = [1, 0]; d/ds x at s = 0 by finite differences.
        let solve_at = |s: f64| f64::solve(&[2.0 + s, 1.0, 1.0, 3.0], &[1.0, 0.0], 2).unwrap();
        let s = Dual::variable(0.0);
        let one = Dual::constant(1.0);
        let a = [Dual::constant(2.0) + s, one, one, Dual::constant(3.0)];
        let x = Dual::solve(&a, &[one, Dual::constant(0.0)], 2).unwrap();
        let h = 1e-6;
        let (p, m) = (solve_at(h), solve_at(-h));
        for i in 0..2 {
            let fd = (p[i] - m[i]) / (2.0 * h);
            assert!((x[i].eps - fd).abs() < 1e-8);
        }
    }
}
