//! Reverse-mode tape. Records every primitive applied to a [`Var`] so that
//! parameter gradients can be pulled back through arbitrarily nested forward
//! derivative computations and linear solves.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::linalg::Lu;
use super::primitive::{self, Binary, Unary};
use super::scalar::Scalar;
use super::AutodiffError;

const NONE: u32 = u32::MAX;

#[derive(Debug)]
enum Entry {
    Leaf,
    Unary {
        arg: u32,
        d: f64,
    },
    Binary {
        a: u32,
        b: u32,
        da: f64,
        db: f64,
    },
    /// Value produced by the following `Solve` record; carries no local rule.
    SolveOut,
    Solve {
        a: Vec<u32>,
        b: Vec<u32>,
        first_out: u32,
        lu: Lu,
        x: Vec<f64>,
    },
}

/// Append-only record of operations on [`Var`]s.
#[derive(Debug, Default)]
pub struct Tape {
    entries: RefCell<Vec<Entry>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an independent variable.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let idx = self.push(Entry::Leaf);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, e: Entry) -> u32 {
        let mut entries = self.entries.borrow_mut();
        entries.push(e);
        (entries.len() - 1) as u32
    }

    /// Adjoint of every tape entry with respect to `out`.
    pub fn adjoints(&self, out: Var<'_>) -> Vec<f64> {
        let entries = self.entries.borrow();
        let mut adj = vec![0.0; entries.len()];
        if out.idx == NONE {
            return adj;
        }
        adj[out.idx as usize] = 1.0;
        for i in (0..entries.len()).rev() {
            match &entries[i] {
                Entry::Leaf | Entry::SolveOut => {}
                Entry::Unary { arg, d } => {
                    let g = adj[i];
                    if g != 0.0 {
                        adj[*arg as usize] += g * d;
                    }
                }
                Entry::Binary { a, b, da, db } => {
                    let g = adj[i];
                    if g != 0.0 {
                        if *a != NONE {
                            adj[*a as usize] += g * da;
                        }
                        if *b != NONE {
                            adj[*b as usize] += g * db;
                        }
                    }
                }
                Entry::Solve { a, b, first_out, lu, x } => {
                    let n = lu.dim();
                    let xbar: Vec<f64> = (0..n).map(|k| adj[*first_out as usize + k]).collect();
                    if xbar.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    // x = A⁻¹b  =>  b̄ = A⁻ᵀx̄,  Ā = −b̄ xᵀ
                    let bbar = lu.solve_transpose(&xbar);
                    for r in 0..n {
                        if b[r] != NONE {
                            adj[b[r] as usize] += bbar[r];
                        }
                        for c in 0..n {
                            let id = a[r * n + c];
                            if id != NONE {
                                adj[id as usize] += -bbar[r] * x[c];
                            }
                        }
                    }
                }
            }
        }
        adj
    }
}

/// A scalar tracked on a [`Tape`]. Values without a tape are constants.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn val(&self) -> f64 {
        self.val
    }

    /// Position on the tape, `None` for constants.
    pub fn index(&self) -> Option<usize> {
        (self.idx != NONE).then_some(self.idx as usize)
    }

    fn binary(op: Binary, a: Self, b: Self) -> Self {
        let (v, da, db) = primitive::binary(op, a.val, b.val);
        match a.tape.or(b.tape) {
            None => Var {
                tape: None,
                idx: NONE,
                val: v,
            },
            Some(tape) => {
                let idx = tape.push(Entry::Binary {
                    a: a.idx,
                    b: b.idx,
                    da,
                    db,
                });
                Var {
                    tape: Some(tape),
                    idx,
                    val: v,
                }
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Var::binary(Binary::Add, self, o)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Var::binary(Binary::Sub, self, o)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Var::binary(Binary::Mul, self, o)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Var::binary(Binary::Div, self, o)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Unary::Neg)
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant(v: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val: v,
        }
    }

    fn value(&self) -> f64 {
        self.val
    }

    fn unary(self, op: Unary) -> Self {
        let (v, d) = primitive::unary(op, self.val);
        match self.tape {
            None => Var::constant(v),
            Some(tape) => {
                let idx = tape.push(Entry::Unary { arg: self.idx, d });
                Var {
                    tape: Some(tape),
                    idx,
                    val: v,
                }
            }
        }
    }

    fn pow(self, e: Self) -> Self {
        Var::binary(Binary::Pow, self, e)
    }

    fn solve(a: &[Self], b: &[Self], n: usize) -> Result<Vec<Self>, AutodiffError> {
        let a_val: Vec<f64> = a.iter().map(|v| v.val).collect();
        let b_val: Vec<f64> = b.iter().map(|v| v.val).collect();
        let lu = Lu::factor(&a_val, n)?;
        let x = lu.solve(&b_val);
        let tape = a.iter().chain(b).find_map(|v| v.tape);
        let Some(tape) = tape else {
            return Ok(x.into_iter().map(Var::constant).collect());
        };
        let first_out = tape.len() as u32;
        let outs: Vec<Var<'t>> = x
            .iter()
            .map(|&val| Var {
                tape: Some(tape),
                idx: tape.push(Entry::SolveOut),
                val,
            })
            .collect();
        tape.push(Entry::Solve {
            a: a.iter().map(|v| v.idx).collect(),
            b: b.iter().map(|v| v.idx).collect(),
            first_out,
            lu,
            x,
        });
        Ok(outs)
    }
}

/// Value and exact parameter gradient of a scalar pipeline.
///
/// `pipeline` receives one tape variable per entry of `params` and may use
/// any [`Scalar`] machinery internally: nested [`Dual`](super::Dual)s over
/// [`Var`] for input derivatives, [`Scalar::solve`] for linear systems, or
/// expression evaluation via [`Expression::eval_with`](super::Expression::eval_with).
pub fn grad_through<F, E>(params: &[f64], pipeline: F) -> Result<(f64, Vec<f64>), E>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Result<Var<'t>, E>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.leaf(p)).collect();
    let out = pipeline(&vars)?;
    let adj = tape.adjoints(out);
    let grads = vars.iter().map(|v| adj[v.idx as usize]).collect();
    Ok((out.val, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let (v, g) = grad_through(&[2.0, 5.0], |p| Ok::<_, AutodiffError>(p[0] * p[1])).unwrap();
        assert_eq!(v, 10.0);
        assert_eq!(g, vec![5.0, 2.0]);
    }

    #[test]
    fn constant_pipeline_has_zero_gradient() {
        let (_, g) = grad_through(&[1.0, 2.0, 3.0], |_| Ok::<_, AutodiffError>(Var::constant(4.0))).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn solve_adjoint_matches_finite_differences() {
        // out = c · A(p)⁻¹ b(p)
        let f = |p: &[f64]| {
            let a = [p[0], p[1], 0.5, 2.0 + p[2]];
            let x = f64::solve(&a, &[1.0, p[1]], 2).unwrap();
            3.0 * x[0] - x[1]
        };
        let p0 = [1.5, 0.3, -0.2];
        let (v, g) = grad_through(&p0, |p| {
            let half = Var::constant(0.5);
            let a = [p[0], p[1], half, Var::constant(2.0) + p[2]];
            let x = Var::solve(&a, &[Var::constant(1.0), p[1]], 2)?;
            Ok::<_, AutodiffError>(Var::constant(3.0) * x[0] - x[1])
        })
        .unwrap();
        assert!((v - f(&p0)).abs() < 1e-15);
        for k in 0..3 {
            let mut hi = p0;
            let mut lo = p0;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let fd = (f(&hi) - f(&lo)) / 2e-6;
            assert!((g[k] - fd).abs() < 1e-7, "component {k}: {} vs {fd}", g[k]);
        }
    }
}
