use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::primitive::{self, Binary, Unary};
use super::scalar::{Dual, Scalar};
use super::{linalg::Lu, AutodiffError, Slot, SlotKind};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Const(f64),
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    /// Row `row` of the solution of linear system `system`.
    Solve {
        system: usize,
        row: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct LinearSystem {
    n: usize,
    a: Vec<usize>,
    b: Vec<usize>,
    first_row: usize,
}

/// Immutable, topologically ordered scalar computation over indexed leaf slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    slots: Vec<SlotKind>,
    nodes: Vec<Node>,
    systems: Vec<LinearSystem>,
    output: usize,
}

impl Expression {
    /// Traces a generic scalar function into an expression. `f` receives one
    /// symbolic leaf per entry of `slots`.
    pub fn trace<F>(slots: &[SlotKind], f: F) -> Expression
    where
        F: for<'b> FnOnce(&[Sym<'b>]) -> Sym<'b>,
    {
        let builder = ExpressionBuilder::new();
        let leaves: Vec<Sym<'_>> = slots.iter().map(|&k| builder.slot(k)).collect();
        let out = f(&leaves);
        let expr = builder.build(out);
        drop(leaves);
        expr
    }

    pub fn slots(&self) -> &[SlotKind] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Slots of the given kind, in slot order.
    pub fn slots_of(&self, kind: SlotKind) -> Vec<Slot> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(i, _)| Slot(i))
            .collect()
    }

    fn check_leaves(&self, got: usize) -> Result<(), AutodiffError> {
        if got != self.slots.len() {
            return Err(AutodiffError::LeafCount {
                expected: self.slots.len(),
                got,
            });
        }
        Ok(())
    }

    fn check_slots(&self, wrt: &[Slot], second_order: bool) -> Result<(), AutodiffError> {
        for s in wrt {
            let kind = *self.slots.get(s.0).ok_or(AutodiffError::InvalidSlot(s.0))?;
            if second_order && !matches!(kind, SlotKind::Coordinate | SlotKind::Velocity) {
                return Err(AutodiffError::InvalidRequest(format!(
                    "second-order request on {kind:?} slot {}",
                    s.0
                )));
            }
        }
        Ok(())
    }

    fn values<T: Scalar>(&self, leaves: &[T]) -> Result<Vec<T>, AutodiffError> {
        self.check_leaves(leaves.len())?;
        let mut vals: Vec<T> = Vec::with_capacity(self.nodes.len());
        let mut solved: Vec<Option<Vec<T>>> = vec![None; self.systems.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match *node {
                Node::Leaf(s) => leaves[s],
                Node::Const(c) => T::constant(c),
                Node::Unary(op, a) => {
                    let x = vals[a];
                    if !op.in_domain(x.value()) {
                        return Err(AutodiffError::Domain {
                            node: i,
                            op: op.name(),
                            value: x.value(),
                        });
                    }
                    x.unary(op)
                }
                Node::Binary(op, a, b) => {
                    let (x, y) = (vals[a], vals[b]);
                    if !op.in_domain(x.value(), y.value()) {
                        let value = if op == Binary::Div { y.value() } else { x.value() };
                        return Err(AutodiffError::Domain {
                            node: i,
                            op: op.name(),
                            value,
                        });
                    }
                    match op {
                        Binary::Add => x + y,
                        Binary::Sub => x - y,
                        Binary::Mul => x * y,
                        Binary::Div => x / y,
                        Binary::Pow => x.pow(y),
                    }
                }
                Node::Solve { system, row } => {
                    if solved[system].is_none() {
                        let sys = &self.systems[system];
                        let a: Vec<T> = sys.a.iter().map(|&k| vals[k]).collect();
                        let b: Vec<T> = sys.b.iter().map(|&k| vals[k]).collect();
                        solved[system] = Some(T::solve(&a, &b, sys.n)?);
                    }
                    solved[system].as_ref().unwrap()[row]
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Evaluates the expression at the given leaf values.
    pub fn evaluate(&self, leaves: &[f64]) -> Result<f64, AutodiffError> {
        Ok(self.values(leaves)?[self.output])
    }

    /// Evaluates over any scalar type (duals, tape variables).
    pub fn eval_with<T: Scalar>(&self, leaves: &[T]) -> Result<T, AutodiffError> {
        Ok(self.values(leaves)?[self.output])
    }

    /// Exact first derivatives with respect to `wrt`, by a reverse sweep over the graph.
    pub fn grad(&self, leaves: &[f64], wrt: &[Slot]) -> Result<Vec<f64>, AutodiffError> {
        if wrt.is_empty() {
            return Err(AutodiffError::InvalidRequest("empty slot set".into()));
        }
        self.check_slots(wrt, false)?;
        let vals = self.values(leaves)?;
        let mut adj = vec![0.0; self.nodes.len()];
        adj[self.output] = 1.0;
        let mut leaf_adj = vec![0.0; self.slots.len()];
        for i in (0..self.nodes.len()).rev() {
            let g = adj[i];
            match self.nodes[i] {
                Node::Leaf(s) => leaf_adj[s] += g,
                Node::Const(_) => {}
                Node::Unary(op, a) => {
                    if g != 0.0 {
                        adj[a] += g * primitive::unary(op, vals[a]).1;
                    }
                }
                Node::Binary(op, a, b) => {
                    if g != 0.0 {
                        let (_, da, db) = primitive::binary(op, vals[a], vals[b]);
                        adj[a] += g * da;
                        adj[b] += g * db;
                    }
                }
                Node::Solve { system, row } => {
                    let sys = &self.systems[system];
                    // Rows are contiguous; apply the adjoint once all of them are seen.
                    if row != 0 {
                        continue;
                    }
                    let n = sys.n;
                    let xbar: Vec<f64> = (0..n).map(|k| adj[sys.first_row + k]).collect();
                    if xbar.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let a: Vec<f64> = sys.a.iter().map(|&k| vals[k]).collect();
                    let x: Vec<f64> = (0..n).map(|k| vals[sys.first_row + k]).collect();
                    let lu = Lu::factor(&a, n)?;
                    let bbar = lu.solve_transpose(&xbar);
                    for r in 0..n {
                        adj[sys.b[r]] += bbar[r];
                        for c in 0..n {
                            adj[sys.a[r * n + c]] += -bbar[r] * x[c];
                        }
                    }
                }
            }
        }
        Ok(wrt.iter().map(|s| leaf_adj[s.0]).collect())
    }

    /// `M[i][j] = ∂²expr / ∂rows[i] ∂cols[j]` via nested forward duals.
    pub fn second_block(&self, leaves: &[f64], rows: &[Slot], cols: &[Slot]) -> Result<Vec<Vec<f64>>, AutodiffError> {
        self.second_block_with(leaves, rows, cols)
    }

    /// First derivatives over any scalar type, one forward dual pass per slot.
    pub fn grad_with<T: Scalar>(&self, leaves: &[T], wrt: &[Slot]) -> Result<Vec<T>, AutodiffError> {
        self.check_slots(wrt, false)?;
        self.check_leaves(leaves.len())?;
        wrt.iter()
            .map(|s| {
                let seeded: Vec<Dual<T>> = leaves
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if k == s.0 { Dual::variable(v) } else { Dual::lift(v) })
                    .collect();
                Ok(self.eval_with(&seeded)?.eps)
            })
            .collect()
    }

    /// Second-derivative block over any scalar type.
    pub fn second_block_with<T: Scalar>(
        &self,
        leaves: &[T],
        rows: &[Slot],
        cols: &[Slot],
    ) -> Result<Vec<Vec<T>>, AutodiffError> {
        self.check_slots(rows, true)?;
        self.check_slots(cols, true)?;
        self.check_leaves(leaves.len())?;
        let zero = T::constant(0.0);
        let one = T::constant(1.0);
        rows.iter()
            .map(|r| {
                cols.iter()
                    .map(|c| {
                        let seeded: Vec<Dual<Dual<T>>> = leaves
                            .iter()
                            .enumerate()
                            .map(|(k, &v)| Dual {
                                re: Dual {
                                    re: v,
                                    eps: if k == c.0 { one } else { zero },
                                },
                                eps: Dual {
                                    re: if k == r.0 { one } else { zero },
                                    eps: zero,
                                },
                            })
                            .collect();
                        Ok(self.eval_with(&seeded)?.eps.eps)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Records operations on [`Sym`] handles into an [`Expression`].
#[derive(Debug, Default)]
pub struct ExpressionBuilder {
    inner: RefCell<BuilderInner>,
}

#[derive(Debug, Default)]
struct BuilderInner {
    slots: Vec<SlotKind>,
    nodes: Vec<Node>,
    systems: Vec<LinearSystem>,
}

impl ExpressionBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares the next leaf slot.
    pub fn slot(&self, kind: SlotKind) -> Sym<'_> {
        let mut inner = self.inner.borrow_mut();
        let s = inner.slots.len();
        inner.slots.push(kind);
        inner.nodes.push(Node::Leaf(s));
        Sym::Node(self, inner.nodes.len() - 1)
    }

    fn push(&self, node: Node) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    fn id(&self, s: Sym<'_>) -> usize {
        match s {
            Sym::Const(c) => self.push(Node::Const(c)),
            Sym::Node(_, id) => id,
        }
    }

    pub fn build(&self, out: Sym<'_>) -> Expression {
        let output = self.id(out);
        let inner = self.inner.take();
        Expression {
            slots: inner.slots,
            nodes: inner.nodes,
            systems: inner.systems,
            output,
        }
    }
}

/// Symbolic scalar: either an inline constant or a node of a builder.
#[derive(Debug, Clone, Copy)]
pub enum Sym<'b> {
    Const(f64),
    Node(&'b ExpressionBuilder, usize),
}

impl<'b> Sym<'b> {
    fn builder(&self) -> Option<&'b ExpressionBuilder> {
        match self {
            Sym::Const(_) => None,
            Sym::Node(b, _) => Some(b),
        }
    }

    fn binary(op: Binary, a: Self, b: Self) -> Self {
        match a.builder().or(b.builder()) {
            None => Sym::Const(primitive::binary(op, a.value(), b.value()).0),
            Some(g) => {
                let (x, y) = (g.id(a), g.id(b));
                Sym::Node(g, g.push(Node::Binary(op, x, y)))
            }
        }
    }
}

impl<'b> Add for Sym<'b> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Sym::binary(Binary::Add, self, o)
    }
}

impl<'b> Sub for Sym<'b> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Sym::binary(Binary::Sub, self, o)
    }
}

impl<'b> Mul for Sym<'b> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Sym::binary(Binary::Mul, self, o)
    }
}

impl<'b> Div for Sym<'b> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Sym::binary(Binary::Div, self, o)
    }
}

impl<'b> Neg for Sym<'b> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Unary::Neg)
    }
}

impl<'b> Scalar for Sym<'b> {
    fn constant(v: f64) -> Self {
        Sym::Const(v)
    }

    /// Constants report their value; graph nodes have none until evaluated.
    fn value(&self) -> f64 {
        match self {
            Sym::Const(c) => *c,
            Sym::Node(..) => f64::NAN,
        }
    }

    fn unary(self, op: Unary) -> Self {
        match self {
            Sym::Const(c) => Sym::Const(primitive::unary(op, c).0),
            Sym::Node(g, id) => Sym::Node(g, g.push(Node::Unary(op, id))),
        }
    }

    fn pow(self, e: Self) -> Self {
        Sym::binary(Binary::Pow, self, e)
    }

    fn solve(a: &[Self], b: &[Self], n: usize) -> Result<Vec<Self>, AutodiffError> {
        let Some(g) = a.iter().chain(b).find_map(|s| s.builder()) else {
            let av: Vec<f64> = a.iter().map(|s| s.value()).collect();
            let bv: Vec<f64> = b.iter().map(|s| s.value()).collect();
            return Ok(f64::solve(&av, &bv, n)?.into_iter().map(Sym::Const).collect());
        };
        let a_ids: Vec<usize> = a.iter().map(|&s| g.id(s)).collect();
        let b_ids: Vec<usize> = b.iter().map(|&s| g.id(s)).collect();
        let system = g.inner.borrow().systems.len();
        let first_row = g.inner.borrow().nodes.len();
        g.inner.borrow_mut().systems.push(LinearSystem {
            n,
            a: a_ids,
            b: b_ids,
            first_row,
        });
        Ok((0..n)
            .map(|row| Sym::Node(g, g.push(Node::Solve { system, row })))
            .collect())
    }
}
