//! Local value/derivative rules shared by every differentiation route.
//!
//! The graph interpreter, the reverse tape and the forward duals all take
//! their partials from here so that the routes agree to the last bit.

/// Single-argument primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    Tanh,
    Softplus,
    Sigmoid,
    /// `x` for `x > 0`, `slope * x` otherwise (the kink belongs to the negative side).
    LeakyRelu(f64),
    /// Derivative factor of [`Unary::LeakyRelu`]: 1 for `x > 0`, `slope` otherwise.
    Step(f64),
    /// Sign with `sign(0) = 0`.
    Sign,
    /// Absolute value; subgradient 0 at the kink.
    Abs,
    /// Power with a constant exponent.
    PowC(f64),
}

/// Two-argument primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    /// `a^b` for a strictly positive base.
    Pow,
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Ln => "log",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Sqrt => "sqrt",
            Unary::Tanh => "tanh",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::LeakyRelu(_) => "leaky-relu",
            Unary::Step(_) => "step",
            Unary::Sign => "sign",
            Unary::Abs => "abs",
            Unary::PowC(_) => "pow",
        }
    }

    /// Returns `false` when `x` is outside the primitive's domain.
    pub fn in_domain(self, x: f64) -> bool {
        match self {
            Unary::Ln => x > 0.0,
            Unary::Sqrt => x >= 0.0,
            Unary::PowC(e) => x > 0.0 || (e.fract() == 0.0 && (x != 0.0 || e >= 0.0)),
            _ => true,
        }
    }
}

impl Binary {
    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Pow => "pow",
        }
    }

    pub fn in_domain(self, a: f64, b: f64) -> bool {
        match self {
            Binary::Div => b != 0.0,
            Binary::Pow => a > 0.0,
            _ => true,
        }
    }
}

#[inline]
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn powc(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        x * x
    } else if e == 1.0 {
        x
    } else if e == 0.0 {
        1.0
    } else if e.fract() == 0.0 && e.abs() < 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Value and derivative of a unary primitive.
#[inline]
pub fn unary(op: Unary, x: f64) -> (f64, f64) {
    match op {
        Unary::Neg => (-x, -1.0),
        Unary::Exp => {
            let e = x.exp();
            (e, e)
        }
        Unary::Ln => (x.ln(), 1.0 / x),
        Unary::Sin => (x.sin(), x.cos()),
        Unary::Cos => (x.cos(), -x.sin()),
        Unary::Sqrt => {
            let s = x.sqrt();
            (s, 0.5 / s)
        }
        Unary::Tanh => {
            let t = x.tanh();
            (t, 1.0 - t * t)
        }
        Unary::Softplus => (softplus(x), sigmoid(x)),
        Unary::Sigmoid => {
            let s = sigmoid(x);
            (s, s * (1.0 - s))
        }
        Unary::LeakyRelu(a) => {
            if x > 0.0 {
                (x, 1.0)
            } else {
                (a * x, a)
            }
        }
        Unary::Step(a) => (if x > 0.0 { 1.0 } else { a }, 0.0),
        Unary::Sign => (sign0(x), 0.0),
        Unary::Abs => (x.abs(), sign0(x)),
        Unary::PowC(e) => {
            if e == 0.0 {
                (1.0, 0.0)
            } else {
                (powc(x, e), e * powc(x, e - 1.0))
            }
        }
    }
}

/// Value and both partials of a binary primitive.
#[inline]
pub fn binary(op: Binary, a: f64, b: f64) -> (f64, f64, f64) {
    match op {
        Binary::Add => (a + b, 1.0, 1.0),
        Binary::Sub => (a - b, 1.0, -1.0),
        Binary::Mul => (a * b, b, a),
        Binary::Div => {
            let v = a / b;
            (v, 1.0 / b, -v / b)
        }
        Binary::Pow => {
            let v = a.powf(b);
            (v, b * a.powf(b - 1.0), v * a.ln())
        }
    }
}
