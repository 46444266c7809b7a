//! Arithmetic expressions over named state variables.
//!
//! Expressions are parsed from a small infix language, evaluated in `f64`
//! and differentiated symbolically. Trees are immutable once built, so they
//! can be shared across threads freely.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos tan exp log sqrt tanh abs`.

mod diff;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parser::{parse, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
}

impl UnaryOp {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "tanh" => UnaryOp::Tanh,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// A state variable, resolved to its position in the declaration list.
    Var {
        index: usize,
        name: Arc<str>,
    },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{op} of {arg} is undefined")]
    Domain { op: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result {value} from {op}")]
    NonFinite { op: &'static str, value: f64 },
    #[error("variable `{name}` (index {index}) missing from a point of dimension {dim}")]
    MissingVariable {
        name: String,
        index: usize,
        dim: usize,
    },
}

/// Ordered list of component expressions forming a vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpr(pub Vec<Expr>);

impl VectorExpr {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn components(&self) -> &[Expr] {
        &self.0
    }

    /// Evaluates every component; the error carries the failing component.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, (usize, EvalError)> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, e)| e.eval(x).map_err(|err| (i, err)))
            .collect()
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for e in &self.0 {
            e.collect_variables(&mut out);
        }
        out
    }
}

fn checked(op: &'static str, value: f64) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::NonFinite { op, value })
    }
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn var(index: usize, name: &str) -> Self {
        Expr::Var {
            index,
            name: Arc::from(name),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { index, name } => {
                x.get(*index)
                    .copied()
                    .ok_or_else(|| EvalError::MissingVariable {
                        name: name.to_string(),
                        index: *index,
                        dim: x.len(),
                    })
            }
            Expr::Unary(op, a) => {
                let v = a.eval(x)?;
                match op {
                    UnaryOp::Neg => Ok(-v),
                    UnaryOp::Sin => Ok(v.sin()),
                    UnaryOp::Cos => Ok(v.cos()),
                    UnaryOp::Tan => checked("tan", v.tan()),
                    UnaryOp::Exp => checked("exp", v.exp()),
                    UnaryOp::Log => {
                        if v > 0.0 {
                            Ok(v.ln())
                        } else {
                            Err(EvalError::Domain { op: "log", arg: v })
                        }
                    }
                    UnaryOp::Sqrt => {
                        if v >= 0.0 {
                            Ok(v.sqrt())
                        } else {
                            Err(EvalError::Domain { op: "sqrt", arg: v })
                        }
                    }
                    UnaryOp::Tanh => Ok(v.tanh()),
                    UnaryOp::Abs => Ok(v.abs()),
                }
            }
            Expr::Binary(op, a, b) => {
                let l = a.eval(x)?;
                let r = b.eval(x)?;
                match op {
                    BinaryOp::Add => checked("+", l + r),
                    BinaryOp::Sub => checked("-", l - r),
                    BinaryOp::Mul => checked("*", l * r),
                    BinaryOp::Div => {
                        if r == 0.0 {
                            Err(EvalError::DivisionByZero)
                        } else {
                            checked("/", l / r)
                        }
                    }
                    BinaryOp::Pow => {
                        let v = l.powf(r);
                        if v.is_nan() {
                            Err(EvalError::Domain { op: "^", arg: l })
                        } else {
                            checked("^", v)
                        }
                    }
                }
            }
        }
    }

    /// Indices of all variables occurring in the tree.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var { index, .. } => {
                out.insert(*index);
            }
            Expr::Unary(_, a) => a.collect_variables(out),
            Expr::Binary(_, a, b) => {
                a.collect_variables(out);
                b.collect_variables(out);
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var { .. } => false,
            Expr::Unary(_, a) => a.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Replaces every occurrence of variable `index` by the constant `value`.
    pub fn substitute(&self, index: usize, value: f64) -> Expr {
        match self {
            Expr::Var { index: i, .. } if *i == index => Expr::Const(value),
            Expr::Const(_) | Expr::Var { .. } => self.clone(),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute(index, value))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(index, value)),
                Box::new(b.substitute(index, value)),
            ),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var { .. } => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Expr::Const(_) | Expr::Var { .. } => 5,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Unary(_, _) => 5,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
            Expr::Binary(BinaryOp::Pow, _, _) => 4,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints with minimal parentheses such that re-parsing rebuilds the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{:?}", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var { name, .. } => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                a.fmt_child(f, 3)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let (left, right) = match op {
                    BinaryOp::Add | BinaryOp::Sub => (1, 2),
                    BinaryOp::Mul | BinaryOp::Div => (2, 3),
                    BinaryOp::Pow => (5, 3),
                };
                a.fmt_child(f, left)?;
                write!(f, " {} ", op.symbol())?;
                b.fmt_child(f, right)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const XY: [&str; 2] = ["x1", "x2"];

    #[test]
    fn projection_and_sin() {
        assert_eq!(parse("x2", &XY).unwrap().eval(&[3.0, 7.0]).unwrap(), 7.0);
        assert_eq!(
            parse("-sin(x1)", &XY).unwrap().eval(&[0.0, 5.0]).unwrap(),
            0.0
        );
        assert_eq!(
            parse("x1^2 + x2", &XY).unwrap().eval(&[2.0, -1.0]).unwrap(),
            3.0
        );
    }

    #[test]
    fn precedence_rules() {
        let v = |s: &str| parse(s, &XY).unwrap().eval(&[2.0, 3.0]).unwrap();
        assert_eq!(v("-x1^2"), -4.0);
        assert_eq!(v("(-x1)^2"), 4.0);
        assert_eq!(v("x1^x2^2"), 512.0);
        assert_eq!(v("x2 - x1 - 1"), 0.0);
        assert_eq!(v("x2 / x1 / 2"), 0.75);
        assert_eq!(v("1 + x1 * x2"), 7.0);
        assert_eq!(v("2^-1"), 0.5);
        assert_eq!(v("1.5e1 + .5"), 15.5);
        assert_eq!(v("- - x1"), 2.0);
    }

    #[test]
    fn domain_errors() {
        let e = parse("log(x1)", &XY).unwrap();
        assert!(matches!(
            e.eval(&[0.0, 0.0]),
            Err(EvalError::Domain { op: "log", .. })
        ));
        let e = parse("1 / x2", &XY).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), Err(EvalError::DivisionByZero));
        let e = parse("sqrt(x1)", &XY).unwrap();
        assert!(e.eval(&[-1.0, 0.0]).is_err());
        let e = parse("x1^0.5", &XY).unwrap();
        assert!(e.eval(&[-1.0, 0.0]).is_err());
    }

    #[test]
    fn display_reparses_to_same_tree() {
        for src in [
            "x1^2 + x2",
            "-(x1 + x2) * 3",
            "x1 - (x2 - 1)",
            "x1 / (x2 * 2)",
            "(x1^x2)^2",
            "-x1^2",
            "(-x1)^2",
            "2^-x1",
            "sin(x1) * cos(x2) / exp(x1 - x2)",
        ] {
            let e = parse(src, &XY).unwrap();
            let back = parse(&e.to_string(), &XY).unwrap();
            assert_eq!(e, back, "{src} -> {e}");
        }
        let neg = Expr::Binary(
            BinaryOp::Pow,
            Box::new(Expr::Const(-2.0)),
            Box::new(Expr::Const(2.0)),
        );
        let back = parse(&neg.to_string(), &XY).unwrap();
        assert_eq!(back.eval(&[]).unwrap(), 4.0);
    }

    #[test]
    fn substitute_and_variables() {
        let e = parse("x1 * x2 + sin(x2)", &XY).unwrap();
        assert_eq!(e.variables().into_iter().collect::<Vec<_>>(), vec![0, 1]);
        let s = e.substitute(1, 0.0);
        assert_eq!(s.variables().into_iter().collect::<Vec<_>>(), vec![0]);
        assert_eq!(s.eval(&[5.0, 9.0]).unwrap(), 0.0);
    }
}
