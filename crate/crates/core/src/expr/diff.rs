//! Symbolic partial derivatives.
//!
//! Only trivial constant folding (0 and 1 identities) is applied while the
//! derivative tree is built; results are otherwise unsimplified.

use super::{BinaryOp, Expr, UnaryOp};

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn unary(op: UnaryOp, a: Expr) -> Expr {
    Expr::Unary(op, Box::new(a))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(v) => c(-v),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        a => unary(UnaryOp::Neg, a),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_const(&a, 0.0) {
        return b;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b))
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_const(&b, 0.0) {
        return a;
    }
    if is_const(&a, 0.0) {
        return neg(b);
    }
    Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_const(&a, 0.0) || is_const(&b, 0.0) {
        return c(0.0);
    }
    if is_const(&a, 1.0) {
        return b;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_const(&a, 0.0) {
        return c(0.0);
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b))
}

fn pow(a: Expr, b: Expr) -> Expr {
    if is_const(&b, 1.0) {
        return a;
    }
    Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b))
}

impl Expr {
    /// Partial derivative with respect to the variable at `index`.
    pub fn derivative(&self, index: usize) -> Expr {
        match self {
            Expr::Const(_) => c(0.0),
            Expr::Var { index: i, .. } => c(if *i == index { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.derivative(index);
                if is_const(&da, 0.0) {
                    return c(0.0);
                }
                let u = (**a).clone();
                match op {
                    UnaryOp::Neg => neg(da),
                    UnaryOp::Sin => mul(unary(UnaryOp::Cos, u), da),
                    UnaryOp::Cos => mul(neg(unary(UnaryOp::Sin, u)), da),
                    UnaryOp::Tan => div(da, pow(unary(UnaryOp::Cos, u), c(2.0))),
                    UnaryOp::Exp => mul(unary(UnaryOp::Exp, u), da),
                    UnaryOp::Log => div(da, u),
                    UnaryOp::Sqrt => div(da, mul(c(2.0), unary(UnaryOp::Sqrt, u))),
                    UnaryOp::Tanh => mul(sub(c(1.0), pow(unary(UnaryOp::Tanh, u), c(2.0))), da),
                    // u/|u| is undefined at u = 0, which surfaces at evaluation.
                    UnaryOp::Abs => mul(div(u.clone(), unary(UnaryOp::Abs, u)), da),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.derivative(index);
                let db = b.derivative(index);
                let (u, v) = ((**a).clone(), (**b).clone());
                match op {
                    BinaryOp::Add => add(da, db),
                    BinaryOp::Sub => sub(da, db),
                    BinaryOp::Mul => add(mul(da, v), mul(u, db)),
                    BinaryOp::Div => {
                        if is_const(&db, 0.0) {
                            div(da, v)
                        } else {
                            div(sub(mul(da, v.clone()), mul(u, db)), pow(v, c(2.0)))
                        }
                    }
                    BinaryOp::Pow => {
                        if is_const(&db, 0.0) {
                            // d(u^k) = k u^(k-1) u'
                            let k_minus_1 = match &v {
                                Expr::Const(k) => c(k - 1.0),
                                _ => sub(v.clone(), c(1.0)),
                            };
                            mul(mul(v, pow(u, k_minus_1)), da)
                        } else if is_const(&da, 0.0) {
                            // d(a^v) = a^v ln(a) v'
                            mul(mul(self.clone(), unary(UnaryOp::Log, u)), db)
                        } else {
                            // d(u^v) = u^v (v' ln u + v u'/u)
                            mul(
                                self.clone(),
                                add(mul(db, unary(UnaryOp::Log, u.clone())), div(mul(v, da), u)),
                            )
                        }
                    }
                }
            }
        }
    }

    /// Partial derivative with respect to the variable named `var`.
    ///
    /// Returns `None` when `var` does not occur among `variables`.
    pub fn differentiate(&self, var: &str, variables: &[&str]) -> Option<Expr> {
        variables
            .iter()
            .position(|v| *v == var)
            .map(|i| self.derivative(i))
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::parse;

    const XY: [&str; 2] = ["x1", "x2"];

    fn central(e: &crate::expr::Expr, x: &[f64], i: usize, h: f64) -> f64 {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        (e.eval(&p).unwrap() - e.eval(&m).unwrap()) / (2.0 * h)
    }

    #[test]
    fn named_examples() {
        let e = parse("x1^2 + x2", &XY).unwrap();
        let d = e.differentiate("x1", &XY).unwrap();
        assert_eq!(d.eval(&[2.0, -1.0]).unwrap(), 4.0);

        let e = parse("x1*x2", &XY).unwrap();
        let d = e.differentiate("x2", &XY).unwrap();
        assert_eq!(d.eval(&[3.0, 7.0]).unwrap(), 3.0);

        let e = parse("-sin(x1)", &XY).unwrap();
        let d = e.differentiate("x1", &XY).unwrap();
        let x = [std::f64::consts::FRAC_PI_2, 0.0];
        let fd = central(&e, &x, 0, 1e-5);
        assert!(fd.abs() < 1e-8);
        assert!((d.eval(&x).unwrap() - fd).abs() < 1e-8);

        assert!(e.differentiate("y", &XY).is_none());
    }

    #[test]
    fn abs_at_zero_is_an_evaluation_error() {
        let e = parse("abs(x1)", &XY).unwrap();
        let d = e.derivative(0);
        assert!(d.eval(&[0.0, 0.0]).is_err());
        assert_eq!(d.eval(&[-2.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn power_rules_match_finite_differences() {
        for src in [
            "x1^3",
            "2^x1",
            "x1^x2",
            "x1^-2",
            "(x1 + x2)^2.5",
            "x1^(x2 - 1)",
        ] {
            let e = parse(src, &XY).unwrap();
            for i in 0..2 {
                let d = e.derivative(i);
                let x = [1.3, 0.7];
                let fd = central(&e, &x, i, 1e-6);
                let sym = d.eval(&x).unwrap();
                assert!(
                    (sym - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{src}/{i}: {sym} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn constant_exponent_works_for_negative_base() {
        let e = parse("x1^2", &XY).unwrap();
        assert_eq!(e.derivative(0).eval(&[-3.0, 0.0]).unwrap(), -6.0);
    }
}
