//! Linear, control-affine and strict-feedback system models.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr, VectorExpr};
use crate::linalg;

/// Relative singular-value threshold separating rank strata.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Step for finite-difference Jacobians (fallback and cross-check only).
pub const FD_STEP: f64 = 1e-6;
pub const DEFAULT_GRID_CAP: usize = 1_000_000;

/// Control-affine system `x' = f(x) + sum_i u_i g_i(x)` on R^n.
#[derive(Debug, Clone)]
pub struct ControlAffineSystem {
    states: Vec<String>,
    drift: VectorExpr,
    controls: Vec<VectorExpr>,
    drift_jacobian: Vec<Vec<Expr>>,
    control_jacobians: Vec<Vec<Vec<Expr>>>,
}

fn jacobian_exprs(v: &VectorExpr, n: usize) -> Vec<Vec<Expr>> {
    v.components()
        .iter()
        .map(|e| (0..n).map(|j| e.derivative(j)).collect())
        .collect()
}

pub(crate) fn eval_matrix(rows: &[Vec<Expr>], x: &[f64], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    let mut out = DMatrix::zeros(n, c);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = e.eval(x).map_err(|source| Error::Eval {
                field: field.to_string(),
                component: i,
                source,
            })?;
        }
    }
    Ok(out)
}

impl ControlAffineSystem {
    pub fn new(states: Vec<String>, drift: VectorExpr, controls: Vec<VectorExpr>) -> Result<Self> {
        let n = states.len();
        let m = controls.len();
        if n == 0 {
            return Err(Error::InvalidSystem("no states declared".into()));
        }
        if m == 0 || m > n {
            return Err(Error::InvalidSystem(format!(
                "need 1 <= m <= n controls, got m = {m}, n = {n}"
            )));
        }
        if drift.len() != n {
            return Err(Error::InvalidSystem(format!(
                "drift has {} components, expected {n}",
                drift.len()
            )));
        }
        for (i, g) in controls.iter().enumerate() {
            if g.len() != n {
                return Err(Error::InvalidSystem(format!(
                    "control {} has {} components, expected {n}",
                    i + 1,
                    g.len()
                )));
            }
        }
        let fields = std::iter::once(&drift).chain(controls.iter());
        for v in fields {
            if let Some(&bad) = v.variables().iter().find(|&&i| i >= n) {
                return Err(Error::InvalidSystem(format!(
                    "expression references variable index {bad} outside the {n} states"
                )));
            }
        }
        let drift_jacobian = jacobian_exprs(&drift, n);
        let control_jacobians = controls.iter().map(|g| jacobian_exprs(g, n)).collect();
        Ok(Self {
            states,
            drift,
            controls,
            drift_jacobian,
            control_jacobians,
        })
    }

    /// Builds a system from expression source strings.
    pub fn from_strings<S: AsRef<str>>(
        states: &[S],
        drift: &[S],
        controls: &[Vec<S>],
    ) -> Result<Self> {
        let names: Vec<&str> = states.iter().map(AsRef::as_ref).collect();
        let parse_all = |srcs: &[S]| -> Result<VectorExpr> {
            Ok(VectorExpr(
                srcs.iter()
                    .map(|s| parse(s.as_ref(), &names))
                    .collect::<std::result::Result<_, _>>()?,
            ))
        };
        let drift = parse_all(drift)?;
        let controls = controls
            .iter()
            .map(|g| parse_all(g))
            .collect::<Result<_>>()?;
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            drift,
            controls,
        )
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn state_names(&self) -> Vec<&str> {
        self.states.iter().map(String::as_str).collect()
    }

    pub fn drift(&self) -> &VectorExpr {
        &self.drift
    }

    pub fn controls(&self) -> &[VectorExpr] {
        &self.controls
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "point has dimension {}, system has {}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    pub fn eval_drift(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        self.drift
            .eval(x)
            .map(DVector::from_vec)
            .map_err(|(component, source)| Error::Eval {
                field: "drift".into(),
                component,
                source,
            })
    }

    /// `n x m` matrix whose column `i` is `g_i(x)`.
    pub fn control_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let mut g = DMatrix::zeros(self.n(), self.m());
        for (i, field) in self.controls.iter().enumerate() {
            let col = field.eval(x).map_err(|(component, source)| Error::Eval {
                field: format!("control {}", i + 1),
                component,
                source,
            })?;
            g.set_column(i, &DVector::from_vec(col));
        }
        Ok(g)
    }

    /// Symbolic Jacobian of the drift.
    pub fn drift_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        eval_matrix(&self.drift_jacobian, x, "drift jacobian")
    }

    /// Symbolic Jacobian of control field `i`.
    pub fn control_jacobian(&self, i: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        eval_matrix(&self.control_jacobians[i], x, "control jacobian")
    }

    /// Central-difference Jacobian of the drift.
    pub fn drift_jacobian_fd(&self, x: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let n = self.n();
        let mut jac = DMatrix::zeros(n, n);
        let mut p = x.to_vec();
        for j in 0..n {
            p[j] = x[j] + step;
            let fp = self.eval_drift(&p)?;
            p[j] = x[j] - step;
            let fm = self.eval_drift(&p)?;
            p[j] = x[j];
            jac.set_column(j, &((fp - fm) / (2.0 * step)));
        }
        Ok(jac)
    }

    /// `m` minus the numerical rank of the control matrix at `x`.
    pub fn distribution_corank(&self, x: &[f64], rank_tol: f64) -> Result<usize> {
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::Precondition(format!(
                "rank_tol {rank_tol} outside (0, 1)"
            )));
        }
        let g = self.control_matrix(x)?;
        Ok(self.m() - linalg::numerical_rank(&g, rank_tol))
    }

    /// Labels every point of `grid` with its corank.
    pub fn stratify(
        &self,
        grid: &GridSpec,
        rank_tol: f64,
        cap: usize,
    ) -> Result<RankStratification> {
        if grid.dim() != self.n() {
            return Err(Error::Dimension(format!(
                "grid has {} axes, system has {} states",
                grid.dim(),
                self.n()
            )));
        }
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::Precondition(format!(
                "rank_tol {rank_tol} outside (0, 1)"
            )));
        }
        let points = grid.points(cap)?;
        let labels: Vec<StratumLabel> = points
            .into_par_iter()
            .map(|point| {
                let corank = self.distribution_corank(&point, rank_tol).ok();
                StratumLabel { point, corank }
            })
            .collect();
        let regular = labels.iter().filter(|l| l.corank == Some(0)).count();
        let regular_fraction = regular as f64 / labels.len() as f64;
        Ok(RankStratification {
            grid: grid.clone(),
            labels,
            regular_fraction,
        })
    }
}

/// Axis-aligned box sampled with a uniform step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, step: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension(
                "grid bounds must have equal, nonzero length".into(),
            ));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Precondition(format!(
                "grid step {step} must be positive"
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Precondition("grid box is degenerate".into()));
        }
        Ok(Self { lo, hi, step })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], step)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Sample values along one axis. Values within `1e-9 * step` of zero
    /// are snapped to exactly zero so that grids straddling the origin
    /// contain it.
    pub fn axis(&self, k: usize) -> Vec<f64> {
        let span = self.hi[k] - self.lo[k];
        let count = (span / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let v = self.lo[k] + i as f64 * self.step;
                if v.abs() < 1e-9 * self.step {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        (0..self.dim())
            .map(|k| self.axis(k).len())
            .fold(1usize, |acc, c| acc.saturating_mul(c))
    }

    /// All grid points, first axis varying slowest.
    pub fn points(&self, cap: usize) -> Result<Vec<Vec<f64>>> {
        let required = self.count();
        if required > cap {
            return Err(Error::GridTooLarge { required, cap });
        }
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|k| self.axis(k)).collect();
        let mut out = Vec::with_capacity(required);
        let mut idx = vec![0usize; self.dim()];
        loop {
            out.push(idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect());
            let mut k = self.dim();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= lo - slack && *v <= hi + slack)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        linalg::euclid(&self.lo, &self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumLabel {
    pub point: Vec<f64>,
    /// `None` when the control fields cannot be evaluated at the point.
    pub corank: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RankStratification {
    pub grid: GridSpec,
    pub labels: Vec<StratumLabel>,
    pub regular_fraction: f64,
}

impl RankStratification {
    pub fn with_corank(&self, corank: usize) -> impl Iterator<Item = &StratumLabel> {
        self.labels.iter().filter(move |l| l.corank == Some(corank))
    }

    pub fn undefined(&self) -> impl Iterator<Item = &StratumLabel> {
        self.labels.iter().filter(|l| l.corank.is_none())
    }
}

/// `x' = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearControlSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearControlSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        if m == 0 || m > n {
            return Err(Error::InvalidSystem(format!(
                "need 1 <= m <= n, got m = {m}"
            )));
        }
        let rank = linalg::numerical_rank(&b, rank_tol);
        if rank < m {
            return Err(Error::RankDeficient { rank, m });
        }
        Ok(Self { a, b })
    }

    /// Single-input controller-canonical form with last row `-a`.
    pub fn controller_canonical(coeffs: &[f64]) -> Result<Self> {
        let n = coeffs.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        for (j, c) in coeffs.iter().enumerate() {
            a[(n - 1, j)] = -c;
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        Self::new(a, b, DEFAULT_RANK_TOL)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// The same system with `f = A x` and constant `g_i = B e_i`.
    pub fn to_control_affine(&self) -> ControlAffineSystem {
        let n = self.n();
        let states: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let drift = (0..n)
            .map(|i| {
                let mut terms = (0..n).filter(|&j| self.a[(i, j)] != 0.0).map(|j| {
                    Expr::Binary(
                        crate::expr::BinaryOp::Mul,
                        Box::new(Expr::Const(self.a[(i, j)])),
                        Box::new(Expr::var(j, &states[j])),
                    )
                });
                let first = terms.next().unwrap_or(Expr::Const(0.0));
                terms.fold(first, |acc, t| {
                    Expr::Binary(crate::expr::BinaryOp::Add, Box::new(acc), Box::new(t))
                })
            })
            .collect();
        let controls = (0..self.m())
            .map(|k| VectorExpr((0..n).map(|i| Expr::Const(self.b[(i, k)])).collect()))
            .collect();
        ControlAffineSystem::new(states, VectorExpr(drift), controls)
            .expect("linear system is well formed")
    }
}

/// Triangular form `x_i' = f_i(x_1..x_i) + g_i(x_1..x_i) x_{i+1}`,
/// `x_n' = f_n(x) + g_n(x) u`.
#[derive(Debug, Clone)]
pub struct StrictFeedbackSystem {
    states: Vec<String>,
    f: Vec<Expr>,
    g: Vec<Expr>,
}

impl StrictFeedbackSystem {
    pub fn new(states: Vec<String>, f: Vec<Expr>, g: Vec<Expr>) -> Result<Self> {
        let n = states.len();
        if f.len() != n || g.len() != n {
            return Err(Error::InvalidSystem(format!(
                "strict-feedback form needs {n} f and g terms, got {} and {}",
                f.len(),
                g.len()
            )));
        }
        for i in 0..n.saturating_sub(1) {
            let mut vars = f[i].variables();
            vars.extend(g[i].variables());
            if let Some(&bad) = vars.iter().find(|&&v| v > i) {
                return Err(Error::InvalidSystem(format!(
                    "row {} depends on {}, breaking the triangular pattern",
                    i + 1,
                    states.get(bad).map_or("?", String::as_str)
                )));
            }
        }
        Ok(Self { states, f, g })
    }

    pub fn from_strings<S: AsRef<str>>(states: &[S], f: &[S], g: &[S]) -> Result<Self> {
        let names: Vec<&str> = states.iter().map(AsRef::as_ref).collect();
        let p = |v: &[S]| -> Result<Vec<Expr>> {
            v.iter()
                .map(|s| parse(s.as_ref(), &names).map_err(Error::from))
                .collect()
        };
        Self::new(names.iter().map(|s| s.to_string()).collect(), p(f)?, p(g)?)
    }

    /// Recovers `f_i, g_i` from a single-input control-affine system whose
    /// drift rows are affine in the next state.
    pub fn from_control_affine(sys: &ControlAffineSystem) -> Result<Self> {
        let n = sys.n();
        if sys.m() != 1 {
            return Err(Error::InvalidSystem(
                "strict-feedback form needs one control".into(),
            ));
        }
        let gfield = &sys.controls()[0];
        for (i, e) in gfield.components()[..n - 1].iter().enumerate() {
            if !matches!(e, Expr::Const(c) if *c == 0.0) {
                return Err(Error::InvalidSystem(format!(
                    "control component {} must be 0 in strict-feedback form",
                    i + 1
                )));
            }
        }
        let mut f = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let row = &sys.drift().components()[i];
            if let Some(&bad) = row.variables().iter().find(|&&v| v > i + 1) {
                return Err(Error::InvalidSystem(format!(
                    "drift row {} depends on {}",
                    i + 1,
                    sys.states()[bad]
                )));
            }
            let gi = row.derivative(i + 1);
            if gi.variables().contains(&(i + 1)) {
                // Affinity in x_{i+1}: the coefficient must not vary with it.
                let probe = [-1.3, 0.4, 2.1];
                let mut x = vec![0.37; n];
                let vals: Vec<f64> = probe
                    .iter()
                    .filter_map(|&t| {
                        x[i + 1] = t;
                        gi.eval(&x).ok()
                    })
                    .collect();
                if vals
                    .windows(2)
                    .any(|w| (w[0] - w[1]).abs() > 1e-12 * (1.0 + w[0].abs()))
                {
                    return Err(Error::InvalidSystem(format!(
                        "drift row {} is not affine in {}",
                        i + 1,
                        sys.states()[i + 1]
                    )));
                }
                g.push(gi.substitute(i + 1, 0.0));
            } else {
                g.push(gi);
            }
            f.push(row.substitute(i + 1, 0.0));
        }
        f.push(sys.drift().components()[n - 1].clone());
        g.push(gfield.components()[n - 1].clone());
        Self::new(sys.states().to_vec(), f, g)
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn f(&self) -> &[Expr] {
        &self.f
    }

    pub fn g(&self) -> &[Expr] {
        &self.g
    }

    pub fn to_control_affine(&self) -> ControlAffineSystem {
        let n = self.n();
        let mut drift = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let coupling = Expr::Binary(
                crate::expr::BinaryOp::Mul,
                Box::new(self.g[i].clone()),
                Box::new(Expr::var(i + 1, &self.states[i + 1])),
            );
            drift.push(Expr::Binary(
                crate::expr::BinaryOp::Add,
                Box::new(self.f[i].clone()),
                Box::new(coupling),
            ));
        }
        drift.push(self.f[n - 1].clone());
        let mut control: Vec<Expr> = vec![Expr::Const(0.0); n - 1];
        control.push(self.g[n - 1].clone());
        ControlAffineSystem::new(
            self.states.clone(),
            VectorExpr(drift),
            vec![VectorExpr(control)],
        )
        .expect("triangular system is well formed")
    }
}
