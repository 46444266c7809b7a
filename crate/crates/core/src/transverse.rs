//! Control-transverse manifolds `W`, their induced dynamics and the
//! equilibria `W ∩ Sigma`.
//!
//! `W` is handled in graph form `x_dep = h(x_ind)` over a coordinate split.
//! Level-set input `phi(x) = 0` is accepted too; a split is picked at an
//! anchor point and the graph is evaluated through the implicit function
//! theorem. Chart coordinates are always the independent states.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::linalg;
use crate::sigma::{residual_jacobian, sigma_residual, ResidualFrame};
use crate::sysmodel::{eval_matrix, ControlAffineSystem, DEFAULT_RANK_TOL, FD_STEP};

/// Distance from `W` accepted as "on `W`" in preconditions, relative to
/// `max(1, |x|)`.
pub const ON_MANIFOLD_TOL: f64 = 1e-8;
const LIFT_MAX_ITER: usize = 50;
const SOLVE_RCOND: f64 = 1e-13;

#[derive(Debug, Clone)]
enum Form {
    Graph {
        h: Vec<Expr>,
        /// `dh[i][k] = d h_i / d x_{ind[k]}`.
        dh: Vec<Vec<Expr>>,
        d2h: Vec<Vec<Vec<Expr>>>,
    },
    LevelSet {
        phi: Vec<Expr>,
        /// `m x n`.
        dphi: Vec<Vec<Expr>>,
        /// Dependent coordinates where lifting starts.
        anchor_dep: Vec<f64>,
    },
}

/// An `(n - m)`-dimensional submanifold, optionally depending on one
/// scalar parameter.
#[derive(Debug, Clone)]
pub struct TransverseManifold {
    n: usize,
    ind: Vec<usize>,
    dep: Vec<usize>,
    form: Form,
    param: Option<String>,
    mu: f64,
}

fn variable_names<'a>(states: &'a [String], param: Option<&'a str>) -> Vec<&'a str> {
    states.iter().map(String::as_str).chain(param).collect()
}

fn eval_vec(exprs: &[Expr], v: &[f64], field: &str) -> Result<DVector<f64>> {
    exprs
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.eval(v).map_err(|source| Error::Eval {
                field: field.into(),
                component: i,
                source,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

impl TransverseManifold {
    /// `W = { x_dep = h(x_ind) }` with 0-based index lists. `h` may use the
    /// independent states and `param`.
    pub fn graph<S: AsRef<str>>(
        states: &[String],
        ind: Vec<usize>,
        dep: Vec<usize>,
        h: &[S],
        param: Option<&str>,
    ) -> Result<Self> {
        let n = states.len();
        let mut seen = vec![false; n];
        for &i in ind.iter().chain(&dep) {
            if i >= n {
                return Err(Error::InvalidManifold(format!(
                    "state index {} out of range 1..{n}",
                    i + 1
                )));
            }
            if seen[i] {
                return Err(Error::InvalidManifold(format!(
                    "state index {} appears in both ind and dep (or twice)",
                    i + 1
                )));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidManifold(format!(
                "state index {} is in neither ind nor dep",
                missing + 1
            )));
        }
        if dep.is_empty() || ind.is_empty() {
            return Err(Error::InvalidManifold(
                "ind and dep must both be nonempty".into(),
            ));
        }
        if h.len() != dep.len() {
            return Err(Error::InvalidManifold(format!(
                "{} graph functions for {} dependent states",
                h.len(),
                dep.len()
            )));
        }
        Self::check_param(states, param)?;
        let names = variable_names(states, param);
        let h: Vec<Expr> = h
            .iter()
            .map(|s| parse(s.as_ref(), &names))
            .collect::<std::result::Result<_, _>>()?;
        for (i, e) in h.iter().enumerate() {
            if let Some(&d) = e.variables().iter().find(|v| dep.contains(v)) {
                return Err(Error::InvalidManifold(format!(
                    "graph function {} uses dependent state `{}`",
                    i + 1,
                    states[d]
                )));
            }
        }
        let dh: Vec<Vec<Expr>> = h
            .iter()
            .map(|e| ind.iter().map(|&k| e.derivative(k)).collect())
            .collect();
        let d2h = dh
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| ind.iter().map(|&l| e.derivative(l)).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            ind,
            dep,
            form: Form::Graph { h, dh, d2h },
            param: param.map(str::to_string),
            mu: 0.0,
        })
    }

    /// `W = { phi(x) = 0 }`. The split puts in `dep` the `m` columns of
    /// `grad phi(anchor)` with the best-conditioned square block, later
    /// columns winning ties.
    pub fn level_set<S: AsRef<str>>(
        states: &[String],
        phi: &[S],
        param: Option<&str>,
        mu: f64,
        anchor: &[f64],
    ) -> Result<Self> {
        let n = states.len();
        let m = phi.len();
        if m == 0 || m >= n {
            return Err(Error::InvalidManifold(format!(
                "need 1 <= m < n defining functions, got {m} for n = {n}"
            )));
        }
        if anchor.len() != n {
            return Err(Error::Dimension(format!(
                "anchor has {} entries, expected {n}",
                anchor.len()
            )));
        }
        Self::check_param(states, param)?;
        let names = variable_names(states, param);
        let phi: Vec<Expr> = phi
            .iter()
            .map(|s| parse(s.as_ref(), &names))
            .collect::<std::result::Result<_, _>>()?;
        let dphi: Vec<Vec<Expr>> = phi
            .iter()
            .map(|e| (0..n).map(|j| e.derivative(j)).collect())
            .collect();
        let mut v = anchor.to_vec();
        if param.is_some() {
            v.push(mu);
        }
        let grad = eval_matrix(&dphi, &v, "level set gradient")?;
        let scale = grad.norm().max(1.0);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for cols in combinations(n, m) {
            let s = linalg::smallest_singular_value(&select_columns(&grad, &cols));
            if best.as_ref().is_none_or(|(b, _)| s >= *b) {
                best = Some((s, cols));
            }
        }
        let (margin, dep) = best.expect("at least one split");
        if margin <= 1e-8 * scale {
            return Err(Error::NoValidSplit(format!(
                "defining functions are singular at the anchor {anchor:?}"
            )));
        }
        let ind = (0..n).filter(|i| !dep.contains(i)).collect();
        let anchor_dep = dep.iter().map(|&d| anchor[d]).collect();
        let mut w = Self {
            n,
            ind,
            dep,
            form: Form::LevelSet {
                phi,
                dphi,
                anchor_dep,
            },
            param: param.map(str::to_string),
            mu,
        };
        let lifted = w.lift(&w.chart(anchor))?;
        if let Form::LevelSet { anchor_dep, .. } = &mut w.form {
            *anchor_dep = w.dep.iter().map(|&d| lifted[d]).collect();
        }
        Ok(w)
    }

    fn check_param(states: &[String], param: Option<&str>) -> Result<()> {
        if let Some(p) = param {
            if states.iter().any(|s| s == p) {
                return Err(Error::InvalidManifold(format!(
                    "parameter `{p}` shadows a state"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.dep.len()
    }

    /// Dimension of `W`.
    pub fn dim(&self) -> usize {
        self.ind.len()
    }

    pub fn ind(&self) -> &[usize] {
        &self.ind
    }

    pub fn dep(&self) -> &[usize] {
        &self.dep
    }

    pub fn param(&self) -> Option<&str> {
        self.param.as_deref()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn set_mu(&mut self, mu: f64) {
        self.mu = mu;
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        let mut w = self.clone();
        w.mu = mu;
        w
    }

    pub fn is_graph(&self) -> bool {
        matches!(self.form, Form::Graph { .. })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "point has dimension {}, W lives in R^{}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    fn vars(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        if self.param.is_some() {
            v.push(self.mu);
        }
        v
    }

    /// Chart coordinates (the independent states) of `x`.
    pub fn chart(&self, x: &[f64]) -> Vec<f64> {
        self.ind.iter().map(|&i| x[i]).collect()
    }

    fn embed(&self, y: &[f64], z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.ind.iter().enumerate() {
            x[i] = y[k];
        }
        for (k, &d) in self.dep.iter().enumerate() {
            x[d] = z[k];
        }
        x
    }

    /// The point of `W` over chart coordinates `y`.
    pub fn lift(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "chart point has {} entries, expected {}",
                y.len(),
                self.dim()
            )));
        }
        match &self.form {
            Form::Graph { h, .. } => {
                let x = self.embed(y, &vec![0.0; self.m()]);
                let z = eval_vec(h, &self.vars(&x), "graph function")?;
                Ok(self.embed(y, z.as_slice()))
            }
            Form::LevelSet {
                phi,
                dphi,
                anchor_dep,
            } => {
                let mut z = DVector::from_column_slice(anchor_dep);
                for _ in 0..LIFT_MAX_ITER {
                    let x = self.embed(y, z.as_slice());
                    let v = self.vars(&x);
                    let val = eval_vec(phi, &v, "defining function")?;
                    let grad = eval_matrix(dphi, &v, "level set gradient")?;
                    let block = select_columns(&grad, &self.dep);
                    if linalg::smallest_singular_value(&block) <= 1e-12 * grad.norm().max(1.0) {
                        return Err(Error::NoValidSplit(format!(
                            "dependent block singular at {x:?}"
                        )));
                    }
                    let Some(dz) = block.lu().solve(&val) else {
                        return Err(Error::NoValidSplit(format!(
                            "dependent block singular at {x:?}"
                        )));
                    };
                    z -= &dz;
                    if dz.norm() <= 1e-15 * (1.0 + z.norm()) || val.norm() < 1e-15 {
                        return Ok(self.embed(y, z.as_slice()));
                    }
                }
                let x = self.embed(y, z.as_slice());
                let residual = eval_vec(phi, &self.vars(&x), "defining function")?.norm();
                if residual < 1e-12 {
                    Ok(x)
                } else {
                    Err(Error::Convergence {
                        iterations: LIFT_MAX_ITER,
                        residual,
                    })
                }
            }
        }
    }

    /// Defining functions `s(x)`; `W = { s = 0 }`. For a graph
    /// `s = x_dep - h(x_ind)`.
    pub fn defining(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let v = self.vars(x);
        match &self.form {
            Form::Graph { h, .. } => {
                let hv = eval_vec(h, &v, "graph function")?;
                Ok(DVector::from_iterator(
                    self.m(),
                    self.dep.iter().zip(hv.iter()).map(|(&d, hi)| x[d] - hi),
                ))
            }
            Form::LevelSet { phi, .. } => eval_vec(phi, &v, "defining function"),
        }
    }

    /// `m x n` gradient of the defining functions.
    pub fn defining_gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let v = self.vars(x);
        match &self.form {
            Form::Graph { dh, .. } => {
                let d = eval_matrix(dh, &v, "graph derivative")?;
                let mut out = DMatrix::zeros(self.m(), self.n);
                for (i, &di) in self.dep.iter().enumerate() {
                    out[(i, di)] = 1.0;
                    for (k, &ik) in self.ind.iter().enumerate() {
                        out[(i, ik)] = -d[(i, k)];
                    }
                }
                Ok(out)
            }
            Form::LevelSet { dphi, .. } => eval_matrix(dphi, &v, "level set gradient"),
        }
    }

    /// `d x_dep / d x_ind` on `W` (`m x (n - m)`).
    fn graph_slope(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.vars(x);
        match &self.form {
            Form::Graph { dh, .. } => eval_matrix(dh, &v, "graph derivative"),
            Form::LevelSet { dphi, .. } => {
                let grad = eval_matrix(dphi, &v, "level set gradient")?;
                let block = select_columns(&grad, &self.dep);
                let rhs = select_columns(&grad, &self.ind);
                block.lu().solve(&(-rhs)).ok_or_else(|| {
                    Error::NoValidSplit(format!("dependent block singular at {x:?}"))
                })
            }
        }
    }

    /// `n x (n - m)` tangent basis at `x` in chart coordinates: column `k` is
    /// `e_{ind[k]} + sum_i (d h_i / d y_k) e_{dep[i]}`.
    pub fn tangent_basis(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let slope = self.graph_slope(x)?;
        let mut t = DMatrix::zeros(self.n, self.dim());
        for (k, &ik) in self.ind.iter().enumerate() {
            t[(ik, k)] = 1.0;
            for (i, &di) in self.dep.iter().enumerate() {
                t[(di, k)] = slope[(i, k)];
            }
        }
        Ok(t)
    }

    /// Derivative of the tangent basis along chart coordinate `j`.
    pub fn tangent_derivative(&self, x: &[f64], j: usize) -> Result<DMatrix<f64>> {
        match &self.form {
            Form::Graph { d2h, .. } => {
                let v = self.vars(x);
                let mut out = DMatrix::zeros(self.n, self.dim());
                for (i, &di) in self.dep.iter().enumerate() {
                    for k in 0..self.dim() {
                        out[(di, k)] = d2h[i][k][j].eval(&v).map_err(|source| Error::Eval {
                            field: "graph second derivative".into(),
                            component: i,
                            source,
                        })?;
                    }
                }
                Ok(out)
            }
            Form::LevelSet { .. } => {
                let y = self.chart(x);
                let at = |delta: f64| -> Result<DMatrix<f64>> {
                    let mut yy = y.clone();
                    yy[j] += delta;
                    self.tangent_basis(&self.lift(&yy)?)
                };
                Ok((at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP))
            }
        }
    }

    /// Distance to `W` measured through the defining functions.
    pub fn defect(&self, x: &[f64]) -> Result<f64> {
        Ok(self.defining(x)?.norm())
    }

    fn require_on(&self, x: &[f64]) -> Result<()> {
        let d = self.defect(x)?;
        let scale = linalg::euclid(x, &vec![0.0; x.len()]).max(1.0);
        if d > ON_MANIFOLD_TOL * scale {
            return Err(Error::Precondition(format!(
                "point {x:?} is off W (defect {d:.3e})"
            )));
        }
        Ok(())
    }
}

fn check_pair(w: &TransverseManifold, sys: &ControlAffineSystem) -> Result<()> {
    if w.n() != sys.n() || w.m() != sys.m() {
        return Err(Error::Dimension(format!(
            "W has codimension {} in R^{}, system has n = {}, m = {}",
            w.m(),
            w.n(),
            sys.n(),
            sys.m()
        )));
    }
    Ok(())
}

/// Smallest singular value and condition number of a square certificate
/// matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transversality {
    pub transverse: bool,
    pub margin: f64,
    pub condition: f64,
}

impl Transversality {
    fn of(a: &DMatrix<f64>, tol: f64) -> Self {
        let s = linalg::singular_values(a);
        let margin = s.last().copied().unwrap_or(0.0);
        let condition = if margin > 0.0 {
            s[0] / margin
        } else {
            f64::INFINITY
        };
        Self {
            transverse: margin > tol,
            margin,
            condition,
        }
    }
}

fn splitting_matrix(t: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.nrows();
    let mut mtx = DMatrix::zeros(n, n);
    mtx.view_mut((0, 0), (n, t.ncols())).copy_from(t);
    mtx.view_mut((0, t.ncols()), (n, g.ncols())).copy_from(g);
    mtx
}

/// Checks `T_p W ⊕ D_p = R^n` through `[T_p W | G(p)]`.
pub fn transversality_to_d(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    p: &[f64],
    tol: f64,
) -> Result<Transversality> {
    check_pair(w, sys)?;
    w.require_on(p)?;
    let t = w.tangent_basis(p)?;
    let g = sys.control_matrix(p)?;
    Ok(Transversality::of(&splitting_matrix(&t, &g), tol))
}

/// `f(p) = T alpha + G beta`, the split of the drift along `D`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Chart velocity.
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub tangent: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub margin: f64,
}

impl Decomposition {
    /// Tangential part `T alpha`.
    pub fn along_w(&self) -> DVector<f64> {
        &self.tangent * &self.alpha
    }

    /// Part `G beta` in the control distribution.
    pub fn along_d(&self) -> DVector<f64> {
        &self.controls * &self.beta
    }
}

/// The vector field induced on `W` by projecting the drift along `D`.
#[derive(Debug, Clone, Copy)]
pub struct TransverseDynamics<'a> {
    w: &'a TransverseManifold,
    sys: &'a ControlAffineSystem,
    tol: f64,
}

/// Eigenvalues sorted by decreasing real part, then decreasing imaginary part.
pub fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| match y.re.total_cmp(&x.re) {
        Ordering::Equal => y.im.total_cmp(&x.im),
        o => o,
    });
    ev
}

impl<'a> TransverseDynamics<'a> {
    /// `tol` bounds the transversality margin below which decompositions fail.
    pub fn new(w: &'a TransverseManifold, sys: &'a ControlAffineSystem, tol: f64) -> Result<Self> {
        check_pair(w, sys)?;
        if w.m() >= w.n() {
            return Err(Error::InvalidManifold(
                "W must have positive dimension".into(),
            ));
        }
        Ok(Self { w, sys, tol })
    }

    pub fn manifold(&self) -> &TransverseManifold {
        self.w
    }

    /// Decomposition at a point `p` of `W`.
    pub fn decompose_at(&self, p: &[f64]) -> Result<Decomposition> {
        let tangent = self.w.tangent_basis(p)?;
        let controls = self.sys.control_matrix(p)?;
        let drift = self.sys.eval_drift(p)?;
        let mtx = splitting_matrix(&tangent, &controls);
        let margin = linalg::smallest_singular_value(&mtx);
        if !(margin > self.tol) {
            return Err(Error::Transversality {
                margin,
                point: p.to_vec(),
            });
        }
        let sol = mtx
            .lu()
            .solve(&drift)
            .ok_or_else(|| Error::Transversality {
                margin,
                point: p.to_vec(),
            })?;
        let k = self.w.dim();
        Ok(Decomposition {
            alpha: sol.rows(0, k).into_owned(),
            beta: sol.rows(k, self.w.m()).into_owned(),
            tangent,
            controls,
            drift,
            margin,
        })
    }

    pub fn decompose(&self, y: &[f64]) -> Result<Decomposition> {
        self.decompose_at(&self.w.lift(y)?)
    }

    /// Chart velocity at chart point `y`.
    pub fn velocity(&self, y: &[f64]) -> Result<DVector<f64>> {
        Ok(self.decompose(y)?.alpha)
    }

    /// Jacobian of the chart velocity at a point of `W`, from differentiating
    /// `[T | G] (alpha, beta) = f` along the chart.
    pub fn jacobian_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let dec = self.decompose_at(p)?;
        let k = self.w.dim();
        let mtx = splitting_matrix(&dec.tangent, &dec.controls).lu();
        let jf = self.sys.drift_jacobian(p)?;
        let jg: Vec<DMatrix<f64>> = (0..self.sys.m())
            .map(|i| self.sys.control_jacobian(i, p))
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(k, k);
        for j in 0..k {
            let tj = dec.tangent.column(j);
            let mut rhs = &jf * tj - self.w.tangent_derivative(p, j)? * &dec.alpha;
            for (i, g) in jg.iter().enumerate() {
                rhs -= g * tj * dec.beta[i];
            }
            let z = mtx.solve(&rhs).ok_or_else(|| Error::Transversality {
                margin: dec.margin,
                point: p.to_vec(),
            })?;
            out.set_column(j, &z.rows(0, k));
        }
        Ok(out)
    }

    pub fn jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.jacobian_at(&self.w.lift(y)?)
    }

    /// Central-difference Jacobian of the chart velocity (cross-check).
    pub fn jacobian_fd(&self, y: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let k = self.w.dim();
        let mut out = DMatrix::zeros(k, k);
        let mut p = y.to_vec();
        for j in 0..k {
            p[j] = y[j] + step;
            let a = self.velocity(&p)?;
            p[j] = y[j] - step;
            let b = self.velocity(&p)?;
            p[j] = y[j];
            out.set_column(j, &((a - b) / (2.0 * step)));
        }
        Ok(out)
    }

    pub fn eigenvalues_at(&self, p: &[f64]) -> Result<Vec<Complex64>> {
        Ok(sorted_eigenvalues(&self.jacobian_at(p)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSettings {
    /// Bound on `|(s, r)|` at an accepted root.
    pub tol: f64,
    pub rank_tol: f64,
    pub max_iter: usize,
    /// Margin below which the splitting `[T | G]` counts as singular.
    pub transversality_tol: f64,
    pub dedup_radius: f64,
    /// Condition number of the combined Jacobian above which a root is
    /// reported as non-isolated.
    pub isolation_condition: f64,
}

impl Default for EquilibriumSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            rank_tol: DEFAULT_RANK_TOL,
            max_iter: 50,
            transversality_tol: 1e-8,
            dedup_radius: 1e-6,
            isolation_condition: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumRecord {
    pub point: Vec<f64>,
    pub chart_point: Vec<f64>,
    /// Eigenvalues of the chart Jacobian, sorted by decreasing real part.
    pub eigenvalues: Vec<Complex64>,
    /// Number of eigenvalues with positive real part.
    pub index: usize,
    pub isolated: bool,
    /// Condition number of the combined Jacobian `[grad s; J_r]`.
    pub condition: f64,
    pub residual: f64,
}

impl EquilibriumRecord {
    /// Eigenvalue with the largest real part.
    pub fn leading_eigenvalue(&self) -> Option<Complex64> {
        self.eigenvalues.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    pub seed: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSearch {
    /// Distinct roots ordered lexicographically by point.
    pub equilibria: Vec<EquilibriumRecord>,
    pub failures: Vec<SeedFailure>,
    /// Set when some root is not isolated: `W` meets Sigma non-transversally
    /// and equilibria may form a continuum.
    pub continuum: bool,
}

fn combined_value(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    x: &[f64],
    rank_tol: f64,
) -> Result<(DVector<f64>, ResidualFrame)> {
    let (n, m) = (w.n(), w.m());
    let frame = sigma_residual(sys, x, rank_tol)?;
    let mut value = DVector::zeros(n);
    value.rows_mut(0, m).copy_from(&w.defining(x)?);
    value.rows_mut(m, n - m).copy_from(&frame.residual);
    Ok((value, frame))
}

fn combined_jacobian(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    x: &[f64],
    frame: &ResidualFrame,
) -> Result<DMatrix<f64>> {
    let (n, m) = (w.n(), w.m());
    let mut jac = DMatrix::zeros(n, n);
    jac.view_mut((0, 0), (m, n))
        .copy_from(&w.defining_gradient(x)?);
    jac.view_mut((m, 0), (n - m, n))
        .copy_from(&residual_jacobian(sys, x, frame)?);
    Ok(jac)
}

/// `[s(x); r(x)]` and its Jacobian `[grad s; J_r]`.
fn combined_system(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    x: &[f64],
    rank_tol: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (value, frame) = combined_value(w, sys, x, rank_tol)?;
    let jac = combined_jacobian(w, sys, x, &frame)?;
    Ok((value, jac))
}

fn solve_root(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    seed: &[f64],
    settings: &EquilibriumSettings,
) -> Result<(Vec<f64>, f64, DMatrix<f64>)> {
    let mut x = DVector::from_column_slice(seed);
    let (mut val, mut jac) = combined_system(w, sys, seed, settings.rank_tol)?;
    let mut norm = val.norm();
    let mut polish = 0;
    let mut history = Vec::with_capacity(settings.max_iter);
    for it in 0..settings.max_iter {
        history.push(norm);
        // Heading for a nonzero local minimum of |(s, r)|: W misses Sigma.
        if it >= 10 && norm >= settings.tol && norm > 0.9 * history[it - 5] {
            return Err(Error::Convergence {
                iterations: it,
                residual: norm,
            });
        }
        if norm < settings.tol {
            // A couple of extra steps push the root to rounding level.
            if polish == 2 || norm == 0.0 {
                break;
            }
            polish += 1;
        }
        let step = -linalg::min_norm_solve(&jac, &val, SOLVE_RCOND);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let trial = &x + &step * t;
            if let Ok((v, frame)) = combined_value(w, sys, trial.as_slice(), settings.rank_tol) {
                let vn = v.norm();
                if vn * vn <= (1.0 - 2e-4 * t) * norm * norm || (norm < settings.tol && vn <= norm)
                {
                    accepted = Some((trial, v, frame, vn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((nx, v, frame, vn)) = accepted else {
            if norm < settings.tol {
                break;
            }
            return Err(Error::Convergence {
                iterations: it,
                residual: norm,
            });
        };
        jac = combined_jacobian(w, sys, nx.as_slice(), &frame)?;
        x = nx;
        val = v;
        norm = vn;
    }
    if norm < settings.tol {
        Ok((x.as_slice().to_vec(), norm, jac))
    } else {
        Err(Error::Convergence {
            iterations: settings.max_iter,
            residual: norm,
        })
    }
}

/// Newton on `{ s(x) = 0, r(x) = 0 }` from every seed.
pub fn find_equilibria(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    seeds: &[Vec<f64>],
    settings: &EquilibriumSettings,
) -> Result<EquilibriumSearch> {
    let dynamics = TransverseDynamics::new(w, sys, settings.transversality_tol)?;
    let outcomes: Vec<Result<EquilibriumRecord>> = seeds
        .par_iter()
        .map(|seed| {
            let (point, residual, jac) = solve_root(w, sys, seed, settings)?;
            let condition = linalg::condition_number(&jac);
            let eigenvalues = dynamics.eigenvalues_at(&point)?;
            Ok(EquilibriumRecord {
                chart_point: w.chart(&point),
                index: eigenvalues.iter().filter(|e| e.re > 0.0).count(),
                isolated: condition < settings.isolation_condition,
                point,
                eigenvalues,
                condition,
                residual,
            })
        })
        .collect();
    let mut found = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        match outcome {
            Ok(rec) => found.push(rec),
            Err(e) => failures.push(SeedFailure {
                seed: seed.clone(),
                reason: e.to_string(),
            }),
        }
    }
    // Best roots first, each absorbing its neighbours. Newton reaches a
    // degenerate root only to about sqrt(tol), hence the wider radius there.
    found.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    let mut equilibria: Vec<EquilibriumRecord> = Vec::new();
    for rec in found {
        let duplicate = equilibria.iter().any(|e| {
            let radius = if e.isolated && rec.isolated {
                settings.dedup_radius
            } else {
                settings.dedup_radius.max(settings.tol.sqrt())
            };
            linalg::euclid(&e.point, &rec.point) < radius
        });
        if !duplicate {
            equilibria.push(rec);
        }
    }
    equilibria.sort_by(|a, b| {
        a.point
            .iter()
            .zip(&b.point)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    let continuum = equilibria.iter().any(|e| !e.isolated);
    Ok(EquilibriumSearch {
        equilibria,
        failures,
        continuum,
    })
}

/// Checks `T_p W + T_p Sigma = R^n` at a point of `W ∩ Sigma` through the
/// combined Jacobian `[grad s; J_r]`.
pub fn transversality_to_sigma(
    w: &TransverseManifold,
    sys: &ControlAffineSystem,
    p: &[f64],
    tol: f64,
    rank_tol: f64,
) -> Result<Transversality> {
    check_pair(w, sys)?;
    w.require_on(p)?;
    let (val, jac) = combined_system(w, sys, p, rank_tol)?;
    let scale = linalg::euclid(p, &vec![0.0; p.len()]).max(1.0);
    if val.norm() > ON_MANIFOLD_TOL * scale {
        return Err(Error::Precondition(format!("point {p:?} is off W ∩ Sigma")));
    }
    Ok(Transversality::of(&jac, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("x{i}")).collect()
    }

    fn pendulum() -> ControlAffineSystem {
        ControlAffineSystem::from_strings(&["x1", "x2"], &["x2", "-sin(x1)"], &[vec!["0", "1"]])
            .unwrap()
    }

    fn canonical3(a: [f64; 3]) -> ControlAffineSystem {
        crate::sysmodel::LinearControlSystem::controller_canonical(&a)
            .unwrap()
            .to_control_affine()
    }

    #[test]
    fn transversality_to_d_examples() {
        let pend = pendulum();
        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["-0.7*x1"], None).unwrap();
        let t = transversality_to_d(&w, &pend, &[0.4, -0.28], 1e-8).unwrap();
        assert!(t.transverse);

        // D = span(1, 0); det [[1, 1], [h', 0]] = -h'.
        let horiz =
            ControlAffineSystem::from_strings(&["x1", "x2"], &["0", "x1"], &[vec!["1", "0"]])
                .unwrap();
        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["x1^2"], None).unwrap();
        assert!(
            transversality_to_d(&w, &horiz, &[1.0, 1.0], 1e-8)
                .unwrap()
                .transverse
        );
        let flat = transversality_to_d(&w, &horiz, &[0.0, 0.0], 1e-8).unwrap();
        assert!(!flat.transverse);
        assert_eq!(flat.margin, 0.0);

        let canon = canonical3([1.0, 2.0, 3.0]);
        for (k1, k2) in [(0.0, 0.0), (-5.0, 3.0), (100.0, -0.1)] {
            let w = TransverseManifold::graph(
                &names(3),
                vec![0, 1],
                vec![2],
                &[format!("{k1}*x1 + {k2}*x2")],
                None,
            )
            .unwrap();
            let p = [0.3, -0.2, 0.3 * k1 - 0.2 * k2];
            assert!(
                transversality_to_d(&w, &canon, &p, 1e-8)
                    .unwrap()
                    .transverse
            );
        }

        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["x1"], None).unwrap();
        assert!(matches!(
            transversality_to_d(&w, &pend, &[1.0, 0.0], 1e-8),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn graph_validation() {
        let n = names(3);
        let bad = |ind: Vec<usize>, dep: Vec<usize>| {
            TransverseManifold::graph(&n, ind, dep, &["0"], None)
        };
        assert!(
            matches!(bad(vec![0, 1], vec![1]), Err(Error::InvalidManifold(m)) if m.contains("index 2"))
        );
        assert!(bad(vec![0], vec![2]).is_err());
        assert!(bad(vec![0, 1], vec![5]).is_err());
        assert!(TransverseManifold::graph(&n, vec![0, 1], vec![2], &["x3"], None).is_err());
        assert!(TransverseManifold::graph(&n, vec![0, 1], vec![2], &["x1"], Some("x2")).is_err());
    }

    #[test]
    fn chart_dynamics_examples() {
        let (k1, k2) = (-2.0, -3.0);
        let canon = canonical3([0.4, -1.0, 2.5]);
        let w = TransverseManifold::graph(&names(3), vec![0, 1], vec![2], &["-2*x1 - 3*x2"], None)
            .unwrap();
        let dynamics = TransverseDynamics::new(&w, &canon, 1e-8).unwrap();
        let y = [0.7, -1.1];
        let v = dynamics.velocity(&y).unwrap();
        assert!((v[0] - y[1]).abs() < 1e-14);
        assert!((v[1] - (k1 * y[0] + k2 * y[1])).abs() < 1e-13);

        let c = 0.5;
        let pend = pendulum();
        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["-0.5*x1"], None).unwrap();
        let dynamics = TransverseDynamics::new(&w, &pend, 1e-8).unwrap();
        for x1 in [-2.0, 0.3, 1.7] {
            let dec = dynamics.decompose(&[x1]).unwrap();
            assert!((dec.alpha[0] + c * x1).abs() < 1e-14);
            // Direct-sum reconstruction.
            let back = dec.along_w() + dec.along_d();
            assert!((back - &dec.drift).norm() <= 1e-12 * dec.drift.norm().max(1e-300));
        }
        assert_eq!(dynamics.velocity(&[0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let sys = ControlAffineSystem::from_strings(
            &["x1", "x2", "x3"],
            &["x2 + x3^2", "sin(x1)*x3", "x1 - x2"],
            &[vec!["0", "x1", "1 + x2^2"]],
        )
        .unwrap();
        let w =
            TransverseManifold::graph(&names(3), vec![0, 1], vec![2], &["x1*x2 + cos(x2)"], None)
                .unwrap();
        let dynamics = TransverseDynamics::new(&w, &sys, 1e-8).unwrap();
        let y = [0.3, -0.6];
        let a = dynamics.jacobian(&y).unwrap();
        let fd = dynamics.jacobian_fd(&y, 1e-6).unwrap();
        assert!((a - fd).norm() < 1e-7);
    }

    #[test]
    fn equilibria_examples() {
        let s = EquilibriumSettings::default();
        let pend = pendulum();
        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["-0.5*x1"], None).unwrap();
        let seeds = vec![vec![0.3, 0.1], vec![-0.4, 0.2], vec![0.05, -0.3]];
        let found = find_equilibria(&w, &pend, &seeds, &s).unwrap();
        assert_eq!(found.equilibria.len(), 1);
        let e = &found.equilibria[0];
        assert!(e.point.iter().all(|v| v.abs() < 1e-12));
        assert!((e.eigenvalues[0].re + 0.5).abs() < 1e-10 && e.eigenvalues[0].im == 0.0);
        assert_eq!(e.index, 0);
        assert!(e.isolated);
        assert!(!found.continuum);

        let canon = canonical3([0.4, -1.0, 2.5]);
        let w = TransverseManifold::graph(&names(3), vec![0, 1], vec![2], &["-2*x1 - 3*x2"], None)
            .unwrap();
        let found = find_equilibria(&w, &canon, &[vec![0.5, 0.5, 0.5]], &s).unwrap();
        let e = &found.equilibria[0];
        assert!(e.point.iter().all(|v| v.abs() < 1e-12));
        assert!((e.eigenvalues[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-10);
        assert!((e.eigenvalues[1] - Complex64::new(-2.0, 0.0)).norm() < 1e-10);
        assert_eq!(e.index, 0);

        let para = ControlAffineSystem::from_strings(
            &["x1", "x2"],
            &["x1^2 + x2", "0"],
            &[vec!["0", "1"]],
        )
        .unwrap();
        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["-mu"], Some("mu"))
            .unwrap()
            .with_mu(1.0);
        let found = find_equilibria(&w, &para, &[vec![-2.0, 0.0], vec![2.0, 0.0]], &s).unwrap();
        assert_eq!(found.equilibria.len(), 2);
        let (l, r) = (&found.equilibria[0], &found.equilibria[1]);
        assert!((l.point[0] + 1.0).abs() < 1e-12 && (r.point[0] - 1.0).abs() < 1e-12);
        assert!((l.eigenvalues[0].re + 2.0).abs() < 1e-10 && l.index == 0);
        assert!((r.eigenvalues[0].re - 2.0).abs() < 1e-10 && r.index == 1);
    }

    #[test]
    fn transversality_to_sigma_examples() {
        let pend = pendulum();
        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["-0.5*x1"], None).unwrap();
        let t = transversality_to_sigma(&w, &pend, &[0.0, 0.0], 1e-8, 1e-10).unwrap();
        // Oracle: singular values of [[c, 1], [0, 1]] up to the sign of r.
        let oracle =
            linalg::smallest_singular_value(&DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 1.0]));
        assert!(t.transverse && (t.margin - oracle).abs() < 1e-14);

        let para = ControlAffineSystem::from_strings(
            &["x1", "x2"],
            &["x1^2 + x2", "0"],
            &[vec!["0", "1"]],
        )
        .unwrap();
        let w =
            TransverseManifold::graph(&names(2), vec![0], vec![1], &["-mu"], Some("mu")).unwrap();
        let t = transversality_to_sigma(&w, &para, &[0.0, 0.0], 1e-8, 1e-10).unwrap();
        assert!(!t.transverse && t.margin < 1e-14);

        let w = TransverseManifold::graph(&names(2), vec![0], vec![1], &["0*x1"], None).unwrap();
        let t = transversality_to_sigma(&w, &pend, &[0.7, 0.0], 1e-8, 1e-10).unwrap();
        assert!(t.margin < 1e-14);
        let seeds: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64, 0.01]).collect();
        let found = find_equilibria(&w, &pend, &seeds, &EquilibriumSettings::default()).unwrap();
        assert!(found.continuum);
        assert!(found.equilibria.len() >= 2);
    }

    #[test]
    fn chart_permutation_gives_same_equilibria() {
        let pend = pendulum();
        let a = TransverseManifold::graph(&names(2), vec![0], vec![1], &["-0.5*x1"], None).unwrap();
        let b = TransverseManifold::graph(&names(2), vec![1], vec![0], &["-2*x2"], None).unwrap();
        let seeds = vec![vec![0.2, 0.3]];
        let s = EquilibriumSettings::default();
        let ea = &find_equilibria(&a, &pend, &seeds, &s).unwrap().equilibria[0];
        let eb = &find_equilibria(&b, &pend, &seeds, &s).unwrap().equilibria[0];
        assert!(linalg::euclid(&ea.point, &eb.point) < 1e-8);
        // Chart velocity is a change of coordinate, eigenvalues agree.
        assert!((ea.eigenvalues[0] - eb.eigenvalues[0]).norm() < 1e-6);
    }

    #[test]
    fn level_set_matches_graph() {
        let sys = ControlAffineSystem::from_strings(
            &["x1", "x2", "x3"],
            &["x2", "x3", "-x1 + x2*x3"],
            &[vec!["0", "0", "1"]],
        )
        .unwrap();
        let graph = TransverseManifold::graph(
            &names(3),
            vec![0, 1],
            vec![2],
            &["-x1 - 0.5*x2 + 0.1*x1^2"],
            None,
        )
        .unwrap();
        let level = TransverseManifold::level_set(
            &names(3),
            &["x3 + x1 + 0.5*x2 - 0.1*x1^2"],
            None,
            0.0,
            &[0.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(level.dep(), &[2]);
        let y = [0.4, -0.3];
        let (pg, pl) = (graph.lift(&y).unwrap(), level.lift(&y).unwrap());
        assert!(linalg::euclid(&pg, &pl) < 1e-13);
        let (dg, dl) = (
            TransverseDynamics::new(&graph, &sys, 1e-8).unwrap(),
            TransverseDynamics::new(&level, &sys, 1e-8).unwrap(),
        );
        assert!((dg.velocity(&y).unwrap() - dl.velocity(&y).unwrap()).norm() < 1e-12);
        assert!((dg.jacobian(&y).unwrap() - dl.jacobian(&y).unwrap()).norm() < 1e-6);
    }

    #[test]
    fn level_set_without_split_is_rejected() {
        // grad(x1^2 + x2^2) vanishes at the origin.
        let err =
            TransverseManifold::level_set(&names(2), &["x1^2 + x2^2"], None, 0.0, &[0.0, 0.0]);
        assert!(matches!(err, Err(Error::NoValidSplit(_))));
        // Circle: the split at (0, 1) has x2 dependent; lifting past x1 = 1 fails.
        let circle =
            TransverseManifold::level_set(&names(2), &["x1^2 + x2^2 - 1"], None, 0.0, &[0.0, 1.0])
                .unwrap();
        assert_eq!(circle.dep(), &[1]);
        assert!(circle.lift(&[1.5]).is_err());
    }
}
