//! Feedback that renders `W` invariant and attracting, closed-loop
//! simulation and equilibrium tracking along a family `W(mu)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{self, OdeSettings};
use crate::sysmodel::ControlAffineSystem;
use crate::transverse::{
    find_equilibria, sorted_eigenvalues, transversality_to_d, transversality_to_sigma,
    EquilibriumRecord, EquilibriumSettings, TransverseDynamics, TransverseManifold,
};

const SOLVE_RCOND: f64 = 1e-13;

/// `u(x) = argmin |u|` subject to `G_s u = -L_f s - lambda s`, with
/// `s` the defining functions of `W` and `G_s = (ds/dx) G`.
///
/// Along the closed loop `s' = -lambda s` whenever `G_s` is invertible.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackLaw<'a> {
    w: &'a TransverseManifold,
    sys: &'a ControlAffineSystem,
    lambda: f64,
    tol: f64,
}

/// Builds the invariance feedback with contraction rate `lambda >= 0`.
/// `tol` is the smallest admissible singular value of `G_s`.
pub fn synthesize_invariance_feedback<'a>(
    w: &'a TransverseManifold,
    sys: &'a ControlAffineSystem,
    lambda: f64,
    tol: f64,
) -> Result<FeedbackLaw<'a>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!(
            "gain lambda = {lambda} must be finite and >= 0"
        )));
    }
    if w.n() != sys.n() || w.m() != sys.m() {
        return Err(Error::Dimension(format!(
            "W has codimension {} in R^{}, system has n = {}, m = {}",
            w.m(),
            w.n(),
            sys.n(),
            sys.m()
        )));
    }
    Ok(FeedbackLaw {
        w,
        sys,
        lambda,
        tol,
    })
}

impl<'a> FeedbackLaw<'a> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn manifold(&self) -> &'a TransverseManifold {
        self.w
    }

    pub fn system(&self) -> &'a ControlAffineSystem {
        self.sys
    }

    /// `(G_s, L_f s, s)` at `x`.
    fn pieces(&self, x: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        let grad = self.w.defining_gradient(x)?;
        let gs = &grad * self.sys.control_matrix(x)?;
        let lfs = &grad * self.sys.eval_drift(x)?;
        Ok((gs, lfs, self.w.defining(x)?))
    }

    /// Smallest singular value of `G_s` at `x`.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        Ok(linalg::smallest_singular_value(&self.pieces(x)?.0))
    }

    pub fn control(&self, x: &[f64]) -> Result<DVector<f64>> {
        let (gs, lfs, s) = self.pieces(x)?;
        let margin = linalg::smallest_singular_value(&gs);
        if !(margin > self.tol) {
            return Err(Error::Transversality {
                margin,
                point: x.to_vec(),
            });
        }
        Ok(linalg::min_norm_solve(
            &gs,
            &(-lfs - s * self.lambda),
            SOLVE_RCOND,
        ))
    }

    /// Closed-loop velocity `f(x) + G(x) u(x)`.
    pub fn closed_loop(&self, x: &[f64]) -> Result<DVector<f64>> {
        let u = self.control(x)?;
        Ok(self.sys.eval_drift(x)? + self.sys.control_matrix(x)? * u)
    }

    /// Central-difference Jacobian of the closed loop.
    pub fn closed_loop_jacobian(&self, x: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        let mut p = x.to_vec();
        for j in 0..n {
            p[j] = x[j] + step;
            let a = self.closed_loop(&p)?;
            p[j] = x[j] - step;
            let b = self.closed_loop(&p)?;
            p[j] = x[j];
            out.set_column(j, &((a - b) / (2.0 * step)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub horizon: f64,
    pub report_dt: f64,
    pub ode: OdeSettings,
    /// Per-input `(lo, hi)` box, monitored but not enforced.
    pub control_bounds: Option<Vec<(f64, f64)>>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            report_dt: 0.05,
            ode: OdeSettings::default(),
            control_bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub time: f64,
    pub input: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// `|s(x(t))|`.
    pub distance: Vec<f64>,
    /// Bound violations at accepted integrator steps.
    pub violations: Vec<BoundViolation>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub truncated: Option<String>,
}

impl Trajectory {
    /// Least-squares slope of `ln |s(t)|` over samples with `|s| > floor`.
    pub fn fitted_decay_rate(&self, floor: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.distance)
            .filter(|(_, d)| **d > floor)
            .map(|(t, d)| (*t, d.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let cov: f64 = pts.iter().map(|(t, l)| (t - mt) * (l - ml)).sum();
        let var: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
        (var > 0.0).then(|| cov / var)
    }

    pub fn max_distance(&self) -> f64 {
        self.distance.iter().copied().fold(0.0, f64::max)
    }
}

/// Integrates the closed loop from `x0` over `[0, horizon]`.
pub fn simulate(
    law: &FeedbackLaw<'_>,
    x0: &[f64],
    settings: &SimulationSettings,
) -> Result<Trajectory> {
    if !(settings.horizon > 0.0) {
        return Err(Error::Precondition(format!(
            "horizon {} must be positive",
            settings.horizon
        )));
    }
    if !(settings.report_dt > 0.0) {
        return Err(Error::Precondition(format!(
            "report_dt {} must be positive",
            settings.report_dt
        )));
    }
    if x0.len() != law.sys.n() {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, system has n = {}",
            x0.len(),
            law.sys.n()
        )));
    }
    if let Some(b) = &settings.control_bounds {
        if b.len() != law.sys.m() {
            return Err(Error::Dimension(format!(
                "{} control bounds for m = {} inputs",
                b.len(),
                law.sys.m()
            )));
        }
    }
    // Evaluate once up front so an infeasible start is an error, not an
    // empty trajectory.
    law.control(x0)?;

    let times = ode::report_times(settings.horizon, settings.report_dt);
    let mut violations = Vec::new();
    let out = ode::integrate(
        |_, x| law.closed_loop(x).map(|v| v.as_slice().to_vec()),
        x0,
        &times,
        &settings.ode,
        |t, x| {
            if let (Some(bounds), Ok(u)) = (&settings.control_bounds, law.control(x)) {
                for (i, (&(lo, hi), &v)) in bounds.iter().zip(u.iter()).enumerate() {
                    if v < lo || v > hi {
                        violations.push(BoundViolation {
                            time: t,
                            input: i,
                            value: v,
                        });
                    }
                }
            }
        },
    );
    let mut controls = Vec::with_capacity(out.states.len());
    let mut distance = Vec::with_capacity(out.states.len());
    for x in &out.states {
        controls.push(law.control(x)?.as_slice().to_vec());
        distance.push(law.w.defect(x)?);
    }
    Ok(Trajectory {
        times: out.times,
        states: out.states,
        controls,
        distance,
        violations,
        accepted_steps: out.accepted,
        rejected_steps: out.rejected,
        truncated: out.truncated,
    })
}

/// `count` evenly spaced parameter values from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuRange {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl MuRange {
    pub fn new(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 || !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::Precondition(format!(
                "parameter range {start}:{end}:{count} needs start < end and at least 2 samples"
            )));
        }
        Ok(Self { start, end, count })
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.end - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k + 1 == self.count {
                    self.end
                } else {
                    self.start + k as f64 * step
                }
            })
            .collect()
    }
}

impl std::str::FromStr for MuRange {
    type Err = Error;

    /// `A:B:N`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("parameter range `{s}` is not of the form A:B:N"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Self::new(a, b, n).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fold,
    EigenvalueZeroCrossing,
    /// A complex pair crossing the imaginary axis (no normal-form analysis).
    ImaginaryAxisCrossing,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Fold => "fold",
            EventKind::EigenvalueZeroCrossing => "eigenvalue-zero-crossing",
            EventKind::ImaginaryAxisCrossing => "imaginary-axis-crossing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationEvent {
    pub mu: f64,
    pub kind: EventKind,
    pub point: Vec<f64>,
    /// Eigenvalue closest to the imaginary axis at the event.
    pub eigenvalue: Complex64,
    /// Width of the final parameter bracket.
    pub bracket: f64,
    /// Refined by the augmented fold system (folds only).
    pub certified: bool,
    /// Smallest singular value of `[grad s; J_r]` at the event point.
    pub sigma_margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BifurcationSample {
    pub mu: f64,
    pub equilibria: Vec<EquilibriumRecord>,
    /// Branch id of each equilibrium.
    pub branches: Vec<usize>,
    pub failed_seeds: usize,
    pub continuum: bool,
}

#[derive(Debug, Clone)]
pub struct BifurcationDiagram {
    pub samples: Vec<BifurcationSample>,
    pub events: Vec<BifurcationEvent>,
    pub diagnostics: Vec<String>,
    pub branch_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationSettings {
    pub equilibria: EquilibriumSettings,
    /// Largest chart distance over which equilibria at consecutive
    /// parameter samples are matched.
    pub match_radius: f64,
    /// Bisection stops at this bracket width.
    pub bracket_tol: f64,
    /// Events of one kind closer than this in `mu` are merged.
    pub merge_tol: f64,
    pub transversality_tol: f64,
}

impl Default for BifurcationSettings {
    fn default() -> Self {
        Self {
            equilibria: EquilibriumSettings::default(),
            match_radius: 0.25,
            bracket_tol: 1e-10,
            merge_tol: 1e-6,
            transversality_tol: 1e-8,
        }
    }
}

fn det_real(e: &EquilibriumRecord) -> f64 {
    e.eigenvalues
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, v| acc * v)
        .re
}

fn nearest_to_axis(eigenvalues: &[Complex64]) -> Complex64 {
    eigenvalues
        .iter()
        .copied()
        .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
        .unwrap_or_default()
}

struct Tracker<'a> {
    family: &'a TransverseManifold,
    sys: &'a ControlAffineSystem,
    settings: &'a BifurcationSettings,
}

impl Tracker<'_> {
    fn solve(&self, mu: f64, seeds: &[Vec<f64>]) -> Result<crate::transverse::EquilibriumSearch> {
        let w = self.family.with_mu(mu);
        find_equilibria(&w, self.sys, seeds, &self.settings.equilibria)
    }

    /// Equilibrium continuing `seed` at parameter `mu`, if Newton finds one
    /// within the match radius.
    fn follow(&self, mu: f64, seed: &[f64]) -> Option<EquilibriumRecord> {
        let found = self.solve(mu, &[seed.to_vec()]).ok()?;
        found
            .equilibria
            .into_iter()
            .find(|e| linalg::euclid(&e.point, seed) <= self.settings.match_radius)
    }

    /// Shrinks `[a, b]` keeping `pred(a) != pred(b)`; returns the final
    /// bracket.
    fn bisect<P: FnMut(f64) -> bool>(&self, mut a: f64, mut b: f64, mut pred: P) -> (f64, f64) {
        let pa = pred(a);
        while (b - a).abs() > self.settings.bracket_tol {
            let mid = 0.5 * (a + b);
            if mid == a || mid == b {
                break;
            }
            if pred(mid) == pa {
                a = mid;
            } else {
                b = mid;
            }
        }
        (a, b)
    }

    /// `(alpha(y; mu), det D alpha(y; mu))`.
    fn fold_system(&self, z: &[f64]) -> Option<DVector<f64>> {
        let k = z.len() - 1;
        let w = self.family.with_mu(z[k]);
        let dynamics =
            TransverseDynamics::new(&w, self.sys, self.settings.transversality_tol).ok()?;
        let p = w.lift(&z[..k]).ok()?;
        let alpha = dynamics.decompose_at(&p).ok()?.alpha;
        let det = dynamics.jacobian_at(&p).ok()?.determinant();
        let mut out = DVector::zeros(k + 1);
        out.rows_mut(0, k).copy_from(&alpha);
        out[k] = det;
        Some(out)
    }

    /// Newton on the augmented fold system from chart point `y` and `mu`.
    fn polish_fold(&self, y: &[f64], mu: f64) -> Option<(Vec<f64>, f64)> {
        let k = y.len();
        let mut z: Vec<f64> = y.iter().copied().chain(std::iter::once(mu)).collect();
        let h = 1e-7;
        for _ in 0..30 {
            let f = self.fold_system(&z)?;
            if f.norm() < 1e-12 {
                return Some((z[..k].to_vec(), z[k]));
            }
            let mut jac = DMatrix::zeros(k + 1, k + 1);
            for j in 0..=k {
                let mut zp = z.clone();
                let mut zm = z.clone();
                let step = h * z[j].abs().max(1.0);
                zp[j] += step;
                zm[j] -= step;
                let col = (self.fold_system(&zp)? - self.fold_system(&zm)?) / (2.0 * step);
                jac.set_column(j, &col);
            }
            let dz = linalg::min_norm_solve(&jac, &f, SOLVE_RCOND);
            for (zi, d) in z.iter_mut().zip(dz.iter()) {
                *zi -= d;
            }
            if !z.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        let f = self.fold_system(&z)?;
        (f.norm() < 1e-10).then(|| (z[..k].to_vec(), z[k]))
    }

    fn sigma_margin(&self, mu: f64, point: &[f64]) -> Option<f64> {
        let w = self.family.with_mu(mu);
        transversality_to_sigma(&w, self.sys, point, 0.0, self.settings.equilibria.rank_tol)
            .ok()
            .map(|t| t.margin)
    }

    fn leading_at(&self, mu: f64, point: &[f64]) -> Complex64 {
        let w = self.family.with_mu(mu);
        TransverseDynamics::new(&w, self.sys, self.settings.transversality_tol)
            .and_then(|d| d.jacobian_at(point))
            .map(|j| nearest_to_axis(&sorted_eigenvalues(&j)))
            .unwrap_or_default()
    }

    /// Fold between samples with `poor` and `rich` equilibrium counts.
    fn locate_fold(
        &self,
        (mu_poor, poor): (f64, &[EquilibriumRecord]),
        (mu_rich, rich): (f64, &[EquilibriumRecord]),
    ) -> Option<BifurcationEvent> {
        let base = poor.len();
        let mut rich_seeds: Vec<Vec<f64>> = rich.iter().map(|e| e.point.clone()).collect();
        let poor_seeds: Vec<Vec<f64>> = poor.iter().map(|e| e.point.clone()).collect();
        let mut last_rich: Vec<EquilibriumRecord> = rich.to_vec();
        let (a, b) = self.bisect(mu_poor, mu_rich, |mu| {
            let seeds: Vec<Vec<f64>> = rich_seeds.iter().chain(&poor_seeds).cloned().collect();
            match self.solve(mu, &seeds) {
                Ok(found) if found.equilibria.len() > base => {
                    rich_seeds = found.equilibria.iter().map(|e| e.point.clone()).collect();
                    last_rich = found.equilibria;
                    false
                }
                _ => true,
            }
        });
        let mu_b = if (a - mu_rich).abs() < (b - mu_rich).abs() {
            a
        } else {
            b
        };
        // The merging pair is the one nearest the degenerate point: pick the
        // equilibrium with the smallest |det D alpha|.
        let start = last_rich
            .iter()
            .min_by(|x, y| det_real(x).abs().total_cmp(&det_real(y).abs()))?;
        let (mu, point, certified) = match self.polish_fold(&start.chart_point, mu_b) {
            Some((y, mu)) if (mu - mu_b).abs() <= self.settings.merge_tol => {
                let w = self.family.with_mu(mu);
                match w.lift(&y) {
                    Ok(p) => (mu, p, true),
                    Err(_) => (mu_b, start.point.clone(), false),
                }
            }
            _ => {
                // Opposite determinant signs on the two merging branches also
                // certify a fold.
                let signs = last_rich.iter().map(det_real).filter(|d| *d != 0.0);
                let opposite = signs.clone().any(|d| d > 0.0) && signs.clone().any(|d| d < 0.0);
                (mu_b, start.point.clone(), opposite)
            }
        };
        Some(BifurcationEvent {
            mu,
            kind: EventKind::Fold,
            eigenvalue: self.leading_at(mu, &point),
            sigma_margin: self.sigma_margin(mu, &point),
            point,
            bracket: (b - a).abs(),
            certified,
        })
    }

    /// Sign change of `det D alpha` or index jump along one branch.
    fn locate_crossing(
        &self,
        (mu_a, ea): (f64, &EquilibriumRecord),
        (mu_b, eb): (f64, &EquilibriumRecord),
    ) -> Option<BifurcationEvent> {
        let (da, db) = (det_real(ea), det_real(eb));
        let kind = if da != 0.0 && db != 0.0 && (da > 0.0) != (db > 0.0) {
            EventKind::EigenvalueZeroCrossing
        } else if ea.index.abs_diff(eb.index) == 2 {
            EventKind::ImaginaryAxisCrossing
        } else {
            return None;
        };
        let mut seed = ea.point.clone();
        let mut last = ea.clone();
        let classify = |e: &EquilibriumRecord| match kind {
            EventKind::EigenvalueZeroCrossing => det_real(e) > 0.0,
            _ => e.index == ea.index,
        };
        let side_a = classify(ea);
        let (a, b) = self.bisect(mu_a, mu_b, |mu| match self.follow(mu, &seed) {
            Some(e) => {
                seed = e.point.clone();
                let side = classify(&e);
                last = e;
                // Predicate is "still on the a side".
                side == side_a
            }
            None => true,
        });
        let mu = 0.5 * (a + b);
        Some(BifurcationEvent {
            mu,
            kind,
            eigenvalue: nearest_to_axis(&last.eigenvalues),
            sigma_margin: self.sigma_margin(mu, &last.point),
            point: last.point,
            bracket: (b - a).abs(),
            certified: false,
        })
    }
}

/// For each of `next`, the index of its partner in `prev`: greedy on
/// globally sorted chart distances, capped at `radius`.
fn match_equilibria(
    prev: &[EquilibriumRecord],
    next: &[EquilibriumRecord],
    radius: f64,
) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in next.iter().enumerate() {
        for (j, p) in prev.iter().enumerate() {
            let d = linalg::euclid(&e.chart_point, &p.chart_point);
            if d <= radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![None; next.len()];
    let mut used = vec![false; prev.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(j);
            used[j] = true;
        }
    }
    out
}

/// Equilibria of `W(mu)` over `mu_values`, with branches matched by
/// nearest neighbour and events refined by bisection.
pub fn trace_bifurcation(
    family: &TransverseManifold,
    sys: &ControlAffineSystem,
    mu_values: &[f64],
    seeds: &[Vec<f64>],
    settings: &BifurcationSettings,
) -> Result<BifurcationDiagram> {
    if family.param().is_none() {
        return Err(Error::Precondition("W has no parameter to vary".into()));
    }
    if mu_values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition(
            "parameter samples must be increasing".into(),
        ));
    }
    let tracker = Tracker {
        family,
        sys,
        settings,
    };
    let mut diagnostics = Vec::new();
    let mut samples: Vec<BifurcationSample> = Vec::new();
    let mut next_branch = 0;

    for &mu in mu_values {
        let w = family.with_mu(mu);
        for seed in seeds {
            if let Ok(p) = w.lift(&w.chart(seed)) {
                if let Ok(t) = transversality_to_d(&w, sys, &p, settings.transversality_tol) {
                    if !t.transverse {
                        return Err(Error::Transversality {
                            margin: t.margin,
                            point: p,
                        });
                    }
                }
            }
        }
        let mut all_seeds: Vec<Vec<f64>> = seeds.to_vec();
        if let Some(prev) = samples.last() {
            all_seeds.extend(prev.equilibria.iter().map(|e| e.point.clone()));
        }
        let found = find_equilibria(&w, sys, &all_seeds, &settings.equilibria)?;
        let equilibria = found.equilibria;
        for (i, a) in equilibria.iter().enumerate() {
            for b in &equilibria[i + 1..] {
                if linalg::euclid(&a.chart_point, &b.chart_point) < settings.match_radius {
                    diagnostics.push(format!(
                        "mu = {mu}: equilibria {:?} and {:?} are closer than the matching radius",
                        a.point, b.point
                    ));
                }
            }
        }
        let mut branches = match samples.last() {
            Some(prev) => match_equilibria(&prev.equilibria, &equilibria, settings.match_radius)
                .into_iter()
                .map(|j| j.map_or(usize::MAX, |j| prev.branches[j]))
                .collect(),
            None => vec![usize::MAX; equilibria.len()],
        };
        for b in branches.iter_mut().filter(|b| **b == usize::MAX) {
            *b = next_branch;
            next_branch += 1;
        }
        samples.push(BifurcationSample {
            mu,
            equilibria,
            branches,
            failed_seeds: found.failures.len(),
            continuum: found.continuum,
        });
    }

    // Samples with a continuum of equilibria (W tangent to Sigma exactly at
    // a sample) give meaningless counts; events are bracketed by the
    // neighbouring regular samples instead.
    let regular: Vec<&BifurcationSample> = samples.iter().filter(|s| !s.continuum).collect();
    let mut events: Vec<BifurcationEvent> = Vec::new();
    for pair in regular.windows(2) {
        let (p, q) = (pair[0], pair[1]);
        if p.equilibria.len() != q.equilibria.len() {
            let located = if p.equilibria.len() < q.equilibria.len() {
                tracker.locate_fold((p.mu, &p.equilibria), (q.mu, &q.equilibria))
            } else {
                tracker.locate_fold((q.mu, &q.equilibria), (p.mu, &p.equilibria))
            };
            match located {
                Some(e) => events.push(e),
                None => diagnostics.push(format!(
                    "fold between mu = {} and {} could not be refined",
                    p.mu, q.mu
                )),
            }
        }
        for (i, j) in match_equilibria(&p.equilibria, &q.equilibria, settings.match_radius)
            .into_iter()
            .enumerate()
        {
            let Some(j) = j else { continue };
            if let Some(e) =
                tracker.locate_crossing((p.mu, &p.equilibria[j]), (q.mu, &q.equilibria[i]))
            {
                events.push(e);
            }
        }
    }
    events.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    let mut merged: Vec<BifurcationEvent> = Vec::new();
    for e in events {
        match merged
            .iter_mut()
            .find(|m| m.kind == e.kind && (m.mu - e.mu).abs() <= settings.merge_tol)
        {
            Some(m) => {
                if e.certified && !m.certified {
                    *m = e;
                }
            }
            None => merged.push(e),
        }
    }
    Ok(BifurcationDiagram {
        samples,
        events: merged,
        diagnostics,
        branch_count: next_branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigma::sigma_residual;
    use crate::sysmodel::LinearControlSystem;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("x{i}")).collect()
    }

    fn pendulum() -> ControlAffineSystem {
        ControlAffineSystem::from_strings(&["x1", "x2"], &["x2", "-sin(x1)"], &[vec!["0", "1"]])
            .unwrap()
    }

    fn pendulum_w(c: f64) -> TransverseManifold {
        TransverseManifold::graph(&names(2), vec![0], vec![1], &[format!("-{c}*x1")], None).unwrap()
    }

    fn seed_grid(lo: f64, hi: f64, step: f64) -> Vec<Vec<f64>> {
        crate::sysmodel::GridSpec::cube(2, lo, hi, step)
            .unwrap()
            .points(usize::MAX)
            .unwrap()
    }

    #[test]
    fn pendulum_feedback_matches_hand_formula() {
        let (c, lambda) = (0.8, 2.0);
        let sys = pendulum();
        let w = pendulum_w(c);
        let law = synthesize_invariance_feedback(&w, &sys, lambda, 1e-8).unwrap();
        for x in [[0.3, -0.7], [1.2, 2.0], [-2.0, 0.1]] {
            let s = x[1] + c * x[0];
            let expected = x[0].sin() - c * x[1] - lambda * s;
            assert!((law.control(&x).unwrap()[0] - expected).abs() < 1e-13);
        }
        // On W the closed loop is tangent: ds/dt = grad s . v = 0.
        let p = [0.9, -c * 0.9];
        let v = law.closed_loop(&p).unwrap();
        assert!((c * v[0] + v[1]).abs() < 1e-14);
    }

    #[test]
    fn canonical_closed_loop_has_transverse_rate_lambda() {
        let a = [0.4, -1.0, 2.5];
        let (k1, k2, lambda) = (-2.0, -3.0, 1.5);
        let sys = LinearControlSystem::controller_canonical(&a)
            .unwrap()
            .to_control_affine();
        let w = TransverseManifold::graph(&names(3), vec![0, 1], vec![2], &["-2*x1 - 3*x2"], None)
            .unwrap();
        let law = synthesize_invariance_feedback(&w, &sys, lambda, 1e-8).unwrap();
        let x = [0.3, -0.2, 0.7];
        let s = x[2] - k1 * x[0] - k2 * x[1];
        let expected = a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + k1 * x[1] + k2 * x[2] - lambda * s;
        assert!((law.control(&x).unwrap()[0] - expected).abs() < 1e-13);

        // Oracle: closed-loop matrix A + b k^T built by hand.
        let mut acl = DMatrix::zeros(3, 3);
        acl[(0, 1)] = 1.0;
        acl[(1, 2)] = 1.0;
        acl[(2, 0)] = lambda * k1;
        acl[(2, 1)] = k1 + lambda * k2;
        acl[(2, 2)] = k2 - lambda;
        let jac = law.closed_loop_jacobian(&x, 1e-6).unwrap();
        assert!((&jac - &acl).norm() < 1e-8);
        let ev = sorted_eigenvalues(&acl);
        let expected = [-1.0, -lambda, -2.0];
        for (e, x) in ev.iter().zip(expected) {
            assert!((e - Complex64::new(x, 0.0)).norm() < 1e-9, "{ev:?}");
        }
    }

    #[test]
    fn feedback_vanishes_when_drift_is_tangent() {
        let sys = ControlAffineSystem::from_strings(&["x1", "x2"], &["1", "0"], &[vec!["0", "1"]])
            .unwrap();
        let w =
            TransverseManifold::graph(&names(2), vec![0], vec![1], &["0*x1 + 0.5"], None).unwrap();
        let law = synthesize_invariance_feedback(&w, &sys, 3.0, 1e-8).unwrap();
        assert_eq!(law.control(&[2.0, 0.5]).unwrap()[0], 0.0);
    }

    #[test]
    fn simulation_decays_at_rate_lambda() {
        let sys = pendulum();
        let w = pendulum_w(0.5);
        let law = synthesize_invariance_feedback(&w, &sys, 2.0, 1e-8).unwrap();
        let settings = SimulationSettings::default();
        let traj = simulate(&law, &[1.0, 1.0], &settings).unwrap();
        assert!(traj.truncated.is_none());
        let s0 = traj.distance[0];
        for (t, d) in traj.times.iter().zip(&traj.distance) {
            assert!(*d <= 1.01 * s0 * (-2.0 * t).exp() + 1e-12, "t = {t}");
        }
        let rate = traj.fitted_decay_rate(100.0 * settings.ode.atol).unwrap();
        assert!((rate + 2.0).abs() < 0.1);

        let on = simulate(&law, &[1.0, -0.5], &settings).unwrap();
        assert!(on.max_distance() < 1e-6);

        let neutral = synthesize_invariance_feedback(&w, &sys, 0.0, 1e-8).unwrap();
        let flat = simulate(&neutral, &[1.0, 1.0], &settings).unwrap();
        let s0 = flat.distance[0];
        assert!(flat.distance.iter().all(|d| (d - s0).abs() < 1e-6 * s0));
    }

    #[test]
    fn bound_violations_are_reported_not_enforced() {
        let sys = pendulum();
        let w = pendulum_w(0.5);
        let law = synthesize_invariance_feedback(&w, &sys, 2.0, 1e-8).unwrap();
        let settings = SimulationSettings {
            control_bounds: Some(vec![(-0.5, 0.5)]),
            ..Default::default()
        };
        let traj = simulate(&law, &[1.0, 1.0], &settings).unwrap();
        assert!(!traj.violations.is_empty());
        assert!(traj.controls.iter().any(|u| u[0].abs() > 0.5));
        assert!(traj.violations.iter().all(|v| v.value.abs() > 0.5));
    }

    #[test]
    fn negative_gain_is_rejected() {
        let sys = pendulum();
        let w = pendulum_w(0.5);
        assert!(matches!(
            synthesize_invariance_feedback(&w, &sys, -1.0, 1e-8),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn feedback_leaves_sigma_unchanged() {
        let sys = pendulum();
        let w = pendulum_w(0.5);
        let law = synthesize_invariance_feedback(&w, &sys, 2.0, 1e-8).unwrap();
        for x in [[0.3, 0.0], [1.0, 1e-12], [0.2, 0.4]] {
            let frame = sigma_residual(&sys, &x, 1e-10).unwrap();
            let closed = frame.complement.transpose() * law.closed_loop(&x).unwrap();
            assert!((closed.norm() - frame.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn mu_range_parsing() {
        let r: MuRange = "-1:1:5".parse().unwrap();
        assert_eq!(r.values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!("1:0:5".parse::<MuRange>().is_err());
        assert!("0:1".parse::<MuRange>().is_err());
        assert!("0:1:1".parse::<MuRange>().is_err());
    }

    #[test]
    fn saddle_node_fold() {
        let sys = ControlAffineSystem::from_strings(
            &["x1", "x2"],
            &["x1^2 + x2", "0"],
            &[vec!["0", "1"]],
        )
        .unwrap();
        let family =
            TransverseManifold::graph(&names(2), vec![0], vec![1], &["-mu"], Some("mu")).unwrap();
        let mus = MuRange::new(-1.0, 1.0, 20).unwrap().values();
        let seeds = seed_grid(-2.0, 2.0, 0.5);
        let d = trace_bifurcation(&family, &sys, &mus, &seeds, &BifurcationSettings::default())
            .unwrap();
        let folds: Vec<_> = d
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Fold)
            .collect();
        assert_eq!(folds.len(), 1, "{:?}", d.events);
        assert!(folds[0].mu.abs() < 1e-6);
        assert!(folds[0].certified);
        assert!(folds[0].sigma_margin.unwrap() < 1e-4);
        for s in &d.samples {
            let expected = if s.mu < 0.0 { 0 } else { 2 };
            assert_eq!(s.equilibria.len(), expected, "mu = {}", s.mu);
            for e in &s.equilibria {
                let lam = 2.0 * e.point[0];
                assert!((e.eigenvalues[0].re - lam).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn saddle_node_with_sample_at_fold() {
        let sys = ControlAffineSystem::from_strings(
            &["x1", "x2"],
            &["x1^2 + x2", "0"],
            &[vec!["0", "1"]],
        )
        .unwrap();
        let family =
            TransverseManifold::graph(&names(2), vec![0], vec![1], &["-mu"], Some("mu")).unwrap();
        let mus = MuRange::new(-1.0, 1.0, 21).unwrap().values();
        let seeds = seed_grid(-2.0, 2.0, 0.5);
        let d = trace_bifurcation(&family, &sys, &mus, &seeds, &BifurcationSettings::default())
            .unwrap();
        let folds: Vec<_> = d
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Fold)
            .collect();
        assert_eq!(folds.len(), 1, "{:?}", d.events);
        assert!(folds[0].mu.abs() < 1e-6);
    }

    #[test]
    fn pendulum_eigenvalue_crossing() {
        let sys = pendulum();
        let family =
            TransverseManifold::graph(&names(2), vec![0], vec![1], &["-mu*x1"], Some("mu"))
                .unwrap();
        let mus = MuRange::new(-1.0, 1.0, 20).unwrap().values();
        let seeds = vec![vec![0.1, 0.0], vec![-0.2, 0.1]];
        let d = trace_bifurcation(&family, &sys, &mus, &seeds, &BifurcationSettings::default())
            .unwrap();
        for s in &d.samples {
            assert_eq!(s.equilibria.len(), 1);
            assert!((s.equilibria[0].eigenvalues[0].re + s.mu).abs() < 1e-10);
        }
        let crossings: Vec<_> = d
            .events
            .iter()
            .filter(|e| e.kind == EventKind::EigenvalueZeroCrossing)
            .collect();
        assert_eq!(crossings.len(), 1, "{:?}", d.events);
        assert!(crossings[0].mu.abs() < 1e-6);
        assert!(d.events.iter().all(|e| e.kind != EventKind::Fold));
    }

    #[test]
    fn canonical_eigenvalue_crossing() {
        let sys = LinearControlSystem::controller_canonical(&[0.4, -1.0, 2.5])
            .unwrap()
            .to_control_affine();
        let family = TransverseManifold::graph(
            &names(3),
            vec![0, 1],
            vec![2],
            &["(mu - 2)*x1 - 3*x2"],
            Some("mu"),
        )
        .unwrap();
        let mus = MuRange::new(0.0, 3.5, 8).unwrap().values();
        let d = trace_bifurcation(
            &family,
            &sys,
            &mus,
            &[vec![0.1, 0.1, 0.1]],
            &BifurcationSettings::default(),
        )
        .unwrap();
        let crossings: Vec<_> = d
            .events
            .iter()
            .filter(|e| e.kind == EventKind::EigenvalueZeroCrossing)
            .collect();
        assert_eq!(crossings.len(), 1);
        assert!((crossings[0].mu - 2.0).abs() < 1e-6);
        // Quadratic root oracle for s^2 + 3 s + (2 - mu).
        for s in &d.samples {
            let disc = (9.0 - 4.0 * (2.0 - s.mu)).sqrt();
            let top = 0.5 * (-3.0 + disc);
            assert!((s.equilibria[0].eigenvalues[0].re - top).abs() < 1e-8);
        }
    }
}
