//! The singular set `Sigma = { x : f(x) in span(g_1(x), ..., g_m(x)) }`.
//!
//! On the corank-0 stratum the quotient `R^n / span(G(x))` is realized by
//! an orthonormal basis `U(x)` of the Euclidean complement of `range G(x)`.
//! The residual `r(x) = U(x)^T f(x)` vanishes exactly on Sigma. `U` is only
//! defined up to an orthogonal change of basis, so everything with a contract
//! here (`|r|`, rank of the Jacobian of `r`, zero sets) is gauge independent.
//!
//! Differentiating `r` in the frame frozen at `x` gives
//! `J_r = U^T (J_f - sum_i c_i J_{g_i})` where `c` are the least-squares
//! coefficients of `f` on the columns of `G`; the term involving the
//! derivative of `U` drops out because `U^T G = 0` at `x`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sysmodel::{ControlAffineSystem, GridSpec, LinearControlSystem, StrictFeedbackSystem};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 20;
const SOLVE_RCOND: f64 = 1e-13;
const HERMITE_SUBDIVISIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSettings {
    /// Acceptance threshold on `|r(x)|`.
    pub tol: f64,
    pub rank_tol: f64,
    pub max_iter: usize,
}

impl Default for SigmaSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            rank_tol: crate::sysmodel::DEFAULT_RANK_TOL,
            max_iter: 50,
        }
    }
}

/// Complement frame and residual at one point.
#[derive(Debug, Clone)]
pub struct ResidualFrame {
    /// `n x (n - m)`, orthonormal, `U^T G = 0`.
    pub complement: DMatrix<f64>,
    pub residual: DVector<f64>,
    controls: DMatrix<f64>,
    drift: DVector<f64>,
}

impl ResidualFrame {
    pub fn norm(&self) -> f64 {
        self.residual.norm()
    }

    /// Least-squares coefficients of `f` in the control columns.
    pub fn coefficients(&self) -> DVector<f64> {
        linalg::min_norm_solve(&self.controls, &self.drift, SOLVE_RCOND)
    }
}

/// Residual frame at `x`; fails with [`Error::Stratum`] off the regular stratum.
pub fn sigma_residual(
    sys: &ControlAffineSystem,
    x: &[f64],
    rank_tol: f64,
) -> Result<ResidualFrame> {
    let g = sys.control_matrix(x)?;
    let f = sys.eval_drift(x)?;
    let m = sys.m();
    let left = linalg::left_basis(&g);
    let rank = linalg::rank_of(&left.singular_values, rank_tol, 0.0);
    if rank < m {
        return Err(Error::Stratum {
            corank: m - rank,
            point: x.to_vec(),
        });
    }
    let complement = left.basis.columns(m, sys.n() - m).into_owned();
    let residual = complement.transpose() * &f;
    Ok(ResidualFrame {
        complement,
        residual,
        controls: g,
        drift: f,
    })
}

/// `(n - m) x n` Jacobian of the residual in the frame of `frame`.
pub fn residual_jacobian(
    sys: &ControlAffineSystem,
    x: &[f64],
    frame: &ResidualFrame,
) -> Result<DMatrix<f64>> {
    let mut j = sys.drift_jacobian(x)?;
    for (i, c) in frame.coefficients().iter().enumerate() {
        if *c != 0.0 {
            j -= sys.control_jacobian(i, x)? * *c;
        }
    }
    Ok(frame.complement.transpose() * j)
}

/// Local certificate that Sigma is an `m`-dimensional submanifold near `x`:
/// the residual Jacobian has full row rank `n - m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionCertificate {
    pub rank: usize,
    pub expected: usize,
    pub singular_values: Vec<f64>,
}

impl DimensionCertificate {
    pub fn holds(&self) -> bool {
        self.rank == self.expected
    }

    /// Dimension of Sigma implied by the certificate.
    pub fn dimension(&self, n: usize) -> usize {
        n - self.rank
    }
}

pub fn dimension_certificate(
    sys: &ControlAffineSystem,
    x: &[f64],
    rank_tol: f64,
) -> Result<DimensionCertificate> {
    let frame = sigma_residual(sys, x, rank_tol)?;
    let jac = residual_jacobian(sys, x, &frame)?;
    let values = linalg::singular_values(&jac);
    // Scale by the full drift Jacobian so a single-row J_r is not rank 1 by
    // definition of a relative cut.
    let scale = sys.drift_jacobian(x)?.norm();
    Ok(DimensionCertificate {
        rank: linalg::rank_of(&values, rank_tol, scale),
        expected: sys.n() - sys.m(),
        singular_values: values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaKind {
    Subspace,
    Graph,
    Cloud,
    Curve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoint {
    pub x: Vec<f64>,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub kind: SigmaKind,
    /// Orthonormal basis, only for [`SigmaKind::Subspace`].
    pub basis: Option<DMatrix<f64>>,
    pub points: Vec<SigmaPoint>,
    pub tol: f64,
}

impl SigmaSet {
    fn of_points(kind: SigmaKind, points: Vec<SigmaPoint>, tol: f64) -> Self {
        Self {
            kind,
            basis: None,
            points,
            tol,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sigma of a linear system together with the non-genericity flag.
#[derive(Debug, Clone)]
pub struct LinearSigma {
    pub set: SigmaSet,
    /// Set when the null space of `U^T A` is not `m`-dimensional.
    pub degenerate: bool,
}

impl LinearSigma {
    pub fn basis(&self) -> &DMatrix<f64> {
        self.set.basis.as_ref().expect("subspace basis")
    }

    pub fn dimension(&self) -> usize {
        self.basis().ncols()
    }
}

/// Sigma of `x' = A x + B u` as the null space of `U^T A`, `U` spanning
/// `range(B)^perp`.
pub fn sigma_linear(sys: &LinearControlSystem, rank_tol: f64) -> Result<LinearSigma> {
    let m = sys.m();
    let rank = linalg::numerical_rank(sys.b(), rank_tol);
    if rank < m {
        return Err(Error::RankDeficient { rank, m });
    }
    let u = linalg::range_complement(sys.b(), m);
    let constraints = u.transpose() * sys.a();
    let basis = linalg::null_space(&constraints, rank_tol);
    let degenerate = basis.ncols() != m;
    Ok(LinearSigma {
        set: SigmaSet {
            kind: SigmaKind::Subspace,
            basis: Some(basis),
            points: Vec::new(),
            tol: rank_tol,
        },
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub point: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Gauss-Newton projection of `seed` onto Sigma with minimum-norm steps and
/// Armijo step halving.
pub fn sigma_newton(
    sys: &ControlAffineSystem,
    seed: &[f64],
    settings: &SigmaSettings,
) -> Result<NewtonOutcome> {
    let mut x = DVector::from_column_slice(seed);
    let mut frame = sigma_residual(sys, x.as_slice(), settings.rank_tol)?;
    let mut rn = frame.norm();
    for it in 0..=settings.max_iter {
        if rn < settings.tol {
            return Ok(NewtonOutcome {
                point: x.as_slice().to_vec(),
                residual_norm: rn,
                iterations: it,
            });
        }
        if it == settings.max_iter {
            break;
        }
        let jac = residual_jacobian(sys, x.as_slice(), &frame)?;
        let step = -linalg::min_norm_solve(&jac, &frame.residual, SOLVE_RCOND);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &step * t;
            match sigma_residual(sys, trial.as_slice(), settings.rank_tol) {
                Ok(fr) => {
                    let tn = fr.norm();
                    if tn * tn <= (1.0 - 2.0 * ARMIJO_C * t) * rn * rn {
                        accepted = Some((trial, fr, tn));
                        break;
                    }
                }
                Err(e @ Error::Stratum { .. }) => return Err(e),
                Err(_) => {}
            }
            t *= 0.5;
        }
        let Some((nx, fr, tn)) = accepted else {
            return Err(Error::Convergence {
                iterations: it,
                residual: rn,
            });
        };
        x = nx;
        frame = fr;
        rn = tn;
    }
    Err(Error::Convergence {
        iterations: settings.max_iter,
        residual: rn,
    })
}

#[derive(Debug, Clone)]
pub struct ContinuationSettings {
    pub arc_step: f64,
    pub n_steps: usize,
    /// Trace both orientations from the start point.
    pub both_directions: bool,
    /// Stop after the first point leaving this box.
    pub bounds: Option<GridSpec>,
    pub max_halvings: usize,
}

impl ContinuationSettings {
    pub fn new(arc_step: f64, n_steps: usize) -> Self {
        Self {
            arc_step,
            n_steps,
            both_directions: false,
            bounds: None,
            max_halvings: 4,
        }
    }

    /// Default step of 5% of the box diameter, tracing both ways until the
    /// curve leaves the box.
    pub fn for_box(bounds: &GridSpec) -> Self {
        let arc_step = 0.05 * bounds.diameter();
        Self {
            arc_step,
            n_steps: (4.0 * bounds.diameter() / arc_step).ceil() as usize,
            both_directions: true,
            bounds: Some(bounds.clone()),
            max_halvings: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HaltReason {
    Completed,
    LeftBounds,
    /// The next point would lie on a rank-drop stratum.
    StratumBoundary {
        corank: usize,
    },
    /// The residual Jacobian lost rank: a non-generic point of Sigma.
    RankDeficient,
    CorrectorFailure {
        residual: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    /// Polyline ordered from the backward end to the forward end.
    pub set: SigmaSet,
    /// Unit tangents, one per point, consistently oriented.
    pub tangents: Vec<Vec<f64>>,
    pub forward_halt: HaltReason,
    pub backward_halt: Option<HaltReason>,
    pub halvings: usize,
}

fn unit_tangent(
    sys: &ControlAffineSystem,
    x: &[f64],
    rank_tol: f64,
) -> Result<Option<DVector<f64>>> {
    let cert = dimension_certificate(sys, x, rank_tol)?;
    if !cert.holds() {
        return Ok(None);
    }
    let frame = sigma_residual(sys, x, rank_tol)?;
    let jac = residual_jacobian(sys, x, &frame)?;
    let basis = linalg::right_basis(&jac).basis;
    Ok(Some(basis.column(sys.n() - 1).into_owned()))
}

/// A rank drop between `a` and `b` shows up as a loss of orientation of the
/// control frame: `det(G(a)^T G(b)) <= 0`.
fn crosses_stratum(sys: &ControlAffineSystem, a: &[f64], b: &[f64]) -> Result<bool> {
    let ga = sys.control_matrix(a)?;
    let gb = sys.control_matrix(b)?;
    Ok((ga.transpose() * gb).determinant() <= 0.0)
}

enum Corrected {
    Point(DVector<f64>, f64),
    Stratum(usize),
    Failed(f64),
}

fn correct(
    sys: &ControlAffineSystem,
    predicted: &DVector<f64>,
    tangent: &DVector<f64>,
    settings: &SigmaSettings,
) -> Corrected {
    let n = sys.n();
    let mut y = predicted.clone();
    let mut last = f64::INFINITY;
    for _ in 0..=settings.max_iter {
        let frame = match sigma_residual(sys, y.as_slice(), settings.rank_tol) {
            Ok(f) => f,
            Err(Error::Stratum { corank, .. }) => return Corrected::Stratum(corank),
            Err(_) => return Corrected::Failed(last),
        };
        let arc = tangent.dot(&(&y - predicted));
        let rn = frame.norm();
        last = rn.hypot(arc);
        if rn < settings.tol && arc.abs() < settings.tol {
            return Corrected::Point(y, rn);
        }
        let Ok(jr) = residual_jacobian(sys, y.as_slice(), &frame) else {
            return Corrected::Failed(last);
        };
        let mut jac = DMatrix::zeros(n, n);
        jac.view_mut((0, 0), (n - 1, n)).copy_from(&jr);
        jac.set_row(n - 1, &tangent.transpose());
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, n - 1).copy_from(&frame.residual);
        rhs[n - 1] = arc;
        let Some(delta) = jac.lu().solve(&rhs) else {
            return Corrected::Failed(last);
        };
        y -= delta;
        if !y.iter().all(|v| v.is_finite()) {
            return Corrected::Failed(last);
        }
    }
    Corrected::Failed(last)
}

fn trace_branch(
    sys: &ControlAffineSystem,
    start: &DVector<f64>,
    tangent0: DVector<f64>,
    cont: &ContinuationSettings,
    settings: &SigmaSettings,
    halvings: &mut usize,
) -> Result<(Vec<SigmaPoint>, Vec<Vec<f64>>, HaltReason)> {
    let mut points = Vec::new();
    let mut tangents = Vec::new();
    let mut x = start.clone();
    let mut t = tangent0;
    for _ in 0..cont.n_steps {
        let mut h = cont.arc_step;
        let mut accepted = None;
        let mut last_residual = f64::NAN;
        for attempt in 0..=cont.max_halvings {
            let predicted = &x + &t * h;
            match correct(sys, &predicted, &t, settings) {
                Corrected::Point(y, rn) if (&y - &x).norm() <= 2.0 * h => {
                    accepted = Some((y, rn));
                    *halvings += attempt;
                    break;
                }
                Corrected::Point(..) => {}
                Corrected::Stratum(corank) => {
                    return Ok((points, tangents, HaltReason::StratumBoundary { corank }));
                }
                Corrected::Failed(r) => last_residual = r,
            }
            h *= 0.5;
        }
        let Some((y, rn)) = accepted else {
            return Ok((
                points,
                tangents,
                HaltReason::CorrectorFailure {
                    residual: last_residual,
                },
            ));
        };
        if crosses_stratum(sys, x.as_slice(), y.as_slice())? {
            return Ok((points, tangents, HaltReason::StratumBoundary { corank: 1 }));
        }
        let Some(mut ty) = unit_tangent(sys, y.as_slice(), settings.rank_tol)? else {
            points.push(SigmaPoint {
                x: y.as_slice().to_vec(),
                residual_norm: rn,
            });
            tangents.push(t.as_slice().to_vec());
            return Ok((points, tangents, HaltReason::RankDeficient));
        };
        if ty.dot(&t) < 0.0 {
            ty = -ty;
        }
        let outside = cont
            .bounds
            .as_ref()
            .is_some_and(|b| !b.contains(y.as_slice(), 0.0));
        points.push(SigmaPoint {
            x: y.as_slice().to_vec(),
            residual_norm: rn,
        });
        tangents.push(ty.as_slice().to_vec());
        if outside {
            return Ok((points, tangents, HaltReason::LeftBounds));
        }
        x = y;
        t = ty;
    }
    Ok((points, tangents, HaltReason::Completed))
}

/// Pseudo-arclength predictor-corrector tracing of a one-dimensional Sigma.
pub fn sigma_continuation(
    sys: &ControlAffineSystem,
    start: &[f64],
    cont: &ContinuationSettings,
    settings: &SigmaSettings,
) -> Result<ContinuationResult> {
    if sys.m() != 1 {
        return Err(Error::Precondition(format!(
            "curve continuation needs m = 1, system has m = {}",
            sys.m()
        )));
    }
    if !(cont.arc_step > 0.0) {
        return Err(Error::Precondition("arc_step must be positive".into()));
    }
    let frame = sigma_residual(sys, start, settings.rank_tol)?;
    if frame.norm() >= settings.tol {
        return Err(Error::Precondition(format!(
            "start point residual {:.3e} exceeds tol {:.1e}",
            frame.norm(),
            settings.tol
        )));
    }
    let Some(mut t0) = unit_tangent(sys, start, settings.rank_tol)? else {
        return Err(Error::Precondition(
            "residual Jacobian is rank deficient at the start point (non-generic configuration)"
                .into(),
        ));
    };
    let pivot = t0.iamax();
    if t0[pivot] < 0.0 {
        t0 = -t0;
    }
    let x0 = DVector::from_column_slice(start);
    let mut halvings = 0;
    let (fwd, fwd_t, forward_halt) =
        trace_branch(sys, &x0, t0.clone(), cont, settings, &mut halvings)?;
    let (bwd, bwd_t, backward_halt) = if cont.both_directions {
        let (p, t, h) = trace_branch(sys, &x0, -t0.clone(), cont, settings, &mut halvings)?;
        (p, t, Some(h))
    } else {
        (Vec::new(), Vec::new(), None)
    };

    let mut points: Vec<SigmaPoint> = bwd.into_iter().rev().collect();
    let mut tangents: Vec<Vec<f64>> = bwd_t
        .into_iter()
        .rev()
        .map(|t| t.iter().map(|v| -v).collect())
        .collect();
    points.push(SigmaPoint {
        x: start.to_vec(),
        residual_norm: frame.norm(),
    });
    tangents.push(t0.as_slice().to_vec());
    points.extend(fwd);
    tangents.extend(fwd_t);
    Ok(ContinuationResult {
        set: SigmaSet::of_points(SigmaKind::Curve, points, settings.tol),
        tangents,
        forward_halt,
        backward_halt,
        halvings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFailure {
    pub x1: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct StrictFeedbackResult {
    pub set: SigmaSet,
    pub failures: Vec<SampleFailure>,
}

/// Sigma of a strict-feedback system by forward substitution
/// `x_{i+1} = -f_i / g_i`, one point per `x1` sample.
pub fn sigma_strict_feedback(
    sys: &StrictFeedbackSystem,
    x1_samples: &[f64],
    settings: &SigmaSettings,
) -> StrictFeedbackResult {
    let n = sys.n();
    let affine = sys.to_control_affine();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    'samples: for &x1 in x1_samples {
        let mut x = vec![0.0; n];
        x[0] = x1;
        for i in 0..n - 1 {
            let (f, g) = match (sys.f()[i].eval(&x), sys.g()[i].eval(&x)) {
                (Ok(f), Ok(g)) => (f, g),
                (Err(e), _) | (_, Err(e)) => {
                    failures.push(SampleFailure {
                        x1,
                        reason: format!("row {}: {e}", i + 1),
                    });
                    continue 'samples;
                }
            };
            if g.abs() <= f64::EPSILON * (1.0 + f.abs()) {
                failures.push(SampleFailure {
                    x1,
                    reason: format!("g_{} vanishes", i + 1),
                });
                continue 'samples;
            }
            x[i + 1] = -f / g;
        }
        match sigma_residual(&affine, &x, settings.rank_tol) {
            Ok(frame) if frame.norm() < settings.tol => points.push(SigmaPoint {
                x,
                residual_norm: frame.norm(),
            }),
            Ok(frame) => failures.push(SampleFailure {
                x1,
                reason: format!("residual {:.3e} above tolerance", frame.norm()),
            }),
            Err(e) => failures.push(SampleFailure {
                x1,
                reason: e.to_string(),
            }),
        }
    }
    StrictFeedbackResult {
        set: SigmaSet::of_points(SigmaKind::Graph, points, settings.tol),
        failures,
    }
}

#[derive(Debug, Clone)]
pub struct GridScanResult {
    pub set: SigmaSet,
    pub seeds: usize,
    pub converged: usize,
    pub failed: usize,
    /// Seeds off the regular stratum (not attempted).
    pub stratum_skipped: usize,
    /// Seeds that were already on Sigma.
    pub already_on_sigma: usize,
    /// Cloud points where the dimension certificate fails.
    pub certificate_failures: usize,
    pub warnings: Vec<String>,
}

/// Brute-force oracle: Newton from every grid point, deduplicated at
/// `step / 10`.
pub fn sigma_grid_scan(
    sys: &ControlAffineSystem,
    grid: &GridSpec,
    settings: &SigmaSettings,
    cap: usize,
) -> Result<GridScanResult> {
    if grid.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "grid has {} axes, system has {} states",
            grid.dim(),
            sys.n()
        )));
    }
    let seeds = grid.points(cap)?;
    let outcomes: Vec<Result<NewtonOutcome>> = seeds
        .par_iter()
        .map(|s| sigma_newton(sys, s, settings))
        .collect();

    let radius = grid.step / 10.0;
    let mut kept: Vec<SigmaPoint> = Vec::new();
    let (mut converged, mut failed, mut skipped, mut zero_iter) = (0, 0, 0, 0);
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                converged += 1;
                if o.iterations == 0 {
                    zero_iter += 1;
                }
                if kept
                    .iter()
                    .all(|k| linalg::euclid(&k.x, &o.point) >= radius)
                {
                    kept.push(SigmaPoint {
                        x: o.point,
                        residual_norm: o.residual_norm,
                    });
                }
            }
            Err(Error::Stratum { .. }) => skipped += 1,
            Err(_) => failed += 1,
        }
    }
    let certificate_failures = kept
        .par_iter()
        .map(|p| {
            dimension_certificate(sys, &p.x, settings.rank_tol)
                .map(|c| !c.holds())
                .unwrap_or(true)
        })
        .filter(|bad| *bad)
        .count();

    let mut warnings = Vec::new();
    if certificate_failures > 0 {
        warnings.push(format!(
            "non-generic configuration: dimension certificate fails at {certificate_failures} of {} points",
            kept.len()
        ));
    }
    if converged > 0 && zero_iter == converged {
        warnings.push(
            "every seed already lies on the singular set; it fills the scanned region (zero drift?)"
                .into(),
        );
    }
    Ok(GridScanResult {
        set: SigmaSet::of_points(SigmaKind::Cloud, kept, settings.tol),
        seeds: seeds.len(),
        converged,
        failed,
        stratum_skipped: skipped,
        already_on_sigma: zero_iter,
        certificate_failures,
        warnings,
    })
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        (p.iter()
            .zip(a)
            .zip(&ab)
            .map(|((pi, ai), d)| (pi - ai) * d)
            .sum::<f64>()
            / len2)
            .clamp(0.0, 1.0)
    } else {
        0.0
    };
    let foot: Vec<f64> = a.iter().zip(&ab).map(|(ai, d)| ai + t * d).collect();
    linalg::euclid(p, &foot)
}

/// Dense samples of the curve by cubic Hermite interpolation between
/// consecutive points, using the stored unit tangents.
pub fn densify_curve(curve: &ContinuationResult) -> Vec<Vec<f64>> {
    let pts = &curve.set.points;
    let mut out = Vec::new();
    if let Some(first) = pts.first() {
        out.push(first.x.clone());
    }
    for k in 1..pts.len() {
        let (p0, p1) = (&pts[k - 1].x, &pts[k].x);
        let (t0, t1) = (&curve.tangents[k - 1], &curve.tangents[k]);
        let chord = linalg::euclid(p0, p1);
        for s in 1..=HERMITE_SUBDIVISIONS {
            let u = s as f64 / HERMITE_SUBDIVISIONS as f64;
            let (u2, u3) = (u * u, u * u * u);
            let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
            let h10 = u3 - 2.0 * u2 + u;
            let h01 = -2.0 * u3 + 3.0 * u2;
            let h11 = u3 - u2;
            out.push(
                (0..p0.len())
                    .map(|i| h00 * p0[i] + h10 * chord * t0[i] + h01 * p1[i] + h11 * chord * t1[i])
                    .collect(),
            );
        }
    }
    out
}

/// Agreement between a continuation curve and a point cloud of Sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveCloudDistance {
    /// Largest distance from a cloud point (inside the box) to the curve.
    pub cloud_to_curve: f64,
    /// Largest distance from a curve vertex (inside the box) to the cloud.
    /// Bounded by the cloud spacing, not by solver accuracy.
    pub curve_to_cloud: f64,
}

pub fn curve_cloud_distance(
    cloud: &SigmaSet,
    curve: &ContinuationResult,
    within: &GridSpec,
) -> CurveCloudDistance {
    let dense = densify_curve(curve);
    // Newton may land a few ulps outside the box.
    let slack = 1e-9 * within.diameter();
    let cloud_pts: Vec<&Vec<f64>> = cloud
        .points
        .iter()
        .map(|p| &p.x)
        .filter(|x| within.contains(x, slack))
        .collect();
    let cloud_to_curve = cloud_pts
        .par_iter()
        .map(|c| {
            dense
                .windows(2)
                .map(|w| point_segment_distance(c, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    let curve_to_cloud = curve
        .set
        .points
        .iter()
        .filter(|p| within.contains(&p.x, slack))
        .map(|p| {
            cloud_pts
                .iter()
                .map(|c| linalg::euclid(&p.x, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    CurveCloudDistance {
        cloud_to_curve,
        curve_to_cloud,
    }
}
