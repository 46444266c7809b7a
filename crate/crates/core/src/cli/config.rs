//! TOML run configuration.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::design::MuRange;
use crate::error::{Error, Result};
use crate::sysmodel::{
    ControlAffineSystem, GridSpec, LinearControlSystem, StrictFeedbackSystem, DEFAULT_RANK_TOL,
};
use crate::transverse::TransverseManifold;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<SystemBlock>,
    pub linear: Option<LinearBlock>,
    pub manifold: Option<ManifoldBlock>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub n: usize,
    pub m: usize,
    pub states: Vec<String>,
    pub drift: Vec<String>,
    pub controls: Vec<Vec<String>>,
    #[serde(default)]
    pub strict_feedback: bool,
}

/// `x' = A x + B u`, rows of `A` and `B`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldBlock {
    /// 1-based.
    pub ind: Option<Vec<usize>>,
    /// 1-based.
    pub dep: Option<Vec<usize>>,
    pub h: Option<Vec<String>>,
    pub phi: Option<Vec<String>>,
    pub anchor: Option<Vec<f64>>,
    pub param: Option<String>,
    #[serde(default)]
    pub mu: f64,
    pub mu_range: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub tol: Option<f64>,
    pub rank_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub arc_step: Option<f64>,
    pub lambda: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub horizon: Option<f64>,
    pub report_dt: Option<f64>,
    /// `MIN:MAX:STEP` per axis, or one entry for all axes.
    pub grid: Option<Vec<String>>,
    pub seed_grid: Option<Vec<String>>,
    pub x0: Option<Vec<f64>>,
    pub control_bounds: Option<Vec<[f64; 2]>>,
    pub grid_cap: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
}

/// Command-line overrides of solver values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub rank_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub arc_step: Option<f64>,
    pub lambda: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub horizon: Option<f64>,
    pub mu_range: Option<String>,
    pub grid: Vec<String>,
    pub seed_grid: Vec<String>,
}

/// Solver values after defaults and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Effective {
    pub tol: f64,
    pub rank_tol: f64,
    pub max_iter: usize,
    /// `None` means 5% of the grid diameter.
    pub arc_step: Option<f64>,
    pub lambda: f64,
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
    pub report_dt: f64,
    pub grid: Option<GridSpec>,
    pub seed_grid: Option<GridSpec>,
    pub mu_range: Option<MuRange>,
    pub grid_cap: usize,
}

/// Validated system model.
#[derive(Debug, Clone)]
pub enum Model {
    Affine(ControlAffineSystem),
    StrictFeedback(StrictFeedbackSystem, ControlAffineSystem),
    Linear(LinearControlSystem, ControlAffineSystem),
}

impl Model {
    pub fn affine(&self) -> &ControlAffineSystem {
        match self {
            Model::Affine(s) | Model::StrictFeedback(_, s) | Model::Linear(_, s) => s,
        }
    }
}

/// Everything a subcommand needs, validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: Model,
    pub manifold: Option<TransverseManifold>,
    pub effective: Effective,
    pub x0: Option<Vec<f64>>,
    pub control_bounds: Option<Vec<(f64, f64)>>,
    pub out_dir: Option<String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn parse_axis(spec: &str) -> Result<(f64, f64, f64)> {
    let bad = || {
        config_err(format!(
            "grid axis `{spec}` is not of the form MIN:MAX:STEP"
        ))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    Ok((v[0], v[1], v[2]))
}

/// Per-axis `MIN:MAX:STEP` specs (or one broadcast spec) into a grid.
/// All axes must share the step.
pub fn parse_grid(specs: &[String], dim: usize) -> Result<GridSpec> {
    let axes: Vec<(f64, f64, f64)> = specs.iter().map(|s| parse_axis(s)).collect::<Result<_>>()?;
    let axes = match axes.len() {
        1 => vec![axes[0]; dim],
        k if k == dim => axes,
        k => return Err(config_err(format!("{k} grid axes given for {dim} states"))),
    };
    let step = axes[0].2;
    if axes.iter().any(|a| a.2 != step) {
        return Err(config_err("all grid axes must use the same step"));
    }
    GridSpec::new(
        axes.iter().map(|a| a.0).collect(),
        axes.iter().map(|a| a.1).collect(),
        step,
    )
    .map_err(|e| config_err(format!("grid: {e}")))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(format!("{name} must be positive, got {v}")))
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(config_err(format!(
            "[linear] {name} must be a nonempty rectangular list of rows"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl RunConfig {
    fn build_model(&self, rank_tol: f64) -> Result<Model> {
        match (&self.system, &self.linear) {
            (Some(_), Some(_)) => Err(config_err("give either [system] or [linear], not both")),
            (None, None) => Err(config_err("missing [system] block")),
            (None, Some(lin)) => {
                let sys =
                    LinearControlSystem::new(matrix(&lin.a, "a")?, matrix(&lin.b, "b")?, rank_tol)?;
                let affine = sys.to_control_affine();
                Ok(Model::Linear(sys, affine))
            }
            (Some(s), None) => {
                if s.states.len() != s.n {
                    return Err(config_err(format!(
                        "n = {} but {} states are listed",
                        s.n,
                        s.states.len()
                    )));
                }
                if s.drift.len() != s.n {
                    return Err(config_err(format!(
                        "n = {} but drift has {} components",
                        s.n,
                        s.drift.len()
                    )));
                }
                if s.controls.len() != s.m {
                    return Err(config_err(format!(
                        "m = {} but {} control fields are listed",
                        s.m,
                        s.controls.len()
                    )));
                }
                let affine = ControlAffineSystem::from_strings(&s.states, &s.drift, &s.controls)?;
                if s.strict_feedback {
                    let sf = StrictFeedbackSystem::from_control_affine(&affine)?;
                    Ok(Model::StrictFeedback(sf, affine))
                } else {
                    Ok(Model::Affine(affine))
                }
            }
        }
    }

    fn build_manifold(&self, sys: &ControlAffineSystem) -> Result<Option<TransverseManifold>> {
        let Some(mb) = &self.manifold else {
            return Ok(None);
        };
        let n = sys.n();
        let to_zero_based = |list: &[usize], name: &str| -> Result<Vec<usize>> {
            list.iter()
                .map(|&i| {
                    if i == 0 || i > n {
                        Err(Error::InvalidManifold(format!(
                            "{name} index {i} outside 1..{n}"
                        )))
                    } else {
                        Ok(i - 1)
                    }
                })
                .collect()
        };
        let param = mb.param.as_deref();
        let w = match (&mb.h, &mb.phi) {
            (Some(h), None) => {
                let (Some(ind), Some(dep)) = (&mb.ind, &mb.dep) else {
                    return Err(config_err("[manifold] with h needs ind and dep"));
                };
                let mut w = TransverseManifold::graph(
                    sys.states(),
                    to_zero_based(ind, "ind")?,
                    to_zero_based(dep, "dep")?,
                    h,
                    param,
                )?;
                w.set_mu(mb.mu);
                w
            }
            (None, Some(phi)) => {
                let Some(anchor) = &mb.anchor else {
                    return Err(config_err("[manifold] with phi needs an anchor point"));
                };
                if mb.ind.is_some() || mb.dep.is_some() {
                    return Err(config_err(
                        "[manifold] with phi chooses its own split; drop ind/dep",
                    ));
                }
                TransverseManifold::level_set(sys.states(), phi, param, mb.mu, anchor)?
            }
            _ => return Err(config_err("[manifold] needs exactly one of h or phi")),
        };
        if w.m() != sys.m() {
            return Err(Error::InvalidManifold(format!(
                "W has {} defining equations, the system has m = {} controls",
                w.m(),
                sys.m()
            )));
        }
        if mb.mu_range.is_some() && param.is_none() {
            return Err(config_err(
                "mu_range given but [manifold] declares no param",
            ));
        }
        Ok(Some(w))
    }

    /// Builds and validates everything, applying overrides.
    pub fn prepare(&self, ov: &Overrides) -> Result<Prepared> {
        let s = &self.solver;
        let rank_tol = ov.rank_tol.or(s.rank_tol).unwrap_or(DEFAULT_RANK_TOL);
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(config_err(format!(
                "rank_tol must lie in (0, 1), got {rank_tol}"
            )));
        }
        let model = self.build_model(rank_tol)?;
        let n = model.affine().n();
        let manifold = self.build_manifold(model.affine())?;

        let grid_specs = if ov.grid.is_empty() {
            s.grid.clone()
        } else {
            Some(ov.grid.clone())
        };
        let seed_specs = if ov.seed_grid.is_empty() {
            s.seed_grid.clone()
        } else {
            Some(ov.seed_grid.clone())
        };
        let mu_spec = ov
            .mu_range
            .clone()
            .or_else(|| self.manifold.as_ref().and_then(|m| m.mu_range.clone()));
        let max_iter = ov.max_iter.or(s.max_iter).unwrap_or(50);
        if max_iter == 0 {
            return Err(config_err("max_iter must be at least 1"));
        }
        let lambda = ov.lambda.or(s.lambda).unwrap_or(1.0);
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(config_err(format!("lambda must be >= 0, got {lambda}")));
        }
        let effective = Effective {
            tol: positive("tol", ov.tol.or(s.tol).unwrap_or(1e-9))?,
            rank_tol,
            max_iter,
            arc_step: ov
                .arc_step
                .or(s.arc_step)
                .map(|v| positive("arc_step", v))
                .transpose()?,
            lambda,
            rtol: positive("rtol", ov.rtol.or(s.rtol).unwrap_or(1e-8))?,
            atol: positive("atol", ov.atol.or(s.atol).unwrap_or(1e-10))?,
            horizon: positive("horizon", ov.horizon.or(s.horizon).unwrap_or(5.0))?,
            report_dt: positive("report_dt", s.report_dt.unwrap_or(0.05))?,
            grid: grid_specs
                .as_deref()
                .map(|g| parse_grid(g, n))
                .transpose()?,
            seed_grid: seed_specs
                .as_deref()
                .map(|g| parse_grid(g, n))
                .transpose()?,
            mu_range: mu_spec.as_deref().map(str::parse).transpose()?,
            grid_cap: s.grid_cap.unwrap_or(crate::sysmodel::DEFAULT_GRID_CAP),
        };
        if effective.mu_range.is_some() && manifold.as_ref().is_none_or(|w| w.param().is_none()) {
            return Err(config_err("--mu-range needs a [manifold] with a param"));
        }
        if let Some(x0) = &s.x0 {
            if x0.len() != n {
                return Err(config_err(format!(
                    "x0 has {} entries, expected {n}",
                    x0.len()
                )));
            }
        }
        let control_bounds = match &s.control_bounds {
            Some(b) => {
                if b.len() != model.affine().m() {
                    return Err(config_err(format!(
                        "{} control bounds for m = {} inputs",
                        b.len(),
                        model.affine().m()
                    )));
                }
                if b.iter().any(|[lo, hi]| !(lo < hi)) {
                    return Err(config_err("each control bound needs lo < hi"));
                }
                Some(b.iter().map(|[lo, hi]| (*lo, *hi)).collect())
            }
            None => None,
        };
        Ok(Prepared {
            model,
            manifold,
            effective,
            x0: s.x0.clone(),
            control_bounds,
            out_dir: self.output.dir.clone(),
        })
    }
}
