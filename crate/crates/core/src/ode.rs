//! Adaptive Dormand-Prince 5(4) integration with output on a uniform grid.

use crate::error::Result;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (equal to the last row of `A`, first-same-as-last).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeOutput {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    /// Why integration stopped before the last report time.
    pub truncated: Option<String>,
}

fn error_norm(x: &[f64], y: &[f64], err: &[f64], s: &OdeSettings) -> f64 {
    let sum: f64 = x
        .iter()
        .zip(y)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = s.atol + s.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / x.len() as f64).sqrt()
}

fn scaled_norm(v: &[f64], x: &[f64], s: &OdeSettings) -> f64 {
    let sum: f64 = v
        .iter()
        .zip(x)
        .map(|(vi, xi)| (vi / (s.atol + s.rtol * xi.abs())).powi(2))
        .sum();
    (sum / v.len() as f64).sqrt()
}

/// Starting step from first and second derivative estimates (Hairer,
/// Norsett and Wanner).
fn initial_step<F>(rhs: &mut F, t: f64, x: &[f64], k0: &[f64], s: &OdeSettings) -> Result<f64>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let d0 = scaled_norm(x, x, s);
    let d1 = scaled_norm(k0, x, s);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let x1: Vec<f64> = x.iter().zip(k0).map(|(a, b)| a + h0 * b).collect();
    let k1 = rhs(t + h0, &x1)?;
    let diff: Vec<f64> = k1.iter().zip(k0).map(|(a, b)| a - b).collect();
    let d2 = scaled_norm(&diff, x, s) / h0;
    let top = d1.max(d2);
    let h1 = if top <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / top).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

/// Integrates `x' = rhs(t, x)` from `times[0]`, reporting the state at each
/// entry of `times` (increasing). Steps are clipped to land on report
/// times. `on_step` sees every accepted step.
///
/// Right-hand side failures and step-size underflow end the run early;
/// the output then covers only the reached report times.
pub fn integrate<F, S>(
    mut rhs: F,
    x0: &[f64],
    times: &[f64],
    settings: &OdeSettings,
    mut on_step: S,
) -> OdeOutput
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    S: FnMut(f64, &[f64]),
{
    let n = x0.len();
    let mut out = OdeOutput {
        times: vec![times[0]],
        states: vec![x0.to_vec()],
        accepted: 0,
        rejected: 0,
        truncated: None,
    };
    let mut t = times[0];
    let mut x = x0.to_vec();
    let mut k0 = match rhs(t, &x) {
        Ok(k) => k,
        Err(e) => {
            out.truncated = Some(format!("right-hand side failed at t = {t}: {e}"));
            return out;
        }
    };
    on_step(t, &x);
    let span = times.last().copied().unwrap_or(t) - t;
    let mut h = match initial_step(&mut rhs, t, &x, &k0, settings) {
        Ok(h) => h.min(span.max(f64::MIN_POSITIVE)),
        Err(e) => {
            out.truncated = Some(format!("right-hand side failed at t = {t}: {e}"));
            return out;
        }
    };

    let mut stages = vec![vec![0.0; n]; 7];
    let mut next = 1;
    while next < times.len() {
        if out.accepted + out.rejected >= settings.max_steps {
            out.truncated = Some(format!(
                "step budget of {} exhausted at t = {t}",
                settings.max_steps
            ));
            return out;
        }
        let target = times[next];
        let min_step = 1e-13 * t.abs().max(1.0);
        let landing = t + h >= target - min_step;
        let step = if landing { target - t } else { h };
        if step < min_step {
            out.truncated = Some(format!("step size underflow at t = {t}"));
            return out;
        }
        stages[0].clone_from(&k0);
        let mut failed = None;
        for s in 1..7 {
            let xs: Vec<f64> = (0..n)
                .map(|i| x[i] + step * (0..s).map(|j| A[s][j] * stages[j][i]).sum::<f64>())
                .collect();
            match rhs(t + C[s] * step, &xs) {
                Ok(k) => stages[s] = k,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        let err_norm = if failed.is_some() {
            f64::INFINITY
        } else {
            let y: Vec<f64> = (0..n)
                .map(|i| x[i] + step * (0..7).map(|j| B5[j] * stages[j][i]).sum::<f64>())
                .collect();
            let err: Vec<f64> = (0..n)
                .map(|i| step * (0..7).map(|j| (B5[j] - B4[j]) * stages[j][i]).sum::<f64>())
                .collect();
            let e = error_norm(&x, &y, &err, settings);
            if e <= 1.0 && y.iter().all(|v| v.is_finite()) {
                t = if landing { target } else { t + step };
                x = y;
                k0 = stages[6].clone();
                out.accepted += 1;
                on_step(t, &x);
                if landing {
                    out.times.push(t);
                    out.states.push(x.clone());
                    next += 1;
                }
            } else {
                out.rejected += 1;
            }
            e
        };
        if let (Some(e), true) = (&failed, step <= min_step * 2.0) {
            out.truncated = Some(format!("right-hand side failed at t = {t}: {e}"));
            return out;
        }
        let factor = if err_norm == 0.0 {
            5.0
        } else if err_norm.is_finite() {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            0.25
        };
        // A step shortened only to hit a report time says nothing about
        // the attainable step length.
        h = if landing && err_norm <= 1.0 && step < h {
            h
        } else {
            step * factor
        };
    }
    out
}

/// `n` uniform report times `0, dt, 2 dt, ...` covering `[0, horizon]`;
/// the horizon itself is always included.
pub fn report_times(horizon: f64, dt: f64) -> Vec<f64> {
    let count = (horizon / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=count).map(|k| k as f64 * dt).collect();
    if horizon - times[count] > 1e-9 * dt {
        times.push(horizon);
    } else {
        times[count] = horizon;
    }
    times
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let times = report_times(5.0, 0.5);
        let out = integrate(
            |_, x| Ok(vec![-2.0 * x[0]]),
            &[1.0],
            &times,
            &OdeSettings::default(),
            |_, _| {},
        );
        assert!(out.truncated.is_none());
        assert_eq!(out.times.len(), 11);
        for (t, x) in out.times.iter().zip(&out.states) {
            assert!((x[0] - (-2.0 * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let times = report_times(20.0, 1.0);
        let s = OdeSettings {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        };
        let out = integrate(
            |_, x| Ok(vec![x[1], -x[0]]),
            &[1.0, 0.0],
            &times,
            &s,
            |_, _| {},
        );
        let last = out.states.last().unwrap();
        assert!((last[0] - 20f64.cos()).abs() < 1e-8);
        assert!((last[1] + 20f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn order_five_on_time_dependent_field() {
        // x' = t^4 is integrated exactly by a fifth-order method.
        let out = integrate(
            |t, _| Ok(vec![t.powi(4)]),
            &[0.0],
            &[0.0, 1.0],
            &OdeSettings::default(),
            |_, _| {},
        );
        assert!((out.states[1][0] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn blow_up_truncates() {
        let times = report_times(2.0, 0.1);
        let out = integrate(
            |_, x| Ok(vec![x[0] * x[0]]),
            &[1.0],
            &times,
            &OdeSettings::default(),
            |_, _| {},
        );
        assert!(out.truncated.is_some());
        assert!(*out.times.last().unwrap() <= 1.0);
    }

    #[test]
    fn report_grid_includes_horizon() {
        assert_eq!(report_times(1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let t = report_times(1.0, 0.3);
        assert_eq!(t.len(), 5);
        assert_eq!(*t.last().unwrap(), 1.0);
    }
}
