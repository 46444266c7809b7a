//! Systems and helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singset::sysmodel::{ControlAffineSystem, StrictFeedbackSystem};
use singset::transverse::TransverseManifold;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn system(states: &[&str], drift: &[&str], controls: &[Vec<&str>]) -> ControlAffineSystem {
    ControlAffineSystem::from_strings(states, drift, controls).unwrap()
}

/// Torque-driven pendulum; Sigma is `x2 = 0`.
pub fn pendulum() -> ControlAffineSystem {
    system(&["x1", "x2"], &["x2", "-sin(x1)"], &[vec!["0", "1"]])
}

/// Sigma is the parabola `x2 = -x1^2`.
pub fn parabola() -> ControlAffineSystem {
    system(&["x1", "x2"], &["x1^2 + x2", "0"], &[vec!["0", "1"]])
}

/// Two inputs; Sigma is the surface `x3 = -(x1^2 + x2^2)`.
pub fn bowl() -> ControlAffineSystem {
    system(
        &["x1", "x2", "x3"],
        &["x1^2 + x2^2 + x3", "x1 - x2", "0"],
        &[vec!["0", "0", "1"], vec!["0", "1", "0"]],
    )
}

/// Strict-feedback corpus: `(f, g)` per system.
pub fn strict_feedback_corpus() -> Vec<StrictFeedbackSystem> {
    let specs: [(&[&str], &[&str]); 5] = [
        (&["x1^2", "sin(x1) + x2"], &["1", "1"]),
        (&["sin(x1)", "x1*x2", "x3^2"], &["2 + cos(x1)", "1", "1"]),
        (&["x1^3 - x1", "cos(x2)*x1", "0"], &["1", "1 + x1^2", "1"]),
        (
            &["sin(x1)", "x1^2 - x2", "x3*x1", "x4"],
            &["1", "2", "1 + x2^2", "1"],
        ),
        (
            &["-x1", "x1*x2", "sin(x3) + x2", "0"],
            &["3", "2 + sin(x2)", "1", "1"],
        ),
    ];
    specs
        .iter()
        .map(|(f, g)| {
            let states: Vec<String> = (1..=f.len()).map(|i| format!("x{i}")).collect();
            let states: Vec<&str> = states.iter().map(String::as_str).collect();
            StrictFeedbackSystem::from_strings(&states, f, g).unwrap()
        })
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.gen_range(-half_width..half_width))
        .collect()
}

/// `W: x_n = sum k_i x_i` for the states `x1..xn`.
pub fn linear_graph(k: &[f64]) -> TransverseManifold {
    let n = k.len() + 1;
    let states: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let h = k
        .iter()
        .enumerate()
        .map(|(i, c)| format!("({c:e})*x{}", i + 1))
        .collect::<Vec<_>>()
        .join(" + ");
    TransverseManifold::graph(&states, (0..n - 1).collect(), vec![n - 1], &[h], None).unwrap()
}

/// Monic coefficients `c_0..c_{d-1}` of `prod (s - r)`, lowest first.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= ci * r;
        }
        c = next;
    }
    c.pop();
    c.iter().map(|z| z.re).collect()
}

/// Random roots closed under conjugation, spread so that the companion
/// eigenproblem stays well conditioned.
pub fn random_spectrum(rng: &mut ChaCha8Rng, degree: usize) -> Vec<Complex64> {
    let mut roots = Vec::with_capacity(degree);
    while roots.len() < degree {
        let k = roots.len() as f64;
        let re = -(0.5 + 0.6 * k) + rng.gen_range(-0.2..0.2);
        if degree - roots.len() >= 2 && rng.gen_bool(0.4) {
            let im = rng.gen_range(0.3..1.5);
            roots.push(Complex64::new(re, im));
            roots.push(Complex64::new(re, -im));
        } else {
            roots.push(Complex64::new(re, 0.0));
        }
    }
    roots
}

/// Largest distance under a greedy one-to-one matching.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}
