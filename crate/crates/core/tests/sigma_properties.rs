mod common;

use proptest::prelude::*;
use rand::Rng;
use singset::sigma::{self, SigmaSettings};
use singset::sysmodel::{ControlAffineSystem, LinearControlSystem, DEFAULT_RANK_TOL};

type Spec = (Vec<&'static str>, Vec<&'static str>, Vec<Vec<&'static str>>);

fn specs() -> Vec<Spec> {
    vec![
        (
            vec!["x1", "x2"],
            vec!["x2", "-sin(x1)"],
            vec![vec!["0", "1"]],
        ),
        (
            vec!["x1", "x2"],
            vec!["x1^2 + x2", "0"],
            vec![vec!["0", "1 + x1^2"]],
        ),
        (
            vec!["x1", "x2", "x3"],
            vec!["x1^2 + x2^2 + x3", "x1 - x2", "0"],
            vec![vec!["0", "0", "1"], vec!["0", "1", "0"]],
        ),
    ]
}

fn build(spec: &Spec) -> ControlAffineSystem {
    common::system(&spec.0, &spec.1, &spec.2)
}

/// `f + G k` for a feedback `k` given as one expression per input.
fn closed_loop(spec: &Spec, k: &[String]) -> ControlAffineSystem {
    let drift: Vec<String> = (0..spec.0.len())
        .map(|i| {
            let mut s = format!("({})", spec.1[i]);
            for (g, kj) in spec.2.iter().zip(k) {
                s.push_str(&format!(" + ({})*({kj})", g[i]));
            }
            s
        })
        .collect();
    let drift: Vec<&str> = drift.iter().map(String::as_str).collect();
    common::system(&spec.0, &drift, &spec.2)
}

fn random_feedback(rng: &mut impl Rng, n: usize, m: usize) -> Vec<String> {
    (0..m)
        .map(|_| {
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            format!(
                "{:e} + ({:e})*x1 + ({:e})*sin(x2) + ({:e})*x{n}^2",
                c[0], c[1], c[2], c[3]
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_basis_vectors_have_zero_residual(n in 2usize..=8, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let m = 1 + (seed as usize >> 8) % (n - 1);
        let sys = LinearControlSystem::new(
            common::random_matrix(&mut rng, n, n),
            common::random_matrix(&mut rng, n, m),
            DEFAULT_RANK_TOL,
        ).unwrap();
        let ls = sigma::sigma_linear(&sys, DEFAULT_RANK_TOL).unwrap();
        prop_assert!(!ls.degenerate);
        prop_assert_eq!(ls.dimension(), m);
        let affine = sys.to_control_affine();
        for v in ls.basis().column_iter() {
            let av = (sys.a() * v).norm();
            let r = sigma::sigma_residual(&affine, v.as_slice(), DEFAULT_RANK_TOL).unwrap();
            prop_assert!(r.norm() < 1e-10 * av.max(f64::MIN_POSITIVE), "|r| = {:e}, |Av| = {:e}", r.norm(), av);
        }
    }

    #[test]
    fn feedback_leaves_residual_norm_unchanged(
        which in 0usize..3,
        seed in any::<u64>(),
    ) {
        let spec = &specs()[which];
        let open = build(spec);
        let mut rng = common::rng(seed);
        let closed = closed_loop(spec, &random_feedback(&mut rng, open.n(), open.m()));
        for _ in 0..20 {
            let x = common::random_point(&mut rng, open.n(), 2.0);
            let a = sigma::sigma_residual(&open, &x, DEFAULT_RANK_TOL).unwrap().norm();
            let b = sigma::sigma_residual(&closed, &x, DEFAULT_RANK_TOL).unwrap().norm();
            let scale = open.eval_drift(&x).unwrap().norm().max(1.0);
            prop_assert!((a - b).abs() < 1e-12 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn strict_feedback_and_newton_trace_the_same_graph() {
    let settings = SigmaSettings::default();
    let mut rng = common::rng(7);
    let samples: Vec<f64> = (0..40).map(|k| -1.5 + 3.0 * k as f64 / 39.0).collect();
    for sf in common::strict_feedback_corpus() {
        let affine = sf.to_control_affine();
        let graph = sigma::sigma_strict_feedback(&sf, &samples, &settings);
        assert!(graph.failures.is_empty(), "{:?}", graph.failures);
        for p in &graph.set.points {
            let seed: Vec<f64> = p.x.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
            let y = sigma::sigma_newton(&affine, &seed, &settings)
                .unwrap()
                .point;
            assert!((y[0] - p.x[0]).abs() < 1e-2);
            let on_graph = sigma::sigma_strict_feedback(&sf, &[y[0]], &settings);
            let q = &on_graph.set.points[0].x;
            let gap = q
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < 1e-8, "Newton point {y:?} is {gap:e} off the graph");
        }
    }
}

#[test]
fn membership_survives_feedback_on_sigma() {
    let settings = SigmaSettings {
        tol: 1e-12,
        ..Default::default()
    };
    let mut rng = common::rng(11);
    for spec in specs() {
        let open = build(&spec);
        let closed = closed_loop(&spec, &random_feedback(&mut rng, open.n(), open.m()));
        for _ in 0..20 {
            let seed = common::random_point(&mut rng, open.n(), 1.5);
            let Ok(hit) = sigma::sigma_newton(&open, &seed, &settings) else {
                continue;
            };
            let r = sigma::sigma_residual(&closed, &hit.point, DEFAULT_RANK_TOL).unwrap();
            assert!(
                r.norm() < 1e-9,
                "closed-loop residual {:e} at {:?}",
                r.norm(),
                hit.point
            );
        }
    }
}

#[test]
fn accepted_points_carry_dimension_certificates() {
    let settings = SigmaSettings::default();
    let mut rng = common::rng(3);
    for spec in specs() {
        let sys = build(&spec);
        let mut accepted = 0;
        for _ in 0..30 {
            let seed = common::random_point(&mut rng, sys.n(), 1.5);
            let Ok(hit) = sigma::sigma_newton(&sys, &seed, &settings) else {
                continue;
            };
            let cert = sigma::dimension_certificate(&sys, &hit.point, DEFAULT_RANK_TOL).unwrap();
            assert!(cert.holds(), "{:?} at {:?}", cert, hit.point);
            assert_eq!(cert.dimension(sys.n()), sys.m());
            accepted += 1;
        }
        assert!(accepted > 20);
    }
}
