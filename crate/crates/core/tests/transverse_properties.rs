mod common;

use proptest::prelude::*;
use singset::sysmodel::{LinearControlSystem, DEFAULT_RANK_TOL};
use singset::transverse::{self, EquilibriumSettings, TransverseDynamics, TransverseManifold};

fn states(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decomposition_reconstructs_the_drift(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        y in -3.0f64..3.0,
    ) {
        let sys = common::pendulum();
        let h = format!("({a:e})*x1 + ({b:e})*sin(x1)");
        let w = TransverseManifold::graph(&states(2), vec![0], vec![1], &[h], None).unwrap();
        let dynamics = TransverseDynamics::new(&w, &sys, 1e-8).unwrap();
        let p = w.lift(&[y]).unwrap();
        let d = dynamics.decompose_at(&p).unwrap();
        let f = sys.eval_drift(&p).unwrap();
        let err = (d.along_w() + d.along_d() - &f).norm();
        prop_assert!(err <= 1e-12 * f.norm().max(1.0), "error {err:e}");
    }

    #[test]
    fn equilibria_do_not_depend_on_the_chart(c in prop_oneof![-3.0f64..-0.3, 0.3f64..3.0]) {
        // Control (1, 1) is transverse to both graph forms of x2 = c x1.
        let sys = common::system(&["x1", "x2"], &["x2 - x1^3", "-sin(x1) + x2^2"], &[vec!["1", "1"]]);
        let over_x1 = TransverseManifold::graph(&states(2), vec![0], vec![1], &[format!("({c:e})*x1")], None).unwrap();
        let over_x2 = TransverseManifold::graph(&states(2), vec![1], vec![0], &[format!("x2/({c:e})")], None).unwrap();
        let seeds: Vec<Vec<f64>> = (-8..=8).map(|k| vec![0.25 * k as f64, 0.25 * c * k as f64]).collect();
        let settings = EquilibriumSettings::default();
        let a = transverse::find_equilibria(&over_x1, &sys, &seeds, &settings).unwrap();
        let b = transverse::find_equilibria(&over_x2, &sys, &seeds, &settings).unwrap();
        prop_assume!(!a.continuum && !b.continuum);
        prop_assert_eq!(a.equilibria.len(), b.equilibria.len());
        for (ea, eb) in a.equilibria.iter().zip(&b.equilibria) {
            prop_assert!(singset::linalg::euclid(&ea.point, &eb.point) < 1e-8);
            prop_assert!(common::spectrum_distance(&ea.eigenvalues, &eb.eigenvalues) < 1e-6);
        }
    }

    #[test]
    fn transverse_dynamics_places_poles(degree in 1usize..=7, seed in any::<u64>()) {
        let n = degree + 1;
        let mut rng = common::rng(seed);
        let roots = common::random_spectrum(&mut rng, degree);
        // s^d - k_d s^{d-1} - ... - k_1 = prod (s - r).
        let k: Vec<f64> = common::poly_from_roots(&roots).iter().map(|c| -c).collect();
        let a: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
        let sys = LinearControlSystem::controller_canonical(&a).unwrap().to_control_affine();
        let w = common::linear_graph(&k);
        let dynamics = TransverseDynamics::new(&w, &sys, 1e-8).unwrap();
        let eig = transverse::sorted_eigenvalues(&dynamics.jacobian(&vec![0.0; degree]).unwrap());
        let gap = common::spectrum_distance(&eig, &roots);
        prop_assert!(gap < 1e-6, "gap {gap:e}: {eig:?} vs {roots:?}");
    }
}

#[test]
fn tangency_to_sigma_shows_up_as_non_isolation() {
    // W(0) is tangent to Sigma = {x2 = -x1^2} at the origin.
    let sys = common::parabola();
    let w = TransverseManifold::graph(&states(2), vec![0], vec![1], &["0"], None).unwrap();
    let t =
        transverse::transversality_to_sigma(&w, &sys, &[0.0, 0.0], 1e-8, DEFAULT_RANK_TOL).unwrap();
    assert!(t.margin < 1e-8);
    let seeds: Vec<Vec<f64>> = [-1e-2, -1e-3, 1e-4, 2e-3, 1e-2]
        .iter()
        .map(|&v| vec![v, 0.0])
        .collect();
    let found =
        transverse::find_equilibria(&w, &sys, &seeds, &EquilibriumSettings::default()).unwrap();
    let near: Vec<_> = found
        .equilibria
        .iter()
        .filter(|e| singset::linalg::euclid(&e.point, &[0.0, 0.0]) < 1e-3)
        .collect();
    assert!(found.continuum || near.len() >= 2, "{:?}", found.equilibria);
}
