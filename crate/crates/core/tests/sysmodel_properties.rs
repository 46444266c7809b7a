mod common;

use proptest::prelude::*;
use singset::linalg;
use singset::sysmodel::{GridSpec, LinearControlSystem, DEFAULT_GRID_CAP, DEFAULT_RANK_TOL};

use common::system;

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn coeffs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn appending_a_combination_column_keeps_rank(
        c in coeffs(6),
        mix in coeffs(2),
        x in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let g1 = [format!("{:e}*x1", c[0]), format!("{:e} + x2^2", c[1]), "1".to_string()];
        let g2 = [format!("sin(x3)*{:e}", c[2]), "x1*x2".to_string(), format!("{:e}", c[3])];
        let g3: Vec<String> = (0..3).map(|i| format!("({:e})*({}) + ({:e})*({})", mix[0], g1[i], mix[1], g2[i])).collect();
        let states = ["x1", "x2", "x3"];
        let drift = ["0", "0", "0"];
        let base = system(&states, &drift, &[refs(&g1), refs(&g2)]);
        let wide = system(&states, &drift, &[refs(&g1), refs(&g2), refs(&g3)]);
        let k_base = base.distribution_corank(&x, DEFAULT_RANK_TOL).unwrap();
        let k_wide = wide.distribution_corank(&x, DEFAULT_RANK_TOL).unwrap();
        let rank_base = 2 - k_base;
        let rank_wide = 3 - k_wide;
        prop_assert!(rank_wide >= rank_base);
        prop_assert!(k_wide <= 3 - rank_base);
        // Oracle: rank of the stacked control matrix.
        let rank = linalg::numerical_rank(&wide.control_matrix(&x).unwrap(), DEFAULT_RANK_TOL);
        prop_assert_eq!(rank, rank_wide);
    }

    #[test]
    fn linear_systems_are_everywhere_regular(
        n in 2usize..=6,
        seed in any::<u64>(),
        x in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let mut rng = common::rng(seed);
        let m = 1 + (seed as usize) % (n - 1);
        let sys = LinearControlSystem::new(
            common::random_matrix(&mut rng, n, n),
            common::random_matrix(&mut rng, n, m),
            DEFAULT_RANK_TOL,
        ).unwrap();
        let affine = sys.to_control_affine();
        prop_assert_eq!(affine.distribution_corank(&x[..n], DEFAULT_RANK_TOL).unwrap(), 0);
    }
}

#[test]
fn stratification_is_reproducible() {
    let sys = system(&["x1", "x2"], &["0", "0"], &[vec!["x1", "x2"]]);
    let grid = GridSpec::cube(2, -1.0, 1.0, 0.1).unwrap();
    let a = sys
        .stratify(&grid, DEFAULT_RANK_TOL, DEFAULT_GRID_CAP)
        .unwrap();
    let b = sys
        .stratify(&grid, DEFAULT_RANK_TOL, DEFAULT_GRID_CAP)
        .unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.regular_fraction, b.regular_fraction);
}
