//! Rank map of the control distribution for g = (x1, x2), which vanishes
//! only at the origin.
use singset::sysmodel::{ControlAffineSystem, GridSpec, DEFAULT_GRID_CAP, DEFAULT_RANK_TOL};

fn main() -> singset::Result<()> {
    let sys =
        ControlAffineSystem::from_strings(&["x1", "x2"], &["x2", "-x1"], &[vec!["x1", "x2"]])?;
    for step in [0.5, 0.1] {
        let grid = GridSpec::cube(2, -1.0, 1.0, step)?;
        let strat = sys.stratify(&grid, DEFAULT_RANK_TOL, DEFAULT_GRID_CAP)?;
        let singular: Vec<_> = strat.with_corank(1).map(|l| l.point.clone()).collect();
        println!(
            "step {step}: {} points, regular fraction {:.5}, corank 1 at {singular:?}",
            strat.labels.len(),
            strat.regular_fraction
        );
    }
    Ok(())
}
