//! Sigma of the torque-driven pendulum by grid scan and by continuation.
use singset::sigma::{
    curve_cloud_distance, sigma_continuation, sigma_grid_scan, ContinuationSettings, SigmaSettings,
};
use singset::sysmodel::{ControlAffineSystem, GridSpec, DEFAULT_GRID_CAP};

fn main() -> singset::Result<()> {
    let sys =
        ControlAffineSystem::from_strings(&["x1", "x2"], &["x2", "-sin(x1)"], &[vec!["0", "1"]])?;
    let grid = GridSpec::cube(2, -3.0, 3.0, 0.25)?;
    let settings = SigmaSettings::default();

    let scan = sigma_grid_scan(&sys, &grid, &settings, DEFAULT_GRID_CAP)?;
    println!(
        "grid scan: {} seeds, {} distinct points",
        scan.seeds,
        scan.set.len()
    );

    let curve = sigma_continuation(
        &sys,
        &[0.1, 0.0],
        &ContinuationSettings::for_box(&grid),
        &settings,
    )?;
    println!(
        "continuation: {} points, halts {:?} / {:?}",
        curve.set.len(),
        curve.forward_halt,
        curve.backward_halt
    );
    let worst = curve
        .set
        .points
        .iter()
        .map(|p| p.x[1].abs())
        .fold(0.0, f64::max);
    println!("max |x2| on the curve {worst:.2e}");
    let d = curve_cloud_distance(&scan.set, &curve, &grid);
    println!(
        "cloud -> curve {:.2e}, curve -> cloud {:.2e}",
        d.cloud_to_curve, d.curve_to_cloud
    );
    Ok(())
}
