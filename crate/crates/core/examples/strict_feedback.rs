//! Strict-feedback forward substitution against Gauss-Newton.
use singset::sigma::{sigma_newton, sigma_strict_feedback, SigmaSettings};
use singset::sysmodel::StrictFeedbackSystem;

fn main() -> singset::Result<()> {
    let sf = StrictFeedbackSystem::from_strings(
        &["x1", "x2", "x3"],
        &["sin(x1)", "x1*x2", "x3^2"],
        &["2 + cos(x1)", "1", "1"],
    )?;
    let settings = SigmaSettings::default();
    let samples = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let graph = sigma_strict_feedback(&sf, &samples, &settings);
    let affine = sf.to_control_affine();
    for p in &graph.set.points {
        let seed: Vec<f64> = p.x.iter().map(|v| v + 1e-3).collect();
        let newton = sigma_newton(&affine, &seed, &settings)?;
        println!(
            "graph {:?}\nnewton {:?} ({} iterations)",
            p.x, newton.point, newton.iterations
        );
    }
    Ok(())
}
