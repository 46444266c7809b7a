//! Invariance feedback for the pendulum with W: x2 = -x1 and lambda = 2.
use singset::design::{simulate, synthesize_invariance_feedback, SimulationSettings};
use singset::sysmodel::ControlAffineSystem;
use singset::transverse::TransverseManifold;

fn main() -> singset::Result<()> {
    let sys =
        ControlAffineSystem::from_strings(&["x1", "x2"], &["x2", "-sin(x1)"], &[vec!["0", "1"]])?;
    let w = TransverseManifold::graph(sys.states(), vec![0], vec![1], &["-x1"], None)?;
    let law = synthesize_invariance_feedback(&w, &sys, 2.0, 1e-8)?;
    let traj = simulate(&law, &[1.0, 0.5], &SimulationSettings::default())?;
    for k in (0..traj.times.len()).step_by(20) {
        println!(
            "t = {:4.2}  x = ({:+.6}, {:+.6})  u = {:+.6}  |s| = {:.3e}",
            traj.times[k],
            traj.states[k][0],
            traj.states[k][1],
            traj.controls[k][0],
            traj.distance[k]
        );
    }
    println!(
        "fitted decay rate {:.6}",
        traj.fitted_decay_rate(1e-8).unwrap_or(f64::NAN)
    );
    Ok(())
}
