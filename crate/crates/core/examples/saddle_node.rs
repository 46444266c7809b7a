//! Fold of the induced dynamics as W(mu): x2 = -mu sweeps past the
//! parabola x2 = -x1^2.
use singset::design::{trace_bifurcation, BifurcationSettings, MuRange};
use singset::sysmodel::{ControlAffineSystem, GridSpec, DEFAULT_GRID_CAP};
use singset::transverse::TransverseManifold;

fn main() -> singset::Result<()> {
    let sys =
        ControlAffineSystem::from_strings(&["x1", "x2"], &["x1^2 + x2", "0"], &[vec!["0", "1"]])?;
    let family = TransverseManifold::graph(sys.states(), vec![0], vec![1], &["-mu"], Some("mu"))?;
    let mu: MuRange = "-1:1:21".parse()?;
    let seeds = GridSpec::cube(2, -2.0, 2.0, 0.5)?.points(DEFAULT_GRID_CAP)?;
    let diagram = trace_bifurcation(
        &family,
        &sys,
        &mu.values(),
        &seeds,
        &BifurcationSettings::default(),
    )?;
    for s in &diagram.samples {
        let x1: Vec<String> = s
            .equilibria
            .iter()
            .map(|e| format!("{:+.4}", e.point[0]))
            .collect();
        println!("mu = {:+.2}: {}", s.mu, x1.join(" "));
    }
    for e in &diagram.events {
        println!(
            "{} at mu = {:.3e}, certified {}",
            e.kind.name(),
            e.mu,
            e.certified
        );
    }
    Ok(())
}
