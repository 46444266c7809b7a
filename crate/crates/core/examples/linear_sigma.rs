//! Singular set of a controller-canonical linear system: the x1 axis.
use singset::sigma::sigma_linear;
use singset::sysmodel::{LinearControlSystem, DEFAULT_RANK_TOL};

fn main() -> singset::Result<()> {
    let sys = LinearControlSystem::controller_canonical(&[2.0, -1.0, 0.5, 3.0])?;
    let sigma = sigma_linear(&sys, DEFAULT_RANK_TOL)?;
    println!(
        "dimension {}, degenerate {}",
        sigma.dimension(),
        sigma.degenerate
    );
    let v: Vec<String> = sigma
        .basis()
        .column(0)
        .iter()
        .map(|c| format!("{c:+.3e}"))
        .collect();
    println!("basis [{}]", v.join(", "));
    Ok(())
}
