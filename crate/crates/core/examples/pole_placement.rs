//! The graph x4 = k1 x1 + k2 x2 + k3 x3 places the poles of the induced
//! dynamics at the roots of s^3 - k3 s^2 - k2 s - k1.
use singset::sysmodel::LinearControlSystem;
use singset::transverse::{sorted_eigenvalues, TransverseDynamics, TransverseManifold};

fn main() -> singset::Result<()> {
    let sys =
        LinearControlSystem::controller_canonical(&[1.0, -2.0, 0.5, 4.0])?.to_control_affine();
    // (s + 1)(s + 2)(s + 3) = s^3 + 6 s^2 + 11 s + 6
    let w = TransverseManifold::graph(
        sys.states(),
        vec![0, 1, 2],
        vec![3],
        &["-6*x1 - 11*x2 - 6*x3"],
        None,
    )?;
    let dynamics = TransverseDynamics::new(&w, &sys, 1e-8)?;
    let jac = dynamics.jacobian(&[0.0, 0.0, 0.0])?;
    for z in sorted_eigenvalues(&jac) {
        println!("{:+.12} {:+.12}i", z.re, z.im);
    }
    Ok(())
}
