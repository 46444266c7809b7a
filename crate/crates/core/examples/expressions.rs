//! Parse, evaluate and differentiate a vector field component.
use singset::expr::parse;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vars = ["x1", "x2"];
    let e = parse("x1^2 * sin(x2) + exp(-x1)", &vars)?;
    let x = [0.7, 1.3];
    println!("f      = {e}");
    println!("f(x)   = {:.12}", e.eval(&x)?);
    for (i, name) in vars.iter().enumerate() {
        let d = e.derivative(i);
        println!("df/d{name} = {d}");
        println!("       = {:.12}", d.eval(&x)?);
    }
    Ok(())
}
