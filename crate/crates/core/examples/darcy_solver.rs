//! Second-order convergence of the Darcy solver on a manufactured solution,
//! then one random permeability sample.

use vidon::pde::{darcy_sample, DarcyConfig};
use vidon::seed::rng_from;
use vidon::verify::darcy_convergence;

fn main() -> vidon::Result<()> {
    let c = darcy_convergence()?;
    println!(
        "manufactured: error 64^2 {:.4e}  128^2 {:.4e}  ratio {:.3}  residual {:.2e}",
        c.coarse_error, c.fine_error, c.ratio, c.residual
    );

    let cfg = DarcyConfig {
        resolution: 64,
        ..DarcyConfig::default()
    };
    let (a, u) = darcy_sample(&cfg, &mut rng_from(1))?;
    println!(
        "random sample: a in [{:.3}, {:.3}]  u in [{:.4}, {:.4}]",
        a.min(),
        a.max(),
        u.min(),
        u.max()
    );
    Ok(())
}
