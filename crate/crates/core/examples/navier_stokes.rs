//! Pseudo-spectral vorticity solver: Taylor-Green decay against the exact
//! solution, then a random initial vorticity integrated to t = 1.

use vidon::pde::{ns_sample, NsConfig};
use vidon::seed::rng_from;
use vidon::verify::taylor_green_error;

fn main() -> vidon::Result<()> {
    let err = taylor_green_error(64, 1e-3, 1.0)?;
    println!("Taylor-Green 64^2, nu 1e-3, T 1: max error {err:.3e}");

    let cfg = NsConfig {
        final_time: 1.0,
        ..NsConfig::default()
    };
    let run = ns_sample(&cfg, &mut rng_from(2))?;
    let e0 = run.energy[0];
    let e1 = run.energy[run.energy.len() - 1];
    let monotone = run.energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    println!(
        "random vorticity: {} steps  energy {e0:.4e} -> {e1:.4e}  non-increasing: {monotone}",
        run.steps
    );
    Ok(())
}
