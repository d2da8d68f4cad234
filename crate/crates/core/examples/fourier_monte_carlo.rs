//! Monte-Carlo estimates of Fourier coefficients from random sensor
//! positions; the error decays like N^(-1/2).

use vidon::verify::mc_fourier_rate;

fn main() -> vidon::Result<()> {
    let rate = mc_fourier_rate(&[64, 256, 1024, 4096, 16384], 40, 5)?;
    for (n, e) in rate.samples.iter().zip(&rate.mean_errors) {
        println!("N = {n:>6}  mean coefficient error {e:.4e}");
    }
    println!("log-log slope {:.3}", rate.slope);
    Ok(())
}
