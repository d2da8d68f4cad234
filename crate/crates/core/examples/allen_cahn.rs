//! Closed-form Allen-Cahn travelling waves on a space-time lattice.

use vidon::pde::allen_cahn_sample;
use vidon::seed::rng_from;
use vidon::verify::allen_cahn_shift;

fn main() {
    let w = allen_cahn_shift(1000, 0);
    println!(
        "shift identity over 1000 draws: max error {:.2e}  values in [{:.3e}, {:.6}]",
        w.max_shift_error, w.min_value, w.max_value
    );

    let mut rng = rng_from(4);
    for _ in 0..4 {
        let s = allen_cahn_sample(32, 11, &mut rng);
        let (lo, hi) =
            s.u.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let p = &s.params;
        println!(
            "eps {:.3}  offset ({:.3}, {:.3})  direction ({:.3}, {:.3})  u in [{lo:.4}, {hi:.4}]",
            p.eps, p.ox, p.oy, p.cx, p.cy
        );
    }
}
