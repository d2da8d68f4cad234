//! Compares reverse-mode gradients of a small VIDON with central differences.
//! Components far below one cannot be resolved by the difference quotient at
//! small `h`; the rounding scale `eps * loss / h` shows where that starts.

use vidon::verify::{gradient_check, gradient_check_spec};

fn main() -> vidon::Result<()> {
    let spec = gradient_check_spec();
    for h in [1e-3, 1e-4, 1e-5, 1e-6] {
        let g = gradient_check(&spec, 0, h)?;
        println!(
            "h = {h:.0e}  parameters {}  max relative error {:.3e}  (|g| >= 1e-5: {:.3e})  max absolute error {:.2e}  rounding scale {:.2e}",
            g.params, g.max_rel_err, g.max_rel_err_resolved, g.max_abs_err, g.rounding_scale
        );
    }
    Ok(())
}
