//! Evaluates a randomly initialized VIDON on sensor sets of several sizes and
//! checks that shuffling the sensors leaves the output bitwise unchanged.

use rand::seq::SliceRandom;
use rand::Rng;
use vidon::config::desk_vidon;
use vidon::model::{SensorSet, VidonParams};
use vidon::seed::rng_from;
use vidon::tensor::Tensor;

fn main() -> vidon::Result<()> {
    let spec = desk_vidon();
    let mut rng = rng_from(3);
    let model = VidonParams::init(&spec, &mut rng)?;
    println!("parameters: {}", model.count_params());

    let queries: Vec<f64> = (0..5 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let queries = Tensor::matrix(5, 3, queries)?;
    for m in [1, 7, 64, 300] {
        let coords = (0..2 * m).map(|_| rng.random_range(0.0..1.0)).collect();
        let values = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = SensorSet::from_flat(coords, 2, values, 1)?;
        let out = model.forward(&s, &queries)?;
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let shuffled = model.forward(&s.permuted(&perm)?, &queries)?;
        let identical = out
            .data()
            .iter()
            .zip(shuffled.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        println!(
            "m = {m:>3}  u(q0) = {:+.6}  permutation bitwise identical: {identical}",
            out.data()[0]
        );
    }
    Ok(())
}
