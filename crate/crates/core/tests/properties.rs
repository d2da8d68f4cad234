use proptest::prelude::*;

use vidon::config::desk_vidon;
use vidon::dataset::{Normalization, OperatorSample};
use vidon::model::{SensorSet, VidonParams};
use vidon::seed::rng_from;
use vidon::sensors::{config_ranges, sample_coords, Domain, SensorConfig, SensorKind};
use vidon::tensor::{Tape, Tensor};

/// A composite of every smooth tape operation, returning the scalar loss.
fn composite(tape: &mut Tape, x: Tensor, w: Tensor, b: Tensor) -> ([vidon::tensor::Var; 3], vidon::tensor::Var) {
    let (x, w, b) = (tape.param(x), tape.param(w), tape.param(b));
    let h = tape.linear(x, w, b).unwrap();
    let t = tape.tanh(h).unwrap();
    let half = tape.scale(t, 0.5).unwrap();
    let e = tape.exp(half).unwrap();
    let s = tape.softmax_scaled(h, 0.3).unwrap();
    let es = tape.mul(e, s).unwrap();
    let z = tape.concat_cols(&[t, es]).unwrap();
    let left = tape.slice_cols(z, 0, 2).unwrap();
    let m = tape.matmul(left, w).unwrap();
    let mx = tape.mul(m, x).unwrap();
    let a = tape.mean(mx).unwrap();
    let right = tape.slice_cols(z, 2, 4).unwrap();
    let d = tape.sub(right, t).unwrap();
    let d = tape.reshape(d, &[6]).unwrap();
    let c = tape.sum(d).unwrap();
    ([x, w, b], tape.add(a, c).unwrap())
}

fn composite_value(inputs: &[Tensor; 3]) -> f64 {
    let mut tape = Tape::new();
    let (_, loss) = composite(&mut tape, inputs[0].clone(), inputs[1].clone(), inputs[2].clone());
    tape.value(loss).item().unwrap()
}

fn sensor_set(points: &[(f64, f64, f64)]) -> SensorSet {
    let coords = points.iter().flat_map(|&(x, y, _)| [x, y]).collect();
    let values = points.iter().map(|&(_, _, v)| v).collect();
    SensorSet::from_flat(coords, 2, values, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tape_gradients_match_central_differences(entries in prop::collection::vec(-2.0..2.0f64, 22)) {
        let inputs = [
            Tensor::matrix(3, 4, entries[..12].to_vec()).unwrap(),
            Tensor::matrix(2, 4, entries[12..20].to_vec()).unwrap(),
            Tensor::vector(entries[20..].to_vec()),
        ];
        let mut tape = Tape::new();
        let (leaves, loss) = composite(&mut tape, inputs[0].clone(), inputs[1].clone(), inputs[2].clone());
        let value = tape.value(loss).item().unwrap();
        let grads = tape.backward(loss).unwrap().collect(&leaves).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            for i in 0..inputs[k].len() {
                let mut probe = inputs.clone();
                probe[k].data_mut()[i] += h;
                let up = composite_value(&probe);
                probe[k].data_mut()[i] -= 2.0 * h;
                let down = composite_value(&probe);
                let fd = (up - down) / (2.0 * h);
                let g = grads[k].data()[i];
                // The quotient carries rounding noise of order eps |loss| / h on top
                // of the relative tolerance.
                let allowed = 1e-5 * g.abs().max(1e-8) + 16.0 * f64::EPSILON * value.abs().max(1.0) / h;
                prop_assert!((fd - g).abs() <= allowed, "input {k}[{i}]: tape {g:e} difference {fd:e}");
            }
        }
    }

    #[test]
    fn output_ignores_sensor_order(
        points in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, -2.0..2.0f64), 1..40),
        seed in any::<u64>(),
        shuffle_key in any::<u64>(),
    ) {
        let model = VidonParams::init(&desk_vidon(), &mut rng_from(seed)).unwrap();
        let queries = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.9, 0.5, 0.0]).unwrap();
        let s = sensor_set(&points);
        let mut perm: Vec<usize> = (0..points.len()).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(shuffle_key | 1).rotate_left(17));
        let a = model.forward(&s, &queries).unwrap();
        let b = model.forward(&s.permuted(&perm).unwrap(), &queries).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn normalization_inverts(
        values in prop::collection::vec(-50.0..50.0f64, 3..20),
        shift in -10.0..10.0f64,
    ) {
        let m = values.len();
        let sample = |id: u32, offset: f64| OperatorSample {
            id,
            d: 2,
            d_v: 1,
            d_q: 2,
            d_u: 1,
            coords: (0..2 * m).map(|i| i as f64 * 0.1 + offset).collect(),
            values: values.iter().map(|v| v + offset).collect(),
            query: vec![0.5 + offset, 0.25],
            target: vec![values[0] * 2.0 + offset],
        };
        let train = [sample(0, 0.0), sample(1, shift)];
        let norm = Normalization::fit(&train, true).unwrap();
        for s in &train {
            let back = norm.denormalize(&norm.normalize(s));
            for (a, b) in s.values.iter().chain(&s.coords).zip(back.values.iter().chain(&back.coords)) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sensor_counts_stay_in_range(kind_index in 0usize..6, nx in 3usize..20, ny in 3usize..20, index in any::<u64>()) {
        let cfg = SensorConfig::new(SensorKind::ALL[kind_index], nx, ny);
        let (lo, hi) = config_ranges(&cfg);
        let domain = Domain::new(0.0, 2.0);
        let coords = sample_coords(&cfg, domain, 4, index);
        let m = coords.len() / 2;
        prop_assert!(lo <= m && m <= hi, "{m} outside {lo}..={hi}");
        prop_assert!(coords.chunks_exact(2).all(|p| domain.contains(p)));
    }
}
