//! Sensor counts and extents for every layout kind on a 16x16 lattice.

use vidon::sensors::{config_ranges, sample_coords, Domain, SensorConfig, SensorKind};

fn main() {
    let domain = Domain::new(0.0, 2.0);
    println!("{:<16} {:>9} {:>14}  first samples", "kind", "allowed", "inside domain");
    for kind in SensorKind::ALL {
        let cfg = SensorConfig::new(kind, 16, 16);
        let (lo, hi) = config_ranges(&cfg);
        let mut counts = Vec::new();
        let mut inside = true;
        for index in 0..6 {
            let coords = sample_coords(&cfg, domain, 7, index);
            inside &= coords.chunks_exact(2).all(|p| domain.contains(p));
            counts.push(coords.len() / 2);
        }
        println!("{:<16} {:>4}..={:<4} {:>14}  {:?}", kind.name(), lo, hi, inside, counts);
    }
}
