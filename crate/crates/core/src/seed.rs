//! Deterministic seed derivation, independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags mixed into derived seeds.
pub mod stream {
    pub const TRAIN: u64 = 0x7472_6169_6e00_0001;
    pub const VAL: u64 = 0x7661_6c00_0000_0002;
    pub const TEST: u64 = 0x7465_7374_0000_0003;
    pub const SENSORS: u64 = 0x7365_6e73_6f72_0004;
    pub const LAYOUT: u64 = 0x6c61_796f_7574_0005;
    pub const INIT: u64 = 0x696e_6974_0000_0006;
    pub const SHUFFLE: u64 = 0x7368_7566_0000_0007;
    pub const QUERIES: u64 = 0x7175_6572_7900_0008;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `tag` under `master`.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ tag) ^ index)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    rng_from(derive_seed(master, tag, index))
}
