//! Seeded generators. Every random draw in the crate comes from a
//! generator derived from one user seed and a fixed label.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type SeededRng = Pcg64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `label` under `seed`. Distinct labels give independent streams.
pub fn derive(seed: u64, label: &str) -> SeededRng {
    let mixed = splitmix64(seed ^ splitmix64(fnv1a64(label.as_bytes())));
    Pcg64::seed_from_u64(mixed)
}

/// Like [`derive`] with an extra integer index (epoch, instance number).
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> SeededRng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(fnv1a64(label.as_bytes()))) ^ index);
    Pcg64::seed_from_u64(mixed)
}
