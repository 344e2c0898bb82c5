use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed with a path of integers into an independent stream seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(master ^ 0x9e37_79b9_7f4a_7c15);
    for p in path {
        s = splitmix64(s ^ splitmix64(*p));
    }
    s
}

/// Stable 64-bit key for a string, for use in seed paths.
pub fn string_key(s: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
