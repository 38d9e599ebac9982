//! Named random substreams derived from one root seed.
//!
//! Every consumer (split, train, init, ensemble...) asks for its own stream
//! so adding randomness in one place never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `index` of the substream called `name`.
pub fn substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(root ^ fnv1a(name)));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. one per level for ensemble windows.
pub fn derive_seed(root: u64, name: &str, key: &str) -> u64 {
    splitmix(splitmix(root ^ fnv1a(name)) ^ fnv1a(key))
}
