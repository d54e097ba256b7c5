//! Named random substreams derived from a single root seed.
//!
//! Every stochastic component draws from `substream(root, name, index)`, so a
//! component can be re-run on its own (or for a single period of a backtest)
//! and still see exactly the numbers it saw inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn substream_seed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(name)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn substream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(substream_seed(root, name, index))
}
