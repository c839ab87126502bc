//! Seed derivation.
//!
//! A run has one master seed. Every consumer of randomness gets its own
//! substream seed `derive(master, stream)`, where `derive` mixes the stream tag
//! through splitmix64 before combining it with the parent seed. Substreams can be
//! nested (`derive(derive(master, TRAIN), epoch)`), and adding a new stream tag
//! never shifts the values seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TRAIN_TRACE: u64 = 0x01;
pub const DT_TRACE: u64 = 0x02;
pub const EVAL_TRACE: u64 = 0x03;
pub const MODEL_INIT: u64 = 0x10;
pub const SHUFFLE: u64 = 0x11;
pub const LIVE_EVAL: u64 = 0x20;
pub const LABEL_FLIP: u64 = 0x21;
pub const POLICY_GEN: u64 = 0x30;
pub const VALIDATION: u64 = 0x31;

/// One round of the splitmix64 output function.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
