//! Seed derivation for reproducible parallel streams.
//!
//! Every random decision in a run is drawn from a ChaCha8 stream whose seed
//! is derived from the master seed plus a stable label, so rollout results
//! do not depend on scheduling or collection order, and a resumed run
//! replays the exact randomness of an uninterrupted one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates structured label tuples.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a label tuple.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut acc = mix(master);
    for &l in labels {
        acc = mix(acc ^ mix(l));
    }
    acc
}

/// Stream used to initialize network parameters.
pub fn param_stream(master: u64, net_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[0x70, net_index]))
}

/// Stream for one environment instance within one update's collection.
pub fn env_stream(master: u64, update: u64, env_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[0x65, update, env_index]))
}

/// Stream for one agent's action sampling within one update's collection.
pub fn agent_stream(master: u64, update: u64, env_index: u64, agent: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[0x61, update, env_index, agent]))
}

/// Stream for minibatch shuffling within one optimization epoch.
pub fn shuffle_stream(master: u64, update: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[0x73, update, epoch]))
}

/// Stream for evaluation episodes at a given update.
pub fn eval_stream(master: u64, update: u64, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[0x76, update, episode]))
}
