//! Seed-derived random streams.
//!
//! Every randomized operation in the crate consumes an explicit `u64` seed
//! and an operation tag. The pair is expanded into an independent ChaCha8
//! stream, so concurrent callers (different suites, different seeds within a
//! suite, different purposes inside one run) never share state and reruns
//! are bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// FNV-1a over the tag bytes; cheap, stable, and well distributed enough to
/// key independent ChaCha streams.
fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the stream for `(tag, seed)`. Distinct tags or seeds give
/// independent streams.
pub fn stream(tag: &str, seed: u64) -> Stream {
    let mut state = fnv1a(tag) ^ seed.wrapping_mul(0x2545_f491_4f6c_dd1d);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream for seed `k` of a named suite; suites never share streams.
pub fn suite_stream(suite: &str, k: u64) -> Stream {
    stream(&format!("suite.{suite}"), k)
}
