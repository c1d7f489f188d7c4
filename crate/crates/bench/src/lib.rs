//! Shared fixtures for the criterion benches.

use tabhash::experiments::throughput::key_stream;
use tabhash::{Key, Result, SchemeSpec};

/// Seed for every benched table.
pub const BENCH_SEED: u64 = 0x5eed_0b00;

/// 32-bit keys split into 8-bit characters, simple and mixed (`d = 1` and `d = 4`).
pub fn hashing_specs() -> Result<Vec<SchemeSpec>> {
    Ok(vec![SchemeSpec::simple(8, 4, 32)?, SchemeSpec::mixed(8, 4, 1, 32)?, SchemeSpec::mixed(8, 4, 4, 32)?])
}

/// `n` keys drawn deterministically from the spec's universe.
pub fn keys(spec: &SchemeSpec, n: u64) -> Vec<Key> {
    key_stream(spec, n)
}
