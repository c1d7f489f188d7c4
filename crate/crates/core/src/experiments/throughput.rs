//! Hashing throughput over a fixed key stream. Report-only.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::splitmix64;
use crate::tabulation::{Key, SchemeKind, SchemeSpec, TabHasher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub scheme: String,
    pub n_keys: u64,
    pub first_ns_per_key: f64,
    pub repeat_ns_per_key: f64,
    /// XOR of all hash values; identical across runs with the same seed.
    pub checksum: u64,
    /// Bytes of random table the scheme reads from.
    pub table_bytes: u64,
}

/// Key `i` of the stream, masked to the scheme's key width.
pub fn key_stream(spec: &SchemeSpec, n_keys: u64) -> Vec<Key> {
    let bits = spec.params.key_bits();
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    (0..n_keys).map(|i| Key(splitmix64(i) & mask)).collect()
}

/// `8 · 2^k` bytes per table row: `c` rows for simple, `2c + d` for mixed (`h₁`, `h₂`, `h₃`).
pub fn table_bytes(spec: &SchemeSpec) -> u64 {
    let p = &spec.params;
    let row = 8u64 << p.char_bits;
    match spec.kind {
        SchemeKind::Simple => p.num_chars as u64 * row,
        SchemeKind::Mixed => (2 * p.num_chars + p.derived_chars) as u64 * row,
        SchemeKind::FullyRandom => 0,
    }
}

fn timed_pass<H: TabHasher>(h: &H, keys: &[Key]) -> (f64, u64) {
    let start = Instant::now();
    let mut acc = 0u64;
    for &k in keys {
        acc ^= h.hash(black_box(k));
    }
    let ns = start.elapsed().as_nanos() as f64;
    (ns / keys.len() as f64, black_box(acc))
}

pub fn throughput_bench(spec: &SchemeSpec, n_keys: u64, seed: u64) -> Result<ThroughputReport> {
    if n_keys == 0 {
        return Err(Error::InvalidParams("throughput needs at least one key".into()));
    }
    let keys = key_stream(spec, n_keys);
    let h = spec.build(seed)?;
    let (first, checksum) = timed_pass(&h, &keys);
    let (repeat, again) = timed_pass(&h, &keys);
    debug_assert_eq!(checksum, again);
    Ok(ThroughputReport {
        scheme: spec.descriptor(),
        n_keys,
        first_ns_per_key: first,
        repeat_ns_per_key: repeat,
        checksum,
        table_bytes: table_bytes(spec),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputComparison {
    pub simple: ThroughputReport,
    pub mixed: ThroughputReport,
    /// Mixed over simple, on the repeat pass.
    pub ratio: f64,
}

pub fn throughput_compare(k: u32, c: u32, d: u32, l: u32, n_keys: u64, seed: u64) -> Result<ThroughputComparison> {
    let simple = throughput_bench(&SchemeSpec::simple(k, c, l)?, n_keys, seed)?;
    let mixed = throughput_bench(&SchemeSpec::mixed(k, c, d, l)?, n_keys, seed)?;
    let ratio = mixed.repeat_ns_per_key / simple.repeat_ns_per_key;
    Ok(ThroughputComparison { simple, mixed, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_size_for_four_bytes_characters() {
        let s = SchemeSpec::simple(8, 4, 32).unwrap();
        assert_eq!(table_bytes(&s), 4 * 256 * 8);
    }

    #[test]
    fn checksum_is_reproducible() {
        let s = SchemeSpec::mixed(8, 4, 1, 32).unwrap();
        let a = throughput_bench(&s, 10_000, 3).unwrap();
        let b = throughput_bench(&s, 10_000, 3).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert!(a.first_ns_per_key > 0.0 && a.repeat_ns_per_key > 0.0);
    }

    #[test]
    fn stream_fits_key_width() {
        let s = SchemeSpec::simple(4, 2, 8).unwrap();
        assert!(key_stream(&s, 1000).iter().all(|k| k.0 < 256));
    }

    #[test]
    fn compare_reports_ratio() {
        let r = throughput_compare(8, 4, 1, 32, 20_000, 1).unwrap();
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
    }
}
