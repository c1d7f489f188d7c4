//! 3-wise uniformity by enumeration, and the 4-key witness against 4-independence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::derive_seed;
use crate::tabulation::{
    checked_bits, decode_filling, hash_layout, scheme_from_tables, Key, SchemeKind, SchemeParams, SchemeSpec,
    TabHasher,
};

/// Cap on `C(|U|, 3) · m³` counters for the exhaustive check.
const MAX_TRIPLE_CELLS: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeWiseReport {
    pub scheme: String,
    pub fillings: u64,
    pub triples: u64,
    /// `fillings / m³`.
    pub expected: u64,
    pub min_count: u64,
    pub max_count: u64,
    pub uniform: bool,
}

/// Counts, over every table filling, the joint hash values of every triple of distinct keys.
pub fn three_wise_exhaustive(params: SchemeParams) -> Result<ThreeWiseReport> {
    let spec = SchemeSpec::new(SchemeKind::Simple, params)?;
    let layout = hash_layout(&spec)?;
    let bits = checked_bits(params.char_bits, &layout)?;
    let keys = params.universe(1 << 12)?;
    let n = keys.len() as u64;
    let m = params.range();
    let triples = n * (n - 1) * (n - 2) / 6;
    let cells = triples * m * m * m;
    if cells > MAX_TRIPLE_CELLS {
        return Err(Error::Budget { needed: cells, limit: MAX_TRIPLE_CELLS });
    }
    let mut index = Vec::with_capacity(triples as usize);
    for a in 0..keys.len() {
        for b in a + 1..keys.len() {
            for c in b + 1..keys.len() {
                index.push((a, b, c));
            }
        }
    }
    let fillings = 1u64 << bits;
    let chunk = (fillings / 64).max(1);
    let counts = (0..fillings.div_ceil(chunk))
        .into_par_iter()
        .map(|ci| -> Result<Vec<u64>> {
            let mut counts = vec![0u64; cells as usize];
            let mut hashes = vec![0u64; keys.len()];
            for f in ci * chunk..((ci + 1) * chunk).min(fillings) {
                let h = scheme_from_tables(&spec, decode_filling(params.char_bits, &layout, f))?;
                for (slot, &k) in hashes.iter_mut().zip(&keys) {
                    *slot = h.hash(k);
                }
                for (t, &(a, b, c)) in index.iter().enumerate() {
                    let cell = ((hashes[a] * m + hashes[b]) * m + hashes[c]) as usize;
                    counts[t * (m * m * m) as usize + cell] += 1;
                }
            }
            Ok(counts)
        })
        .try_reduce(|| vec![0u64; cells as usize], |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            Ok(a)
        })?;
    let min_count = counts.iter().copied().min().unwrap_or(0);
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let expected = fillings / (m * m * m);
    Ok(ThreeWiseReport {
        scheme: spec.descriptor(),
        fillings,
        triples,
        expected,
        min_count,
        max_count,
        uniform: min_count == expected && max_count == expected,
    })
}

/// The keys with characters `(0,0), (0,1), (1,0), (1,1)` in the first two positions.
pub fn witness_keys(params: &SchemeParams) -> Result<[Key; 4]> {
    if params.num_chars < 2 {
        return Err(Error::InvalidParams("the 4-key witness needs c >= 2".into()));
    }
    let k = params.char_bits;
    Ok([Key(0), Key(1 << k), Key(1), Key(1 | (1 << k))])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourTupleReport {
    pub scheme: String,
    pub seeds: u64,
    /// Seeds (or fillings) with `h(x₀) ⊕ h(x₁) ⊕ h(x₂) ⊕ h(x₃) = 0`.
    pub zero_count: u64,
    pub fraction: f64,
}

/// Frequency of the XOR identity over seeds `derive_seed(base_seed, i)`.
pub fn four_tuple_frequency(spec: &SchemeSpec, seeds: u64, base_seed: u64) -> Result<FourTupleReport> {
    let keys = witness_keys(&spec.params)?;
    let zero_count = (0..seeds)
        .into_par_iter()
        .map(|i| -> Result<u64> {
            let h = spec.build(derive_seed(base_seed, i))?;
            Ok(u64::from(keys.iter().fold(0u64, |acc, &k| acc ^ h.hash(k)) == 0))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(FourTupleReport {
        scheme: spec.descriptor(),
        seeds,
        zero_count,
        fraction: zero_count as f64 / seeds.max(1) as f64,
    })
}

/// Frequency of the XOR identity over every table filling of a simple scheme.
pub fn four_tuple_exhaustive(params: SchemeParams) -> Result<FourTupleReport> {
    let spec = SchemeSpec::new(SchemeKind::Simple, params)?;
    let layout = hash_layout(&spec)?;
    let bits = checked_bits(params.char_bits, &layout)?;
    let keys = witness_keys(&params)?;
    let fillings = 1u64 << bits;
    let mut zero_count = 0;
    for f in 0..fillings {
        let h = scheme_from_tables(&spec, decode_filling(params.char_bits, &layout, f))?;
        if keys.iter().fold(0u64, |acc, &k| acc ^ h.hash(k)) == 0 {
            zero_count += 1;
        }
    }
    Ok(FourTupleReport { scheme: spec.descriptor(), seeds: fillings, zero_count, fraction: zero_count as f64 / fillings as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceConfig {
    pub three_wise: SchemeParams,
    pub witness_exhaustive: SchemeParams,
    pub witness_simple: SchemeSpec,
    pub witness_mixed: SchemeSpec,
    pub seeds: u64,
    pub base_seed: u64,
}

impl IndependenceConfig {
    pub fn standard() -> Result<Self> {
        Ok(IndependenceConfig {
            three_wise: SchemeParams::simple(2, 2, 2)?,
            witness_exhaustive: SchemeParams::simple(1, 2, 2)?,
            witness_simple: SchemeSpec::simple(8, 2, 8)?,
            witness_mixed: SchemeSpec::mixed(8, 2, 1, 8)?,
            seeds: 10_000,
            base_seed: 0x5eed_0005,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub three_wise: ThreeWiseReport,
    pub witness_exhaustive: FourTupleReport,
    pub witness_simple: FourTupleReport,
    pub witness_mixed: FourTupleReport,
}

pub fn independence_test(config: &IndependenceConfig) -> Result<IndependenceReport> {
    Ok(IndependenceReport {
        three_wise: three_wise_exhaustive(config.three_wise)?,
        witness_exhaustive: four_tuple_exhaustive(config.witness_exhaustive)?,
        witness_simple: four_tuple_frequency(&config.witness_simple, config.seeds, config.base_seed)?,
        witness_mixed: four_tuple_frequency(&config.witness_mixed, config.seeds, config.base_seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_is_three_wise_uniform() {
        let r = three_wise_exhaustive(SchemeParams::simple(2, 2, 2).unwrap()).unwrap();
        assert_eq!(r.fillings, 1 << 16);
        assert_eq!(r.triples, 560);
        assert_eq!(r.expected, 1024);
        assert!(r.uniform, "{r:?}");
    }

    #[test]
    fn one_character_is_three_wise_uniform() {
        let r = three_wise_exhaustive(SchemeParams::simple(2, 1, 1).unwrap()).unwrap();
        assert!(r.uniform);
    }

    #[test]
    fn witness_cancels_for_every_filling() {
        let r = four_tuple_exhaustive(SchemeParams::simple(1, 2, 2).unwrap()).unwrap();
        assert_eq!(r.seeds, 1 << 8);
        assert_eq!(r.fraction, 1.0);
        let r = four_tuple_frequency(&SchemeSpec::simple(8, 4, 16).unwrap(), 500, 3).unwrap();
        assert_eq!(r.fraction, 1.0);
    }

    #[test]
    fn mixed_breaks_the_witness() {
        let r = four_tuple_frequency(&SchemeSpec::mixed(8, 2, 1, 8).unwrap(), 2000, 3).unwrap();
        assert!(r.fraction < 0.1, "{r:?}");
    }

    #[test]
    fn fully_random_witness_rate() {
        let r = four_tuple_frequency(&SchemeSpec::fully_random(8, 2, 4).unwrap(), 20_000, 9).unwrap();
        assert!((r.fraction - 1.0 / 16.0).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn witness_needs_two_characters() {
        assert!(witness_keys(&SchemeParams::simple(4, 1, 2).unwrap()).is_err());
    }
}
