//! k-partition MinHash estimation of a red fraction, and the leading-zeros mask count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, fmt_f64};
use crate::tabulation::{Key, SchemeKind, SchemeSpec, TabHasher};

/// How red labels are assigned to the balls `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Coloring {
    /// Balls `0..⌊f n⌉` are red.
    Prefix,
    /// A seeded uniformly random subset of `⌊f n⌉` balls is red.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPartitionConfig {
    pub n_balls: u64,
    pub red_fraction: f64,
    pub k_bins: u64,
    pub scheme: SchemeSpec,
    pub trials: u64,
    pub base_seed: u64,
    pub coloring: Coloring,
    /// Reject `k > |Σ| / (4 d ln|Σ|)`.
    pub enforce_bin_limit: bool,
}

impl KPartitionConfig {
    /// `n = 2^16`, `f = 1/3`, `k = 256`, mixed tabulation with 8-bit characters and `d = 1`.
    pub fn standard() -> Result<Self> {
        Ok(KPartitionConfig {
            n_balls: 1 << 16,
            red_fraction: 1.0 / 3.0,
            k_bins: 256,
            scheme: SchemeSpec::mixed(8, 4, 1, 32)?,
            trials: 100,
            base_seed: 0x5eed_0006,
            coloring: Coloring::Prefix,
            enforce_bin_limit: false,
        })
    }

    /// `|Σ| / (4 d ln|Σ|)`, with `d` taken as 1 for schemes without derived characters.
    pub fn bin_limit(&self) -> f64 {
        let sigma = self.scheme.params.alphabet_size() as f64;
        let d = self.scheme.params.derived_chars.max(1) as f64;
        sigma / (4.0 * d * sigma.ln())
    }

    pub fn bin_bits(&self) -> u32 {
        self.k_bins.trailing_zeros()
    }

    pub fn red_count(&self) -> u64 {
        (self.red_fraction * self.n_balls as f64).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.scheme.params;
        if !self.k_bins.is_power_of_two() {
            return Err(Error::InvalidParams(format!("k = {} must be a power of two", self.k_bins)));
        }
        if self.bin_bits() >= p.range_bits {
            return Err(Error::InvalidParams(format!(
                "log k = {} leaves no local bits out of l = {}",
                self.bin_bits(),
                p.range_bits
            )));
        }
        if !(self.red_fraction > 0.0 && self.red_fraction <= 1.0) {
            return Err(Error::InvalidParams(format!("red fraction {} must lie in (0, 1]", self.red_fraction)));
        }
        if self.n_balls == 0 || self.n_balls as u128 > p.universe_size() {
            return Err(Error::InvalidParams(format!("{} balls do not fit the key universe", self.n_balls)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParams("at least one trial is needed".into()));
        }
        if self.enforce_bin_limit && self.k_bins as f64 > self.bin_limit() {
            return Err(Error::Domain(format!(
                "k = {} exceeds |Σ|/(4 d ln|Σ|) = {:.3}",
                self.k_bins,
                self.bin_limit()
            )));
        }
        Ok(())
    }

    /// Mask length: `⌈log₂(n / (2|Σ|/3))⌉`, and 0 when `n ≤ |Σ|/2`.
    pub fn mask_bits(&self) -> u32 {
        let sigma = self.scheme.params.alphabet_size() as f64;
        let n = self.n_balls as f64;
        if n <= sigma / 2.0 {
            return 0;
        }
        (n / (2.0 * sigma / 3.0)).log2().ceil().max(0.0) as u32
    }

    /// `E|Y| = n / 2^q`.
    pub fn expected_mask_count(&self) -> f64 {
        self.n_balls as f64 / 2f64.powi(self.mask_bits() as i32)
    }

    /// Relative tolerance `8 √(ln|Σ| / |Σ|)` on `|Y|`.
    pub fn mask_tolerance(&self) -> f64 {
        let sigma = self.scheme.params.alphabet_size() as f64;
        8.0 * (sigma.ln() / sigma).sqrt()
    }

    /// Error threshold `5 / √k`.
    pub fn error_threshold(&self) -> f64 {
        5.0 / (self.k_bins as f64).sqrt()
    }

    fn red_mask(&self) -> Vec<bool> {
        let n = self.n_balls as usize;
        let mut red: Vec<bool> = (0..n).map(|i| (i as u64) < self.red_count()).collect();
        if let Coloring::Shuffled { seed } = self.coloring {
            red.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub estimate: f64,
    pub error: f64,
    pub nonempty_bins: u64,
    /// Balls whose local value has `q` leading zeros.
    pub mask_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPartitionReport {
    pub scheme: String,
    pub config: KPartitionConfig,
    pub mask_bits: u32,
    pub expected_mask_count: f64,
    pub mask_tolerance: f64,
    pub error_threshold: f64,
    pub within_error: u64,
    pub within_mask: u64,
    pub mean_error: f64,
    pub rms_error: f64,
    pub trials: Vec<TrialResult>,
}

impl KPartitionReport {
    pub const CSV_HEADER: [&'static str; 6] = ["trial", "seed", "estimate", "error", "nonempty_bins", "mask_count"];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                fmt_f64(t.estimate),
                fmt_f64(t.error),
                t.nonempty_bins.to_string(),
                t.mask_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One trial: ball `i` is key `i`; ties on the local value go to the smaller key.
fn run_trial(config: &KPartitionConfig, red: &[bool], trial: u64) -> Result<TrialResult> {
    let seed = derive_seed(config.base_seed, trial);
    let h = config.scheme.build(seed)?;
    let l = config.scheme.params.range_bits;
    let local_bits = l - config.bin_bits();
    let local_mask = (1u64 << local_bits) - 1;
    let q = config.mask_bits();
    let mut best: Vec<Option<(u64, bool)>> = vec![None; config.k_bins as usize];
    let mut mask_count = 0;
    for (i, &is_red) in red.iter().enumerate() {
        let v = h.hash(Key(i as u64));
        let bin = (v >> local_bits) as usize;
        let local = v & local_mask;
        if q >= local_bits || local >> (local_bits - q) == 0 {
            mask_count += 1;
        }
        match best[bin] {
            Some((b, _)) if b <= local => {}
            _ => best[bin] = Some((local, is_red)),
        }
    }
    let nonempty = best.iter().flatten().count() as u64;
    let reds = best.iter().flatten().filter(|(_, r)| *r).count() as f64;
    let estimate = reds / nonempty as f64;
    let truth = config.red_count() as f64 / config.n_balls as f64;
    Ok(TrialResult { trial, seed, estimate, error: estimate - truth, nonempty_bins: nonempty, mask_count })
}

/// Runs all trials in parallel; results are ordered by trial index.
pub fn minhash_kpartition(config: &KPartitionConfig) -> Result<KPartitionReport> {
    config.validate()?;
    let red = config.red_mask();
    let trials: Vec<TrialResult> =
        (0..config.trials).into_par_iter().map(|t| run_trial(config, &red, t)).collect::<Result<_>>()?;
    let thr = config.error_threshold();
    let expected = config.expected_mask_count();
    let tol = config.mask_tolerance();
    let within_error = trials.iter().filter(|t| t.error.abs() <= thr).count() as u64;
    let within_mask =
        trials.iter().filter(|t| (t.mask_count as f64 - expected).abs() <= tol * expected).count() as u64;
    let n = trials.len() as f64;
    Ok(KPartitionReport {
        scheme: config.scheme.descriptor(),
        config: config.clone(),
        mask_bits: config.mask_bits(),
        expected_mask_count: expected,
        mask_tolerance: tol,
        error_threshold: thr,
        within_error,
        within_mask,
        mean_error: trials.iter().map(|t| t.error).sum::<f64>() / n,
        rms_error: (trials.iter().map(|t| t.error * t.error).sum::<f64>() / n).sqrt(),
        trials,
    })
}

/// The same experiment under the fully random baseline with matching `k`, `c`, `l`.
pub fn fully_random_oracle(config: &KPartitionConfig) -> Result<KPartitionReport> {
    let p = config.scheme.params;
    let spec = SchemeSpec::fully_random(p.char_bits, p.num_chars, p.range_bits)?;
    let oracle = KPartitionConfig { scheme: spec, enforce_bin_limit: false, ..config.clone() };
    minhash_kpartition(&oracle)
}

/// Whether the scheme is one the bin limit is stated for.
pub fn bin_limit_applies(config: &KPartitionConfig) -> bool {
    config.scheme.kind == SchemeKind::Mixed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scheme: SchemeSpec) -> KPartitionConfig {
        KPartitionConfig {
            n_balls: 4096,
            red_fraction: 0.25,
            k_bins: 16,
            scheme,
            trials: 40,
            base_seed: 1,
            coloring: Coloring::Prefix,
            enforce_bin_limit: false,
        }
    }

    #[test]
    fn mask_bits_standard() {
        let c = KPartitionConfig::standard().unwrap();
        assert_eq!(c.mask_bits(), 9);
        assert_eq!(c.expected_mask_count(), 128.0);
        assert!((c.error_threshold() - 0.3125).abs() < 1e-15);
        let tiny = KPartitionConfig { n_balls: 100, ..c.clone() };
        assert_eq!(tiny.mask_bits(), 0);
        let mid = KPartitionConfig { n_balls: 150, ..c };
        assert_eq!(mid.mask_bits(), 0);
    }

    #[test]
    fn all_red_gives_one() {
        let c = KPartitionConfig { red_fraction: 1.0, ..small(SchemeSpec::mixed(8, 2, 1, 32).unwrap()) };
        let r = minhash_kpartition(&c).unwrap();
        assert!(r.trials.iter().all(|t| t.estimate == 1.0));
    }

    #[test]
    fn one_bin_is_a_single_sample() {
        let c = KPartitionConfig { k_bins: 1, trials: 600, ..small(SchemeSpec::mixed(8, 2, 1, 32).unwrap()) };
        let r = minhash_kpartition(&c).unwrap();
        assert!(r.trials.iter().all(|t| t.estimate == 0.0 || t.estimate == 1.0));
        let mean = r.trials.iter().map(|t| t.estimate).sum::<f64>() / 600.0;
        assert!((mean - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 600.0).sqrt(), "{mean}");
    }

    #[test]
    fn bin_limit_enforced_when_asked() {
        let mut c = KPartitionConfig::standard().unwrap();
        assert!(c.validate().is_ok());
        c.enforce_bin_limit = true;
        assert!(matches!(c.validate(), Err(Error::Domain(_))));
        c.k_bins = 8;
        assert!(c.validate().is_ok());
        assert!(bin_limit_applies(&c));
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = small(SchemeSpec::mixed(8, 2, 1, 32).unwrap());
        assert!(minhash_kpartition(&KPartitionConfig { k_bins: 12, ..base.clone() }).is_err());
        assert!(minhash_kpartition(&KPartitionConfig { red_fraction: 0.0, ..base.clone() }).is_err());
        assert!(minhash_kpartition(&KPartitionConfig { n_balls: 1 << 17, ..base.clone() }).is_err());
        assert!(minhash_kpartition(&KPartitionConfig { trials: 0, ..base }).is_err());
    }

    #[test]
    fn deterministic_under_replay() {
        let c = small(SchemeSpec::mixed(8, 2, 1, 32).unwrap());
        assert_eq!(minhash_kpartition(&c).unwrap(), minhash_kpartition(&c).unwrap());
    }

    #[test]
    fn mask_count_matches_direct_count() {
        let c = small(SchemeSpec::simple(8, 2, 32).unwrap());
        let r = minhash_kpartition(&c).unwrap();
        let t = &r.trials[3];
        let h = c.scheme.build(t.seed).unwrap();
        let q = c.mask_bits();
        let direct = (0..c.n_balls).filter(|&i| (h.hash(Key(i)) << (64 - 32 + c.bin_bits())).leading_zeros() >= q).count();
        assert_eq!(t.mask_count, direct as u64);
    }

    #[test]
    fn oracle_error_is_small() {
        let c = small(SchemeSpec::mixed(8, 2, 1, 32).unwrap());
        let r = fully_random_oracle(&c).unwrap();
        assert!(r.scheme.starts_with("random"));
        assert!(r.within_error as f64 >= 0.9 * c.trials as f64, "{}", r.within_error);
    }
}
