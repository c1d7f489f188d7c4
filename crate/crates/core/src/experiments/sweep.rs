//! Empirical p-norms against the theorem bounds over a grid of instances.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{ConstantPolicy, Theorem};
use crate::error::{Error, Result};
use crate::moments::{run_moments, Mode, MomentRequest, Observable};
use crate::numeric::{derive_seed, fmt_f64};
use crate::tabulation::{Key, SchemeKind, SchemeParams, SchemeSpec};
use crate::valuefn::{QueryValueFunction, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueShape {
    /// Unit weight on bin 0.
    SingleBin,
    /// Unit weight below `m/2`.
    ThresholdHalf,
}

impl ValueShape {
    pub fn name(self) -> &'static str {
        match self {
            ValueShape::SingleBin => "bin",
            ValueShape::ThresholdHalf => "threshold",
        }
    }

    pub fn build(self, keys: &[Key], range: u64) -> Result<ValueFunction> {
        let w = keys.iter().map(|&k| (k, 1.0));
        match self {
            ValueShape::SingleBin => ValueFunction::single_bin(w, 0, range),
            ValueShape::ThresholdHalf => ValueFunction::threshold(w, range / 2, range),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KeySetSpec {
    /// `[s]^{c−1} × Σ` with the largest `s` keeping the size at most `target` (at least `s = 1`).
    Grid { target: u64 },
    /// `size` distinct uniform keys.
    Random { size: u64 },
}

impl KeySetSpec {
    pub fn name(self) -> String {
        match self {
            KeySetSpec::Grid { target } => format!("grid{target}"),
            KeySetSpec::Random { size } => format!("random{size}"),
        }
    }

    pub fn build(self, params: &SchemeParams, seed: u64) -> Result<Vec<Key>> {
        let sigma = params.alphabet_size();
        let c = params.num_chars;
        match self {
            KeySetSpec::Grid { target } => {
                let mut side = 1u64;
                while side < sigma && (side + 1).checked_pow(c - 1).is_some_and(|s| s * sigma <= target) {
                    side += 1;
                }
                let prefixes = side.pow(c - 1);
                let mut keys = Vec::with_capacity((prefixes * sigma) as usize);
                for last in 0..sigma {
                    for y in 0..prefixes {
                        let mut chars = Vec::with_capacity(c as usize);
                        let mut rest = y;
                        for _ in 0..c - 1 {
                            chars.push(rest % side);
                            rest /= side;
                        }
                        chars.push(last);
                        keys.push(params.pack(&chars)?);
                    }
                }
                keys.sort();
                Ok(keys)
            }
            KeySetSpec::Random { size } => {
                if size as u128 > params.universe_size() / 2 {
                    return Err(Error::InvalidParams(format!(
                        "{size} random keys is more than half of the universe of {}",
                        params.universe_size()
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mask = if params.key_bits() == 64 { u64::MAX } else { (1u64 << params.key_bits()) - 1 };
                let mut set = BTreeSet::new();
                while (set.len() as u64) < size {
                    set.insert(rng.random::<u64>() & mask);
                }
                Ok(set.into_iter().map(Key).collect())
            }
        }
    }
}

/// Moment order: fixed, or `max{2, ln n}` for the instance's key count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum POrder {
    Fixed(f64),
    LogN,
}

impl POrder {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            POrder::Fixed(p) => p,
            POrder::LogN => (n as f64).ln().max(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub char_bits: u32,
    pub cs: Vec<u32>,
    pub range_bits: Vec<u32>,
    /// Derived characters used when the theorem is the mixed one.
    pub derived_chars: u32,
    pub values: Vec<ValueShape>,
    pub key_sets: Vec<KeySetSpec>,
    pub ps: Vec<POrder>,
    pub samples: u64,
    pub base_seed: u64,
    #[serde(default)]
    pub policy: ConstantPolicy,
}

impl SweepGrid {
    /// `c ∈ {2,3,4}`, `k = 8`, `m ∈ {2^8, 2^16}`, both value shapes, grid and random key sets,
    /// `p ∈ {2, 4, 8, 16, ln n}`.
    pub fn standard() -> Self {
        SweepGrid {
            char_bits: 8,
            cs: vec![2, 3, 4],
            range_bits: vec![8, 16],
            derived_chars: 1,
            values: vec![ValueShape::SingleBin, ValueShape::ThresholdHalf],
            key_sets: vec![KeySetSpec::Grid { target: 4096 }, KeySetSpec::Random { size: 4096 }],
            ps: vec![POrder::Fixed(2.0), POrder::Fixed(4.0), POrder::Fixed(8.0), POrder::Fixed(16.0), POrder::LogN],
            samples: 2000,
            base_seed: 0x5eed_0001,
            policy: ConstantPolicy::default(),
        }
    }

    /// A seconds-scale grid for smoke tests.
    pub fn small() -> Self {
        SweepGrid {
            char_bits: 4,
            cs: vec![2, 3],
            range_bits: vec![4],
            derived_chars: 1,
            values: vec![ValueShape::SingleBin, ValueShape::ThresholdHalf],
            key_sets: vec![KeySetSpec::Grid { target: 64 }, KeySetSpec::Random { size: 64 }],
            ps: vec![POrder::Fixed(2.0), POrder::Fixed(4.0), POrder::LogN],
            samples: 400,
            base_seed: 0x5eed_0002,
            policy: ConstantPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cs.is_empty() || self.range_bits.is_empty() || self.values.is_empty() || self.key_sets.is_empty() {
            return Err(Error::InvalidParams("sweep grid has an empty axis".into()));
        }
        if self.ps.is_empty() {
            return Err(Error::InvalidParams("sweep grid has no moment orders".into()));
        }
        self.policy.validate()
    }

    fn spec(&self, theorem: Theorem, c: u32, l: u32) -> Result<SchemeSpec> {
        match theorem {
            Theorem::FullyRandom => SchemeSpec::fully_random(self.char_bits, c, l),
            Theorem::Simple => SchemeSpec::simple(self.char_bits, c, l),
            Theorem::Mixed => SchemeSpec::mixed(self.char_bits, c, self.derived_chars, l),
        }
    }
}

/// One `(instance, p)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theorem: Theorem,
    pub scheme: String,
    pub value: String,
    pub key_set: String,
    pub n_keys: u64,
    pub p: f64,
    pub max_abs: f64,
    pub sigma2: f64,
    pub gamma_p: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `Ψ_p(γ^e M_v, γ^e σ_v²)` with the theorem's exponent `e`.
    pub shape: f64,
    pub shape_ratio: f64,
    pub bound: f64,
    pub bound_ratio: f64,
}

impl SweepRow {
    pub const CSV_HEADER: [&'static str; 15] = [
        "theorem",
        "scheme",
        "value",
        "key_set",
        "n_keys",
        "p",
        "M",
        "sigma2",
        "gamma_p",
        "estimate",
        "std_error",
        "shape",
        "shape_ratio",
        "bound",
        "bound_ratio",
    ];

    pub fn record(&self) -> Vec<String> {
        vec![
            self.theorem.name().to_string(),
            self.scheme.clone(),
            self.value.clone(),
            self.key_set.clone(),
            self.n_keys.to_string(),
            fmt_f64(self.p),
            fmt_f64(self.max_abs),
            fmt_f64(self.sigma2),
            fmt_f64(self.gamma_p),
            fmt_f64(self.estimate),
            fmt_f64(self.std_error),
            fmt_f64(self.shape),
            fmt_f64(self.shape_ratio),
            fmt_f64(self.bound),
            fmt_f64(self.bound_ratio),
        ]
    }
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SweepRow::CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Runs every grid instance under the scheme family of `theorem`. Instance `i` (in axis order
/// c, l, value, key set) uses key seed `derive_seed(base, 2i)` and Monte Carlo base seed
/// `derive_seed(base, 2i + 1)`, so the three theorems see identical key sets.
pub fn run_bound_sweep(theorem: Theorem, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let mut rows = Vec::new();
    let mut index = 0u64;
    for &c in &grid.cs {
        for &l in &grid.range_bits {
            for &shape in &grid.values {
                for &ks in &grid.key_sets {
                    let spec = grid.spec(theorem, c, l)?;
                    let keys = ks.build(&spec.params, derive_seed(grid.base_seed, 2 * index))?;
                    let mc_seed = derive_seed(grid.base_seed, 2 * index + 1);
                    index += 1;
                    let v = shape.build(&keys, spec.params.range())?;
                    let stats = v.stats();
                    let ps: Vec<f64> = grid.ps.iter().map(|p| p.resolve(keys.len())).collect();
                    let req = MomentRequest::new(
                        spec,
                        Observable::Plain(v),
                        ps.clone(),
                        Mode::MonteCarlo { samples: grid.samples, base_seed: mc_seed },
                    )
                    .with_policy(grid.policy);
                    let report = run_moments(&req)?;
                    for e in &report.estimates {
                        let shape_v = theorem.shape(e.p, &stats, &spec.params)?;
                        let bound = theorem.bound(e.p, &stats, &spec.params, &grid.policy)?;
                        rows.push(SweepRow {
                            theorem,
                            scheme: spec.descriptor(),
                            value: shape.name().to_string(),
                            key_set: ks.name(),
                            n_keys: keys.len() as u64,
                            p: e.p,
                            max_abs: stats.max_abs,
                            sigma2: stats.sigma2,
                            gamma_p: theorem.gamma(e.p, &stats, &spec.params)?,
                            estimate: e.estimate,
                            std_error: e.std_error,
                            shape: shape_v,
                            shape_ratio: ratio(e.estimate, shape_v),
                            bound,
                            bound_ratio: ratio(e.estimate, bound),
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySweepGrid {
    pub schemes: Vec<SchemeSpec>,
    /// Keys besides the query, drawn uniformly.
    pub n_keys: u64,
    pub ps: Vec<f64>,
    pub mode: Mode,
    pub base_seed: u64,
    #[serde(default)]
    pub policy: ConstantPolicy,
}

impl QuerySweepGrid {
    /// Collision counting with 64 keys into `m = 4` bins, simple and mixed, `c = 2`, `k = 4`.
    pub fn standard() -> Result<Self> {
        Ok(QuerySweepGrid {
            schemes: vec![SchemeSpec::simple(4, 2, 2)?, SchemeSpec::mixed(4, 2, 1, 2)?],
            n_keys: 64,
            ps: vec![2.0, 4.0, 8.0],
            mode: Mode::MonteCarlo { samples: 20_000, base_seed: 0x5eed_0003 },
            base_seed: 0x5eed_0004,
            policy: ConstantPolicy::default(),
        })
    }
}

/// One `(scheme, h(q), p)` cell of a query sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySweepRow {
    pub scheme: String,
    pub query_bin: u64,
    pub count: u64,
    pub p: f64,
    pub max_abs: f64,
    pub sigma2: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub shape: Option<f64>,
    pub bound: Option<f64>,
    pub ratio: Option<f64>,
}

impl QuerySweepRow {
    pub const CSV_HEADER: [&'static str; 11] =
        ["scheme", "query_bin", "count", "p", "M", "sigma2", "estimate", "std_error", "shape", "bound", "ratio"];

    pub fn record(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        vec![
            self.scheme.clone(),
            self.query_bin.to_string(),
            self.count.to_string(),
            fmt_f64(self.p),
            fmt_f64(self.max_abs),
            fmt_f64(self.sigma2),
            fmt_f64(self.estimate),
            fmt_f64(self.std_error),
            opt(self.shape),
            opt(self.bound),
            opt(self.ratio),
        ]
    }
}

pub fn write_query_sweep_csv<W: std::io::Write>(rows: &[QuerySweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(QuerySweepRow::CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Collision-counting sums `Σ_{x≠q} [h(x) = h(q)] − 1/m`, bucketed by `h(q)`. The query is key 0
/// and the other keys are drawn from the seeded key stream.
pub fn run_query_sweep(grid: &QuerySweepGrid) -> Result<Vec<QuerySweepRow>> {
    grid.policy.validate()?;
    let mut rows = Vec::new();
    for (i, spec) in grid.schemes.iter().enumerate() {
        if spec.kind == SchemeKind::FullyRandom {
            return Err(Error::InvalidParams("query sweeps take simple or mixed schemes".into()));
        }
        let query = Key(0);
        let keys: Vec<Key> = KeySetSpec::Random { size: grid.n_keys + 1 }
            .build(&spec.params, derive_seed(grid.base_seed, i as u64))?
            .into_iter()
            .filter(|&k| k != query)
            .take(grid.n_keys as usize)
            .collect();
        let v = QueryValueFunction::collision(keys.iter().map(|&k| (k, 1.0)), query, spec.params.range())?;
        let req = MomentRequest::new(*spec, Observable::Query(v), grid.ps.clone(), grid.mode).with_policy(grid.policy);
        let report = run_moments(&req)?;
        for b in &report.buckets {
            for e in &b.estimates {
                rows.push(QuerySweepRow {
                    scheme: spec.descriptor(),
                    query_bin: b.query_bin,
                    count: b.count,
                    p: e.p,
                    max_abs: b.stats.max_abs,
                    sigma2: b.stats.sigma2,
                    estimate: e.estimate,
                    std_error: e.std_error,
                    shape: e.shape,
                    bound: e.bound,
                    ratio: e.ratio,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_key_set_sizes() {
        let p = SchemeParams::simple(8, 2, 8).unwrap();
        assert_eq!(KeySetSpec::Grid { target: 4096 }.build(&p, 0).unwrap().len(), 4096);
        let p = SchemeParams::simple(8, 3, 8).unwrap();
        assert_eq!(KeySetSpec::Grid { target: 4096 }.build(&p, 0).unwrap().len(), 4096);
        let p = SchemeParams::simple(8, 4, 8).unwrap();
        assert_eq!(KeySetSpec::Grid { target: 4096 }.build(&p, 0).unwrap().len(), 2048);
        let p = SchemeParams::simple(8, 1, 8).unwrap();
        assert_eq!(KeySetSpec::Grid { target: 10 }.build(&p, 0).unwrap().len(), 256);
    }

    #[test]
    fn random_key_set_is_distinct_and_seeded() {
        let p = SchemeParams::simple(8, 2, 8).unwrap();
        let a = KeySetSpec::Random { size: 500 }.build(&p, 7).unwrap();
        let b = KeySetSpec::Random { size: 500 }.build(&p, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 500);
        assert!(a.iter().all(|k| k.0 < 1 << 16));
        assert!(KeySetSpec::Random { size: 40_000 }.build(&p, 7).is_err());
    }

    #[test]
    fn log_n_order() {
        assert_eq!(POrder::LogN.resolve(3), 2.0);
        assert!((POrder::LogN.resolve(4096) - 4096f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn second_moment_agrees_across_schemes() {
        // Exact variance identity: every scheme here is 2-independent, so ‖V‖₂ = σ_v.
        let grid = SweepGrid { ps: vec![POrder::Fixed(2.0)], samples: 4000, ..SweepGrid::small() };
        for th in [Theorem::FullyRandom, Theorem::Simple, Theorem::Mixed] {
            for r in run_bound_sweep(th, &grid).unwrap() {
                let sigma = r.sigma2.sqrt();
                assert!((r.estimate - sigma).abs() < 0.1 * sigma, "{th:?} {} {}: {} vs {sigma}", r.value, r.key_set, r.estimate);
            }
        }
    }

    #[test]
    fn sweep_is_reproducible() {
        let grid = SweepGrid { cs: vec![2], samples: 200, ..SweepGrid::small() };
        let a = run_bound_sweep(Theorem::Simple, &grid).unwrap();
        let b = run_bound_sweep(Theorem::Simple, &grid).unwrap();
        assert_eq!(a, b);
        let mut out = Vec::new();
        write_sweep_csv(&a, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), a.len() + 1);
    }

    #[test]
    fn query_sweep_buckets_every_bin() {
        let mut grid = QuerySweepGrid::standard().unwrap();
        grid.mode = Mode::MonteCarlo { samples: 2000, base_seed: 1 };
        let rows = run_query_sweep(&grid).unwrap();
        assert_eq!(rows.len(), 2 * 4 * 3);
        let total: u64 = rows.iter().filter(|r| r.p == 2.0 && r.scheme.starts_with("simple")).map(|r| r.count).sum();
        assert_eq!(total, 2000);
    }

    #[test]
    fn query_sweep_empty_support() {
        let grid = QuerySweepGrid {
            schemes: vec![SchemeSpec::simple(2, 2, 1).unwrap()],
            n_keys: 0,
            ps: vec![2.0, 4.0],
            mode: Mode::Exact,
            base_seed: 0,
            policy: ConstantPolicy::default(),
        };
        for r in run_query_sweep(&grid).unwrap() {
            assert_eq!(r.estimate, 0.0);
            assert_eq!(r.max_abs, 0.0);
        }
    }

    #[test]
    fn query_sweep_exact_matches_monte_carlo() {
        let base = QuerySweepGrid {
            schemes: vec![SchemeSpec::simple(2, 2, 1).unwrap()],
            n_keys: 6,
            ps: vec![2.0, 4.0],
            mode: Mode::Exact,
            base_seed: 11,
            policy: ConstantPolicy::default(),
        };
        let exact = run_query_sweep(&base).unwrap();
        let mc = run_query_sweep(&QuerySweepGrid { mode: Mode::MonteCarlo { samples: 40_000, base_seed: 5 }, ..base })
            .unwrap();
        for (a, b) in exact.iter().zip(&mc) {
            assert_eq!((a.query_bin, a.p), (b.query_bin, b.p));
            assert!((a.estimate - b.estimate).abs() <= 5.0 * b.std_error + 1e-12, "{a:?} {b:?}");
        }
    }
}
