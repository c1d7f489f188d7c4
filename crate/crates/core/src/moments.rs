//! Central moments of hash-based sums: exhaustive enumeration over all table fillings for tiny
//! instances, seeded Monte Carlo otherwise.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{gamma_p_khintchine, ConstantPolicy, Theorem};
use crate::error::{Error, Result};
use crate::experiments::lowerbound::{as_box_instance, lower_bound_exact_pnorms};
use crate::numeric::{derive_seed, empirical_pnorm, fmt_f64, jackknife_pnorm, CompensatedSum};
use crate::tabulation::{
    checked_bits, decode_filling, hash_layout, scheme_from_tables, sign_layout, signer_for, signer_from_tables,
    Key, LookupHash, LookupSign, MixedSignFunction, MixedTabHash, RowSpec, Scheme, SchemeKind, SchemeSpec,
    SignFn, SignFunction, Signer, SimpleTabHash, TabHasher, TabulationTable,
};
use crate::valuefn::{QueryValueFunction, ValueFunction, ValueStats};

/// Samples per jackknife block.
pub const JACKKNIFE_BLOCK: usize = 100;

/// Minimum Monte Carlo sample count.
pub const MIN_SAMPLES: u64 = 100;

/// Largest support the exhaustive oracle accepts.
pub const MAX_EXACT_SUPPORT: usize = 256;

/// Fillings evaluated per parallel work unit.
const CHUNK: u64 = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    None,
    SimpleSign,
    MixedSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    Exact,
    MonteCarlo { samples: u64, base_seed: u64 },
}

/// The random variable whose moments are measured.
#[derive(Debug, Clone)]
pub enum Observable {
    /// `Σ_x v(x, h(x))`.
    Plain(ValueFunction),
    /// `Σ_{x≠q} v(x, h(x), h(q))`, bucketed by `h(q)`.
    Query(QueryValueFunction),
}

impl Observable {
    fn support(&self) -> Vec<Key> {
        match self {
            Observable::Plain(v) => v.keys().to_vec(),
            Observable::Query(v) => {
                let mut keys = v.keys().to_vec();
                keys.push(v.query());
                keys.sort();
                keys.dedup();
                keys
            }
        }
    }

    fn range(&self) -> u64 {
        match self {
            Observable::Plain(v) => v.range(),
            Observable::Query(v) => v.range(),
        }
    }

    /// `(value, bucket)`; the bucket is 0 for plain observables.
    fn evaluate(&self, h: &dyn TabHasher, sign: Option<&dyn SignFn>) -> (f64, u64) {
        match self {
            Observable::Plain(v) => (v.hash_sum_with(h, sign), 0),
            Observable::Query(v) => match sign {
                None => v.query_hash_sum(h),
                Some(s) => v.signed_query_hash_sum(h, s),
            },
        }
    }
}

/// What to measure and how.
#[derive(Debug, Clone)]
pub struct MomentRequest {
    pub scheme: SchemeSpec,
    pub observable: Observable,
    pub ps: Vec<f64>,
    pub mode: Mode,
    pub sign_mode: SignMode,
    pub policy: ConstantPolicy,
}

impl MomentRequest {
    pub fn new(scheme: SchemeSpec, observable: Observable, ps: Vec<f64>, mode: Mode) -> Self {
        MomentRequest { scheme, observable, ps, mode, sign_mode: SignMode::None, policy: ConstantPolicy::default() }
    }

    pub fn with_sign(mut self, sign_mode: SignMode) -> Self {
        self.sign_mode = sign_mode;
        self
    }

    pub fn with_policy(mut self, policy: ConstantPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ps.is_empty() || self.ps.iter().any(|p| !(*p >= 2.0) || !p.is_finite()) {
            return Err(Error::InvalidParams(format!("moment orders must be finite and >= 2: {:?}", self.ps)));
        }
        if self.observable.range() != self.scheme.params.range() {
            return Err(Error::InvalidParams(format!(
                "value function has m = {} but the scheme has m = {}",
                self.observable.range(),
                self.scheme.params.range()
            )));
        }
        for k in self.observable.support() {
            self.scheme.params.key(k.0)?;
        }
        match (self.sign_mode, self.scheme.kind) {
            (SignMode::SimpleSign, SchemeKind::Mixed) | (SignMode::MixedSign, SchemeKind::Simple) => {
                Err(Error::InvalidParams(format!("{:?} does not pair with a {:?} scheme", self.sign_mode, self.scheme.kind)))
            }
            _ => Ok(()),
        }
    }

    fn theorem(&self) -> Theorem {
        match self.scheme.kind {
            SchemeKind::Simple => Theorem::Simple,
            SchemeKind::Mixed => Theorem::Mixed,
            SchemeKind::FullyRandom => Theorem::FullyRandom,
        }
    }

    fn signed(&self) -> bool {
        self.sign_mode != SignMode::None
    }
}

/// Moment estimate at one `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p: f64,
    /// Estimate of `‖X − E X‖_p`.
    pub estimate: f64,
    /// Jackknife standard error; 0 in exact mode.
    pub std_error: f64,
    /// The theorem's bound under the request's constant policy.
    pub bound: Option<f64>,
    /// The bound with all constants set to 1.
    pub shape: Option<f64>,
    /// `estimate / bound`.
    pub ratio: Option<f64>,
}

/// Moments conditioned on one value of `h(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub query_bin: u64,
    /// Number of samples (or fillings) in this bucket.
    pub count: u64,
    pub mean: f64,
    pub stats: ValueStats,
    pub estimates: Vec<MomentEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub scheme: String,
    pub theorem: Theorem,
    pub mode: Mode,
    pub sign_mode: SignMode,
    /// Samples drawn, or table fillings enumerated.
    pub samples: u64,
    pub mean: f64,
    pub stats: ValueStats,
    pub estimates: Vec<MomentEstimate>,
    /// Per-`h(q)` results; empty for plain observables.
    pub buckets: Vec<BucketReport>,
    pub wall_time_secs: f64,
}

impl MomentReport {
    /// The report with its timing zeroed, for replay comparisons.
    pub fn without_timing(mut self) -> Self {
        self.wall_time_secs = 0.0;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub const CSV_HEADER: [&'static str; 8] =
        ["query_bin", "count", "p", "estimate", "std_error", "bound", "shape", "ratio"];

    /// Flat CSV: one row per `(bucket, p)`; the aggregate rows have an empty `query_bin`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let mut row = |bin: String, count: u64, e: &MomentEstimate| {
            w.write_record([
                bin,
                count.to_string(),
                fmt_f64(e.p),
                fmt_f64(e.estimate),
                fmt_f64(e.std_error),
                opt(e.bound),
                opt(e.shape),
                opt(e.ratio),
            ])
        };
        for e in &self.estimates {
            row(String::new(), self.samples, e)?;
        }
        for b in &self.buckets {
            for e in &b.estimates {
                row(b.query_bin.to_string(), b.count, e)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the request in its configured mode.
pub fn run_moments(req: &MomentRequest) -> Result<MomentReport> {
    match req.mode {
        Mode::Exact => exact_moments(req),
        Mode::MonteCarlo { .. } => monte_carlo_moments(req),
    }
}

fn plain_stats(req: &MomentRequest) -> ValueStats {
    match &req.observable {
        Observable::Plain(v) => v.stats(),
        Observable::Query(_) => ValueStats::zero(),
    }
}

fn bucket_stats(req: &MomentRequest, bin: u64) -> ValueStats {
    match &req.observable {
        Observable::Plain(v) => v.stats(),
        Observable::Query(v) => v.stats_given(bin),
    }
}

fn bound_pair(req: &MomentRequest, p: f64, stats: &ValueStats) -> (Option<f64>, Option<f64>) {
    let th = req.theorem();
    let params = &req.scheme.params;
    (th.bound(p, stats, params, &req.policy).ok(), th.shape(p, stats, params).ok())
}

fn estimate(req: &MomentRequest, p: f64, est: f64, se: f64, stats: &ValueStats) -> MomentEstimate {
    let (bound, shape) = bound_pair(req, p, stats);
    let ratio = bound.filter(|b| *b > 0.0).map(|b| est / b);
    MomentEstimate { p, estimate: est, std_error: se, bound, shape, ratio }
}

/// Aggregated estimates for query observables: bounded by the largest bucket bound.
fn aggregate_query_estimate(req: &MomentRequest, p: f64, est: f64, se: f64, buckets: &[BucketReport]) -> MomentEstimate {
    let pick = |f: fn(&MomentEstimate) -> Option<f64>| {
        buckets
            .iter()
            .filter_map(|b| b.estimates.iter().find(|e| e.p == p).and_then(f))
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
    };
    let bound = pick(|e| e.bound);
    let shape = pick(|e| e.shape);
    let _ = req;
    MomentEstimate { p, estimate: est, std_error: se, bound, shape, ratio: bound.filter(|b| *b > 0.0).map(|b| est / b) }
}

// ---------------------------------------------------------------------------------------------
// Exact enumeration

/// Table layout of the whole random experiment, and how to turn one filling into a draw.
struct ExactLayout {
    char_bits: u32,
    specs: Vec<RowSpec>,
    hash_tables: usize,
}

fn exact_layout(req: &MomentRequest, support: &[Key]) -> Result<ExactLayout> {
    let params = &req.scheme.params;
    let (char_bits, mut specs) = match req.scheme.kind {
        SchemeKind::FullyRandom => (0, vec![RowSpec { rows: support.len() as u32, width: params.range_bits }]),
        _ => (params.char_bits, hash_layout(&req.scheme)?),
    };
    let hash_tables = specs.len();
    if req.signed() {
        match req.scheme.kind {
            SchemeKind::FullyRandom => specs.push(RowSpec { rows: support.len() as u32, width: 1 }),
            _ => specs.extend(sign_layout(&req.scheme)?),
        }
    }
    checked_bits(char_bits, &specs)?;
    Ok(ExactLayout { char_bits, specs, hash_tables })
}

fn draw_from_tables(
    req: &MomentRequest,
    layout: &ExactLayout,
    support: &[Key],
    mut tables: Vec<TabulationTable>,
) -> Result<(Scheme, Option<Signer>)> {
    let sign_tables = tables.split_off(layout.hash_tables);
    let scheme = match req.scheme.kind {
        SchemeKind::FullyRandom => {
            let values = tables[0].entries().map(<[u64]>::to_vec).unwrap_or_default();
            Scheme::Lookup(LookupHash::new(req.scheme.params, support.to_vec(), values)?)
        }
        _ => scheme_from_tables(&req.scheme, tables)?,
    };
    let signer = if !req.signed() {
        None
    } else if req.scheme.kind == SchemeKind::FullyRandom {
        let bits = sign_tables[0].entries().unwrap_or_default();
        let signs = bits.iter().map(|b| if *b == 1 { -1 } else { 1 }).collect();
        Some(Signer::Lookup(LookupSign::new(support.to_vec(), signs)?))
    } else {
        Some(signer_from_tables(&scheme, sign_tables)?)
    };
    Ok((scheme, signer))
}

#[derive(Debug, Clone, Default)]
struct FirstPass {
    count: u64,
    sum: CompensatedSum,
    max_abs: f64,
}

impl FirstPass {
    fn add(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.max_abs = self.max_abs.max(x.abs());
    }

    fn merge(&mut self, o: &FirstPass) {
        self.count += o.count;
        self.sum.add(o.sum.value());
        self.max_abs = self.max_abs.max(o.max_abs);
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum.value() / self.count as f64
        }
    }
}

/// Per-chunk `Σ |X − μ|^p` sums: overall, and per query bucket.
type ChunkSums = (Vec<CompensatedSum>, BTreeMap<u64, Vec<CompensatedSum>>);

/// Exact moments by iterating every table filling with equal weight.
///
/// When that is over budget and the request is a unit-weight single-bin sum over a full box of
/// keys under simple tabulation, the moments come from the partition-profile convolution instead
/// (`samples` is then 0).
pub fn exact_moments(req: &MomentRequest) -> Result<MomentReport> {
    match enumerate_moments(req) {
        Err(e @ Error::Budget { .. }) => box_moments(req).unwrap_or(Err(e)),
        other => other,
    }
}

fn box_moments(req: &MomentRequest) -> Option<Result<MomentReport>> {
    let Observable::Plain(v) = &req.observable else { return None };
    if req.scheme.kind != SchemeKind::Simple || req.sign_mode != SignMode::None {
        return None;
    }
    let start = Instant::now();
    let inst = as_box_instance(req.scheme.params, v)?;
    let norms = lower_bound_exact_pnorms(&inst, &req.ps).ok()?;
    let stats = v.stats();
    let estimates = req.ps.iter().zip(norms).map(|(&p, est)| estimate(req, p, est, 0.0, &stats)).collect();
    Some(Ok(MomentReport {
        scheme: req.scheme.descriptor(),
        theorem: req.theorem(),
        mode: req.mode,
        sign_mode: req.sign_mode,
        samples: 0,
        mean: 0.0,
        stats,
        estimates,
        buckets: Vec::new(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    }))
}

fn enumerate_moments(req: &MomentRequest) -> Result<MomentReport> {
    req.validate()?;
    let start = Instant::now();
    let support = req.observable.support();
    if support.len() > MAX_EXACT_SUPPORT {
        return Err(Error::Budget { needed: support.len() as u64, limit: MAX_EXACT_SUPPORT as u64 });
    }
    let layout = exact_layout(req, &support)?;
    let bits = checked_bits(layout.char_bits, &layout.specs)?;
    let total = 1u64 << bits;
    // Surface construction errors once, before the parallel loops.
    draw_from_tables(req, &layout, &support, decode_filling(layout.char_bits, &layout.specs, 0))?;

    let eval = |index: u64| -> (f64, u64) {
        let tables = decode_filling(layout.char_bits, &layout.specs, index);
        let (scheme, signer) =
            draw_from_tables(req, &layout, &support, tables).expect("layout validated on filling 0");
        req.observable.evaluate(&scheme, signer.as_ref().map(|s| s as &dyn SignFn))
    };
    let chunks: Vec<(u64, u64)> = (0..total.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(total))).collect();

    let first: Vec<BTreeMap<u64, FirstPass>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc: BTreeMap<u64, FirstPass> = BTreeMap::new();
            for i in lo..hi {
                let (x, b) = eval(i);
                acc.entry(b).or_default().add(x);
            }
            acc
        })
        .collect();
    let mut per_bucket: BTreeMap<u64, FirstPass> = BTreeMap::new();
    for part in &first {
        for (b, fp) in part {
            per_bucket.entry(*b).or_default().merge(fp);
        }
    }
    let mut overall = FirstPass::default();
    for fp in per_bucket.values() {
        overall.merge(fp);
    }
    let mean = overall.mean();
    let means: BTreeMap<u64, f64> = per_bucket.iter().map(|(b, fp)| (*b, fp.mean())).collect();
    let scale = overall.max_abs + mean.abs().max(means.values().fold(0.0f64, |a, m| a.max(m.abs())));

    // Second pass: Σ (|X − μ|/scale)^p, overall and per bucket.
    let np = req.ps.len();
    let second: Vec<ChunkSums> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut all = vec![CompensatedSum::new(); np];
            let mut byb: BTreeMap<u64, Vec<CompensatedSum>> = BTreeMap::new();
            for i in lo..hi {
                let (x, b) = eval(i);
                let d = if scale > 0.0 { (x - mean).abs() / scale } else { 0.0 };
                let db = if scale > 0.0 { (x - means[&b]).abs() / scale } else { 0.0 };
                let slot = byb.entry(b).or_insert_with(|| vec![CompensatedSum::new(); np]);
                for (k, &p) in req.ps.iter().enumerate() {
                    all[k].add(d.powf(p));
                    slot[k].add(db.powf(p));
                }
            }
            (all, byb)
        })
        .collect();
    let mut all = vec![CompensatedSum::new(); np];
    let mut byb: BTreeMap<u64, Vec<CompensatedSum>> = BTreeMap::new();
    for (a, bmap) in &second {
        for k in 0..np {
            all[k].add(a[k].value());
        }
        for (b, v) in bmap {
            let slot = byb.entry(*b).or_insert_with(|| vec![CompensatedSum::new(); np]);
            for k in 0..np {
                slot[k].add(v[k].value());
            }
        }
    }
    let norm = |sum: f64, count: u64, p: f64| scale * (sum / count as f64).powf(1.0 / p);

    let is_query = matches!(req.observable, Observable::Query(_));
    let buckets: Vec<BucketReport> = if is_query {
        byb.iter()
            .map(|(b, sums)| {
                let fp = &per_bucket[b];
                let stats = bucket_stats(req, *b);
                let estimates = req
                    .ps
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| estimate(req, p, norm(sums[k].value(), fp.count, p), 0.0, &stats))
                    .collect();
                BucketReport { query_bin: *b, count: fp.count, mean: fp.mean(), stats, estimates }
            })
            .collect()
    } else {
        Vec::new()
    };
    let stats = plain_stats(req);
    let estimates = req
        .ps
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let est = norm(all[k].value(), total, p);
            if is_query {
                aggregate_query_estimate(req, p, est, 0.0, &buckets)
            } else {
                estimate(req, p, est, 0.0, &stats)
            }
        })
        .collect();
    Ok(MomentReport {
        scheme: req.scheme.descriptor(),
        theorem: req.theorem(),
        mode: req.mode,
        sign_mode: req.sign_mode,
        samples: total,
        mean,
        stats,
        estimates,
        buckets,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------------------------
// Monte Carlo

/// Jackknife block size for `n` samples.
pub fn block_size(n: usize) -> usize {
    if n >= 10 * JACKKNIFE_BLOCK {
        JACKKNIFE_BLOCK
    } else {
        (n / 10).max(1)
    }
}

/// One draw of the observable under the scheme instance with the given seed.
pub fn sample_observable(req: &MomentRequest, seed: u64) -> Result<(f64, u64)> {
    let scheme = req.scheme.build(seed)?;
    let signer = if req.signed() { Some(signer_for(&scheme, seed)?) } else { None };
    Ok(req.observable.evaluate(&scheme, signer.as_ref().map(|s| s as &dyn SignFn)))
}

/// Monte Carlo moments, centred at the analytic mean 0.
///
/// Sample `i` uses seed `derive_seed(base_seed, i)`; results are collected in index order, so
/// the report does not depend on the thread count.
pub fn monte_carlo_moments(req: &MomentRequest) -> Result<MomentReport> {
    req.validate()?;
    let Mode::MonteCarlo { samples, base_seed } = req.mode else {
        return Err(Error::InvalidParams("monte_carlo_moments needs Monte Carlo mode".into()));
    };
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidParams(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let start = Instant::now();
    let draws: Vec<(f64, u64)> = (0..samples)
        .into_par_iter()
        .map(|i| sample_observable(req, derive_seed(base_seed, i)))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let mean = crate::numeric::compensated_sum(xs.iter().copied()) / xs.len() as f64;

    let is_query = matches!(req.observable, Observable::Query(_));
    let buckets: Vec<BucketReport> = if is_query {
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for &(x, b) in &draws {
            groups.entry(b).or_default().push(x);
        }
        groups
            .into_iter()
            .map(|(b, ys)| {
                let stats = bucket_stats(req, b);
                let block = block_size(ys.len());
                let estimates = req
                    .ps
                    .iter()
                    .map(|&p| {
                        let (est, se) = jackknife_pnorm(&ys, p, block);
                        estimate(req, p, est, se, &stats)
                    })
                    .collect();
                let bmean = crate::numeric::compensated_sum(ys.iter().copied()) / ys.len() as f64;
                BucketReport { query_bin: b, count: ys.len() as u64, mean: bmean, stats, estimates }
            })
            .collect()
    } else {
        Vec::new()
    };
    let stats = plain_stats(req);
    let block = block_size(xs.len());
    let estimates = req
        .ps
        .iter()
        .map(|&p| {
            let (est, se) = jackknife_pnorm(&xs, p, block);
            if is_query {
                aggregate_query_estimate(req, p, est, se, &buckets)
            } else {
                estimate(req, p, est, se, &stats)
            }
        })
        .collect();
    Ok(MomentReport {
        scheme: req.scheme.descriptor(),
        theorem: req.theorem(),
        mode: req.mode,
        sign_mode: req.sign_mode,
        samples,
        mean,
        stats,
        estimates,
        buckets,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------------------------
// Sum of squares

/// `Σ_{j∈[m]} (Σ_x ε(x) v(x, h(x) ⊕ j))²` for one fixed `h`, `ε`.
pub fn sum_of_squares_statistic(v: &ValueFunction, h: &SimpleTabHash, eps: &SignFunction) -> f64 {
    let m = v.range() as usize;
    let mut buckets = vec![CompensatedSum::new(); m];
    match v.kind() {
        crate::valuefn::ValueKind::SingleBin { weights, target } => {
            // S_j = A[target ⊕ j] − B/m where A[b] sums εw over keys hashing to b.
            let mut a = vec![CompensatedSum::new(); m];
            let mut total = CompensatedSum::new();
            for (i, &k) in v.keys().iter().enumerate() {
                let ew = eps.sign(k) as f64 * weights[i];
                a[h.hash(k) as usize].add(ew);
                total.add(ew);
            }
            let shift = total.value() / m as f64;
            for (j, b) in buckets.iter_mut().enumerate() {
                b.add(a[(*target as usize) ^ j].value());
                b.add(-shift);
            }
        }
        _ => {
            for (i, &k) in v.keys().iter().enumerate() {
                let s = eps.sign(k) as f64;
                let hx = h.hash(k) as usize;
                for (j, b) in buckets.iter_mut().enumerate() {
                    let val = v.value_at(i, (hx ^ j) as u64);
                    if val != 0.0 {
                        b.add(s * val);
                    }
                }
            }
        }
    }
    crate::numeric::compensated_sum(buckets.iter().map(|b| {
        let x = b.value();
        x * x
    }))
}

/// `(L c max{p, log m} / log(e² m Σ‖v[x]‖₂² / Σ‖v[x]‖₁²))^c · Σ‖v[x]‖₂²`.
pub fn sum_of_squares_bound(p: f64, stats: &ValueStats, c: u32, m: u64, l: f64) -> Result<f64> {
    if stats.is_zero() {
        return Ok(0.0);
    }
    let ln_m = (m as f64).ln();
    let denom = 2.0 + ln_m + stats.total_l2_sq.ln() - stats.total_l1_sq.ln();
    if !(denom > 0.0) {
        return Err(Error::Domain("sum-of-squares bound denominator is nonpositive".into()));
    }
    Ok((l * c as f64 * p.max(ln_m) / denom).powi(c as i32) * stats.total_l2_sq)
}

/// Monte Carlo p-norm of the sum-of-squares statistic and its ratio to the bound shape (`L = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumOfSquaresReport {
    pub p: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub shape: f64,
    pub ratio: f64,
}

pub fn sum_of_squares_moments(
    v: &ValueFunction,
    spec: &SchemeSpec,
    ps: &[f64],
    samples: u64,
    base_seed: u64,
) -> Result<Vec<SumOfSquaresReport>> {
    if spec.kind != SchemeKind::Simple {
        return Err(Error::InvalidParams("the sum-of-squares statistic is defined for simple tabulation".into()));
    }
    v.check_compatible(&spec.params)?;
    let xs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i);
            let h = SimpleTabHash::new(spec.params, seed)?;
            let e = SignFunction::new(spec.params, seed)?;
            Ok(sum_of_squares_statistic(v, &h, &e))
        })
        .collect::<Result<_>>()?;
    let stats = v.stats();
    let block = block_size(xs.len());
    ps.iter()
        .map(|&p| {
            let (est, se) = jackknife_pnorm(&xs, p, block);
            let shape = sum_of_squares_bound(p, &stats, spec.params.num_chars, spec.params.range(), 1.0)?;
            Ok(SumOfSquaresReport { p, estimate: est, std_error: se, shape, ratio: if shape > 0.0 { est / shape } else { 0.0 } })
        })
        .collect()
}

// ---------------------------------------------------------------------------------------------
// Symmetrization and Khintchine

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationReport {
    pub p: f64,
    pub c: u32,
    /// `‖Σ v(x, h(x))‖_p`.
    pub plain: f64,
    /// `‖Σ ε(x) v(x, h(x))‖_p`.
    pub signed: f64,
    /// `2^{−c}·signed ≤ plain ≤ 2^c·signed`.
    pub holds: bool,
}

/// Exact two-sided symmetrization inequality for simple tabulation.
pub fn symmetrization_check(v: &ValueFunction, spec: &SchemeSpec, ps: &[f64]) -> Result<Vec<SymmetrizationReport>> {
    if spec.kind != SchemeKind::Simple {
        return Err(Error::InvalidParams("symmetrization is checked for simple tabulation".into()));
    }
    let obs = Observable::Plain(v.clone());
    let plain = exact_moments(&MomentRequest::new(*spec, obs.clone(), ps.to_vec(), Mode::Exact))?;
    let signed =
        exact_moments(&MomentRequest::new(*spec, obs, ps.to_vec(), Mode::Exact).with_sign(SignMode::SimpleSign))?;
    let c = spec.params.num_chars;
    let f = 2f64.powi(c as i32);
    Ok(plain
        .estimates
        .iter()
        .zip(&signed.estimates)
        .map(|(a, b)| {
            let tol = 1e-12 * a.estimate.max(b.estimate);
            let holds = b.estimate / f <= a.estimate + tol && a.estimate <= f * b.estimate + tol;
            SymmetrizationReport { p: a.p, c, plain: a.estimate, signed: b.estimate, holds }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KhintchineReport {
    pub p: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub gamma_p: f64,
    /// `√p · γ_p^{c/2} · √(Σw²)`.
    pub shape: f64,
    pub ratio: f64,
    /// `√(e p Σw²)`, the bound for independent signs.
    pub rademacher_bound: f64,
}

fn khintchine_report(p: f64, est: f64, se: f64, weights: &[(Key, f64)], spec: &SchemeSpec) -> Result<KhintchineReport> {
    let l2: f64 = crate::numeric::compensated_sum(weights.iter().map(|(_, w)| w * w));
    let g = gamma_p_khintchine(p, spec.params.alphabet_size())?;
    let shape = p.sqrt() * g.powf(spec.params.num_chars as f64 / 2.0) * l2.sqrt();
    Ok(KhintchineReport {
        p,
        estimate: est,
        std_error: se,
        gamma_p: g,
        shape,
        ratio: if shape > 0.0 { est / shape } else { 0.0 },
        rademacher_bound: (std::f64::consts::E * p * l2).sqrt(),
    })
}

fn weighted_sign_sum(weights: &[(Key, f64)], s: &dyn SignFn) -> f64 {
    weights.iter().map(|(k, w)| s.sign(*k) as f64 * w).collect::<CompensatedSum>().value()
}

/// Monte Carlo p-norms of `Σ w(x) ε(x)` for the sign function paired with `spec`.
pub fn khintchine_check(
    weights: &[(Key, f64)],
    spec: &SchemeSpec,
    ps: &[f64],
    samples: u64,
    base_seed: u64,
) -> Result<Vec<KhintchineReport>> {
    for (k, _) in weights {
        spec.params.key(k.0)?;
    }
    let xs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i);
            let scheme = spec.build(seed)?;
            Ok(weighted_sign_sum(weights, &signer_for(&scheme, seed)?))
        })
        .collect::<Result<_>>()?;
    let block = block_size(xs.len());
    ps.iter()
        .map(|&p| {
            let (est, se) = jackknife_pnorm(&xs, p, block);
            khintchine_report(p, est, se, weights, spec)
        })
        .collect()
}

/// Exact p-norms of `Σ w(x) ε(x)` under a mixed sign function, over all `ε1`, `h2`, `ε3` tables.
pub fn khintchine_exact(weights: &[(Key, f64)], spec: &SchemeSpec, ps: &[f64]) -> Result<Vec<KhintchineReport>> {
    if spec.kind != SchemeKind::Mixed {
        return Err(Error::InvalidParams("exact Khintchine check is for mixed sign functions".into()));
    }
    let p = &spec.params;
    for (k, _) in weights {
        p.key(k.0)?;
    }
    let specs = [
        RowSpec { rows: p.num_chars, width: 1 },
        RowSpec { rows: p.num_chars, width: p.char_bits * p.derived_chars },
        RowSpec { rows: p.derived_chars, width: 1 },
    ];
    let bits = checked_bits(p.char_bits, &specs)?;
    let h1 = TabulationTable::zeros(p.num_chars, p.char_bits, p.range_bits)?;
    let h3 = SimpleTabHash::from_table(p.derived_params()?, TabulationTable::zeros(p.derived_chars, p.char_bits, p.range_bits)?)?;
    let eval = |index: u64| -> Result<f64> {
        let mut t = decode_filling(p.char_bits, &specs, index);
        let eps3 = SignFunction::from_table(p.derived_params()?, t.pop().unwrap())?;
        let h2 = t.pop().unwrap();
        let eps1 = SignFunction::from_table(p.as_simple(), t.pop().unwrap())?;
        let hash = MixedTabHash::from_tables(*p, h1.clone(), h2, h3.clone())?;
        let s = MixedSignFunction::from_parts(&hash, eps1, eps3)?;
        Ok(weighted_sign_sum(weights, &s))
    };
    let xs: Vec<f64> = (0..1u64 << bits).into_par_iter().map(eval).collect::<Result<_>>()?;
    ps.iter().map(|&q| khintchine_report(q, empirical_pnorm(&xs, q), 0.0, weights, spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabulation::SchemeParams;

    fn single_bin(keys: &[u64], m: u64) -> ValueFunction {
        ValueFunction::single_bin(keys.iter().map(|&k| (Key(k), 1.0)), 0, m).unwrap()
    }

    #[test]
    fn exact_two_outcome_instance() {
        let spec = SchemeSpec::simple(1, 1, 1).unwrap();
        let req = MomentRequest::new(spec, Observable::Plain(single_bin(&[0], 2)), vec![2.0, 4.0], Mode::Exact);
        let r = exact_moments(&req).unwrap();
        assert_eq!(r.samples, 4);
        assert_eq!(r.mean, 0.0);
        for e in &r.estimates {
            assert!((e.estimate - 0.5).abs() < 1e-15);
            assert_eq!(e.std_error, 0.0);
        }
    }

    #[test]
    fn exact_zero_function() {
        let spec = SchemeSpec::simple(1, 2, 1).unwrap();
        let v = ValueFunction::single_bin([(Key(0), 0.0), (Key(3), 0.0)], 1, 2).unwrap();
        let r = exact_moments(&MomentRequest::new(spec, Observable::Plain(v), vec![2.0, 8.0], Mode::Exact)).unwrap();
        assert!(r.estimates.iter().all(|e| e.estimate == 0.0));
    }

    #[test]
    fn exact_mean_is_zero_and_norms_grow_with_p() {
        for spec in [SchemeSpec::simple(2, 2, 2).unwrap(), SchemeSpec::mixed(1, 2, 1, 1).unwrap()] {
            let m = spec.params.range();
            let keys: Vec<u64> = spec.params.universe(64).unwrap().into_iter().map(|k| k.0).collect();
            let v = ValueFunction::threshold(keys.iter().map(|&k| (Key(k), 1.0 + k as f64)), m / 2, m).unwrap();
            let r = exact_moments(&MomentRequest::new(spec, Observable::Plain(v), vec![2.0, 3.0, 4.0, 8.0], Mode::Exact))
                .unwrap();
            assert!(r.mean.abs() < 1e-12, "{}", r.mean);
            for w in r.estimates.windows(2) {
                assert!(w[0].estimate <= w[1].estimate * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn exact_rejects_over_budget() {
        let spec = SchemeSpec::simple(4, 2, 4).unwrap();
        let req = MomentRequest::new(spec, Observable::Plain(single_bin(&[0], 16)), vec![2.0], Mode::Exact);
        assert!(matches!(exact_moments(&req), Err(Error::Budget { .. })));
    }

    #[test]
    fn over_budget_box_falls_back_to_profile_convolution() {
        let spec = SchemeSpec::simple(4, 2, 4).unwrap();
        let keys = spec.params.universe(1 << 8).unwrap();
        let v = |t| Observable::Plain(ValueFunction::single_bin(keys.iter().map(|&k| (k, 1.0)), t, 16).unwrap());
        let ps = vec![2.0, 4.0, 8.0];
        let exact = exact_moments(&MomentRequest::new(spec, v(0), ps.clone(), Mode::Exact)).unwrap();
        assert_eq!(exact.samples, 0);
        // 2-independence: ‖V‖₂² = σ_v² = 256 · (1/16)(15/16) = 15.
        assert!((exact.estimates[0].estimate - 15f64.sqrt()).abs() < 1e-9);
        let shifted = exact_moments(&MomentRequest::new(spec, v(5), ps.clone(), Mode::Exact)).unwrap();
        let mc = monte_carlo_moments(&MomentRequest::new(
            spec,
            v(5),
            ps,
            Mode::MonteCarlo { samples: 40_000, base_seed: 9 },
        ))
        .unwrap();
        for ((a, b), c) in exact.estimates.iter().zip(&shifted.estimates).zip(&mc.estimates) {
            assert!((a.estimate - b.estimate).abs() <= 1e-12 * a.estimate);
            assert!((a.estimate - c.estimate).abs() <= 4.0 * c.std_error, "p={} {} vs {}", a.p, a.estimate, c.estimate);
        }
    }

    #[test]
    fn second_moment_matches_variance_identity() {
        // Simple tabulation is 2-independent, so E X² = Σ_x E v(x, h(x))² = Σ_x ‖v[x]‖₂²/m = σ_v².
        let spec = SchemeSpec::simple(2, 2, 2).unwrap();
        let keys: Vec<u64> = (0..16).collect();
        let v = ValueFunction::single_bin(keys.iter().map(|&k| (Key(k), (k % 3) as f64 - 1.0)), 1, 4).unwrap();
        let st = v.stats();
        let r = exact_moments(&MomentRequest::new(spec, Observable::Plain(v), vec![2.0], Mode::Exact)).unwrap();
        assert!((r.estimates[0].estimate - st.sigma2.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fully_random_exact_uses_lookup_functions() {
        let spec = SchemeSpec::fully_random(2, 2, 1).unwrap();
        let r = exact_moments(&MomentRequest::new(spec, Observable::Plain(single_bin(&[1, 5, 9], 2)), vec![2.0, 4.0], Mode::Exact))
            .unwrap();
        assert_eq!(r.samples, 8);
        // Sum of three independent ±1/2: |X| ∈ {1/2, 3/2} with probs 3/4, 1/4.
        assert!((r.estimates[0].estimate - 0.75f64.sqrt()).abs() < 1e-15);
        let m4 = 0.75 * 0.0625 + 0.25 * 5.0625;
        assert!((r.estimates[1].estimate - f64::powf(m4, 0.25)).abs() < 1e-15);
    }

    #[test]
    fn query_exact_conditional_means_vanish() {
        let spec = SchemeSpec::simple(1, 2, 2).unwrap();
        let q = QueryValueFunction::collision((0..4).map(|k| (Key(k), 1.0)), Key(0), 4).unwrap();
        let r = exact_moments(&MomentRequest::new(spec, Observable::Query(q), vec![2.0], Mode::Exact)).unwrap();
        assert_eq!(r.buckets.len(), 4);
        for b in &r.buckets {
            assert!(b.mean.abs() < 1e-12);
            assert_eq!(b.count, r.samples / 4);
        }
        let empty = QueryValueFunction::collision(std::iter::empty(), Key(0), 4).unwrap();
        let r = exact_moments(&MomentRequest::new(spec, Observable::Query(empty), vec![2.0], Mode::Exact)).unwrap();
        assert_eq!(r.estimates[0].estimate, 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_rejects_few_samples() {
        let spec = SchemeSpec::simple(4, 2, 3).unwrap();
        let v = single_bin(&[1, 2, 3, 40, 77], 8);
        let req = MomentRequest::new(spec, Observable::Plain(v), vec![2.0, 4.0], Mode::MonteCarlo { samples: 500, base_seed: 9 });
        let a = monte_carlo_moments(&req).unwrap().without_timing();
        let b = monte_carlo_moments(&req).unwrap().without_timing();
        assert_eq!(a, b);
        let few = MomentRequest { mode: Mode::MonteCarlo { samples: 99, base_seed: 9 }, ..req };
        assert!(monte_carlo_moments(&few).is_err());
    }

    #[test]
    fn sign_mode_must_match_scheme() {
        let spec = SchemeSpec::simple(2, 2, 1).unwrap();
        let req = MomentRequest::new(spec, Observable::Plain(single_bin(&[0], 2)), vec![2.0], Mode::Exact)
            .with_sign(SignMode::MixedSign);
        assert!(req.validate().is_err());
    }

    #[test]
    fn sum_of_squares_single_key_is_constant() {
        let params = SchemeParams::simple(4, 2, 3).unwrap();
        let v = single_bin(&[17], 8);
        let expected = v.stats().total_l2_sq;
        for seed in 0..20 {
            let h = SimpleTabHash::new(params, seed).unwrap();
            let e = SignFunction::new(params, seed).unwrap();
            let s = sum_of_squares_statistic(&v, &h, &e);
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_of_squares_fast_path_matches_generic() {
        let params = SchemeParams::simple(4, 2, 3).unwrap();
        let keys: Vec<u64> = (0..40).map(|i| i * 5).collect();
        let fast = ValueFunction::single_bin(keys.iter().map(|&k| (Key(k), (k % 7) as f64 - 3.0)), 5, 8).unwrap();
        let dense_rows = keys.iter().map(|&k| (0..8).map(|j| fast.value(Key(k), j)).collect()).collect();
        let dense = ValueFunction::dense(keys.iter().map(|&k| Key(k)).collect(), dense_rows, 8).unwrap();
        for seed in 0..10 {
            let h = SimpleTabHash::new(params, seed).unwrap();
            let e = SignFunction::new(params, seed).unwrap();
            let a = sum_of_squares_statistic(&fast, &h, &e);
            let b = sum_of_squares_statistic(&dense, &h, &e);
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
        let zero = ValueFunction::single_bin([(Key(3), 0.0)], 0, 8).unwrap();
        let h = SimpleTabHash::new(params, 1).unwrap();
        let e = SignFunction::new(params, 1).unwrap();
        assert_eq!(sum_of_squares_statistic(&zero, &h, &e), 0.0);
    }

    #[test]
    fn symmetrization_tiny_instances() {
        let spec = SchemeSpec::simple(1, 1, 1).unwrap();
        for r in symmetrization_check(&single_bin(&[0, 1], 2), &spec, &[2.0, 4.0]).unwrap() {
            assert!(r.holds, "{r:?}");
        }
        let spec = SchemeSpec::simple(1, 2, 1).unwrap();
        for r in symmetrization_check(&single_bin(&[0, 1, 2, 3], 2), &spec, &[2.0, 4.0, 8.0]).unwrap() {
            assert!(r.holds, "{r:?}");
        }
        let zero = ValueFunction::single_bin([(Key(0), 0.0)], 0, 2).unwrap();
        let r = symmetrization_check(&zero, &spec, &[2.0]).unwrap();
        assert!(r[0].holds && r[0].plain == 0.0 && r[0].signed == 0.0);
    }

    #[test]
    fn khintchine_one_hot_is_one() {
        let spec = SchemeSpec::mixed(2, 2, 1, 2).unwrap();
        let r = khintchine_check(&[(Key(5), 1.0)], &spec, &[2.0, 8.0], 200, 3).unwrap();
        for x in r {
            assert!((x.estimate - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn khintchine_exact_second_moment_is_l2() {
        // Distinct keys get orthogonal signs under a mixed sign function (ε1 alone is 2-independent).
        let spec = SchemeSpec::mixed(1, 2, 1, 1).unwrap();
        let w = [(Key(0), 1.0), (Key(1), -2.0), (Key(2), 0.5), (Key(3), 3.0)];
        let r = khintchine_exact(&w, &spec, &[2.0]).unwrap();
        let l2: f64 = w.iter().map(|(_, x)| x * x).sum();
        assert!((r[0].estimate - l2.sqrt()).abs() < 1e-12);
        assert!(r[0].estimate <= r[0].rademacher_bound);
    }
}
