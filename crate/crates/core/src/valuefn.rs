//! Value functions `v: Σ^c × [m] → ℝ`, their summary statistics, and hash-based sums.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::tabulation::{Key, SchemeParams, SignFn, TabHasher};

/// Relative tolerance of the per-key mean-zero check.
pub const MEAN_ZERO_TOL: f64 = 1e-9;

/// Shape of a value function's rows.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueKind {
    /// Row-major `n × m` grid of values.
    Dense { values: Vec<f64> },
    /// `v(x, j) = w_x ([j = target] − 1/m)`.
    SingleBin { weights: Vec<f64>, target: u64 },
    /// `v(x, j) = w_x ([j < l] − l/m)`.
    Threshold { weights: Vec<f64>, threshold: u64 },
    /// Per-key sorted `(bin, value)` lists; unlisted bins are zero.
    Sparse { rows: Vec<Vec<(u64, f64)>> },
}

/// A mean-zero value function over an explicit, sorted list of support keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    range: u64,
    keys: Vec<Key>,
    kind: ValueKind,
}

/// Summary statistics entering the moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueStats {
    /// `M_v = max |v(x, j)|`.
    pub max_abs: f64,
    /// `σ_v² = Σ v(x, j)² / m`.
    pub sigma2: f64,
    /// `max_x ‖v[x]‖₁² / ‖v[x]‖₂²` over keys with a nonzero row.
    pub spread: f64,
    /// `Σ_x ‖v[x]‖₂² / max_x ‖v[x]‖₂²`.
    pub weight_ratio: f64,
    /// `Σ_x ‖v[x]‖₂²`.
    pub total_l2_sq: f64,
    /// `Σ_x ‖v[x]‖₁²`.
    pub total_l1_sq: f64,
}

impl ValueStats {
    pub fn zero() -> Self {
        ValueStats { max_abs: 0.0, sigma2: 0.0, spread: 1.0, weight_ratio: 1.0, total_l2_sq: 0.0, total_l1_sq: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs == 0.0
    }
}

fn sorted_weights<I: IntoIterator<Item = (Key, f64)>>(weights: I) -> Result<(Vec<Key>, Vec<f64>)> {
    let map: BTreeMap<Key, f64> = weights.into_iter().collect();
    if let Some((k, w)) = map.iter().find(|(_, w)| !w.is_finite()) {
        return Err(Error::InvalidParams(format!("weight {w} of key {:#x} is not finite", k.0)));
    }
    Ok(map.into_iter().unzip())
}

fn check_range(range: u64) -> Result<()> {
    if range < 2 || !range.is_power_of_two() {
        return Err(Error::InvalidParams(format!("range {range} must be a power of two >= 2")));
    }
    Ok(())
}

impl ValueFunction {
    /// `v(x, j) = w_x ([j = target] − 1/m)`.
    pub fn single_bin<I: IntoIterator<Item = (Key, f64)>>(weights: I, target: u64, range: u64) -> Result<Self> {
        check_range(range)?;
        if target >= range {
            return Err(Error::InvalidParams(format!("target bin {target} not below m = {range}")));
        }
        let (keys, weights) = sorted_weights(weights)?;
        Ok(ValueFunction { range, keys, kind: ValueKind::SingleBin { weights, target } })
    }

    /// `v(x, j) = w_x ([j < l] − l/m)`.
    pub fn threshold<I: IntoIterator<Item = (Key, f64)>>(weights: I, threshold: u64, range: u64) -> Result<Self> {
        check_range(range)?;
        if threshold > range {
            return Err(Error::InvalidParams(format!("threshold {threshold} exceeds m = {range}")));
        }
        let (keys, weights) = sorted_weights(weights)?;
        Ok(ValueFunction { range, keys, kind: ValueKind::Threshold { weights, threshold } })
    }

    /// A dense grid; `rows[i][j]` is `v(keys[i], j)`.
    pub fn dense(keys: Vec<Key>, rows: Vec<Vec<f64>>, range: u64) -> Result<Self> {
        check_range(range)?;
        if keys.len() != rows.len() {
            return Err(Error::InvalidParams("one row per key required".into()));
        }
        let mut pairs: Vec<(Key, Vec<f64>)> = keys.into_iter().zip(rows).collect();
        pairs.sort_by_key(|(k, _)| *k);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParams("duplicate support key".into()));
        }
        let mut values = Vec::with_capacity(pairs.len() * range as usize);
        let mut keys = Vec::with_capacity(pairs.len());
        for (k, row) in pairs {
            if row.len() as u64 != range {
                return Err(Error::InvalidParams(format!("row of key {:#x} has {} bins", k.0, row.len())));
            }
            check_row(k, row.iter().copied())?;
            keys.push(k);
            values.extend(row);
        }
        Ok(ValueFunction { range, keys, kind: ValueKind::Dense { values } })
    }

    /// A custom-sparse function from `(key, bin, value)` triples; repeated cells add up.
    pub fn sparse<I: IntoIterator<Item = (Key, u64, f64)>>(cells: I, range: u64) -> Result<Self> {
        check_range(range)?;
        let mut map: BTreeMap<Key, BTreeMap<u64, f64>> = BTreeMap::new();
        for (k, j, v) in cells {
            if j >= range {
                return Err(Error::InvalidParams(format!("bin {j} not below m = {range}")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("value {v} is not finite")));
            }
            *map.entry(k).or_default().entry(j).or_insert(0.0) += v;
        }
        let mut keys = Vec::with_capacity(map.len());
        let mut rows = Vec::with_capacity(map.len());
        for (k, row) in map {
            check_row(k, row.values().copied())?;
            keys.push(k);
            rows.push(row.into_iter().collect());
        }
        Ok(ValueFunction { range, keys, kind: ValueKind::Sparse { rows } })
    }

    /// Reads CSV rows `key,bin,value` (no header; `#` lines ignored).
    pub fn from_csv<R: Read>(reader: R, range: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut cells = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::InvalidParams(format!("line {}: expected key,bin,value", line + 1)));
            }
            let parse_u = |s: &str| -> Result<u64> {
                let r = match s.strip_prefix("0x") {
                    Some(hex) => u64::from_str_radix(hex, 16),
                    None => s.parse(),
                };
                r.map_err(|e| Error::InvalidParams(format!("line {}: {s}: {e}", line + 1)))
            };
            let value: f64 = rec[2]
                .parse()
                .map_err(|e| Error::InvalidParams(format!("line {}: {}: {e}", line + 1, &rec[2])))?;
            cells.push((Key(parse_u(&rec[0])?), parse_u(&rec[1])?, value));
        }
        Self::sparse(cells, range)
    }

    pub fn range(&self) -> u64 {
        self.range
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn kind(&self) -> &ValueKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Checks that every support key is a valid key of `params` and the range matches.
    pub fn check_compatible(&self, params: &SchemeParams) -> Result<()> {
        if params.range() != self.range {
            return Err(Error::InvalidParams(format!(
                "value function has m = {} but the scheme has m = {}",
                self.range,
                params.range()
            )));
        }
        if let Some(k) = self.keys.iter().find(|k| params.key(k.0).is_err()) {
            return Err(Error::InvalidParams(format!("support key {:#x} outside Σ^c", k.0)));
        }
        Ok(())
    }

    /// `v(keys[index], bin)`.
    #[inline]
    pub fn value_at(&self, index: usize, bin: u64) -> f64 {
        let m = self.range as f64;
        match &self.kind {
            ValueKind::Dense { values } => values[index * self.range as usize + bin as usize],
            ValueKind::SingleBin { weights, target } => {
                weights[index] * (if bin == *target { 1.0 } else { 0.0 } - 1.0 / m)
            }
            ValueKind::Threshold { weights, threshold } => {
                weights[index] * (if bin < *threshold { 1.0 } else { 0.0 } - *threshold as f64 / m)
            }
            ValueKind::Sparse { rows } => {
                let row = &rows[index];
                match row.binary_search_by_key(&bin, |(j, _)| *j) {
                    Ok(i) => row[i].1,
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// `v(key, bin)`; zero off the support.
    pub fn value(&self, key: Key, bin: u64) -> f64 {
        match self.keys.binary_search(&key) {
            Ok(i) => self.value_at(i, bin),
            Err(_) => 0.0,
        }
    }

    /// Statistics from closed forms where available, otherwise by summing the rows.
    pub fn stats(&self) -> ValueStats {
        let m = self.range as f64;
        match &self.kind {
            ValueKind::SingleBin { weights, .. } => {
                // ‖v[x]‖₂² = w²(m−1)/m, ‖v[x]‖₁ = 2|w|(m−1)/m.
                let row_l2 = (m - 1.0) / m;
                let row_l1 = 2.0 * (m - 1.0) / m;
                let peak = (1.0 - 1.0 / m).max(1.0 / m);
                closed_form_stats(weights, m, peak, row_l1, row_l2)
            }
            ValueKind::Threshold { weights, threshold } => {
                let frac = *threshold as f64 / m;
                if *threshold == 0 || *threshold == self.range {
                    return ValueStats::zero();
                }
                let l = *threshold as f64;
                let row_l2 = l * (1.0 - frac);
                let row_l1 = 2.0 * l * (1.0 - frac);
                closed_form_stats(weights, m, frac.max(1.0 - frac), row_l1, row_l2)
            }
            _ => self.stats_brute_force(),
        }
    }

    /// Statistics by evaluating every `(key, bin)` cell.
    pub fn stats_brute_force(&self) -> ValueStats {
        let rows = (0..self.keys.len()).map(|i| {
            let mut l1 = CompensatedSum::new();
            let mut l2 = CompensatedSum::new();
            let mut max = 0.0f64;
            for j in 0..self.range {
                let v = self.value_at(i, j);
                l1.add(v.abs());
                l2.add(v * v);
                max = max.max(v.abs());
            }
            (max, l1.value(), l2.value())
        });
        stats_from_rows(rows, self.range as f64)
    }

    /// `Σ_x v(x, h(x))` over the support.
    pub fn hash_sum<H: TabHasher + ?Sized>(&self, h: &H) -> f64 {
        let mut s = CompensatedSum::new();
        for (i, &k) in self.keys.iter().enumerate() {
            s.add(self.value_at(i, h.hash(k)));
        }
        s.value()
    }

    /// `Σ_x ε(x) v(x, h(x))` over the support.
    pub fn signed_hash_sum<H: TabHasher + ?Sized, S: SignFn + ?Sized>(&self, h: &H, sign: &S) -> f64 {
        let mut s = CompensatedSum::new();
        for (i, &k) in self.keys.iter().enumerate() {
            s.add(sign.sign(k) as f64 * self.value_at(i, h.hash(k)));
        }
        s.value()
    }

    /// Either of the two sums, depending on whether a sign function is supplied.
    pub fn hash_sum_with(&self, h: &dyn TabHasher, sign: Option<&dyn SignFn>) -> f64 {
        match sign {
            Some(s) => self.signed_hash_sum(h, s),
            None => self.hash_sum(h),
        }
    }

    /// `α·self + β·other` as a dense function over the union of supports.
    pub fn linear_combination(&self, alpha: f64, other: &ValueFunction, beta: f64) -> Result<Self> {
        if self.range != other.range {
            return Err(Error::InvalidParams("ranges differ".into()));
        }
        let mut keys: Vec<Key> = self.keys.iter().chain(&other.keys).copied().collect();
        keys.sort();
        keys.dedup();
        let rows = keys
            .iter()
            .map(|&k| (0..self.range).map(|j| alpha * self.value(k, j) + beta * other.value(k, j)).collect())
            .collect();
        Self::dense(keys, rows, self.range)
    }
}

fn check_row<I: IntoIterator<Item = f64>>(key: Key, row: I) -> Result<()> {
    let mut sum = CompensatedSum::new();
    let mut max = 0.0f64;
    for v in row {
        if !v.is_finite() {
            return Err(Error::InvalidParams(format!("non-finite value in row of key {:#x}", key.0)));
        }
        sum.add(v);
        max = max.max(v.abs());
    }
    let s = sum.value();
    if s.abs() > MEAN_ZERO_TOL * max.max(f64::MIN_POSITIVE) && s != 0.0 {
        return Err(Error::NotMeanZero { key: key.0, sum: s });
    }
    Ok(())
}

fn closed_form_stats(weights: &[f64], m: f64, peak: f64, row_l1: f64, row_l2: f64) -> ValueStats {
    let rows = weights.iter().map(|w| (w.abs() * peak, w.abs() * row_l1, w * w * row_l2));
    stats_from_rows(rows, m)
}

/// Folds per-key `(max |v|, ‖v[x]‖₁, ‖v[x]‖₂²)` into [`ValueStats`].
fn stats_from_rows<I: Iterator<Item = (f64, f64, f64)>>(rows: I, m: f64) -> ValueStats {
    let mut max_abs = 0.0f64;
    let mut total_l2 = CompensatedSum::new();
    let mut total_l1_sq = CompensatedSum::new();
    let mut max_l2 = 0.0f64;
    let mut spread = 0.0f64;
    for (max, l1, l2) in rows {
        max_abs = max_abs.max(max);
        total_l2.add(l2);
        total_l1_sq.add(l1 * l1);
        max_l2 = max_l2.max(l2);
        if l2 > 0.0 {
            spread = spread.max(l1 * l1 / l2);
        }
    }
    if max_l2 == 0.0 {
        return ValueStats::zero();
    }
    let total_l2_sq = total_l2.value();
    ValueStats {
        max_abs,
        sigma2: total_l2_sq / m,
        spread,
        weight_ratio: total_l2_sq / max_l2,
        total_l2_sq,
        total_l1_sq: total_l1_sq.value(),
    }
}

/// Three-argument value function evaluator `(x, j, k) ↦ v(x, j, k)`.
pub type QueryEvaluator = Arc<dyn Fn(Key, u64, u64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum QueryKind {
    /// `v(x, j, k) = w_x ([j = k] − 1/m)`: weight colliding with the query, centered.
    Collision { weights: Vec<f64> },
    Custom(QueryEvaluator),
}

impl fmt::Debug for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryKind::Collision { weights } => f.debug_struct("Collision").field("weights", weights).finish(),
            QueryKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A value function conditioned on the hash of a designated query key.
#[derive(Debug, Clone)]
pub struct QueryValueFunction {
    range: u64,
    query: Key,
    keys: Vec<Key>,
    kind: QueryKind,
}

impl QueryValueFunction {
    /// The collision-counting function; the query itself is dropped from the support.
    pub fn collision<I: IntoIterator<Item = (Key, f64)>>(weights: I, query: Key, range: u64) -> Result<Self> {
        check_range(range)?;
        let (keys, weights) = sorted_weights(weights)?;
        let (keys, weights): (Vec<Key>, Vec<f64>) =
            keys.into_iter().zip(weights).filter(|(k, _)| *k != query).unzip();
        Ok(QueryValueFunction { range, query, keys, kind: QueryKind::Collision { weights } })
    }

    /// A custom evaluator over the given support; mean-zero in `j` is checked for every `k`.
    pub fn custom(keys: Vec<Key>, query: Key, range: u64, eval: QueryEvaluator) -> Result<Self> {
        check_range(range)?;
        let mut keys = keys;
        keys.sort();
        keys.dedup();
        keys.retain(|k| *k != query);
        for &x in &keys {
            for k in 0..range {
                check_row(x, (0..range).map(|j| eval(x, j, k)))?;
            }
        }
        Ok(QueryValueFunction { range, query, keys, kind: QueryKind::Custom(eval) })
    }

    pub fn query(&self) -> Key {
        self.query
    }

    pub fn range(&self) -> u64 {
        self.range
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    #[inline]
    fn value_at(&self, index: usize, bin: u64, query_bin: u64) -> f64 {
        match &self.kind {
            QueryKind::Collision { weights } => {
                weights[index] * (if bin == query_bin { 1.0 } else { 0.0 } - 1.0 / self.range as f64)
            }
            QueryKind::Custom(eval) => eval(self.keys[index], bin, query_bin),
        }
    }

    /// `(Σ_{x≠q} v(x, h(x), h(q)), h(q))`.
    pub fn query_hash_sum<H: TabHasher + ?Sized>(&self, h: &H) -> (f64, u64) {
        let qb = h.hash(self.query);
        let mut s = CompensatedSum::new();
        for (i, &k) in self.keys.iter().enumerate() {
            s.add(self.value_at(i, h.hash(k), qb));
        }
        (s.value(), qb)
    }

    /// `(Σ_{x≠q} ε(x) v(x, h(x), h(q)), h(q))`.
    pub fn signed_query_hash_sum<H: TabHasher + ?Sized, S: SignFn + ?Sized>(&self, h: &H, sign: &S) -> (f64, u64) {
        let qb = h.hash(self.query);
        let mut s = CompensatedSum::new();
        for (i, &k) in self.keys.iter().enumerate() {
            s.add(sign.sign(k) as f64 * self.value_at(i, h.hash(k), qb));
        }
        (s.value(), qb)
    }

    /// Statistics of `v(·, ·, query_bin)`, i.e. `M_{v,q}` and `σ²_{v,q}` given `h(q)`.
    pub fn stats_given(&self, query_bin: u64) -> ValueStats {
        let m = self.range as f64;
        match &self.kind {
            QueryKind::Collision { weights } => closed_form_stats(
                weights,
                m,
                (1.0 - 1.0 / m).max(1.0 / m),
                2.0 * (m - 1.0) / m,
                (m - 1.0) / m,
            ),
            QueryKind::Custom(_) => {
                let rows = (0..self.keys.len()).map(|i| {
                    let mut l1 = CompensatedSum::new();
                    let mut l2 = CompensatedSum::new();
                    let mut max = 0.0f64;
                    for j in 0..self.range {
                        let v = self.value_at(i, j, query_bin);
                        l1.add(v.abs());
                        l2.add(v * v);
                        max = max.max(v.abs());
                    }
                    (max, l1.value(), l2.value())
                });
                stats_from_rows(rows, m)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabulation::{SchemeParams, SimpleTabHash};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn single_bin_values() {
        let v = ValueFunction::single_bin([(Key(3), 1.0)], 0, 2).unwrap();
        assert_eq!(v.value(Key(3), 0), 0.5);
        assert_eq!(v.value(Key(3), 1), -0.5);
        let z = ValueFunction::single_bin([(Key(3), 0.0)], 0, 2).unwrap();
        assert_eq!(z.value(Key(3), 0), 0.0);
        assert_eq!(z.value(Key(3), 1), 0.0);
    }

    #[test]
    fn single_bin_max_abs() {
        let v = ValueFunction::single_bin([(Key(0), 2.0), (Key(1), -3.0)], 1, 4).unwrap();
        assert_eq!(v.stats().max_abs, 2.25);
        assert_eq!(v.stats_brute_force().max_abs, 2.25);
    }

    #[test]
    fn single_bin_sigma2() {
        let (n, m) = (37u64, 16u64);
        let v = ValueFunction::single_bin((0..n).map(|k| (Key(k), 1.0)), 5, m).unwrap();
        let mf = m as f64;
        assert!(rel(v.stats().sigma2, n as f64 / mf * (1.0 - 1.0 / mf)) < 1e-14);
    }

    #[test]
    fn threshold_spread() {
        let m = 64u64;
        for l in [1u64, 5, 32, 63] {
            let v = ValueFunction::threshold([(Key(1), 2.0), (Key(9), -0.5)], l, m).unwrap();
            let lf = l as f64;
            let expected = 4.0 * lf * (1.0 - lf / m as f64);
            assert!(rel(v.stats().spread, expected) < 1e-14);
            assert!(rel(v.stats_brute_force().spread, expected) < 1e-12);
        }
        let half = ValueFunction::threshold([(Key(1), 1.0)], m / 2, m).unwrap();
        assert!(rel(half.stats().spread, m as f64) < 1e-14);
    }

    #[test]
    fn threshold_extremes_are_zero() {
        for l in [0u64, 8] {
            let v = ValueFunction::threshold([(Key(2), 3.0)], l, 8).unwrap();
            assert!((0..8).all(|j| v.value(Key(2), j) == 0.0));
            assert_eq!(v.stats(), ValueStats::zero());
        }
    }

    #[test]
    fn zero_function_stats_convention() {
        let v = ValueFunction::single_bin([(Key(0), 0.0), (Key(1), 0.0)], 0, 4).unwrap();
        let s = v.stats();
        assert_eq!((s.max_abs, s.sigma2, s.total_l2_sq), (0.0, 0.0, 0.0));
        assert_eq!(s.weight_ratio, 1.0);
        assert_eq!(v.stats_brute_force(), s);
    }

    #[test]
    fn closed_forms_match_brute_force() {
        let weights: Vec<(Key, f64)> = (0..50u64).map(|k| (Key(k * 3), (k as f64 - 20.0) * 0.37)).collect();
        for m in [2u64, 4, 256] {
            let a = ValueFunction::single_bin(weights.clone(), m - 1, m).unwrap();
            let b = ValueFunction::threshold(weights.clone(), m / 4, m).unwrap();
            for v in [a, b] {
                let (x, y) = (v.stats(), v.stats_brute_force());
                for (p, q) in [
                    (x.max_abs, y.max_abs),
                    (x.sigma2, y.sigma2),
                    (x.spread, y.spread),
                    (x.weight_ratio, y.weight_ratio),
                    (x.total_l2_sq, y.total_l2_sq),
                    (x.total_l1_sq, y.total_l1_sq),
                ] {
                    assert!(rel(p, q) < 1e-12, "{p} vs {q}");
                }
            }
        }
    }

    #[test]
    fn mean_zero_is_enforced() {
        let bad = ValueFunction::dense(vec![Key(0)], vec![vec![1.0, 0.0]], 2);
        assert!(matches!(bad, Err(Error::NotMeanZero { .. })));
        let ok = ValueFunction::dense(vec![Key(0)], vec![vec![1.0, -1.0]], 2);
        assert!(ok.is_ok());
        assert!(ValueFunction::sparse([(Key(1), 0, 2.0), (Key(1), 3, -1.0)], 4).is_err());
        assert!(ValueFunction::single_bin([(Key(1), f64::NAN)], 0, 4).is_err());
        assert!(ValueFunction::threshold([(Key(1), 1.0)], 5, 4).is_err());
    }

    #[test]
    fn csv_loader_builds_sparse_function() {
        let text = "# key,bin,value\n0x3,0,1.5\n3,2,-1.5\n7,1,0.25\n7,3,-0.25\n";
        let v = ValueFunction::from_csv(text.as_bytes(), 4).unwrap();
        assert_eq!(v.keys(), &[Key(3), Key(7)]);
        assert_eq!(v.value(Key(3), 2), -1.5);
        assert_eq!(v.value(Key(7), 0), 0.0);
        assert!(ValueFunction::from_csv("1,0\n".as_bytes(), 4).is_err());
    }

    #[test]
    fn hash_sum_single_key() {
        let params = SchemeParams::simple(4, 2, 3).unwrap();
        let v = ValueFunction::single_bin([(Key(0x21), 1.0)], 6, 8).unwrap();
        for seed in 0..16 {
            let h = SimpleTabHash::new(params, seed).unwrap();
            let expected = if h.hash(Key(0x21)) == 6 { 1.0 - 1.0 / 8.0 } else { -1.0 / 8.0 };
            assert_eq!(v.hash_sum(&h), expected);
        }
        let z = ValueFunction::single_bin([(Key(0x21), 0.0)], 6, 8).unwrap();
        assert_eq!(z.hash_sum(&SimpleTabHash::new(params, 1).unwrap()), 0.0);
    }

    #[test]
    fn hash_sum_is_linear() {
        let params = SchemeParams::simple(4, 2, 3).unwrap();
        let a = ValueFunction::single_bin((0..30u64).map(|k| (Key(k * 7), 1.0 + k as f64)), 2, 8).unwrap();
        let b = ValueFunction::threshold((10..50u64).map(|k| (Key(k * 5), 2.0 - k as f64 * 0.1)), 3, 8).unwrap();
        let combo = a.linear_combination(1.5, &b, -0.75).unwrap();
        for seed in 0..10 {
            let h = SimpleTabHash::new(params, seed).unwrap();
            let lhs = combo.hash_sum(&h);
            let rhs = 1.5 * a.hash_sum(&h) - 0.75 * b.hash_sum(&h);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn query_collision_counts_centred_weight() {
        let params = SchemeParams::simple(4, 2, 2).unwrap();
        let keys: Vec<u64> = vec![1, 2, 3, 50, 99];
        let q = QueryValueFunction::collision(keys.iter().map(|&k| (Key(k), 2.0)), Key(3), 4).unwrap();
        assert_eq!(q.keys().len(), 4);
        for seed in 0..20 {
            let h = SimpleTabHash::new(params, seed).unwrap();
            let (s, qb) = q.query_hash_sum(&h);
            assert_eq!(qb, h.hash(Key(3)));
            let colliding = keys.iter().filter(|&&k| k != 3 && h.hash(Key(k)) == qb).count() as f64;
            assert!((s - (2.0 * colliding - 2.0 * 4.0 / 4.0)).abs() < 1e-12);
        }
        let empty = QueryValueFunction::collision(std::iter::empty(), Key(3), 4).unwrap();
        assert_eq!(empty.query_hash_sum(&SimpleTabHash::new(params, 0).unwrap()).0, 0.0);
    }

    #[test]
    fn query_custom_mean_zero_checked() {
        let eval: QueryEvaluator = Arc::new(|_, j, k| if j == k { 1.0 } else { 0.0 });
        assert!(QueryValueFunction::custom(vec![Key(1)], Key(0), 4, eval).is_err());
        let eval: QueryEvaluator = Arc::new(|_, j, k| if j == k { 0.75 } else { -0.25 });
        let q = QueryValueFunction::custom(vec![Key(1), Key(0)], Key(0), 4, eval).unwrap();
        assert_eq!(q.keys(), &[Key(1)]);
        assert!(rel(q.stats_given(2).sigma2, (0.5625 + 3.0 * 0.0625) / 4.0) < 1e-14);
    }
}
