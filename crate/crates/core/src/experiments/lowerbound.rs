//! Adversarial instances for the simple tabulation lower bound, and an exact oracle for their
//! central moments.
//!
//! The instance puts weight `[j = 0] − 1/m` on every key of `S = [a]^{c−1} × Σ`. Writing
//! `N(j)` for the number of prefixes `y ∈ [a]^{c−1}` with `h'(y) = j`, the sum is
//! `V = Σ_{α∈Σ} N(T(c−1, α)) − a^{c−1}|Σ|/m`, a sum of `|Σ|` i.i.d. terms once the prefix
//! tables are fixed. The oracle enumerates the law of `N` and convolves.

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::bounds::{psi, ConstantPolicy};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::tabulation::{Key, SchemeParams, ENUMERATION_BIT_BUDGET};
use crate::valuefn::{ValueFunction, ValueKind, ValueStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundInstance {
    pub params: SchemeParams,
    pub p: f64,
    /// `max{1, p / log(e² m / (4(1 − 1/m)))}`.
    pub gamma_p: f64,
    /// Side of the prefix grid: 1 when `γ_p ≤ 1`, else `1 + ⌊γ_p⌋`.
    pub side: u64,
}

/// γ_p of the lower-bound construction.
pub fn lower_bound_gamma(p: f64, m: u64) -> f64 {
    let mf = m as f64;
    let denom = (E * E * mf / (4.0 * (1.0 - 1.0 / mf))).ln();
    1f64.max(p / denom)
}

impl LowerBoundInstance {
    pub fn build(params: SchemeParams, p: f64, policy: &ConstantPolicy) -> Result<Self> {
        params.validate()?;
        if !(p >= 2.0) {
            return Err(Error::Domain(format!("p = {p} must be >= 2")));
        }
        let sigma = params.alphabet_size() as f64;
        let m = params.range();
        let limit = policy.l1 * sigma * (m as f64).ln();
        if p > limit {
            return Err(Error::Domain(format!("p = {p} exceeds L₁|Σ| log m = {limit}")));
        }
        let gamma_p = lower_bound_gamma(p, m);
        let side = if gamma_p <= 1.0 { 1 } else { 1 + gamma_p.floor() as u64 };
        if side > params.alphabet_size() {
            return Err(Error::Domain(format!("1 + ⌊γ_p⌋ = {side} exceeds |Σ| = {}", params.alphabet_size())));
        }
        Ok(LowerBoundInstance { params, p, gamma_p, side })
    }

    /// `a^{c−1}`, the number of prefixes.
    pub fn prefixes(&self) -> u64 {
        self.side.pow(self.params.num_chars - 1)
    }

    /// `|S| = a^{c−1} |Σ|`.
    pub fn support_size(&self) -> u64 {
        self.prefixes() * self.params.alphabet_size()
    }

    /// The keys of `S`, ascending.
    pub fn keys(&self) -> Vec<Key> {
        let c = self.params.num_chars;
        let k = self.params.char_bits;
        let mut keys = Vec::with_capacity(self.support_size() as usize);
        for last in 0..self.params.alphabet_size() {
            for y in 0..self.prefixes() {
                let mut packed = last << ((c - 1) * k);
                let mut rest = y;
                for i in 0..c - 1 {
                    packed |= (rest % self.side) << (i * k);
                    rest /= self.side;
                }
                keys.push(Key(packed));
            }
        }
        keys.sort();
        keys
    }

    pub fn value_function(&self) -> Result<ValueFunction> {
        ValueFunction::single_bin(self.keys().into_iter().map(|k| (k, 1.0)), 0, self.params.range())
    }

    /// Closed-form statistics: `M_v = 1 − 1/m`, `σ_v² = (1/m)(1 − 1/m)|S|`.
    pub fn stats(&self) -> ValueStats {
        let m = self.params.range() as f64;
        let n = self.support_size() as f64;
        let row_l2 = 1.0 - 1.0 / m;
        let row_l1 = 2.0 * (1.0 - 1.0 / m);
        ValueStats {
            max_abs: (1.0 - 1.0 / m).max(1.0 / m),
            sigma2: n / m * (1.0 - 1.0 / m),
            spread: row_l1 * row_l1 / row_l2,
            weight_ratio: n,
            total_l2_sq: n * row_l2,
            total_l1_sq: n * row_l1 * row_l1,
        }
    }

    /// `Ψ_p(γ_p^{c−1} M_v, γ_p^{c−1} σ_v²)`.
    pub fn shape(&self) -> Result<f64> {
        let s = self.stats();
        let g = self.gamma_p.powi(self.params.num_chars as i32 - 1);
        psi(self.p, g * s.max_abs, g * s.sigma2)
    }
}

/// Recognises a unit-weight single-bin function on a box `[a]^{c−1} × Σ`, for any target bin.
/// XOR-ing the last table by the target maps it onto the target-0 instance, so the oracle applies.
/// The returned instance carries `p = 2` and `γ_p = a` as placeholders; only `params` and `side`
/// enter the oracle.
pub fn as_box_instance(params: SchemeParams, v: &ValueFunction) -> Option<LowerBoundInstance> {
    let ValueKind::SingleBin { weights, .. } = v.kind() else { return None };
    if weights.iter().any(|&w| w != 1.0) || v.range() != params.range() {
        return None;
    }
    let sigma = params.alphabet_size();
    let n = v.len() as u64;
    if n == 0 || !n.is_multiple_of(sigma) {
        return None;
    }
    let prefixes = n / sigma;
    let side = if params.num_chars == 1 {
        1
    } else {
        let e = params.num_chars - 1;
        let guess = (prefixes as f64).powf(1.0 / e as f64).round() as u64;
        (guess.saturating_sub(1)..=guess + 1).find(|a| *a >= 1 && a.checked_pow(e) == Some(prefixes))?
    };
    if side > sigma {
        return None;
    }
    let inst = LowerBoundInstance { params, p: 2.0, gamma_p: side as f64, side };
    (inst.keys() == v.keys()).then_some(inst)
}

/// Law of the prefix count vector `N`, grouped by sorted profile.
fn prefix_profiles(inst: &LowerBoundInstance) -> Result<BTreeMap<Vec<u64>, f64>> {
    let m = inst.params.range();
    let c = inst.params.num_chars;
    let a = inst.side;
    let mut out: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    if c <= 2 {
        // Prefix hashes are `a` (or one, for c = 1) i.i.d. uniform values: multinomial.
        let balls = if c == 1 { 1 } else { a };
        if c == 1 {
            let mut prof = vec![0u64; m as usize];
            prof[0] = 1;
            prof.sort_unstable();
            out.insert(prof, 1.0);
            return Ok(out);
        }
        let ln_fact: Vec<f64> = (0..=balls.max(m))
            .scan(0.0, |acc, i| {
                if i > 0 {
                    *acc += (i as f64).ln();
                }
                Some(*acc)
            })
            .collect();
        // Sorted profiles are partitions of `balls` into at most `m` parts. A partition with
        // part multiplicities μ_t arises from m!/Π μ_t! compositions, each of probability
        // balls!/(Π N_j! · m^balls).
        let log_norm = ln_fact[balls as usize] - balls as f64 * (m as f64).ln() + ln_fact[m as usize];
        let mut parts = Vec::with_capacity(m as usize);
        let mut visited = 0u64;
        let mut over_budget = false;
        for_each_partition(balls, balls, m as usize, &mut parts, &mut |parts| {
            visited += 1;
            if visited > 1u64 << ENUMERATION_BIT_BUDGET {
                over_budget = true;
                return;
            }
            let mut prof = parts.to_vec();
            prof.resize(m as usize, 0);
            prof.sort_unstable();
            let mut lw = log_norm - prof.iter().map(|&x| ln_fact[x as usize]).sum::<f64>();
            let mut i = 0;
            while i < prof.len() {
                let j = prof[i..].iter().take_while(|&&x| x == prof[i]).count();
                lw -= ln_fact[j];
                i += j;
            }
            out.insert(prof, lw.exp());
        });
        if over_budget {
            return Err(Error::Budget { needed: visited, limit: 1u64 << ENUMERATION_BIT_BUDGET });
        }
        return Ok(out);
    }
    // General c: enumerate the prefix tables T(i, α) for i < c − 1, α < a.
    let entries = (c as u64 - 1) * a;
    let bits = entries * inst.params.range_bits as u64;
    if bits > ENUMERATION_BIT_BUDGET as u64 {
        return Err(Error::Budget { needed: bits, limit: ENUMERATION_BIT_BUDGET as u64 });
    }
    let total = 1u64 << bits;
    let l = inst.params.range_bits;
    let mask = m - 1;
    let mut counts: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    let mut n = vec![0u64; m as usize];
    for idx in 0..total {
        n.iter_mut().for_each(|x| *x = 0);
        for y in 0..inst.prefixes() {
            let mut h = 0u64;
            let mut rest = y;
            for i in 0..c as u64 - 1 {
                let e = i * a + rest % a;
                h ^= (idx >> (e * l as u64)) & mask;
                rest /= a;
            }
            n[h as usize] += 1;
        }
        let mut prof = n.clone();
        prof.sort_unstable();
        *counts.entry(prof).or_default() += 1;
    }
    for (prof, cnt) in counts {
        out.insert(prof, cnt as f64 / total as f64);
    }
    Ok(out)
}

/// Calls `f` with every nonincreasing sequence of at most `slots` positive parts, each at most
/// `cap`, summing to `left`.
fn for_each_partition<F: FnMut(&[u64])>(left: u64, cap: u64, slots: usize, parts: &mut Vec<u64>, f: &mut F) {
    if left == 0 {
        f(parts);
        return;
    }
    if slots == 0 {
        return;
    }
    for x in (1..=cap.min(left)).rev() {
        parts.push(x);
        for_each_partition(left - x, x, slots - 1, parts, f);
        parts.pop();
    }
}

/// Exact `‖V‖_p` for the instance at each requested `p` (the mean of `V` is 0).
pub fn lower_bound_exact_pnorms(inst: &LowerBoundInstance, ps: &[f64]) -> Result<Vec<f64>> {
    let sigma = inst.params.alphabet_size() as usize;
    let m = inst.params.range() as f64;
    let centre = inst.support_size() as f64 / m;
    let profiles = prefix_profiles(inst)?;
    let max_total = inst.prefixes() as usize * sigma;
    // Log-domain accumulation per p so large p does not overflow.
    let mut log_terms: Vec<Vec<f64>> = vec![Vec::new(); ps.len()];
    for (prof, weight) in &profiles {
        // Law of one term N(U): value t with probability #{j: N(j) = t}/m.
        let mut step: BTreeMap<usize, f64> = BTreeMap::new();
        for &t in prof {
            *step.entry(t as usize).or_default() += 1.0 / m;
        }
        let step: Vec<(usize, f64)> = step.into_iter().collect();
        let mut pmf = vec![0.0f64; max_total + 1];
        pmf[0] = 1.0;
        let mut hi = 0usize;
        for _ in 0..sigma {
            let top = step.last().map_or(0, |s| s.0);
            let mut next = vec![0.0f64; max_total + 1];
            for (s, &ps_) in pmf.iter().enumerate().take(hi + 1) {
                if ps_ == 0.0 {
                    continue;
                }
                for &(t, q) in &step {
                    next[s + t] += ps_ * q;
                }
            }
            hi += top;
            pmf = next;
        }
        for (i, &p) in ps.iter().enumerate() {
            for (s, &mass) in pmf.iter().enumerate().take(hi + 1) {
                let d = (s as f64 - centre).abs();
                if mass > 0.0 && d > 0.0 {
                    log_terms[i].push(weight.ln() + mass.ln() + p * d.ln());
                }
            }
        }
    }
    Ok(ps.iter().zip(&log_terms).map(|(p, l)| (log_sum_exp(l) / p).exp()).collect())
}

/// One row of the lower-bound study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub p: f64,
    pub gamma_p: f64,
    pub side: u64,
    pub support: u64,
    pub max_abs: f64,
    pub sigma2: f64,
    pub pnorm: f64,
    pub shape: f64,
    pub ratio: f64,
}

/// Exact lower-bound ratios `‖V‖_p / Ψ_p(γ_p^{c−1} M_v, γ_p^{c−1} σ_v²)` over `ps`.
pub fn lower_bound_study(params: SchemeParams, ps: &[f64], policy: &ConstantPolicy) -> Result<Vec<LowerBoundRow>> {
    ps.iter()
        .map(|&p| {
            let inst = LowerBoundInstance::build(params, p, policy)?;
            let pnorm = lower_bound_exact_pnorms(&inst, &[p])?[0];
            let shape = inst.shape()?;
            let st = inst.stats();
            Ok(LowerBoundRow {
                p,
                gamma_p: inst.gamma_p,
                side: inst.side,
                support: inst.support_size(),
                max_abs: st.max_abs,
                sigma2: st.sigma2,
                pnorm,
                shape,
                ratio: pnorm / shape,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{exact_moments, Mode, MomentRequest, Observable};
    use crate::tabulation::SchemeSpec;

    #[test]
    fn box_recognition() {
        let params = SchemeParams::simple(2, 3, 2).unwrap();
        let inst = LowerBoundInstance { params, p: 2.0, gamma_p: 2.0, side: 2 };
        let v = inst.value_function().unwrap();
        assert_eq!(as_box_instance(params, &v).map(|i| i.side), Some(2));
        let shifted = ValueFunction::single_bin(inst.keys().into_iter().map(|k| (k, 1.0)), 3, 4).unwrap();
        assert_eq!(as_box_instance(params, &shifted).map(|i| i.side), Some(2));
        let weighted = ValueFunction::single_bin(inst.keys().into_iter().map(|k| (k, 2.0)), 0, 4).unwrap();
        assert!(as_box_instance(params, &weighted).is_none());
        let ragged = ValueFunction::single_bin(inst.keys().into_iter().skip(1).map(|k| (k, 1.0)), 0, 4).unwrap();
        assert!(as_box_instance(params, &ragged).is_none());
        let full = ValueFunction::single_bin(params.universe(64).unwrap().into_iter().map(|k| (k, 1.0)), 0, 4).unwrap();
        assert_eq!(as_box_instance(params, &full).map(|i| i.side), Some(4));
    }

    #[test]
    fn gamma_example_instance() {
        let params = SchemeParams::simple(4, 2, 2).unwrap();
        let inst = LowerBoundInstance::build(params, 8.0, &ConstantPolicy::default()).unwrap();
        let expected = 8.0 / (E * E / 0.75).ln();
        assert!((inst.gamma_p - expected).abs() < 1e-14);
        assert!((inst.gamma_p - 3.497).abs() < 1e-3);
        assert_eq!(inst.side, 4);
        assert_eq!(inst.support_size(), 64);
        assert_eq!(inst.keys().len(), 64);
    }

    #[test]
    fn small_gamma_reduces_to_one_character() {
        let params = SchemeParams::simple(4, 3, 8).unwrap();
        let inst = LowerBoundInstance::build(params, 2.0, &ConstantPolicy::default()).unwrap();
        assert_eq!(inst.gamma_p, 1.0);
        assert_eq!(inst.side, 1);
        let keys = inst.keys();
        assert_eq!(keys, (0..16u64).map(|a| Key(a << 8)).collect::<Vec<_>>());
    }

    #[test]
    fn stats_match_value_function() {
        let params = SchemeParams::simple(4, 3, 2).unwrap();
        let inst = LowerBoundInstance::build(params, 6.0, &ConstantPolicy::default()).unwrap();
        let v = inst.value_function().unwrap();
        let a = inst.stats();
        let b = v.stats_brute_force();
        for (x, y) in [
            (a.max_abs, b.max_abs),
            (a.sigma2, b.sigma2),
            (a.spread, b.spread),
            (a.weight_ratio, b.weight_ratio),
            (a.total_l2_sq, b.total_l2_sq),
            (a.total_l1_sq, b.total_l1_sq),
        ] {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let m = 4.0;
        assert!((a.sigma2 - (1.0 / m) * (1.0 - 1.0 / m) * 16.0 * (inst.side as f64).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn preconditions_enforced() {
        let params = SchemeParams::simple(2, 2, 1).unwrap();
        assert!(LowerBoundInstance::build(params, 40.0, &ConstantPolicy::default()).is_err());
        assert!(LowerBoundInstance::build(params, 1.0, &ConstantPolicy::default()).is_err());
    }

    #[test]
    fn exact_oracle_matches_table_enumeration() {
        // c = 2, k = 2, l = 1: both routes are exhaustive. Sides beyond the theorem's range
        // exercise the convolution only.
        for side in 1..=4 {
            let params = SchemeParams::simple(2, 2, 1).unwrap();
            let inst = LowerBoundInstance { params, p: 2.0, gamma_p: side as f64, side };
            let conv = lower_bound_exact_pnorms(&inst, &[2.0, 4.0, 7.0]).unwrap();
            let spec = SchemeSpec::simple(2, 2, 1).unwrap();
            let req = MomentRequest::new(spec, Observable::Plain(inst.value_function().unwrap()), vec![2.0, 4.0, 7.0], Mode::Exact);
            let brute = exact_moments(&req).unwrap();
            for (a, b) in conv.iter().zip(&brute.estimates) {
                assert!((a - b.estimate).abs() < 1e-12 * a.max(1.0), "side={side}: {a} vs {}", b.estimate);
            }
        }
    }

    #[test]
    fn exact_oracle_c3_matches_table_enumeration() {
        let params = SchemeParams::simple(1, 3, 1).unwrap();
        let inst = LowerBoundInstance { params, p: 4.0, gamma_p: 1.5, side: 2 };
        let conv = lower_bound_exact_pnorms(&inst, &[2.0, 4.0]).unwrap();
        let spec = SchemeSpec::simple(1, 3, 1).unwrap();
        let req = MomentRequest::new(spec, Observable::Plain(inst.value_function().unwrap()), vec![2.0, 4.0], Mode::Exact);
        let brute = exact_moments(&req).unwrap();
        for (a, b) in conv.iter().zip(&brute.estimates) {
            assert!((a - b.estimate).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn profile_law_sums_to_one() {
        for (k, c, l, side) in [(4, 2, 2, 5), (4, 2, 4, 6), (1, 3, 1, 2), (4, 1, 2, 1)] {
            let params = SchemeParams::simple(k, c, l).unwrap();
            let inst = LowerBoundInstance { params, p: 2.0, gamma_p: 1.0, side };
            let law = prefix_profiles(&inst).unwrap();
            let total: f64 = law.values().sum();
            assert!((total - 1.0).abs() < 1e-12, "{k} {c} {l}: {total}");
            assert!(law.keys().all(|p| p.iter().sum::<u64>() == inst.prefixes()));
        }
    }

    #[test]
    fn second_moment_is_sigma() {
        let params = SchemeParams::simple(8, 2, 2).unwrap();
        for p in [2.0, 8.0, 16.0] {
            let inst = LowerBoundInstance::build(params, p, &ConstantPolicy::default()).unwrap();
            let n2 = lower_bound_exact_pnorms(&inst, &[2.0]).unwrap()[0];
            assert!((n2 - inst.stats().sigma2.sqrt()).abs() < 1e-9 * n2);
        }
    }
}
