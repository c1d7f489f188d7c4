//! The Ψ_p function, γ_p inflation factors, moment bounds, and tail bounds.
//!
//! All logarithms are natural.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, log_sum_exp};
use crate::tabulation::SchemeParams;
use crate::valuefn::ValueStats;

/// Numeric values for the symbolic constants of the moment theorems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantPolicy {
    /// `L` of the fully random moment bound.
    pub sampling_l: f64,
    /// `L₁`.
    pub l1: f64,
    /// `L₂` in `K_c = (L₂ c)^{c−1}`.
    pub k_c_base: f64,
    /// `L` used by the Markov tail.
    pub markov_l: f64,
}

impl Default for ConstantPolicy {
    fn default() -> Self {
        ConstantPolicy { sampling_l: 16.0 * E, l1: 1.0, k_c_base: 2.0, markov_l: 16.0 * E }
    }
}

impl ConstantPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sampling_l", self.sampling_l),
            ("l1", self.l1),
            ("k_c_base", self.k_c_base),
            ("markov_l", self.markov_l),
        ] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("constant {name} = {v} must be finite and >= 1")));
            }
        }
        Ok(())
    }

    /// `K_c = (L₂ c)^{c−1}`.
    pub fn k_c_simple(&self, c: u32) -> f64 {
        (self.k_c_base * c as f64).powi(c as i32 - 1)
    }

    /// `K_c = L₁ (L₂ c)^c`.
    pub fn k_c_mixed(&self, c: u32) -> f64 {
        self.l1 * (self.k_c_base * c as f64).powi(c as i32)
    }

    /// `K_{c,γ} = L₁ (L₂ c² γ)^c`.
    pub fn k_c_gamma(&self, c: u32, gamma: f64) -> f64 {
        let c_f = c as f64;
        self.l1 * (self.k_c_base * c_f * c_f * gamma).powi(c as i32)
    }
}

/// Which of the three Ψ_p cases applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiCase {
    /// Both arguments zero-like; Ψ_p is taken as 0.
    Degenerate,
    /// `p < log(pM²/σ²)`.
    Small,
    /// `p < e²σ²/M²`.
    Gaussian,
    /// Everything else.
    Poisson,
}

impl PsiCase {
    pub fn id(self) -> u8 {
        match self {
            PsiCase::Degenerate => 0,
            PsiCase::Small => 1,
            PsiCase::Gaussian => 2,
            PsiCase::Poisson => 3,
        }
    }
}

fn check_psi_input(p: f64, m: f64, sigma2: f64) -> Result<()> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::Domain(format!("Ψ_p needs p >= 2, got {p}")));
    }
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::Domain(format!("Ψ_p needs M >= 0, got {m}")));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("Ψ_p needs σ² >= 0, got {sigma2}")));
    }
    Ok(())
}

/// `log(pM²/σ²)`, computed without forming the quotient.
fn log_ratio(p: f64, m: f64, sigma2: f64) -> f64 {
    p.ln() + 2.0 * m.ln() - sigma2.ln()
}

pub fn psi_case(p: f64, m: f64, sigma2: f64) -> Result<PsiCase> {
    check_psi_input(p, m, sigma2)?;
    if m == 0.0 || sigma2 == 0.0 {
        return Ok(PsiCase::Degenerate);
    }
    let lr = log_ratio(p, m, sigma2);
    if p < lr {
        Ok(PsiCase::Small)
    } else if lr < 2.0 {
        // p < e²σ²/M² in log form.
        Ok(PsiCase::Gaussian)
    } else {
        Ok(PsiCase::Poisson)
    }
}

/// `Ψ_p(M, σ²)` by its three-case definition. Zero when `M = 0` or `σ² = 0`.
pub fn psi(p: f64, m: f64, sigma2: f64) -> Result<f64> {
    Ok(match psi_case(p, m, sigma2)? {
        PsiCase::Degenerate => 0.0,
        PsiCase::Small => ((sigma2.ln() - p.ln() - 2.0 * m.ln()) / p).exp() * m,
        PsiCase::Gaussian => 0.5 * p.sqrt() * sigma2.sqrt(),
        PsiCase::Poisson => p / (E * log_ratio(p, m, sigma2)) * m,
    })
}

/// `M (p/s) (σ²/(pM²))^{1/s}`.
fn sup_objective(p: f64, m: f64, sigma2: f64, s: f64) -> f64 {
    let log_alpha = -log_ratio(p, m, sigma2);
    m * (p / s) * (log_alpha / s).exp()
}

/// `M · sup_{2≤s≤p} (p/s)(σ²/(pM²))^{1/s}`.
///
/// Evaluated at the analytic maximiser and cross-checked by golden-section search;
/// the larger of the two is returned.
pub fn psi_sup_form(p: f64, m: f64, sigma2: f64) -> Result<f64> {
    check_psi_input(p, m, sigma2)?;
    if m == 0.0 || sigma2 == 0.0 {
        return Ok(0.0);
    }
    let s_star = log_ratio(p, m, sigma2).max(2.0).min(p);
    let at_star = sup_objective(p, m, sigma2, s_star);
    let searched = golden_section_max(|s| sup_objective(p, m, sigma2, s), 2.0, p);
    Ok(at_star.max(searched))
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return f(lo);
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a) <= 1e-14 * b.abs().max(1.0) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    f1.max(f2).max(f(lo)).max(f(hi))
}

/// One inequality of the Ψ_p property family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `false` when the inequality's precondition does not hold.
    pub applicable: bool,
    pub holds: bool,
}

impl PropertyCheck {
    fn le(name: &'static str, lhs: f64, rhs: f64, applicable: bool) -> Self {
        let holds = !applicable || lhs <= rhs * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        PropertyCheck { name, lhs, rhs, applicable, holds }
    }

    fn eq(name: &'static str, lhs: f64, rhs: f64, rel: f64) -> Self {
        let holds = (lhs - rhs).abs() <= rel * lhs.abs().max(rhs.abs());
        PropertyCheck { name, lhs, rhs, applicable: true, holds }
    }
}

/// Checks the algebraic properties of Ψ_p at one point, with scaling factor `λ ≥ 1`.
pub fn psi_property_checks(p: f64, m: f64, sigma2: f64, lambda: f64) -> Result<Vec<PropertyCheck>> {
    if !(lambda >= 1.0) {
        return Err(Error::Domain(format!("λ must be >= 1, got {lambda}")));
    }
    let value = psi(p, m, sigma2)?;
    let sigma = sigma2.sqrt();
    let gauss = 0.5 * p.sqrt() * sigma;
    let far_applicable = E * E * sigma2 / (m * m) <= p && m > 0.0 && sigma2 > 0.0;
    let far_out = if far_applicable { p / (E * log_ratio(p, m, sigma2)) * m } else { f64::NAN };
    Ok(vec![
        PropertyCheck::eq("sup-form", value, psi_sup_form(p, m, sigma2)?, 1e-9),
        PropertyCheck::le("bernstein", value, gauss.max(p * m / (2.0 * E)), true),
        PropertyCheck::le("lower-bound", gauss, value, true),
        PropertyCheck::le("far-out", value, far_out, far_applicable),
        PropertyCheck::le("growth", psi(p, lambda * m, lambda * sigma2)?, lambda * value, true),
        PropertyCheck::le(
            "reverse-growth",
            lambda * value,
            psi(p, lambda * lambda * m, lambda * lambda * sigma2)?,
            true,
        ),
        PropertyCheck::eq("scaling", psi(p, lambda * m, lambda * lambda * sigma2)?, lambda * value, 1e-12),
    ])
}

/// γ_p of the simple tabulation moment bound.
///
/// `max{log m + log(weight_ratio)/c, p} / log(e² m / spread)`.
pub fn gamma_p_simple(p: f64, m: u64, c: u32, spread: f64, weight_ratio: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::Domain(format!("range m = {m} must be >= 2")));
    }
    if !(spread > 0.0) || !(weight_ratio >= 1.0 - 1e-12) || c == 0 {
        return Err(Error::Domain(format!("bad spread {spread} or weight ratio {weight_ratio}")));
    }
    let ln_m = (m as f64).ln();
    let denom = 2.0 + ln_m - spread.ln();
    if !(denom > 0.0) {
        return Err(Error::Domain(format!("spread {spread} >= e²m makes the γ_p denominator nonpositive")));
    }
    let num = (ln_m + weight_ratio.max(1.0).ln() / c as f64).max(p);
    Ok(num / denom)
}

/// γ_p of the mixed tabulation moment bound: `max{1, log m / log|Σ|, p / log|Σ|}`.
pub fn gamma_p_mixed(p: f64, m: u64, alphabet: u64) -> Result<f64> {
    if alphabet < 2 {
        return Err(Error::Domain(format!("alphabet size {alphabet} must be >= 2")));
    }
    let ln_s = (alphabet as f64).ln();
    Ok(1f64.max((m as f64).ln() / ln_s).max(p / ln_s))
}

/// γ_p of the mixed sign Khintchine inequality: `max{1, p / log|Σ|}`.
pub fn gamma_p_khintchine(p: f64, alphabet: u64) -> Result<f64> {
    if alphabet < 2 {
        return Err(Error::Domain(format!("alphabet size {alphabet} must be >= 2")));
    }
    Ok(1f64.max(p / (alphabet as f64).ln()))
}

/// Which moment theorem a bound belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    FullyRandom,
    Simple,
    Mixed,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::FullyRandom => "fully_random",
            Theorem::Simple => "simple",
            Theorem::Mixed => "mixed",
        }
    }

    /// The γ_p of this theorem (1 for the fully random case).
    pub fn gamma(self, p: f64, stats: &ValueStats, params: &SchemeParams) -> Result<f64> {
        match self {
            Theorem::FullyRandom => Ok(1.0),
            Theorem::Simple => {
                gamma_p_simple(p, params.range(), params.num_chars, stats.spread, stats.weight_ratio)
            }
            Theorem::Mixed => gamma_p_mixed(p, params.range(), params.alphabet_size()),
        }
    }

    /// Exponent of γ_p in the bound's arguments.
    pub fn gamma_exponent(self, c: u32) -> i32 {
        match self {
            Theorem::FullyRandom => 0,
            Theorem::Simple => c as i32 - 1,
            Theorem::Mixed => c as i32,
        }
    }

    /// `Ψ_p(γ_p^e M_v, γ_p^e σ_v²)`, the bound with every constant set to 1.
    pub fn shape(self, p: f64, stats: &ValueStats, params: &SchemeParams) -> Result<f64> {
        if stats.is_zero() {
            return Ok(0.0);
        }
        let g = self.gamma(p, stats, params)?.powi(self.gamma_exponent(params.num_chars));
        psi(p, g * stats.max_abs, g * stats.sigma2)
    }

    /// The theorem's bound with the policy's constants.
    pub fn bound(self, p: f64, stats: &ValueStats, params: &SchemeParams, policy: &ConstantPolicy) -> Result<f64> {
        match self {
            Theorem::FullyRandom => moment_bound_fully_random(p, stats, policy),
            Theorem::Simple => moment_bound_simple_tab(p, stats, params, policy),
            Theorem::Mixed => moment_bound_mixed_tab(p, stats, params, policy),
        }
    }
}

/// `L Ψ_p(M_v, σ_v²)`.
pub fn moment_bound_fully_random(p: f64, stats: &ValueStats, policy: &ConstantPolicy) -> Result<f64> {
    Ok(policy.sampling_l * psi(p, stats.max_abs, stats.sigma2)?)
}

/// `L₁ Ψ_p(K_c γ_p^{c−1} M_v, K_c γ_p^{c−1} σ_v²)`.
pub fn moment_bound_simple_tab(
    p: f64,
    stats: &ValueStats,
    params: &SchemeParams,
    policy: &ConstantPolicy,
) -> Result<f64> {
    if stats.is_zero() {
        return Ok(0.0);
    }
    let c = params.num_chars;
    let gamma = Theorem::Simple.gamma(p, stats, params)?;
    let f = policy.k_c_simple(c) * gamma.powi(c as i32 - 1);
    Ok(policy.l1 * psi(p, f * stats.max_abs, f * stats.sigma2)?)
}

/// `Ψ_p(K_c γ_p^c M_v, K_c γ_p^c σ_v²)` with `K_c = L₁(L₂c)^c`.
pub fn moment_bound_mixed_tab(
    p: f64,
    stats: &ValueStats,
    params: &SchemeParams,
    policy: &ConstantPolicy,
) -> Result<f64> {
    if stats.is_zero() {
        return Ok(0.0);
    }
    let c = params.num_chars;
    let gamma = Theorem::Mixed.gamma(p, stats, params)?;
    let f = policy.k_c_mixed(c) * gamma.powi(c as i32);
    psi(p, f * stats.max_abs, f * stats.sigma2)
}

/// `C(x) = (x+1) log(x+1) − x`, accurate for small `x`.
pub fn bennett_c(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // x²/2 − x³/6 + x⁴/12
        let x2 = x * x;
        x2 / 2.0 - x2 * x / 6.0 + x2 * x2 / 12.0
    } else {
        (x + 1.0) * x.ln_1p() - x
    }
}

/// Bennett's exponent `(σ²/M²) C(tM/σ²)`.
pub fn bennett_exponent(t: f64, m: f64, sigma2: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if m == 0.0 || sigma2 == 0.0 {
        return f64::INFINITY;
    }
    sigma2 / (m * m) * bennett_c(t * m / sigma2)
}

/// `min(1, 2 exp(−(σ²/M²) C(tM/σ²)))`.
pub fn bennett_tail(t: f64, m: f64, sigma2: f64) -> Result<f64> {
    check_tail_input(t, m, sigma2)?;
    Ok((2.0 * (-bennett_exponent(t, m, sigma2)).exp()).min(1.0))
}

/// The two-branch simplification: `2exp(−t²/(3σ²))` for `t ≤ σ²/M`, else
/// `2exp(−(t/2M) log(1 + tM/σ²))`; clamped to 1.
pub fn bennett_tail_two_branch(t: f64, m: f64, sigma2: f64) -> Result<f64> {
    check_tail_input(t, m, sigma2)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    if m == 0.0 || sigma2 == 0.0 {
        return Ok(0.0);
    }
    let e = if t * m <= sigma2 {
        t * t / (3.0 * sigma2)
    } else {
        t / (2.0 * m) * (t * m / sigma2).ln_1p()
    };
    Ok((2.0 * (-e).exp()).min(1.0))
}

fn check_tail_input(t: f64, m: f64, sigma2: f64) -> Result<()> {
    if !(t >= 0.0) || !(m >= 0.0) || !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!("tail bounds need t, M, σ² >= 0 (got {t}, {m}, {sigma2})")));
    }
    Ok(())
}

/// Result of the Markov tail from a Ψ_p moment bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovTail {
    /// Tail probability, clamped to 1.
    pub bound: f64,
    /// The unclamped `log(1/bound)`, i.e. the exponent.
    pub exponent: f64,
    /// The moment order behind the bound.
    pub p: f64,
    /// 1, 2 or 3.
    pub branch: u8,
}

/// Tail bound obtained by applying Markov's inequality to `‖Y‖_p ≤ L Ψ_p(M, σ²)`.
pub fn markov_tail_from_psi(t: f64, m: f64, sigma2: f64, l: f64) -> Result<MarkovTail> {
    if !(t > 0.0) || !(m > 0.0) || !(sigma2 > 0.0) || !(l > 0.0) {
        return Err(Error::Domain(format!("Markov tail needs t, M, σ², L > 0 (got {t}, {m}, {sigma2}, {l})")));
    }
    let sigma = sigma2.sqrt();
    let (exponent, p, branch) = if t <= l * m.max(E * sigma / 2f64.sqrt()) {
        let b = l * l * sigma2 / (2.0 * t * t);
        (-b.ln(), 2.0, 1)
    } else if t <= l * E * E * sigma2 / (2.0 * m) {
        let e = 4.0 * t * t / (E * E * l * l * sigma2);
        (e, e, 2)
    } else {
        let e = t / (l * m) * (2.0 * t * m / (l * sigma2)).ln();
        (e, e, 3)
    };
    Ok(MarkovTail { bound: (-exponent).exp().min(1.0), exponent, p, branch })
}

/// Tail of a mixed tabulation sum:
/// `exp(−(σ²/M²) C(tM/σ²) / K_{c,γ}) + |U|^{−γ}`, clamped to 1.
pub fn mixed_tail(t: f64, stats: &ValueStats, params: &SchemeParams, gamma: f64, policy: &ConstantPolicy) -> Result<f64> {
    check_tail_input(t, stats.max_abs, stats.sigma2)?;
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("γ must be positive, got {gamma}")));
    }
    let log2_universe = params.key_bits() as f64;
    if params.range_bits as f64 > gamma * log2_universe {
        return Err(Error::Domain(format!(
            "m = 2^{} exceeds |U|^γ = 2^{}",
            params.range_bits,
            gamma * log2_universe
        )));
    }
    let k = policy.k_c_gamma(params.num_chars, gamma);
    let main = (-bennett_exponent(t, stats.max_abs, stats.sigma2) / k).exp();
    let additive = (-gamma * log2_universe * std::f64::consts::LN_2).exp();
    Ok((main + additive).min(1.0))
}

/// Truncation point used for the Poisson moment sum.
pub fn poisson_cutoff(lambda: f64, p: f64) -> u64 {
    (lambda + 50.0 * lambda.sqrt() + 50.0 * p).ceil() as u64
}

/// `E[|X − λ|^p]^{1/p}` for `X ~ Poisson(λ)`, summing `n ∈ [0, cutoff]`.
pub fn poisson_central_pnorm_truncated(lambda: f64, p: f64, cutoff: u64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("λ must be positive, got {lambda}")));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("p must be >= 1, got {p}")));
    }
    let ln_lambda = lambda.ln();
    let mut log_pmf = -lambda;
    let mut logs = Vec::with_capacity(cutoff as usize + 1);
    for n in 0..=cutoff {
        if n > 0 {
            log_pmf += ln_lambda - (n as f64).ln();
        }
        let d = (n as f64 - lambda).abs();
        if d > 0.0 {
            logs.push(log_pmf + p * d.ln());
        }
    }
    let lse = log_sum_exp(&logs);
    Ok((lse / p).exp())
}

/// `E[|X − λ|^p]^{1/p}` for `X ~ Poisson(λ)`.
pub fn poisson_central_pnorm(lambda: f64, p: f64) -> Result<f64> {
    poisson_central_pnorm_truncated(lambda, p, poisson_cutoff(lambda, p))
}

/// One row of a bound table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub p: f64,
    pub m: f64,
    pub sigma2: f64,
    pub case_id: u8,
    pub psi: f64,
    pub bound: f64,
    pub gamma_p: f64,
}

impl BoundRow {
    pub const HEADER: [&'static str; 7] = ["p", "M", "sigma2", "case_id", "psi", "bound", "gamma_p"];

    pub fn record(&self) -> [String; 7] {
        [
            fmt_f64(self.p),
            fmt_f64(self.m),
            fmt_f64(self.sigma2),
            self.case_id.to_string(),
            fmt_f64(self.psi),
            fmt_f64(self.bound),
            fmt_f64(self.gamma_p),
        ]
    }
}

/// Bound-table row for `theorem` at moment `p` and the given statistics.
pub fn bound_row(
    theorem: Theorem,
    p: f64,
    stats: &ValueStats,
    params: &SchemeParams,
    policy: &ConstantPolicy,
) -> Result<BoundRow> {
    let case = psi_case(p, stats.max_abs, stats.sigma2)?;
    let gamma = if stats.is_zero() { 1.0 } else { theorem.gamma(p, stats, params)? };
    Ok(BoundRow {
        p,
        m: stats.max_abs,
        sigma2: stats.sigma2,
        case_id: case.id(),
        psi: psi(p, stats.max_abs, stats.sigma2)?,
        bound: theorem.bound(p, stats, params, policy)?,
        gamma_p: gamma,
    })
}

/// Writes bound rows as CSV.
pub fn write_bound_csv<W: std::io::Write>(rows: &[BoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BoundRow::HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}
