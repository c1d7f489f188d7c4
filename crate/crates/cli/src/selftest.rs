//! The invariant suite behind `tabhash selftest`.
//!
//! `--quick` keeps to exhaustive enumeration and closed forms; the full suite adds Monte Carlo
//! oracle equivalence and the seeded non-4-independence frequency.

use serde_json::json;

use tabhash::bounds::psi_property_checks;
use tabhash::experiments::{
    four_tuple_exhaustive, four_tuple_frequency, lower_bound_exact_pnorms, three_wise_exhaustive, LowerBoundInstance,
};
use tabhash::moments::{exact_moments, monte_carlo_moments, symmetrization_check, Mode, MomentRequest, Observable};
use tabhash::numeric::{derive_seed, splitmix64};
use tabhash::tabulation::PositionCharSet;
use tabhash::{Error, Key, Result, SchemeParams, SchemeSpec, SimpleTabHash, TabHasher, ValueFunction};

use crate::commands::Outcome;

/// Fault hooks accepted by `--inject-fault`.
pub const FAULTS: [&str; 1] = ["table-seed"];

#[derive(Debug, Clone)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn psi_grid(points_per_axis: usize) -> Result<Check> {
    let mut total = 0;
    let mut failed = 0;
    for i in 0..points_per_axis {
        let p = 2.0 * 32f64.powf(i as f64 / (points_per_axis - 1) as f64);
        for j in 0..points_per_axis {
            let ratio = 10f64.powf(-8.0 + 16.0 * j as f64 / (points_per_axis - 1) as f64);
            for c in psi_property_checks(p, 1.0, ratio, 3.0)? {
                total += 1;
                failed += usize::from(!c.holds);
            }
        }
    }
    Ok(check("psi-algebra", failed == 0, format!("{failed} of {total} property checks failed")))
}

fn xor_homomorphism(seed: u64) -> Result<Check> {
    let params = SchemeParams::simple(8, 4, 32)?;
    let h = SimpleTabHash::new(params, seed)?;
    let mut bad = 0;
    for t in 0..500u64 {
        let mut s1 = PositionCharSet::new();
        let mut s2 = PositionCharSet::new();
        for j in 0..8u64 {
            let r = splitmix64(derive_seed(seed, t * 16 + j));
            s1.toggle((r % 4) as u32, (r >> 8) & 0xff);
            s2.toggle(((r >> 16) % 4) as u32, (r >> 24) & 0xff);
        }
        let joint = s1.symmetric_difference(&s2);
        bad += u32::from(h.extended_hash(&joint) != h.extended_hash(&s1) ^ h.extended_hash(&s2));
    }
    Ok(check("xor-homomorphism", bad == 0, format!("{bad} of 500 random set pairs violate it")))
}

/// Rebuilds a scheme from its seed and compares against the first build.
fn determinism(seed: u64, fault: bool) -> Result<Check> {
    let spec = SchemeSpec::mixed(8, 4, 1, 32)?;
    let a = spec.build(seed)?;
    let b = spec.build(if fault { seed ^ 1 } else { seed })?;
    let mismatches = (0..4096u64).filter(|&k| a.hash(Key(splitmix64(k) & 0xffff_ffff)) != b.hash(Key(splitmix64(k) & 0xffff_ffff))).count();
    Ok(check("seed-determinism", mismatches == 0, format!("{mismatches} of 4096 keys differ between rebuilds")))
}

fn small_corpus() -> Result<Vec<(SchemeSpec, ValueFunction)>> {
    let mut out = Vec::new();
    for (k, c, l) in [(1, 2, 1), (1, 2, 2), (2, 1, 2), (2, 2, 1)] {
        let spec = SchemeSpec::simple(k, c, l)?;
        let keys = spec.params.universe(16)?;
        let m = spec.params.range();
        let w = |i: usize| 1.0 + 0.25 * i as f64;
        out.push((spec, ValueFunction::single_bin(keys.iter().enumerate().map(|(i, &x)| (x, w(i))), 0, m)?));
        out.push((spec, ValueFunction::threshold(keys.iter().enumerate().map(|(i, &x)| (x, w(i))), m / 2, m)?));
    }
    Ok(out)
}

fn symmetrization() -> Result<Check> {
    let mut total = 0;
    let mut bad = 0;
    for (spec, v) in small_corpus()? {
        for r in symmetrization_check(&v, &spec, &[2.0, 4.0, 8.0])? {
            total += 1;
            bad += usize::from(!r.holds);
        }
    }
    Ok(check("symmetrization", bad == 0, format!("{bad} of {total} exact two-sided checks failed")))
}

fn oracle_equivalence(seed: u64) -> Result<Check> {
    let mut total = 0;
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for (i, (spec, v)) in small_corpus()?.into_iter().enumerate() {
        let ps = vec![2.0, 4.0, 8.0];
        let obs = Observable::Plain(v);
        let exact = exact_moments(&MomentRequest::new(spec, obs.clone(), ps.clone(), Mode::Exact))?;
        let mc = monte_carlo_moments(&MomentRequest::new(
            spec,
            obs,
            ps,
            Mode::MonteCarlo { samples: 20_000, base_seed: derive_seed(seed, i as u64) },
        ))?;
        for (a, b) in exact.estimates.iter().zip(&mc.estimates) {
            total += 1;
            let z = (a.estimate - b.estimate).abs() / b.std_error.max(1e-300);
            worst = worst.max(z);
            bad += usize::from(z > 4.0);
        }
    }
    Ok(check("oracle-equivalence", bad == 0, format!("{bad} of {total} beyond 4 SE, worst {worst:.2} SE")))
}

fn independence(full: bool, seed: u64) -> Result<Vec<Check>> {
    let three = three_wise_exhaustive(SchemeParams::simple(2, 2, 2)?)?;
    let four = four_tuple_exhaustive(SchemeParams::simple(1, 2, 2)?)?;
    let mut out = vec![
        check(
            "three-wise-uniform",
            three.uniform,
            format!("counts in [{}, {}], expected {}", three.min_count, three.max_count, three.expected),
        ),
        check("four-key-witness", four.fraction == 1.0, format!("identity holds for {} of {} fillings", four.zero_count, four.seeds)),
    ];
    if full {
        let mixed = four_tuple_frequency(&SchemeSpec::mixed(8, 2, 1, 8)?, 2000, seed)?;
        out.push(check(
            "mixed-breaks-witness",
            mixed.fraction < 0.5,
            format!("identity holds for {} of {} seeds", mixed.zero_count, mixed.seeds),
        ));
    }
    Ok(out)
}

fn lower_bound_oracle() -> Result<Check> {
    let params = SchemeParams::simple(2, 2, 1)?;
    let mut worst: f64 = 0.0;
    for side in 1..=4 {
        let inst = LowerBoundInstance { params, p: 2.0, gamma_p: side as f64, side };
        let ps = [2.0, 4.0, 7.0];
        let conv = lower_bound_exact_pnorms(&inst, &ps)?;
        let spec = SchemeSpec::simple(2, 2, 1)?;
        let brute = exact_moments(&MomentRequest::new(
            spec,
            Observable::Plain(inst.value_function()?),
            ps.to_vec(),
            Mode::Exact,
        ))?;
        for (a, b) in conv.iter().zip(&brute.estimates) {
            worst = worst.max((a - b.estimate).abs() / a.max(1.0));
        }
    }
    Ok(check("lower-bound-oracle", worst < 1e-12, format!("largest relative gap {worst:.3e}")))
}

fn value_stats() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (_, v) in small_corpus()? {
        let a = v.stats();
        let b = v.stats_brute_force();
        for (x, y) in [(a.max_abs, b.max_abs), (a.sigma2, b.sigma2), (a.spread, b.spread), (a.weight_ratio, b.weight_ratio)] {
            worst = worst.max((x - y).abs() / x.abs().max(1e-300));
        }
    }
    Ok(check("value-stats-closed-form", worst <= 1e-12, format!("largest relative gap {worst:.3e}")))
}

/// Runs the suite; `failed` is set when any check fails.
pub fn run(quick: bool, fault: Option<&str>, seed: u64) -> Result<Outcome> {
    if let Some(f) = fault {
        if !FAULTS.contains(&f) {
            return Err(Error::InvalidParams(format!("unknown fault `{f}` (known: {})", FAULTS.join(", "))));
        }
    }
    let mut checks = vec![
        psi_grid(if quick { 20 } else { 100 })?,
        xor_homomorphism(seed)?,
        determinism(seed, fault == Some("table-seed"))?,
        value_stats()?,
        symmetrization()?,
        lower_bound_oracle()?,
    ];
    checks.extend(independence(!quick, seed)?);
    if !quick {
        checks.push(oracle_equivalence(seed)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "status", "detail"]).map_err(Error::from)?;
    for c in &checks {
        w.write_record([c.name, if c.passed { "PASS" } else { "FAIL" }, &c.detail]).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let csv = String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))?;
    let failed = checks.iter().any(|c| !c.passed);
    let summary = json!({
        "quick": quick,
        "fault": fault,
        "passed": checks.iter().filter(|c| c.passed).count(),
        "failed": checks.iter().filter(|c| !c.passed).map(|c| c.name).collect::<Vec<_>>(),
    });
    Ok(Outcome { csv, summary, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let out = run(true, None, 1).unwrap();
        assert!(!out.failed, "{}", out.csv);
        assert!(out.csv.lines().skip(1).all(|l| l.contains(",PASS,")));
    }

    #[test]
    fn fault_is_detected() {
        let out = run(true, Some("table-seed"), 1).unwrap();
        assert!(out.failed);
        assert!(out.csv.contains("seed-determinism,FAIL"));
        assert!(run(true, Some("nonsense"), 1).is_err());
    }
}
