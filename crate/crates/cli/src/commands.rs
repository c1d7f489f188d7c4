//! Executes a resolved [`RunConfig`] into CSV text and a JSON summary.

use serde_json::{json, Value};

use tabhash::bounds::{bound_row, write_bound_csv, ConstantPolicy, Theorem};
use tabhash::experiments::{
    fully_random_oracle, lower_bound_study, minhash_kpartition, run_bound_sweep, run_query_sweep, throughput_bench,
    write_query_sweep_csv, write_sweep_csv, Coloring, KPartitionConfig, KPartitionReport, QuerySweepGrid, SweepGrid,
};
use tabhash::moments::{run_moments, Mode, MomentRequest, Observable, SignMode};
use tabhash::numeric::fmt_f64;
use tabhash::tabulation::signer_for;
use tabhash::{Error, Result, SchemeKind, SchemeParams, SchemeSpec, SignFn, TabHasher, ValueStats};

use crate::config::{CommandKind, RunConfig};
use crate::descriptor::{parse_key_list, parse_scheme, parse_value};
use crate::selftest;

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub csv: String,
    /// Result details; the caller adds the config, its hash and timing.
    pub summary: Value,
    /// A check inside the command failed (exit code 1).
    pub failed: bool,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParams(msg.into())
}

fn required<'a>(field: &'a Option<String>, flag: &str) -> Result<&'a str> {
    field.as_deref().ok_or_else(|| usage(format!("missing {flag}")))
}

/// Default seed per command, used when the config leaves `base_seed` unset.
pub fn default_seed(command: CommandKind) -> u64 {
    match command {
        CommandKind::Hash => 0,
        CommandKind::Moments => 0x5eed_0100,
        CommandKind::Bounds => 0,
        CommandKind::Sweep => SweepGrid::standard().base_seed,
        CommandKind::Lowerbound => 0,
        CommandKind::Minhash => 0x5eed_0006,
        CommandKind::Bench => 0x5eed_0200,
        CommandKind::Selftest => 0x5eed_0300,
    }
}

fn csv_text<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<String> {
    let mut out = Vec::new();
    f(&mut out)?;
    String::from_utf8(out).map_err(|e| Error::Io(e.to_string()))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

pub fn parse_theorem(s: &str) -> Result<Theorem> {
    match s {
        "fully_random" | "random" => Ok(Theorem::FullyRandom),
        "simple" => Ok(Theorem::Simple),
        "mixed" => Ok(Theorem::Mixed),
        other => Err(usage(format!("unknown theorem `{other}` (fully_random, simple, mixed)"))),
    }
}

pub fn parse_sign(s: &str) -> Result<SignMode> {
    match s {
        "none" => Ok(SignMode::None),
        "simple" | "simple_sign" => Ok(SignMode::SimpleSign),
        "mixed" | "mixed_sign" => Ok(SignMode::MixedSign),
        other => Err(usage(format!("unknown sign mode `{other}` (none, simple, mixed)"))),
    }
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let seed = cfg.base_seed.unwrap_or_else(|| default_seed(cfg.command));
    match cfg.command {
        CommandKind::Hash => hash(cfg, seed),
        CommandKind::Moments => moments(cfg, seed),
        CommandKind::Bounds => bounds(cfg),
        CommandKind::Sweep => sweep(cfg, seed),
        CommandKind::Lowerbound => lowerbound(cfg),
        CommandKind::Minhash => minhash(cfg, seed),
        CommandKind::Bench => bench(cfg, seed),
        CommandKind::Selftest => selftest::run(cfg.quick, cfg.inject_fault.as_deref(), seed),
    }
}

fn hash(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let spec = parse_scheme(required(&cfg.scheme, "--scheme")?)?;
    let keys = parse_key_list(cfg.keys.as_deref().unwrap_or("0..16"))?;
    let sign = parse_sign(cfg.sign.as_deref().unwrap_or("none"))?;
    let scheme = spec.build(seed)?;
    let signer = if sign == SignMode::None { None } else { Some(signer_for(&scheme, seed)?) };
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: &[&str] = if signer.is_some() { &["key", "hash", "sign"] } else { &["key", "hash"] };
    w.write_record(header).map_err(Error::from)?;
    for k in keys {
        let key = spec.params.key(k)?;
        let mut rec = vec![k.to_string(), scheme.hash(key).to_string()];
        if let Some(s) = &signer {
            rec.push(s.sign(key).to_string());
        }
        w.write_record(&rec).map_err(Error::from)?;
    }
    let csv = finish(w)?;
    Ok(Outcome { csv, summary: json!({ "scheme": spec.descriptor(), "seed": seed }), failed: false })
}

fn moments(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let spec = parse_scheme(required(&cfg.scheme, "--scheme")?)?;
    let value = parse_value(required(&cfg.value, "--value")?)?;
    let obs = value.build(&spec.params, seed)?;
    let ps = if cfg.ps.is_empty() { vec![2.0, 4.0, 8.0] } else { cfg.ps.clone() };
    let mode = match cfg.mode.as_deref().unwrap_or("mc") {
        "exact" => Mode::Exact,
        "mc" | "monte_carlo" => Mode::MonteCarlo { samples: cfg.samples.unwrap_or(10_000), base_seed: seed },
        other => return Err(usage(format!("unknown --mode `{other}` (exact, mc)"))),
    };
    let sign = parse_sign(cfg.sign.as_deref().unwrap_or("none"))?;
    let req = MomentRequest::new(spec, obs, ps, mode).with_sign(sign);
    let report = run_moments(&req)?;
    let csv = csv_text(|out| report.write_csv(out))?;
    let wall = report.wall_time_secs;
    let mut summary = to_value(&report.without_timing())?;
    summary["wall_time_secs"] = json!(wall);
    Ok(Outcome { csv, summary, failed: false })
}

fn bounds(cfg: &RunConfig) -> Result<Outcome> {
    let theorem = parse_theorem(cfg.theorem.as_deref().unwrap_or("simple"))?;
    let ps = if cfg.ps.is_empty() { vec![2.0, 4.0, 8.0, 16.0] } else { cfg.ps.clone() };
    let policy = ConstantPolicy::default();
    let mut rows = Vec::new();
    if let Some(v) = &cfg.value {
        let spec = parse_scheme(required(&cfg.scheme, "--scheme")?)?;
        let stats = match parse_value(v)?.build(&spec.params, 0)? {
            Observable::Plain(v) => v.stats(),
            Observable::Query(_) => return Err(usage("--value for bounds must be bin, threshold or file")),
        };
        for &p in &ps {
            rows.push(bound_row(theorem, p, &stats, &spec.params, &policy)?);
        }
    } else {
        if theorem != Theorem::FullyRandom {
            return Err(usage("bounds without --value needs --theorem fully_random"));
        }
        if cfg.max_abs.is_empty() || cfg.max_abs.len() != cfg.sigma2.len() {
            return Err(usage("--max-abs and --sigma2 must be given with equal lengths when --value is absent"));
        }
        let params = SchemeParams::simple(8, 1, 8)?;
        for (&m, &s2) in cfg.max_abs.iter().zip(&cfg.sigma2) {
            let stats = ValueStats { max_abs: m, sigma2: s2, ..ValueStats::zero() };
            for &p in &ps {
                rows.push(bound_row(theorem, p, &stats, &params, &policy)?);
            }
        }
    }
    let csv = csv_text(|out| write_bound_csv(&rows, out))?;
    Ok(Outcome { csv, summary: json!({ "theorem": theorem.name(), "rows": rows.len() }), failed: false })
}

fn sweep(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let theorem = cfg.theorem.as_deref().unwrap_or("simple");
    if theorem == "query" {
        let mut grid = QuerySweepGrid::standard()?;
        grid.base_seed = seed;
        if let Mode::MonteCarlo { samples, .. } = &mut grid.mode {
            *samples = cfg.samples.unwrap_or(*samples);
        }
        let rows = run_query_sweep(&grid)?;
        let csv = csv_text(|out| write_query_sweep_csv(&rows, out))?;
        return Ok(Outcome { csv, summary: json!({ "theorem": "query", "rows": rows.len(), "grid": to_value(&grid)? }), failed: false });
    }
    let theorem = parse_theorem(theorem)?;
    let mut grid = match cfg.grid.as_deref().unwrap_or("std") {
        "std" | "standard" => SweepGrid::standard(),
        "small" => SweepGrid::small(),
        other => return Err(usage(format!("unknown --grid `{other}` (std, small)"))),
    };
    grid.base_seed = seed;
    if let Some(s) = cfg.samples {
        grid.samples = s;
    }
    let rows = run_bound_sweep(theorem, &grid)?;
    let max_ratio = rows.iter().map(|r| r.shape_ratio).fold(0.0, f64::max);
    let csv = csv_text(|out| write_sweep_csv(&rows, out))?;
    Ok(Outcome {
        csv,
        summary: json!({ "theorem": theorem.name(), "rows": rows.len(), "max_shape_ratio": max_ratio, "grid": to_value(&grid)? }),
        failed: false,
    })
}

fn lowerbound(cfg: &RunConfig) -> Result<Outcome> {
    let spec = parse_scheme(required(&cfg.scheme, "--scheme")?)?;
    if spec.kind != SchemeKind::Simple {
        return Err(usage("lowerbound takes a simple scheme"));
    }
    let ps = if cfg.ps.is_empty() { vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0] } else { cfg.ps.clone() };
    let rows = lower_bound_study(spec.params, &ps, &ConstantPolicy::default())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p", "gamma_p", "side", "support", "M", "sigma2", "pnorm", "shape", "ratio"])
        .map_err(Error::from)?;
    for r in &rows {
        w.write_record([
            fmt_f64(r.p),
            fmt_f64(r.gamma_p),
            r.side.to_string(),
            r.support.to_string(),
            fmt_f64(r.max_abs),
            fmt_f64(r.sigma2),
            fmt_f64(r.pnorm),
            fmt_f64(r.shape),
            fmt_f64(r.ratio),
        ])
        .map_err(Error::from)?;
    }
    let csv = finish(w)?;
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(Outcome { csv, summary: json!({ "scheme": spec.descriptor(), "min_ratio": min_ratio }), failed: false })
}

fn minhash(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let standard = KPartitionConfig::standard()?;
    let scheme = match &cfg.scheme {
        Some(s) => parse_scheme(s)?,
        None => standard.scheme,
    };
    let config = KPartitionConfig {
        n_balls: cfg.n_balls.unwrap_or(standard.n_balls),
        red_fraction: cfg.red_fraction.unwrap_or(standard.red_fraction),
        k_bins: cfg.k_bins.unwrap_or(standard.k_bins),
        scheme,
        trials: cfg.trials.unwrap_or(standard.trials),
        base_seed: seed,
        coloring: Coloring::Prefix,
        enforce_bin_limit: cfg.enforce_bin_limit,
    };
    let mut reports: Vec<KPartitionReport> = Vec::new();
    if cfg.oracle {
        reports.push(fully_random_oracle(&config)?);
    }
    reports.push(minhash_kpartition(&config)?);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scheme", "trial", "seed", "estimate", "error", "nonempty_bins", "mask_count"])
        .map_err(Error::from)?;
    for r in &reports {
        for t in &r.trials {
            w.write_record([
                r.scheme.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                fmt_f64(t.estimate),
                fmt_f64(t.error),
                t.nonempty_bins.to_string(),
                t.mask_count.to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    let csv = finish(w)?;
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "scheme": r.scheme,
                "mask_bits": r.mask_bits,
                "expected_mask_count": r.expected_mask_count,
                "mask_tolerance": r.mask_tolerance,
                "error_threshold": r.error_threshold,
                "within_error": r.within_error,
                "within_mask": r.within_mask,
                "mean_error": r.mean_error,
                "rms_error": r.rms_error,
            })
        })
        .collect();
    Ok(Outcome { csv, summary: json!({ "reports": summary, "seed": seed }), failed: false })
}

fn bench(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let specs: Vec<SchemeSpec> = match &cfg.scheme {
        Some(s) => vec![parse_scheme(s)?],
        None => vec![SchemeSpec::simple(8, 4, 32)?, SchemeSpec::mixed(8, 4, 1, 32)?],
    };
    let n = cfg.n_keys.unwrap_or(1 << 20);
    let reports = specs.iter().map(|s| throughput_bench(s, n, seed)).collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scheme", "n_keys", "first_ns_per_key", "repeat_ns_per_key", "checksum", "table_bytes"])
        .map_err(Error::from)?;
    for r in &reports {
        w.write_record([
            r.scheme.clone(),
            r.n_keys.to_string(),
            fmt_f64(r.first_ns_per_key),
            fmt_f64(r.repeat_ns_per_key),
            r.checksum.to_string(),
            r.table_bytes.to_string(),
        ])
        .map_err(Error::from)?;
    }
    let csv = finish(w)?;
    let ratio = if reports.len() == 2 { Some(reports[1].repeat_ns_per_key / reports[0].repeat_ns_per_key) } else { None };
    Ok(Outcome { csv, summary: json!({ "reports": to_value(&reports)?, "mixed_over_simple": ratio }), failed: false })
}
