//! Command-line front end for the tabhash experiments.
//!
//! Every invocation resolves to a [`RunConfig`]; results are a CSV (stdout or `--out`) plus a JSON
//! summary carrying the config, its hash and the seed.

pub mod commands;
pub mod config;
pub mod descriptor;
pub mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tabhash::{Error, Result};

pub use commands::{execute, Outcome};
pub use config::{CommandKind, RunConfig};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "TABHASH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tabhash", version, about = "Tabulation hashing moment bounds and experiments")]
struct Cli {
    /// Run a saved TOML/JSON config instead of a subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write the resolved config (seed included) for replay.
    #[arg(long, global = true, value_name = "PATH")]
    emit_config: Option<PathBuf>,
    /// Worker threads; TABHASH_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// CSV destination; the JSON summary goes next to it.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Base seed, decimal or 0x-hex.
    #[arg(long, global = true)]
    seed: Option<String>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Hash keys (and optionally sign them) under one scheme.
    Hash {
        #[arg(long)]
        scheme: Option<String>,
        /// `a..b` or a comma list.
        #[arg(long)]
        keys: Option<String>,
        #[arg(long)]
        sign: Option<String>,
    },
    /// Central p-norms of a hash-based sum, exact or Monte Carlo.
    Moments {
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        value: Option<String>,
        #[command(flatten)]
        ps: PArg,
        /// `exact` or `mc`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        sign: Option<String>,
    },
    /// Evaluate the moment bounds for a value function or raw (M, σ²) pairs.
    Bounds {
        #[arg(long)]
        theorem: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        value: Option<String>,
        #[command(flatten)]
        ps: PArg,
        #[arg(long, value_name = "LIST")]
        max_abs: Option<String>,
        #[arg(long, value_name = "LIST")]
        sigma2: Option<String>,
    },
    /// Bound-vs-empirical sweep over a key-set grid.
    Sweep {
        /// `fully_random`, `simple`, `mixed` or `query`.
        #[arg(long)]
        theorem: Option<String>,
        /// `std` or `small`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Exact p-norms of the adversarial lower-bound instance.
    Lowerbound {
        #[arg(long)]
        scheme: Option<String>,
        #[command(flatten)]
        ps: PArg,
    },
    /// k-partition MinHash estimation of a colour fraction.
    Minhash {
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        n_balls: Option<u64>,
        #[arg(long)]
        red_fraction: Option<f64>,
        #[arg(long)]
        k_bins: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        /// Also run the fully random oracle.
        #[arg(long)]
        oracle: bool,
        /// Reject bin counts above |Σ|/(4d ln|Σ|).
        #[arg(long)]
        enforce_bin_limit: bool,
    },
    /// Hashing throughput, simple against mixed by default.
    Bench {
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        n_keys: Option<u64>,
    },
    /// Invariant suite; exit 0 iff every check passes.
    Selftest {
        /// Enumeration-only subset.
        #[arg(long)]
        quick: bool,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Debug, Args)]
struct PArg {
    /// Moment orders, e.g. `2,4,8`.
    #[arg(long = "p", value_name = "LIST")]
    p: Option<String>,
}

impl PArg {
    fn resolve(&self) -> Result<Vec<f64>> {
        self.p.as_deref().map(descriptor::parse_p_list).transpose().map(Option::unwrap_or_default)
    }
}

fn reals(s: &Option<String>, flag: &str) -> Result<Vec<f64>> {
    match s {
        None => Ok(Vec::new()),
        Some(s) => descriptor::parse_real_list(s).map_err(|e| Error::InvalidParams(format!("{flag}: {e}"))),
    }
}

impl Cmd {
    fn into_config(self) -> Result<RunConfig> {
        Ok(match self {
            Cmd::Hash { scheme, keys, sign } => RunConfig { scheme, keys, sign, ..RunConfig::new(CommandKind::Hash) },
            Cmd::Moments { scheme, value, ps, mode, samples, sign } => RunConfig {
                scheme,
                value,
                ps: ps.resolve()?,
                mode,
                samples,
                sign,
                ..RunConfig::new(CommandKind::Moments)
            },
            Cmd::Bounds { theorem, scheme, value, ps, max_abs, sigma2 } => RunConfig {
                theorem,
                scheme,
                value,
                ps: ps.resolve()?,
                max_abs: reals(&max_abs, "--max-abs")?,
                sigma2: reals(&sigma2, "--sigma2")?,
                ..RunConfig::new(CommandKind::Bounds)
            },
            Cmd::Sweep { theorem, grid, samples } => {
                RunConfig { theorem, grid, samples, ..RunConfig::new(CommandKind::Sweep) }
            }
            Cmd::Lowerbound { scheme, ps } => {
                RunConfig { scheme, ps: ps.resolve()?, ..RunConfig::new(CommandKind::Lowerbound) }
            }
            Cmd::Minhash { scheme, n_balls, red_fraction, k_bins, trials, oracle, enforce_bin_limit } => RunConfig {
                scheme,
                n_balls,
                red_fraction,
                k_bins,
                trials,
                oracle,
                enforce_bin_limit,
                ..RunConfig::new(CommandKind::Minhash)
            },
            Cmd::Bench { scheme, n_keys } => RunConfig { scheme, n_keys, ..RunConfig::new(CommandKind::Bench) },
            Cmd::Selftest { quick, inject_fault } => {
                RunConfig { quick, inject_fault, ..RunConfig::new(CommandKind::Selftest) }
            }
        })
    }
}

/// Exit code for an error: 2 usage, 3 budget, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParams(_) | Error::Domain(_) | Error::NotMeanZero { .. } => 2,
        Error::Budget { .. } => 3,
        Error::Io(_) => 1,
    }
}

/// Where the JSON summary for a CSV path goes.
pub fn summary_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        let mut s = out.as_os_str().to_owned();
        s.push(".summary.json");
        PathBuf::from(s)
    } else {
        out.with_extension("json")
    }
}

fn resolve(cli: Cli) -> Result<(RunConfig, Option<PathBuf>)> {
    let mut cfg = match (&cli.config, cli.command) {
        (Some(_), Some(_)) => return Err(Error::InvalidParams("--config cannot be combined with a subcommand".into())),
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(cmd)) => cmd.into_config()?,
        (None, None) => return Err(Error::InvalidParams("missing subcommand (see --help)".into())),
    };
    if let Some(s) = &cli.seed {
        cfg.base_seed = Some(descriptor::parse_u64(s).map_err(|e| Error::InvalidParams(format!("--seed: {e}")))?);
    }
    cfg.base_seed = Some(cfg.base_seed.unwrap_or_else(|| commands::default_seed(cfg.command)));
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let t = v.trim().parse().map_err(|_| Error::InvalidParams(format!("{THREADS_ENV}: not a count: `{v}`")))?;
        cfg.threads = Some(t);
    }
    if cfg.threads == Some(0) {
        return Err(Error::InvalidParams("--threads must be positive".into()));
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.display().to_string());
    }
    if let Some(out) = &cfg.output {
        let dir = Path::new(out).parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !dir.is_dir() {
            return Err(Error::InvalidParams(format!("--out: directory {} does not exist", dir.display())));
        }
    }
    Ok((cfg, cli.emit_config))
}

fn execute_with_threads(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.threads {
        None => execute(cfg),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Io(e.to_string()))?
            .install(|| execute(cfg)),
    }
}

fn run_config(cfg: &RunConfig, emit: Option<&Path>) -> Result<bool> {
    if let Some(path) = emit {
        cfg.save(path)?;
    }
    let start = Instant::now();
    let outcome = execute_with_threads(cfg)?;
    let summary = json!({
        "command": cfg.command.name(),
        "config_hash": cfg.hash(),
        "config": serde_json::to_value(cfg).map_err(|e| Error::Io(e.to_string()))?,
        "seed": format!("{:#018x}", cfg.base_seed.unwrap_or_default()),
        "status": if outcome.failed { "fail" } else { "ok" },
        "wall_time_secs": start.elapsed().as_secs_f64(),
        "result": outcome.summary,
    });
    let summary_text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))? + "\n";
    match &cfg.output {
        Some(out) => {
            let out = Path::new(out);
            std::fs::write(out, &outcome.csv).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
            let sp = summary_path(out);
            std::fs::write(&sp, summary_text).map_err(|e| Error::Io(format!("{}: {e}", sp.display())))?;
        }
        None => {
            std::io::stdout().write_all(outcome.csv.as_bytes())?;
            std::io::stderr().write_all(summary_text.as_bytes())?;
        }
    }
    Ok(outcome.failed)
}

/// Parses `args` (program name first), runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = resolve(cli).and_then(|(cfg, emit)| run_config(&cfg, emit.as_deref()));
    match result {
        Ok(false) => 0,
        Ok(true) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig> {
        let cli = Cli::try_parse_from(std::iter::once("tabhash").chain(args.iter().copied())).unwrap();
        resolve(cli).map(|(c, _)| c)
    }

    #[test]
    fn moments_flags_map_to_config() {
        let c = parse(&[
            "moments", "--scheme", "simple:k=4,c=2,l=4", "--value", "bin:target=0,w=uniform", "--p", "2,4,8", "--mode",
            "exact",
        ])
        .unwrap();
        assert_eq!(c.command, CommandKind::Moments);
        assert_eq!(c.ps, vec![2.0, 4.0, 8.0]);
        assert_eq!(c.mode.as_deref(), Some("exact"));
        assert_eq!(c.base_seed, Some(commands::default_seed(CommandKind::Moments)));
    }

    #[test]
    fn usage_errors() {
        assert!(parse(&["moments", "--p", "2,x"]).unwrap_err().to_string().contains("x"));
        assert!(parse(&["hash", "--out", "/nonexistent/dir/a.csv"]).is_err());
        assert!(parse(&["hash", "--seed", "zz"]).unwrap_err().to_string().contains("--seed"));
        assert!(Cli::try_parse_from(["tabhash", "hash", "--bogus"]).is_err());
        assert_eq!(exit_code(&Error::Budget { needed: 30, limit: 24 }), 3);
        assert_eq!(exit_code(&Error::InvalidParams(String::new())), 2);
    }

    #[test]
    fn summary_path_rules() {
        assert_eq!(summary_path(Path::new("r/a.csv")), PathBuf::from("r/a.json"));
        assert_eq!(summary_path(Path::new("a.json")), PathBuf::from("a.json.summary.json"));
    }
}
