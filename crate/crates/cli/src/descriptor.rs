//! Scheme, value-function, key-list, seed and p-list descriptor strings.

use std::collections::BTreeMap;
use std::path::PathBuf;

use tabhash::experiments::KeySetSpec;
use tabhash::moments::Observable;
use tabhash::numeric::splitmix64;
use tabhash::{Error, Key, QueryValueFunction, Result, SchemeParams, SchemeSpec, ValueFunction};

/// Largest universe `keys=all` will enumerate.
pub const MAX_ALL_KEYS: u64 = 1 << 16;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParams(msg.into())
}

/// `name:a=1,b=2` into the name and its fields. Fields may not repeat.
fn split_descriptor(s: &str) -> Result<(&str, BTreeMap<&str, &str>)> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut fields = BTreeMap::new();
    for part in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("descriptor `{s}`: field `{part}` is not key=value")))?;
        if fields.insert(k.trim(), v.trim()).is_some() {
            return Err(usage(format!("descriptor `{s}`: field `{k}` repeats")));
        }
    }
    Ok((name.trim(), fields))
}

fn take<'a>(fields: &mut BTreeMap<&str, &'a str>, key: &str, desc: &str) -> Result<&'a str> {
    fields.remove(key).ok_or_else(|| usage(format!("descriptor `{desc}`: missing `{key}=`")))
}

fn no_leftovers(fields: &BTreeMap<&str, &str>, desc: &str) -> Result<()> {
    match fields.keys().next() {
        Some(k) => Err(usage(format!("descriptor `{desc}`: unknown field `{k}`"))),
        None => Ok(()),
    }
}

/// Decimal or `0x`-prefixed hexadecimal.
pub fn parse_u64(s: &str) -> Result<u64> {
    let s = s.trim();
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|e| usage(format!("`{s}` is not an unsigned integer: {e}")))
}

fn parse_u32(s: &str, desc: &str) -> Result<u32> {
    let v = parse_u64(s)?;
    u32::try_from(v).map_err(|_| usage(format!("descriptor `{desc}`: {v} is too large")))
}

/// `simple:k=8,c=4,l=16`, `mixed:k=8,c=4,d=1,l=16` or `random:k=8,c=4,l=16`.
pub fn parse_scheme(s: &str) -> Result<SchemeSpec> {
    let (name, mut f) = split_descriptor(s)?;
    let k = parse_u32(take(&mut f, "k", s)?, s)?;
    let c = parse_u32(take(&mut f, "c", s)?, s)?;
    let l = parse_u32(take(&mut f, "l", s)?, s)?;
    let spec = match name {
        "simple" => SchemeSpec::simple(k, c, l),
        "mixed" => {
            let d = parse_u32(take(&mut f, "d", s)?, s)?;
            SchemeSpec::mixed(k, c, d, l)
        }
        "random" | "fully_random" => SchemeSpec::fully_random(k, c, l),
        other => return Err(usage(format!("unknown scheme `{other}` (simple, mixed, random)"))),
    }?;
    no_leftovers(&f, s)?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSpec {
    Uniform,
    /// Seeded weights uniform in `[−1, 1)`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySpec {
    All,
    First(u64),
    Random(u64),
    Grid(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueDescriptor {
    Bin { target: u64, weights: WeightSpec, keys: KeySpec },
    Threshold { l: u64, weights: WeightSpec, keys: KeySpec },
    /// Collision counting against a query key.
    Collision { query: u64, weights: WeightSpec, keys: KeySpec },
    File(PathBuf),
}

fn parse_weights(f: &mut BTreeMap<&str, &str>, desc: &str) -> Result<WeightSpec> {
    match f.remove("w").unwrap_or("uniform") {
        "uniform" => Ok(WeightSpec::Uniform),
        "random" => Ok(WeightSpec::Random),
        other => Err(usage(format!("descriptor `{desc}`: unknown weights `{other}` (uniform, random)"))),
    }
}

fn parse_key_spec(f: &mut BTreeMap<&str, &str>, desc: &str) -> Result<KeySpec> {
    let raw = f.remove("keys").unwrap_or("all");
    if raw == "all" {
        return Ok(KeySpec::All);
    }
    let (kind, n) = raw
        .split_once(':')
        .ok_or_else(|| usage(format!("descriptor `{desc}`: keys must be all, first:N, random:N or grid:N")))?;
    let n = parse_u64(n)?;
    match kind {
        "first" => Ok(KeySpec::First(n)),
        "random" => Ok(KeySpec::Random(n)),
        "grid" => Ok(KeySpec::Grid(n)),
        other => Err(usage(format!("descriptor `{desc}`: unknown key set `{other}`"))),
    }
}

/// `bin:target=0,w=uniform`, `threshold:l=64,w=uniform`, `collision:q=0,w=uniform`, or
/// `file:<path>`. The bin, threshold and collision forms take an optional
/// `keys=all|first:N|random:N|grid:N` (default `all`).
pub fn parse_value(s: &str) -> Result<ValueDescriptor> {
    if let Some(path) = s.strip_prefix("file:") {
        if path.is_empty() {
            return Err(usage("descriptor `file:` needs a path"));
        }
        return Ok(ValueDescriptor::File(PathBuf::from(path)));
    }
    let (name, mut f) = split_descriptor(s)?;
    let v = match name {
        "bin" => {
            let target = parse_u64(take(&mut f, "target", s)?)?;
            ValueDescriptor::Bin { target, weights: parse_weights(&mut f, s)?, keys: parse_key_spec(&mut f, s)? }
        }
        "threshold" => {
            let l = parse_u64(take(&mut f, "l", s)?)?;
            ValueDescriptor::Threshold { l, weights: parse_weights(&mut f, s)?, keys: parse_key_spec(&mut f, s)? }
        }
        "collision" => {
            let query = parse_u64(take(&mut f, "q", s)?)?;
            ValueDescriptor::Collision { query, weights: parse_weights(&mut f, s)?, keys: parse_key_spec(&mut f, s)? }
        }
        other => return Err(usage(format!("unknown value function `{other}` (bin, threshold, collision, file)"))),
    };
    no_leftovers(&f, s)?;
    Ok(v)
}

fn support(keys: KeySpec, params: &SchemeParams, seed: u64) -> Result<Vec<Key>> {
    match keys {
        KeySpec::All => {
            if params.universe_size() > MAX_ALL_KEYS as u128 {
                return Err(usage(format!(
                    "keys=all would enumerate {} keys; pick first:N, random:N or grid:N",
                    params.universe_size()
                )));
            }
            params.universe(MAX_ALL_KEYS)
        }
        KeySpec::First(n) => {
            if n as u128 > params.universe_size() {
                return Err(usage(format!("first:{n} exceeds the universe of {}", params.universe_size())));
            }
            Ok((0..n).map(Key).collect())
        }
        KeySpec::Random(n) => KeySetSpec::Random { size: n }.build(params, seed),
        KeySpec::Grid(n) => KeySetSpec::Grid { target: n }.build(params, seed),
    }
}

fn weight(w: WeightSpec, key: Key, seed: u64) -> f64 {
    match w {
        WeightSpec::Uniform => 1.0,
        WeightSpec::Random => {
            let bits = splitmix64(seed ^ splitmix64(key.0)) >> 11;
            bits as f64 / (1u64 << 52) as f64 - 1.0
        }
    }
}

impl ValueDescriptor {
    /// Builds the observable for `params`; `seed` drives random key sets and weights.
    pub fn build(&self, params: &SchemeParams, seed: u64) -> Result<Observable> {
        let m = params.range();
        let weighted = |keys: KeySpec, w: WeightSpec| -> Result<Vec<(Key, f64)>> {
            Ok(support(keys, params, seed)?.into_iter().map(|k| (k, weight(w, k, seed))).collect())
        };
        Ok(match self {
            ValueDescriptor::Bin { target, weights, keys } => {
                Observable::Plain(ValueFunction::single_bin(weighted(*keys, *weights)?, *target, m)?)
            }
            ValueDescriptor::Threshold { l, weights, keys } => {
                Observable::Plain(ValueFunction::threshold(weighted(*keys, *weights)?, *l, m)?)
            }
            ValueDescriptor::Collision { query, weights, keys } => {
                let q = params.key(*query)?;
                Observable::Query(QueryValueFunction::collision(weighted(*keys, *weights)?, q, m)?)
            }
            ValueDescriptor::File(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                Observable::Plain(ValueFunction::from_csv(file, m)?)
            }
        })
    }
}

/// `a..b` (half-open) or a comma-separated list, each entry decimal or `0x` hex.
pub fn parse_key_list(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse_u64(a)?, parse_u64(b)?);
        if b < a {
            return Err(usage(format!("key range `{s}` is empty")));
        }
        return Ok((a..b).collect());
    }
    s.split(',').filter(|x| !x.trim().is_empty()).map(parse_u64).collect()
}

/// Comma-separated moment orders, each at least 2.
pub fn parse_p_list(s: &str) -> Result<Vec<f64>> {
    let ps: Vec<f64> = s
        .split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<f64>().map_err(|e| usage(format!("`{x}` is not a number: {e}"))))
        .collect::<Result<_>>()?;
    if ps.is_empty() {
        return Err(usage("empty p list"));
    }
    if let Some(p) = ps.iter().find(|p| !p.is_finite() || **p < 2.0) {
        return Err(usage(format!("moment order {p} must be finite and >= 2")));
    }
    Ok(ps)
}

/// Comma-separated finite reals.
pub fn parse_real_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| match x.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(usage(format!("`{x}` is not a finite number"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tabhash::SchemeKind;

    #[test]
    fn schemes() {
        let s = parse_scheme("simple:k=8,c=4,l=16").unwrap();
        assert_eq!((s.kind, s.params.char_bits, s.params.num_chars, s.params.range_bits), (SchemeKind::Simple, 8, 4, 16));
        let s = parse_scheme("mixed:k=8,c=4,d=1,l=16").unwrap();
        assert_eq!((s.kind, s.params.derived_chars), (SchemeKind::Mixed, 1));
        assert_eq!(parse_scheme(&s.descriptor()).unwrap(), s);
        let r = parse_scheme("random:k=4,c=2,l=3").unwrap();
        assert_eq!(parse_scheme(&r.descriptor()).unwrap(), r);
        for bad in ["simple:k=8,c=4", "mixed:k=8,c=4,l=16", "cubic:k=1,c=1,l=1", "simple:k=8,c=4,l=16,z=1", "simple:k=8,k=8,c=1,l=1"] {
            assert!(parse_scheme(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn values() {
        assert_eq!(
            parse_value("bin:target=0,w=uniform").unwrap(),
            ValueDescriptor::Bin { target: 0, weights: WeightSpec::Uniform, keys: KeySpec::All }
        );
        assert_eq!(
            parse_value("threshold:l=64,w=random,keys=random:100").unwrap(),
            ValueDescriptor::Threshold { l: 64, weights: WeightSpec::Random, keys: KeySpec::Random(100) }
        );
        assert_eq!(parse_value("file:/tmp/v.csv").unwrap(), ValueDescriptor::File("/tmp/v.csv".into()));
        assert!(parse_value("bin:w=uniform").is_err());
        assert!(parse_value("bin:target=0,keys=some").is_err());
    }

    #[test]
    fn build_bin_over_universe() {
        let spec = parse_scheme("simple:k=4,c=2,l=4").unwrap();
        let obs = parse_value("bin:target=0,w=uniform").unwrap().build(&spec.params, 0).unwrap();
        match obs {
            Observable::Plain(v) => assert_eq!(v.len(), 256),
            _ => panic!("expected a plain observable"),
        }
        let big = parse_scheme("simple:k=8,c=4,l=16").unwrap();
        assert!(parse_value("bin:target=0").unwrap().build(&big.params, 0).is_err());
        assert!(parse_value("bin:target=0,keys=random:50").unwrap().build(&big.params, 0).is_ok());
    }

    #[test]
    fn random_weights_in_range_and_seeded() {
        for k in 0..1000 {
            let w = weight(WeightSpec::Random, Key(k), 5);
            assert!((-1.0..1.0).contains(&w));
            assert_eq!(w, weight(WeightSpec::Random, Key(k), 5));
        }
    }

    #[test]
    fn lists() {
        assert_eq!(parse_key_list("0..4").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_key_list("1,0x10, 7").unwrap(), vec![1, 16, 7]);
        assert_eq!(parse_p_list("2,4,8").unwrap(), vec![2.0, 4.0, 8.0]);
        assert!(parse_p_list("1,2").is_err());
        assert!(parse_p_list("").is_err());
        assert_eq!(parse_u64("0xff").unwrap(), 255);
        assert!(parse_u64("-3").is_err());
    }
}
