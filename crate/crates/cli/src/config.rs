//! The resolved run configuration: loadable from TOML or JSON, emitted for replay, and hashed.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use tabhash::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Hash,
    Moments,
    Bounds,
    Sweep,
    Lowerbound,
    Minhash,
    Bench,
    Selftest,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Hash => "hash",
            CommandKind::Moments => "moments",
            CommandKind::Bounds => "bounds",
            CommandKind::Sweep => "sweep",
            CommandKind::Lowerbound => "lowerbound",
            CommandKind::Minhash => "minhash",
            CommandKind::Bench => "bench",
            CommandKind::Selftest => "selftest",
        }
    }
}

/// Seeds are written as `0x`-hex strings (TOML integers are signed) and read from either an
/// integer or a decimal/hex string.
mod seed_format {
    use super::*;

    pub fn serialize<S: Serializer>(seed: &Option<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match seed {
            Some(v) => s.serialize_str(&format!("{v:#018x}")),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<u64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Some(v)),
            Raw::Str(s) => crate::descriptor::parse_u64(&s).map(Some).map_err(serde::de::Error::custom),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Every field a command may use. Fields a command does not use stay unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub max_abs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_balls: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub red_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_bins: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub enforce_bin_limit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_keys: Option<u64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub quick: bool,
    /// Test hook for the selftest negative control.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<String>,
    /// Unset means the command's own default seed.
    #[serde(with = "seed_format", default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn new(command: CommandKind) -> Self {
        RunConfig {
            command,
            scheme: None,
            value: None,
            keys: None,
            ps: Vec::new(),
            mode: None,
            samples: None,
            sign: None,
            theorem: None,
            grid: None,
            max_abs: Vec::new(),
            sigma2: Vec::new(),
            n_balls: None,
            red_fraction: None,
            k_bins: None,
            trials: None,
            oracle: false,
            enforce_bin_limit: false,
            n_keys: None,
            quick: false,
            inject_fault: None,
            base_seed: None,
            threads: None,
            output: None,
        }
    }

    /// SHA-256 of the canonical JSON form, without `threads` and `output` (neither changes results).
    pub fn hash(&self) -> String {
        let canonical = RunConfig { threads: None, output: None, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if is_json(path) {
            serde_json::from_str(&text).map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidParams(format!("{}: {e}", path.display())))
        }
    }

    /// Writes TOML, or JSON when the extension is `.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) {
            serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))? + "\n"
        } else {
            toml::to_string(self).map_err(|e| Error::Io(e.to_string()))?
        };
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            scheme: Some("simple:k=4,c=2,l=4".into()),
            value: Some("bin:target=0,w=uniform".into()),
            ps: vec![2.0, 4.0, 8.0],
            mode: Some("exact".into()),
            base_seed: Some(u64::MAX - 3),
            ..RunConfig::new(CommandKind::Moments)
        }
    }

    #[test]
    fn toml_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        for name in ["a.toml", "a.json"] {
            let path = dir.path().join(name);
            c.save(&path).unwrap();
            assert_eq!(RunConfig::load(&path).unwrap(), c);
        }
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let c = sample();
        let d = RunConfig { threads: Some(7), output: Some("x.csv".into()), ..c.clone() };
        assert_eq!(c.hash(), d.hash());
        let e = RunConfig { base_seed: Some(1), ..c.clone() };
        assert_ne!(c.hash(), e.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn seeds_accept_int_and_hex() {
        let c: RunConfig = toml::from_str("command = \"hash\"\nbase_seed = 42\n").unwrap();
        assert_eq!(c.base_seed, Some(42));
        let c: RunConfig = toml::from_str("command = \"hash\"\nbase_seed = \"0x2a\"\n").unwrap();
        assert_eq!(c.base_seed, Some(42));
        assert!(toml::from_str::<RunConfig>("command = \"hash\"\nbogus = 1\n").is_err());
    }
}
