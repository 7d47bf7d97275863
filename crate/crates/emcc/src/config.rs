//! Runtime configuration: a TOML settings file plus a separate seed file.
//!
//! Seeds never appear in the settings file; it only names the key file.
//! That keeps configuration safe to echo into reports and logs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::GreedyParams;
use crate::mcc::MccParams;
use crate::template::seed_identifier;
use crate::transform::{Depth, LengthFraction, TransformError, TransformKey};

/// Environment variable naming the settings file when no flag is given.
pub const CONFIG_ENV: &str = "EMCC_CONFIG";
/// Settings file picked up from the working directory as a last resort.
pub const CONFIG_DEFAULT_NAME: &str = "emcc.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("key file {path}, line {line}: {message}")]
    KeyFile {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no key file configured and no seed given")]
    NoKeySource,
    #[error("key file {path} contains no seeds")]
    EmptyKeyFile { path: PathBuf },
    #[error("no stored seed matches identifier {seed_id:#018x}")]
    UnknownSeed { seed_id: u64 },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Transform settings minus the secret itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeySettings {
    /// Seed file path, resolved relative to the settings file location.
    pub file: Option<PathBuf>,
    /// Retained length fraction, e.g. "1", "2/3", "1/2".
    pub p: LengthFraction,
    /// Encoding threshold.
    pub tau: f64,
    /// Nested-difference depth, 1 to 3.
    pub depth: Depth,
}

impl Default for KeySettings {
    fn default() -> Self {
        KeySettings {
            file: None,
            p: LengthFraction::ONE,
            tau: 0.2,
            depth: Depth::Two,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSettings {
    /// Decision scores at or above this count as a match.
    pub threshold: f64,
}

impl Default for MatchSettings {
    fn default() -> Self {
        MatchSettings { threshold: 0.55 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub det_grid: usize,
    pub histogram_bins: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            det_grid: crate::eval::DEFAULT_DET_GRID,
            histogram_bins: crate::eval::DEFAULT_HISTOGRAM_BINS,
        }
    }
}

/// Everything tunable, grouped the way the TOML file is.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mcc: MccParams,
    pub key: KeySettings,
    pub greedy: GreedyParams,
    #[serde(rename = "match")]
    pub matching: MatchSettings,
    pub eval: EvalSettings,
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Config, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        // a relative key file is relative to the settings file, not the cwd
        if let (Some(file), Some(dir)) = (&config.key.file, origin.parent()) {
            if file.is_relative() && !dir.as_os_str().is_empty() {
                config.key.file = Some(dir.join(file));
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text, path)
    }

    /// Explicit flag, then `EMCC_CONFIG`, then `./emcc.toml` if present.
    pub fn locate(flag: Option<&Path>) -> Option<PathBuf> {
        if let Some(p) = flag {
            return Some(p.to_path_buf());
        }
        if let Some(p) = std::env::var_os(CONFIG_ENV) {
            return Some(PathBuf::from(p));
        }
        let local = PathBuf::from(CONFIG_DEFAULT_NAME);
        local.exists().then_some(local)
    }

    /// Load from the located file, or fall back to defaults when none exists.
    pub fn load_or_default(flag: Option<&Path>) -> Result<Config, ConfigError> {
        match Config::locate(flag) {
            Some(path) => Config::load(&path),
            None => Ok(Config::default()),
        }
    }

    /// Combine the settings with a seed into a usable key.
    pub fn transform_key(&self, seed: u64) -> Result<TransformKey, ConfigError> {
        Ok(TransformKey::new(seed, self.key.p, self.key.tau, self.key.depth)?)
    }

    /// Settings echo for reports: serializable and free of secrets by
    /// construction (the key file path is replaced by a marker).
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serialization");
        if let Some(key) = v.get_mut("key").and_then(|k| k.as_object_mut()) {
            if key.get("file").map(|f| !f.is_null()).unwrap_or(false) {
                key.insert("file".into(), serde_json::Value::String("<external>".into()));
            }
        }
        v
    }
}

/// Ordered list of seeds from a key file. The first seed is the one used
/// for new enrollments; the rest stay resolvable so older templates keep
/// working until re-enrolled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyStore {
    seeds: Vec<u64>,
}

impl KeyStore {
    /// One decimal 64-bit seed per line; `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<KeyStore, ConfigError> {
        let mut seeds = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let seed: u64 = line.parse().map_err(|_| ConfigError::KeyFile {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: format!("expected a decimal 64-bit seed, found {line:?}"),
            })?;
            seeds.push(seed);
        }
        if seeds.is_empty() {
            return Err(ConfigError::EmptyKeyFile {
                path: origin.to_path_buf(),
            });
        }
        Ok(KeyStore { seeds })
    }

    pub fn load(path: &Path) -> Result<KeyStore, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        KeyStore::parse(&text, path)
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Seed used for new enrollments.
    pub fn primary(&self) -> u64 {
        self.seeds[0]
    }

    /// Find the seed whose one-way identifier matches a template header.
    pub fn resolve(&self, seed_id: u64) -> Result<u64, ConfigError> {
        self.seeds
            .iter()
            .copied()
            .find(|&s| seed_identifier(s) == seed_id)
            .ok_or(ConfigError::UnknownSeed { seed_id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let config = Config::default();
        let text = toml::to_string_pretty(&config).unwrap();
        let back = Config::parse(&text, Path::new("emcc.toml")).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let text = "[key]\np = \"2/3\"\ndepth = 3\n\n[match]\nthreshold = 0.6\n";
        let c = Config::parse(text, Path::new("emcc.toml")).unwrap();
        assert_eq!(c.key.p, LengthFraction::TWO_THIRDS);
        assert_eq!(c.key.depth, Depth::Three);
        assert_eq!(c.key.tau, 0.2);
        assert_eq!(c.matching.threshold, 0.6);
        assert_eq!(c.mcc, MccParams::default());
        assert_eq!(c.greedy, GreedyParams::default());
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = Config::parse("[key]\nseed = 42\n", Path::new("emcc.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn bad_depth_and_fraction_rejected() {
        assert!(Config::parse("[key]\ndepth = 4\n", Path::new("x")).is_err());
        assert!(Config::parse("[key]\np = \"1/3\"\n", Path::new("x")).is_err());
        assert!(Config::parse("[key]\np = \"3/2\"\n", Path::new("x")).is_err());
    }

    #[test]
    fn key_file_path_resolved_relative_to_config() {
        let text = "[key]\nfile = \"keys.txt\"\n";
        let c = Config::parse(text, Path::new("/etc/emcc/emcc.toml")).unwrap();
        assert_eq!(c.key.file.as_deref(), Some(Path::new("/etc/emcc/keys.txt")));
        let c = Config::parse("[key]\nfile = \"/abs/keys.txt\"\n", Path::new("/etc/emcc/emcc.toml"))
            .unwrap();
        assert_eq!(c.key.file.as_deref(), Some(Path::new("/abs/keys.txt")));
    }

    #[test]
    fn echo_hides_key_file_location() {
        let c = Config::parse("[key]\nfile = \"secret-dir/keys.txt\"\n", Path::new("emcc.toml"))
            .unwrap();
        let echo = c.echo();
        assert_eq!(echo["key"]["file"], "<external>");
        assert_eq!(echo["match"]["threshold"], 0.55);
        assert!(Config::default().echo()["key"]["file"].is_null());
    }

    #[test]
    fn keystore_parse_resolve() {
        let ks = KeyStore::parse("# enrollment key first\n42\n7 # retired\n", Path::new("k")).unwrap();
        assert_eq!(ks.seeds(), &[42, 7]);
        assert_eq!(ks.primary(), 42);
        assert_eq!(ks.resolve(seed_identifier(7)).unwrap(), 7);
        assert!(matches!(
            ks.resolve(seed_identifier(999)),
            Err(ConfigError::UnknownSeed { .. })
        ));
    }

    #[test]
    fn keystore_rejects_garbage_and_empty() {
        assert!(matches!(
            KeyStore::parse("not-a-seed\n", Path::new("k")),
            Err(ConfigError::KeyFile { line: 1, .. })
        ));
        assert!(matches!(
            KeyStore::parse("# only comments\n", Path::new("k")),
            Err(ConfigError::EmptyKeyFile { .. })
        ));
    }

    #[test]
    fn transform_key_from_settings() {
        let c = Config::parse("[key]\np = \"1/2\"\ntau = 0.25\n", Path::new("x")).unwrap();
        let key = c.transform_key(1234).unwrap();
        assert_eq!(key.seed, 1234);
        assert_eq!(key.p, LengthFraction::HALF);
        assert_eq!(key.tau, 0.25);
        assert_eq!(key.depth, Depth::Two);
    }
}
