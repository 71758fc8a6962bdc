//! Plain `key = value` run configuration with `[section]` headers.
//!
//! Every accepted key is listed in [`SCHEMA`] with its default. Keys before
//! the first header belong to `[run]`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

/// Bad configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! bail_config {
    ($($arg:tt)*) => { return Err($crate::config::ConfigError(format!($($arg)*)).into()) };
}
pub(crate) use bail_config;

/// (section, key, default). An empty default means "unset".
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("run", "seed", "1"),
    ("run", "out", "out"),
    ("bench", "dim", "16"),
    ("bench", "num_blobs", "4"),
    ("bench", "classes_per_blob", "5"),
    ("bench", "num_classes", ""),
    ("bench", "train_per_class", "200"),
    ("bench", "test_per_class", "50"),
    ("bench", "blob_center_radius", "8"),
    ("bench", "class_offset_scale", "1.5"),
    ("bench", "class_std", "0.5"),
    ("bench", "ood", "distant_blobs"),
    ("bench", "ood_count", "8"),
    ("bench", "ood_radius", "8"),
    ("bench", "ood_r_min", "14"),
    ("bench", "ood_r_max", "16"),
    ("bench", "n_ood", "1000"),
    ("bench", "format", "binary"),
    ("group", "strategy", "cluster"),
    ("group", "k", "4"),
    ("group", "features", ""),
    ("group", "taxonomy", ""),
    ("group", "kmeans_restarts", "1"),
    ("train", "features", ""),
    ("train", "partition", ""),
    ("train", "steps", "2000"),
    ("train", "batch_size", "128"),
    ("train", "base_lr", "0.003"),
    ("train", "momentum", "0.9"),
    ("train", "warmup_steps", "50"),
    ("train", "decay_milestones", "0.3,0.6,0.9"),
    ("train", "decay_factor", "10"),
    ("train", "weight_decay", "0"),
    ("train", "log_every", "50"),
    ("score", "checkpoint", ""),
    ("score", "methods", "all"),
    ("score", "inputs", ""),
    ("score", "train_features", ""),
    ("score", "partition", ""),
    ("score", "energy_temperature", "1"),
    ("score", "odin_temperature", "1000"),
    ("score", "odin_epsilon", "0"),
    ("score", "mahalanobis_ridge", "relative:1e-6"),
    ("eval", "in_scores", ""),
    ("eval", "out_scores", ""),
    ("ablate", "experiment", "scaling"),
    ("ablate", "class_counts", "10,40,160"),
    ("ablate", "regime", "fixed_per_class"),
    ("ablate", "budget", ""),
    ("ablate", "methods", "mos,msp"),
    ("ablate", "seeds", "1,2,3,4,5"),
    ("ablate", "k_values", "2,4,8"),
    ("ablate", "strategies", "cluster,random"),
    ("ablate", "taxonomies", ""),
];

fn known(section: &str, key: &str) -> bool {
    SCHEMA.iter().any(|&(s, k, _)| s == section && k == key)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = SCHEMA.iter().map(|&(s, k, d)| ((s.to_string(), k.to_string()), d.to_string())).collect();
        Self { values }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section = "run".to_string();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(ConfigError(format!("line {}: unterminated section header", n + 1)));
                };
                section = name.trim().to_string();
                if !SCHEMA.iter().any(|&(s, _, _)| s == section) {
                    return Err(ConfigError(format!("line {}: unknown section [{section}]", n + 1)));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected key = value", n + 1)));
            };
            cfg.set(&section, k.trim(), v.trim()).map_err(|e| ConfigError(format!("line {}: {}", n + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        if !known(section, key) {
            return Err(ConfigError(format!("unknown key {section}.{key}")));
        }
        self.values.insert((section.to_string(), key.to_string()), value.to_string());
        Ok(())
    }

    /// `section.key=value`; a bare key means `run.key`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let Some((path, value)) = spec.split_once('=') else {
            return Err(ConfigError(format!("override {spec:?} is not key=value")));
        };
        let (section, key) = path.trim().split_once('.').unwrap_or(("run", path.trim()));
        self.set(section, key, value.trim())
    }

    pub fn raw(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .unwrap_or_else(|| panic!("{section}.{key} missing from schema"))
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(section, key);
        v.parse().map_err(|e| ConfigError(format!("{section}.{key} = {v:?}: {e}")))
    }

    pub fn opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        if self.raw(section, key).is_empty() {
            Ok(None)
        } else {
            self.get(section, key).map(Some)
        }
    }

    pub fn path(&self, section: &str, key: &str) -> Result<PathBuf, ConfigError> {
        match self.raw(section, key) {
            "" => Err(ConfigError(format!("{section}.{key} is required"))),
            v => Ok(PathBuf::from(v)),
        }
    }

    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(section, key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| ConfigError(format!("{section}.{key} item {s:?}: {e}"))))
            .collect()
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.get("run", "seed")
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.raw("run", "out"))
    }

    /// Every key, defaults included, grouped by section in schema order.
    pub fn render(&self) -> String {
        self.render_filtered(|_, _| true)
    }

    fn render_filtered(&self, keep: impl Fn(&str, &str) -> bool) -> String {
        let mut s = String::new();
        let mut current = "";
        for &(section, key, _) in SCHEMA {
            if !keep(section, key) {
                continue;
            }
            if section != current {
                if !s.is_empty() {
                    s.push('\n');
                }
                s.push_str(&format!("[{section}]\n"));
                current = section;
            }
            s.push_str(&format!("{key} = {}\n", self.raw(section, key)));
        }
        s
    }

    /// SHA-256 of the resolved config minus seeds and the output directory.
    pub fn hash_without_seed(&self) -> String {
        let text = self.render_filtered(|s, k| !(s == "run" || (s == "ablate" && k == "seeds")));
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_resolved(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join("config.resolved.ini"), self.render())
    }
}
