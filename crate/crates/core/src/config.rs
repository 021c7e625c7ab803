//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzz::ADAPTERS;
use crate::mutation::FinderConfig;
use crate::vm::ExecLimits;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub seed_instances: usize,
    pub seed_budget: u64,
    pub phase2_budget: u64,
    pub long_singleton_budget: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            seed_instances: 5,
            seed_budget: 1_000_000,
            phase2_budget: 50_000,
            long_singleton_budget: 500_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub subjects: Vec<PathBuf>,
    pub fuzzers: Vec<String>,
    pub rng_seed: u64,
    pub workers: usize,
    pub output: PathBuf,
    pub batch_size: usize,
    /// Payloads the finder enumerates per (site, operator).
    pub max_payloads: usize,
    /// Primary sanitizer mode of the run.
    pub sanitize: bool,
    /// Also evaluate the other sanitizer mode on the same seeds and
    /// supermutants.
    pub compare_sanitize: bool,
    pub differential_output: bool,
    /// Optional token file, one token per line.
    pub dictionary: Option<PathBuf>,
    pub budget: Budgets,
    pub limits: ExecLimits,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            subjects: Vec::new(),
            fuzzers: ADAPTERS.iter().map(|s| s.to_string()).collect(),
            rng_seed: 1,
            workers: 4,
            output: PathBuf::from("out"),
            batch_size: crate::scheduler::DEFAULT_BATCH_SIZE,
            max_payloads: 1,
            sanitize: false,
            compare_sanitize: false,
            differential_output: false,
            dictionary: None,
            budget: Budgets::default(),
            limits: ExecLimits::default(),
        }
    }
}

impl BenchConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: BenchConfig = toml::from_str(text)?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        cfg.subjects = cfg.subjects.iter().map(|p| resolve(p)).collect();
        cfg.output = resolve(&cfg.output);
        cfg.dictionary = cfg.dictionary.as_deref().map(resolve);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_toml(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.subjects.is_empty() {
            return bad("no subjects".into());
        }
        for s in &self.subjects {
            if !s.is_file() {
                return bad(format!("subject {} does not exist", s.display()));
            }
        }
        if let Some(d) = &self.dictionary {
            if !d.is_file() {
                return bad(format!("dictionary {} does not exist", d.display()));
            }
        }
        if self.fuzzers.is_empty() {
            return bad("no fuzzers".into());
        }
        for f in &self.fuzzers {
            if !ADAPTERS.contains(&f.as_str()) {
                return bad(format!("unknown fuzzer '{f}'"));
            }
        }
        let mut names = self.fuzzers.clone();
        names.sort();
        names.dedup();
        if names.len() != self.fuzzers.len() {
            return bad("duplicate fuzzer".into());
        }
        let b = &self.budget;
        if b.seed_instances == 0
            || b.seed_budget == 0
            || b.phase2_budget == 0
            || b.long_singleton_budget == 0
        {
            return bad("budgets must be positive".into());
        }
        if self.batch_size == 0 || self.workers == 0 || self.max_payloads == 0 {
            return bad("batch_size, workers and max_payloads must be positive".into());
        }
        self.limits.validate().or_else(|e| bad(e.to_string()))
    }

    pub fn finder(&self) -> FinderConfig {
        FinderConfig {
            operators: None,
            max_payloads: self.max_payloads,
        }
    }

    pub fn dictionary_tokens(&self) -> Result<Vec<Vec<u8>>, ConfigError> {
        let Some(path) = &self.dictionary else {
            return Ok(Vec::new());
        };
        let text = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(text
            .split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| l.to_vec())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_documented_values() {
        let cfg = BenchConfig::from_toml("subjects = [\"a.mir\"]", Path::new("/base")).unwrap();
        assert_eq!(cfg.batch_size, 100);
        assert_eq!(cfg.max_payloads, 1);
        assert_eq!(cfg.budget.seed_instances, 5);
        assert_eq!(cfg.budget.seed_budget, 1_000_000);
        assert_eq!(cfg.budget.phase2_budget, 50_000);
        assert_eq!(cfg.budget.long_singleton_budget, 500_000);
        assert_eq!(cfg.subjects, vec![PathBuf::from("/base/a.mir")]);
        assert_eq!(cfg.fuzzers, vec!["random", "covguided"]);
    }

    #[test]
    fn nested_tables_parse() {
        let text = "subjects = []\nrng_seed = 9\n[budget]\nphase2_budget = 10\n[limits]\nmax_steps = 5\nmax_heap = 64\nmax_output = 8\n";
        let cfg = BenchConfig::from_toml(text, Path::new(".")).unwrap();
        assert_eq!(cfg.rng_seed, 9);
        assert_eq!(cfg.budget.phase2_budget, 10);
        assert_eq!(cfg.budget.seed_budget, 1_000_000);
        assert_eq!(cfg.limits.max_steps, 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(BenchConfig::from_toml("subject = []", Path::new(".")).is_err());
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let subject = dir.path().join("s.mir");
        std::fs::write(&subject, "fn main { ret 0 }").unwrap();
        let mut cfg = BenchConfig {
            subjects: vec![subject],
            ..BenchConfig::default()
        };
        assert!(cfg.validate().is_ok());
        cfg.fuzzers.push("afl".into());
        assert!(cfg.validate().is_err());
        cfg.fuzzers.pop();
        cfg.budget.phase2_budget = 0;
        assert!(cfg.validate().is_err());
        cfg.budget.phase2_budget = 1;
        cfg.subjects.push(dir.path().join("missing.mir"));
        assert!(cfg.validate().is_err());
    }
}
