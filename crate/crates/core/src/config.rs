//! Experiment configuration: JSON file values overlaid on defaults, with
//! command-line flags applied last.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BandScheme, FrequencyBand};
use crate::index::{DEFAULT_CHECKPOINT_INTERVAL, DEFAULT_SHARD_BUDGET};
use crate::probe::{MockConfig, ModelEndpoint, RetryPolicy};
use crate::prompt::{InstructionMode, TemplateKind, DEFAULT_SYNONYM_CAP};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: Option<String>,
    pub model_name: String,
    pub request_timeout_secs: u64,
    pub max_concurrent_requests: usize,
    pub retries: u32,
    pub initial_backoff_ms: u64,
    /// Defaults to 8 tokens in direct mode and 512 in think mode.
    pub max_tokens: Option<u32>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: None,
            model_name: "mock".to_string(),
            request_timeout_secs: 60,
            max_concurrent_requests: 8,
            retries: 3,
            initial_backoff_ms: 1000,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Text files, gzip files or directories to index.
    pub corpus: Vec<PathBuf>,
    /// Defaults to `<out>/index`.
    pub index_dir: Option<PathBuf>,
    /// `entity_id<TAB>alias` rows.
    pub entities: Option<PathBuf>,
    /// `subject<TAB>relation<TAB>object` rows.
    pub triples: Option<PathBuf>,
    /// JSON relation list; the four built-in relations when absent.
    pub relations: Option<PathBuf>,
    /// Restricts the run to these relation ids.
    pub relation_filter: Vec<String>,
    pub low_bands: Vec<FrequencyBand>,
    pub high_threshold: u64,
    pub templates: Vec<TemplateKind>,
    pub mode: InstructionMode,
    /// Replacement system instructions per template kind.
    pub instructions: BTreeMap<TemplateKind, String>,
    pub synonym_cap: usize,
    pub seed: u64,
    pub short_circuit: bool,
    pub endpoint: EndpointConfig,
    pub use_mock: bool,
    pub mock: MockConfig,
    pub checkpoint_interval: usize,
    pub shard_budget: usize,
    /// Cells with fewer triples are flagged in the report.
    pub min_cell_size: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: Vec::new(),
            index_dir: None,
            entities: None,
            triples: None,
            relations: None,
            relation_filter: Vec::new(),
            low_bands: FrequencyBand::LOW.to_vec(),
            high_threshold: BandScheme::default().high_threshold,
            templates: vec![TemplateKind::Question, TemplateKind::Statement],
            mode: InstructionMode::Direct,
            instructions: BTreeMap::new(),
            synonym_cap: DEFAULT_SYNONYM_CAP,
            seed: 0,
            short_circuit: true,
            endpoint: EndpointConfig::default(),
            use_mock: false,
            mock: MockConfig::default(),
            checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL,
            shard_budget: DEFAULT_SHARD_BUDGET,
            min_cell_size: 30,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads `path` if given, otherwise starts from defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.high_threshold < BandScheme::MIN_HIGH_THRESHOLD {
            return Err(ConfigError::Invalid(format!(
                "high_threshold must be at least {} (got {})",
                BandScheme::MIN_HIGH_THRESHOLD,
                self.high_threshold
            )));
        }
        if self.low_bands.iter().any(|b| !b.is_low()) {
            return Err(ConfigError::Invalid("low_bands may not contain HIGH".into()));
        }
        if self.synonym_cap == 0 {
            return Err(ConfigError::Invalid("synonym_cap must be positive".into()));
        }
        if self.templates.is_empty() {
            return Err(ConfigError::Invalid("at least one template kind is required".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(ConfigError::Invalid("checkpoint_interval must be positive".into()));
        }
        if self.endpoint.max_concurrent_requests == 0 {
            return Err(ConfigError::Invalid("max_concurrent_requests must be positive".into()));
        }
        for p in [self.mock.p_first_high, self.mock.p_first_low] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("mock probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn scheme(&self) -> BandScheme {
        BandScheme {
            high_threshold: self.high_threshold,
        }
    }

    pub fn index_dir(&self) -> PathBuf {
        self.index_dir.clone().unwrap_or_else(|| self.out.join("index"))
    }

    pub fn frequencies_path(&self) -> PathBuf {
        self.out.join("frequencies.tsv")
    }

    pub fn alias_cache_path(&self) -> PathBuf {
        self.out.join("alias_cache.jsonl")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.out.join("datasets")
    }

    pub fn outcomes_dir(&self) -> PathBuf {
        self.out.join("outcomes")
    }

    pub fn response_cache_path(&self) -> PathBuf {
        self.out.join("cache").join("responses.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    /// Mock settings with the experiment seed and threshold applied.
    pub fn mock_config(&self) -> MockConfig {
        MockConfig {
            seed: self.seed,
            high_threshold: self.high_threshold,
            ..self.mock.clone()
        }
    }

    /// Endpoint settings; fails when no base URL is configured.
    pub fn model_endpoint(&self) -> Result<ModelEndpoint, ConfigError> {
        let url = self
            .endpoint
            .base_url
            .as_deref()
            .filter(|u| !u.trim().is_empty())
            .ok_or_else(|| ConfigError::Invalid("no endpoint URL configured; pass --endpoint or --mock".into()))?;
        let mut e = ModelEndpoint::new(url, self.endpoint.model_name.clone());
        e.request_timeout = Duration::from_secs(self.endpoint.request_timeout_secs);
        e.max_concurrent_requests = self.endpoint.max_concurrent_requests;
        e.retry = RetryPolicy {
            retries: self.endpoint.retries,
            initial_backoff: Duration::from_millis(self.endpoint.initial_backoff_ms),
        };
        e.api_token = std::env::var("API_TOKEN").ok().filter(|t| !t.is_empty());
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_overlay_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"seed": 7, "low_bands": ["B0_1K"], "templates": ["statement"], "endpoint": {"max_tokens": 4}}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.low_bands, vec![FrequencyBand::B0To1K]);
        assert_eq!(c.templates, vec![TemplateKind::Statement]);
        assert_eq!(c.endpoint.max_tokens, Some(4));
        assert_eq!(c.endpoint.retries, 3);
        assert_eq!(c.high_threshold, 100_000);
        assert_eq!(c.synonym_cap, 6);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"sede": 7}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn threshold_must_clear_low_bands() {
        let c = ExperimentConfig {
            high_threshold: 10_001,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            high_threshold: 10_002,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn endpoint_requires_url() {
        let c = ExperimentConfig::default();
        assert!(matches!(c.model_endpoint(), Err(ConfigError::Invalid(_))));
        let mut c = ExperimentConfig::default();
        c.endpoint.base_url = Some("http://localhost:8000".into());
        c.endpoint.retries = 1;
        let e = c.model_endpoint().unwrap();
        assert_eq!(e.retry.retries, 1);
        assert_eq!(e.request_timeout, Duration::from_secs(60));
    }
}
