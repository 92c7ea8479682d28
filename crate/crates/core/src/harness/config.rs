use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgi::transport::{CachedTransport, ReqwestTransport, Transport};
use crate::kgi::{
    Federation, KgError, KnowledgeGraph, MemoryKg, MusicBrainzConfig, MusicBrainzKg,
    WikidataConfig, WikidataKg,
};
use crate::llm::HttpBackendConfig;
use crate::search::SearchConfig;

pub const ENV_CACHE_DIR: &str = "KGTRAV_CACHE_DIR";
pub const ENV_USER_AGENT: &str = "KGTRAV_USER_AGENT";
pub const ENV_RUN_DIR: &str = "KGTRAV_RUN_DIR";
pub const ENV_WORKERS: &str = "KGTRAV_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value {value:?} for {name}")]
    Env { name: &'static str, value: String },
    #[error("unknown knowledge graph {0:?} (expected wikidata, musicbrainz or memory:<path>)")]
    UnknownKg(String),
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// A backend named on the command line or in the config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KgSpec {
    Wikidata,
    MusicBrainz,
    /// Triples file loaded into a [`MemoryKg`]; the source tag is the file stem.
    Memory(PathBuf),
}

impl FromStr for KgSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "wikidata" => Ok(KgSpec::Wikidata),
            "musicbrainz" => Ok(KgSpec::MusicBrainz),
            other => match other.strip_prefix("memory:") {
                Some(path) if !path.is_empty() => Ok(KgSpec::Memory(PathBuf::from(path))),
                _ => Err(ConfigError::UnknownKg(s.to_string())),
            },
        }
    }
}

impl fmt::Display for KgSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KgSpec::Wikidata => f.write_str("wikidata"),
            KgSpec::MusicBrainz => f.write_str("musicbrainz"),
            KgSpec::Memory(path) => write!(f, "memory:{}", path.display()),
        }
    }
}

impl Serialize for KgSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KgSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub enabled: bool,
    pub dir: PathBuf,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            dir: PathBuf::from(".kgtrav-cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub workers: usize,
    pub run_dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            run_dir: PathBuf::from("runs"),
        }
    }
}

/// Contents of the TOML config file. Every section is optional.
///
/// ```toml
/// kgs = ["wikidata"]
///
/// [search]
/// k = 3
/// tau = 0.8
///
/// [llm]
/// endpoint = "https://api.example.com/v1/chat/completions"
/// model = "some-model"
///
/// [cache]
/// dir = ".kgtrav-cache"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub kgs: Vec<KgSpec>,
    pub search: SearchConfig,
    pub llm: HttpBackendConfig,
    pub wikidata: WikidataConfig,
    pub musicbrainz: MusicBrainzConfig,
    pub cache: CacheConfig,
    pub eval: EvalConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            kgs: vec![KgSpec::Wikidata],
            search: SearchConfig::default(),
            llm: HttpBackendConfig::default(),
            wikidata: WikidataConfig::default(),
            musicbrainz: MusicBrainzConfig::default(),
            cache: CacheConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// File (if any), then environment overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        config.apply_env()?;
        Ok(config)
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_vars(|name| std::env::var(name).ok())
    }

    /// Environment overrides read through `lookup`.
    pub fn apply_vars(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        use crate::llm::{ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
        if let Some(v) = lookup(ENV_ENDPOINT) {
            self.llm.endpoint = v;
        }
        if let Some(v) = lookup(ENV_API_KEY) {
            self.llm.api_key = Some(v);
        }
        if let Some(v) = lookup(ENV_MODEL) {
            self.llm.model = v;
        }
        if let Some(v) = lookup(ENV_CACHE_DIR) {
            self.cache.dir = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_USER_AGENT) {
            self.wikidata.user_agent = v.clone();
            self.musicbrainz.user_agent = v;
        }
        if let Some(v) = lookup(ENV_RUN_DIR) {
            self.eval.run_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_WORKERS) {
            self.eval.workers = v.parse().map_err(|_| ConfigError::Env {
                name: ENV_WORKERS,
                value: v,
            })?;
        }
        Ok(())
    }

    fn transport(&self, user_agent: &str, rps: f64, namespace: &str) -> Result<Arc<dyn Transport>, KgError> {
        let inner = ReqwestTransport::new(user_agent, rps)?;
        Ok(if self.cache.enabled {
            Arc::new(CachedTransport::new(inner, &self.cache.dir, namespace))
        } else {
            Arc::new(inner)
        })
    }

    pub fn build_kg(&self, spec: &KgSpec) -> Result<Arc<dyn KnowledgeGraph>, ConfigError> {
        Ok(match spec {
            KgSpec::Wikidata => {
                let c = &self.wikidata;
                let transport = self.transport(&c.user_agent, c.requests_per_second, "wikidata")?;
                Arc::new(WikidataKg::new(c.clone(), transport))
            }
            KgSpec::MusicBrainz => {
                let c = &self.musicbrainz;
                let transport = self.transport(&c.user_agent, c.requests_per_second, "musicbrainz")?;
                Arc::new(MusicBrainzKg::new(c.clone(), transport))
            }
            KgSpec::Memory(path) => {
                let source = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "memory".into());
                Arc::new(MemoryKg::from_triples_file(source, path)?)
            }
        })
    }

    /// `specs` overrides the configured list when non-empty.
    pub fn build_federation(&self, specs: &[KgSpec]) -> Result<Federation, ConfigError> {
        let specs = if specs.is_empty() { &self.kgs } else { specs };
        let backends = specs
            .iter()
            .map(|spec| self.build_kg(spec))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Federation::new(backends)?)
    }
}
