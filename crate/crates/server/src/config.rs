use std::path::{Path, PathBuf};
use std::sync::Arc;

use autotsg_core::clock::Clock;
use autotsg_core::diagnostics::{Engine, EngineConfig, TsgRegistry};
use autotsg_core::prioritizer::{DeterministicStub, RankerClient, ReplayClient};
use autotsg_core::query::TableStore;
use autotsg_core::scheduler::ScheduleRegistry;
use autotsg_core::Timespan;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerSpec {
    #[default]
    Stub,
    /// Recorded completions keyed by prompt hash.
    Replay(PathBuf),
}

impl RankerSpec {
    pub fn build(&self) -> Result<Box<dyn RankerClient>, ConfigError> {
        match self {
            RankerSpec::Stub => Ok(Box::new(DeterministicStub)),
            RankerSpec::Replay(p) => ReplayClient::load(p)
                .map(|c| Box::new(c) as Box<dyn RankerClient>)
                .map_err(ConfigError::Invalid),
        }
    }
}

/// Everything a service instance needs. Relative paths resolve against the
/// directory of the file it was loaded from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Directory of documents.
    #[serde(default)]
    pub tsgs: Option<PathBuf>,
    /// Table fixture manifest.
    #[serde(default)]
    pub tables: Option<PathBuf>,
    /// Where incidents, operations and feedback persist.
    #[serde(default)]
    pub state_dir: Option<PathBuf>,
    #[serde(default)]
    pub ranker: RankerSpec,
    /// Extra data source names served by the local store.
    #[serde(default)]
    pub sources: Vec<String>,
    /// Scheduler cadence in `serve`; no scheduler when absent.
    #[serde(default)]
    pub tick_every: Option<Timespan>,
    #[serde(default)]
    pub schedule: Option<ScheduleRegistry>,
    #[serde(default)]
    pub engine: EngineConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<ServiceConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c: ServiceConfig =
            serde_yaml::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = dir.join(&*p);
            }
        };
        fix(&mut c.tsgs);
        fix(&mut c.tables);
        fix(&mut c.state_dir);
        if let RankerSpec::Replay(p) = &mut c.ranker {
            *p = dir.join(&*p);
        }
        for r in &c.engine.context_rules {
            r.check().map_err(ConfigError::Invalid)?;
        }
        Ok(c)
    }

    pub fn store(&self) -> Result<Arc<TableStore>, ConfigError> {
        let store = Arc::new(TableStore::new());
        if let Some(m) = &self.tables {
            store.load_manifest(m).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn registry(&self) -> Result<TsgRegistry, ConfigError> {
        match &self.tsgs {
            Some(dir) => TsgRegistry::load_dir(dir).map_err(ConfigError::Invalid),
            None => Ok(TsgRegistry::new()),
        }
    }

    pub fn build_engine(&self, clock: Arc<dyn Clock>) -> Result<Engine, ConfigError> {
        let engine = Engine::new(
            self.engine.clone(),
            self.registry()?,
            self.store()?,
            &self.sources,
            self.ranker.build()?,
            clock,
        );
        match &self.state_dir {
            Some(dir) => engine.with_state_dir(dir).map_err(|source| ConfigError::Io {
                path: dir.clone(),
                source,
            }),
            None => Ok(engine),
        }
    }
}
