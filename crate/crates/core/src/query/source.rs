use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::eval::run_query;
use super::table::{Table, TableStore};
use super::QueryError;

/// A named telemetry source. Identical query text must yield identical tables.
pub trait QuerySource: Send + Sync {
    fn execute(&self, query_text: &str) -> Result<Table, QueryError>;
}

/// Evaluates queries against locally loaded tables.
#[derive(Debug, Default)]
pub struct LocalSource {
    store: Arc<TableStore>,
    calls: AtomicUsize,
}

impl LocalSource {
    pub fn new(store: Arc<TableStore>) -> Self {
        LocalSource {
            store,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn store(&self) -> &Arc<TableStore> {
        &self.store
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl QuerySource for LocalSource {
    fn execute(&self, query_text: &str) -> Result<Table, QueryError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        run_query(query_text, &self.store)
    }
}

/// Source name to implementation, as referenced by `Source:` in documents.
#[derive(Clone, Default)]
pub struct SourceRegistry {
    sources: BTreeMap<String, Arc<dyn QuerySource>>,
}

impl SourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers one local evaluator under each of `names` (`Kusto` when empty).
    pub fn local(store: Arc<TableStore>, names: &[String]) -> Self {
        let src: Arc<dyn QuerySource> = Arc::new(LocalSource::new(store));
        let mut reg = SourceRegistry::new();
        if names.is_empty() {
            reg.register("Kusto", src);
        } else {
            for n in names {
                reg.register(n, src.clone());
            }
        }
        reg
    }

    pub fn register(&mut self, name: impl Into<String>, source: Arc<dyn QuerySource>) {
        self.sources.insert(name.into(), source);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sources.keys().map(String::as_str)
    }

    pub fn execute(&self, source: &str, query_text: &str) -> Result<Table, QueryError> {
        self.sources
            .get(source)
            .ok_or_else(|| QueryError::UnknownSource(source.to_string()))?
            .execute(query_text)
    }
}

impl std::fmt::Debug for SourceRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.sources.keys()).finish()
    }
}
