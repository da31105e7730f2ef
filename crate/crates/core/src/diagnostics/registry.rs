use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{parse_document_with_id, to_yaml, AutoTsgDoc, TsgType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsgSummary {
    pub id: String,
    pub version: u64,
    pub title: String,
    pub tsg_type: TsgType,
    pub topics: Vec<String>,
    pub owner: String,
    pub enabled: bool,
    pub scheduled: bool,
}

/// Documents known to the service, by id.
#[derive(Debug, Clone, Default)]
pub struct TsgRegistry {
    docs: BTreeMap<String, AutoTsgDoc>,
}

impl TsgRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_docs(docs: impl IntoIterator<Item = AutoTsgDoc>) -> Self {
        TsgRegistry {
            docs: docs.into_iter().map(|d| (d.id.clone(), d)).collect(),
        }
    }

    /// Parses every `.yaml`/`.yml` file in `dir` (ids default to file stems).
    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("yaml" | "yml")))
            .collect();
        paths.sort();
        let mut reg = TsgRegistry::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("tsg");
            let doc = parse_document_with_id(&text, stem).map_err(|e| format!("{}: {e}", p.display()))?;
            reg.docs.insert(doc.id.clone(), doc);
        }
        Ok(reg)
    }

    pub fn get(&self, id: &str) -> Option<&AutoTsgDoc> {
        self.docs.get(id)
    }

    pub fn docs(&self) -> impl Iterator<Item = &AutoTsgDoc> {
        self.docs.values()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn summaries(&self) -> Vec<TsgSummary> {
        self.docs.values().map(summary).collect()
    }

    pub fn yaml(&self, id: &str) -> Option<String> {
        self.docs.get(id).map(to_yaml)
    }

    /// Stores a document. Replacing an existing one bumps its version and
    /// re-enables it; returns the stored version.
    pub fn upsert(&mut self, mut doc: AutoTsgDoc) -> u64 {
        if let Some(old) = self.docs.get(&doc.id) {
            doc.version = old.version + 1;
            doc.enabled = true;
        }
        let v = doc.version;
        self.docs.insert(doc.id.clone(), doc);
        v
    }

    /// Returns false for an unknown id.
    pub fn set_enabled(&mut self, id: &str, enabled: bool) -> bool {
        match self.docs.get_mut(id) {
            Some(d) => {
                d.enabled = enabled;
                true
            }
            None => false,
        }
    }
}

pub fn summary(d: &AutoTsgDoc) -> TsgSummary {
    TsgSummary {
        id: d.id.clone(),
        version: d.version,
        title: d.metadata.title.clone(),
        tsg_type: d.metadata.tsg_type,
        topics: d.metadata.topics.clone(),
        owner: d.metadata.owner.clone(),
        enabled: d.enabled,
        scheduled: d.is_scheduled(),
    }
}
