#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use autotsg_core::model::{parse_document_with_id, AutoTsgDoc};
use autotsg_core::query::{SourceRegistry, TableStore};
use autotsg_core::ExecutionContext;
use chrono::{DateTime, TimeZone, Utc};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn read(rel: &str) -> String {
    let p = fixtures().join(rel);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn doc(rel: &str, id: &str) -> AutoTsgDoc {
    parse_document_with_id(&read(rel), id).unwrap()
}

pub fn a1_store() -> Arc<TableStore> {
    let store = Arc::new(TableStore::new());
    store.load_manifest(&fixtures().join("tables/a1.json")).unwrap();
    store
}

pub fn registry(store: Arc<TableStore>) -> SourceRegistry {
    SourceRegistry::local(store, &[])
}

pub fn a1_context() -> ExecutionContext {
    serde_json::from_str(&read("contexts/a1.json")).unwrap()
}

pub fn t(h: u32, m: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, h, m, 0).unwrap()
}
