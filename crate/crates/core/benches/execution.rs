use std::hint::black_box;
use std::path::PathBuf;
use std::sync::Arc;

use autotsg_core::executor::{run_all, run_all_sequential, ExecOptions};
use autotsg_core::model::{parse_document_with_id, AutoTsgDoc, Audience};
use autotsg_core::query::{Column, SourceRegistry, TableStore};
use autotsg_core::value::parse_datetime;
use autotsg_core::{ExecutionContext, Value, ValueType};
use chrono::Duration;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const ROWS: usize = 5_000;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn store() -> Arc<TableStore> {
    let store = Arc::new(TableStore::new());
    store.load_manifest(&fixtures().join("tables/a1.json")).unwrap();
    let base = parse_datetime("2024-03-01T00:00:00Z").unwrap();
    let ops = [
        Column::new("TimeStamp", ValueType::DateTime),
        Column::new("OperationName", ValueType::String),
        Column::new("OperationId", ValueType::Long),
        Column::new("ServerName", ValueType::String),
        Column::new("DatabaseName", ValueType::String),
        Column::new("State", ValueType::String),
    ];
    let logs = [
        Column::new("TimeStamp", ValueType::DateTime),
        Column::new("ServerName", ValueType::String),
        Column::new("DatabaseName", ValueType::String),
        Column::new("Version", ValueType::String),
    ];
    let mut op_rows = Vec::with_capacity(ROWS);
    let mut log_rows = Vec::with_capacity(ROWS);
    for i in 0..ROWS {
        let at = Value::DateTime(base + Duration::seconds(i as i64 * 4));
        let server = Value::String(format!("s{}", i % 50));
        let db = Value::String(format!("db{}", i % 7));
        op_rows.push(vec![
            at.clone(),
            Value::String("Upgrade".into()),
            Value::Long(2000 + (i / 10) as i64),
            server.clone(),
            db.clone(),
            Value::String(if i % 3 == 0 { "Completed" } else { "Running" }.into()),
        ]);
        log_rows.push(vec![at, server, db, Value::String(format!("v{}", i % 4))]);
    }
    store.append_rows("ManagementOperations", &ops, op_rows).unwrap();
    store.append_rows("RawDatabaseLogs", &logs, log_rows).unwrap();
    store
}

fn docs(n: usize) -> Vec<AutoTsgDoc> {
    let text = std::fs::read_to_string(fixtures().join("tsgs/recent-upgrades.yaml")).unwrap();
    (0..n).map(|i| parse_document_with_id(&text, &format!("recent-upgrades-{i}")).unwrap()).collect()
}

fn bench(c: &mut Criterion) {
    let sources = SourceRegistry::local(store(), &[]);
    let ctx: ExecutionContext =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("contexts/a1.json")).unwrap()).unwrap();
    let opts = ExecOptions::new(Audience::InternalTicket, parse_datetime("2024-03-02T00:00:00Z").unwrap());
    let mut group = c.benchmark_group("run_all");
    group.sample_size(10);
    for n in [8usize, 64] {
        let docs = docs(n);
        group.bench_with_input(BenchmarkId::new("parallel", n), &docs, |b, d| {
            b.iter(|| black_box(run_all(d, &sources, &ctx, &opts)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &docs, |b, d| {
            b.iter(|| black_box(run_all_sequential(d, &sources, &ctx, &opts)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
