//! Execution contexts: immutable sets of typed key-value facts, their
//! projection onto a step's required keys, and the memo keys derived from
//! that projection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::query::Table;
use crate::value::{parse_value, Value, ValueType};

/// Upper bound on keys in a single context.
pub const DEFAULT_MAX_CONTEXT_KEYS: usize = 256;

/// Declared `AddedContext`: column name to semantic type, in declaration order.
pub type AddedContext = IndexMap<String, ValueType>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionContext(BTreeMap<String, Value>);

impl ExecutionContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Returns a new context with `key` set. An existing different value is
    /// shadowed by the new one.
    pub fn with(&self, key: impl Into<String>, value: Value) -> Self {
        let mut next = self.clone();
        next.0.insert(key.into(), value);
        next
    }

    /// Union with `other`; on collisions the values in `other` win.
    pub fn extend(&self, other: &ExecutionContext) -> Self {
        let mut next = self.clone();
        for (k, v) in &other.0 {
            next.0.insert(k.clone(), v.clone());
        }
        next
    }

    /// Restriction to `required`. Keys absent from the context are ignored.
    pub fn project<S: AsRef<str>>(&self, required: impl IntoIterator<Item = S>) -> Self {
        let mut out = BTreeMap::new();
        for key in required {
            if let Some((k, v)) = self.0.get_key_value(key.as_ref()) {
                out.insert(k.clone(), v.clone());
            }
        }
        ExecutionContext(out)
    }

    /// Required keys not present in this context, sorted.
    pub fn missing<'a>(&self, required: impl IntoIterator<Item = &'a String>) -> Vec<String> {
        required
            .into_iter()
            .filter(|k| !self.0.contains_key(k.as_str()))
            .cloned()
            .collect()
    }

    /// Canonical, process-stable serialization: a JSON array of
    /// `[key, type, rendering]` triples in key order.
    pub fn canonical(&self) -> String {
        let triples: Vec<(&str, &str, String)> = self
            .0
            .iter()
            .map(|(k, v)| (k.as_str(), v.value_type().as_str(), v.render()))
            .collect();
        serde_json::to_string(&triples).expect("strings serialize")
    }

    pub fn into_inner(self) -> BTreeMap<String, Value> {
        self.0
    }
}

impl FromIterator<(String, Value)> for ExecutionContext {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        ExecutionContext(iter.into_iter().collect())
    }
}

impl fmt::Display for ExecutionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}: {v}")?;
        }
        f.write_str("}")
    }
}

/// Step identity within a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepId {
    pub doc: String,
    pub step: String,
}

impl StepId {
    pub fn new(doc: impl Into<String>, step: impl Into<String>) -> Self {
        StepId {
            doc: doc.into(),
            step: step.into(),
        }
    }
}

/// Key under which a step execution is memoized: equal iff the step is the
/// same and the contexts agree on the step's required keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoKey {
    pub step: StepId,
    pub projected: String,
}

impl MemoKey {
    /// Short hex digest, stable across processes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.step.doc.as_bytes());
        hasher.update([0]);
        hasher.update(self.step.step.as_bytes());
        hasher.update([0]);
        hasher.update(self.projected.as_bytes());
        hex::encode(&hasher.finalize()[..12])
    }
}

impl fmt::Display for MemoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}@{}", self.step.doc, self.step.step, self.projected)
    }
}

pub fn memo_key(step: &StepId, required: &BTreeSet<String>, ctx: &ExecutionContext) -> MemoKey {
    MemoKey {
        step: step.clone(),
        projected: ctx.project(required).canonical(),
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("declared column '{0}' is not in the query result")]
    MissingColumn(String),
    #[error("cannot convert column '{key}' value '{raw}' to {ty}: {reason}")]
    Conversion {
        key: String,
        raw: String,
        ty: ValueType,
        reason: String,
    },
    #[error("context has {size} keys, above the limit of {limit}")]
    TooLarge { size: usize, limit: usize },
}

/// Extracts the declared columns of each row as a partial context, converted
/// to the declared types. Duplicates are removed keeping first occurrences.
pub fn row_extensions(
    rows: &Table,
    added: &AddedContext,
) -> Result<Vec<ExecutionContext>, ContextError> {
    let mut columns = Vec::with_capacity(added.len());
    for (name, ty) in added {
        let idx = rows
            .column_index(name)
            .ok_or_else(|| ContextError::MissingColumn(name.clone()))?;
        columns.push((name, *ty, idx));
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for row in &rows.rows {
        let mut ext = BTreeMap::new();
        for (name, ty, idx) in &columns {
            let cell = &row[*idx];
            let value = if cell.value_type() == *ty {
                cell.clone()
            } else {
                let raw = cell.render();
                parse_value(&raw, *ty).map_err(|e| ContextError::Conversion {
                    key: (*name).clone(),
                    raw,
                    ty: *ty,
                    reason: e.reason,
                })?
            };
            ext.insert((*name).clone(), value);
        }
        let ext = ExecutionContext(ext);
        if seen.insert(ext.clone()) {
            out.push(ext);
        }
    }
    Ok(out)
}

/// One context per distinct row variation: `base ∪ row[added]`, in first
/// occurrence order. With no declared keys a non-empty result yields just
/// `base`; an empty result always yields nothing.
pub fn expand_variations(
    base: &ExecutionContext,
    rows: &Table,
    added: &AddedContext,
) -> Result<Vec<ExecutionContext>, ContextError> {
    if rows.rows.is_empty() {
        // still validate the schema so misdeclared columns surface early
        for name in added.keys() {
            if rows.column_index(name).is_none() {
                return Err(ContextError::MissingColumn(name.clone()));
            }
        }
        return Ok(Vec::new());
    }
    let exts = row_extensions(rows, added)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for ext in exts {
        let ctx = base.extend(&ext);
        if seen.insert(ctx.clone()) {
            out.push(ctx);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{Column, Table};
    use crate::value::Timespan;
    use proptest::prelude::*;

    fn ctx(pairs: &[(&str, Value)]) -> ExecutionContext {
        pairs.iter().cloned().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn table(cols: &[(&str, ValueType)], rows: Vec<Vec<Value>>) -> Table {
        Table {
            name: "T".into(),
            columns: cols
                .iter()
                .map(|(n, t)| Column::new(*n, *t))
                .collect(),
            rows,
        }
    }

    #[test]
    fn projection_restricts() {
        let c = ctx(&[("A", Value::Long(1)), ("B", Value::Long(2))]);
        assert_eq!(c.project(["A"]), ctx(&[("A", Value::Long(1))]));
        assert!(c.project(Vec::<String>::new()).is_empty());
    }

    #[test]
    fn shadowing_and_noop_extension() {
        let c = ctx(&[("A", Value::Long(1))]);
        assert_eq!(c.with("A", Value::Long(2)).get("A"), Some(&Value::Long(2)));
        assert_eq!(c.with("A", Value::Long(1)), c);
    }

    #[test]
    fn duplicate_rows_collapse() {
        let base = ctx(&[("S", "x".into())]);
        let t = table(
            &[("Op", ValueType::Long)],
            vec![vec![Value::Long(1)], vec![Value::Long(1)], vec![Value::Long(2)]],
        );
        let added: AddedContext = [("Op".to_string(), ValueType::Long)].into_iter().collect();
        let out = expand_variations(&base, &t, &added).unwrap();
        assert_eq!(
            out,
            vec![
                ctx(&[("S", "x".into()), ("Op", Value::Long(1))]),
                ctx(&[("S", "x".into()), ("Op", Value::Long(2))]),
            ]
        );
    }

    #[test]
    fn empty_rows_give_no_variations() {
        let t = table(&[("Op", ValueType::Long)], vec![]);
        let added: AddedContext = [("Op".to_string(), ValueType::Long)].into_iter().collect();
        assert!(expand_variations(&ExecutionContext::new(), &t, &added)
            .unwrap()
            .is_empty());
        assert!(expand_variations(&ExecutionContext::new(), &t, &AddedContext::new())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn undeclared_added_context_yields_base() {
        let base = ctx(&[("S", "x".into())]);
        let t = table(&[("Op", ValueType::Long)], vec![vec![Value::Long(1)], vec![Value::Long(2)]]);
        assert_eq!(expand_variations(&base, &t, &AddedContext::new()).unwrap(), vec![base]);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let t = table(&[("Op", ValueType::Long)], vec![vec![Value::Long(1)]]);
        let added: AddedContext = [("Nope".to_string(), ValueType::Long)].into_iter().collect();
        assert_eq!(
            expand_variations(&ExecutionContext::new(), &t, &added),
            Err(ContextError::MissingColumn("Nope".into()))
        );
    }

    #[test]
    fn columns_convert_to_declared_type() {
        let t = table(&[("Op", ValueType::Long)], vec![vec![Value::Long(7)]]);
        let added: AddedContext = [("Op".to_string(), ValueType::String)].into_iter().collect();
        let out = expand_variations(&ExecutionContext::new(), &t, &added).unwrap();
        assert_eq!(out[0].get("Op"), Some(&Value::String("7".into())));

        let t = table(&[("Op", ValueType::String)], vec![vec!["x".into()]]);
        let added: AddedContext = [("Op".to_string(), ValueType::Long)].into_iter().collect();
        assert!(matches!(
            expand_variations(&ExecutionContext::new(), &t, &added),
            Err(ContextError::Conversion { ref key, .. }) if key == "Op"
        ));
    }

    #[test]
    fn three_distinct_upgrade_rows() {
        // hand-enumerated: three distinct (OperationId, Duration, State) triples
        let base = ctx(&[("S", "x".into())]);
        let t = table(
            &[
                ("OperationId", ValueType::Long),
                ("Duration", ValueType::Timespan),
                ("State", ValueType::String),
            ],
            vec![
                vec![Value::Long(1), Timespan::from_minutes(90).into(), "Running".into()],
                vec![Value::Long(2), Timespan::from_minutes(10).into(), "Complete".into()],
                vec![Value::Long(3), Timespan::from_minutes(90).into(), "Complete".into()],
            ],
        );
        let added: AddedContext = [
            ("OperationId".to_string(), ValueType::Long),
            ("Duration".to_string(), ValueType::Timespan),
            ("State".to_string(), ValueType::String),
        ]
        .into_iter()
        .collect();
        let out = expand_variations(&base, &t, &added).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.len() == 4));
    }

    #[test]
    fn memo_keys_follow_projection() {
        let step = StepId::new("doc", "s");
        let req: BTreeSet<String> = ["A".to_string()].into();
        let k1 = memo_key(&step, &req, &ctx(&[("A", Value::Long(1)), ("B", Value::Long(2))]));
        let k2 = memo_key(&step, &req, &ctx(&[("A", Value::Long(1)), ("B", Value::Long(9))]));
        let k3 = memo_key(&step, &req, &ctx(&[("A", Value::Long(2))]));
        assert_eq!(k1, k2);
        assert_ne!(k1, k3);
        assert_eq!(k1.digest(), k2.digest());
    }

    #[test]
    fn canonical_form_is_stable() {
        let c = ctx(&[("B", Value::Long(2)), ("A", "x;y".into())]);
        assert_eq!(c.canonical(), r#"[["A","string","x;y"],["B","long","2"]]"#);
    }

    fn arb_ctx() -> impl Strategy<Value = ExecutionContext> {
        prop::collection::btree_map("[A-D]", 0i64..3, 0..4).prop_map(|m| {
            m.into_iter().map(|(k, v)| (k, Value::Long(v))).collect()
        })
    }

    proptest! {
        #[test]
        fn memo_key_equality_is_an_equivalence(
            a in arb_ctx(), b in arb_ctx(), c in arb_ctx(),
            req in prop::collection::btree_set("[A-D]", 0..4),
        ) {
            let step = StepId::new("d", "s");
            let (ka, kb, kc) = (memo_key(&step, &req, &a), memo_key(&step, &req, &b), memo_key(&step, &req, &c));
            prop_assert_eq!(&ka, &ka.clone());
            prop_assert_eq!(ka == kb, kb == ka);
            if ka == kb && kb == kc {
                prop_assert_eq!(&ka, &kc);
            }
            prop_assert_eq!(ka == kb, a.project(&req) == b.project(&req));
        }

        #[test]
        fn variations_are_pairwise_distinct(vals in prop::collection::vec((0i64..3, 0i64..2), 0..12)) {
            let t = table(
                &[("X", ValueType::Long), ("Y", ValueType::Long)],
                vals.iter().map(|(x, y)| vec![Value::Long(*x), Value::Long(*y)]).collect(),
            );
            let added: AddedContext = [("X".to_string(), ValueType::Long)].into_iter().collect();
            let out = expand_variations(&ExecutionContext::new(), &t, &added).unwrap();
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert_ne!(&out[i], &out[j]);
                }
            }
        }
    }
}
