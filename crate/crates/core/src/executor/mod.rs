//! Graph traversal. Each document runs in its own session: triggers first,
//! then a breadth-first walk over (step, context) pairs with the gates
//! audience, required keys, memo, filter, execute.

mod finding;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;

pub use finding::{ActionRequest, Finding, QueryRun, StepOutcome, StepStatus};

use crate::context::{
    expand_variations, memo_key, row_extensions, ExecutionContext, MemoKey, StepId,
    DEFAULT_MAX_CONTEXT_KEYS,
};
use crate::model::{
    infer_required_keys, ActionDef, ActionKind, Audience, AutoTsgDoc, CheckDef, StepKind, StepRef,
    TriggerDef,
};
use crate::predicate::evaluate_filter;
use crate::query::{SourceRegistry, Table};
use crate::template;

/// Keys identifying the target of a production action when the trigger
/// declares no scoping.
pub const RESOURCE_KEYS: [&str; 2] = ["ServerName", "DatabaseName"];

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub audience: Audience,
    pub now: DateTime<Utc>,
    pub max_context_keys: usize,
    /// Depth of the CallAutoTsg chain that led to this run.
    pub call_depth: u32,
}

impl ExecOptions {
    pub fn new(audience: Audience, now: DateTime<Utc>) -> Self {
        ExecOptions {
            audience,
            now,
            max_context_keys: DEFAULT_MAX_CONTEXT_KEYS,
            call_depth: 0,
        }
    }
}

struct MemoEntry {
    outcome: usize,
    /// Extensions applied to the incoming context for next steps; `None` prunes.
    next: Option<Vec<ExecutionContext>>,
}

struct Work<'a> {
    step: &'a str,
    ctx: ExecutionContext,
    trigger: usize,
}

/// State of one document's execution.
pub struct ExecutionSession<'a> {
    doc: &'a AutoTsgDoc,
    sources: &'a SourceRegistry,
    base: ExecutionContext,
    opts: ExecOptions,
    memo: HashMap<MemoKey, MemoEntry>,
    query_calls: BTreeMap<String, usize>,
    outcomes: Vec<StepOutcome>,
    actions: Vec<ActionRequest>,
}

impl<'a> ExecutionSession<'a> {
    pub fn new(
        doc: &'a AutoTsgDoc,
        sources: &'a SourceRegistry,
        base: ExecutionContext,
        opts: ExecOptions,
    ) -> Self {
        ExecutionSession {
            doc,
            sources,
            base,
            opts,
            memo: HashMap::new(),
            query_calls: BTreeMap::new(),
            outcomes: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn run(mut self) -> Finding {
        let doc = self.doc;
        let mut queue: VecDeque<Work<'a>> = VecDeque::new();
        for (ti, t) in doc.triggers.iter().enumerate() {
            if !t.audiences.contains(&self.opts.audience) {
                continue;
            }
            for v in self.run_trigger(t) {
                for n in &t.next_steps {
                    queue.push_back(Work {
                        step: n,
                        ctx: v.clone(),
                        trigger: ti,
                    });
                }
            }
        }
        while let Some(w) = queue.pop_front() {
            let Some(step) = doc.step(w.step) else {
                continue;
            };
            for v in self.run_step(step, &w) {
                for n in step.next_steps() {
                    queue.push_back(Work {
                        step: n,
                        ctx: v.clone(),
                        trigger: w.trigger,
                    });
                }
            }
        }
        self.finish()
    }

    fn finish(self) -> Finding {
        let activated = self
            .outcomes
            .iter()
            .any(|o| o.kind == StepKind::Trigger && o.status == StepStatus::Fired);
        let headline = self
            .outcomes
            .iter()
            .find(|o| o.kind == StepKind::Trigger && o.status == StepStatus::Fired)
            .and_then(|o| o.markdown.clone());
        Finding {
            tsg_id: self.doc.id.clone(),
            version: self.doc.version,
            title: self.doc.metadata.title.clone(),
            tsg_type: self.doc.metadata.tsg_type,
            topics: self.doc.metadata.topics.clone(),
            activated,
            errored: self.outcomes.iter().any(|o| o.status == StepStatus::Errored),
            headline,
            outcomes: self.outcomes,
            actions: self.actions,
            query_calls: self.query_calls,
            called_by: None,
        }
    }

    fn push(&mut self, outcome: StepOutcome) -> usize {
        self.outcomes.push(outcome);
        self.outcomes.len() - 1
    }

    fn errored(&mut self, mut outcome: StepOutcome, err: impl ToString) -> Vec<ExecutionContext> {
        outcome.status = StepStatus::Errored;
        outcome.error = Some(err.to_string());
        self.push(outcome);
        Vec::new()
    }

    fn query(&mut self, step: &str, source: &str, text: &str) -> Result<Table, String> {
        *self.query_calls.entry(step.to_string()).or_default() += 1;
        self.sources.execute(source, text).map_err(|e| e.to_string())
    }

    fn too_large(&self, ctxs: &[ExecutionContext]) -> Option<String> {
        ctxs.iter().find(|c| c.len() > self.opts.max_context_keys).map(|c| {
            format!(
                "context has {} keys, above the limit of {}",
                c.len(),
                self.opts.max_context_keys
            )
        })
    }

    fn run_trigger(&mut self, t: &'a TriggerDef) -> Vec<ExecutionContext> {
        let base = self.base.clone();
        let mut outcome = StepOutcome::new(
            &t.name,
            StepKind::Trigger,
            StepStatus::Fired,
            &base,
        );
        let required = infer_required_keys(StepRef::Trigger(t));
        let missing = base.missing(&required);
        if !missing.is_empty() {
            outcome.status = StepStatus::SkippedMissingKeys;
            outcome.missing_keys = missing;
            self.push(outcome);
            return Vec::new();
        }
        let key = memo_key(&StepId::new(&self.doc.id, &t.name), &required, &base);
        outcome.memo_key = Some(key.digest());

        let mut variations = vec![base];
        let mut rendered: Vec<String> = Vec::new();
        for q in &t.queries {
            let mut next: Vec<ExecutionContext> = Vec::new();
            let mut cache: HashMap<String, Table> = HashMap::new();
            for v in &variations {
                let text = match template::substitute(&q.query_text, v) {
                    Ok(s) => s,
                    Err(e) => return self.errored(outcome, e),
                };
                let table = match cache.get(&text) {
                    Some(t) => t.clone(),
                    None => match self.query(&t.name, &q.source, &text) {
                        Ok(table) => {
                            outcome.queries.push(QueryRun {
                                source: q.source.clone(),
                                text: text.clone(),
                                table: table.clone(),
                            });
                            cache.insert(text, table.clone());
                            table
                        }
                        Err(e) => return self.errored(outcome, e),
                    },
                };
                match expand_variations(v, &table, &q.added_context) {
                    Ok(vs) => {
                        for c in vs {
                            if !next.contains(&c) {
                                next.push(c);
                            }
                        }
                    }
                    Err(e) => return self.errored(outcome, e),
                }
            }
            if next.is_empty() {
                outcome.status = StepStatus::NoData;
                let idx = self.push(outcome);
                self.memo.insert(key, MemoEntry { outcome: idx, next: None });
                return Vec::new();
            }
            if let Some(expl) = &q.explanation {
                for v in &next {
                    match template::substitute(expl, v) {
                        Ok(s) if !rendered.contains(&s) => rendered.push(s),
                        Ok(_) => {}
                        Err(e) => return self.errored(outcome, e),
                    }
                }
            }
            variations = next;
        }
        if let Some(e) = self.too_large(&variations) {
            return self.errored(outcome, e);
        }
        if !rendered.is_empty() {
            outcome.markdown = Some(join_blocks(&rendered));
        }
        outcome.variations = variations.clone();
        let idx = self.push(outcome);
        self.memo.insert(key, MemoEntry { outcome: idx, next: None });
        variations
    }

    fn required_for(&self, step: StepRef<'a>, trigger: usize) -> BTreeSet<String> {
        let mut keys = infer_required_keys(step);
        // incident identity is part of the execution identity
        if let StepRef::Action(a) = step {
            if a.kind == ActionKind::CreateIncident {
                keys.extend(self.doc.triggers[trigger].scoping());
            }
        }
        keys
    }

    fn run_step(&mut self, step: StepRef<'a>, w: &Work<'a>) -> Vec<ExecutionContext> {
        if let Some(aud) = step.audiences() {
            if !aud.contains(&self.opts.audience) {
                return Vec::new();
            }
        }
        let ctx = &w.ctx;
        let mut outcome = StepOutcome::new(step.name(), step.kind(), StepStatus::Fired, ctx);
        let required = self.required_for(step, w.trigger);
        let missing = ctx.missing(&required);
        if !missing.is_empty() {
            outcome.status = StepStatus::SkippedMissingKeys;
            outcome.missing_keys = missing;
            self.push(outcome);
            return Vec::new();
        }
        let key = memo_key(&StepId::new(&self.doc.id, step.name()), &required, ctx);
        outcome.memo_key = Some(key.digest());
        if let Some(entry) = self.memo.get(&key) {
            outcome.status = StepStatus::Deduplicated;
            outcome.duplicate_of = Some(entry.outcome);
            let produced: Vec<ExecutionContext> = entry
                .next
                .as_ref()
                .map(|exts| exts.iter().map(|x| ctx.extend(x)).collect())
                .unwrap_or_default();
            if let Some(e) = self.too_large(&produced) {
                return self.errored(outcome, e);
            }
            self.push(outcome);
            return produced;
        }
        if let Some(f) = step.filter() {
            match evaluate_filter(f, ctx) {
                Ok(true) => {}
                Ok(false) => {
                    outcome.status = StepStatus::FilteredOut;
                    let idx = self.push(outcome);
                    self.memo.insert(key, MemoEntry { outcome: idx, next: None });
                    return Vec::new();
                }
                Err(e) => return self.errored(outcome, e),
            }
        }
        let result = match step {
            StepRef::Trigger(_) => Err("a trigger cannot be a next step".to_string()),
            StepRef::Check(c) => self.execute_check(c, ctx, &mut outcome),
            StepRef::Explanation(e) => template::substitute(&e.explanation, ctx)
                .map(|s| {
                    outcome.markdown = Some(s);
                    Some(vec![ExecutionContext::new()])
                })
                .map_err(|e| e.to_string()),
            StepRef::Action(a) => self.emit_action(a, ctx, w.trigger).map(|_| Some(vec![ExecutionContext::new()])),
        };
        let next = match result {
            Ok(n) => n,
            Err(e) => return self.errored(outcome, e),
        };
        let produced: Vec<ExecutionContext> = next
            .as_ref()
            .map(|exts| exts.iter().map(|x| ctx.extend(x)).collect())
            .unwrap_or_default();
        if let Some(e) = self.too_large(&produced) {
            return self.errored(outcome, e);
        }
        if outcome.kind == StepKind::Check && outcome.status == StepStatus::Fired {
            outcome.variations = produced.clone();
        }
        let idx = self.push(outcome);
        self.memo.insert(key, MemoEntry { outcome: idx, next });
        produced
    }

    /// Returns the row extensions, or `None` when the query found nothing.
    fn execute_check(
        &mut self,
        c: &'a CheckDef,
        ctx: &ExecutionContext,
        outcome: &mut StepOutcome,
    ) -> Result<Option<Vec<ExecutionContext>>, String> {
        let text = template::substitute(&c.query.query_text, ctx).map_err(|e| e.to_string())?;
        let table = self.query(&c.name, &c.query.source, &text)?;
        outcome.queries.push(QueryRun {
            source: c.query.source.clone(),
            text,
            table: table.clone(),
        });
        if table.is_empty() {
            outcome.status = StepStatus::NoData;
            return Ok(None);
        }
        let exts = row_extensions(&table, &c.query.added_context).map_err(|e| e.to_string())?;
        if let Some(expl) = &c.query.explanation {
            let mut rendered: Vec<String> = Vec::new();
            for x in &exts {
                let s = template::substitute(expl, &ctx.extend(x)).map_err(|e| e.to_string())?;
                if !rendered.contains(&s) {
                    rendered.push(s);
                }
            }
            outcome.markdown = Some(join_blocks(&rendered));
        }
        Ok(Some(exts))
    }

    fn emit_action(
        &mut self,
        a: &'a ActionDef,
        ctx: &ExecutionContext,
        trigger: usize,
    ) -> Result<(), String> {
        let mut params = IndexMap::new();
        for (k, v) in &a.params {
            params.insert(
                k.clone(),
                template::substitute(v, ctx).map_err(|e| e.to_string())?,
            );
        }
        let declared = self.doc.triggers[trigger].scoping();
        let scoping = if !declared.is_empty() {
            ctx.project(&declared)
        } else {
            ctx.project(RESOURCE_KEYS)
        };
        self.actions.push(ActionRequest {
            tsg_id: self.doc.id.clone(),
            step: a.name.clone(),
            kind: a.kind.clone(),
            params,
            scoping,
            context: ctx.clone(),
            detected_at: self.opts.now,
            impactful: a.kind.is_impactful(),
            ttl: a.ttl,
            call_depth: self.opts.call_depth,
        });
        Ok(())
    }
}

fn join_blocks(blocks: &[String]) -> String {
    blocks
        .iter()
        .map(|b| b.trim_end())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs one document to completion.
pub fn run_tsg(
    doc: &AutoTsgDoc,
    sources: &SourceRegistry,
    base: &ExecutionContext,
    opts: &ExecOptions,
) -> Finding {
    ExecutionSession::new(doc, sources, base.clone(), opts.clone()).run()
}

/// Runs every enabled document on one thread, in input order.
pub fn run_all_sequential<D: Borrow<AutoTsgDoc>>(
    docs: &[D],
    sources: &SourceRegistry,
    base: &ExecutionContext,
    opts: &ExecOptions,
) -> Vec<Finding> {
    docs.iter()
        .map(Borrow::borrow)
        .filter(|d| d.enabled)
        .map(|d| run_tsg(d, sources, base, opts))
        .collect()
}

/// Runs every enabled document; findings come back in input order.
#[cfg(feature = "parallel")]
pub fn run_all<D: Borrow<AutoTsgDoc> + Sync>(
    docs: &[D],
    sources: &SourceRegistry,
    base: &ExecutionContext,
    opts: &ExecOptions,
) -> Vec<Finding> {
    use rayon::prelude::*;
    docs.par_iter()
        .map(Borrow::borrow)
        .filter(|d| d.enabled)
        .map(|d| run_tsg(d, sources, base, opts))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_all<D: Borrow<AutoTsgDoc> + Sync>(
    docs: &[D],
    sources: &SourceRegistry,
    base: &ExecutionContext,
    opts: &ExecOptions,
) -> Vec<Finding> {
    run_all_sequential(docs, sources, base, opts)
}
