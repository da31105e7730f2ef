use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::executor::ActionRequest;
use crate::value::Timespan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncidentState {
    Active,
    Mitigated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    pub tsg_id: String,
    /// Canonical serialization of the scoping values.
    pub scoping: String,
    pub title: String,
    pub owning_service: String,
    pub owning_team: String,
    pub severity: String,
    pub created_at: DateTime<Utc>,
    pub last_detected: DateTime<Utc>,
    pub state: IncidentState,
    pub ttl: Timespan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigated_at: Option<DateTime<Utc>>,
    /// Outage-tracking incident raised when a TSG exhausts its quota.
    #[serde(default)]
    pub outage: bool,
    #[serde(default)]
    pub detections: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub body: String,
}

impl IncidentRecord {
    fn expires_at(&self) -> DateTime<Utc> {
        self.last_detected + self.ttl.to_chrono()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaState {
    pub tsg_id: String,
    pub window_start: DateTime<Utc>,
    pub created: u32,
    pub limit: u32,
    pub backed_off: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum IncidentOutcome {
    Created { id: String },
    DedupSkipped { id: String },
    /// Quota exhausted; `outage` is set on the detection that opened the episode.
    BackedOff { outage: Option<String> },
}

#[derive(Debug, Clone, Copy)]
pub struct QuotaConfig {
    pub limit: u32,
    pub window: Timespan,
}

/// Scheduler-created incidents with scoping-key identity and per-TSG quota.
#[derive(Debug, Default, Clone)]
pub struct IncidentStore {
    records: Vec<IncidentRecord>,
    quotas: BTreeMap<String, QuotaState>,
    next_id: u64,
}

impl IncidentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a store from persisted snapshots (the last one per id wins).
    pub fn from_records(snapshots: Vec<IncidentRecord>) -> Self {
        let mut store = IncidentStore::new();
        for r in snapshots {
            match store.records.iter_mut().find(|o| o.id == r.id) {
                Some(slot) => *slot = r,
                None => store.records.push(r),
            }
        }
        store.next_id = store
            .records
            .iter()
            .filter_map(|r| r.id.strip_prefix("INC-").and_then(|n| n.parse().ok()))
            .max()
            .unwrap_or(0);
        store
    }

    pub fn records(&self) -> &[IncidentRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&IncidentRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn quota(&self, tsg: &str) -> Option<&QuotaState> {
        self.quotas.get(tsg)
    }

    pub fn active(&self) -> impl Iterator<Item = &IncidentRecord> {
        self.records.iter().filter(|r| r.state == IncidentState::Active)
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("INC-{:05}", self.next_id)
    }

    /// Creates, refreshes, or absorbs an incident for one CreateIncident request.
    /// Returns the outcome and the ids of records that changed.
    pub fn create_incident(
        &mut self,
        req: &ActionRequest,
        body: &str,
        now: DateTime<Utc>,
        quota: QuotaConfig,
    ) -> (IncidentOutcome, Vec<String>) {
        let scoping = req.scoping_key();
        let ttl = req.ttl.unwrap_or(Timespan::from_hours(4));
        let mut changed = Vec::new();
        if let Some(r) = self.records.iter_mut().find(|r| {
            !r.outage && r.state == IncidentState::Active && r.tsg_id == req.tsg_id && r.scoping == scoping
        }) {
            if now < r.expires_at() {
                r.last_detected = now;
                r.detections += 1;
                return (IncidentOutcome::DedupSkipped { id: r.id.clone() }, vec![r.id.clone()]);
            }
            // lapsed but not yet swept
            r.state = IncidentState::Mitigated;
            r.mitigated_at = Some(now);
            changed.push(r.id.clone());
        }

        let q = self
            .quotas
            .entry(req.tsg_id.clone())
            .or_insert_with(|| QuotaState {
                tsg_id: req.tsg_id.clone(),
                window_start: now,
                created: 0,
                limit: quota.limit,
                backed_off: false,
            });
        if now >= q.window_start + quota.window.to_chrono() {
            q.window_start = now;
            q.created = 0;
            q.backed_off = false;
        }
        q.limit = quota.limit;
        if q.created >= q.limit {
            if q.backed_off {
                return (IncidentOutcome::BackedOff { outage: None }, changed);
            }
            q.backed_off = true;
            let window_end = q.window_start + quota.window.to_chrono();
            let id = self.fresh_id();
            let remaining = Timespan::from_chrono(window_end - now).unwrap_or(quota.window);
            self.records.push(IncidentRecord {
                id: id.clone(),
                tsg_id: req.tsg_id.clone(),
                scoping: String::new(),
                title: format!(
                    "Outage tracking: {} exceeded its quota of {} incidents",
                    req.tsg_id, quota.limit
                ),
                owning_service: req.param("OwningService").unwrap_or_default().to_string(),
                owning_team: req.param("OwningTeam").unwrap_or_default().to_string(),
                severity: "A".into(),
                created_at: now,
                last_detected: now,
                state: IncidentState::Active,
                ttl: remaining,
                mitigated_at: None,
                outage: true,
                detections: 1,
                body: format!(
                    "Incident creation for {} is backed off until {}; further detections are absorbed.",
                    req.tsg_id,
                    crate::value::render_datetime(&window_end)
                ),
            });
            changed.push(id.clone());
            return (IncidentOutcome::BackedOff { outage: Some(id) }, changed);
        }
        q.created += 1;
        let id = self.fresh_id();
        self.records.push(IncidentRecord {
            id: id.clone(),
            tsg_id: req.tsg_id.clone(),
            scoping,
            title: req.param("Title").unwrap_or_default().to_string(),
            owning_service: req.param("OwningService").unwrap_or_default().to_string(),
            owning_team: req.param("OwningTeam").unwrap_or_default().to_string(),
            severity: req.param("Severity").unwrap_or("B").to_string(),
            created_at: now,
            last_detected: now,
            state: IncidentState::Active,
            ttl,
            mitigated_at: None,
            outage: false,
            detections: 1,
            body: body.to_string(),
        });
        changed.push(id.clone());
        (IncidentOutcome::Created { id }, changed)
    }

    /// Mitigates every active incident whose TTL has run out since its last
    /// detection. Idempotent.
    pub fn expire_incidents(&mut self, now: DateTime<Utc>) -> Vec<String> {
        let mut out = Vec::new();
        for r in &mut self.records {
            if r.state == IncidentState::Active && now >= r.expires_at() {
                r.state = IncidentState::Mitigated;
                r.mitigated_at = Some(now);
                out.push(r.id.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ExecutionContext;
    use crate::model::ActionKind;
    use crate::value::parse_datetime;
    use crate::Value;
    use indexmap::IndexMap;

    fn at(min: i64) -> DateTime<Utc> {
        parse_datetime("2024-03-01T00:00:00Z").unwrap() + chrono::Duration::minutes(min)
    }

    fn req(server: &str, min: i64) -> ActionRequest {
        let scoping: ExecutionContext = [("ServerName".to_string(), Value::from(server))]
            .into_iter()
            .collect();
        let mut params = IndexMap::new();
        params.insert("Title".into(), format!("Long upgrade(s) detected for {server}"));
        ActionRequest {
            tsg_id: "monitor".into(),
            step: "create-incident".into(),
            kind: ActionKind::CreateIncident,
            params,
            scoping: scoping.clone(),
            context: scoping,
            detected_at: at(min),
            impactful: false,
            ttl: Some(Timespan::from_hours(4)),
            call_depth: 0,
        }
    }

    const Q: QuotaConfig = QuotaConfig {
        limit: 50,
        window: Timespan::from_days(1),
    };

    #[test]
    fn second_detection_refreshes() {
        let mut s = IncidentStore::new();
        let (a, _) = s.create_incident(&req("s1", 0), "", at(0), Q);
        let (b, _) = s.create_incident(&req("s1", 20), "", at(20), Q);
        let IncidentOutcome::Created { id } = a else { panic!() };
        assert_eq!(b, IncidentOutcome::DedupSkipped { id: id.clone() });
        assert_eq!(s.get(&id).unwrap().last_detected, at(20));
    }

    #[test]
    fn distinct_scoping_gets_distinct_incidents() {
        let mut s = IncidentStore::new();
        s.create_incident(&req("s1", 0), "", at(0), Q);
        s.create_incident(&req("s2", 0), "", at(0), Q);
        assert_eq!(s.active().count(), 2);
    }

    #[test]
    fn expiry_boundary() {
        let mut s = IncidentStore::new();
        s.create_incident(&req("s1", 120), "", at(120), Q);
        // last detection 2h, ttl 4h: still active one second before 6h
        let just_before = at(360) - chrono::Duration::seconds(1);
        assert!(s.expire_incidents(just_before).is_empty());
        assert_eq!(s.expire_incidents(at(361)).len(), 1);
        assert!(s.expire_incidents(at(400)).is_empty());
        assert!(s.expire_incidents(at(0)).is_empty());
    }

    #[test]
    fn quota_backs_off_once() {
        let mut s = IncidentStore::new();
        let q = QuotaConfig {
            limit: 3,
            window: Timespan::from_days(1),
        };
        let outcomes: Vec<IncidentOutcome> = (0..5)
            .map(|i| s.create_incident(&req(&format!("s{i}"), i), "", at(i), q).0)
            .collect();
        assert!(matches!(outcomes[2], IncidentOutcome::Created { .. }));
        assert!(matches!(outcomes[3], IncidentOutcome::BackedOff { outage: Some(_) }));
        assert_eq!(outcomes[4], IncidentOutcome::BackedOff { outage: None });
        assert_eq!(s.records().iter().filter(|r| !r.outage).count(), 3);
        assert_eq!(s.records().iter().filter(|r| r.outage).count(), 1);
        assert!(s.quota("monitor").unwrap().backed_off);
        // next window starts fresh
        let (o, _) = s.create_incident(&req("s9", 0), "", at(24 * 60 + 1), q);
        assert!(matches!(o, IncidentOutcome::Created { .. }));
    }

    #[test]
    fn snapshots_rebuild() {
        let mut s = IncidentStore::new();
        s.create_incident(&req("s1", 0), "", at(0), Q);
        s.create_incident(&req("s1", 20), "", at(20), Q);
        let mut snaps: Vec<IncidentRecord> = s.records().to_vec();
        snaps.insert(0, {
            let mut old = snaps[0].clone();
            old.last_detected = at(0);
            old
        });
        let back = IncidentStore::from_records(snaps);
        assert_eq!(back.records(), s.records());
        let mut back = back;
        let (o, _) = back.create_incident(&req("s2", 0), "", at(0), Q);
        assert_eq!(o, IncidentOutcome::Created { id: "INC-00002".into() });
    }
}
