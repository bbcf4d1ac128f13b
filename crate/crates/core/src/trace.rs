//! Event records and their line-delimited serialization.
//!
//! Every line carries `tick`, `kind`, `subject`, `incarnation` and `detail`
//! in that order, so equal traces serialize to equal bytes and hash equally.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actor::{Envelope, State};
use crate::builder::StrategyChange;
use crate::ids::{ActorId, ActorPath, Fingerprint, Tick};
use crate::supervision::{Directive, FaultKind, Scope};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Delivered,
    Processed,
    Spawned,
    Failed,
    DirectiveApplied,
    Escalated,
    VersionActivated,
    FaultInjected,
    DeadLettered,
    Terminated,
    StrategyChanged,
    Preemptive,
    Alert,
}

/// Identifies an envelope inside a trace without carrying its payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeRef {
    pub from: ActorPath,
    pub seq: u64,
    pub fingerprint: Fingerprint,
    pub sent_at: Tick,
}

impl From<&Envelope> for EnvelopeRef {
    fn from(env: &Envelope) -> Self {
        EnvelopeRef {
            from: env.from().path.clone(),
            seq: env.seq(),
            fingerprint: env.fingerprint(),
            sent_at: env.sent_at(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryVia {
    /// Sent from outside any handler (workload, stress surge, API call).
    External,
    /// Released after a delivery delay.
    Released,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveredDetail {
    pub envelope: EnvelopeRef,
    pub via: DeliveryVia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedDetail {
    pub envelope: EnvelopeRef,
    pub state_in: State,
    pub state_out: State,
    pub domain_error: bool,
    pub sent: u32,
    pub spawned: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routed_to: Option<ActorPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnedDetail {
    pub parent: ActorPath,
    pub type_name: String,
    pub version: Option<u32>,
    pub state: State,
    /// Re-created because an ancestor restarted.
    pub respawn: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedDetail {
    pub failure: u64,
    pub fault: FaultKind,
    pub type_name: String,
    pub version: Option<u32>,
    pub envelope: Option<EnvelopeRef>,
    pub state: State,
    /// Envelope age for timeouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<Tick>,
    /// Envelopes that reached the mailbox during this tick, for overflows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectiveDetail {
    /// Failure that caused the directive.
    pub failure: u64,
    /// Actor whose failure the directive answers.
    pub cause: ActorPath,
    pub directive: Directive,
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    /// Fresh state after Restart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<State>,
    pub version: Option<u32>,
    /// Envelopes left in the mailbox (Restart, Resume).
    pub retained: u32,
    /// Envelopes moved to dead letters (Stop).
    pub drained: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscalatedDetail {
    pub failure: u64,
    pub fault: FaultKind,
    /// Supervisor passing the failure upward.
    pub supervisor: ActorPath,
    /// Where the failure goes next; absent when the root guardian halts.
    pub to: Option<ActorPath>,
    pub halted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VersionDetail {
    pub type_name: String,
    pub from: Option<u32>,
    pub to: u32,
    pub reason: String,
    pub state: State,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultDetail {
    /// Stress fault name, e.g. `crash-on-nth`.
    pub fault: String,
    pub envelope: Option<EnvelopeRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadLetterReason {
    /// Target stopped or never existed.
    NoTarget,
    /// Triggering envelope of a failure.
    Trigger,
    /// Drained from a stopped mailbox.
    Drained,
    Quarantined,
    /// Removed by a drop fault.
    Dropped,
    /// Router had no live target.
    Unroutable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadLetterDetail {
    pub envelope: EnvelopeRef,
    pub reason: DeadLetterReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminatedDetail {
    /// Actor whose stop or lifecycle end took this one down.
    pub by: ActorPath,
    pub reason: String,
    pub drained: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyDetail {
    pub change: StrategyChange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreemptiveDetail {
    pub action: String,
    pub error_fraction: f64,
    pub events: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<State>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertDetail {
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Delivered(DeliveredDetail),
    Processed(ProcessedDetail),
    Spawned(SpawnedDetail),
    Failed(FailedDetail),
    DirectiveApplied(DirectiveDetail),
    Escalated(EscalatedDetail),
    VersionActivated(VersionDetail),
    FaultInjected(FaultDetail),
    DeadLettered(DeadLetterDetail),
    Terminated(TerminatedDetail),
    StrategyChanged(StrategyDetail),
    Preemptive(PreemptiveDetail),
    Alert(AlertDetail),
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Delivered(_) => EventKind::Delivered,
            Event::Processed(_) => EventKind::Processed,
            Event::Spawned(_) => EventKind::Spawned,
            Event::Failed(_) => EventKind::Failed,
            Event::DirectiveApplied(_) => EventKind::DirectiveApplied,
            Event::Escalated(_) => EventKind::Escalated,
            Event::VersionActivated(_) => EventKind::VersionActivated,
            Event::FaultInjected(_) => EventKind::FaultInjected,
            Event::DeadLettered(_) => EventKind::DeadLettered,
            Event::Terminated(_) => EventKind::Terminated,
            Event::StrategyChanged(_) => EventKind::StrategyChanged,
            Event::Preemptive(_) => EventKind::Preemptive,
            Event::Alert(_) => EventKind::Alert,
        }
    }

    fn detail_value(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            Event::Delivered(d) => serde_json::to_value(d),
            Event::Processed(d) => serde_json::to_value(d),
            Event::Spawned(d) => serde_json::to_value(d),
            Event::Failed(d) => serde_json::to_value(d),
            Event::DirectiveApplied(d) => serde_json::to_value(d),
            Event::Escalated(d) => serde_json::to_value(d),
            Event::VersionActivated(d) => serde_json::to_value(d),
            Event::FaultInjected(d) => serde_json::to_value(d),
            Event::DeadLettered(d) => serde_json::to_value(d),
            Event::Terminated(d) => serde_json::to_value(d),
            Event::StrategyChanged(d) => serde_json::to_value(d),
            Event::Preemptive(d) => serde_json::to_value(d),
            Event::Alert(d) => serde_json::to_value(d),
        }
    }

    fn from_parts(kind: EventKind, detail: serde_json::Value) -> serde_json::Result<Self> {
        use serde_json::from_value as v;
        Ok(match kind {
            EventKind::Delivered => Event::Delivered(v(detail)?),
            EventKind::Processed => Event::Processed(v(detail)?),
            EventKind::Spawned => Event::Spawned(v(detail)?),
            EventKind::Failed => Event::Failed(v(detail)?),
            EventKind::DirectiveApplied => Event::DirectiveApplied(v(detail)?),
            EventKind::Escalated => Event::Escalated(v(detail)?),
            EventKind::VersionActivated => Event::VersionActivated(v(detail)?),
            EventKind::FaultInjected => Event::FaultInjected(v(detail)?),
            EventKind::DeadLettered => Event::DeadLettered(v(detail)?),
            EventKind::Terminated => Event::Terminated(v(detail)?),
            EventKind::StrategyChanged => Event::StrategyChanged(v(detail)?),
            EventKind::Preemptive => Event::Preemptive(v(detail)?),
            EventKind::Alert => Event::Alert(v(detail)?),
        })
    }
}

/// One line of a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub tick: Tick,
    pub subject: ActorId,
    pub event: Event,
}

impl EventRecord {
    pub fn kind(&self) -> EventKind {
        self.event.kind()
    }

    pub fn path(&self) -> &ActorPath {
        &self.subject.path
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    tick: Tick,
    kind: EventKind,
    subject: ActorPath,
    incarnation: u64,
    detail: serde_json::Value,
}

impl Serialize for EventRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let detail = self.event.detail_value().map_err(serde::ser::Error::custom)?;
        Line {
            tick: self.tick,
            kind: self.kind(),
            subject: self.subject.path.clone(),
            incarnation: self.subject.incarnation,
            detail,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EventRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = Line::deserialize(deserializer)?;
        let event = Event::from_parts(line.kind, line.detail).map_err(serde::de::Error::custom)?;
        Ok(EventRecord { tick: line.tick, subject: ActorId::new(line.subject, line.incarnation), event })
    }
}

/// Ordered list of records produced by a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<EventRecord>,
}

impl Trace {
    pub fn new(records: Vec<EventRecord>) -> Self {
        Trace { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EventRecord> {
        self.records.iter()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.records.iter().filter(|r| r.kind() == kind).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("trace records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let records =
            text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Trace { records })
    }

    /// Hex SHA-256 of the serialized trace.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_jsonl().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl<'a> IntoIterator for &'a Trace {
    type Item = &'a EventRecord;
    type IntoIter = std::slice::Iter<'a, EventRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
