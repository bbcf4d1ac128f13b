//! Turns error logs into a ranked list of fragilities.
//!
//! The store keeps every ingested [`ErrorEvent`]; analyzers are pure
//! functions of the store. The default [`RuleAnalyzer`] mines five
//! patterns with a minimum support `s`:
//!
//! - many crashes of one subject share a payload fingerprint,
//! - a subject keeps crashing on unrelated payloads,
//! - mailbox overflows,
//! - timeouts and delayed deliveries,
//! - failures repeatedly escalated through one supervisor.
//!
//! Confidence is the share of the subject's failures that support the
//! pattern.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::{ActorPath, Fingerprint, Tick};
use crate::stressor::{ErrorEvent, ErrorLog};
use crate::supervision::FaultKind;

/// Behavior type and version a fragility is attributed to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subject {
    pub type_name: String,
    pub version: Option<u32>,
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.version {
            Some(v) => write!(f, "{}@v{v}", self.type_name),
            None => f.write_str(&self.type_name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "kebab-case")]
pub enum Pattern {
    DeterministicPayloadCrash {
        fingerprint: Fingerprint,
    },
    RecurrentCrash {
        rate_per_100_ticks: f64,
    },
    /// Smallest number of same-tick arrivals seen at an overflow.
    OverloadCollapse {
        threshold_per_tick: u32,
    },
    /// Smallest envelope age seen at a latency failure.
    LatencySensitivity {
        delay_ticks: Tick,
    },
    EscalationHotspot {
        path: ActorPath,
    },
}

impl Pattern {
    pub fn name(&self) -> &'static str {
        match self {
            Pattern::DeterministicPayloadCrash { .. } => "deterministic-payload-crash",
            Pattern::RecurrentCrash { .. } => "recurrent-crash",
            Pattern::OverloadCollapse { .. } => "overload-collapse",
            Pattern::LatencySensitivity { .. } => "latency-sensitivity",
            Pattern::EscalationHotspot { .. } => "escalation-hotspot",
        }
    }

    /// Whether a failure of kind `fault` counts against this pattern.
    pub fn matches_fault(&self, fault: FaultKind) -> bool {
        match self {
            Pattern::DeterministicPayloadCrash { .. } | Pattern::RecurrentCrash { .. } => fault.is_crash(),
            Pattern::OverloadCollapse { .. } => fault == FaultKind::MailboxOverflow,
            Pattern::LatencySensitivity { .. } => fault.is_latency(),
            Pattern::EscalationHotspot { .. } => true,
        }
    }

    fn sort_key(&self) -> (u8, String) {
        match self {
            Pattern::DeterministicPayloadCrash { fingerprint } => (0, fingerprint.to_string()),
            Pattern::RecurrentCrash { rate_per_100_ticks } => (1, format!("{rate_per_100_ticks:020.6}")),
            Pattern::OverloadCollapse { threshold_per_tick } => (2, format!("{threshold_per_tick:010}")),
            Pattern::LatencySensitivity { delay_ticks } => (3, format!("{delay_ticks:020}")),
            Pattern::EscalationHotspot { path } => (4, path.to_string()),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::DeterministicPayloadCrash { fingerprint } => write!(f, "{}({fingerprint})", self.name()),
            Pattern::RecurrentCrash { rate_per_100_ticks } => {
                write!(f, "{}({rate_per_100_ticks:.2}/100t)", self.name())
            }
            Pattern::OverloadCollapse { threshold_per_tick } => write!(f, "{}({threshold_per_tick}/t)", self.name()),
            Pattern::LatencySensitivity { delay_ticks } => write!(f, "{}({delay_ticks}t)", self.name()),
            Pattern::EscalationHotspot { path } => write!(f, "{}({path})", self.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fragility {
    pub subject: Subject,
    #[serde(flatten)]
    pub pattern: Pattern,
    pub confidence: f64,
    pub evidence: u32,
    /// Actors whose failures support the fragility, in path order.
    pub locations: Vec<ActorPath>,
}

impl Fragility {
    fn cmp_rank(&self, other: &Self) -> Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then_with(|| other.evidence.cmp(&self.evidence))
            .then_with(|| self.subject.cmp(&other.subject))
            .then_with(|| self.pattern.sort_key().cmp(&other.pattern.sort_key()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FragilityReport {
    pub analyzer: String,
    pub sessions: Vec<String>,
    pub generated_at: Tick,
    pub fragilities: Vec<Fragility>,
}

impl FragilityReport {
    pub fn new(
        analyzer: impl Into<String>,
        store: &ErrorStore,
        generated_at: Tick,
        mut fragilities: Vec<Fragility>,
    ) -> Self {
        fragilities.sort_by(Fragility::cmp_rank);
        FragilityReport { analyzer: analyzer.into(), sessions: store.sessions.clone(), generated_at, fragilities }
    }

    pub fn is_empty(&self) -> bool {
        self.fragilities.is_empty()
    }
}

/// Counter key: type, version, fault, fingerprint.
pub type CounterKey = (String, Option<u32>, FaultKind, Option<Fingerprint>);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorStore {
    events: Vec<ErrorEvent>,
    sessions: Vec<String>,
    counters: BTreeMap<CounterKey, u32>,
}

impl ErrorStore {
    pub fn new() -> Self {
        ErrorStore::default()
    }

    pub fn ingest(&mut self, log: &ErrorLog) {
        if log.events.is_empty() {
            return;
        }
        if !self.sessions.contains(&log.session) {
            self.sessions.push(log.session.clone());
        }
        for ev in &log.events {
            let key = (ev.type_name.clone(), ev.version.as_ref().map(|v| v.ordinal), ev.fault, ev.fingerprint);
            *self.counters.entry(key).or_default() += 1;
            self.events.push(ev.clone());
        }
    }

    pub fn events(&self) -> &[ErrorEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn counter(&self, key: &CounterKey) -> u32 {
        self.counters.get(key).copied().unwrap_or(0)
    }

    pub fn sessions(&self) -> &[String] {
        &self.sessions
    }
}

pub trait Analyzer: Send + Sync {
    fn analyze(&self, store: &ErrorStore, generated_at: Tick) -> FragilityReport;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleAnalyzer {
    pub min_support: u32,
}

impl Default for RuleAnalyzer {
    fn default() -> Self {
        RuleAnalyzer { min_support: 3 }
    }
}

fn subject_of(ev: &ErrorEvent) -> Subject {
    Subject { type_name: ev.type_name.clone(), version: ev.version.as_ref().map(|v| v.ordinal) }
}

fn locations<'a>(events: impl IntoIterator<Item = &'a ErrorEvent>) -> Vec<ActorPath> {
    events.into_iter().map(|e| e.actor.path.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

impl RuleAnalyzer {
    pub fn new(min_support: u32) -> Self {
        RuleAnalyzer { min_support }
    }

    fn per_subject(&self, subject: &Subject, events: &[&ErrorEvent], out: &mut Vec<Fragility>) {
        let s = self.min_support.max(1) as usize;
        let total = events.len() as f64;
        let crashes: Vec<&ErrorEvent> = events.iter().copied().filter(|e| e.fault.is_crash()).collect();

        // (a) shared payload among crashes
        let mut by_fp: BTreeMap<Fingerprint, Vec<&ErrorEvent>> = BTreeMap::new();
        for e in &crashes {
            if let Some(fp) = e.fingerprint {
                by_fp.entry(fp).or_default().push(e);
            }
        }
        let mut explained = BTreeSet::new();
        for (fp, hits) in &by_fp {
            if hits.len() >= s {
                explained.insert(*fp);
                out.push(Fragility {
                    subject: subject.clone(),
                    pattern: Pattern::DeterministicPayloadCrash { fingerprint: *fp },
                    confidence: hits.len() as f64 / crashes.len() as f64,
                    evidence: hits.len() as u32,
                    locations: locations(hits.iter().copied()),
                });
            }
        }

        // (b) crashes left unexplained by (a)
        let residual: Vec<&ErrorEvent> =
            crashes.iter().copied().filter(|e| e.fingerprint.is_none_or(|fp| !explained.contains(&fp))).collect();
        if residual.len() >= s {
            let first = residual.iter().map(|e| e.tick).min().unwrap_or(0);
            let last = residual.iter().map(|e| e.tick).max().unwrap_or(0);
            let span = (last - first + 1) as f64;
            out.push(Fragility {
                subject: subject.clone(),
                pattern: Pattern::RecurrentCrash { rate_per_100_ticks: residual.len() as f64 * 100.0 / span },
                confidence: residual.len() as f64 / crashes.len() as f64,
                evidence: residual.len() as u32,
                locations: locations(residual.iter().copied()),
            });
        }

        // (c) overflows
        let overflows: Vec<&ErrorEvent> =
            events.iter().copied().filter(|e| e.fault == FaultKind::MailboxOverflow).collect();
        if overflows.len() >= s {
            let threshold = overflows.iter().filter_map(|e| e.arrivals).min().unwrap_or(0);
            out.push(Fragility {
                subject: subject.clone(),
                pattern: Pattern::OverloadCollapse { threshold_per_tick: threshold },
                confidence: overflows.len() as f64 / total,
                evidence: overflows.len() as u32,
                locations: locations(overflows.iter().copied()),
            });
        }

        // (d) latency
        let slow: Vec<&ErrorEvent> = events.iter().copied().filter(|e| e.fault.is_latency()).collect();
        if slow.len() >= s {
            let delay = slow.iter().filter_map(|e| e.age).min().unwrap_or(0);
            out.push(Fragility {
                subject: subject.clone(),
                pattern: Pattern::LatencySensitivity { delay_ticks: delay },
                confidence: slow.len() as f64 / total,
                evidence: slow.len() as u32,
                locations: locations(slow.iter().copied()),
            });
        }
    }

    fn hotspots(&self, store: &ErrorStore, out: &mut Vec<Fragility>) {
        let s = self.min_support.max(1) as usize;
        let mut through: BTreeMap<&ActorPath, Vec<&ErrorEvent>> = BTreeMap::new();
        for ev in &store.events {
            for sup in ev.escalated_through.iter().collect::<BTreeSet<_>>() {
                through.entry(sup).or_default().push(ev);
            }
        }
        for (path, hits) in through {
            if hits.len() < s {
                continue;
            }
            // failures below the hotspot, escalated or not
            let below = store.events.iter().filter(|e| path.is_ancestor_of(&e.actor.path)).count().max(hits.len());
            let subject = hits
                .iter()
                .filter(|e| e.supervisor.as_ref() == Some(path))
                .map(|e| subject_of(e))
                .next()
                .unwrap_or_else(|| Subject { type_name: path.name().to_string(), version: None });
            out.push(Fragility {
                subject,
                pattern: Pattern::EscalationHotspot { path: path.clone() },
                confidence: hits.len() as f64 / below as f64,
                evidence: hits.len() as u32,
                locations: vec![path.clone()],
            });
        }
    }
}

impl Analyzer for RuleAnalyzer {
    fn analyze(&self, store: &ErrorStore, generated_at: Tick) -> FragilityReport {
        let mut by_subject: BTreeMap<Subject, Vec<&ErrorEvent>> = BTreeMap::new();
        for ev in &store.events {
            by_subject.entry(subject_of(ev)).or_default().push(ev);
        }
        let mut out = Vec::new();
        for (subject, events) in &by_subject {
            self.per_subject(subject, events, &mut out);
        }
        self.hotspots(store, &mut out);
        FragilityReport::new("rules", store, generated_at, out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LearnerError {
    #[error("an analyzer named `{0}` is already registered")]
    DuplicateAnalyzer(String),
    #[error("no analyzer named `{0}`")]
    UnknownAnalyzer(String),
}

/// Error store plus a registry of named analyzers.
#[derive(Clone)]
pub struct Learner {
    store: ErrorStore,
    analyzers: BTreeMap<String, Arc<dyn Analyzer>>,
    selected: String,
}

impl Learner {
    pub const DEFAULT: &'static str = "rules";

    pub fn new(rules: RuleAnalyzer) -> Self {
        let mut analyzers: BTreeMap<String, Arc<dyn Analyzer>> = BTreeMap::new();
        analyzers.insert(Self::DEFAULT.to_string(), Arc::new(rules));
        Learner { store: ErrorStore::new(), analyzers, selected: Self::DEFAULT.to_string() }
    }

    pub fn register_analyzer(
        &mut self,
        name: impl Into<String>,
        analyzer: Arc<dyn Analyzer>,
    ) -> Result<(), LearnerError> {
        let name = name.into();
        if self.analyzers.contains_key(&name) {
            return Err(LearnerError::DuplicateAnalyzer(name));
        }
        self.analyzers.insert(name, analyzer);
        Ok(())
    }

    pub fn select(&mut self, name: &str) -> Result<(), LearnerError> {
        if !self.analyzers.contains_key(name) {
            return Err(LearnerError::UnknownAnalyzer(name.to_string()));
        }
        self.selected = name.to_string();
        Ok(())
    }

    pub fn selected(&self) -> &str {
        &self.selected
    }

    pub fn ingest(&mut self, log: &ErrorLog) {
        self.store.ingest(log);
    }

    pub fn store(&self) -> &ErrorStore {
        &self.store
    }

    pub fn analyze(&self, generated_at: Tick) -> FragilityReport {
        let mut report = self.analyzers[&self.selected].analyze(&self.store, generated_at);
        report.analyzer = self.selected.clone();
        report
    }
}

impl Default for Learner {
    fn default() -> Self {
        Learner::new(RuleAnalyzer::default())
    }
}

impl fmt::Debug for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Learner")
            .field("events", &self.store.len())
            .field("analyzers", &self.analyzers.keys().collect::<Vec<_>>())
            .field("selected", &self.selected)
            .finish()
    }
}
