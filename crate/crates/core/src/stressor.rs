//! Fault injection: picking which actors to stress, installing fault hooks,
//! and collecting the resulting failures into an [`ErrorLog`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{ActorId, ActorPath, Fingerprint, Tick};
use crate::registry::VersionId;
use crate::supervision::{Directive, FaultKind};
use crate::system::{RunError, System};
use crate::trace::{Event, EventRecord};

fn surge_payload() -> String {
    "surge".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultType {
    /// The n-th envelope an actor picks up crashes it.
    CrashOnNthMessage {
        n: u64,
    },
    CrashOnPayload {
        fingerprint: Fingerprint,
    },
    DelayDelivery {
        ticks: Tick,
    },
    DropDelivery {
        probability: f64,
    },
    CorruptPayload {
        probability: f64,
    },
    /// `rate` extra envelopes per tick for `duration` ticks.
    LoadSurge {
        rate: u32,
        duration: u32,
        #[serde(default = "surge_payload")]
        payload: String,
    },
}

impl FaultType {
    pub fn name(&self) -> &'static str {
        match self {
            FaultType::CrashOnNthMessage { .. } => "crash-on-nth-message",
            FaultType::CrashOnPayload { .. } => "crash-on-payload",
            FaultType::DelayDelivery { .. } => "delay-delivery",
            FaultType::DropDelivery { .. } => "drop-delivery",
            FaultType::CorruptPayload { .. } => "corrupt-payload",
            FaultType::LoadSurge { .. } => "load-surge",
        }
    }

    pub fn validate(&self) -> Result<(), StressError> {
        let bad = |why: &str| Err(StressError::InvalidFault(format!("{}: {why}", self.name())));
        match *self {
            FaultType::CrashOnNthMessage { n: 0 } => bad("n must be at least 1"),
            FaultType::DropDelivery { probability } | FaultType::CorruptPayload { probability }
                if !(0.0..=1.0).contains(&probability) =>
            {
                bad("probability must lie in [0, 1]")
            }
            FaultType::LoadSurge { duration: 0, .. } => bad("duration must be at least 1"),
            FaultType::DelayDelivery { ticks: 0 } => bad("delay must be at least 1 tick"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(flatten)]
    pub fault: FaultType,
    /// Name of the random stream this fault draws from. Defaults to the
    /// fault's position in the session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    /// Tick offset, from injection, at which the fault becomes active.
    #[serde(default)]
    pub at: Tick,
}

impl FaultSpec {
    pub fn new(fault: FaultType) -> Self {
        FaultSpec { fault, stream: None, at: 0 }
    }

    pub fn at(mut self, offset: Tick) -> Self {
        self.at = offset;
        self
    }

    pub fn stream(mut self, label: impl Into<String>) -> Self {
        self.stream = Some(label.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum StressPolicy {
    HistoryBased { top_k: usize },
    CriticalityBased { critical: Vec<ActorPath> },
    Exhaustive,
}

impl StressPolicy {
    pub fn validate(&self) -> Result<(), StressError> {
        match self {
            StressPolicy::HistoryBased { top_k: 0 } => {
                Err(StressError::InvalidPolicy("top_k must be at least 1".into()))
            }
            StressPolicy::CriticalityBased { critical } if critical.is_empty() => {
                Err(StressError::InvalidPolicy("critical list is empty".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Environment {
    #[default]
    InPlace,
    /// Run on a copy of the system and throw the copy away.
    Sandbox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressSession {
    pub id: String,
    pub targets: Vec<ActorPath>,
    pub faults: Vec<FaultSpec>,
    pub environment: Environment,
    /// Hooks reach every descendant of each target.
    pub hierarchy: bool,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum StressError {
    #[error("stress target `{0}` not found or stopped")]
    TargetNotFound(ActorPath),
    #[error("stress snapshot has no actors")]
    EmptySnapshot,
    #[error("invalid fault {0}")]
    InvalidFault(String),
    #[error("invalid stress policy: {0}")]
    InvalidPolicy(String),
    #[error("tick budget exhausted with {} error events logged", partial.events.len())]
    TickBudgetExhausted { partial: ErrorLog },
}

/// One failure observed during a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub actor: ActorId,
    pub type_name: String,
    pub version: Option<VersionId>,
    pub fault: FaultKind,
    pub fingerprint: Option<Fingerprint>,
    pub tick: Tick,
    /// Directive the failure finally received, if any was recorded.
    pub directive: Option<Directive>,
    /// Extended action (fallback, healed, ...) that accompanied it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    pub supervisor: Option<ActorPath>,
    /// Supervisors that passed this failure upward, bottom first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub escalated_through: Vec<ActorPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorLog {
    pub session: String,
    pub events: Vec<ErrorEvent>,
}

impl ErrorLog {
    /// Error events for every Failed record in `records[start..]`.
    pub fn from_records(session: impl Into<String>, records: &[EventRecord], start: usize) -> ErrorLog {
        let mut outcome: BTreeMap<u64, (Option<Directive>, Option<String>)> = BTreeMap::new();
        let mut escalations: BTreeMap<u64, Vec<ActorPath>> = BTreeMap::new();
        for rec in &records[start..] {
            match &rec.event {
                Event::DirectiveApplied(d) => {
                    outcome.entry(d.failure).or_insert((Some(d.directive), d.action.clone()));
                }
                Event::Escalated(d) => {
                    escalations.entry(d.failure).or_default().push(d.supervisor.clone());
                    if d.halted {
                        outcome.entry(d.failure).or_insert((Some(Directive::Escalate), None));
                    }
                }
                _ => {}
            }
        }
        let events = records[start..]
            .iter()
            .filter_map(|rec| {
                let Event::Failed(d) = &rec.event else { return None };
                let mut through = escalations.get(&d.failure).cloned().unwrap_or_default();
                let (mut directive, action) = outcome.get(&d.failure).cloned().unwrap_or((None, None));
                if !through.is_empty() && directive != Some(Directive::Escalate) {
                    // the directive recorded belongs to the escalated-to supervisor
                    directive = Some(Directive::Escalate);
                }
                through.dedup();
                Some(ErrorEvent {
                    actor: rec.subject.clone(),
                    type_name: d.type_name.clone(),
                    version: d.version.map(|o| VersionId::new(d.type_name.clone(), o)),
                    fault: d.fault,
                    fingerprint: d.envelope.as_ref().map(|e| e.fingerprint),
                    tick: rec.tick,
                    directive,
                    action,
                    supervisor: rec.subject.path.parent(),
                    escalated_through: through,
                    age: d.age,
                    arrivals: d.arrivals,
                })
            })
            .collect();
        ErrorLog { session: session.into(), events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Targets chosen by a policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub targets: Vec<ActorPath>,
    /// HistoryBased had nothing to go on and fell back to Exhaustive.
    pub fell_back: bool,
}

pub fn select_targets(
    policy: &StressPolicy,
    system: &System,
    incidents: &[ErrorLog],
) -> Result<Selection, StressError> {
    policy.validate()?;
    let live: Vec<ActorPath> = system.live_actors().into_iter().filter(|p| !p.is_root()).collect();
    if live.is_empty() {
        return Err(StressError::EmptySnapshot);
    }
    let exhaustive = |fell_back| Selection { targets: live.clone(), fell_back };
    match policy {
        StressPolicy::Exhaustive => Ok(exhaustive(false)),
        StressPolicy::CriticalityBased { critical } => {
            let targets = critical.iter().filter(|p| system.is_live(p)).cloned().collect();
            Ok(Selection { targets, fell_back: false })
        }
        StressPolicy::HistoryBased { top_k } => {
            let mut counts: BTreeMap<&ActorPath, usize> = BTreeMap::new();
            for ev in incidents.iter().flat_map(|l| &l.events) {
                if system.is_live(&ev.actor.path) && !ev.actor.path.is_root() {
                    *counts.entry(&ev.actor.path).or_default() += 1;
                }
            }
            if counts.is_empty() {
                return Ok(exhaustive(true));
            }
            let mut ranked: Vec<_> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            Ok(Selection {
                targets: ranked.into_iter().take(*top_k).map(|(p, _)| p.clone()).collect(),
                fell_back: false,
            })
        }
    }
}

/// Installs the session's fault hooks on `system`.
pub fn inject(session: &StressSession, system: &mut System) -> Result<(), StressError> {
    for t in &session.targets {
        if !system.is_live(t) {
            return Err(StressError::TargetNotFound(t.clone()));
        }
    }
    for spec in &session.faults {
        spec.fault.validate()?;
    }
    let now = system.tick();
    for (i, spec) in session.faults.iter().enumerate() {
        let stream = spec.stream.clone().unwrap_or_else(|| format!("{}/{i}-{}", session.id, spec.fault.name()));
        system.install_fault(&spec.fault, &stream, &session.targets, session.hierarchy, now + spec.at);
    }
    Ok(())
}

/// Injects, runs until idle or out of budget, and collects the errors.
/// Sandbox sessions leave `system` untouched.
pub fn run_session(session: &StressSession, system: &mut System, budget: u64) -> Result<ErrorLog, StressError> {
    match session.environment {
        Environment::InPlace => run_on(session, system, budget),
        Environment::Sandbox => run_on(session, &mut system.clone(), budget),
    }
}

fn run_on(session: &StressSession, system: &mut System, budget: u64) -> Result<ErrorLog, StressError> {
    let start = system.trace().len();
    inject(session, system)?;
    let result = system.run_until_idle(budget.max(1));
    system.clear_faults();
    let log = ErrorLog::from_records(session.id.clone(), &system.trace().records, start);
    match result {
        Ok(_) => Ok(log),
        Err(RunError::TickBudgetExhausted { .. }) => Err(StressError::TickBudgetExhausted { partial: log }),
        Err(RunError::ZeroBudget) => unreachable!("budget clamped to at least 1"),
    }
}
