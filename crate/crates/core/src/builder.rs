//! From fragilities to improvements: the remedy catalog, plan construction,
//! strategy changes applied to a live system, and gated version rollouts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::extensions::RoutingPolicy;
use crate::ids::{stable_hash, ActorPath, Fingerprint};
use crate::learner::{Fragility, FragilityReport, Pattern};
use crate::registry::{Registry, RegistryError, VersionId, VersionStatus};
use crate::stressor::ErrorEvent;
use crate::supervision::{Directive, FaultKind};
use crate::system::{System, SystemError};
use crate::trace::{Event, EventRecord};

/// One edit to a supervisor's strategy or to the topology under it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "kebab-case")]
pub enum StrategyChange {
    /// Dead-letter envelopes with this payload before they reach a child.
    Quarantine {
        fingerprint: Fingerprint,
    },
    /// Decider entry; `fault: None` replaces the fallback directive.
    SetDirective {
        fault: Option<FaultKind>,
        directive: Directive,
    },
    AttachPlugin {
        plugin: String,
    },
    ScaleIntensity {
        factor: u32,
    },
    ScaleMailbox {
        target: ActorPath,
        factor: u32,
    },
    InsertRouter {
        target: ActorPath,
        policy: RoutingPolicy,
        replicas: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetedChange {
    pub supervisor: ActorPath,
    #[serde(flatten)]
    pub change: StrategyChange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ImprovementKind {
    External { changes: Vec<TargetedChange> },
    Internal { from: Option<VersionId>, to: VersionId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    #[serde(flatten)]
    pub kind: ImprovementKind,
    pub addresses: Fragility,
    pub rationale: String,
}

impl Improvement {
    pub fn is_external(&self) -> bool {
        matches!(self.kind, ImprovementKind::External { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSchedule {
    pub fractions: Vec<f64>,
}

impl RolloutSchedule {
    pub fn new(fractions: Vec<f64>) -> Result<Self, BuildError> {
        let increasing = fractions.windows(2).all(|w| w[0] < w[1]);
        let bounded = fractions.iter().all(|f| *f > 0.0 && *f <= 1.0);
        if fractions.last() != Some(&1.0) || !increasing || !bounded {
            return Err(BuildError::InvalidSchedule(fractions));
        }
        Ok(RolloutSchedule { fractions })
    }
}

impl Default for RolloutSchedule {
    fn default() -> Self {
        RolloutSchedule { fractions: vec![0.25, 0.5, 1.0] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImprovementPlan {
    pub improvements: Vec<Improvement>,
    pub rollout: RolloutSchedule,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ImprovementPlan {
    pub fn is_empty(&self) -> bool {
        self.improvements.is_empty()
    }
}

/// What to do about one fragility pattern.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "remedy", rename_all = "kebab-case")]
pub enum Remedy {
    Quarantine,
    /// Move to the newest registered version above the failing one, if any.
    UpgradeVersion,
    RestartWithFallback,
    RouteAndGrow {
        #[serde(default = "default_replicas")]
        replicas: u32,
        #[serde(default = "default_capacity_factor")]
        capacity_factor: u32,
    },
    ResumeOnLatency,
    RaiseIntensity {
        #[serde(default = "default_intensity_factor")]
        factor: u32,
    },
}

fn default_replicas() -> u32 {
    4
}

fn default_capacity_factor() -> u32 {
    8
}

fn default_intensity_factor() -> u32 {
    2
}

/// Pattern name to remedies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub entries: BTreeMap<String, Vec<Remedy>>,
}

impl Default for Catalog {
    fn default() -> Self {
        let entries = [
            ("deterministic-payload-crash", vec![Remedy::Quarantine, Remedy::UpgradeVersion]),
            ("recurrent-crash", vec![Remedy::RestartWithFallback]),
            (
                "overload-collapse",
                vec![Remedy::RouteAndGrow { replicas: default_replicas(), capacity_factor: default_capacity_factor() }],
            ),
            ("latency-sensitivity", vec![Remedy::ResumeOnLatency]),
            ("escalation-hotspot", vec![Remedy::RaiseIntensity { factor: default_intensity_factor() }]),
        ];
        Catalog { entries: entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

impl Catalog {
    pub fn empty() -> Self {
        Catalog { entries: BTreeMap::new() }
    }

    pub fn with(mut self, pattern: &str, remedies: Vec<Remedy>) -> Self {
        self.entries.insert(pattern.to_string(), remedies);
        self
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("supervisor `{0}` not found or stopped")]
    TargetNotFound(ActorPath),
    #[error("version {0} is not registered")]
    VersionMissing(VersionId),
    #[error("improvement is not {0}")]
    WrongKind(&'static str),
    #[error("rollout fractions must increase strictly and end at 1.0, got {0:?}")]
    InvalidSchedule(Vec<f64>),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    System(#[from] SystemError),
}

fn supervisors(fragility: &Fragility) -> Vec<ActorPath> {
    fragility.locations.iter().filter_map(ActorPath::parent).collect::<BTreeSet<_>>().into_iter().collect()
}

fn external(fragility: &Fragility, changes: Vec<TargetedChange>, rationale: String) -> Option<Improvement> {
    (!changes.is_empty()).then(|| Improvement {
        kind: ImprovementKind::External { changes },
        addresses: fragility.clone(),
        rationale,
    })
}

fn remedy_improvement(remedy: &Remedy, fragility: &Fragility, registry: &Registry) -> Option<Improvement> {
    let per_supervisor = |changes: &dyn Fn() -> Vec<StrategyChange>| -> Vec<TargetedChange> {
        supervisors(fragility)
            .into_iter()
            .flat_map(|supervisor| {
                changes().into_iter().map(move |change| TargetedChange { supervisor: supervisor.clone(), change })
            })
            .collect()
    };
    match (remedy, &fragility.pattern) {
        (Remedy::Quarantine, Pattern::DeterministicPayloadCrash { fingerprint }) => external(
            fragility,
            per_supervisor(&|| vec![StrategyChange::Quarantine { fingerprint: *fingerprint }]),
            format!(
                "payload {fingerprint} crashes {} deterministically; dead-letter it before delivery",
                fragility.subject
            ),
        ),
        (Remedy::UpgradeVersion, _) => {
            let current = fragility.subject.version?;
            let newest = registry
                .versions(&fragility.subject.type_name)
                .iter()
                .rev()
                .find(|r| r.id.ordinal > current && r.status != VersionStatus::RolledBack)?;
            Some(Improvement {
                kind: ImprovementKind::Internal {
                    from: Some(VersionId::new(fragility.subject.type_name.clone(), current)),
                    to: newest.id.clone(),
                },
                addresses: fragility.clone(),
                rationale: format!("roll out {} in place of {}", newest.id, fragility.subject),
            })
        }
        (Remedy::RestartWithFallback, _) => external(
            fragility,
            per_supervisor(&|| {
                vec![
                    StrategyChange::SetDirective { fault: None, directive: Directive::Restart },
                    StrategyChange::AttachPlugin { plugin: "fallback".into() },
                ]
            }),
            format!("{} keeps crashing; restart it and fall back to an older version", fragility.subject),
        ),
        (Remedy::RouteAndGrow { replicas, capacity_factor }, _) => {
            let changes = fragility
                .locations
                .iter()
                .filter_map(|target| {
                    let supervisor = target.parent()?;
                    Some([
                        TargetedChange {
                            supervisor: supervisor.clone(),
                            change: StrategyChange::ScaleMailbox { target: target.clone(), factor: *capacity_factor },
                        },
                        TargetedChange {
                            supervisor,
                            change: StrategyChange::InsertRouter {
                                target: target.clone(),
                                policy: RoutingPolicy::LeastMailbox,
                                replicas: *replicas,
                            },
                        },
                    ])
                })
                .flatten()
                .collect();
            external(
                fragility,
                changes,
                format!("{} overflows its mailbox; spread load and grow the mailbox", fragility.subject),
            )
        }
        (Remedy::ResumeOnLatency, _) => external(
            fragility,
            per_supervisor(&|| {
                vec![
                    StrategyChange::SetDirective { fault: Some(FaultKind::Timeout), directive: Directive::Resume },
                    StrategyChange::SetDirective {
                        fault: Some(FaultKind::InjectedDelay),
                        directive: Directive::Resume,
                    },
                    StrategyChange::AttachPlugin { plugin: "preemptive".into() },
                ]
            }),
            format!("{} fails on late envelopes; resume instead of restarting", fragility.subject),
        ),
        (Remedy::RaiseIntensity { factor }, Pattern::EscalationHotspot { path }) => external(
            fragility,
            vec![TargetedChange {
                supervisor: path.clone(),
                change: StrategyChange::ScaleIntensity { factor: *factor },
            }],
            format!("failures keep escalating through {path}; allow more restarts there"),
        ),
        _ => None,
    }
}

/// One improvement per applicable remedy, in report order.
pub fn build_improvements(
    report: &FragilityReport,
    catalog: &Catalog,
    registry: &Registry,
    rollout: RolloutSchedule,
) -> ImprovementPlan {
    let mut plan = ImprovementPlan { improvements: Vec::new(), rollout, warnings: Vec::new() };
    for fragility in &report.fragilities {
        let Some(remedies) = catalog.entries.get(fragility.pattern.name()) else {
            plan.warnings.push(format!("no remedy for {} on {}", fragility.pattern, fragility.subject));
            continue;
        };
        plan.improvements.extend(remedies.iter().filter_map(|r| remedy_improvement(r, fragility, registry)));
    }
    plan
}

/// Applies an external improvement between scheduler steps. Every
/// supervisor must be live; nothing changes otherwise.
pub fn apply_external(system: &mut System, improvement: &Improvement) -> Result<Vec<EventRecord>, BuildError> {
    let ImprovementKind::External { changes } = &improvement.kind else {
        return Err(BuildError::WrongKind("external"));
    };
    for c in changes {
        if !system.is_live(&c.supervisor) {
            return Err(BuildError::TargetNotFound(c.supervisor.clone()));
        }
    }
    let start = system.trace().len();
    for c in changes {
        apply_change(system, c)?;
    }
    Ok(system.trace().records[start..].to_vec())
}

/// Applies one change and records it.
pub fn apply_change(system: &mut System, targeted: &TargetedChange) -> Result<(), BuildError> {
    let sup = &targeted.supervisor;
    match &targeted.change {
        StrategyChange::Quarantine { fingerprint } => {
            system.strategy_mut(sup)?.quarantine.insert(*fingerprint);
        }
        StrategyChange::SetDirective { fault, directive } => {
            let decider = &mut system.strategy_mut(sup)?.decider;
            match fault {
                Some(f) => {
                    decider.table.insert(*f, *directive);
                }
                None => {
                    decider.table.clear();
                    decider.otherwise = *directive;
                }
            }
        }
        StrategyChange::AttachPlugin { plugin } => {
            let plugins = &mut system.strategy_mut(sup)?.plugins;
            if !plugins.contains(plugin) {
                plugins.push(plugin.clone());
            }
        }
        StrategyChange::ScaleIntensity { factor } => {
            let strategy = system.strategy_mut(sup)?;
            strategy.max_restarts = strategy.max_restarts.saturating_mul((*factor).max(1));
        }
        StrategyChange::ScaleMailbox { target, factor } => {
            let current = system.mailbox_capacity(target).ok_or_else(|| BuildError::TargetNotFound(target.clone()))?;
            system.set_mailbox_capacity(target, current.saturating_mul((*factor).max(1) as usize))?;
        }
        StrategyChange::InsertRouter { target, policy, replicas } => {
            system.insert_router(target, *policy, *replicas)?;
        }
    }
    system.record_strategy_change(sup, targeted.change.clone());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutStatus {
    InProgress,
    Promoted,
    RolledBack,
}

/// Gradual activation of a new version across the live instances of its
/// type. Instances are ranked by a stable hash of their path; at fraction
/// `f` the first `ceil(f * n)` of them run the new version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutHandle {
    pub from: VersionId,
    pub to: VersionId,
    pub fractions: Vec<f64>,
    /// Fault kinds that break the gate.
    pub gate: Vec<FaultKind>,
    pub ranked: Vec<ActorPath>,
    pub switched: Vec<ActorPath>,
    pub step: usize,
    pub status: RolloutStatus,
}

/// Rank used for rollout selection.
pub fn rollout_rank(path: &ActorPath) -> u64 {
    stable_hash(&[b"rollout", path.as_str().as_bytes()])
}

/// Starts a rollout of an internal improvement. Nothing switches until the
/// first [`RolloutHandle::advance`].
pub fn apply_internal(
    system: &mut System,
    improvement: &Improvement,
    schedule: &RolloutSchedule,
) -> Result<RolloutHandle, BuildError> {
    let ImprovementKind::Internal { to, .. } = &improvement.kind else {
        return Err(BuildError::WrongKind("internal"));
    };
    if system.registry().record(to).is_err() {
        return Err(BuildError::VersionMissing(to.clone()));
    }
    let from = system.registry_mut().begin_rollout(to, 0.0)?;
    let mut ranked = system.live_instances_of(&to.type_name);
    ranked.sort_by_key(|p| (rollout_rank(p), p.clone()));
    let gate = FaultKind::ALL.into_iter().filter(|f| improvement.addresses.pattern.matches_fault(*f)).collect();
    Ok(RolloutHandle {
        from,
        to: to.clone(),
        fractions: schedule.fractions.clone(),
        gate,
        ranked,
        switched: Vec::new(),
        step: 0,
        status: RolloutStatus::InProgress,
    })
}

impl RolloutHandle {
    pub fn is_last_step(&self) -> bool {
        self.step >= self.fractions.len()
    }

    /// Switches the next slice of instances. Returns the newly switched paths.
    pub fn advance(&mut self, system: &mut System) -> Result<Vec<ActorPath>, BuildError> {
        let Some(&fraction) = self.fractions.get(self.step) else { return Ok(Vec::new()) };
        let want = ((fraction * self.ranked.len() as f64).ceil() as usize).min(self.ranked.len());
        let fresh: Vec<ActorPath> = self.ranked[self.switched.len().min(want)..want].to_vec();
        for path in &fresh {
            system.registry_mut().pin(&self.to.type_name, path.clone(), self.to.ordinal)?;
            if system.is_live(path) {
                system.redeploy(path, "rollout")?;
            }
        }
        system.registry_mut().set_rollout_fraction(&self.to.type_name, fraction)?;
        self.switched.extend(fresh.iter().cloned());
        self.step += 1;
        Ok(fresh)
    }

    /// True when no new-version instance failed with a gated fault.
    pub fn gate_holds(&self, records: &[EventRecord]) -> bool {
        !records.iter().any(|r| match &r.event {
            Event::Failed(d) => {
                d.type_name == self.to.type_name && d.version == Some(self.to.ordinal) && self.gate.contains(&d.fault)
            }
            _ => false,
        })
    }

    /// Same check over error events, for sessions run in a sandbox.
    pub fn gate_holds_events(&self, events: &[ErrorEvent]) -> bool {
        !events.iter().any(|e| e.version.as_ref() == Some(&self.to) && self.gate.contains(&e.fault))
    }

    pub fn promote(&mut self, system: &mut System) -> Result<(), BuildError> {
        system.registry_mut().complete_rollout(&self.to.type_name)?;
        for path in system.live_instances_of(&self.to.type_name) {
            system.redeploy(&path, "rollout")?;
        }
        self.status = RolloutStatus::Promoted;
        Ok(())
    }

    /// Every switched instance goes back to the version it ran before.
    pub fn rollback(&mut self, system: &mut System) -> Result<(), BuildError> {
        system.registry_mut().rollback(&self.to.type_name)?;
        for path in &self.switched {
            if system.is_live(path) {
                system.redeploy(path, "rollback")?;
            }
        }
        let root = ActorPath::root();
        system.record_alert(&root, format!("rollout of {} rolled back to {}", self.to, self.from));
        self.status = RolloutStatus::RolledBack;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ActorId;
    use crate::learner::Subject;

    fn fragility(pattern: Pattern) -> Fragility {
        Fragility {
            subject: Subject { type_name: "worker".into(), version: Some(1) },
            pattern,
            confidence: 1.0,
            evidence: 5,
            locations: vec![ActorPath::resolve("sup/w").unwrap()],
        }
    }

    fn report(fragilities: Vec<Fragility>) -> FragilityReport {
        FragilityReport { analyzer: "rules".into(), sessions: vec![], generated_at: 0, fragilities }
    }

    #[test]
    fn payload_crash_maps_to_quarantine() {
        let fp = Fingerprint::of_text("poison");
        let plan = build_improvements(
            &report(vec![fragility(Pattern::DeterministicPayloadCrash { fingerprint: fp })]),
            &Catalog::default(),
            &Registry::new(),
            RolloutSchedule::default(),
        );
        assert_eq!(plan.improvements.len(), 1);
        assert_eq!(
            plan.improvements[0].kind,
            ImprovementKind::External {
                changes: vec![TargetedChange {
                    supervisor: ActorPath::resolve("sup").unwrap(),
                    change: StrategyChange::Quarantine { fingerprint: fp },
                }]
            }
        );
    }

    #[test]
    fn empty_report_empty_plan() {
        let plan =
            build_improvements(&report(vec![]), &Catalog::default(), &Registry::new(), RolloutSchedule::default());
        assert!(plan.is_empty() && plan.warnings.is_empty());
    }

    #[test]
    fn unmapped_pattern_is_skipped_with_warning() {
        let plan = build_improvements(
            &report(vec![fragility(Pattern::LatencySensitivity { delay_ticks: 3 })]),
            &Catalog::empty(),
            &Registry::new(),
            RolloutSchedule::default(),
        );
        assert!(plan.is_empty());
        assert_eq!(plan.warnings.len(), 1);
    }

    #[test]
    fn schedules_must_end_at_one() {
        assert!(RolloutSchedule::new(vec![0.5, 1.0]).is_ok());
        assert!(RolloutSchedule::new(vec![0.5, 0.5, 1.0]).is_err());
        assert!(RolloutSchedule::new(vec![0.5]).is_err());
    }

    #[test]
    fn apply_external_to_stopped_supervisor() {
        let mut sys = System::new(Default::default());
        let imp = Improvement {
            kind: ImprovementKind::External {
                changes: vec![TargetedChange {
                    supervisor: ActorPath::resolve("gone").unwrap(),
                    change: StrategyChange::AttachPlugin { plugin: "fallback".into() },
                }],
            },
            addresses: fragility(Pattern::RecurrentCrash { rate_per_100_ticks: 1.0 }),
            rationale: String::new(),
        };
        assert_eq!(
            apply_external(&mut sys, &imp),
            Err(BuildError::TargetNotFound(ActorPath::resolve("gone").unwrap()))
        );
        let _ = ActorId::new(ActorPath::root(), 0);
    }
}
