//! Custom supervision strategies: version fallback, preemptive restarts from
//! domain-event statistics, healer actors, and load-balancing routers.
//!
//! Plugins are looked up by name from a strategy's `plugins` list and
//! consulted before the built-in decider. A plugin either answers with a
//! [`Directive`], asks for an [`ExtendedAction`], or defers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actor::{BehaviorOutcome, BehaviorSpec, Effects};
use crate::ids::{ActorPath, Fingerprint, Payload, Tick};
use crate::registry::{Registry, VersionId, VersionStatus};
use crate::supervision::{Directive, FailureRecord, RestartHistory};

/// Payload a healer sends its supervisor when the patient may resume.
pub const HEALED: &str = "healed";
/// Payload a healer sends when it could not help.
pub const GIVE_UP: &str = "give-up";

/// What the supervisor knows about one child when a plugin is consulted.
#[derive(Clone, Debug, Default)]
pub struct ChildHistory {
    pub restarts: RestartHistory,
    pub version: Option<VersionId>,
    /// Failure ticks of `version` across this supervisor's children,
    /// including the failure being decided.
    pub version_failures: Vec<Tick>,
    /// Healers spawned for this child.
    pub heals: Vec<Tick>,
    pub window: Tick,
}

impl ChildHistory {
    fn in_window(ticks: &[Tick], now: Tick, window: Tick) -> usize {
        let from = now.saturating_sub(window);
        ticks.iter().filter(|&&t| t >= from && t <= now).count()
    }
}

#[derive(Clone, Debug)]
pub enum ExtendedAction {
    FallbackToVersion(VersionId),
    SpawnHealer(BehaviorSpec),
    QuarantineMessage(Fingerprint),
}

#[derive(Clone, Debug)]
pub enum PluginDecision {
    Directive(Directive),
    Action(ExtendedAction),
    Defer,
    /// Defer, and leave an alert in the trace.
    DeferWithAlert(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreemptiveAction {
    PreemptiveRestart(ActorPath),
    RaiseAlert(String),
    ThrottleSender(ActorPath),
}

impl fmt::Display for PreemptiveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreemptiveAction::PreemptiveRestart(p) => write!(f, "preemptive-restart {p}"),
            PreemptiveAction::RaiseAlert(r) => write!(f, "alert {r}"),
            PreemptiveAction::ThrottleSender(p) => write!(f, "throttle {p}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainEventKind {
    Handled,
    DomainError,
    Failed,
}

/// One observation in a child's recent history, as seen by preemptive plugins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainEvent {
    pub actor: ActorPath,
    pub tick: Tick,
    pub kind: DomainEventKind,
}

pub trait CustomStrategyPlugin: Send + Sync {
    fn name(&self) -> &str;

    fn on_failure(&self, _failure: &FailureRecord, _history: &ChildHistory, _registry: &Registry) -> PluginDecision {
        PluginDecision::Defer
    }

    fn on_domain_events(&self, _window: &[DomainEvent]) -> Option<PreemptiveAction> {
        None
    }

    /// Span of ticks of domain events the plugin wants to see.
    fn domain_window(&self) -> Option<Tick> {
        None
    }
}

// ---------------------------------------------------------------------------
// Fallback
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FallbackOutcome {
    Fallback(VersionId),
    Defer,
    /// Threshold reached but nothing older to fall back to.
    NoOlderVersion(VersionId),
}

/// Falls back to the newest older, not rolled-back version once the failing
/// child's version has failed `threshold` times inside the window.
pub fn fallback_on_failure(
    failure: &FailureRecord,
    history: &ChildHistory,
    registry: &Registry,
    threshold: u32,
) -> FallbackOutcome {
    let Some(version) = &history.version else {
        return FallbackOutcome::Defer;
    };
    let failures = ChildHistory::in_window(&history.version_failures, failure.at, history.window);
    if (failures as u32) < threshold {
        return FallbackOutcome::Defer;
    }
    let older = registry
        .versions(&version.type_name)
        .iter()
        .rev()
        .filter(|r| r.id.ordinal < version.ordinal)
        .find(|r| r.status != VersionStatus::RolledBack)
        .map(|r| r.id.clone());
    match older {
        Some(v) => FallbackOutcome::Fallback(v),
        None => FallbackOutcome::NoOlderVersion(version.clone()),
    }
}

#[derive(Clone, Debug)]
pub struct FallbackPlugin {
    pub threshold: u32,
}

impl Default for FallbackPlugin {
    fn default() -> Self {
        FallbackPlugin { threshold: 3 }
    }
}

impl CustomStrategyPlugin for FallbackPlugin {
    fn name(&self) -> &str {
        "fallback"
    }

    fn on_failure(&self, failure: &FailureRecord, history: &ChildHistory, registry: &Registry) -> PluginDecision {
        match fallback_on_failure(failure, history, registry, self.threshold) {
            FallbackOutcome::Fallback(v) => PluginDecision::Action(ExtendedAction::FallbackToVersion(v)),
            FallbackOutcome::Defer => PluginDecision::Defer,
            FallbackOutcome::NoOlderVersion(v) => PluginDecision::DeferWithAlert(format!("no version older than {v}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Preemptive
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreemptiveConfig {
    /// Domain-error fraction that must be exceeded.
    pub rho: f64,
    /// Minimum number of events before the fraction is trusted.
    pub min_events: u32,
    pub window: Tick,
}

impl Default for PreemptiveConfig {
    fn default() -> Self {
        PreemptiveConfig { rho: 0.5, min_events: 5, window: 50 }
    }
}

/// Domain-error fraction rule. Actors that failed inside the window are
/// left to ordinary supervision.
pub fn evaluate_preemptive(cfg: &PreemptiveConfig, events: &[DomainEvent]) -> Option<PreemptiveAction> {
    let mut per_actor: BTreeMap<&ActorPath, (u32, u32, bool)> = BTreeMap::new();
    for e in events {
        let entry = per_actor.entry(&e.actor).or_default();
        match e.kind {
            DomainEventKind::Handled => entry.0 += 1,
            DomainEventKind::DomainError => {
                entry.0 += 1;
                entry.1 += 1;
            }
            DomainEventKind::Failed => entry.2 = true,
        }
    }
    per_actor
        .into_iter()
        .find(|(_, (total, errors, failed))| {
            !failed && *total >= cfg.min_events && f64::from(*errors) / f64::from(*total) > cfg.rho
        })
        .map(|(actor, _)| PreemptiveAction::PreemptiveRestart(actor.clone()))
}

#[derive(Clone, Debug, Default)]
pub struct PreemptivePlugin {
    pub config: PreemptiveConfig,
}

impl CustomStrategyPlugin for PreemptivePlugin {
    fn name(&self) -> &str {
        "preemptive"
    }

    fn on_domain_events(&self, window: &[DomainEvent]) -> Option<PreemptiveAction> {
        evaluate_preemptive(&self.config, window)
    }

    fn domain_window(&self) -> Option<Tick> {
        Some(self.config.window)
    }
}

// ---------------------------------------------------------------------------
// Healer
// ---------------------------------------------------------------------------

/// Spawns a healer sibling for the failed child. After `max_heals` healers
/// inside the window it defers to the decider.
#[derive(Clone, Debug)]
pub struct HealerPlugin {
    pub healer: BehaviorSpec,
    pub max_heals: u32,
}

impl HealerPlugin {
    pub fn new(healer: BehaviorSpec) -> Self {
        HealerPlugin { healer, max_heals: 3 }
    }
}

impl Default for HealerPlugin {
    fn default() -> Self {
        HealerPlugin::new(healer_behavior(true))
    }
}

impl CustomStrategyPlugin for HealerPlugin {
    fn name(&self) -> &str {
        "healer"
    }

    fn on_failure(&self, failure: &FailureRecord, history: &ChildHistory, _registry: &Registry) -> PluginDecision {
        if ChildHistory::in_window(&history.heals, failure.at, history.window) as u32 >= self.max_heals {
            return PluginDecision::Defer;
        }
        PluginDecision::Action(ExtendedAction::SpawnHealer(self.healer.clone()))
    }
}

/// Healer that answers its first message with [`HEALED`] (or [`GIVE_UP`])
/// to its parent.
pub fn healer_behavior(heals: bool) -> BehaviorSpec {
    BehaviorSpec::new("healer", serde_json::Value::Null, move |_, _, ctx| {
        let Some(parent) = ctx.parent().cloned() else {
            return BehaviorOutcome::keep();
        };
        Effects::new().send(parent, Payload::from(if heals { HEALED } else { GIVE_UP })).into()
    })
}

// ---------------------------------------------------------------------------
// Routers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutingPolicy {
    RoundRobin,
    LeastMailbox,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterSpec {
    pub policy: RoutingPolicy,
    pub targets: Vec<ActorPath>,
}

/// Router plus its round-robin cursor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouterState {
    pub spec: RouterSpec,
    cursor: usize,
}

impl RouterState {
    pub fn new(spec: RouterSpec) -> Self {
        RouterState { spec, cursor: 0 }
    }
}

/// What a router may know about its targets.
pub trait RouteView {
    fn is_live(&self, path: &ActorPath) -> bool;
    fn mailbox_len(&self, path: &ActorPath) -> usize;
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("all router targets are dead")]
    AllTargetsDead,
}

pub fn route(router: &mut RouterState, view: &impl RouteView) -> Result<ActorPath, RouteError> {
    let targets = &router.spec.targets;
    match router.spec.policy {
        RoutingPolicy::RoundRobin => {
            for step in 0..targets.len() {
                let idx = (router.cursor + step) % targets.len();
                if view.is_live(&targets[idx]) {
                    router.cursor = idx + 1;
                    return Ok(targets[idx].clone());
                }
            }
            Err(RouteError::AllTargetsDead)
        }
        RoutingPolicy::LeastMailbox => targets
            .iter()
            .filter(|t| view.is_live(t))
            .min_by(|a, b| view.mailbox_len(a).cmp(&view.mailbox_len(b)).then_with(|| a.cmp(b)))
            .cloned()
            .ok_or(RouteError::AllTargetsDead),
    }
}

// ---------------------------------------------------------------------------
// Plugin set
// ---------------------------------------------------------------------------

#[derive(Clone, Default)]
pub struct PluginSet {
    plugins: BTreeMap<String, Arc<dyn CustomStrategyPlugin>>,
}

impl PluginSet {
    pub fn empty() -> Self {
        PluginSet::default()
    }

    /// `fallback`, `preemptive` and `healer` with default settings.
    pub fn standard() -> Self {
        let mut set = PluginSet::empty();
        set.insert(Arc::new(FallbackPlugin::default()));
        set.insert(Arc::new(PreemptivePlugin::default()));
        set.insert(Arc::new(HealerPlugin::default()));
        set
    }

    /// Registers (or replaces) a plugin under its own name.
    pub fn insert(&mut self, plugin: Arc<dyn CustomStrategyPlugin>) {
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn CustomStrategyPlugin>> {
        self.plugins.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.plugins.keys().map(String::as_str)
    }
}

impl fmt::Debug for PluginSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.plugins.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ActorId;
    use crate::supervision::FaultKind;
    use std::collections::BTreeSet;

    fn noop(name: &str) -> BehaviorSpec {
        BehaviorSpec::new(name, serde_json::Value::Null, |_, _, _| BehaviorOutcome::keep())
    }

    fn registry_with(versions: u32, active: u32) -> Registry {
        let mut r = Registry::new();
        for _ in 0..versions {
            r.register_version("worker", noop("worker")).unwrap();
        }
        r.activate(&VersionId::new("worker", active)).unwrap();
        r
    }

    fn failure_at(at: Tick) -> FailureRecord {
        FailureRecord {
            id: 1,
            child: ActorId::new(ActorPath::resolve("sup/w").unwrap(), 0),
            fault: FaultKind::HandlerPanic,
            trigger: None,
            at,
            restart_count_in_window: 0,
        }
    }

    fn history(version: u32, failures: &[Tick]) -> ChildHistory {
        ChildHistory {
            version: Some(VersionId::new("worker", version)),
            version_failures: failures.to_vec(),
            window: 100,
            ..ChildHistory::default()
        }
    }

    #[test]
    fn fallback_threshold_rule() {
        let reg = registry_with(2, 2);
        assert_eq!(
            fallback_on_failure(&failure_at(10), &history(2, &[4, 7, 10]), &reg, 3),
            FallbackOutcome::Fallback(VersionId::new("worker", 1))
        );
        assert_eq!(fallback_on_failure(&failure_at(10), &history(2, &[7, 10]), &reg, 3), FallbackOutcome::Defer);
    }

    #[test]
    fn fallback_without_older_version_alerts() {
        let reg = registry_with(1, 1);
        assert_eq!(
            fallback_on_failure(&failure_at(10), &history(1, &[1, 2, 3, 4, 10]), &reg, 3),
            FallbackOutcome::NoOlderVersion(VersionId::new("worker", 1))
        );
        let plugin = FallbackPlugin::default();
        assert!(matches!(
            plugin.on_failure(&failure_at(10), &history(1, &[1, 2, 3, 4, 10]), &reg),
            PluginDecision::DeferWithAlert(_)
        ));
    }

    #[test]
    fn fallback_ignores_failures_outside_window() {
        let reg = registry_with(2, 2);
        assert_eq!(fallback_on_failure(&failure_at(500), &history(2, &[1, 2, 500]), &reg, 3), FallbackOutcome::Defer);
    }

    fn events(errors: usize, total: usize) -> Vec<DomainEvent> {
        let actor = ActorPath::resolve("a").unwrap();
        (0..total)
            .map(|i| DomainEvent {
                actor: actor.clone(),
                tick: i as Tick,
                kind: if i < errors { DomainEventKind::DomainError } else { DomainEventKind::Handled },
            })
            .collect()
    }

    #[test]
    fn preemptive_rule() {
        let cfg = PreemptiveConfig::default();
        assert_eq!(
            evaluate_preemptive(&cfg, &events(8, 10)),
            Some(PreemptiveAction::PreemptiveRestart(ActorPath::resolve("a").unwrap()))
        );
        assert_eq!(evaluate_preemptive(&cfg, &events(1, 10)), None);
        assert_eq!(evaluate_preemptive(&cfg, &events(3, 4)), None);
        // exactly rho is not enough
        assert_eq!(evaluate_preemptive(&cfg, &events(5, 10)), None);
    }

    #[test]
    fn preemptive_never_after_failure_in_window() {
        let mut ev = events(8, 10);
        ev.push(DomainEvent { actor: ActorPath::resolve("a").unwrap(), tick: 3, kind: DomainEventKind::Failed });
        assert_eq!(evaluate_preemptive(&PreemptiveConfig::default(), &ev), None);
    }

    struct View {
        live: BTreeSet<ActorPath>,
        mailboxes: BTreeMap<ActorPath, usize>,
    }

    impl RouteView for View {
        fn is_live(&self, path: &ActorPath) -> bool {
            self.live.contains(path)
        }
        fn mailbox_len(&self, path: &ActorPath) -> usize {
            self.mailboxes.get(path).copied().unwrap_or(0)
        }
    }

    fn abc() -> Vec<ActorPath> {
        ["a", "b", "c"].iter().map(|n| ActorPath::resolve(n).unwrap()).collect()
    }

    #[test]
    fn round_robin_cycles_and_skips_dead() {
        let targets = abc();
        let mut view = View { live: targets.iter().cloned().collect(), mailboxes: BTreeMap::new() };
        let mut router = RouterState::new(RouterSpec { policy: RoutingPolicy::RoundRobin, targets: targets.clone() });
        let picks: Vec<_> = (0..4).map(|_| route(&mut router, &view).unwrap()).collect();
        assert_eq!(picks, vec![targets[0].clone(), targets[1].clone(), targets[2].clone(), targets[0].clone()]);
        view.live.remove(&targets[1]);
        assert_eq!(route(&mut router, &view).unwrap(), targets[2]);
        view.live.clear();
        assert_eq!(route(&mut router, &view), Err(RouteError::AllTargetsDead));
    }

    #[test]
    fn least_mailbox_breaks_ties_by_path() {
        let targets = abc();
        let view = View {
            live: targets.iter().cloned().collect(),
            mailboxes: targets.iter().cloned().zip([5, 2, 2]).collect(),
        };
        let mut router = RouterState::new(RouterSpec { policy: RoutingPolicy::LeastMailbox, targets: targets.clone() });
        assert_eq!(route(&mut router, &view).unwrap(), targets[1]);
    }
}
