//! Built-in supervision: fault taxonomy, directives, strategy scopes, the
//! decision function and restart-intensity bookkeeping.
//!
//! Everything here is pure. The runtime in [`crate::system`] owns the
//! per-child histories and applies the directives these functions choose.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::actor::Envelope;
use crate::ids::{ActorId, ActorPath, Fingerprint, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    HandlerPanic,
    PoisonMessage,
    Timeout,
    MailboxOverflow,
    StartFailure,
    InjectedCrash,
    InjectedDelay,
    InjectedCorruption,
}

impl FaultKind {
    pub const ALL: [FaultKind; 8] = [
        FaultKind::HandlerPanic,
        FaultKind::PoisonMessage,
        FaultKind::Timeout,
        FaultKind::MailboxOverflow,
        FaultKind::StartFailure,
        FaultKind::InjectedCrash,
        FaultKind::InjectedDelay,
        FaultKind::InjectedCorruption,
    ];

    /// Kinds only the stressor may raise.
    pub fn is_injected(self) -> bool {
        matches!(self, FaultKind::InjectedCrash | FaultKind::InjectedDelay | FaultKind::InjectedCorruption)
    }

    /// Faults where the actor itself blew up while handling input.
    pub fn is_crash(self) -> bool {
        matches!(
            self,
            FaultKind::HandlerPanic
                | FaultKind::PoisonMessage
                | FaultKind::StartFailure
                | FaultKind::InjectedCrash
                | FaultKind::InjectedCorruption
        )
    }

    pub fn is_latency(self) -> bool {
        matches!(self, FaultKind::Timeout | FaultKind::InjectedDelay)
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Directive {
    Resume,
    Restart,
    Stop,
    Escalate,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Which actors a Restart or Stop reaches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    OneForOne,
    AllForOne,
    RestForOne,
}

/// Total map from fault kind to directive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decider {
    pub table: BTreeMap<FaultKind, Directive>,
    /// Used for kinds missing from `table`.
    pub otherwise: Directive,
}

impl Decider {
    pub fn always(directive: Directive) -> Self {
        Decider { table: BTreeMap::new(), otherwise: directive }
    }

    pub fn with(mut self, fault: FaultKind, directive: Directive) -> Self {
        self.table.insert(fault, directive);
        self
    }

    pub fn directive_for(&self, fault: FaultKind) -> Directive {
        self.table.get(&fault).copied().unwrap_or(self.otherwise)
    }
}

impl Default for Decider {
    fn default() -> Self {
        Decider::always(Directive::Restart)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StrategyError {
    #[error("max_restarts must be at least 1")]
    ZeroMaxRestarts,
    #[error("window must be at least 1 tick")]
    ZeroWindow,
}

/// How a parent reacts when one of its children fails.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionStrategySpec {
    pub scope: Scope,
    pub decider: Decider,
    pub max_restarts: u32,
    pub window: Tick,
    /// Custom plugins by registered name, consulted in order before the decider.
    #[serde(default)]
    pub plugins: Vec<String>,
    /// Payload fingerprints dead-lettered before they reach any child.
    #[serde(default)]
    pub quarantine: BTreeSet<Fingerprint>,
}

impl SupervisionStrategySpec {
    pub fn new(scope: Scope, decider: Decider, max_restarts: u32, window: Tick) -> Result<Self, StrategyError> {
        let spec = SupervisionStrategySpec {
            scope,
            decider,
            max_restarts,
            window,
            plugins: Vec::new(),
            quarantine: BTreeSet::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.max_restarts == 0 {
            return Err(StrategyError::ZeroMaxRestarts);
        }
        if self.window == 0 {
            return Err(StrategyError::ZeroWindow);
        }
        Ok(())
    }

    pub fn with_plugin(mut self, name: impl Into<String>) -> Self {
        self.plugins.push(name.into());
        self
    }
}

impl Default for SupervisionStrategySpec {
    /// One-for-one, restart on everything, at most 3 restarts per 100 ticks.
    fn default() -> Self {
        SupervisionStrategySpec {
            scope: Scope::OneForOne,
            decider: Decider::default(),
            max_restarts: 3,
            window: 100,
            plugins: Vec::new(),
            quarantine: BTreeSet::new(),
        }
    }
}

/// A single observed failure as seen by the supervisor.
#[derive(Clone, Debug)]
pub struct FailureRecord {
    /// Shared by every trace record caused by this failure, escalations included.
    pub id: u64,
    pub child: ActorId,
    pub fault: FaultKind,
    pub trigger: Option<Envelope>,
    pub at: Tick,
    pub restart_count_in_window: u32,
}

/// Ticks at which Restart was issued for one child.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestartHistory {
    restarts: Vec<Tick>,
}

impl RestartHistory {
    pub fn from_ticks(ticks: impl IntoIterator<Item = Tick>) -> Self {
        RestartHistory { restarts: ticks.into_iter().collect() }
    }

    /// Restarts whose tick lies in `[now - window, now]`.
    pub fn record_failure(&self, now: Tick, window: Tick) -> u32 {
        let from = now.saturating_sub(window);
        self.restarts.iter().filter(|&&t| t >= from && t <= now).count() as u32
    }

    pub fn record_restart(&mut self, at: Tick) {
        self.restarts.push(at);
    }

    pub fn ticks(&self) -> &[Tick] {
        &self.restarts
    }
}

/// Built-in decision: the decider's directive, forced to Escalate once the
/// child has used up its restart budget.
pub fn decide(spec: &SupervisionStrategySpec, failure: &FailureRecord) -> Directive {
    if failure.restart_count_in_window >= spec.max_restarts {
        return Directive::Escalate;
    }
    spec.decider.directive_for(failure.fault)
}

/// Actors a Restart or Stop reaches, in the order the directive is applied
/// (reverse spawn order). `live_children` must be in spawn order.
pub fn affected_set(scope: Scope, live_children: &[ActorPath], failing: &ActorPath) -> Vec<ActorPath> {
    let mut set: Vec<ActorPath> = match scope {
        Scope::OneForOne => vec![failing.clone()],
        Scope::AllForOne => live_children.to_vec(),
        Scope::RestForOne => match live_children.iter().position(|c| c == failing) {
            Some(at) => live_children[at..].to_vec(),
            None => vec![failing.clone()],
        },
    };
    if !set.contains(failing) {
        set.push(failing.clone());
    }
    set.reverse();
    set
}
