//! The deterministic scheduler: actor cells, mailboxes, logical time, the
//! send path with its fault hooks, and failure handling through the
//! supervision tree.
//!
//! One [`System::step`] advances the clock by one tick, releases timers that
//! fell due, and lets at most one actor process one envelope. Runnable
//! actors are served from a FIFO run queue, so ordering depends only on the
//! order in which work appeared.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{BehaviorOutcome, BehaviorSpec, Context, Envelope, LifecycleState, State};
use crate::extensions::{
    route, ChildHistory, CustomStrategyPlugin, DomainEvent, DomainEventKind, ExtendedAction, PluginDecision, PluginSet,
    PreemptiveAction, RouteView, RouterSpec, RouterState, RoutingPolicy, GIVE_UP, HEALED,
};
use crate::ids::{stable_hash, ActorId, ActorPath, Fingerprint, Payload, Tick};
use crate::registry::{Registry, RegistryError, VersionId};
use crate::stressor::FaultType;
use crate::supervision::{
    affected_set, decide, Directive, FailureRecord, FaultKind, RestartHistory, Scope, StrategyError,
    SupervisionStrategySpec,
};
use crate::trace::{
    AlertDetail, DeadLetterDetail, DeadLetterReason, DeliveredDetail, DeliveryVia, DirectiveDetail, EnvelopeRef,
    EscalatedDetail, Event, EventRecord, FailedDetail, FaultDetail, PreemptiveDetail, ProcessedDetail, SpawnedDetail,
    TerminatedDetail, Trace, VersionDetail,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionMode {
    /// Failures go to the parent's strategy.
    #[default]
    Supervised,
    /// Every failure re-instantiates the actor on the spot, with no strategy
    /// consulted.
    VirtualActor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub seed: u64,
    pub mailbox_capacity: usize,
    pub mode: SupervisionMode,
    /// Ticks an actor waits before its first message after (re)activation.
    pub cold_start_ticks: Option<Tick>,
    /// Idle ticks after which an actor is deactivated and must cold-start
    /// again. Only meaningful together with `cold_start_ticks`.
    pub idle_deactivation_ticks: Option<Tick>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            seed: 0,
            mailbox_capacity: 1024,
            mode: SupervisionMode::Supervised,
            cold_start_ticks: None,
            idle_deactivation_ticks: None,
        }
    }
}

#[derive(Debug)]
pub enum Step {
    Progress(Vec<EventRecord>),
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaltReason {
    RootEscalation,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpawnError {
    #[error("`{0}` already has a live child with that name")]
    DuplicateName(ActorPath),
    #[error("parent `{0}` is stopped")]
    DeadParent(ActorPath),
    #[error("parent `{0}` does not exist")]
    UnknownParent(ActorPath),
    #[error("invalid child name `{0}`")]
    InvalidName(String),
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SendError {
    #[error("sender `{0}` is not live")]
    DeadSender(ActorPath),
    #[error("mailbox of `{target}` is full ({capacity} envelopes)")]
    MailboxOverflow { target: ActorPath, capacity: usize },
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("tick budget exhausted after {} records", partial.len())]
    TickBudgetExhausted { partial: Trace },
    #[error("tick budget must be positive")]
    ZeroBudget,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SystemError {
    #[error("actor `{0}` not found or stopped")]
    TargetNotFound(ActorPath),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Spawn(#[from] SpawnError),
    #[error("the root guardian cannot be {0}")]
    RootNotAllowed(&'static str),
}

/// An outstanding healer and the failure it is working on.
#[derive(Clone, Debug)]
struct HealCase {
    patient: ActorPath,
    failure: FailureRecord,
}

#[derive(Clone, Debug)]
struct ActorCell {
    id: ActorId,
    parent: Option<ActorPath>,
    behavior: BehaviorSpec,
    version: Option<VersionId>,
    state: State,
    lifecycle: LifecycleState,
    mailbox: VecDeque<Envelope>,
    capacity: usize,
    /// Spawn order; stopped children stay listed.
    children: Vec<ActorPath>,
    strategy: SupervisionStrategySpec,
    histories: BTreeMap<ActorPath, RestartHistory>,
    heals: BTreeMap<ActorPath, Vec<Tick>>,
    healing: BTreeMap<ActorPath, HealCase>,
    observed: VecDeque<DomainEvent>,
    router: Option<RouterState>,
    rng: ChaCha8Rng,
    scheduled: bool,
    arrivals: (Tick, u32),
    active: bool,
    activating: bool,
    last_active: Tick,
}

impl ActorCell {
    fn is_live(&self) -> bool {
        self.lifecycle.is_live()
    }

    fn runnable(&self) -> bool {
        self.lifecycle == LifecycleState::Running && !self.mailbox.is_empty()
    }

    fn set_lifecycle(&mut self, to: LifecycleState) {
        debug_assert!(
            self.lifecycle == to || self.lifecycle.can_transition(to),
            "illegal transition {:?} -> {to:?} at {}",
            self.lifecycle,
            self.id
        );
        self.lifecycle = to;
    }
}

#[derive(Clone, Debug)]
enum Timer {
    Inject { to: ActorPath, payload: Payload },
    Release(Envelope),
    Surge { to: ActorPath, rate: u32, remaining: u32, payload: Payload, label: String },
    Activate(ActorPath),
}

#[derive(Clone, Debug)]
struct InstalledFault {
    fault: FaultType,
    label: String,
    targets: Vec<ActorPath>,
    hierarchy: bool,
    from: Tick,
    rng: ChaCha8Rng,
    seen: BTreeMap<ActorPath, u64>,
}

impl InstalledFault {
    fn covers(&self, path: &ActorPath) -> bool {
        self.targets.iter().any(|t| t == path || (self.hierarchy && t.is_ancestor_of(path)))
    }
}

/// Deterministic actor system.
#[derive(Clone, Debug)]
pub struct System {
    config: SystemConfig,
    cells: BTreeMap<ActorPath, ActorCell>,
    run_queue: VecDeque<ActorPath>,
    timers: BTreeMap<(Tick, u64), Timer>,
    timer_seq: u64,
    tick: Tick,
    seqs: BTreeMap<(ActorPath, ActorPath), u64>,
    holds: BTreeMap<(ActorPath, ActorPath), Tick>,
    trace: Trace,
    registry: Registry,
    plugins: PluginSet,
    faults: Vec<InstalledFault>,
    aliases: BTreeMap<ActorPath, ActorPath>,
    version_failures: BTreeMap<VersionId, Vec<Tick>>,
    next_failure: u64,
    halted: Option<HaltReason>,
}

fn root_behavior() -> BehaviorSpec {
    BehaviorSpec::new("root", State::Null, |_, _, _| BehaviorOutcome::keep())
}

fn router_behavior() -> BehaviorSpec {
    BehaviorSpec::new("router", State::Null, |_, _, _| BehaviorOutcome::keep())
}

struct Live<'a>(&'a BTreeMap<ActorPath, ActorCell>);

impl RouteView for Live<'_> {
    fn is_live(&self, path: &ActorPath) -> bool {
        self.0.get(path).is_some_and(ActorCell::is_live)
    }

    fn mailbox_len(&self, path: &ActorPath) -> usize {
        self.0.get(path).map_or(0, |c| c.mailbox.len())
    }
}

impl System {
    pub fn new(config: SystemConfig) -> Self {
        Self::with_parts(config, Registry::new(), PluginSet::standard())
    }

    pub fn with_parts(config: SystemConfig, registry: Registry, plugins: PluginSet) -> Self {
        let mut system = System {
            config,
            cells: BTreeMap::new(),
            run_queue: VecDeque::new(),
            timers: BTreeMap::new(),
            timer_seq: 0,
            tick: 0,
            seqs: BTreeMap::new(),
            holds: BTreeMap::new(),
            trace: Trace::default(),
            registry,
            plugins,
            faults: Vec::new(),
            aliases: BTreeMap::new(),
            version_failures: BTreeMap::new(),
            next_failure: 0,
            halted: None,
        };
        let root = ActorPath::root();
        let cell = system.new_cell(ActorId::new(root.clone(), 0), None, root_behavior(), None);
        system.cells.insert(root, cell);
        system
    }

    fn new_cell(
        &self,
        id: ActorId,
        parent: Option<ActorPath>,
        behavior: BehaviorSpec,
        version: Option<VersionId>,
    ) -> ActorCell {
        let rng = self.actor_rng(&id);
        ActorCell {
            state: behavior.initial_state().clone(),
            parent,
            behavior,
            version,
            lifecycle: LifecycleState::Starting,
            mailbox: VecDeque::new(),
            capacity: self.config.mailbox_capacity,
            children: Vec::new(),
            strategy: SupervisionStrategySpec::default(),
            histories: BTreeMap::new(),
            heals: BTreeMap::new(),
            healing: BTreeMap::new(),
            observed: VecDeque::new(),
            router: None,
            rng,
            scheduled: false,
            arrivals: (0, 0),
            active: self.config.cold_start_ticks.is_none(),
            activating: false,
            last_active: self.tick,
            id,
        }
    }

    fn actor_rng(&self, id: &ActorId) -> ChaCha8Rng {
        let seed = stable_hash(&[
            b"actor",
            &self.config.seed.to_be_bytes(),
            id.path.as_str().as_bytes(),
            &id.incarnation.to_be_bytes(),
        ]);
        ChaCha8Rng::seed_from_u64(seed)
    }

    // ------------------------------------------------------------------
    // Accessors
    // ------------------------------------------------------------------

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry {
        &mut self.registry
    }

    pub fn plugins_mut(&mut self) -> &mut PluginSet {
        &mut self.plugins
    }

    pub fn halted(&self) -> bool {
        self.halted.is_some()
    }

    pub fn halt_reason(&self) -> Option<HaltReason> {
        self.halted
    }

    pub fn actor_id(&self, path: &ActorPath) -> Option<&ActorId> {
        self.cells.get(path).map(|c| &c.id)
    }

    pub fn lifecycle(&self, path: &ActorPath) -> Option<LifecycleState> {
        self.cells.get(path).map(|c| c.lifecycle)
    }

    pub fn is_live(&self, path: &ActorPath) -> bool {
        self.cells.get(path).is_some_and(ActorCell::is_live)
    }

    pub fn mailbox_len(&self, path: &ActorPath) -> Option<usize> {
        self.cells.get(path).map(|c| c.mailbox.len())
    }

    pub fn state_of(&self, path: &ActorPath) -> Option<&State> {
        self.cells.get(path).map(|c| &c.state)
    }

    pub fn version_of(&self, path: &ActorPath) -> Option<&VersionId> {
        self.cells.get(path).and_then(|c| c.version.as_ref())
    }

    pub fn type_of(&self, path: &ActorPath) -> Option<&str> {
        self.cells.get(path).map(|c| c.behavior.type_name())
    }

    pub fn strategy(&self, path: &ActorPath) -> Option<&SupervisionStrategySpec> {
        self.cells.get(path).map(|c| &c.strategy)
    }

    pub fn parent_of(&self, path: &ActorPath) -> Option<&ActorPath> {
        self.cells.get(path).and_then(|c| c.parent.as_ref())
    }

    /// Live actors in path order, the root guardian included.
    pub fn live_actors(&self) -> Vec<ActorPath> {
        self.cells.values().filter(|c| c.is_live()).map(|c| c.id.path.clone()).collect()
    }

    /// Live children of `path` in spawn order.
    pub fn live_children(&self, path: &ActorPath) -> Vec<ActorPath> {
        self.cells.get(path).map_or_else(Vec::new, |c| c.children.iter().filter(|p| self.is_live(p)).cloned().collect())
    }

    /// Live actors running `type_name`, in path order, healers and routers
    /// excluded.
    pub fn live_instances_of(&self, type_name: &str) -> Vec<ActorPath> {
        self.cells
            .values()
            .filter(|c| c.is_live() && c.behavior.type_name() == type_name && c.router.is_none())
            .map(|c| c.id.path.clone())
            .collect()
    }

    /// Route groups created by [`System::insert_router`]: original path and
    /// router path.
    pub fn route_aliases(&self) -> impl Iterator<Item = (&ActorPath, &ActorPath)> {
        self.aliases.iter()
    }

    pub fn router_targets(&self, router: &ActorPath) -> Option<&[ActorPath]> {
        self.cells.get(router).and_then(|c| c.router.as_ref()).map(|r| r.spec.targets.as_slice())
    }

    pub fn has_pending_work(&self) -> bool {
        !self.timers.is_empty() || self.cells.values().any(ActorCell::runnable)
    }

    // ------------------------------------------------------------------
    // Trace helpers
    // ------------------------------------------------------------------

    fn emit(&mut self, subject: ActorId, event: Event) {
        self.trace.records.push(EventRecord { tick: self.tick, subject, event });
    }

    fn id_or_zero(&self, path: &ActorPath) -> ActorId {
        self.cells.get(path).map_or_else(|| ActorId::new(path.clone(), 0), |c| c.id.clone())
    }

    fn dead_letter(&mut self, env: &Envelope, reason: DeadLetterReason) {
        let subject = self.id_or_zero(&env.to().path);
        self.emit(subject, Event::DeadLettered(DeadLetterDetail { envelope: env.into(), reason }));
    }

    fn alert(&mut self, subject: ActorId, reason: String) {
        self.emit(subject, Event::Alert(AlertDetail { reason }));
    }

    // ------------------------------------------------------------------
    // Topology
    // ------------------------------------------------------------------

    pub fn spawn(&mut self, parent: &ActorPath, name: &str, spec: BehaviorSpec) -> Result<ActorId, SpawnError> {
        self.spawn_with_strategy(parent, name, spec, SupervisionStrategySpec::default())
    }

    /// Spawns a child that supervises its own children with `strategy`.
    ///
    /// When the behavior's type is in the registry the registry decides the
    /// version, and `spec` is only used for unregistered types.
    pub fn spawn_with_strategy(
        &mut self,
        parent: &ActorPath,
        name: &str,
        spec: BehaviorSpec,
        strategy: SupervisionStrategySpec,
    ) -> Result<ActorId, SpawnError> {
        let path = self.check_spawn(parent, name)?;
        Ok(self.spawn_unchecked(parent, path, spec, strategy))
    }

    fn check_spawn(&self, parent: &ActorPath, name: &str) -> Result<ActorPath, SpawnError> {
        let cell = self.cells.get(parent).ok_or_else(|| SpawnError::UnknownParent(parent.clone()))?;
        if !cell.is_live() {
            return Err(SpawnError::DeadParent(parent.clone()));
        }
        let path = parent.child(name).map_err(|_| SpawnError::InvalidName(name.to_string()))?;
        if self.is_live(&path) {
            return Err(SpawnError::DuplicateName(path));
        }
        Ok(path)
    }

    fn spawn_unchecked(
        &mut self,
        parent: &ActorPath,
        path: ActorPath,
        spec: BehaviorSpec,
        strategy: SupervisionStrategySpec,
    ) -> ActorId {
        let incarnation = self.cells.get(&path).map_or(0, |c| c.id.incarnation + 1);
        let (behavior, version) = self.resolve_behavior(&spec, &path);
        let id = ActorId::new(path.clone(), incarnation);
        let mut cell = self.new_cell(id.clone(), Some(parent.clone()), behavior, version);
        cell.strategy = strategy;
        cell.set_lifecycle(LifecycleState::Running);
        let detail = SpawnedDetail {
            parent: parent.clone(),
            type_name: cell.behavior.type_name().to_string(),
            version: cell.version.as_ref().map(|v| v.ordinal),
            state: cell.state.clone(),
            respawn: false,
        };
        self.cells.insert(path.clone(), cell);
        let parent_cell = self.cells.get_mut(parent).expect("checked");
        if !parent_cell.children.contains(&path) {
            parent_cell.children.push(path);
        }
        self.emit(id.clone(), Event::Spawned(detail));
        id
    }

    fn resolve_behavior(&self, spec: &BehaviorSpec, path: &ActorPath) -> (BehaviorSpec, Option<VersionId>) {
        match self.registry.version_for(spec.type_name(), path) {
            Some(v) => {
                let rec = self.registry.record(&v).expect("registry returned a known version");
                (rec.spec.clone(), Some(v))
            }
            None => (spec.clone(), None),
        }
    }

    pub fn set_strategy(&mut self, path: &ActorPath, strategy: SupervisionStrategySpec) -> Result<(), SystemError> {
        strategy.validate()?;
        let cell = self.live_cell_mut(path)?;
        cell.strategy = strategy;
        Ok(())
    }

    pub fn set_mailbox_capacity(&mut self, path: &ActorPath, capacity: usize) -> Result<(), SystemError> {
        self.live_cell_mut(path)?.capacity = capacity;
        Ok(())
    }

    pub fn mailbox_capacity(&self, path: &ActorPath) -> Option<usize> {
        self.cells.get(path).map(|c| c.capacity)
    }

    fn live_cell_mut(&mut self, path: &ActorPath) -> Result<&mut ActorCell, SystemError> {
        self.cells.get_mut(path).filter(|c| c.is_live()).ok_or_else(|| SystemError::TargetNotFound(path.clone()))
    }

    /// Suspends a running actor; its mailbox keeps filling.
    pub fn suspend(&mut self, path: &ActorPath) -> Result<(), SystemError> {
        let cell = self.live_cell_mut(path)?;
        if cell.lifecycle == LifecycleState::Running {
            cell.set_lifecycle(LifecycleState::Suspended);
        }
        Ok(())
    }

    pub fn resume(&mut self, path: &ActorPath) -> Result<(), SystemError> {
        self.live_cell_mut(path)?;
        self.resume_subtree(path);
        Ok(())
    }

    /// Puts a router in front of `target`: `replicas - 1` copies of the
    /// target are spawned as siblings, and every later send to `target`
    /// goes through the router instead.
    pub fn insert_router(
        &mut self,
        target: &ActorPath,
        policy: RoutingPolicy,
        replicas: u32,
    ) -> Result<ActorPath, SystemError> {
        if target.is_root() {
            return Err(SystemError::RootNotAllowed("routed"));
        }
        let cell = self
            .cells
            .get(target)
            .filter(|c| c.is_live())
            .ok_or_else(|| SystemError::TargetNotFound(target.clone()))?;
        let parent = cell.parent.clone().expect("non-root");
        let behavior = cell.behavior.clone();
        let strategy = cell.strategy.clone();
        let capacity = cell.capacity;
        let mut targets = vec![target.clone()];
        for i in 1..replicas.max(1) {
            let path = self.check_spawn(&parent, &format!("{}-r{i}", target.name()))?;
            self.spawn_unchecked(&parent, path.clone(), behavior.clone(), strategy.clone());
            self.cells.get_mut(&path).expect("spawned").capacity = capacity;
            targets.push(path);
        }
        let router = self.check_spawn(&parent, &format!("{}-router", target.name()))?;
        self.spawn_unchecked(&parent, router.clone(), router_behavior(), SupervisionStrategySpec::default());
        let cell = self.cells.get_mut(&router).expect("spawned");
        cell.router = Some(RouterState::new(RouterSpec { policy, targets }));
        cell.capacity = usize::MAX;
        self.aliases.insert(target.clone(), router.clone());
        Ok(router)
    }

    // ------------------------------------------------------------------
    // Sending
    // ------------------------------------------------------------------

    /// Sends from a live actor (the root guardian stands in for the
    /// outside world). Returns the per-pair sequence number.
    pub fn send(&mut self, from: &ActorPath, to: &ActorPath, payload: impl Into<Payload>) -> Result<u64, SendError> {
        let sender = self
            .cells
            .get(from)
            .filter(|c| c.is_live())
            .map(|c| c.id.clone())
            .ok_or_else(|| SendError::DeadSender(from.clone()))?;
        self.deliver(sender, to, payload.into(), Some(DeliveryVia::External))
    }

    /// Queues an external message from the root guardian for tick `at`.
    pub fn schedule_injection(&mut self, at: Tick, to: &ActorPath, payload: impl Into<Payload>) {
        self.add_timer(at, Timer::Inject { to: to.clone(), payload: payload.into() });
    }

    fn add_timer(&mut self, at: Tick, timer: Timer) {
        let at = at.max(self.tick + 1);
        self.timers.insert((at, self.timer_seq), timer);
        self.timer_seq += 1;
    }

    fn deliver(
        &mut self,
        from: ActorId,
        to: &ActorPath,
        payload: Payload,
        via: Option<DeliveryVia>,
    ) -> Result<u64, SendError> {
        let mut to = to.clone();
        if let Some(router) = self.aliases.get(&to) {
            if *router != from.path && self.is_live(router) {
                to = router.clone();
            }
        }
        let counter = self.seqs.entry((from.path.clone(), to.clone())).or_insert(0);
        let seq = *counter;
        *counter += 1;
        let target = self.id_or_zero(&to);
        let mut env = Envelope::new(from, target, payload, seq, self.tick);
        if !self.is_live(&to) {
            self.dead_letter(&env, DeadLetterReason::NoTarget);
            return Ok(seq);
        }
        if !self.apply_delivery_faults(&mut env) {
            return Ok(seq);
        }
        let pair = (env.from().path.clone(), to.clone());
        if let Some(&hold) = self.holds.get(&pair) {
            if hold > self.tick {
                self.add_timer(hold, Timer::Release(env));
                return Ok(seq);
            }
        }
        self.arrive(env, via).map(|_| seq)
    }

    /// Runs drop, delay and corruption hooks. Returns false when the
    /// envelope left the normal path.
    fn apply_delivery_faults(&mut self, env: &mut Envelope) -> bool {
        let to = env.to().path.clone();
        let tick = self.tick;
        let mut notes: Vec<(String, bool)> = Vec::new();
        let mut delay: Option<Tick> = None;
        let mut dropped = false;
        for fault in self.faults.iter_mut().filter(|f| f.from <= tick && f.covers(&to)) {
            match fault.fault {
                FaultType::DropDelivery { probability } if !dropped => {
                    if fault.rng.gen_bool(probability) {
                        notes.push((fault.label.clone(), true));
                        dropped = true;
                    }
                }
                FaultType::DelayDelivery { ticks } if !dropped => {
                    notes.push((fault.label.clone(), false));
                    delay = Some(delay.unwrap_or(0).max(ticks));
                }
                FaultType::CorruptPayload { probability } if !dropped && fault.rng.gen_bool(probability) => {
                    notes.push((fault.label.clone(), false));
                    env.taint.corrupted = true;
                }
                _ => {}
            }
        }
        let subject = self.id_or_zero(&to);
        for (label, _) in &notes {
            self.emit(
                subject.clone(),
                Event::FaultInjected(FaultDetail { fault: label.clone(), envelope: Some((&*env).into()), count: None }),
            );
        }
        if dropped {
            self.dead_letter(env, DeadLetterReason::Dropped);
            return false;
        }
        if let Some(ticks) = delay {
            env.taint.delayed = true;
            let pair = (env.from().path.clone(), to);
            let release = (tick + ticks.max(1)).max(self.holds.get(&pair).copied().unwrap_or(0));
            self.holds.insert(pair, release);
            self.add_timer(release, Timer::Release(env.clone()));
            return false;
        }
        true
    }

    /// Final leg of delivery: quarantine, capacity, mailbox.
    fn arrive(&mut self, env: Envelope, via: Option<DeliveryVia>) -> Result<(), SendError> {
        let to = env.to().path.clone();
        let Some(cell) = self.cells.get(&to).filter(|c| c.is_live()) else {
            self.dead_letter(&env, DeadLetterReason::NoTarget);
            return Ok(());
        };
        if self.quarantined(&to, env.fingerprint()) {
            self.dead_letter(&env, DeadLetterReason::Quarantined);
            return Ok(());
        }
        let capacity = cell.capacity;
        let full = cell.mailbox.len() >= capacity;
        let cell = self.cells.get_mut(&to).expect("checked");
        if cell.arrivals.0 == self.tick {
            cell.arrivals.1 += 1;
        } else {
            cell.arrivals = (self.tick, 1);
        }
        let arrivals = cell.arrivals.1;
        if full {
            self.fail(&to, FaultKind::MailboxOverflow, Some(env), None, Some(arrivals));
            return Err(SendError::MailboxOverflow { target: to, capacity });
        }
        let subject = cell.id.clone();
        let eref = EnvelopeRef::from(&env);
        cell.mailbox.push_back(env);
        if let Some(via) = via {
            self.emit(subject, Event::Delivered(DeliveredDetail { envelope: eref, via }));
        }
        self.schedule(&to);
        Ok(())
    }

    fn quarantined(&self, path: &ActorPath, fp: Fingerprint) -> bool {
        self.cells
            .get(path)
            .and_then(|c| c.parent.as_ref())
            .and_then(|p| self.cells.get(p))
            .is_some_and(|sup| sup.strategy.quarantine.contains(&fp))
    }

    fn schedule(&mut self, path: &ActorPath) {
        if let Some(cell) = self.cells.get_mut(path) {
            if cell.runnable() && !cell.scheduled {
                cell.scheduled = true;
                self.run_queue.push_back(path.clone());
            }
        }
    }

    // ------------------------------------------------------------------
    // Stress hooks
    // ------------------------------------------------------------------

    /// Installs a fault on `targets` from tick `from` on. Load surges become
    /// timers; all other kinds hook delivery or processing.
    pub(crate) fn install_fault(
        &mut self,
        fault: &FaultType,
        stream: &str,
        targets: &[ActorPath],
        hierarchy: bool,
        from: Tick,
    ) {
        let label = fault.name();
        if let FaultType::LoadSurge { rate, duration, ref payload } = *fault {
            for t in targets {
                self.add_timer(
                    from,
                    Timer::Surge {
                        to: t.clone(),
                        rate,
                        remaining: duration,
                        payload: Payload::from(payload.as_str()),
                        label: label.to_string(),
                    },
                );
            }
            return;
        }
        let seed = stable_hash(&[b"fault", &self.config.seed.to_be_bytes(), stream.as_bytes()]);
        self.faults.push(InstalledFault {
            fault: fault.clone(),
            label: label.to_string(),
            targets: targets.to_vec(),
            hierarchy,
            from,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: BTreeMap::new(),
        });
    }

    pub fn clear_faults(&mut self) {
        self.faults.clear();
        self.timers.retain(|_, t| !matches!(t, Timer::Surge { .. }));
    }

    /// Crash hooks that fire for this envelope, as a fault label.
    fn processing_fault(&mut self, path: &ActorPath, env: &Envelope) -> Option<String> {
        let tick = self.tick;
        let mut fired = None;
        for fault in self.faults.iter_mut().filter(|f| f.from <= tick && f.covers(path)) {
            match fault.fault {
                FaultType::CrashOnNthMessage { n } => {
                    let seen = fault.seen.entry(path.clone()).or_insert(0);
                    *seen += 1;
                    if *seen == n && fired.is_none() {
                        fired = Some(fault.label.clone());
                    }
                }
                FaultType::CrashOnPayload { fingerprint } if env.fingerprint() == fingerprint && fired.is_none() => {
                    fired = Some(fault.label.clone());
                }
                _ => {}
            }
        }
        fired
    }

    // ------------------------------------------------------------------
    // Stepping
    // ------------------------------------------------------------------

    pub fn step(&mut self) -> Step {
        if self.halted.is_some() {
            return Step::Idle;
        }
        let start = self.trace.len();
        self.tick += 1;
        let released = self.release_timers();
        let processed = self.process_next();
        if !released && !processed {
            match self.timers.keys().next().map(|k| k.0) {
                Some(next) => {
                    self.tick = next;
                    self.release_timers();
                    self.process_next();
                }
                None => {
                    self.tick -= 1;
                    return Step::Idle;
                }
            }
        }
        Step::Progress(self.trace.records[start..].to_vec())
    }

    /// Steps until idle or until `max_ticks` steps have run. Returns the
    /// records produced by this call.
    pub fn run_until_idle(&mut self, max_ticks: u64) -> Result<Trace, RunError> {
        if max_ticks == 0 {
            return Err(RunError::ZeroBudget);
        }
        let start = self.trace.len();
        for _ in 0..max_ticks {
            if let Step::Idle = self.step() {
                return Ok(Trace::new(self.trace.records[start..].to_vec()));
            }
        }
        let partial = Trace::new(self.trace.records[start..].to_vec());
        if self.halted.is_none() && self.has_pending_work() {
            Err(RunError::TickBudgetExhausted { partial })
        } else {
            Ok(partial)
        }
    }

    fn release_timers(&mut self) -> bool {
        let mut any = false;
        while let Some(entry) = self.timers.first_entry() {
            if entry.key().0 > self.tick {
                break;
            }
            let timer = entry.remove();
            any = true;
            self.fire(timer);
            if self.halted.is_some() {
                break;
            }
        }
        any
    }

    fn fire(&mut self, timer: Timer) {
        let root = self.cells[&ActorPath::root()].id.clone();
        match timer {
            Timer::Inject { to, payload } => {
                let _ = self.deliver(root, &to, payload, Some(DeliveryVia::External));
            }
            Timer::Release(env) => {
                let _ = self.arrive(env, Some(DeliveryVia::Released));
            }
            Timer::Surge { to, rate, remaining, payload, label } => {
                let subject = self.id_or_zero(&to);
                self.emit(
                    subject,
                    Event::FaultInjected(FaultDetail { fault: label.clone(), envelope: None, count: Some(rate) }),
                );
                for _ in 0..rate {
                    let _ = self.deliver(root.clone(), &to, payload.clone(), Some(DeliveryVia::External));
                }
                if remaining > 1 {
                    self.add_timer(self.tick + 1, Timer::Surge { to, rate, remaining: remaining - 1, payload, label });
                }
            }
            Timer::Activate(path) => {
                if let Some(cell) = self.cells.get_mut(&path) {
                    cell.active = true;
                    cell.activating = false;
                    cell.last_active = self.tick;
                }
                self.schedule(&path);
            }
        }
    }

    fn process_next(&mut self) -> bool {
        while let Some(path) = self.run_queue.pop_front() {
            let Some(cell) = self.cells.get_mut(&path) else { continue };
            cell.scheduled = false;
            if !cell.runnable() {
                continue;
            }
            if let Some(idle) = self.config.idle_deactivation_ticks {
                if cell.active && self.config.cold_start_ticks.is_some() && self.tick - cell.last_active > idle {
                    cell.active = false;
                }
            }
            if !cell.active {
                if !cell.activating {
                    cell.activating = true;
                    let at = self.tick + self.config.cold_start_ticks.unwrap_or(0);
                    self.add_timer(at, Timer::Activate(path));
                }
                continue;
            }
            cell.last_active = self.tick;
            self.process(&path);
            self.schedule(&path);
            return true;
        }
        false
    }

    fn process(&mut self, path: &ActorPath) {
        let cell = self.cells.get_mut(path).expect("scheduled cells exist");
        let env = cell.mailbox.pop_front().expect("runnable cells have mail");
        if self.quarantined(path, env.fingerprint()) {
            self.dead_letter(&env, DeadLetterReason::Quarantined);
            return;
        }
        if self.cells[path].router.is_some() {
            self.route_envelope(path, env);
            return;
        }
        if self.cells[path].healing.contains_key(&env.from().path) {
            let text = env.payload().as_text();
            if text == HEALED || text == GIVE_UP {
                let healed = text == HEALED;
                self.heal_report(path, env, healed);
                return;
            }
        }
        let tick = self.tick;
        let cell = &self.cells[path];
        let age = tick.saturating_sub(env.sent_at());
        let injected = if env.taint.corrupted {
            Some(FaultKind::InjectedCorruption)
        } else if cell.behavior.deadline().is_some_and(|d| age > d) {
            Some(if env.taint.delayed { FaultKind::InjectedDelay } else { FaultKind::Timeout })
        } else {
            None
        };
        if let Some(kind) = injected {
            let age = kind.is_latency().then_some(age);
            self.fail(path, kind, Some(env), age, None);
            return;
        }
        if let Some(label) = self.processing_fault(path, &env) {
            let subject = self.cells[path].id.clone();
            self.emit(
                subject,
                Event::FaultInjected(FaultDetail { fault: label, envelope: Some((&env).into()), count: None }),
            );
            self.fail(path, FaultKind::InjectedCrash, Some(env), None, None);
            return;
        }

        let cell = self.cells.get_mut(path).expect("exists");
        let mut ctx = Context { me: &cell.id, parent: cell.parent.as_ref(), tick, rng: &mut cell.rng };
        let behavior = &cell.behavior;
        let state = &cell.state;
        let outcome = catch_unwind(AssertUnwindSafe(|| behavior.handle(state, &env, &mut ctx)))
            .unwrap_or(BehaviorOutcome::Failed(FaultKind::HandlerPanic));
        let effects = match outcome {
            BehaviorOutcome::Failed(kind) => {
                let kind = if kind.is_injected() { FaultKind::HandlerPanic } else { kind };
                self.fail(path, kind, Some(env), None, None);
                return;
            }
            BehaviorOutcome::Handled(effects) => effects,
        };
        let mut names = BTreeSet::new();
        let spawns_ok =
            effects.spawns.iter().all(|(name, _)| names.insert(name.clone()) && self.check_spawn(path, name).is_ok());
        if !spawns_ok {
            self.fail(path, FaultKind::HandlerPanic, Some(env), None, None);
            return;
        }

        let cell = self.cells.get_mut(path).expect("exists");
        let state_in = cell.state.clone();
        if let Some(new_state) = effects.new_state {
            cell.state = new_state;
        }
        let detail = ProcessedDetail {
            envelope: (&env).into(),
            state_in,
            state_out: cell.state.clone(),
            domain_error: effects.domain_error,
            sent: effects.outbound.len() as u32,
            spawned: effects.spawns.len() as u32,
            routed_to: None,
            control: None,
        };
        let me = cell.id.clone();
        self.emit(me.clone(), Event::Processed(detail));
        for (name, spec) in effects.spawns {
            let child = path.child(&name).expect("validated");
            self.spawn_unchecked(path, child, spec, SupervisionStrategySpec::default());
        }
        for (to, payload) in effects.outbound {
            let _ = self.deliver(me.clone(), &to, payload, None);
        }
        let kind = if effects.domain_error { DomainEventKind::DomainError } else { DomainEventKind::Handled };
        self.observe(path, kind);
    }

    fn route_envelope(&mut self, path: &ActorPath, env: Envelope) {
        let cells = &self.cells;
        let mut router = cells[path].router.clone().expect("router cell");
        let picked = route(&mut router, &Live(cells));
        let cell = self.cells.get_mut(path).expect("exists");
        cell.router = Some(router);
        let me = cell.id.clone();
        let state = cell.state.clone();
        match picked {
            Ok(target) => {
                self.emit(
                    me.clone(),
                    Event::Processed(ProcessedDetail {
                        envelope: (&env).into(),
                        state_in: state.clone(),
                        state_out: state,
                        domain_error: false,
                        sent: 1,
                        spawned: 0,
                        routed_to: Some(target.clone()),
                        control: None,
                    }),
                );
                let _ = self.deliver(me, &target, env.payload().clone(), None);
            }
            Err(_) => self.dead_letter(&env, DeadLetterReason::Unroutable),
        }
    }

    // ------------------------------------------------------------------
    // Domain events and preemptive plugins
    // ------------------------------------------------------------------

    fn observe(&mut self, path: &ActorPath, kind: DomainEventKind) {
        let Some(sup) = self.cells.get(path).and_then(|c| c.parent.clone()) else { return };
        let plugins: Vec<_> = self.cells[&sup]
            .strategy
            .plugins
            .iter()
            .filter_map(|n| self.plugins.get(n).cloned())
            .filter(|p| p.domain_window().is_some())
            .collect();
        if plugins.is_empty() {
            return;
        }
        let span = plugins.iter().filter_map(|p| p.domain_window()).max().unwrap_or(0);
        let tick = self.tick;
        let cell = self.cells.get_mut(&sup).expect("exists");
        cell.observed.push_back(DomainEvent { actor: path.clone(), tick, kind });
        while cell.observed.front().is_some_and(|e| e.tick + span < tick) {
            cell.observed.pop_front();
        }
        for plugin in plugins {
            let from = tick.saturating_sub(plugin.domain_window().unwrap_or(0));
            let window: Vec<DomainEvent> =
                self.cells[&sup].observed.iter().filter(|e| e.tick >= from).cloned().collect();
            if let Some(action) = plugin.on_domain_events(&window) {
                self.preempt(&sup, action, &window);
                return;
            }
        }
    }

    fn preempt(&mut self, sup: &ActorPath, action: PreemptiveAction, window: &[DomainEvent]) {
        let subject_path = match &action {
            PreemptiveAction::PreemptiveRestart(p) | PreemptiveAction::ThrottleSender(p) => p.clone(),
            PreemptiveAction::RaiseAlert(_) => sup.clone(),
        };
        let mine: Vec<_> =
            window.iter().filter(|e| e.actor == subject_path && e.kind != DomainEventKind::Failed).collect();
        let errors = mine.iter().filter(|e| e.kind == DomainEventKind::DomainError).count();
        let fraction = if mine.is_empty() { 0.0 } else { errors as f64 / mine.len() as f64 };
        let mut state = None;
        if let PreemptiveAction::PreemptiveRestart(target) = &action {
            let ok = self
                .cells
                .get(target)
                .is_some_and(|c| c.lifecycle == LifecycleState::Running && c.parent.as_ref() == Some(sup));
            if !ok {
                return;
            }
            self.reset_cell(target);
            state = Some(self.cells[target].state.clone());
            self.cells.get_mut(sup).expect("exists").observed.retain(|e| e.actor != *target);
        }
        let subject = self.id_or_zero(&subject_path);
        let restarted = state.is_some();
        let action = match &action {
            PreemptiveAction::PreemptiveRestart(_) => "restart".to_string(),
            // recorded only; the runtime does not rate-limit senders
            PreemptiveAction::ThrottleSender(_) => "throttle".to_string(),
            PreemptiveAction::RaiseAlert(reason) => format!("alert: {reason}"),
        };
        self.emit(
            subject,
            Event::Preemptive(PreemptiveDetail { action, error_fraction: fraction, events: mine.len() as u32, state }),
        );
        if restarted {
            self.respawn_descendants(&subject_path);
            self.schedule(&subject_path);
        }
    }

    // ------------------------------------------------------------------
    // Failures
    // ------------------------------------------------------------------

    fn fail(
        &mut self,
        path: &ActorPath,
        fault: FaultKind,
        trigger: Option<Envelope>,
        age: Option<Tick>,
        arrivals: Option<u32>,
    ) {
        let id = self.next_failure;
        self.next_failure += 1;
        let tick = self.tick;
        let cell = self.cells.get_mut(path).expect("failing actor exists");
        let running = cell.lifecycle == LifecycleState::Running;
        let detail = FailedDetail {
            failure: id,
            fault,
            type_name: cell.behavior.type_name().to_string(),
            version: cell.version.as_ref().map(|v| v.ordinal),
            envelope: trigger.as_ref().map(EnvelopeRef::from),
            state: cell.state.clone(),
            age,
            arrivals,
        };
        if running {
            cell.set_lifecycle(LifecycleState::Suspended);
        }
        let child = cell.id.clone();
        let version = cell.version.clone();
        let parent = cell.parent.clone();
        self.emit(child.clone(), Event::Failed(detail));
        if let Some(env) = &trigger {
            self.dead_letter(env, DeadLetterReason::Trigger);
        }
        if !running {
            // already under supervision (or suspended by hand)
            return;
        }
        if let Some(v) = &version {
            self.version_failures.entry(v.clone()).or_default().push(tick);
        }
        self.observe(path, DomainEventKind::Failed);
        let Some(sup) = parent else {
            self.halted = Some(HaltReason::RootEscalation);
            return;
        };
        if self.config.mode == SupervisionMode::VirtualActor {
            let failure = FailureRecord { id, child, fault, trigger, at: tick, restart_count_in_window: 0 };
            self.restart_affected(
                &sup,
                &failure,
                std::slice::from_ref(path),
                Some("virtual-restart"),
                Scope::OneForOne,
            );
            return;
        }
        if let Some(case) = self.cells.get_mut(&sup).expect("parent exists").healing.remove(path) {
            let scope = self.cells[&sup].strategy.scope;
            self.stop_actor(path, id, path, Scope::OneForOne, Some("healer-failed"));
            let _ = scope;
            self.decide_builtin(&sup, case.failure);
            return;
        }
        let strategy = &self.cells[&sup].strategy;
        let count = self.cells[&sup].histories.get(path).map_or(0, |h| h.record_failure(tick, strategy.window));
        let failure = FailureRecord { id, child, fault, trigger, at: tick, restart_count_in_window: count };
        self.supervise(&sup, failure);
    }

    fn child_history(&self, sup: &ActorPath, failure: &FailureRecord) -> ChildHistory {
        let cell = &self.cells[sup];
        let child = &failure.child.path;
        let version = self.cells.get(child).and_then(|c| c.version.clone());
        ChildHistory {
            restarts: cell.histories.get(child).cloned().unwrap_or_default(),
            version_failures: version.as_ref().and_then(|v| self.version_failures.get(v).cloned()).unwrap_or_default(),
            version,
            heals: cell.heals.get(child).cloned().unwrap_or_default(),
            window: cell.strategy.window,
        }
    }

    fn supervise(&mut self, sup: &ActorPath, failure: FailureRecord) {
        let names = self.cells[sup].strategy.plugins.clone();
        for name in names {
            let Some(plugin) = self.plugins.get(&name).cloned() else { continue };
            let history = self.child_history(sup, &failure);
            match plugin.on_failure(&failure, &history, &self.registry) {
                PluginDecision::Directive(d) => {
                    let action = format!("plugin:{name}");
                    self.apply_directive_inner(sup, failure, d, Some(&action));
                    return;
                }
                PluginDecision::Action(action) => {
                    if let Some(rest) = self.apply_extended(sup, failure, action) {
                        self.decide_builtin(sup, rest);
                    }
                    return;
                }
                PluginDecision::Defer => {}
                PluginDecision::DeferWithAlert(reason) => self.alert(failure.child.clone(), reason),
            }
        }
        self.decide_builtin(sup, failure);
    }

    fn decide_builtin(&mut self, sup: &ActorPath, failure: FailureRecord) {
        let directive = decide(&self.cells[sup].strategy, &failure);
        self.apply_directive_inner(sup, failure, directive, None);
    }

    /// Runs an extended action. Returns the failure back when the action
    /// could not be carried out and the decider should take over.
    fn apply_extended(
        &mut self,
        sup: &ActorPath,
        failure: FailureRecord,
        action: ExtendedAction,
    ) -> Option<FailureRecord> {
        let child = failure.child.path.clone();
        match action {
            ExtendedAction::FallbackToVersion(older) => {
                let from = self.cells.get(&child).and_then(|c| c.version.clone());
                if self.registry.fall_back_to(&older).is_err() {
                    return Some(failure);
                }
                self.restart_affected(sup, &failure, std::slice::from_ref(&child), Some("fallback"), Scope::OneForOne);
                self.cells.get_mut(sup).expect("exists").histories.entry(child).or_default().record_restart(self.tick);
                let _ = from;
                None
            }
            ExtendedAction::SpawnHealer(spec) => {
                let name = format!("{}-healer-{}", child.name(), failure.id);
                let Ok(path) = self.check_spawn(sup, &name) else { return Some(failure) };
                self.spawn_unchecked(sup, path.clone(), spec, SupervisionStrategySpec::default());
                let tick = self.tick;
                let cell = self.cells.get_mut(sup).expect("exists");
                cell.heals.entry(child.clone()).or_default().push(tick);
                let note = serde_json::json!({
                    "failure": failure.id,
                    "patient": child,
                    "fault": failure.fault,
                    "at": failure.at,
                });
                cell.healing.insert(path.clone(), HealCase { patient: child, failure });
                let me = cell.id.clone();
                let _ = self.deliver(me, &path, Payload::from(note.to_string()), None);
                None
            }
            ExtendedAction::QuarantineMessage(fp) => {
                let cell = self.cells.get_mut(sup).expect("exists");
                cell.strategy.quarantine.insert(fp);
                let subject = cell.id.clone();
                self.emit(
                    subject,
                    Event::StrategyChanged(crate::trace::StrategyDetail {
                        change: crate::builder::StrategyChange::Quarantine { fingerprint: fp },
                    }),
                );
                Some(failure)
            }
        }
    }

    fn heal_report(&mut self, sup: &ActorPath, env: Envelope, healed: bool) {
        let healer = env.from().path.clone();
        let case = self.cells.get_mut(sup).expect("exists").healing.remove(&healer).expect("checked");
        let cell = &self.cells[sup];
        let state = cell.state.clone();
        let me = cell.id.clone();
        let control = if healed { HEALED } else { GIVE_UP };
        self.emit(
            me,
            Event::Processed(ProcessedDetail {
                envelope: (&env).into(),
                state_in: state.clone(),
                state_out: state,
                domain_error: false,
                sent: 0,
                spawned: 0,
                routed_to: None,
                control: Some(control.to_string()),
            }),
        );
        self.terminate(&healer, sup, "healer-done");
        let patient_live = self.cells.get(&case.patient).is_some_and(|c| c.lifecycle == LifecycleState::Suspended);
        if !patient_live {
            return;
        }
        if healed {
            self.apply_directive_inner(sup, case.failure, Directive::Resume, Some("healed"));
        } else {
            self.decide_builtin(sup, case.failure);
        }
    }

    /// Applies `directive` from `supervisor` to the failure's child, the way
    /// the runtime does after a decision. Exposed for tests and tools.
    pub fn apply_directive(
        &mut self,
        supervisor: &ActorPath,
        failure: FailureRecord,
        directive: Directive,
    ) -> Vec<EventRecord> {
        let start = self.trace.len();
        self.apply_directive_inner(supervisor, failure, directive, None);
        self.trace.records[start..].to_vec()
    }

    fn apply_directive_inner(
        &mut self,
        sup: &ActorPath,
        failure: FailureRecord,
        directive: Directive,
        action: Option<&str>,
    ) {
        let child = failure.child.path.clone();
        let scope = self.cells[sup].strategy.scope;
        match directive {
            Directive::Resume => {
                self.resume_subtree(&child);
                let cell = &self.cells[&child];
                let detail = DirectiveDetail {
                    failure: failure.id,
                    cause: child.clone(),
                    directive,
                    scope,
                    action: action.map(str::to_string),
                    state: None,
                    version: cell.version.as_ref().map(|v| v.ordinal),
                    retained: cell.mailbox.len() as u32,
                    drained: 0,
                };
                let subject = cell.id.clone();
                self.emit(subject, Event::DirectiveApplied(detail));
            }
            Directive::Restart => {
                let affected = self.affected(sup, scope, &child);
                self.restart_affected(sup, &failure, &affected, action, scope);
                let window_tick = self.tick;
                self.cells
                    .get_mut(sup)
                    .expect("exists")
                    .histories
                    .entry(child)
                    .or_default()
                    .record_restart(window_tick);
            }
            Directive::Stop => {
                for a in self.affected(sup, scope, &child) {
                    self.stop_actor(&a, failure.id, &child, scope, action);
                }
            }
            Directive::Escalate => self.escalate(sup, failure),
        }
    }

    fn affected(&self, sup: &ActorPath, scope: Scope, child: &ActorPath) -> Vec<ActorPath> {
        let cell = &self.cells[sup];
        let live: Vec<ActorPath> = self
            .live_children(sup)
            .into_iter()
            .filter(|c| !cell.healing.contains_key(c) && self.cells[c].router.is_none())
            .collect();
        affected_set(scope, &live, child)
    }

    fn restart_affected(
        &mut self,
        sup: &ActorPath,
        failure: &FailureRecord,
        affected: &[ActorPath],
        action: Option<&str>,
        scope: Scope,
    ) {
        let _ = sup;
        for a in affected {
            let cell = &self.cells[a];
            let from = cell.version.clone();
            let lifecycle = cell.lifecycle;
            self.reset_cell(a);
            let cell = &self.cells[a];
            let detail = DirectiveDetail {
                failure: failure.id,
                cause: failure.child.path.clone(),
                directive: Directive::Restart,
                scope,
                action: action.map(str::to_string),
                state: Some(cell.state.clone()),
                version: cell.version.as_ref().map(|v| v.ordinal),
                retained: cell.mailbox.len() as u32,
                drained: 0,
            };
            let subject = cell.id.clone();
            let to = cell.version.clone();
            let _ = lifecycle;
            self.emit(subject.clone(), Event::DirectiveApplied(detail));
            self.note_version_change(a, from, to, action.unwrap_or("restart"));
            self.respawn_descendants(a);
            self.schedule(a);
        }
    }

    fn note_version_change(&mut self, path: &ActorPath, from: Option<VersionId>, to: Option<VersionId>, reason: &str) {
        if from == to {
            return;
        }
        let Some(to) = to else { return };
        let cell = &self.cells[path];
        let detail = VersionDetail {
            type_name: to.type_name.clone(),
            from: from.map(|v| v.ordinal),
            to: to.ordinal,
            reason: reason.to_string(),
            state: cell.state.clone(),
        };
        let subject = cell.id.clone();
        self.emit(subject, Event::VersionActivated(detail));
    }

    /// Fresh incarnation at the same path: initial state, registry version,
    /// supervision bookkeeping for its own children cleared, mailbox kept.
    fn reset_cell(&mut self, path: &ActorPath) {
        let cell = &self.cells[path];
        let (behavior, version) = self.resolve_behavior(&cell.behavior.clone(), path);
        let id = ActorId::new(path.clone(), cell.id.incarnation + 1);
        let rng = self.actor_rng(&id);
        let cold = self.config.cold_start_ticks.is_some();
        let cell = self.cells.get_mut(path).expect("exists");
        if cell.lifecycle != LifecycleState::Restarting {
            cell.set_lifecycle(LifecycleState::Restarting);
        }
        cell.set_lifecycle(LifecycleState::Starting);
        cell.state = behavior.initial_state().clone();
        cell.behavior = behavior;
        cell.version = version;
        cell.id = id;
        cell.rng = rng;
        cell.histories.clear();
        cell.heals.clear();
        cell.observed.clear();
        if cold {
            cell.active = false;
            cell.activating = false;
        }
        cell.set_lifecycle(LifecycleState::Running);
        let healers: Vec<ActorPath> = cell.healing.keys().cloned().collect();
        cell.healing.clear();
        for h in healers {
            if self.is_live(&h) {
                self.terminate(&h, path, "supervisor-restart");
            }
        }
    }

    fn respawn_descendants(&mut self, path: &ActorPath) {
        for c in self.live_children(path) {
            let from = self.cells[&c].version.clone();
            self.reset_cell(&c);
            let cell = &self.cells[&c];
            let detail = SpawnedDetail {
                parent: path.clone(),
                type_name: cell.behavior.type_name().to_string(),
                version: cell.version.as_ref().map(|v| v.ordinal),
                state: cell.state.clone(),
                respawn: true,
            };
            let (subject, to) = (cell.id.clone(), cell.version.clone());
            self.emit(subject, Event::Spawned(detail));
            self.note_version_change(&c, from, to, "respawn");
            self.respawn_descendants(&c);
            self.schedule(&c);
        }
    }

    fn resume_subtree(&mut self, path: &ActorPath) {
        if let Some(cell) = self.cells.get_mut(path) {
            if cell.lifecycle == LifecycleState::Suspended {
                cell.set_lifecycle(LifecycleState::Running);
            }
        }
        self.schedule(path);
        for c in self.live_children(path) {
            let patient = self.cells[path].healing.values().any(|h| h.patient == c);
            if !patient {
                self.resume_subtree(&c);
            }
        }
    }

    fn drain(&mut self, path: &ActorPath) -> u32 {
        let cell = self.cells.get_mut(path).expect("exists");
        let drained: Vec<Envelope> = cell.mailbox.drain(..).collect();
        for env in &drained {
            self.dead_letter(env, DeadLetterReason::Drained);
        }
        drained.len() as u32
    }

    fn stop_actor(&mut self, path: &ActorPath, failure: u64, cause: &ActorPath, scope: Scope, action: Option<&str>) {
        let cell = &self.cells[path];
        let detail = DirectiveDetail {
            failure,
            cause: cause.clone(),
            directive: Directive::Stop,
            scope,
            action: action.map(str::to_string),
            state: None,
            version: cell.version.as_ref().map(|v| v.ordinal),
            retained: 0,
            drained: cell.mailbox.len() as u32,
        };
        let subject = cell.id.clone();
        self.emit(subject, Event::DirectiveApplied(detail));
        self.drain(path);
        self.terminate_descendants(path);
        self.cells.get_mut(path).expect("exists").set_lifecycle(LifecycleState::Stopped);
    }

    fn terminate_descendants(&mut self, path: &ActorPath) {
        for c in self.live_children(path).into_iter().rev() {
            self.terminate_descendants(&c);
            self.terminate(&c, path, "parent-stopped");
        }
    }

    fn terminate(&mut self, path: &ActorPath, by: &ActorPath, reason: &str) {
        self.terminate_descendants(path);
        let drained = self.drain(path);
        let cell = self.cells.get_mut(path).expect("exists");
        if cell.lifecycle == LifecycleState::Starting || cell.lifecycle == LifecycleState::Restarting {
            cell.lifecycle = LifecycleState::Running;
        }
        cell.set_lifecycle(LifecycleState::Stopped);
        let subject = cell.id.clone();
        self.emit(subject, Event::Terminated(TerminatedDetail { by: by.clone(), reason: reason.to_string(), drained }));
    }

    fn escalate(&mut self, sup: &ActorPath, failure: FailureRecord) {
        let fault = failure.fault;
        let Some(grand) = self.cells[sup].parent.clone() else {
            self.emit(
                failure.child.clone(),
                Event::Escalated(EscalatedDetail {
                    failure: failure.id,
                    fault,
                    supervisor: sup.clone(),
                    to: None,
                    halted: true,
                }),
            );
            self.halted = Some(HaltReason::RootEscalation);
            return;
        };
        self.emit(
            failure.child.clone(),
            Event::Escalated(EscalatedDetail {
                failure: failure.id,
                fault,
                supervisor: sup.clone(),
                to: Some(grand.clone()),
                halted: false,
            }),
        );
        let cell = self.cells.get_mut(sup).expect("exists");
        if cell.lifecycle == LifecycleState::Running {
            cell.set_lifecycle(LifecycleState::Suspended);
        }
        let supervisor = cell.id.clone();
        let g = &self.cells[&grand];
        let count = g.histories.get(sup).map_or(0, |h| h.record_failure(self.tick, g.strategy.window));
        let synthetic = FailureRecord {
            id: failure.id,
            child: supervisor,
            fault,
            trigger: None,
            at: self.tick,
            restart_count_in_window: count,
        };
        self.supervise(&grand, synthetic);
    }

    // ------------------------------------------------------------------
    // Versions
    // ------------------------------------------------------------------

    /// Restarts `path` into whatever version the registry now dictates for
    /// it, recording the switch. Used by rollouts between steps.
    pub fn redeploy(&mut self, path: &ActorPath, reason: &str) -> Result<(), SystemError> {
        let from = self.live_cell_mut(path)?.version.clone();
        let cell = &self.cells[path];
        let (_, to) = self.resolve_behavior(&cell.behavior.clone(), path);
        if to == from {
            return Ok(());
        }
        self.reset_cell(path);
        let to = self.cells[path].version.clone();
        self.note_version_change(path, from, to, reason);
        self.respawn_descendants(path);
        self.schedule(path);
        Ok(())
    }

    /// Records a strategy change made from outside the scheduler.
    pub(crate) fn record_strategy_change(&mut self, path: &ActorPath, change: crate::builder::StrategyChange) {
        let subject = self.id_or_zero(path);
        self.emit(subject, Event::StrategyChanged(crate::trace::StrategyDetail { change }));
    }

    pub(crate) fn record_alert(&mut self, path: &ActorPath, reason: String) {
        let subject = self.id_or_zero(path);
        self.alert(subject, reason);
    }

    pub(crate) fn strategy_mut(&mut self, path: &ActorPath) -> Result<&mut SupervisionStrategySpec, SystemError> {
        Ok(&mut self.live_cell_mut(path)?.strategy)
    }

    pub fn plugin(&self, name: &str) -> Option<&std::sync::Arc<dyn CustomStrategyPlugin>> {
        self.plugins.get(name)
    }
}
