//! Scenario runner and the antifragile loop.
//!
//! Each cycle rebuilds the system from the scenario plus the improvements
//! accepted so far, replays the same workload and stress (same seeds, same
//! random streams), and measures. Between cycles the learner mines the
//! cycle's errors and the builder's proposals are checked on replays before
//! they are kept:
//!
//! - an external improvement is kept when a replay with it shows strictly
//!   fewer failures matching the fragility it addresses;
//! - an internal improvement (a newer version) is rolled out step by step,
//!   one replay per step, and rolled back at the first step whose replay
//!   shows a matching failure on the new version.

pub mod behaviors;
pub mod config;
pub mod metrics;
pub mod output;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{
    apply_change, apply_internal, build_improvements, Improvement, ImprovementKind, ImprovementPlan, TargetedChange,
};
use crate::extensions::{healer_behavior, FallbackPlugin, HealerPlugin, PluginSet, PreemptivePlugin};
use crate::ids::{stable_hash, ActorPath};
use crate::learner::{Fragility, FragilityReport, Learner, Pattern, RuleAnalyzer};
use crate::registry::{Registry, VersionId};
use crate::stressor::{run_session, select_targets, Environment, ErrorEvent, ErrorLog, StressError, StressSession};
use crate::system::{RunError, SupervisionMode, System};
use crate::trace::Trace;

pub use config::{ConfigError, Mode, ScenarioConfig};
pub use metrics::{compute_gain, compute_metrics, AntifragilityGain, CycleMetrics, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario at {0}")]
    Config(#[from] ConfigError),
    #[error("cannot build the scenario: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot write outputs: {0}")]
    Output(String),
}

/// What the loop has accepted so far, applied on top of the scenario when a
/// cycle's system is built.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub changes: Vec<TargetedChange>,
    /// Versions promoted by a rollout, activated before any actor spawns.
    pub activations: Vec<VersionId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Outcome {
    /// Replay with the change had fewer matching failures.
    Accepted {
        before: usize,
        after: usize,
    },
    Rejected {
        before: usize,
        after: usize,
    },
    Promoted,
    /// The gate failed at rollout step `step`.
    RolledBack {
        step: usize,
        fraction: f64,
    },
    /// Applying the change to a fresh system failed.
    Inapplicable {
        reason: String,
    },
}

impl Outcome {
    pub fn applied(&self) -> bool {
        matches!(self, Outcome::Accepted { .. } | Outcome::Promoted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub improvement: Improvement,
    #[serde(flatten)]
    pub outcome: Outcome,
}

/// Everything one cycle produced.
#[derive(Clone, Debug)]
pub struct CycleReport {
    pub metrics: CycleMetrics,
    pub trace: Trace,
    /// Errors the learner sees: the stress session's log, or every failure
    /// when the scenario has no stress plan.
    pub errors: ErrorLog,
    pub report: Option<FragilityReport>,
    pub plan: Option<ImprovementPlan>,
    pub attempts: Vec<Attempt>,
    /// Fully active ordinal per declared type at the end of the cycle.
    pub active_versions: BTreeMap<String, u32>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub cycles: Vec<CycleReport>,
    pub gain: AntifragilityGain,
    pub overlay: Overlay,
}

impl LoopOutcome {
    pub fn metrics(&self) -> Vec<CycleMetrics> {
        self.cycles.iter().map(|c| c.metrics.clone()).collect()
    }
}

/// Builds the scenario's system with `overlay` applied and the workload
/// scheduled, ready to run.
pub fn build_system(config: &ScenarioConfig, overlay: &Overlay) -> Result<System, HarnessError> {
    let setup = |e: &dyn std::fmt::Display| HarnessError::Setup(e.to_string());
    let mut registry = Registry::new();
    for t in &config.types {
        for params in &t.versions {
            registry.register_version(&t.name, behaviors::configured(&t.name, params)).map_err(|e| setup(&e))?;
        }
        registry.activate(&VersionId::new(t.name.clone(), t.active)).map_err(|e| setup(&e))?;
    }
    for v in &overlay.activations {
        registry.activate(v).map_err(|e| setup(&e))?;
    }
    let mut plugins = PluginSet::empty();
    plugins.insert(std::sync::Arc::new(FallbackPlugin { threshold: config.plugins.fallback_threshold }));
    plugins.insert(std::sync::Arc::new(PreemptivePlugin { config: config.plugins.preemptive.clone() }));
    plugins.insert(std::sync::Arc::new(HealerPlugin {
        healer: healer_behavior(true),
        max_heals: config.plugins.max_heals,
    }));
    let mut sys_config = config.system.clone();
    sys_config.seed = config.seed;
    sys_config.mode = match config.mode {
        Mode::Supervised => SupervisionMode::Supervised,
        Mode::Baseline => SupervisionMode::VirtualActor,
    };
    let mut system = System::with_parts(sys_config, registry, plugins);
    system.set_strategy(&ActorPath::root(), config.root.to_spec()).map_err(|e| setup(&e))?;
    for (actor, path) in config.actors.iter().zip(config.actor_paths()) {
        let spec = match &actor.type_name {
            Some(t) => {
                let declared = config.types.iter().find(|d| d.name == *t).expect("validated");
                behaviors::configured(t, &declared.versions[declared.active as usize - 1])
            }
            None => behaviors::supervisor(),
        };
        let parent = path.parent().expect("declared actors sit below the root");
        system.spawn_with_strategy(&parent, path.name(), spec, actor.strategy.to_spec()).map_err(|e| setup(&e))?;
        if let Some(capacity) = actor.mailbox_capacity {
            system.set_mailbox_capacity(&path, capacity).map_err(|e| setup(&e))?;
        }
    }
    for r in &config.routers {
        let target = ActorPath::resolve(&r.target).expect("validated");
        system.insert_router(&target, r.policy, r.replicas).map_err(|e| setup(&e))?;
    }
    for change in &overlay.changes {
        apply_change(&mut system, change).map_err(|e| setup(&e))?;
    }
    schedule_workload(config, &mut system);
    Ok(system)
}

fn schedule_workload(config: &ScenarioConfig, system: &mut System) {
    for (i, w) in config.workload.iter().enumerate() {
        let stream = w.stream.clone().unwrap_or_else(|| format!("workload/{i}"));
        let mut rng =
            ChaCha8Rng::seed_from_u64(stable_hash(&[b"workload", &config.seed.to_be_bytes(), stream.as_bytes()]));
        let to = ActorPath::resolve(&w.to).expect("validated");
        for m in 0..w.messages {
            let at = w.start + u64::from(m / w.burst) * w.every;
            let poisoned = w.poison_fraction > 0.0 && rng.gen_bool(w.poison_fraction);
            let payload = match (&w.poison, poisoned) {
                (Some(p), true) => p.clone(),
                _ => format!("{}-{m}", w.payload),
            };
            system.schedule_injection(at, &to, payload);
        }
    }
}

/// Stress targets, chosen once on the freshly built system so every cycle
/// stresses the same actors.
pub fn stress_targets(config: &ScenarioConfig) -> Result<Vec<ActorPath>, HarnessError> {
    let Some(stress) = &config.stress else { return Ok(Vec::new()) };
    let system = build_system(config, &Overlay::default())?;
    match select_targets(&stress.policy, &system, &[]) {
        Ok(selection) => Ok(selection.targets),
        Err(StressError::EmptySnapshot) => Ok(Vec::new()),
        Err(e) => Err(HarnessError::Setup(e.to_string())),
    }
}

/// Runs a built system to idle under the scenario's stress plan.
fn execute(
    config: &ScenarioConfig,
    mut system: System,
    cycle: u32,
    targets: &[ActorPath],
) -> Result<(System, ErrorLog, Vec<String>), HarnessError> {
    let mut warnings = Vec::new();
    let label = format!("cycle-{cycle}");
    let session =
        config.stress.as_ref().filter(|s| !s.faults.is_empty() && !targets.is_empty()).map(|s| StressSession {
            id: s.session.clone(),
            targets: targets.to_vec(),
            faults: s.faults.clone(),
            environment: s.environment,
            hierarchy: s.hierarchy,
        });
    let run_production = |system: &mut System, warnings: &mut Vec<String>| match system.run_until_idle(config.max_ticks)
    {
        Ok(_) => {}
        Err(RunError::TickBudgetExhausted { .. }) => {
            warnings.push(format!("{label}: tick budget of {} exhausted", config.max_ticks))
        }
        Err(RunError::ZeroBudget) => unreachable!("validated max_ticks"),
    };
    let mut log = match &session {
        None => {
            run_production(&mut system, &mut warnings);
            ErrorLog::from_records(label.clone(), &system.trace().records, 0)
        }
        Some(session) => {
            let log = match run_session(session, &mut system, config.max_ticks) {
                Ok(log) => log,
                Err(StressError::TickBudgetExhausted { partial }) => {
                    warnings.push(format!("{label}: stress session ran out of ticks"));
                    partial
                }
                Err(e) => return Err(HarnessError::Setup(e.to_string())),
            };
            if session.environment == Environment::Sandbox {
                run_production(&mut system, &mut warnings);
            }
            log
        }
    };
    log.session = format!("{}#{cycle}", session.as_ref().map_or("errors", |s| s.id.as_str()));
    if system.halted() {
        warnings.push(format!("{label}: halted by escalation at the root guardian"));
    }
    Ok((system, log, warnings))
}

/// Paths whose traffic counts toward availability: workload receivers and
/// stress targets, each widened to its replicas when routed.
pub fn subjects(config: &ScenarioConfig, system: &System, targets: &[ActorPath]) -> BTreeSet<ActorPath> {
    let base =
        config.workload.iter().map(|w| ActorPath::resolve(&w.to).expect("validated")).chain(targets.iter().cloned());
    let aliases: BTreeMap<&ActorPath, &ActorPath> = system.route_aliases().collect();
    let mut out = BTreeSet::new();
    for p in base {
        match aliases.get(&p).and_then(|router| system.router_targets(router)) {
            Some(group) => out.extend(group.iter().cloned()),
            None => {
                out.insert(p);
            }
        }
    }
    out
}

fn run_cycle(
    config: &ScenarioConfig,
    overlay: &Overlay,
    cycle: u32,
    targets: &[ActorPath],
) -> Result<(System, CycleReport), HarnessError> {
    let system = build_system(config, overlay)?;
    let (system, errors, warnings) = execute(config, system, cycle, targets)?;
    let metrics = compute_metrics(cycle, &system.trace().records, &subjects(config, &system, targets));
    let report = CycleReport {
        metrics,
        trace: system.trace().clone(),
        errors,
        report: None,
        plan: None,
        attempts: Vec::new(),
        active_versions: active_versions(config, system.registry()),
        warnings,
    };
    Ok((system, report))
}

pub fn active_versions(config: &ScenarioConfig, registry: &Registry) -> BTreeMap<String, u32> {
    config
        .types
        .iter()
        .filter_map(|t| registry.active_version(&t.name).ok().map(|v| (t.name.clone(), v.ordinal)))
        .collect()
}

/// One run of the scenario as written: build, apply workload and stress
/// once, measure.
pub fn run_scenario(config: &ScenarioConfig) -> Result<CycleReport, HarnessError> {
    config.validate()?;
    let targets = stress_targets(config)?;
    Ok(run_cycle(config, &Overlay::default(), 0, &targets)?.1)
}

/// Error events that count against `fragility`.
pub fn matching_failures(events: &[ErrorEvent], fragility: &Fragility) -> usize {
    events
        .iter()
        .filter(|e| {
            e.type_name == fragility.subject.type_name
                && fragility.pattern.matches_fault(e.fault)
                && match fragility.pattern {
                    Pattern::DeterministicPayloadCrash { fingerprint } => e.fingerprint == Some(fingerprint),
                    _ => true,
                }
        })
        .count()
}

fn fragility_key(f: &Fragility) -> String {
    format!("{}|{}", f.subject, f.pattern)
}

/// Runs `config.cycles` cycles of stress, learn, build and apply.
pub fn run_antifragile_loop(config: &ScenarioConfig) -> Result<LoopOutcome, HarnessError> {
    config.validate()?;
    if config.cycles < 2 {
        return Err(ConfigError::new("cycles", "the loop needs at least 2 cycles").into());
    }
    let targets = stress_targets(config)?;
    let mut learner = Learner::new(RuleAnalyzer { min_support: config.learner.min_support });
    let mut overlay = Overlay::default();
    let mut tried: BTreeSet<String> = BTreeSet::new();
    let mut resolved: BTreeSet<String> = BTreeSet::new();
    let mut cycles = Vec::new();
    for cycle in 0..config.cycles {
        let (system, mut report) = run_cycle(config, &overlay, cycle, &targets)?;
        if config.mode == Mode::Supervised {
            learner.ingest(&report.errors);
            let fragilities = learner.analyze(system.tick());
            let plan = build_improvements(
                &fragilities,
                &config.builder.catalog,
                system.registry(),
                config.builder.rollout.clone(),
            );
            if cycle + 1 < config.cycles {
                for improvement in &plan.improvements {
                    let key = serde_json::to_string(&improvement.kind).expect("serializable");
                    let fragility = fragility_key(&improvement.addresses);
                    if resolved.contains(&fragility) || !tried.insert(key) {
                        continue;
                    }
                    let outcome = evaluate(config, &overlay, cycle, &targets, &report.errors, improvement)?;
                    if outcome.applied() {
                        resolved.insert(fragility);
                        match &improvement.kind {
                            ImprovementKind::External { changes } => overlay.changes.extend(changes.iter().cloned()),
                            ImprovementKind::Internal { to, .. } => overlay.activations.push(to.clone()),
                        }
                    }
                    report.attempts.push(Attempt { improvement: improvement.clone(), outcome });
                }
            }
            report.metrics.improvements_applied = report.attempts.iter().filter(|a| a.outcome.applied()).count() as u64;
            report.report = Some(fragilities);
            report.plan = Some(plan);
        }
        cycles.push(report);
    }
    let gain = compute_gain(&cycles.iter().map(|c| c.metrics.clone()).collect::<Vec<_>>());
    Ok(LoopOutcome { cycles, gain, overlay })
}

fn evaluate(
    config: &ScenarioConfig,
    overlay: &Overlay,
    cycle: u32,
    targets: &[ActorPath],
    errors: &ErrorLog,
    improvement: &Improvement,
) -> Result<Outcome, HarnessError> {
    match &improvement.kind {
        ImprovementKind::External { changes } => {
            let before = matching_failures(&errors.events, &improvement.addresses);
            let mut candidate = overlay.clone();
            candidate.changes.extend(changes.iter().cloned());
            let (_, replay) = match run_cycle(config, &candidate, cycle, targets) {
                Ok(r) => r,
                Err(HarnessError::Setup(reason)) => return Ok(Outcome::Inapplicable { reason }),
                Err(e) => return Err(e),
            };
            let after = matching_failures(&replay.errors.events, &improvement.addresses);
            Ok(if after < before { Outcome::Accepted { before, after } } else { Outcome::Rejected { before, after } })
        }
        ImprovementKind::Internal { .. } => rollout(config, overlay, cycle, targets, improvement),
    }
}

/// Gated rollout on replays: step `k` switches the first `k + 1` fractions
/// and replays the cycle; any matching failure on the new version rolls
/// the replay back and rejects the version.
fn rollout(
    config: &ScenarioConfig,
    overlay: &Overlay,
    cycle: u32,
    targets: &[ActorPath],
    improvement: &Improvement,
) -> Result<Outcome, HarnessError> {
    let schedule = &config.builder.rollout;
    for (step, &fraction) in schedule.fractions.iter().enumerate() {
        let mut system = build_system(config, overlay)?;
        let mut handle = match apply_internal(&mut system, improvement, schedule) {
            Ok(h) => h,
            Err(e) => return Ok(Outcome::Inapplicable { reason: e.to_string() }),
        };
        for _ in 0..=step {
            handle.advance(&mut system).map_err(|e| HarnessError::Setup(e.to_string()))?;
        }
        let (mut system, errors, _) = execute(config, system, cycle, targets)?;
        if !handle.gate_holds(&system.trace().records) || !handle.gate_holds_events(&errors.events) {
            handle.rollback(&mut system).map_err(|e| HarnessError::Setup(e.to_string()))?;
            return Ok(Outcome::RolledBack { step, fraction });
        }
    }
    Ok(Outcome::Promoted)
}
