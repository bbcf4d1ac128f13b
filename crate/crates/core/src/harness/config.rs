//! Scenario files.
//!
//! A scenario is one TOML document. Top-level keys set the seed, cycle count
//! and mode; tables describe the topology (`types`, `actors`, `routers`),
//! the workload, the stress plan, and learner/builder settings. The full
//! grammar is documented in the guide's scenario chapter.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builder::{Catalog, Remedy, RolloutSchedule};
use crate::extensions::{PreemptiveConfig, RoutingPolicy};
use crate::ids::{ActorPath, Fingerprint, Tick};
use crate::stressor::{Environment, FaultSpec, StressPolicy};
use crate::supervision::{Decider, Directive, FaultKind, Scope, SupervisionStrategySpec};
use crate::system::SystemConfig;

/// Invalid scenario, with the offending location (`actors[2].parent`,
/// `line 14, column 3`, ...).
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{location}: {message}")]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { location: location.into(), message: message.into() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Supervised,
    /// Virtual-actor runtime: failures re-instantiate on the spot, nothing
    /// is learned or built.
    Baseline,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode `{other}`, expected supervised or baseline")),
        }
    }
}

/// Parameters of the built-in configurable behavior. Every declared
/// version of every type is an instance of it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorParams {
    /// Payload texts whose arrival fails the handler.
    pub crash_on: Vec<String>,
    /// Fail on every message.
    pub crash_all: bool,
    /// Fault reported by `crash_on` and `crash_all`; PoisonMessage by default.
    pub crash_fault: Option<FaultKind>,
    /// Payload texts answered with a domain error.
    pub domain_error_on: Vec<String>,
    /// Share of other messages answered with a domain error, drawn from the
    /// actor's own random stream.
    pub domain_error_rate: f64,
    /// Forward every handled payload to this actor.
    pub forward_to: Option<String>,
    pub deadline: Option<Tick>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    pub name: String,
    /// Ordinal active at start. Later versions stay registered as
    /// improvement candidates.
    #[serde(default = "one")]
    pub active: u32,
    pub versions: Vec<BehaviorParams>,
}

fn one() -> u32 {
    1
}

/// Strategy fields; anything left out takes the default (one-for-one,
/// restart, 3 restarts per 100 ticks).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub scope: Option<Scope>,
    /// Directive for fault kinds missing from `table`.
    pub directive: Option<Directive>,
    pub table: BTreeMap<FaultKind, Directive>,
    pub max_restarts: Option<u32>,
    pub window: Option<Tick>,
    pub plugins: Vec<String>,
    /// Single plugin shorthand, appended after `plugins`.
    pub custom: Option<String>,
    /// Payload texts to quarantine from the start.
    pub quarantine: Vec<String>,
}

impl StrategyConfig {
    pub fn to_spec(&self) -> SupervisionStrategySpec {
        let base = SupervisionStrategySpec::default();
        let mut decider = Decider::always(self.directive.unwrap_or(base.decider.otherwise));
        decider.table = self.table.clone();
        let mut plugins = self.plugins.clone();
        plugins.extend(self.custom.clone());
        SupervisionStrategySpec {
            scope: self.scope.unwrap_or(base.scope),
            decider,
            max_restarts: self.max_restarts.unwrap_or(base.max_restarts),
            window: self.window.unwrap_or(base.window),
            plugins,
            quarantine: self.quarantine.iter().map(|p| Fingerprint::of_text(p)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub name: String,
    /// Parent path relative to the root guardian; empty for the root.
    #[serde(default)]
    pub parent: String,
    /// Declared type; absent means a passive supervisor.
    #[serde(default, rename = "type")]
    pub type_name: Option<String>,
    #[serde(default)]
    pub strategy: StrategyConfig,
    pub mailbox_capacity: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterConfig {
    pub target: String,
    pub policy: RoutingPolicy,
    pub replicas: u32,
}

/// A deterministic message stream from the outside world to one actor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub to: String,
    pub messages: u32,
    #[serde(default = "one_tick")]
    pub start: Tick,
    /// Ticks between consecutive messages.
    #[serde(default = "one_tick")]
    pub every: Tick,
    /// Messages per burst.
    #[serde(default = "one")]
    pub burst: u32,
    /// Ordinary payloads are `<payload>-<index>`.
    #[serde(default = "job")]
    pub payload: String,
    #[serde(default)]
    pub poison: Option<String>,
    #[serde(default)]
    pub poison_fraction: f64,
    /// Random stream name; defaults to the workload's position.
    #[serde(default)]
    pub stream: Option<String>,
}

fn one_tick() -> Tick {
    1
}

fn job() -> String {
    "job".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub session: String,
    pub policy: StressPolicy,
    pub environment: Environment,
    pub hierarchy: bool,
    pub faults: Vec<FaultSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginConfig {
    pub fallback_threshold: u32,
    pub preemptive: PreemptiveConfig,
    pub max_heals: u32,
}

impl Default for PluginConfig {
    fn default() -> Self {
        PluginConfig { fallback_threshold: 3, preemptive: PreemptiveConfig::default(), max_heals: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub min_support: u32,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig { min_support: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuilderConfig {
    pub catalog: Catalog,
    pub rollout: RolloutSchedule,
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub cycles: u32,
    pub mode: Mode,
    /// Scheduler steps allowed per run.
    pub max_ticks: u64,
    pub system: SystemConfig,
    pub root: StrategyConfig,
    pub types: Vec<TypeConfig>,
    pub actors: Vec<ActorConfig>,
    pub routers: Vec<RouterConfig>,
    pub workload: Vec<WorkloadConfig>,
    pub stress: Option<StressConfig>,
    pub plugins: PluginConfig,
    pub learner: LearnerConfig,
    pub builder: BuilderConfig,
}

// Raw shapes as written in the file, before defaults and checks.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    seed: u64,
    #[serde(default = "two")]
    cycles: u32,
    #[serde(default)]
    mode: Mode,
    #[serde(default = "default_max_ticks")]
    max_ticks: u64,
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    root: RawRoot,
    #[serde(default)]
    types: Vec<TypeConfig>,
    #[serde(default)]
    actors: Vec<ActorConfig>,
    #[serde(default)]
    routers: Vec<RouterConfig>,
    #[serde(default)]
    workload: Vec<WorkloadConfig>,
    stress: Option<RawStress>,
    #[serde(default)]
    plugins: RawPlugins,
    #[serde(default)]
    learner: RawLearner,
    #[serde(default)]
    builder: RawBuilder,
}

fn two() -> u32 {
    2
}

fn default_max_ticks() -> u64 {
    1_000_000
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSystem {
    mailbox_capacity: Option<usize>,
    cold_start_ticks: Option<Tick>,
    idle_deactivation_ticks: Option<Tick>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawRoot {
    strategy: StrategyConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStress {
    #[serde(default = "stress_session")]
    session: String,
    #[serde(default = "exhaustive")]
    policy: StressPolicy,
    #[serde(default)]
    environment: Environment,
    #[serde(default)]
    hierarchy: bool,
    #[serde(default)]
    faults: Vec<toml::Table>,
}

fn stress_session() -> String {
    "stress".to_string()
}

fn exhaustive() -> StressPolicy {
    StressPolicy::Exhaustive
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPlugins {
    fallback_threshold: Option<u32>,
    preemptive: Option<PreemptiveConfig>,
    max_heals: Option<u32>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawLearner {
    min_support: Option<u32>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawBuilder {
    /// Replaces the default remedies of the listed patterns.
    catalog: BTreeMap<String, Vec<Remedy>>,
    rollout: Option<Vec<f64>>,
}

const PATTERNS: [&str; 5] = [
    "deterministic-payload-crash",
    "recurrent-crash",
    "overload-collapse",
    "latency-sensitivity",
    "escalation-hotspot",
];

const PLUGINS: [&str; 3] = ["fallback", "preemptive", "healer"];

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|span| {
                    let line = text[..span.start].matches('\n').count() + 1;
                    let column = span.start - text[..span.start].rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("line {line}, column {column}")
                })
                .unwrap_or_else(|| "scenario".to_string());
            ConfigError::new(location, e.message())
        })?;
        ScenarioConfig::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
        ScenarioConfig::from_toml(&text)
    }

    fn from_raw(raw: RawScenario) -> Result<Self, ConfigError> {
        let defaults = SystemConfig::default();
        let system = SystemConfig {
            seed: raw.seed,
            mailbox_capacity: raw.system.mailbox_capacity.unwrap_or(defaults.mailbox_capacity),
            mode: defaults.mode,
            cold_start_ticks: raw.system.cold_start_ticks,
            idle_deactivation_ticks: raw.system.idle_deactivation_ticks,
        };
        let stress = raw.stress.map(convert_stress).transpose()?;
        let plugin_defaults = PluginConfig::default();
        let plugins = PluginConfig {
            fallback_threshold: raw.plugins.fallback_threshold.unwrap_or(plugin_defaults.fallback_threshold),
            preemptive: raw.plugins.preemptive.unwrap_or(plugin_defaults.preemptive),
            max_heals: raw.plugins.max_heals.unwrap_or(plugin_defaults.max_heals),
        };
        let mut catalog = Catalog::default();
        for (pattern, remedies) in raw.builder.catalog {
            if !PATTERNS.contains(&pattern.as_str()) {
                return Err(ConfigError::new(format!("builder.catalog.{pattern}"), "unknown fragility pattern"));
            }
            catalog.entries.insert(pattern, remedies);
        }
        let rollout = match raw.builder.rollout {
            Some(f) => RolloutSchedule::new(f).map_err(|e| ConfigError::new("builder.rollout", e.to_string()))?,
            None => RolloutSchedule::default(),
        };
        let config = ScenarioConfig {
            seed: raw.seed,
            cycles: raw.cycles,
            mode: raw.mode,
            max_ticks: raw.max_ticks,
            system,
            root: raw.root.strategy,
            types: raw.types,
            actors: raw.actors,
            routers: raw.routers,
            workload: raw.workload,
            stress,
            plugins,
            learner: LearnerConfig { min_support: raw.learner.min_support.unwrap_or(3) },
            builder: BuilderConfig { catalog, rollout },
        };
        config.validate()?;
        Ok(config)
    }

    /// Structural checks: the topology is a tree of unique names, every
    /// referenced type, path and plugin exists, numbers are in range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cycles == 0 {
            return Err(ConfigError::new("cycles", "must be at least 1"));
        }
        if self.max_ticks == 0 {
            return Err(ConfigError::new("max_ticks", "must be at least 1"));
        }
        if self.system.mailbox_capacity == 0 {
            return Err(ConfigError::new("system.mailbox_capacity", "must be at least 1"));
        }
        check_strategy("root.strategy", &self.root)?;
        let mut types = BTreeSet::new();
        for (i, t) in self.types.iter().enumerate() {
            let at = format!("types[{i}]");
            if !types.insert(t.name.as_str()) {
                return Err(ConfigError::new(format!("{at}.name"), format!("type `{}` declared twice", t.name)));
            }
            if t.versions.is_empty() {
                return Err(ConfigError::new(format!("{at}.versions"), "at least one version required"));
            }
            if t.active == 0 || t.active as usize > t.versions.len() {
                return Err(ConfigError::new(format!("{at}.active"), format!("no version {}", t.active)));
            }
            for (j, v) in t.versions.iter().enumerate() {
                let at = format!("{at}.versions[{j}]");
                if !(0.0..=1.0).contains(&v.domain_error_rate) {
                    return Err(ConfigError::new(format!("{at}.domain_error_rate"), "must lie in [0, 1]"));
                }
                if let Some(to) = &v.forward_to {
                    resolve(&format!("{at}.forward_to"), to)?;
                }
                if v.deadline == Some(0) {
                    return Err(ConfigError::new(format!("{at}.deadline"), "must be at least 1"));
                }
            }
        }
        let mut known: BTreeSet<ActorPath> = BTreeSet::from([ActorPath::root()]);
        for (i, a) in self.actors.iter().enumerate() {
            let at = format!("actors[{i}]");
            let parent = resolve(&format!("{at}.parent"), &a.parent)?;
            if !known.contains(&parent) {
                return Err(ConfigError::new(
                    format!("{at}.parent"),
                    format!("`{parent}` is not declared before this actor"),
                ));
            }
            let path = parent.child(&a.name).map_err(|e| ConfigError::new(format!("{at}.name"), e.to_string()))?;
            if !known.insert(path.clone()) {
                return Err(ConfigError::new(format!("{at}.name"), format!("`{path}` declared twice")));
            }
            if let Some(t) = &a.type_name {
                if !types.contains(t.as_str()) {
                    return Err(ConfigError::new(format!("{at}.type"), format!("type `{t}` is not declared")));
                }
            }
            if a.mailbox_capacity == Some(0) {
                return Err(ConfigError::new(format!("{at}.mailbox_capacity"), "must be at least 1"));
            }
            check_strategy(&format!("{at}.strategy"), &a.strategy)?;
        }
        let must_exist = |location: String, raw: &str| -> Result<ActorPath, ConfigError> {
            let path = resolve(&location, raw)?;
            if path.is_root() || !known.contains(&path) {
                return Err(ConfigError::new(location, format!("no actor `{path}`")));
            }
            Ok(path)
        };
        for (i, r) in self.routers.iter().enumerate() {
            must_exist(format!("routers[{i}].target"), &r.target)?;
            if r.replicas == 0 {
                return Err(ConfigError::new(format!("routers[{i}].replicas"), "must be at least 1"));
            }
        }
        for (i, w) in self.workload.iter().enumerate() {
            let at = format!("workload[{i}]");
            must_exist(format!("{at}.to"), &w.to)?;
            if w.every == 0 || w.burst == 0 {
                return Err(ConfigError::new(at, "every and burst must be at least 1"));
            }
            if !(0.0..=1.0).contains(&w.poison_fraction) {
                return Err(ConfigError::new(format!("{at}.poison_fraction"), "must lie in [0, 1]"));
            }
            if w.poison_fraction > 0.0 && w.poison.is_none() {
                return Err(ConfigError::new(format!("{at}.poison"), "poison_fraction set without a poison payload"));
            }
        }
        if let Some(stress) = &self.stress {
            stress.policy.validate().map_err(|e| ConfigError::new("stress.policy", e.to_string()))?;
            if let StressPolicy::CriticalityBased { critical } = &stress.policy {
                for (i, p) in critical.iter().enumerate() {
                    must_exist(format!("stress.policy.critical[{i}]"), p.as_str())?;
                }
            }
            for (i, f) in stress.faults.iter().enumerate() {
                f.fault.validate().map_err(|e| ConfigError::new(format!("stress.faults[{i}]"), e.to_string()))?;
            }
        }
        if self.learner.min_support == 0 {
            return Err(ConfigError::new("learner.min_support", "must be at least 1"));
        }
        Ok(())
    }

    /// Path of every declared actor, in declaration order.
    pub fn actor_paths(&self) -> Vec<ActorPath> {
        self.actors
            .iter()
            .map(|a| {
                let parent = ActorPath::resolve(&a.parent).expect("validated");
                parent.child(&a.name).expect("validated")
            })
            .collect()
    }
}

fn resolve(location: &str, raw: &str) -> Result<ActorPath, ConfigError> {
    ActorPath::resolve(raw).map_err(|e| ConfigError::new(location, e.to_string()))
}

fn check_strategy(location: &str, s: &StrategyConfig) -> Result<(), ConfigError> {
    s.to_spec().validate().map_err(|e| ConfigError::new(location, e.to_string()))?;
    for p in s.plugins.iter().chain(&s.custom) {
        if !PLUGINS.contains(&p.as_str()) {
            return Err(ConfigError::new(format!("{location}.plugins"), format!("unknown plugin `{p}`")));
        }
    }
    Ok(())
}

fn convert_stress(raw: RawStress) -> Result<StressConfig, ConfigError> {
    let faults = raw
        .faults
        .into_iter()
        .enumerate()
        .map(|(i, mut table)| {
            // `payload = "text"` is shorthand for the text's fingerprint
            if table.get("kind").and_then(toml::Value::as_str) == Some("crash-on-payload") {
                if let Some(toml::Value::String(text)) = table.remove("payload") {
                    table.insert("fingerprint".into(), toml::Value::String(Fingerprint::of_text(&text).to_string()));
                }
            }
            FaultSpec::deserialize(toml::Value::Table(table))
                .map_err(|e| ConfigError::new(format!("stress.faults[{i}]"), e.message().to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(StressConfig {
        session: raw.session,
        policy: raw.policy,
        environment: raw.environment,
        hierarchy: raw.hierarchy,
        faults,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[[types]]
name = "worker"
versions = [{}]

[[actors]]
name = "sup"

[[actors]]
name = "w"
parent = "sup"
type = "worker"

[[workload]]
to = "sup/w"
messages = 10
"#;

    #[test]
    fn minimal_scenario_takes_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.cycles, 2);
        assert_eq!(c.mode, Mode::Supervised);
        assert_eq!(c.system.mailbox_capacity, 1024);
        assert_eq!(c.actor_paths(), vec![ActorPath::resolve("sup").unwrap(), ActorPath::resolve("sup/w").unwrap()]);
        assert_eq!(c.actors[0].strategy.to_spec(), SupervisionStrategySpec::default());
    }

    #[test]
    fn undeclared_type_names_its_location() {
        let text = MINIMAL.replace("type = \"worker\"", "type = \"ghost\"");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert_eq!(err.location, "actors[1].type");
    }

    #[test]
    fn parents_must_come_first() {
        let text = MINIMAL.replace("parent = \"sup\"", "parent = \"nope\"");
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap_err().location, "actors[1].parent");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = ScenarioConfig::from_toml("seed = \n").unwrap_err();
        assert!(err.location.starts_with("line 1"), "{err}");
    }

    #[test]
    fn payload_shorthand_becomes_fingerprint() {
        let text =
            format!("{MINIMAL}\n[stress]\n[[stress.faults]]\nkind = \"crash-on-payload\"\npayload = \"poison\"\n");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        let fault = &c.stress.unwrap().faults[0].fault;
        assert_eq!(*fault, crate::stressor::FaultType::CrashOnPayload { fingerprint: Fingerprint::of_text("poison") });
    }

    #[test]
    fn strategy_table_parses() {
        let text = MINIMAL.replace(
            "name = \"sup\"\n",
            "name = \"sup\"\nstrategy = { scope = \"AllForOne\", max_restarts = 9, table = { Timeout = \"Resume\" }, custom = \"fallback\" }\n",
        );
        let spec = ScenarioConfig::from_toml(&text).unwrap().actors[0].strategy.to_spec();
        assert_eq!(spec.scope, Scope::AllForOne);
        assert_eq!(spec.max_restarts, 9);
        assert_eq!(spec.decider.directive_for(FaultKind::Timeout), Directive::Resume);
        assert_eq!(spec.plugins, vec!["fallback".to_string()]);
    }

    #[test]
    fn unknown_plugin_rejected() {
        let text = MINIMAL.replace("name = \"sup\"\n", "name = \"sup\"\nstrategy = { custom = \"magic\" }\n");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }
}
