//! A deterministic, single-threaded actor runtime with supervision trees,
//! fault injection, fragility mining and a closed improvement loop.
//!
//! Start with [`System`]: spawn actors under the root guardian, send them
//! messages, and drive the scheduler with [`System::run_until_idle`]. Every
//! observable step lands in a [`Trace`]; equal seeds and configurations give
//! byte-identical traces.
//!
//! ```
//! use antifragile::{ActorPath, BehaviorSpec, Effects, System, SystemConfig};
//!
//! let mut system = System::new(SystemConfig::default());
//! let counter = BehaviorSpec::new("counter", serde_json::json!(0), |state, _env, _ctx| {
//!     Effects::new().state(serde_json::json!(state.as_i64().unwrap() + 1)).into()
//! });
//! let id = system.spawn(&ActorPath::root(), "counter", counter).unwrap();
//! system.send(&ActorPath::root(), &id.path, "tick").unwrap();
//! let trace = system.run_until_idle(100).unwrap();
//! assert_eq!(trace.count(antifragile::EventKind::Processed), 1);
//! ```

pub mod actor;
pub mod builder;
pub mod extensions;
pub mod harness;
pub mod ids;
pub mod learner;
pub mod registry;
pub mod stressor;
pub mod supervision;
pub mod system;
pub mod trace;

pub use actor::{BehaviorOutcome, BehaviorSpec, Context, Effects, Envelope, LifecycleState, State};
pub use builder::{
    apply_external, apply_internal, build_improvements, Catalog, Improvement, ImprovementKind, ImprovementPlan, Remedy,
    RolloutHandle, RolloutSchedule, StrategyChange, TargetedChange,
};
pub use extensions::{CustomStrategyPlugin, PluginDecision, PluginSet, RoutingPolicy};
pub use ids::{ActorId, ActorPath, Fingerprint, Payload, Tick};
pub use learner::{Fragility, FragilityReport, Learner, Pattern, RuleAnalyzer, Subject};
pub use registry::{Registry, VersionId};
pub use stressor::{ErrorEvent, ErrorLog, FaultSpec, FaultType, StressPolicy, StressSession};
pub use supervision::{Decider, Directive, FailureRecord, FaultKind, Scope, SupervisionStrategySpec};
pub use system::{RunError, SendError, SpawnError, Step, SupervisionMode, System, SystemConfig, SystemError};
pub use trace::{Event, EventKind, EventRecord, Trace};
