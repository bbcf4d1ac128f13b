//! Behaviors a scenario file can describe.

use rand::Rng;
use serde_json::json;

use crate::actor::{BehaviorOutcome, BehaviorSpec, Effects, State};
use crate::ids::ActorPath;
use crate::supervision::FaultKind;

use super::config::BehaviorParams;

/// Type name of actors declared without a type.
pub const SUPERVISOR: &str = "supervisor";

/// Holds children and ignores messages.
pub fn supervisor() -> BehaviorSpec {
    BehaviorSpec::new(SUPERVISOR, State::Null, |_, _, _| BehaviorOutcome::keep())
}

/// Counts handled messages in `{"handled": n}` and reacts to payloads as
/// the parameters say. Crashes take precedence over domain errors.
pub fn configured(type_name: &str, params: &BehaviorParams) -> BehaviorSpec {
    let p = params.clone();
    let fault = p.crash_fault.unwrap_or(FaultKind::PoisonMessage);
    let forward = p.forward_to.as_deref().map(|raw| ActorPath::resolve(raw).expect("validated with the scenario"));
    let spec = BehaviorSpec::new(type_name, json!({ "handled": 0 }), move |state, env, ctx| {
        let text = env.payload().as_text();
        if p.crash_all || p.crash_on.iter().any(|c| *c == text) {
            return BehaviorOutcome::fail(fault);
        }
        let handled = state["handled"].as_u64().unwrap_or(0) + 1;
        let mut effects = Effects::new().state(json!({ "handled": handled }));
        let random_error = p.domain_error_rate > 0.0 && ctx.rng().gen_bool(p.domain_error_rate);
        if random_error || p.domain_error_on.iter().any(|c| *c == text) {
            effects = effects.domain_error();
        }
        if let Some(to) = &forward {
            effects = effects.send(to.clone(), env.payload().clone());
        }
        effects.into()
    });
    match params.deadline {
        Some(ticks) => spec.with_deadline(ticks),
        None => spec,
    }
}
