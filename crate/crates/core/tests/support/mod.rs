//! Fixtures and checks shared by the property suites and the acceptance
//! runner. Checks return `Err(reason)` instead of panicking so both callers
//! can report them their own way.

#![allow(dead_code)]

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use antifragile::harness::ScenarioConfig;
use antifragile::stressor::{run_session, Environment, FaultSpec, FaultType, StressSession};
use antifragile::trace::DeadLetterReason;
use antifragile::{
    ActorPath, BehaviorOutcome, BehaviorSpec, Decider, Directive, Effects, Event, FaultKind, LifecycleState, Payload,
    Scope, State, SupervisionStrategySpec, System, SystemConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// `"fail"` fails with HandlerPanic; anything else increments the count.
pub fn counter() -> BehaviorSpec {
    BehaviorSpec::new("counter", json!(0), |state, env, _| {
        if env.payload().as_text() == "fail" {
            return BehaviorOutcome::fail(FaultKind::HandlerPanic);
        }
        Effects::new().state(json!(state.as_i64().unwrap() + 1)).into()
    })
}

pub fn strategy(scope: Scope, directive: Directive, max_restarts: u32, window: u64) -> SupervisionStrategySpec {
    SupervisionStrategySpec::new(scope, Decider::always(directive), max_restarts, window).unwrap()
}

/// One supervisor with three counter children `c0`, `c1`, `c2`.
pub struct Fixture {
    pub system: System,
    pub sup: ActorPath,
    pub children: Vec<ActorPath>,
}

impl Fixture {
    pub fn new(strategy: SupervisionStrategySpec) -> Fixture {
        let mut system = System::new(SystemConfig::default());
        let root = ActorPath::root();
        system.set_strategy(&root, self::strategy(Scope::OneForOne, Directive::Restart, 1_000_000, 10)).unwrap();
        let sup = system
            .spawn_with_strategy(
                &root,
                "sup",
                BehaviorSpec::new("sup", State::Null, |_, _, _| BehaviorOutcome::keep()),
                strategy,
            )
            .unwrap()
            .path;
        let children = (0..3).map(|i| system.spawn(&sup, &format!("c{i}"), counter()).unwrap().path).collect();
        Fixture { system, sup, children }
    }

    pub fn feed(&mut self, counts: [u8; 3]) {
        for (child, n) in self.children.clone().iter().zip(counts) {
            for _ in 0..n {
                self.system.send(&ActorPath::root(), child, "ok").unwrap();
            }
        }
        self.system.run_until_idle(10_000).unwrap();
    }

    pub fn snapshot(&self) -> Vec<(Option<State>, Option<u64>, Option<LifecycleState>)> {
        self.children
            .iter()
            .map(|c| {
                (
                    self.system.state_of(c).cloned(),
                    self.system.actor_id(c).map(|id| id.incarnation),
                    self.system.lifecycle(c),
                )
            })
            .collect()
    }
}

fn expected_affected(scope: Scope, failing: usize) -> BTreeSet<usize> {
    match scope {
        Scope::OneForOne => BTreeSet::from([failing]),
        Scope::AllForOne => (0..3).collect(),
        Scope::RestForOne => (failing..3).collect(),
    }
}

/// Fails child `failing` once under `directive` and checks who was touched
/// and how.
pub fn check_directive(scope: Scope, directive: Directive, failing: usize, counts: [u8; 3]) -> Check {
    let mut fx = Fixture::new(strategy(scope, directive, 100, 1000));
    fx.feed(counts);
    let before = fx.snapshot();
    let start = fx.system.trace().len();
    fx.system.send(&ActorPath::root(), &fx.children[failing], "fail").unwrap();
    fx.system.run_until_idle(10_000).unwrap();
    let after = fx.snapshot();
    let touched: BTreeSet<usize> = fx.system.trace().records[start..]
        .iter()
        .filter(|r| matches!(&r.event, Event::DirectiveApplied(d) if d.directive == directive))
        .filter_map(|r| fx.children.iter().position(|c| c == r.path()))
        .collect();
    let expected = match directive {
        Directive::Resume => BTreeSet::from([failing]),
        _ => expected_affected(scope, failing),
    };
    ensure!(
        touched == expected,
        "{scope:?}/{directive:?} failing c{failing}: touched {touched:?}, expected {expected:?}"
    );
    for i in 0..3 {
        let (state0, inc0, _) = &before[i];
        let (state1, inc1, life1) = &after[i];
        if !expected.contains(&i) {
            ensure!(before[i] == after[i], "c{i} outside the scope changed: {:?} -> {:?}", before[i], after[i]);
            continue;
        }
        match directive {
            Directive::Resume => {
                ensure!(state1 == state0 && inc1 == inc0, "Resume changed c{i}: {:?} -> {:?}", before[i], after[i]);
                ensure!(*life1 == Some(LifecycleState::Running), "c{i} not running after Resume");
            }
            Directive::Restart => {
                ensure!(*state1 == Some(json!(0)), "Restart left c{i} with state {state1:?}");
                ensure!(*inc1 == inc0.map(|n| n + 1), "Restart incarnation of c{i}: {inc0:?} -> {inc1:?}");
                ensure!(*life1 == Some(LifecycleState::Running), "c{i} not running after Restart");
            }
            Directive::Stop => {
                ensure!(*life1 == Some(LifecycleState::Stopped), "c{i} is {life1:?} after Stop");
            }
            Directive::Escalate => unreachable!(),
        }
    }
    Ok(())
}

/// A stopped child stays stopped: later sends are dead letters and nothing
/// processes them.
pub fn check_stop_is_terminal(failing: usize, later: u8) -> Check {
    let mut fx = Fixture::new(strategy(Scope::OneForOne, Directive::Stop, 100, 1000));
    fx.feed([1, 1, 1]);
    let target = fx.children[failing].clone();
    fx.system.send(&ActorPath::root(), &target, "fail").unwrap();
    fx.system.run_until_idle(10_000).unwrap();
    let start = fx.system.trace().len();
    for _ in 0..later {
        fx.system.send(&ActorPath::root(), &target, "ok").unwrap();
    }
    fx.system.run_until_idle(10_000).unwrap();
    ensure!(!fx.system.is_live(&target), "stopped child is live again");
    ensure!(fx.system.lifecycle(&target) == Some(LifecycleState::Stopped), "lifecycle left Stopped");
    let after = &fx.system.trace().records[start..];
    ensure!(
        !after.iter().any(|r| r.path() == &target && matches!(r.event, Event::Processed(_) | Event::Spawned(_))),
        "stopped child processed or respawned"
    );
    let dead = after
        .iter()
        .filter(|r| matches!(&r.event, Event::DeadLettered(d) if d.reason == DeadLetterReason::NoTarget))
        .count();
    ensure!(dead == later as usize, "{dead} dead letters for {later} sends");
    Ok(())
}

/// Failures of `c0` at the given gaps: each is escalated exactly when the
/// restarts already recorded inside the window reach `max_restarts`.
pub fn check_escalation_threshold(max_restarts: u32, window: u64, gaps: &[u64]) -> Check {
    let mut fx = Fixture::new(strategy(Scope::OneForOne, Directive::Restart, max_restarts, window));
    let c0 = fx.children[0].clone();
    let mut at = 1;
    for gap in gaps {
        at += gap;
        fx.system.schedule_injection(at, &c0, Payload::from("fail"));
    }
    fx.system.run_until_idle(100_000).unwrap();
    let records = &fx.system.trace().records;
    let mut restarts: Vec<u64> = Vec::new();
    let mut seen = 0;
    for rec in records {
        let Event::Failed(f) = &rec.event else { continue };
        if rec.path() != &c0 {
            continue;
        }
        seen += 1;
        let in_window = restarts.iter().filter(|&&r| r + window >= rec.tick && r <= rec.tick).count() as u32;
        let escalated = records.iter().any(|r| matches!(&r.event, Event::Escalated(e) if e.failure == f.failure));
        let restarted = records.iter().any(|r| {
            r.path() == &c0 && matches!(&r.event, Event::DirectiveApplied(d) if d.failure == f.failure && d.directive == Directive::Restart)
        });
        let expect_escalate = in_window >= max_restarts;
        ensure!(
            escalated == expect_escalate && restarted != expect_escalate,
            "failure at tick {} with {in_window} restarts in window (max {max_restarts}): escalated={escalated} restarted={restarted}",
            rec.tick
        );
        if expect_escalate {
            // the root restarts `sup`, which clears its children's histories
            restarts.clear();
        } else {
            restarts.push(rec.tick);
        }
    }
    ensure!(seen == gaps.len(), "{seen} failures recorded for {} injections", gaps.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// Randomized scenarios
// ---------------------------------------------------------------------------

/// A random but valid scenario file. Every variant has a poisoned workload
/// so different seeds draw different payload streams.
pub fn random_scenario_toml(variant: u64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(variant);
    let workers = rng.gen_range(1..=4);
    let scope = ["OneForOne", "AllForOne", "RestForOne"][rng.gen_range(0..3)];
    let mut text = format!(
        "seed = {seed}\ncycles = 2\n\n[root]\nstrategy = {{ max_restarts = 100000, window = 10 }}\n\n\
         [[types]]\nname = \"worker\"\nversions = [{{ crash_on = [\"bad\"], domain_error_rate = {:.2} }}]\n\n\
         [[actors]]\nname = \"sup\"\nstrategy = {{ scope = \"{scope}\", max_restarts = {}, window = {} }}\n",
        rng.gen_range(0.0..0.3),
        rng.gen_range(1..50),
        rng.gen_range(5..200),
    );
    for i in 0..workers {
        text += &format!("\n[[actors]]\nname = \"w{i}\"\nparent = \"sup\"\ntype = \"worker\"\n");
        text += &format!(
            "\n[[workload]]\nto = \"sup/w{i}\"\nmessages = {}\nevery = {}\npoison = \"bad\"\npoison_fraction = {:.2}\n",
            rng.gen_range(20..80),
            rng.gen_range(1..4),
            rng.gen_range(0.05..0.3),
        );
    }
    let fault = match rng.gen_range(0..5) {
        0 => "kind = \"drop-delivery\"\nprobability = 0.2".to_string(),
        1 => "kind = \"delay-delivery\"\nticks = 3".to_string(),
        2 => "kind = \"corrupt-payload\"\nprobability = 0.1".to_string(),
        3 => format!("kind = \"crash-on-nth-message\"\nn = {}", rng.gen_range(1..10)),
        _ => "kind = \"load-surge\"\nrate = 3\nduration = 4".to_string(),
    };
    let env = if rng.gen_bool(0.5) { "in-place" } else { "sandbox" };
    text += &format!("\n[stress]\nenvironment = \"{env}\"\n\n[[stress.faults]]\n{fault}\n");
    text
}

pub fn random_scenario(variant: u64, seed: u64) -> ScenarioConfig {
    ScenarioConfig::from_toml(&random_scenario_toml(variant, seed)).unwrap()
}

// ---------------------------------------------------------------------------
// Actor-model invariants
// ---------------------------------------------------------------------------

/// Forwards `hop:<k>:<id>` to another actor (picked from the payload) with
/// `k - 1` hops left, and crashes on ids divisible by `crash_every`.
fn hopper(peers: Vec<ActorPath>, crash_every: u64) -> BehaviorSpec {
    BehaviorSpec::new("hopper", json!(0), move |state, env, ctx| {
        let text = env.payload().as_text().into_owned();
        let mut parts = text.split(':').skip(1);
        let hops: u64 = parts.next().and_then(|h| h.parse().ok()).unwrap_or(0);
        let id: u64 = parts.next().and_then(|h| h.parse().ok()).unwrap_or(0);
        if crash_every > 0 && id.is_multiple_of(crash_every) && hops.is_multiple_of(2) {
            return BehaviorOutcome::fail(FaultKind::HandlerPanic);
        }
        let mut effects = Effects::new().state(json!(state.as_i64().unwrap() + 1));
        if hops > 0 {
            let pick = ctx.rng().gen_range(0..peers.len());
            effects = effects.send(peers[pick].clone(), format!("hop:{}:{id}", hops - 1));
        }
        effects.into()
    })
}

/// A random tree of up to `max_actors` hoppers and at most `max_envelopes`
/// envelopes in total, run to idle.
pub fn random_workload(seed: u64, max_actors: usize, max_envelopes: u64) -> System {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut system = System::new(SystemConfig { seed, ..SystemConfig::default() });
    let root = ActorPath::root();
    system.set_strategy(&root, strategy(Scope::OneForOne, Directive::Restart, 1_000_000, 10)).unwrap();
    let n = rng.gen_range(2..=max_actors);
    let mut paths = vec![root.clone()];
    let names: Vec<ActorPath> = {
        // paths are fixed up front so every hopper knows its peers
        let mut parents = vec![root.clone()];
        let mut out = Vec::new();
        for i in 0..n {
            let parent = parents[rng.gen_range(0..parents.len())].clone();
            let path = parent.child(&format!("a{i}")).unwrap();
            parents.push(path.clone());
            out.push(path);
        }
        out
    };
    let crash_every = rng.gen_range(0..8u64);
    let directives = [Directive::Resume, Directive::Restart, Directive::Restart, Directive::Stop];
    for path in &names {
        let parent = path.parent().unwrap();
        let s = strategy(
            [Scope::OneForOne, Scope::AllForOne, Scope::RestForOne][rng.gen_range(0..3)],
            directives[rng.gen_range(0..directives.len())],
            1_000_000,
            10,
        );
        system.spawn_with_strategy(&parent, path.name(), hopper(names.clone(), crash_every), s).unwrap();
        paths.push(path.clone());
    }
    let hops = rng.gen_range(1..20u64);
    let injections = (max_envelopes / (hops + 1)).max(1);
    for id in 0..injections {
        let to = &names[rng.gen_range(0..names.len())];
        system.schedule_injection(rng.gen_range(1..200), to, format!("hop:{hops}:{id}"));
    }
    let _ = system.run_until_idle(1_000_000);
    system
}

/// Post-analysis of a finished trace:
/// - per sender/receiver pair, envelopes are picked up in send order;
/// - every handler invocation starts from the state the previous one (or
///   the last spawn/restart) left, so handlers ran one at a time;
/// - a failed invocation leaves the state exactly as it found it and sends
///   nothing.
pub fn check_actor_invariants(system: &System) -> Check {
    let mut last_seq: BTreeMap<(ActorPath, ActorPath), u64> = BTreeMap::new();
    let mut state: BTreeMap<ActorPath, State> = BTreeMap::new();
    for (i, rec) in system.trace().iter().enumerate() {
        let path = rec.path().clone();
        let picked = match &rec.event {
            Event::Processed(p) if p.control.is_none() => Some(&p.envelope),
            Event::Failed(f) if f.fault != FaultKind::MailboxOverflow => f.envelope.as_ref(),
            _ => None,
        };
        if let Some(env) = picked {
            let key = (env.from.clone(), path.clone());
            if let Some(prev) = last_seq.get(&key) {
                ensure!(env.seq > *prev, "record {i}: {key:?} picked seq {} after {prev}", env.seq);
            }
            last_seq.insert(key, env.seq);
        }
        match &rec.event {
            Event::Spawned(s) => {
                state.insert(path, s.state.clone());
            }
            Event::Processed(p) => {
                ensure!(state.get(&path) == Some(&p.state_in), "record {i}: {path} started from a stale state");
                state.insert(path, p.state_out.clone());
            }
            Event::Failed(f) if f.envelope.is_some() && f.fault != FaultKind::MailboxOverflow => {
                ensure!(state.get(&path) == Some(&f.state), "record {i}: failure at {path} saw a different state");
            }
            Event::DirectiveApplied(d) => {
                if let Some(s) = &d.state {
                    state.insert(path, s.clone());
                }
            }
            Event::VersionActivated(v) => {
                state.insert(path, v.state.clone());
            }
            Event::Preemptive(p) => {
                if let Some(s) = &p.state {
                    state.insert(path, s.clone());
                }
            }
            _ => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sandbox isolation
// ---------------------------------------------------------------------------

/// A sandbox session leaves the production system untouched, both at the
/// moment it runs and for everything production does afterwards.
pub fn check_sandbox_isolation(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut production = random_workload_unstarted(seed);
    let warmup = rng.gen_range(0..50);
    for _ in 0..warmup {
        production.step();
    }
    let mut untouched = production.clone();
    let hash = production.trace().hash();
    let targets: Vec<ActorPath> = production.live_actors().into_iter().filter(|p| !p.is_root()).collect();
    let fault = match rng.gen_range(0..4) {
        0 => FaultType::CrashOnNthMessage { n: rng.gen_range(1..4) },
        1 => FaultType::DropDelivery { probability: 0.5 },
        2 => FaultType::DelayDelivery { ticks: rng.gen_range(1..5) },
        _ => FaultType::LoadSurge { rate: 5, duration: 3, payload: "hop:2:0".into() },
    };
    let session = StressSession {
        id: format!("sandbox-{seed}"),
        targets: targets.into_iter().take(rng.gen_range(1..4)).collect(),
        faults: vec![FaultSpec::new(fault)],
        environment: Environment::Sandbox,
        hierarchy: rng.gen_bool(0.5),
    };
    let _ = run_session(&session, &mut production, 100_000);
    ensure!(production.trace().hash() == hash, "seed {seed}: sandbox session changed the production trace");
    let _ = production.run_until_idle(1_000_000);
    let _ = untouched.run_until_idle(1_000_000);
    ensure!(
        production.trace().hash() == untouched.trace().hash(),
        "seed {seed}: production diverged after a sandbox session"
    );
    Ok(())
}

fn random_workload_unstarted(seed: u64) -> System {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut system = System::new(SystemConfig { seed, ..SystemConfig::default() });
    let root = ActorPath::root();
    system.set_strategy(&root, strategy(Scope::OneForOne, Directive::Restart, 1_000_000, 10)).unwrap();
    let names: Vec<ActorPath> = (0..rng.gen_range(2..8)).map(|i| root.child(&format!("a{i}")).unwrap()).collect();
    for p in &names {
        system.spawn(&root, p.name(), hopper(names.clone(), 5)).unwrap();
    }
    for id in 0..rng.gen_range(10..60) {
        let to = &names[rng.gen_range(0..names.len())];
        system.schedule_injection(rng.gen_range(1..40), to, format!("hop:3:{id}"));
    }
    system
}
