//! Brute-force reference interpreter for the supervision rules, compared
//! against the scheduler on small random trees. Written before the
//! scheduler and kept independent of it.
//!
//! The interpreter knows nothing about mailboxes or ticks: each scenario
//! event is one message delivered to one actor, and the whole failure
//! cascade it causes is resolved recursively before the next event.

use antifragile::{
    ActorPath, BehaviorOutcome, BehaviorSpec, Decider, Directive, Event, FaultKind, Scope, SupervisionStrategySpec,
    System, SystemConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FAULTS: [FaultKind; 3] = [FaultKind::HandlerPanic, FaultKind::PoisonMessage, FaultKind::Timeout];
const DIRECTIVES: [Directive; 4] = [Directive::Resume, Directive::Restart, Directive::Stop, Directive::Escalate];
const SCOPES: [Scope; 3] = [Scope::OneForOne, Scope::AllForOne, Scope::RestForOne];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Obs {
    Failed(String, FaultKind),
    Applied(String, Directive),
    Escalated(String, String, bool),
    Respawned(String),
    Terminated(String),
}

#[derive(Clone, Debug)]
struct Strat {
    scope: Scope,
    table: Vec<(FaultKind, Directive)>,
    otherwise: Directive,
    max_restarts: u32,
}

impl Strat {
    fn directive(&self, fault: FaultKind) -> Directive {
        self.table.iter().find(|(f, _)| *f == fault).map(|(_, d)| *d).unwrap_or(self.otherwise)
    }

    fn to_spec(&self) -> SupervisionStrategySpec {
        let mut decider = Decider::always(self.otherwise);
        for (f, d) in &self.table {
            decider = decider.with(*f, *d);
        }
        SupervisionStrategySpec::new(self.scope, decider, self.max_restarts, 1_000_000).unwrap()
    }
}

struct Node {
    path: String,
    parent: Option<usize>,
    children: Vec<usize>,
    strat: Strat,
    alive: bool,
    restarts: u32,
}

struct Oracle {
    nodes: Vec<Node>,
    out: Vec<Obs>,
    halted: bool,
}

impl Oracle {
    fn live_children(&self, n: usize) -> Vec<usize> {
        self.nodes[n].children.iter().copied().filter(|&c| self.nodes[c].alive).collect()
    }

    fn deliver(&mut self, target: usize, fault: Option<FaultKind>) {
        if self.halted || !self.nodes[target].alive {
            return;
        }
        if let Some(fault) = fault {
            self.out.push(Obs::Failed(self.nodes[target].path.clone(), fault));
            self.handle(target, fault);
        }
    }

    fn handle(&mut self, child: usize, fault: FaultKind) {
        let sup = self.nodes[child].parent.expect("only children fail");
        let strat = self.nodes[sup].strat.clone();
        let directive =
            if self.nodes[child].restarts >= strat.max_restarts { Directive::Escalate } else { strat.directive(fault) };
        match directive {
            Directive::Resume => self.out.push(Obs::Applied(self.nodes[child].path.clone(), Directive::Resume)),
            Directive::Restart | Directive::Stop => {
                let live = self.live_children(sup);
                let mut affected: Vec<usize> = match strat.scope {
                    Scope::OneForOne => vec![child],
                    Scope::AllForOne => live.clone(),
                    Scope::RestForOne => {
                        let at = live.iter().position(|&c| c == child).unwrap();
                        live[at..].to_vec()
                    }
                };
                affected.reverse();
                for a in affected {
                    self.out.push(Obs::Applied(self.nodes[a].path.clone(), directive));
                    if directive == Directive::Restart {
                        self.respawn_descendants(a);
                    } else {
                        self.terminate_descendants(a);
                        self.nodes[a].alive = false;
                    }
                }
                if directive == Directive::Restart {
                    self.nodes[child].restarts += 1;
                }
            }
            Directive::Escalate => {
                let root = self.nodes[sup].parent.is_none();
                self.out.push(Obs::Escalated(self.nodes[child].path.clone(), self.nodes[sup].path.clone(), root));
                if root {
                    self.halted = true;
                } else {
                    self.handle(sup, fault);
                }
            }
        }
    }

    fn respawn_descendants(&mut self, n: usize) {
        for c in self.live_children(n) {
            self.out.push(Obs::Respawned(self.nodes[c].path.clone()));
            self.nodes[c].restarts = 0;
            self.respawn_descendants(c);
        }
    }

    fn terminate_descendants(&mut self, n: usize) {
        for c in self.live_children(n).into_iter().rev() {
            self.terminate_descendants(c);
            self.out.push(Obs::Terminated(self.nodes[c].path.clone()));
            self.nodes[c].alive = false;
        }
    }
}

pub struct Scenario {
    parents: Vec<usize>,
    strats: Vec<Strat>,
    events: Vec<(usize, Option<FaultKind>)>,
}

fn random_strat(rng: &mut ChaCha8Rng) -> Strat {
    let mut table = Vec::new();
    for f in FAULTS {
        if rng.gen_bool(0.5) {
            table.push((f, DIRECTIVES[rng.gen_range(0..4)]));
        }
    }
    Strat {
        scope: SCOPES[rng.gen_range(0..3)],
        table,
        otherwise: DIRECTIVES[rng.gen_range(0..3)],
        max_restarts: rng.gen_range(1..=3),
    }
}

pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actors = rng.gen_range(1..=4);
    // node 0 is the root guardian; node i > 0 hangs below an earlier node
    let parents = (1..=actors).map(|i| rng.gen_range(0..i)).collect();
    let strats = (0..=actors).map(|_| random_strat(&mut rng)).collect();
    let events = (0..rng.gen_range(1..=20))
        .map(|_| {
            let target = rng.gen_range(1..=actors);
            let fault = if rng.gen_bool(0.7) { Some(FAULTS[rng.gen_range(0..3)]) } else { None };
            (target, fault)
        })
        .collect();
    Scenario { parents, strats, events }
}

pub fn oracle_run(sc: &Scenario) -> Vec<Obs> {
    let mut nodes = vec![Node {
        path: "/root".into(),
        parent: None,
        children: vec![],
        strat: sc.strats[0].clone(),
        alive: true,
        restarts: 0,
    }];
    for (i, &p) in sc.parents.iter().enumerate() {
        let idx = i + 1;
        let path = format!("{}/a{idx}", nodes[p].path);
        nodes.push(Node {
            path,
            parent: Some(p),
            children: vec![],
            strat: sc.strats[idx].clone(),
            alive: true,
            restarts: 0,
        });
        nodes[p].children.push(idx);
    }
    let mut oracle = Oracle { nodes, out: vec![], halted: false };
    for &(target, fault) in &sc.events {
        oracle.deliver(target, fault);
    }
    oracle.out
}

fn test_actor() -> BehaviorSpec {
    BehaviorSpec::new("node", serde_json::json!(0), |state, env, _| {
        let text = env.payload().as_text();
        match text.strip_prefix("fail:") {
            Some("HandlerPanic") => BehaviorOutcome::fail(FaultKind::HandlerPanic),
            Some("PoisonMessage") => BehaviorOutcome::fail(FaultKind::PoisonMessage),
            Some("Timeout") => BehaviorOutcome::fail(FaultKind::Timeout),
            _ => antifragile::Effects::new().state(serde_json::json!(state.as_i64().unwrap_or(0) + 1)).into(),
        }
    })
}

pub fn runtime_run(sc: &Scenario) -> Vec<Obs> {
    let mut system = System::new(SystemConfig::default());
    system.set_strategy(&ActorPath::root(), sc.strats[0].to_spec()).unwrap();
    let mut paths = vec![ActorPath::root()];
    for (i, &p) in sc.parents.iter().enumerate() {
        let idx = i + 1;
        let id =
            system.spawn_with_strategy(&paths[p], &format!("a{idx}"), test_actor(), sc.strats[idx].to_spec()).unwrap();
        paths.push(id.path);
    }
    for &(target, fault) in &sc.events {
        if system.halted() {
            break;
        }
        let payload = match fault {
            Some(f) => format!("fail:{f:?}"),
            None => "ok".to_string(),
        };
        system.send(&ActorPath::root(), &paths[target], payload.as_str()).ok();
        system.run_until_idle(1_000).unwrap();
    }
    system
        .trace()
        .iter()
        .filter_map(|rec| {
            let subject = rec.subject.path.to_string();
            match &rec.event {
                Event::Failed(d) => Some(Obs::Failed(subject, d.fault)),
                Event::DirectiveApplied(d) => Some(Obs::Applied(subject, d.directive)),
                Event::Escalated(d) => Some(Obs::Escalated(subject, d.supervisor.to_string(), d.halted)),
                Event::Spawned(d) if d.respawn => Some(Obs::Respawned(subject)),
                Event::Terminated(_) => Some(Obs::Terminated(subject)),
                _ => None,
            }
        })
        .collect()
}

/// Seeds `0..count` where runtime and interpreter disagree.
pub fn mismatches(count: u64) -> Vec<u64> {
    (0..count)
        .filter(|&seed| {
            let sc = random_scenario(seed);
            runtime_run(&sc) != oracle_run(&sc)
        })
        .collect()
}
