//! Actor-facing types: envelopes, behaviors, handler outcomes and lifecycle.

use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{ActorId, ActorPath, Fingerprint, Payload, Tick};
use crate::supervision::FaultKind;

/// Actor state. Kept as a JSON value so traces can show it and sandboxes
/// can copy it.
pub type State = serde_json::Value;

/// An immutable message in flight or waiting in a mailbox.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    from: ActorId,
    to: ActorId,
    payload: Payload,
    seq: u64,
    sent_at: Tick,
    pub(crate) taint: Taint,
}

/// Marks left on an envelope by delivery faults. Not visible to handlers.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Taint {
    pub delayed: bool,
    pub corrupted: bool,
}

impl Envelope {
    pub(crate) fn new(from: ActorId, to: ActorId, payload: Payload, seq: u64, sent_at: Tick) -> Self {
        Envelope { from, to, payload, seq, sent_at, taint: Taint::default() }
    }

    pub fn from(&self) -> &ActorId {
        &self.from
    }

    pub fn to(&self) -> &ActorId {
        &self.to
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// Position of this envelope in the stream of its `(from, to)` pair.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn sent_at(&self) -> Tick {
        self.sent_at
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.payload.fingerprint()
    }
}

/// Handler signature: `(current state, envelope, context) -> outcome`.
pub type Handler = Arc<dyn Fn(&State, &Envelope, &mut Context<'_>) -> BehaviorOutcome + Send + Sync>;

/// What an actor is: a type name, its message handler and its initial state.
#[derive(Clone)]
pub struct BehaviorSpec {
    type_name: String,
    handler: Handler,
    initial_state: State,
    deadline: Option<Tick>,
}

impl BehaviorSpec {
    pub fn new<F>(type_name: impl Into<String>, initial_state: State, handler: F) -> Self
    where
        F: Fn(&State, &Envelope, &mut Context<'_>) -> BehaviorOutcome + Send + Sync + 'static,
    {
        BehaviorSpec { type_name: type_name.into(), handler: Arc::new(handler), initial_state, deadline: None }
    }

    /// Envelopes older than `ticks` when they reach the handler fail the
    /// actor with a timeout instead of being handled.
    pub fn with_deadline(mut self, ticks: Tick) -> Self {
        self.deadline = Some(ticks);
        self
    }

    pub fn type_name(&self) -> &str {
        &self.type_name
    }

    pub fn initial_state(&self) -> &State {
        &self.initial_state
    }

    pub fn deadline(&self) -> Option<Tick> {
        self.deadline
    }

    pub(crate) fn handle(&self, state: &State, envelope: &Envelope, ctx: &mut Context<'_>) -> BehaviorOutcome {
        (self.handler)(state, envelope, ctx)
    }
}

impl fmt::Debug for BehaviorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorSpec")
            .field("type_name", &self.type_name)
            .field("initial_state", &self.initial_state)
            .field("deadline", &self.deadline)
            .finish_non_exhaustive()
    }
}

/// Result of handling one envelope. A failing handler produces no effects.
#[derive(Debug)]
pub enum BehaviorOutcome {
    Handled(Effects),
    Failed(FaultKind),
}

impl BehaviorOutcome {
    pub fn fail(kind: FaultKind) -> Self {
        BehaviorOutcome::Failed(kind)
    }

    /// Handled, state untouched, nothing sent.
    pub fn keep() -> Self {
        BehaviorOutcome::Handled(Effects::default())
    }
}

impl From<Effects> for BehaviorOutcome {
    fn from(value: Effects) -> Self {
        BehaviorOutcome::Handled(value)
    }
}

/// Side effects of a successful handler invocation, applied in order:
/// state, spawns, then sends.
#[derive(Debug, Default)]
pub struct Effects {
    pub new_state: Option<State>,
    pub outbound: Vec<(ActorPath, Payload)>,
    pub spawns: Vec<(String, BehaviorSpec)>,
    /// The message was an expected domain error, reported as a normal event.
    pub domain_error: bool,
}

impl Effects {
    pub fn new() -> Self {
        Effects::default()
    }

    pub fn state(mut self, state: State) -> Self {
        self.new_state = Some(state);
        self
    }

    pub fn send(mut self, to: ActorPath, payload: impl Into<Payload>) -> Self {
        self.outbound.push((to, payload.into()));
        self
    }

    pub fn spawn(mut self, name: impl Into<String>, spec: BehaviorSpec) -> Self {
        self.spawns.push((name.into(), spec));
        self
    }

    pub fn domain_error(mut self) -> Self {
        self.domain_error = true;
        self
    }
}

/// Read-only view of the scheduler handed to a handler, plus the actor's
/// private random stream.
pub struct Context<'a> {
    pub(crate) me: &'a ActorId,
    pub(crate) parent: Option<&'a ActorPath>,
    pub(crate) tick: Tick,
    pub(crate) rng: &'a mut ChaCha8Rng,
}

impl Context<'_> {
    pub fn me(&self) -> &ActorId {
        self.me
    }

    pub fn parent(&self) -> Option<&ActorPath> {
        self.parent
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LifecycleState {
    Starting,
    Running,
    Suspended,
    Restarting,
    Stopped,
}

impl LifecycleState {
    pub fn can_transition(self, to: LifecycleState) -> bool {
        use LifecycleState::*;
        matches!(
            (self, to),
            (Starting, Running)
                | (Running, Suspended)
                | (Running, Restarting)
                | (Running, Stopped)
                | (Suspended, Running)
                | (Suspended, Restarting)
                | (Suspended, Stopped)
                | (Restarting, Starting)
        )
    }

    pub fn is_live(self) -> bool {
        self != LifecycleState::Stopped
    }
}
