//! Per-cycle metrics and the antifragility verdict.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ActorPath, Tick};
use crate::trace::{DeadLetterReason, Event, EventRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: u32,
    /// Every Failed record in the cycle.
    pub failures: u64,
    pub injected: u64,
    /// Envelopes handled without failure over envelopes addressed to the
    /// subjects; 1.0 when nothing was addressed.
    pub availability: f64,
    /// Mean ticks from a failure to the same actor's next handled envelope.
    pub mean_recovery: f64,
    pub escalations: u64,
    /// Improvements accepted after this cycle ran.
    pub improvements_applied: u64,
}

/// Counts over `records`. Availability looks only at `subjects`:
/// handled / (handled + failed with an envelope + dead-lettered, except
/// dead letters of failure triggers, which are already counted as failed).
pub fn compute_metrics(cycle: u32, records: &[EventRecord], subjects: &BTreeSet<ActorPath>) -> CycleMetrics {
    let mut failures = 0;
    let mut injected = 0;
    let mut escalations = 0;
    let mut handled = 0u64;
    let mut lost = 0u64;
    let mut open: BTreeMap<&ActorPath, Vec<Tick>> = BTreeMap::new();
    let mut recoveries: Vec<Tick> = Vec::new();
    for rec in records {
        let path = rec.path();
        let subject = subjects.contains(path);
        match &rec.event {
            Event::Failed(d) => {
                failures += 1;
                open.entry(path).or_default().push(rec.tick);
                if subject && d.envelope.is_some() {
                    lost += 1;
                }
            }
            Event::Processed(_) => {
                if let Some(pending) = open.remove(path) {
                    recoveries.extend(pending.into_iter().map(|t| rec.tick - t));
                }
                if subject {
                    handled += 1;
                }
            }
            Event::DeadLettered(d) if subject && d.reason != DeadLetterReason::Trigger => lost += 1,
            Event::FaultInjected(_) => injected += 1,
            Event::Escalated(_) => escalations += 1,
            _ => {}
        }
    }
    let addressed = handled + lost;
    CycleMetrics {
        cycle,
        failures,
        injected,
        availability: if addressed == 0 { 1.0 } else { handled as f64 / addressed as f64 },
        mean_recovery: if recoveries.is_empty() {
            0.0
        } else {
            recoveries.iter().sum::<Tick>() as f64 / recoveries.len() as f64
        },
        escalations,
        improvements_applied: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Failures fell right after an improvement and never rose.
    Antifragile,
    Resilient,
    /// Failures rose somewhere.
    Fragile,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntifragilityGain {
    /// `failures[i + 1] - failures[i]`.
    pub failure_deltas: Vec<i64>,
    pub availability_deltas: Vec<f64>,
    pub verdict: Verdict,
}

pub fn compute_gain(series: &[CycleMetrics]) -> AntifragilityGain {
    let failure_deltas: Vec<i64> = series.windows(2).map(|w| w[1].failures as i64 - w[0].failures as i64).collect();
    let availability_deltas = series.windows(2).map(|w| w[1].availability - w[0].availability).collect();
    let improved = series.windows(2).any(|w| w[0].improvements_applied > 0 && w[1].failures < w[0].failures);
    let verdict = if failure_deltas.iter().any(|d| *d > 0) {
        Verdict::Fragile
    } else if improved {
        Verdict::Antifragile
    } else {
        Verdict::Resilient
    };
    AntifragilityGain { failure_deltas, availability_deltas, verdict }
}
