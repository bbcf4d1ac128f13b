//! Versioned behavior registry.
//!
//! Each type name owns an append-only list of versions with ordinals
//! `1, 2, ...`. Outside a rollout exactly one version is fully active; during
//! a rollout individual actor paths may be pinned to the candidate version.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::actor::BehaviorSpec;
use crate::ids::{ActorPath, Tick};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionId {
    pub type_name: String,
    pub ordinal: u32,
}

impl VersionId {
    pub fn new(type_name: impl Into<String>, ordinal: u32) -> Self {
        VersionId { type_name: type_name.into(), ordinal }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@v{}", self.type_name, self.ordinal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum VersionStatus {
    Registered,
    Active(f64),
    RolledBack,
}

impl VersionStatus {
    pub fn is_fully_active(self) -> bool {
        matches!(self, VersionStatus::Active(f) if f >= 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct VersionRecord {
    pub id: VersionId,
    pub spec: BehaviorSpec,
    pub registered_at: Tick,
    pub status: VersionStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("no versions registered for `{0}`")]
    NoVersions(String),
    #[error("`{0}` has no active version")]
    NotActivated(String),
    #[error("{0} has no older version")]
    NoOlderVersion(VersionId),
    #[error("{0} is not registered")]
    UnknownVersion(VersionId),
    #[error("behavior type `{spec}` registered under `{under}`")]
    TypeMismatch { spec: String, under: String },
    #[error("a rollout for `{0}` is already in progress")]
    RolloutInProgress(String),
    #[error("no rollout in progress for `{0}`")]
    NoRollout(String),
}

#[derive(Clone, Debug)]
struct RolloutState {
    to: u32,
    pins: BTreeMap<ActorPath, u32>,
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    types: BTreeMap<String, Vec<VersionRecord>>,
    rollouts: BTreeMap<String, RolloutState>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register_version(&mut self, type_name: &str, spec: BehaviorSpec) -> Result<VersionId, RegistryError> {
        self.register_version_at(type_name, spec, 0)
    }

    pub fn register_version_at(
        &mut self,
        type_name: &str,
        spec: BehaviorSpec,
        at: Tick,
    ) -> Result<VersionId, RegistryError> {
        if spec.type_name() != type_name {
            return Err(RegistryError::TypeMismatch {
                spec: spec.type_name().to_string(),
                under: type_name.to_string(),
            });
        }
        let versions = self.types.entry(type_name.to_string()).or_default();
        let id = VersionId::new(type_name, versions.len() as u32 + 1);
        versions.push(VersionRecord { id: id.clone(), spec, registered_at: at, status: VersionStatus::Registered });
        Ok(id)
    }

    pub fn is_registered(&self, type_name: &str) -> bool {
        self.types.contains_key(type_name)
    }

    pub fn versions(&self, type_name: &str) -> &[VersionRecord] {
        self.types.get(type_name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn record(&self, id: &VersionId) -> Result<&VersionRecord, RegistryError> {
        self.types
            .get(&id.type_name)
            .and_then(|v| v.get(id.ordinal.checked_sub(1)? as usize))
            .ok_or_else(|| RegistryError::UnknownVersion(id.clone()))
    }

    fn record_mut(&mut self, id: &VersionId) -> Result<&mut VersionRecord, RegistryError> {
        self.types
            .get_mut(&id.type_name)
            .and_then(|v| v.get_mut(id.ordinal.checked_sub(1)? as usize))
            .ok_or_else(|| RegistryError::UnknownVersion(id.clone()))
    }

    /// Makes `id` the single fully active version of its type.
    pub fn activate(&mut self, id: &VersionId) -> Result<(), RegistryError> {
        self.record(id)?;
        for rec in self.types.get_mut(&id.type_name).into_iter().flatten() {
            if rec.id == *id {
                rec.status = VersionStatus::Active(1.0);
            } else if rec.status.is_fully_active() {
                rec.status = VersionStatus::Registered;
            }
        }
        Ok(())
    }

    /// Highest fully active ordinal.
    pub fn active_version(&self, type_name: &str) -> Result<VersionId, RegistryError> {
        let versions = self
            .types
            .get(type_name)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| RegistryError::NoVersions(type_name.to_string()))?;
        versions
            .iter()
            .rev()
            .find(|r| r.status.is_fully_active())
            .map(|r| r.id.clone())
            .ok_or_else(|| RegistryError::NotActivated(type_name.to_string()))
    }

    pub fn previous_version(&self, id: &VersionId) -> Result<VersionId, RegistryError> {
        self.record(id)?;
        if id.ordinal <= 1 {
            return Err(RegistryError::NoOlderVersion(id.clone()));
        }
        Ok(VersionId::new(id.type_name.clone(), id.ordinal - 1))
    }

    /// Version an actor at `path` should run when it (re)starts.
    pub fn version_for(&self, type_name: &str, path: &ActorPath) -> Option<VersionId> {
        if let Some(pinned) = self.rollouts.get(type_name).and_then(|r| r.pins.get(path)) {
            return Some(VersionId::new(type_name, *pinned));
        }
        self.active_version(type_name).ok()
    }

    /// Replaces the active version with an older one and marks the abandoned
    /// version as rolled back.
    pub fn fall_back_to(&mut self, older: &VersionId) -> Result<VersionId, RegistryError> {
        let current = self.active_version(&older.type_name)?;
        if older.ordinal >= current.ordinal {
            return Err(RegistryError::NoOlderVersion(current));
        }
        self.activate(older)?;
        self.record_mut(&current)?.status = VersionStatus::RolledBack;
        Ok(current)
    }

    pub fn begin_rollout(&mut self, to: &VersionId, fraction: f64) -> Result<VersionId, RegistryError> {
        let from = self.active_version(&to.type_name)?;
        self.record(to)?;
        if self.rollouts.contains_key(&to.type_name) {
            return Err(RegistryError::RolloutInProgress(to.type_name.clone()));
        }
        self.rollouts.insert(to.type_name.clone(), RolloutState { to: to.ordinal, pins: BTreeMap::new() });
        self.record_mut(to)?.status = VersionStatus::Active(fraction);
        Ok(from)
    }

    pub fn set_rollout_fraction(&mut self, type_name: &str, fraction: f64) -> Result<(), RegistryError> {
        let to = self.rollouts.get(type_name).ok_or_else(|| RegistryError::NoRollout(type_name.to_string()))?.to;
        self.record_mut(&VersionId::new(type_name, to))?.status = VersionStatus::Active(fraction);
        Ok(())
    }

    pub fn pin(&mut self, type_name: &str, path: ActorPath, ordinal: u32) -> Result<(), RegistryError> {
        let rollout =
            self.rollouts.get_mut(type_name).ok_or_else(|| RegistryError::NoRollout(type_name.to_string()))?;
        rollout.pins.insert(path, ordinal);
        Ok(())
    }

    pub fn rollout_target(&self, type_name: &str) -> Option<VersionId> {
        self.rollouts.get(type_name).map(|r| VersionId::new(type_name, r.to))
    }

    pub fn complete_rollout(&mut self, type_name: &str) -> Result<VersionId, RegistryError> {
        let rollout = self.rollouts.remove(type_name).ok_or_else(|| RegistryError::NoRollout(type_name.to_string()))?;
        let to = VersionId::new(type_name, rollout.to);
        self.activate(&to)?;
        Ok(to)
    }

    pub fn rollback(&mut self, type_name: &str) -> Result<VersionId, RegistryError> {
        let rollout = self.rollouts.remove(type_name).ok_or_else(|| RegistryError::NoRollout(type_name.to_string()))?;
        let to = VersionId::new(type_name, rollout.to);
        self.record_mut(&to)?.status = VersionStatus::RolledBack;
        Ok(to)
    }

    pub fn in_rollout(&self, type_name: &str) -> bool {
        self.rollouts.contains_key(type_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::BehaviorOutcome;

    fn spec(name: &str) -> BehaviorSpec {
        BehaviorSpec::new(name, serde_json::json!(null), |_, _, _| BehaviorOutcome::keep())
    }

    #[test]
    fn ordinals_are_per_type() {
        let mut r = Registry::new();
        assert_eq!(r.register_version("worker", spec("worker")).unwrap(), VersionId::new("worker", 1));
        assert_eq!(r.register_version("worker", spec("worker")).unwrap(), VersionId::new("worker", 2));
        assert_eq!(r.register_version("router", spec("router")).unwrap(), VersionId::new("router", 1));
        assert!(matches!(r.register_version("worker", spec("other")), Err(RegistryError::TypeMismatch { .. })));
    }

    #[test]
    fn active_and_fallback() {
        let mut r = Registry::new();
        let v1 = r.register_version("worker", spec("worker")).unwrap();
        r.activate(&v1).unwrap();
        assert_eq!(r.active_version("worker").unwrap(), v1);
        let v2 = r.register_version("worker", spec("worker")).unwrap();
        r.activate(&v2).unwrap();
        assert_eq!(r.active_version("worker").unwrap(), v2);
        assert_eq!(r.fall_back_to(&v1).unwrap(), v2);
        assert_eq!(r.active_version("worker").unwrap(), v1);
        assert_eq!(r.record(&v2).unwrap().status, VersionStatus::RolledBack);
        assert_eq!(r.active_version("nope"), Err(RegistryError::NoVersions("nope".into())));
    }

    #[test]
    fn previous_version_arithmetic() {
        let mut r = Registry::new();
        for _ in 0..3 {
            r.register_version("worker", spec("worker")).unwrap();
        }
        let v3 = VersionId::new("worker", 3);
        let v2 = VersionId::new("worker", 2);
        assert_eq!(r.previous_version(&v3).unwrap(), v2);
        assert_eq!(
            r.previous_version(&VersionId::new("worker", 1)),
            Err(RegistryError::NoOlderVersion(VersionId::new("worker", 1)))
        );
        r.activate(&v3).unwrap();
        r.fall_back_to(&v2).unwrap();
        assert_eq!(r.previous_version(&r.active_version("worker").unwrap()).unwrap(), VersionId::new("worker", 1));
    }

    #[test]
    fn rollout_pins_and_rollback() {
        let mut r = Registry::new();
        let v1 = r.register_version("worker", spec("worker")).unwrap();
        let v2 = r.register_version("worker", spec("worker")).unwrap();
        r.activate(&v1).unwrap();
        let p = ActorPath::resolve("w").unwrap();
        let q = ActorPath::resolve("q").unwrap();
        assert_eq!(r.begin_rollout(&v2, 0.5).unwrap(), v1);
        r.pin("worker", p.clone(), 2).unwrap();
        assert_eq!(r.version_for("worker", &p), Some(v2.clone()));
        assert_eq!(r.version_for("worker", &q), Some(v1.clone()));
        assert_eq!(r.active_version("worker").unwrap(), v1);
        r.rollback("worker").unwrap();
        assert_eq!(r.version_for("worker", &p), Some(v1.clone()));
        assert_eq!(r.record(&v2).unwrap().status, VersionStatus::RolledBack);
    }
}
