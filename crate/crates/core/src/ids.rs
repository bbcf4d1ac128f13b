//! Identity types shared by every layer: actor paths, incarnations, logical
//! time, payloads and their fingerprints.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Logical time. One scheduler step advances the clock by one tick.
pub type Tick = u64;

/// Slash-separated location of an actor in the supervision tree.
///
/// Every path starts at the root guardian, `/root`. Segment names are
/// non-empty and never contain `/`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActorPath(String);

impl ActorPath {
    pub const ROOT: &'static str = "/root";

    pub fn root() -> Self {
        ActorPath(Self::ROOT.to_string())
    }

    pub fn parse(raw: &str) -> Result<Self, PathError> {
        if raw != Self::ROOT && !raw.starts_with("/root/") {
            return Err(PathError(raw.to_string()));
        }
        if raw[1..].split('/').any(str::is_empty) {
            return Err(PathError(raw.to_string()));
        }
        Ok(ActorPath(raw.to_string()))
    }

    /// Resolves a path written relative to the root guardian (`sup/worker`)
    /// or absolutely (`/root/sup/worker`).
    pub fn resolve(raw: &str) -> Result<Self, PathError> {
        if raw.starts_with('/') {
            Self::parse(raw)
        } else if raw.is_empty() {
            Ok(Self::root())
        } else {
            Self::parse(&format!("{}/{raw}", Self::ROOT))
        }
    }

    pub fn child(&self, name: &str) -> Result<Self, PathError> {
        if name.is_empty() || name.contains('/') {
            return Err(PathError(format!("{}/{name}", self.0)));
        }
        Ok(ActorPath(format!("{}/{name}", self.0)))
    }

    pub fn parent(&self) -> Option<ActorPath> {
        if self.is_root() {
            return None;
        }
        let cut = self.0.rfind('/').expect("paths always contain a slash");
        Some(ActorPath(self.0[..cut].to_string()))
    }

    pub fn name(&self) -> &str {
        let cut = self.0.rfind('/').expect("paths always contain a slash");
        &self.0[cut + 1..]
    }

    pub fn is_root(&self) -> bool {
        self.0 == Self::ROOT
    }

    /// Number of edges between this actor and the root guardian.
    pub fn depth(&self) -> usize {
        self.0.matches('/').count() - 1
    }

    /// Strict ancestry: a path is not its own ancestor.
    pub fn is_ancestor_of(&self, other: &ActorPath) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0) && other.0.as_bytes()[self.0.len()] == b'/'
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ActorPath {
    type Error = PathError;

    /// Accepts relative paths so scenario files can omit the root prefix.
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ActorPath::resolve(&value)
    }
}

impl From<ActorPath> for String {
    fn from(value: ActorPath) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid actor path `{0}`")]
pub struct PathError(pub String);

/// A path plus the incarnation living at it. Restarts bump the incarnation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActorId {
    pub path: ActorPath,
    pub incarnation: u64,
}

impl ActorId {
    pub fn new(path: ActorPath, incarnation: u64) -> Self {
        ActorId { path, incarnation }
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.path, self.incarnation)
    }
}

/// Opaque message body. The runtime only ever compares fingerprints.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Payload(Vec<u8>);

impl Payload {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Payload(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Lossy text view, handy for behaviors that speak in strings.
    pub fn as_text(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.0)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.0)
    }
}

impl From<&str> for Payload {
    fn from(value: &str) -> Self {
        Payload(value.as_bytes().to_vec())
    }
}

impl From<String> for Payload {
    fn from(value: String) -> Self {
        Payload(value.into_bytes())
    }
}

/// First 64 bits of the SHA-256 digest of a payload, rendered as 16 hex digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn of(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_be_bytes(head))
    }

    pub fn of_text(text: &str) -> Self {
        Self::of(text.as_bytes())
    }

    pub fn parse_hex(raw: &str) -> Option<Self> {
        if raw.len() != 16 {
            return None;
        }
        u64::from_str_radix(raw, 16).ok().map(Fingerprint)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Fingerprint::parse_hex(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid fingerprint `{raw}`")))
    }
}

/// Stable 64-bit hash of an arbitrary label, used to derive RNG streams and
/// rollout ranks.
pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}
