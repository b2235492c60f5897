//! Misbehaving nodes. Each behavior attaches to an existing node id, so a
//! node can never act under more than one identity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{sign, DigestAlgo, KeyPair, NodeId};
use crate::packets::{FixedPosition, PacketA, SignerEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("unknown adversary behavior `{0}`")]
    UnknownBehavior(String),
    #[error("malformed adversary entry `{0}`, expected `node:behavior`")]
    Malformed(String),
    #[error("node {0} is assigned more than one behavior")]
    Duplicate(NodeId),
    #[error("adversary node {node} does not exist in a network of {count} nodes")]
    NoSuchNode { node: NodeId, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    FalseInfo,
    ModifyAggregate,
    DiscardAggregate,
    FalseTrustIncrease,
    LeaderFalseSignature,
    Collusion,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::FalseInfo,
        AttackKind::ModifyAggregate,
        AttackKind::DiscardAggregate,
        AttackKind::FalseTrustIncrease,
        AttackKind::LeaderFalseSignature,
        AttackKind::Collusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::FalseInfo => "false_info",
            AttackKind::ModifyAggregate => "modify_aggregate",
            AttackKind::DiscardAggregate => "discard_aggregate",
            AttackKind::FalseTrustIncrease => "false_trust_increase",
            AttackKind::LeaderFalseSignature => "leader_false_signature",
            AttackKind::Collusion => "collusion",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Behavior {
    #[default]
    Honest,
    /// Reports an event that does not exist.
    FalseInfo,
    /// Alters the report of aggregates it relays.
    ModifyAggregate,
    /// Silently drops aggregates it should relay.
    DiscardAggregate,
    /// Appends its own signature to aggregates it relays without having seen the event.
    FalseTrustIncrease,
    /// As a leader, inserts one forged signature into its aggregate.
    LeaderFalseSignature,
    /// Reports a false event co-signed by every member of the group.
    Collusion { group: BTreeSet<NodeId> },
}

impl Behavior {
    pub fn kind(&self) -> Option<AttackKind> {
        Some(match self {
            Behavior::Honest => return None,
            Behavior::FalseInfo => AttackKind::FalseInfo,
            Behavior::ModifyAggregate => AttackKind::ModifyAggregate,
            Behavior::DiscardAggregate => AttackKind::DiscardAggregate,
            Behavior::FalseTrustIncrease => AttackKind::FalseTrustIncrease,
            Behavior::LeaderFalseSignature => AttackKind::LeaderFalseSignature,
            Behavior::Collusion { .. } => AttackKind::Collusion,
        })
    }

    /// Whether the node fabricates an event of its own.
    pub fn fabricates(&self) -> bool {
        matches!(self, Behavior::FalseInfo | Behavior::Collusion { .. })
    }

    /// Parses `false_info`, `collusion(4;5;6)` and the other snake-case names.
    /// A collusion group always includes the node it is attached to.
    pub fn parse(s: &str, owner: NodeId) -> Result<Self, AdversaryError> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("collusion(").and_then(|r| r.strip_suffix(')')) {
            let mut group = BTreeSet::from([owner]);
            for part in inner.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let id: u64 = part
                    .parse()
                    .map_err(|_| AdversaryError::UnknownBehavior(s.to_string()))?;
                group.insert(NodeId(id));
            }
            return Ok(Behavior::Collusion { group });
        }
        Ok(match s {
            "honest" => Behavior::Honest,
            "false_info" => Behavior::FalseInfo,
            "modify_aggregate" => Behavior::ModifyAggregate,
            "discard_aggregate" => Behavior::DiscardAggregate,
            "false_trust_increase" => Behavior::FalseTrustIncrease,
            "leader_false_signature" => Behavior::LeaderFalseSignature,
            other => return Err(AdversaryError::UnknownBehavior(other.to_string())),
        })
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Honest => f.write_str("honest"),
            Behavior::Collusion { group } => {
                let ids: Vec<String> = group.iter().map(|n| n.0.to_string()).collect();
                write!(f, "collusion({})", ids.join(";"))
            }
            other => f.write_str(other.kind().expect("not honest").name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdversarySpec {
    behaviors: BTreeMap<NodeId, Behavior>,
}

impl AdversarySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: NodeId, behavior: Behavior) -> Self {
        self.behaviors.insert(node, behavior);
        self
    }

    /// Comma-separated `node:behavior` entries; the empty string means no adversaries.
    pub fn parse(s: &str) -> Result<Self, AdversaryError> {
        let mut spec = AdversarySpec::default();
        for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            let (node, behavior) = entry
                .split_once(':')
                .ok_or_else(|| AdversaryError::Malformed(entry.to_string()))?;
            let node = NodeId(
                node.trim()
                    .parse()
                    .map_err(|_| AdversaryError::Malformed(entry.to_string()))?,
            );
            let behavior = Behavior::parse(behavior, node)?;
            if spec.behaviors.insert(node, behavior).is_some() {
                return Err(AdversaryError::Duplicate(node));
            }
        }
        Ok(spec)
    }

    pub fn validate(&self, node_count: usize) -> Result<(), AdversaryError> {
        let referenced = self.behaviors.iter().flat_map(|(n, b)| {
            let group: Vec<NodeId> = match b {
                Behavior::Collusion { group } => group.iter().copied().collect(),
                _ => Vec::new(),
            };
            std::iter::once(*n).chain(group)
        });
        for node in referenced {
            if node.0 as usize >= node_count {
                return Err(AdversaryError::NoSuchNode { node, count: node_count });
            }
        }
        Ok(())
    }

    pub fn behavior(&self, node: NodeId) -> &Behavior {
        static HONEST: Behavior = Behavior::Honest;
        self.behaviors.get(&node).unwrap_or(&HONEST)
    }

    /// False for configured adversaries and for accomplices named in a collusion group.
    pub fn is_honest(&self, node: NodeId) -> bool {
        *self.behavior(node) == Behavior::Honest
            && !self
                .behaviors
                .values()
                .any(|b| matches!(b, Behavior::Collusion { group } if group.contains(&node)))
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.values().all(|b| *b == Behavior::Honest)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Behavior)> {
        self.behaviors.iter().map(|(n, b)| (*n, b))
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.behaviors.iter().map(|(n, b)| format!("{}:{b}", n.0)).collect();
        f.write_str(&parts.join(", "))
    }
}

/// Flips the lowest bit of the report timestamp (byte 43 of the encoding).
/// The report stays well-formed, but no signature covers it any more.
pub fn tamper_report(p: &PacketA) -> PacketA {
    let mut out = p.clone();
    out.report.timestamp_ms ^= 1;
    out
}

/// Appends a signature attributed to the lowest node id not already signing,
/// made with a key that node does not own.
pub fn forge_signature(p: &PacketA, position: FixedPosition, digest: DigestAlgo) -> PacketA {
    let present: BTreeSet<NodeId> = p.signer_ids().into_iter().collect();
    let victim = (0..)
        .map(NodeId)
        .find(|n| !present.contains(n))
        .expect("finite signer set");
    let forger = KeyPair::from_seed(victim, [0xa5; 32]);
    let mut out = p.clone();
    out.signers.push(SignerEntry {
        position,
        signature: sign(&forger, &p.report.encode(), digest).expect("non-empty report"),
    });
    out
}

/// Appends the relay's own, genuine signature.
pub fn append_signature(p: &PacketA, keys: &KeyPair, position: FixedPosition, digest: DigestAlgo) -> PacketA {
    let mut out = p.clone();
    if !p.signer_ids().contains(&keys.node()) {
        out.signers.push(SignerEntry {
            position,
            signature: sign(keys, &p.report.encode(), digest).expect("non-empty report"),
        });
    }
    out
}
