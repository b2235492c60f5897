use std::collections::BTreeMap;

use crate::crypto::NodeId;
use crate::packets::PacketKind;
use crate::protocol::DropReason;

use super::adversary::AttackKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttackStats {
    /// Deliveries of attacker-produced packets, or fabricated warnings sent.
    pub injected: u64,
    pub detected: u64,
    /// Honest nodes that ended up trusting the attacker's packet.
    pub accepted: u64,
}

impl AttackStats {
    pub fn detection_rate(&self) -> Option<f64> {
        (self.injected > 0).then(|| self.detected as f64 / self.injected as f64)
    }
}

/// Counters of one run. All of them only grow while the run progresses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub node_count: usize,
    pub seed: u64,
    pub aggregation: bool,
    /// Transmissions that reached at least one potential receiver, by type.
    pub packets: BTreeMap<PacketKind, u64>,
    /// Broadcasts with nobody in range; they never leave the node.
    pub suppressed: u64,
    /// Receptions each transmission aimed at.
    pub receptions: u64,
    pub delivered: u64,
    pub lost: u64,
    /// Receptions still pending when the run ended.
    pub in_flight: u64,
    /// Time from the event's start until every node had been warned.
    pub warn_coverage_ms: Option<u64>,
    pub warned_nodes: usize,
    pub checked_histogram: BTreeMap<usize, u64>,
    pub aggregate_sizes: BTreeMap<usize, u64>,
    pub attacks: BTreeMap<AttackKind, AttackStats>,
    pub drops: BTreeMap<DropReason, u64>,
    pub malicious_marks: BTreeMap<NodeId, u64>,
    /// Trusted warnings for events that never happened, counted at honest nodes.
    pub false_reliable: u64,
    /// Trusted warnings for the real event, counted per stored packet.
    pub true_reliable: u64,
    /// Packets offered in an exchange after their storage horizon; always zero.
    pub expired_exchanges: u64,
}

impl Metrics {
    pub fn total_packets(&self) -> u64 {
        self.packets.values().sum()
    }

    pub fn packets_of(&self, kind: PacketKind) -> u64 {
        self.packets.get(&kind).copied().unwrap_or(0)
    }

    pub fn verifications(&self) -> u64 {
        self.checked_histogram.values().sum()
    }

    pub fn mean_checked(&self) -> Option<f64> {
        let n = self.verifications();
        (n > 0).then(|| {
            self.checked_histogram
                .iter()
                .map(|(c, k)| *c as f64 * *k as f64)
                .sum::<f64>()
                / n as f64
        })
    }

    pub fn attack(&self, kind: AttackKind) -> AttackStats {
        self.attacks.get(&kind).copied().unwrap_or_default()
    }

    pub fn drops_of(&self, reason: DropReason) -> u64 {
        self.drops.get(&reason).copied().unwrap_or(0)
    }

    pub(super) fn attack_mut(&mut self, kind: AttackKind) -> &mut AttackStats {
        self.attacks.entry(kind).or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_values() {
        let mut m = Metrics::default();
        assert_eq!(m.mean_checked(), None);
        m.checked_histogram.insert(10, 3);
        m.checked_histogram.insert(4, 1);
        assert_eq!(m.mean_checked(), Some(8.5));
        m.packets.insert(PacketKind::W, 2);
        m.packets.insert(PacketKind::A, 5);
        assert_eq!(m.total_packets(), 7);
        assert_eq!(m.packets_of(PacketKind::R), 0);
        assert_eq!(AttackStats { injected: 4, detected: 1, accepted: 0 }.detection_rate(), Some(0.25));
    }
}
