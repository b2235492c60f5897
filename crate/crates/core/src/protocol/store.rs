use crate::geo::Zone;
use crate::packets::{EventReport, PacketA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trust {
    /// Retained for combination with other groups' packets, not believed yet.
    Unverified,
    Verified,
}

/// Everything a node holds about one reported event.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEvent {
    pub(super) packets: Vec<(u64, PacketA)>,
    pub received_at_ms: u64,
    pub expiry_ms: u64,
    pub zone: Zone,
    pub trust: Trust,
}

impl StoredEvent {
    pub fn report(&self) -> &EventReport {
        &self.packets[0].1.report
    }

    pub fn packets(&self) -> impl Iterator<Item = &PacketA> {
        self.packets.iter().map(|(_, p)| p)
    }

    pub fn packet_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.packets.iter().map(|(id, _)| *id)
    }

    pub fn holds(&self, id: u64) -> bool {
        self.packets.iter().any(|(i, _)| *i == id)
    }

    /// Signer count of the strongest packet held.
    pub fn max_signers(&self) -> usize {
        self.packets.iter().map(|(_, p)| p.len()).max().unwrap_or(0)
    }

    pub fn is_reliable(&self) -> bool {
        self.trust == Trust::Verified
    }
}
