use crate::crypto::NodeId;
use crate::geo::{CellGrid, CellId};
use crate::packets::{FixedPosition, PacketR};

use super::ProtocolError;

/// A self-nomination as seen by the members of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupRequest {
    pub leader: NodeId,
    pub position: FixedPosition,
    pub request_timestamp_ms: u64,
    pub cell: CellId,
}

impl GroupRequest {
    pub fn from_packet(p: &PacketR, grid: &CellGrid) -> Self {
        GroupRequest {
            leader: p.leader(),
            position: p.leader_pos,
            request_timestamp_ms: p.request_timestamp_ms,
            cell: grid.cell_of(&p.leader_pos.to_position()),
        }
    }
}

/// Oldest request wins; ties go to the candidate nearest the cell center,
/// then to the smaller id. The order is total, so every member holding the
/// same request set picks the same leader.
pub fn elect_leader(requests: &[GroupRequest], grid: &CellGrid) -> Result<NodeId, ProtocolError> {
    let first = requests.first().ok_or(ProtocolError::EmptyElection)?;
    if requests.iter().any(|r| r.cell != first.cell) {
        return Err(ProtocolError::MixedCells);
    }
    let center = grid.cell_center(first.cell);
    let key = |r: &GroupRequest| {
        (
            r.request_timestamp_ms,
            r.position.to_position().planar_distance(&center),
            r.leader,
        )
    };
    let winner = requests
        .iter()
        .min_by(|a, b| {
            let (ta, da, ia) = key(a);
            let (tb, db, ib) = key(b);
            ta.cmp(&tb)
                .then_with(|| da.total_cmp(&db))
                .then_with(|| ia.cmp(&ib))
        })
        .expect("non-empty");
    Ok(winner.leader)
}
