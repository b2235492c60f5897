//! Focused experiments that bypass mobility: one reactive group formed in a
//! single cell, and remote verifiers checking what it produced.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{DigestAlgo, Directory, KeyPair, NodeId};
use crate::geo::Position;
use crate::packets::{
    max_signatures, EventReport, EventType, Packet, PacketA, PacketBudget, PacketKind,
};
use crate::protocol::{elect_leader, Action, GroupRequest, NodeState, ProtocolConfig, Role};

use super::adversary::{forge_signature, tamper_report, AttackKind, AdversarySpec, Behavior};
use super::{derive_seed, run, SimConfig, SimError, ROAD_ID};

const EVENT_X_M: f64 = 500.0;
const EVENT_Y_M: f64 = -6.0;
/// Distance of the remote verifiers from the event, inside the uncertainty zone.
const REMOTE_OFFSET_M: f64 = 200.0;

struct Cell {
    config: Arc<ProtocolConfig>,
    dir: Arc<Directory>,
    nodes: Vec<NodeState>,
    report: EventReport,
}

/// `n` nodes of one cell, all of which see the event.
fn cell(n: usize, config: ProtocolConfig, seed: u64) -> Cell {
    let config = Arc::new(config);
    let mut rng = ChaCha8Rng::from_seed(derive_seed("vagg-cell", seed, n as u64));
    let keys: Vec<KeyPair> = (0..n)
        .map(|i| KeyPair::from_seed(NodeId(i as u64), derive_seed("vagg-cell-key", seed, i as u64)))
        .collect();
    let mut dir = Directory::new();
    for k in &keys {
        dir.enroll(k).expect("unique ids");
    }
    let dir = Arc::new(dir);
    let event = Position::planar(EVENT_X_M, EVENT_Y_M);
    let report = SimConfig::default().report_at(EventType::TrafficJam, event, 0, NodeId(0), 0);
    let nodes = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let pos = if i == 0 {
                event
            } else {
                Position::planar(EVENT_X_M + rng.gen_range(-90.0..90.0), EVENT_Y_M + rng.gen_range(-5.5..5.5))
            };
            let mut node = NodeState::new(k, pos, 100.0, ROAD_ID, 0, Arc::clone(&dir), Arc::clone(&config), rng.gen());
            node.observe(report.event_type, event, ROAD_ID, 0, 0);
            node
        })
        .collect();
    Cell { config, dir, nodes, report }
}

/// Runs group formation to completion. The leader's request reaches members
/// before its warning, so members join instead of nominating themselves.
fn form_group(cell: &mut Cell, seed: u64) -> Option<PacketA> {
    let mut initial = cell.nodes[0].on_detect_event(&cell.report, 0);
    initial.sort_by_key(|a| match a {
        Action::Broadcast(p) if p.kind() == PacketKind::R => 0,
        _ => 1,
    });
    let mut queue: VecDeque<(usize, u64, Action)> = initial.into_iter().map(|a| (0, 0, a)).collect();
    let mut deadline = None;
    while let Some((from, now, action)) = queue.pop_front() {
        let at = now + 100;
        let (targets, packet): (Vec<usize>, Packet) = match action {
            Action::Broadcast(p) => ((0..cell.nodes.len()).filter(|&j| j != from).collect(), p),
            Action::Unicast { to, packet } => (vec![to.0 as usize], packet),
            Action::ArmDeadline { key, at_ms } if from == 0 => {
                deadline = Some((key, at_ms));
                continue;
            }
            _ => continue,
        };
        for j in targets {
            let node = &mut cell.nodes[j];
            let out = match &packet {
                Packet::W(w) => node.on_packet_w(w, at),
                Packet::R(r) => node.on_packet_r(r, at),
                Packet::S(s) => node.on_packet_s(s, at),
                Packet::A(a) => node.receive_aggregate(a, at),
            };
            queue.extend(out.into_iter().map(|a| (j, at, a)));
        }
    }
    let (key, at) = deadline?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cell.nodes[0].finalize_group(&key, at, &mut rng)
}

/// A node in the uncertainty zone of the cell's event, with its own
/// verification seed.
fn remote_verifier(cell: &Cell, index: usize, verify_seed: u64) -> NodeState {
    let id = NodeId((cell.nodes.len() + index) as u64);
    let keys = KeyPair::from_seed(id, [0u8; 32]);
    let pos = Position::planar(EVENT_X_M - REMOTE_OFFSET_M, EVENT_Y_M);
    NodeState::new(keys, pos, 100.0, ROAD_ID, 0, Arc::clone(&cell.dir), Arc::clone(&cell.config), verify_seed)
}

fn checked_by_remote(cell: &Cell, packet: &PacketA, index: usize, verify_seed: u64) -> (usize, bool) {
    let mut v = remote_verifier(cell, index, verify_seed);
    let actions = v.receive_aggregate(packet, 1_000);
    actions
        .iter()
        .find_map(|a| match a {
            Action::Verified(o) => Some((o.checked(), o.is_reliable())),
            _ => None,
        })
        .unwrap_or((0, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub digest: DigestAlgo,
    pub packet_size: u16,
    pub signatures: usize,
    pub aggregate_size: usize,
    pub runs: usize,
    pub mean_checked: f64,
    pub std_checked: f64,
}

/// Forms a full group of `max_signatures` members for the budget and has
/// `runs` remote verifiers check the resulting aggregate.
pub fn table2_row(packet_size: u16, digest: DigestAlgo, runs: usize, seed: u64) -> Result<Table2Row, SimError> {
    let budget = PacketBudget::new(packet_size)?;
    let n = max_signatures(budget, digest);
    let config = ProtocolConfig {
        digest,
        max_signers: n,
        ..ProtocolConfig::default()
    };
    config.validate()?;
    let mut group = cell(n, config, seed);
    let packet = form_group(&mut group, seed).expect("leader finalizes");
    let counts: Vec<f64> = (0..runs)
        .map(|r| {
            let vseed = u64::from_be_bytes(derive_seed("vagg-remote", seed, r as u64)[..8].try_into().unwrap());
            checked_by_remote(&group, &packet, r, vseed).0 as f64
        })
        .collect();
    let (mean, std) = mean_std(&counts);
    Ok(Table2Row {
        digest,
        packet_size,
        signatures: n,
        aggregate_size: packet.len(),
        runs,
        mean_checked: mean,
        std_checked: std,
    })
}

pub fn table2(runs: usize, seed: u64) -> Result<Vec<Table2Row>, SimError> {
    let mut rows = Vec::new();
    for size in PacketBudget::SIZES {
        for digest in DigestAlgo::ALL {
            rows.push(table2_row(size, digest, runs, seed)?);
        }
    }
    Ok(rows)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub deliveries: usize,
    pub detected: usize,
}

impl DetectionResult {
    pub fn rate(&self) -> f64 {
        self.detected as f64 / self.deliveries as f64
    }
}

fn honest_aggregate(n: usize, seed: u64) -> (Cell, PacketA) {
    let config = ProtocolConfig {
        max_signers: n.max(1),
        ..ProtocolConfig::default()
    };
    let mut group = cell(n, config, seed);
    let packet = form_group(&mut group, seed).expect("leader finalizes");
    assert_eq!(packet.len(), n, "every member signs");
    (group, packet)
}

fn remote_detection(group: &Cell, packet: &PacketA, deliveries: usize, seed: u64) -> DetectionResult {
    let detected = (0..deliveries)
        .filter(|&r| {
            let vseed = u64::from_be_bytes(derive_seed("vagg-remote", seed, r as u64)[..8].try_into().unwrap());
            !checked_by_remote(group, packet, r, vseed).1
        })
        .count();
    DetectionResult { deliveries, detected }
}

/// A relay flips report bits in an honest `n`-signer aggregate; each
/// delivery goes to a fresh remote verifier.
pub fn modify_aggregate_detection(n: usize, deliveries: usize, seed: u64) -> DetectionResult {
    let (group, packet) = honest_aggregate(n, seed);
    remote_detection(&group, &tamper_report(&packet), deliveries, seed)
}

/// The leader of `n - 1` honest members adds one forged signature, giving
/// `n` signatures in total.
pub fn leader_false_signature_detection(n: usize, deliveries: usize, seed: u64) -> DetectionResult {
    let (group, packet) = honest_aggregate(n - 1, seed);
    let position = packet.signers[0].position;
    let forged = forge_signature(&packet, position, group.config.digest);
    remote_detection(&group, &forged, deliveries, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectionResult {
    pub trials: usize,
    pub unanimous: usize,
    /// Trials in which the agreed leader was the one the ordering rule names.
    pub matches_rule: usize,
}

/// Several cell members nominate themselves at nearly the same time; every
/// node then hears the other requests in its own random order.
pub fn election_unanimity(trials: usize, cell_size: usize, seed: u64) -> ElectionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unanimous = 0;
    let mut matches_rule = 0;
    for t in 0..trials {
        let mut group = cell(cell_size, ProtocolConfig::default(), seed.wrapping_add(t as u64));
        let candidates = rng.gen_range(2..=cell_size.min(6));
        let mut requests = Vec::new();
        let mut packets = Vec::new();
        for c in 0..candidates {
            let ts = rng.gen_range(0..4u64);
            for a in group.nodes[c].on_detect_event(&group.report, ts) {
                if let Action::Broadcast(Packet::R(r)) = a {
                    requests.push(GroupRequest::from_packet(&r, &group.report.grid().expect("valid report")));
                    packets.push((c, r));
                }
            }
        }
        for (j, node) in group.nodes.iter_mut().enumerate() {
            let mut order: Vec<_> = packets.iter().filter(|(c, _)| *c != j).collect();
            order.shuffle(&mut rng);
            for (_, r) in order {
                node.on_packet_r(r, 100);
            }
        }
        let key = group.report.key();
        let believed: BTreeSet<NodeId> = group
            .nodes
            .iter()
            .map(|n| match n.role(&key) {
                Some(Role::Member { leader }) => leader,
                _ => n.id,
            })
            .collect();
        if believed.len() == 1 {
            unanimous += 1;
            let grid = group.report.grid().expect("valid report");
            if elect_leader(&requests, &grid).ok() == believed.first().copied() {
                matches_rule += 1;
            }
        }
    }
    ElectionResult { trials, unanimous, matches_rule }
}

/// A whole-network run with one fabricating adversary. With `colluders`
/// greater than zero the adversary gets that many accomplices who co-sign.
pub fn fabrication_run(base: &SimConfig, colluders: usize) -> Result<super::RunOutput, SimError> {
    let owner = NodeId(0);
    let behavior = if colluders == 0 {
        Behavior::FalseInfo
    } else {
        let group = (0..=colluders as u64).map(NodeId).collect();
        Behavior::Collusion { group }
    };
    let config = SimConfig {
        adversaries: AdversarySpec::none().with(owner, behavior),
        ..base.clone()
    };
    run(&config)
}

/// Kind recorded for a fabrication run with the given number of accomplices.
pub fn fabrication_kind(colluders: usize) -> AttackKind {
    if colluders == 0 {
        AttackKind::FalseInfo
    } else {
        AttackKind::Collusion
    }
}

/// An honest aggregate of `n` signers and the directory that checks it.
pub fn group_aggregate(n: usize, seed: u64) -> (PacketA, Arc<Directory>) {
    let (group, packet) = honest_aggregate(n, seed);
    (packet, group.dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_of_twenty_aggregates_all_members() {
        let (p, dir) = group_aggregate(20, 3);
        assert_eq!(p.len(), 20);
        assert_eq!(p.leader(), Some(NodeId(0)));
        assert!(crate::verify::verify_exhaustive(&p, &dir).is_reliable());
    }

    #[test]
    fn table2_small_budgets_check_everything() {
        let row = table2_row(256, DigestAlgo::Sha256, 20, 1).unwrap();
        assert_eq!(row.signatures, 4);
        assert_eq!(row.aggregate_size, 4);
        assert_eq!(row.mean_checked, 4.0);
        assert_eq!(row.std_checked, 0.0);
    }

    #[test]
    fn tampering_is_always_caught() {
        let r = modify_aggregate_detection(12, 200, 5);
        assert_eq!(r.detected, 200);
    }

    #[test]
    fn elections_agree() {
        let r = election_unanimity(50, 8, 9);
        assert_eq!(r.unanimous, 50);
        assert_eq!(r.matches_rule, 50);
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
