use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::crypto::{self, Directory, KeyPair, NodeId, SigCheck, Signature};
use crate::geo::{CellGrid, CellId, Position, Zone};
use crate::packets::{
    EventKey, EventReport, EventType, FixedPosition, Packet, PacketA, PacketR, PacketS, PacketW,
    SignerEntry,
};
use crate::verify::{self, VerificationOutcome};

use super::election::{elect_leader, GroupRequest};
use super::store::{StoredEvent, Trust};
use super::ProtocolConfig;

/// Sessions stay open this long past the collection window so that late
/// requests and signatures of the same round still find them.
const SESSION_GRACE_MS: u64 = 1_000;

/// Location error tolerated when matching a report against one's own sighting.
const LOCATION_TOLERANCE_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Idle,
    LeaderCandidate,
    Leader,
    Member { leader: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    MarkedSender,
    BadSignature,
    UnknownSigner,
    MalformedReport,
    /// Sender claimed an event this node should see but does not.
    Undetectable,
    NotCandidate,
    LateSignature,
    OffCell,
    Expired,
    OutOfScope,
    NotEnoughSignatures,
    NotReliable,
    CellInconsistent,
}

/// Side effects requested by a handler. The simulator turns packets into
/// transmissions and records the rest as metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Broadcast(Packet),
    Unicast { to: NodeId, packet: Packet },
    ArmDeadline { key: EventKey, at_ms: u64 },
    Dropped(DropReason),
    MarkedMalicious(NodeId),
    Verified(VerificationOutcome),
    Stored { key: EventKey, trust: Trust },
}

/// A node's own observation of an event on its road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sighting {
    pub event_type: EventType,
    pub location: Position,
    pub road_id: u32,
    pub direction: u8,
    pub first_seen_ms: u64,
    pub last_seen_ms: u64,
}

#[derive(Debug, Clone)]
struct Session {
    report: EventReport,
    grid: CellGrid,
    cell: CellId,
    opened_ms: u64,
    requests: Vec<GroupRequest>,
    role: Role,
    deadline_ms: Option<u64>,
    collected: BTreeMap<NodeId, PacketS>,
    signed_for: BTreeSet<NodeId>,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub pos: Position,
    pub speed_kmh: f64,
    pub road_id: u32,
    pub direction: u8,
    keys: KeyPair,
    dir: Arc<Directory>,
    config: Arc<ProtocolConfig>,
    verify_seed: u64,
    sightings: Vec<Sighting>,
    sessions: BTreeMap<EventKey, Session>,
    store: BTreeMap<EventKey, StoredEvent>,
    /// Packet ids already processed, with the time they may be forgotten.
    seen: BTreeMap<u64, u64>,
    malicious: BTreeSet<NodeId>,
    originated: Vec<PacketA>,
}

fn check_sig(dir: &Directory, sig: &Signature, report: &EventReport) -> Result<(), DropReason> {
    let Some(algo) = sig.algo() else {
        return Err(DropReason::BadSignature);
    };
    match crypto::check(dir, sig, &report.encode(), algo) {
        SigCheck::Valid => Ok(()),
        SigCheck::Invalid => Err(DropReason::BadSignature),
        SigCheck::UnknownSigner => Err(DropReason::UnknownSigner),
    }
}

impl NodeState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        keys: KeyPair,
        pos: Position,
        speed_kmh: f64,
        road_id: u32,
        direction: u8,
        dir: Arc<Directory>,
        config: Arc<ProtocolConfig>,
        verify_seed: u64,
    ) -> Self {
        NodeState {
            id: keys.node(),
            pos,
            speed_kmh,
            road_id,
            direction,
            keys,
            dir,
            config,
            verify_seed,
            sightings: Vec::new(),
            sessions: BTreeMap::new(),
            store: BTreeMap::new(),
            seen: BTreeMap::new(),
            malicious: BTreeSet::new(),
            originated: Vec::new(),
        }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn directory(&self) -> &Directory {
        &self.dir
    }

    pub fn store(&self) -> &BTreeMap<EventKey, StoredEvent> {
        &self.store
    }

    pub fn malicious_marks(&self) -> &BTreeSet<NodeId> {
        &self.malicious
    }

    pub fn role(&self, key: &EventKey) -> Option<Role> {
        self.sessions.get(key).map(|s| s.role)
    }

    /// Aggregates this node built as a leader, for periodic retransmission.
    pub fn originated(&self) -> &[PacketA] {
        &self.originated
    }

    pub fn has_seen(&self, packet_id: u64) -> bool {
        self.seen.contains_key(&packet_id)
    }

    /// Records that the node currently sees an event.
    pub fn observe(&mut self, event_type: EventType, location: Position, road_id: u32, direction: u8, now: u64) {
        let existing = self.sightings.iter_mut().find(|s| {
            s.event_type == event_type
                && s.road_id == road_id
                && s.direction == direction
                && s.location.planar_distance(&location) <= LOCATION_TOLERANCE_M
        });
        match existing {
            Some(s) => s.last_seen_ms = s.last_seen_ms.max(now),
            None => self.sightings.push(Sighting {
                event_type,
                location,
                road_id,
                direction,
                first_seen_ms: now,
                last_seen_ms: now,
            }),
        }
    }

    pub fn sign_report(&self, report: &EventReport) -> Signature {
        crypto::sign(&self.keys, &report.encode(), self.config.digest)
            .expect("encoded report is never empty")
    }

    /// Same road and direction, inside the danger radius, and the report is recent.
    pub fn in_danger(&self, report: &EventReport, now: u64) -> bool {
        self.road_id == report.road_id
            && self.direction == report.direction
            && self.pos.planar_distance(&report.position()) <= f64::from(report.danger_radius_m)
            && report.timestamp_ms <= now
            && now - report.timestamp_ms <= self.config.agreement_window_ms
    }

    /// Whether the node's own observations confirm the report.
    pub fn detects(&self, report: &EventReport) -> bool {
        let window = self.config.agreement_window_ms;
        let location = report.position();
        self.pos.planar_distance(&location) <= f64::from(report.danger_radius_m)
            && self.sightings.iter().any(|s| {
                s.event_type == report.event_type
                    && s.road_id == report.road_id
                    && s.direction == report.direction
                    && s.location.planar_distance(&location) <= LOCATION_TOLERANCE_M
                    && report.timestamp_ms + window >= s.first_seen_ms
                    && report.timestamp_ms <= s.last_seen_ms + window
            })
    }

    /// A matching round is still collecting, or enough evidence is already held.
    fn covered(&self, report: &EventReport, now: u64) -> bool {
        let horizon = self.config.group_window_ms + SESSION_GRACE_MS;
        let open = self
            .sessions
            .values()
            .any(|s| s.report.same_event_as(report) && now <= s.opened_ms + horizon);
        open || self.store.values().any(|e| {
            e.is_reliable()
                && e.report().same_event_as(report)
                && e.max_signers() >= self.config.verification.min_signatures()
        })
    }

    fn mark(&mut self, node: NodeId, reason: DropReason) -> Vec<Action> {
        self.malicious.insert(node);
        vec![Action::MarkedMalicious(node), Action::Dropped(reason)]
    }

    /// The node confirmed an event by itself.
    pub fn on_detect_event(&mut self, report: &EventReport, now: u64) -> Vec<Action> {
        self.observe(report.event_type, report.position(), report.road_id, report.direction, now);
        if report.validate().is_err() || self.covered(report, now) || self.sessions.contains_key(&report.key()) {
            return Vec::new();
        }
        let w = PacketW {
            report: *report,
            sig: self.sign_report(report),
        };
        let mut out = vec![Action::Broadcast(Packet::W(w.clone()))];
        out.extend(self.on_packet_w(&w, now));
        out
    }

    pub fn on_packet_w(&mut self, p: &PacketW, now: u64) -> Vec<Action> {
        if self.malicious.contains(&p.sender()) {
            return vec![Action::Dropped(DropReason::MarkedSender)];
        }
        if let Err(reason) = check_sig(&self.dir, &p.sig, &p.report) {
            return vec![Action::Dropped(reason)];
        }
        let Ok(grid) = p.report.grid() else {
            return vec![Action::Dropped(DropReason::MalformedReport)];
        };
        if !self.in_danger(&p.report, now) {
            return Vec::new();
        }
        if !self.detects(&p.report) {
            return self.mark(p.sender(), DropReason::Undetectable);
        }
        let key = p.report.key();
        if self.sessions.contains_key(&key) || self.covered(&p.report, now) {
            return Vec::new();
        }
        let cell = grid.cell_of(&self.pos);
        let leader_pos = FixedPosition::from_position(&self.pos);
        let request = GroupRequest {
            leader: self.id,
            position: leader_pos,
            request_timestamp_ms: now,
            cell,
        };
        let deadline = now + self.config.group_window_ms;
        let r = PacketR {
            report: p.report,
            leader_pos,
            request_timestamp_ms: now,
            sig: self.sign_report(&p.report),
        };
        self.sessions.insert(
            key,
            Session {
                report: p.report,
                grid,
                cell,
                opened_ms: now,
                requests: vec![request],
                role: Role::LeaderCandidate,
                deadline_ms: Some(deadline),
                collected: BTreeMap::new(),
                signed_for: BTreeSet::new(),
            },
        );
        vec![
            Action::Broadcast(Packet::R(r)),
            Action::ArmDeadline { key, at_ms: deadline },
        ]
    }

    pub fn on_packet_r(&mut self, p: &PacketR, now: u64) -> Vec<Action> {
        if self.malicious.contains(&p.leader()) {
            return vec![Action::Dropped(DropReason::MarkedSender)];
        }
        if let Err(reason) = check_sig(&self.dir, &p.sig, &p.report) {
            return vec![Action::Dropped(reason)];
        }
        let Ok(grid) = p.report.grid() else {
            return vec![Action::Dropped(DropReason::MalformedReport)];
        };
        let request = GroupRequest::from_packet(p, &grid);
        let my_cell = grid.cell_of(&self.pos);
        if request.cell != my_cell || !self.in_danger(&p.report, now) {
            return Vec::new();
        }
        if !self.detects(&p.report) {
            return self.mark(p.leader(), DropReason::Undetectable);
        }
        let key = p.report.key();
        let session = self.sessions.entry(key).or_insert_with(|| Session {
            report: p.report,
            grid,
            cell: my_cell,
            opened_ms: now,
            requests: Vec::new(),
            role: Role::Idle,
            deadline_ms: None,
            collected: BTreeMap::new(),
            signed_for: BTreeSet::new(),
        });
        if session.role == Role::Leader {
            return Vec::new();
        }
        if !session.requests.iter().any(|r| r.leader == request.leader) {
            session.requests.push(request);
        }
        let winner = elect_leader(&session.requests, &session.grid).expect("non-empty, one cell");
        if winner == self.id {
            return Vec::new();
        }
        session.role = Role::Member { leader: winner };
        session.collected.clear();
        if !session.signed_for.insert(winner) {
            return Vec::new();
        }
        let s = PacketS {
            report: p.report,
            member_pos: FixedPosition::from_position(&self.pos),
            member_timestamp_ms: now,
            sig: self.sign_report(&p.report),
        };
        vec![Action::Unicast {
            to: winner,
            packet: Packet::S(s),
        }]
    }

    pub fn on_packet_s(&mut self, p: &PacketS, now: u64) -> Vec<Action> {
        if self.malicious.contains(&p.member()) {
            return vec![Action::Dropped(DropReason::MarkedSender)];
        }
        let key = p.report.key();
        let Some(session) = self.sessions.get(&key) else {
            return vec![Action::Dropped(DropReason::NotCandidate)];
        };
        if session.role != Role::LeaderCandidate {
            return vec![Action::Dropped(DropReason::NotCandidate)];
        }
        if session.deadline_ms.is_some_and(|d| now > d) {
            return vec![Action::Dropped(DropReason::LateSignature)];
        }
        if session.report != p.report {
            return vec![Action::Dropped(DropReason::NotCandidate)];
        }
        if let Err(reason) = check_sig(&self.dir, &p.sig, &p.report) {
            return vec![Action::Dropped(reason)];
        }
        if session.grid.cell_of(&p.member_pos.to_position()) != session.cell {
            return vec![Action::Dropped(DropReason::OffCell)];
        }
        let session = self.sessions.get_mut(&key).expect("checked above");
        session.collected.entry(p.member()).or_insert_with(|| p.clone());
        Vec::new()
    }

    /// Closes the collection window. A node still holding the winning request
    /// becomes leader, stores its own aggregate and returns it for broadcast.
    pub fn finalize_group<R: Rng + ?Sized>(&mut self, key: &EventKey, now: u64, rng: &mut R) -> Option<PacketA> {
        let session = self.sessions.get_mut(key)?;
        if session.role != Role::LeaderCandidate {
            return None;
        }
        session.role = Role::Leader;
        session.deadline_ms = None;
        let report = session.report;
        let members: Vec<SignerEntry> = std::mem::take(&mut session.collected)
            .into_values()
            .map(|s| SignerEntry {
                position: s.member_pos,
                signature: s.sig,
            })
            .collect();
        let room = self.config.max_signers.saturating_sub(1);
        let members = if members.len() > room {
            let mut picked: Vec<usize> = index::sample(rng, members.len(), room).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| members[i].clone()).collect()
        } else {
            members
        };
        let mut signers = Vec::with_capacity(members.len() + 1);
        signers.push(SignerEntry {
            position: FixedPosition::from_position(&self.pos),
            signature: self.sign_report(&report),
        });
        signers.extend(members);
        let packet = PacketA { report, signers };
        if let Ok(expiry) = self.config.storage_time(report.event_type, report.road_class) {
            let id = verify::packet_id(&packet);
            let expiry = report.timestamp_ms.saturating_add(expiry);
            self.insert_packet(id, packet.clone(), now, expiry, Zone::Danger, Trust::Verified);
        }
        self.originated.push(packet.clone());
        Some(packet)
    }

    fn insert_packet(&mut self, id: u64, packet: PacketA, now: u64, expiry: u64, zone: Zone, trust: Trust) {
        self.seen.insert(id, expiry);
        let key = packet.report.key();
        let entry = self.store.entry(key).or_insert_with(|| StoredEvent {
            packets: Vec::new(),
            received_at_ms: now,
            expiry_ms: expiry,
            zone,
            trust,
        });
        if !entry.holds(id) {
            entry.packets.push((id, packet));
        }
        entry.trust = entry.trust.max(trust);
    }

    /// Handles an aggregate that arrived by broadcast or encounter exchange.
    pub fn receive_aggregate(&mut self, p: &PacketA, now: u64) -> Vec<Action> {
        let id = verify::packet_id(p);
        if self.has_seen(id) {
            return Vec::new();
        }
        let report = p.report;
        let (Ok(radii), Ok(lifetime)) = (
            report.radii(),
            self.config.storage_time(report.event_type, report.road_class),
        ) else {
            self.seen.insert(id, now);
            return vec![Action::Dropped(DropReason::MalformedReport)];
        };
        let expiry = report.timestamp_ms.saturating_add(lifetime);
        if now > expiry {
            self.seen.insert(id, now);
            return vec![Action::Dropped(DropReason::Expired)];
        }
        self.seen.insert(id, expiry);
        if p.leader().is_some_and(|l| self.malicious.contains(&l)) {
            return vec![Action::Dropped(DropReason::MarkedSender)];
        }
        let zone = radii.classify(self.pos.planar_distance(&report.position()));
        let policy = self.config.verification;
        let seed = self.verify_seed ^ self.id.0.rotate_left(32);
        match zone {
            Zone::OutOfScope => vec![Action::Dropped(DropReason::OutOfScope)],
            Zone::Danger if self.in_danger(&report, now) => {
                let leader = p.leader().unwrap_or(report.source);
                if !self.detects(&report) {
                    return self.mark(leader, DropReason::Undetectable);
                }
                let outcome = verify::verify_exhaustive(p, &self.dir);
                let mut out = vec![Action::Verified(outcome)];
                if outcome.is_reliable() {
                    self.insert_packet(id, p.clone(), now, expiry, zone, Trust::Verified);
                    out.push(Action::Stored { key: report.key(), trust: Trust::Verified });
                } else {
                    out.extend(self.mark(leader, DropReason::NotReliable));
                }
                out
            }
            Zone::Danger | Zone::Uncertainty => {
                let outcome = verify::verify_aggregate(p, &self.dir, &policy, seed);
                let mut out = vec![Action::Verified(outcome)];
                match outcome {
                    VerificationOutcome::Reliable { .. } => {
                        self.insert_packet(id, p.clone(), now, expiry, zone, Trust::Verified);
                        out.push(Action::Stored { key: report.key(), trust: Trust::Verified });
                    }
                    VerificationOutcome::NotReliable { .. } => out.push(Action::Dropped(DropReason::NotReliable)),
                    VerificationOutcome::NotEnoughSignatures { .. } => {
                        out.push(Action::Dropped(DropReason::NotEnoughSignatures))
                    }
                }
                out
            }
            Zone::Security => self.receive_in_security_zone(id, p, now, expiry, seed),
        }
    }

    fn receive_in_security_zone(&mut self, id: u64, p: &PacketA, now: u64, expiry: u64, seed: u64) -> Vec<Action> {
        let key = p.report.key();
        match verify::security_zone_check(std::slice::from_ref(p)) {
            Ok(check) if check.cell_consistent => {}
            _ => return vec![Action::Dropped(DropReason::CellInconsistent)],
        }
        let policy = self.config.verification;
        let outcome = verify::verify_aggregate(p, &self.dir, &policy, seed);
        let mut out = vec![Action::Verified(outcome)];
        match outcome {
            VerificationOutcome::Reliable { .. } => {
                self.insert_packet(id, p.clone(), now, expiry, Zone::Security, Trust::Verified);
                out.push(Action::Stored { key, trust: Trust::Verified });
            }
            VerificationOutcome::NotReliable { .. } => out.push(Action::Dropped(DropReason::NotReliable)),
            VerificationOutcome::NotEnoughSignatures { .. } => {
                if verify::verify_exhaustive(p, &self.dir).is_reliable() {
                    self.insert_packet(id, p.clone(), now, expiry, Zone::Security, Trust::Unverified);
                    let trust = self.combine_small_groups(&key);
                    out.push(Action::Stored { key, trust });
                } else {
                    out.push(Action::Dropped(DropReason::NotReliable));
                }
            }
        }
        out
    }

    /// Small aggregates from at least two different cells whose signers add
    /// up to the minimum together count as enough evidence.
    fn combine_small_groups(&mut self, key: &EventKey) -> Trust {
        let min = self.config.verification.min_signatures();
        let Some(entry) = self.store.get_mut(key) else {
            return Trust::Unverified;
        };
        if entry.trust == Trust::Verified {
            return Trust::Verified;
        }
        let packets: Vec<PacketA> = entry.packets().cloned().collect();
        let distinct_signers: BTreeSet<NodeId> = packets.iter().flat_map(|p| p.signer_ids()).collect();
        if let Ok(check) = verify::security_zone_check(&packets) {
            if check.cell_consistent && check.distinct_groups >= 2 && distinct_signers.len() >= min {
                entry.trust = Trust::Verified;
            }
        }
        entry.trust
    }

    /// Drops expired entries and entries whose security zone the node has left.
    pub fn expire_store(&mut self, now: u64) -> usize {
        let before = self.store.len();
        let pos = self.pos;
        self.store.retain(|_, e| {
            let r = e.report();
            now <= e.expiry_ms && pos.planar_distance(&r.position()) <= f64::from(r.security_radius_m)
        });
        self.seen.retain(|_, forget_at| now <= *forget_at);
        let horizon = self.config.agreement_window_ms + self.config.group_window_ms;
        self.sessions.retain(|_, s| now <= s.opened_ms + horizon);
        self.sightings
            .retain(|s| now <= s.last_seen_ms + self.config.agreement_window_ms);
        let config = Arc::clone(&self.config);
        self.originated.retain(|p| {
            config
                .storage_time(p.report.event_type, p.report.road_class)
                .is_ok_and(|t| now <= p.report.timestamp_ms.saturating_add(t))
        });
        before - self.store.len()
    }

    fn offer(&self, now: u64) -> impl Iterator<Item = (u64, &PacketA)> {
        self.store
            .values()
            .filter(move |e| now <= e.expiry_ms)
            .flat_map(|e| e.packets.iter().map(|(id, p)| (*id, p)))
    }
}

/// Stored packets each side lacks, as `(a → b, b → a)`. Expired entries are
/// never offered; packets the peer already processed are skipped.
pub fn on_encounter(a: &NodeState, b: &NodeState, now: u64) -> (Vec<PacketA>, Vec<PacketA>) {
    let a_to_b = a
        .offer(now)
        .filter(|(id, _)| !b.has_seen(*id))
        .map(|(_, p)| p.clone())
        .collect();
    let b_to_a = b
        .offer(now)
        .filter(|(id, _)| !a.has_seen(*id))
        .map(|(_, p)| p.clone())
        .collect();
    (a_to_b, b_to_a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::RoadClass;
    use crate::packets::EventType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    const EVENT_X: f64 = 800.0;

    struct Fixture {
        nodes: Vec<NodeState>,
    }

    fn report(source: u64, ts: u64) -> EventReport {
        EventReport {
            location: FixedPosition::from_position(&Position::planar(EVENT_X, -6.0)),
            event_type: EventType::TrafficJam,
            direction: 0,
            road_id: 1,
            road_class: RoadClass::Highway,
            speed_limit_kmh: 120,
            lanes: 3,
            heading_mrad: 0,
            timestamp_ms: ts,
            source: NodeId(source),
            danger_radius_m: 100,
            uncertainty_radius_m: 300,
            security_radius_m: 1000,
        }
    }

    fn fixture(xs: &[f64], config: ProtocolConfig) -> Fixture {
        let mut dir = Directory::new();
        let keys: Vec<KeyPair> = (0..xs.len() as u64)
            .map(|i| {
                let k = KeyPair::from_seed(NodeId(i), [i as u8 + 7; 32]);
                dir.enroll(&k).unwrap();
                k
            })
            .collect();
        let dir = Arc::new(dir);
        let config = Arc::new(config);
        let nodes = keys
            .into_iter()
            .zip(xs)
            .map(|(k, &x)| {
                NodeState::new(k, Position::planar(x, -6.0), 100.0, 1, 0, dir.clone(), config.clone(), 9)
            })
            .collect();
        Fixture { nodes }
    }

    impl Fixture {
        fn see_event(&mut self, now: u64) {
            for n in &mut self.nodes {
                if n.pos.planar_distance(&Position::planar(EVENT_X, -6.0)) <= 100.0 {
                    n.observe(EventType::TrafficJam, Position::planar(EVENT_X, -6.0), 1, 0, now);
                }
            }
        }

        /// Delivers every broadcast to every other node and unicasts to their
        /// target, in send order with 100 ms per hop, until quiet.
        fn pump(&mut self, from: usize, actions: Vec<Action>, now: u64) -> Vec<(usize, Action)> {
            let mut log = Vec::new();
            let mut queue: VecDeque<(usize, Action, u64)> =
                actions.into_iter().map(|a| (from, a, now)).collect();
            while let Some((src, action, t)) = queue.pop_front() {
                log.push((src, action.clone()));
                let (targets, packet): (Vec<usize>, Packet) = match action {
                    Action::Broadcast(p) => ((0..self.nodes.len()).filter(|&i| i != src).collect(), p),
                    Action::Unicast { to, packet } => (vec![to.0 as usize], packet),
                    _ => continue,
                };
                let at = t + 100;
                for target in targets {
                    let node = &mut self.nodes[target];
                    let out = match &packet {
                        Packet::W(w) => node.on_packet_w(w, at),
                        Packet::R(r) => node.on_packet_r(r, at),
                        Packet::S(s) => node.on_packet_s(s, at),
                        Packet::A(a) => node.receive_aggregate(a, at),
                    };
                    queue.extend(out.into_iter().map(|a| (target, a, at)));
                }
            }
            log
        }
    }

    fn count(log: &[(usize, Action)], pred: impl Fn(&Action) -> bool) -> usize {
        log.iter().filter(|(_, a)| pred(a)).count()
    }

    #[test]
    fn detection_emits_one_warning_and_dedups() {
        let mut f = fixture(&[790.0], ProtocolConfig::default());
        f.see_event(0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        let warnings = out.iter().filter(|a| matches!(a, Action::Broadcast(Packet::W(_)))).count();
        assert_eq!(warnings, 1);
        assert!(f.nodes[0].on_detect_event(&report(0, 0), 10).is_empty());
        assert!(f.nodes[0].on_detect_event(&report(0, 500), 500).is_empty());
        let mut other = report(0, 0);
        other.event_type = EventType::Accident;
        other.location.x_mm += 50_000;
        f.nodes[0].observe(EventType::Accident, other.position(), 1, 0, 0);
        let out = f.nodes[0].on_detect_event(&other, 0);
        assert!(matches!(&out[0], Action::Broadcast(Packet::W(w)) if w.report.key() != report(0, 0).key()));
    }

    #[test]
    fn group_forms_and_leader_aggregates() {
        let mut f = fixture(&[790.0, 800.0, 810.0], ProtocolConfig::default());
        f.see_event(0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        let log = f.pump(0, out, 0);
        // the others self-nominate on the warning, then yield to the older request
        assert_eq!(count(&log, |a| matches!(a, Action::Broadcast(Packet::R(_)))), 3);
        assert_eq!(count(&log, |a| matches!(a, Action::Unicast { .. })), 2);
        let key = report(0, 0).key();
        let leaders: Vec<usize> = (0..3)
            .filter(|&i| f.nodes[i].role(&key) == Some(Role::LeaderCandidate))
            .collect();
        assert_eq!(leaders, vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = f.nodes[0].finalize_group(&key, 2000, &mut rng).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.leader(), Some(NodeId(0)));
        assert!(verify::verify_exhaustive(&a, f.nodes[0].directory()).is_reliable());
        assert!(f.nodes[1].finalize_group(&key, 2000, &mut rng).is_none());
        assert!(f.nodes[0].store()[&key].is_reliable());
    }

    #[test]
    fn lone_node_sends_single_signature() {
        let mut f = fixture(&[800.0], ProtocolConfig::default());
        f.see_event(0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        assert!(out.iter().any(|a| matches!(a, Action::ArmDeadline { .. })));
        let a = f.nodes[0]
            .finalize_group(&report(0, 0).key(), 2000, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn non_detecting_node_marks_sender() {
        let mut f = fixture(&[790.0, 810.0], ProtocolConfig::default());
        // only node 0 sees anything; node 1 is in the danger zone but blind
        f.nodes[0].observe(EventType::TrafficJam, Position::planar(EVENT_X, -6.0), 1, 0, 0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        let Action::Broadcast(Packet::W(w)) = &out[0] else { panic!() };
        let got = f.nodes[1].on_packet_w(w, 100);
        assert!(got.contains(&Action::MarkedMalicious(NodeId(0))));
        assert!(f.nodes[1].malicious_marks().contains(&NodeId(0)));
        let Some(Action::Broadcast(Packet::R(r))) = out.get(1) else { panic!() };
        assert_eq!(f.nodes[1].on_packet_r(r, 100), vec![Action::Dropped(DropReason::MarkedSender)]);
    }

    #[test]
    fn security_zone_node_does_nothing_on_warning() {
        let mut f = fixture(&[800.0, 200.0], ProtocolConfig::default());
        f.see_event(0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        let Action::Broadcast(Packet::W(w)) = &out[0] else { panic!() };
        assert!(f.nodes[1].on_packet_w(w, 100).is_empty());
    }

    #[test]
    fn other_cell_request_is_ignored() {
        let mut f = fixture(&[800.0, 880.0], ProtocolConfig::default());
        f.see_event(0);
        // node 1 sits in the same cell; move it laterally to the other carriageway cell
        f.nodes[1].pos = Position::planar(880.0, 6.0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        let Some(Action::Broadcast(Packet::R(r))) = out.get(1) else { panic!() };
        assert!(f.nodes[1].on_packet_r(r, 100).is_empty());
    }

    #[test]
    fn subset_keeps_leader_and_respects_cap() {
        let xs: Vec<f64> = (0..30).map(|i| 710.0 + 6.0 * i as f64).collect();
        let config = ProtocolConfig {
            max_signers: 20,
            ..ProtocolConfig::default()
        };
        let mut f = fixture(&xs, config);
        f.see_event(0);
        let key = report(15, 0).key();
        let out = f.nodes[15].on_detect_event(&report(15, 0), 0);
        f.pump(15, out, 0);
        let leader = (0..30)
            .find(|&i| f.nodes[i].role(&key) == Some(Role::LeaderCandidate))
            .unwrap();
        let a = f.nodes[leader]
            .finalize_group(&key, 2000, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.leader(), Some(NodeId(leader as u64)));
        assert_eq!(a.distinct_signers(), 20);
    }

    #[test]
    fn late_signature_is_dropped() {
        let mut f = fixture(&[800.0, 805.0], ProtocolConfig::default());
        f.see_event(0);
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        let Some(Action::Broadcast(Packet::R(r))) = out.get(1) else { panic!() };
        let s = f.nodes[1].on_packet_r(r, 100);
        let Action::Unicast { packet: Packet::S(s), .. } = &s[0] else { panic!() };
        assert_eq!(f.nodes[0].on_packet_s(s, 2_500), vec![Action::Dropped(DropReason::LateSignature)]);
    }

    fn aggregate_of(f: &mut Fixture, n: usize) -> PacketA {
        f.see_event(0);
        let key = report(0, 0).key();
        let out = f.nodes[0].on_detect_event(&report(0, 0), 0);
        f.pump(0, out, 0);
        let leader = (0..f.nodes.len())
            .find(|&i| f.nodes[i].role(&key) == Some(Role::LeaderCandidate))
            .unwrap();
        let a = f.nodes[leader]
            .finalize_group(&key, 2000, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(a.len(), n);
        a
    }

    #[test]
    fn remote_nodes_verify_and_store() {
        let mut f = fixture(&[790.0, 800.0, 810.0, 600.0, 300.0, 1900.0], ProtocolConfig::default());
        let a = aggregate_of(&mut f, 3);
        let got = f.nodes[3].receive_aggregate(&a, 3000);
        assert!(got.iter().any(|x| matches!(x, Action::Stored { trust: Trust::Verified, .. })));
        let got = f.nodes[4].receive_aggregate(&a, 3000);
        assert!(got.iter().any(|x| matches!(x, Action::Stored { trust: Trust::Verified, .. })));
        assert_eq!(f.nodes[5].receive_aggregate(&a, 3000), vec![Action::Dropped(DropReason::OutOfScope)]);
        // second receipt is a no-op
        assert!(f.nodes[3].receive_aggregate(&a, 3100).is_empty());
        // expired
        let mut late = fixture(&[600.0], ProtocolConfig::default());
        assert_eq!(late.nodes[0].receive_aggregate(&a, 300_001), vec![Action::Dropped(DropReason::Expired)]);
    }

    #[test]
    fn small_aggregate_uncertainty_drop_security_retain() {
        let mut f = fixture(&[800.0, 805.0, 600.0, 300.0], ProtocolConfig::default());
        f.nodes[1].pos = Position::planar(805.0, -6.0);
        let a = aggregate_of(&mut f, 2);
        assert!(f.nodes[2]
            .receive_aggregate(&a, 3000)
            .contains(&Action::Dropped(DropReason::NotEnoughSignatures)));
        let got = f.nodes[3].receive_aggregate(&a, 3000);
        assert!(got.contains(&Action::Stored { key: a.report.key(), trust: Trust::Unverified }));
        assert!(!f.nodes[3].store()[&a.report.key()].is_reliable());
    }

    #[test]
    fn tampered_aggregate_is_rejected_in_danger_zone() {
        let mut f = fixture(&[790.0, 800.0, 810.0, 820.0], ProtocolConfig::default());
        f.nodes[3].pos = Position::planar(820.0, -6.0);
        let mut a = aggregate_of(&mut f, 4);
        a.signers[2].signature.bytes[0] ^= 0xff;
        let mut observer = f.nodes[3].clone();
        observer.seen.clear();
        observer.store.clear();
        let got = observer.receive_aggregate(&a, 3000);
        assert!(got.contains(&Action::Dropped(DropReason::NotReliable)));
    }

    #[test]
    fn encounter_exchanges_missing_packets() {
        let mut f = fixture(&[790.0, 800.0, 810.0, 500.0, 450.0], ProtocolConfig::default());
        let a = aggregate_of(&mut f, 3);
        f.nodes[3].receive_aggregate(&a, 3000);
        let (to_b, to_a) = on_encounter(&f.nodes[3], &f.nodes[4], 4000);
        assert_eq!((to_b.len(), to_a.len()), (1, 0));
        f.nodes[4].receive_aggregate(&to_b[0], 4000);
        let (to_b, to_a) = on_encounter(&f.nodes[3], &f.nodes[4], 5000);
        assert!(to_b.is_empty() && to_a.is_empty());
        // after expiry nothing is offered
        let (to_b, _) = on_encounter(&f.nodes[3], &f.nodes[1], 400_000);
        assert!(to_b.is_empty());
    }

    #[test]
    fn store_expiry_rules() {
        let mut f = fixture(&[790.0, 800.0, 810.0, 500.0], ProtocolConfig::default());
        let a = aggregate_of(&mut f, 3);
        f.nodes[3].receive_aggregate(&a, 3000);
        assert_eq!(f.nodes[3].expire_store(300_000), 0);
        assert_eq!(f.nodes[3].expire_store(300_001), 1);
        f.nodes[3].seen.clear();
        f.nodes[3].receive_aggregate(&a, 3000);
        f.nodes[3].pos = Position::planar(800.0 - 1001.0, -6.0);
        assert_eq!(f.nodes[3].expire_store(4000), 1);
    }
}
