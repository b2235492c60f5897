use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::crypto::{self, Directory, KeyPair, NodeId};
use crate::packets::{EventKey, EventReport, EventType, FixedPosition, Packet, PacketA, PacketW};
use crate::protocol::{Action, DropReason, NodeState, ProtocolConfig, Trust};
use crate::verify::packet_id;

use super::adversary::{append_signature, forge_signature, tamper_report, AttackKind, Behavior};
use super::metrics::Metrics;
use super::mobility::{kmh_to_mps, Vehicle};
use super::{derive_seed, SimConfig, SimError, ROAD_ID};

/// Two nodes within radio range at an encounter check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contact {
    pub time_ms: u64,
    pub a: usize,
    pub b: usize,
}

/// A node came to trust an aggregate, either by building it as leader or by
/// verifying it on reception.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReliableRecord {
    pub node: usize,
    pub packet_id: u64,
    pub time_ms: u64,
    pub signers: usize,
    pub expiry_ms: u64,
    pub real: bool,
    pub originated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    /// One tab-separated line per transmission, reception and timer, when tracing is on.
    pub trace: Vec<String>,
    pub contacts: Vec<Contact>,
    pub reliable_log: Vec<ReliableRecord>,
    /// When each node first learned of the real event.
    pub warned_at: Vec<Option<u64>>,
}

#[derive(Debug, Clone)]
enum Kind {
    EncounterCheck,
    Retransmit,
    Fabricate,
    Detect { node: usize },
    Deadline { node: usize, key: EventKey },
    Deliver { to: usize, packet: Packet },
}

#[derive(Debug, Clone)]
struct Scheduled {
    time: u64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event, FIFO among equal times.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// State of a node in the unaggregated baseline.
#[derive(Debug, Clone, Default)]
struct BaselineNode {
    store: BTreeMap<u64, (PacketW, u64)>,
    seen: BTreeSet<u64>,
    originated: Vec<PacketW>,
    trusted_fakes: BTreeSet<EventKey>,
}

fn w_id(w: &PacketW) -> u64 {
    let mut h = Sha256::new();
    h.update(w.report.encode());
    h.update(w.sig.signer.0.to_be_bytes());
    h.update(&w.sig.bytes);
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

pub struct World {
    config: SimConfig,
    protocol: Arc<ProtocolConfig>,
    vehicles: Vec<Vehicle>,
    keys: Vec<KeyPair>,
    nodes: Vec<NodeState>,
    baseline: Vec<BaselineNode>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    rng: ChaCha8Rng,
    metrics: Metrics,
    trace: Vec<String>,
    contacts: Vec<Contact>,
    reliable_log: Vec<ReliableRecord>,
    in_view: Vec<bool>,
    warned_at: Vec<Option<u64>>,
    real_event: Option<EventReport>,
    fakes: BTreeMap<EventKey, AttackKind>,
    attack_packets: BTreeMap<u64, AttackKind>,
}

impl World {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let protocol = Arc::new(config.effective_protocol()?);
        let n = config.node_count;
        let limit = kmh_to_mps(f64::from(config.speed_limit_kmh));
        let mut vehicles = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        let mut verify_seeds = Vec::with_capacity(n);
        let mut dir = Directory::new();
        for i in 0..n {
            // Each node draws from its own stream, so adding nodes leaves the
            // placement of existing ones unchanged.
            let mut rng = ChaCha8Rng::from_seed(derive_seed("vagg-node", config.seed, i as u64));
            let direction = rng.gen_range(0..2u8);
            let lane = rng.gen_range(0..config.lanes_per_direction);
            let x = rng.gen_range(0.0..config.area_m);
            let speed_mps = limit * rng.gen_range(0.5..=1.0);
            let key_seed: [u8; 32] = rng.gen();
            verify_seeds.push(rng.gen::<u64>());
            vehicles.push(Vehicle { x, lane, direction, speed_mps });
            let kp = KeyPair::from_seed(NodeId(i as u64), key_seed);
            dir.enroll(&kp).expect("node ids are unique");
            keys.push(kp);
        }
        let dir = Arc::new(dir);
        let nodes = (0..n)
            .map(|i| {
                let v = &vehicles[i];
                NodeState::new(
                    keys[i].clone(),
                    v.position(),
                    v.speed_mps * 3.6,
                    ROAD_ID,
                    v.direction,
                    Arc::clone(&dir),
                    Arc::clone(&protocol),
                    verify_seeds[i],
                )
            })
            .collect();
        let real_event = config
            .event
            .and_then(|ev| config.event_report(NodeId(0), ev.start_ms));
        let metrics = Metrics {
            node_count: n,
            seed: config.seed,
            aggregation: config.aggregation_enabled,
            ..Metrics::default()
        };
        Ok(World {
            rng: ChaCha8Rng::from_seed(derive_seed("vagg-world", config.seed, 0)),
            protocol,
            vehicles,
            keys,
            nodes,
            baseline: vec![BaselineNode::default(); n],
            queue: BinaryHeap::new(),
            seq: 0,
            metrics,
            trace: Vec::new(),
            contacts: Vec::new(),
            reliable_log: Vec::new(),
            in_view: vec![false; n],
            warned_at: vec![None; n],
            real_event,
            fakes: BTreeMap::new(),
            attack_packets: BTreeMap::new(),
            config,
        })
    }

    fn schedule(&mut self, time: u64, kind: Kind) {
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, kind });
    }

    pub fn run(mut self) -> RunOutput {
        self.schedule(0, Kind::EncounterCheck);
        let start = self.config.retransmission_start_ms;
        self.schedule(start, Kind::Retransmit);
        if self.config.adversaries.iter().any(|(_, b)| b.fabricates()) {
            self.schedule(self.config.attack_time_ms, Kind::Fabricate);
        }
        while self.queue.peek().is_some_and(|e| e.time <= self.config.duration_ms) {
            let ev = self.queue.pop().expect("peeked");
            self.handle(ev.time, ev.kind);
        }
        self.finish()
    }

    fn finish(mut self) -> RunOutput {
        self.metrics.in_flight = self
            .queue
            .iter()
            .filter(|s| matches!(s.kind, Kind::Deliver { .. }))
            .count() as u64;
        self.metrics.warned_nodes = self.warned_at.iter().flatten().count();
        self.metrics.warn_coverage_ms = match (&self.config.event, self.warned_at.iter().all(Option::is_some)) {
            (Some(ev), true) => self
                .warned_at
                .iter()
                .flatten()
                .max()
                .map(|t| t.saturating_sub(ev.start_ms)),
            _ => None,
        };
        RunOutput {
            metrics: self.metrics,
            trace: self.trace,
            contacts: self.contacts,
            reliable_log: self.reliable_log,
            warned_at: self.warned_at,
        }
    }

    fn handle(&mut self, now: u64, kind: Kind) {
        match kind {
            Kind::EncounterCheck => self.encounter_check(now),
            Kind::Retransmit => self.retransmit(now),
            Kind::Fabricate => self.fabricate(now),
            Kind::Detect { node } => self.detect(node, now),
            Kind::Deadline { node, key } => self.deadline(node, key, now),
            Kind::Deliver { to, packet } => self.deliver(to, packet, now),
        }
    }

    fn record(&mut self, now: u64, what: &str, node: usize, packet: Option<&Packet>) {
        if !self.config.trace {
            return;
        }
        let body = packet
            .and_then(|p| p.encode().ok())
            .map(hex::encode)
            .unwrap_or_else(|| "-".to_string());
        self.trace.push(format!("{now}\t{what}\t{node}\t{body}"));
    }

    fn is_real(&self, report: &EventReport) -> bool {
        self.real_event
            .as_ref()
            .is_some_and(|r| r.same_event_as(report) && report.timestamp_ms >= r.timestamp_ms)
    }

    fn warn(&mut self, node: usize, now: u64) {
        self.warned_at[node].get_or_insert(now);
    }

    fn behavior(&self, node: usize) -> &Behavior {
        self.config.adversaries.behavior(NodeId(node as u64))
    }

    fn is_honest(&self, node: usize) -> bool {
        self.config.adversaries.is_honest(NodeId(node as u64))
    }

    /// Whether the node currently has the configured event in view.
    fn sees_event(&self, node: usize, now: u64) -> bool {
        let (Some(ev), Some(pos)) = (self.config.event, self.config.event_position()) else {
            return false;
        };
        let v = &self.vehicles[node];
        now >= ev.start_ms
            && v.direction == ev.direction
            && v.position().planar_distance(&pos) <= f64::from(self.config.danger_radius_m)
    }

    fn refresh_sighting(&mut self, node: usize, now: u64) {
        if self.config.aggregation_enabled && self.sees_event(node, now) {
            let ev = self.config.event.expect("event in view");
            let pos = self.config.event_position().expect("event in view");
            self.nodes[node].observe(ev.event_type, pos, ROAD_ID, ev.direction, now);
        }
    }

    fn encounter_check(&mut self, now: u64) {
        let period = self.config.encounter_period_ms;
        if now > 0 {
            self.move_vehicles(period as f64 / 1000.0, now);
        }
        for i in 0..self.vehicles.len() {
            let v = self.vehicles[i];
            self.nodes[i].pos = v.position();
            self.nodes[i].speed_kmh = v.speed_mps * 3.6;
        }
        for i in 0..self.vehicles.len() {
            let sees = self.sees_event(i, now);
            if sees {
                self.refresh_sighting(i, now);
                if !self.in_view[i] {
                    let delay = self.rng.gen_range(0..=self.config.detection_delay_max_ms);
                    self.schedule(now + delay, Kind::Detect { node: i });
                }
            }
            self.in_view[i] = sees;
        }
        self.expire(now);
        let range = self.config.tx_range_m;
        for a in 0..self.vehicles.len() {
            for b in a + 1..self.vehicles.len() {
                let d = self.vehicles[a].position().planar_distance(&self.vehicles[b].position());
                if d <= range {
                    self.contacts.push(Contact { time_ms: now, a, b });
                    self.exchange(a, b, now);
                }
            }
        }
        if now + period <= self.config.duration_ms {
            self.schedule(now + period, Kind::EncounterCheck);
        }
    }

    fn move_vehicles(&mut self, dt_s: f64, now: u64) {
        let jam = self.config.event.filter(|ev| ev.event_type == EventType::TrafficJam && now >= ev.start_ms);
        let jam_pos = self.config.event_position();
        let danger = f64::from(self.config.danger_radius_m);
        for v in &mut self.vehicles {
            let slowed = match (jam, jam_pos) {
                (Some(ev), Some(p)) => v.direction == ev.direction && v.position().planar_distance(&p) <= danger,
                _ => false,
            };
            let factor = if slowed { self.config.jam_slowdown } else { 1.0 };
            v.advance(dt_s, self.config.area_m, factor);
        }
    }

    fn expire(&mut self, now: u64) {
        if self.config.aggregation_enabled {
            for n in &mut self.nodes {
                n.expire_store(now);
            }
        } else {
            for b in &mut self.baseline {
                b.store.retain(|_, (_, expiry)| now <= *expiry);
                b.originated.retain(|w| {
                    self.protocol
                        .storage_time(w.report.event_type, w.report.road_class)
                        .is_ok_and(|t| now <= w.report.timestamp_ms.saturating_add(t))
                });
            }
        }
    }

    fn exchange(&mut self, a: usize, b: usize, now: u64) {
        if self.config.aggregation_enabled {
            let (ab, ba) = crate::protocol::on_encounter(&self.nodes[a], &self.nodes[b], now);
            for (from, to, list) in [(a, b, ab), (b, a, ba)] {
                for p in list {
                    self.send(from, Packet::A(p), Some(to), now);
                }
            }
        } else {
            for (from, to) in [(a, b), (b, a)] {
                let offer: Vec<PacketW> = self.baseline[from]
                    .store
                    .iter()
                    .filter(|(id, (_, expiry))| now <= *expiry && !self.baseline[to].seen.contains(id))
                    .map(|(_, (w, _))| w.clone())
                    .collect();
                for w in offer {
                    self.send(from, Packet::W(w), Some(to), now);
                }
            }
        }
    }

    fn retransmit(&mut self, now: u64) {
        for i in 0..self.nodes.len() {
            if self.config.aggregation_enabled {
                for p in self.nodes[i].originated().to_vec() {
                    self.send(i, Packet::A(p), None, now);
                }
            } else {
                for w in self.baseline[i].originated.clone() {
                    self.send(i, Packet::W(w), None, now);
                }
            }
        }
        let next = now + self.config.retransmission_period_ms;
        if next <= self.config.duration_ms {
            self.schedule(next, Kind::Retransmit);
        }
    }

    fn detect(&mut self, node: usize, now: u64) {
        if !self.sees_event(node, now) {
            return;
        }
        let Some(report) = self.config.event_report(NodeId(node as u64), now) else {
            return;
        };
        self.record(now, "detect", node, None);
        self.warn(node, now);
        if self.config.aggregation_enabled {
            self.refresh_sighting(node, now);
            let actions = self.nodes[node].on_detect_event(&report, now);
            self.apply(node, actions, None, now);
        } else {
            self.baseline_originate(node, report, now);
        }
    }

    fn fabricate(&mut self, now: u64) {
        let initiators: Vec<(usize, Behavior)> = self
            .config
            .adversaries
            .iter()
            .filter(|(_, b)| b.fabricates())
            .map(|(n, b)| (n.0 as usize, b.clone()))
            .collect();
        for (node, behavior) in initiators {
            let v = self.vehicles[node];
            let report = self.config.report_at(
                EventType::FreeParking,
                v.position(),
                v.direction,
                NodeId(node as u64),
                now,
            );
            let kind = behavior.kind().expect("fabricating behavior");
            self.fakes.insert(report.key(), kind);
            let group: Vec<usize> = match &behavior {
                Behavior::Collusion { group } => group.iter().map(|n| n.0 as usize).collect(),
                _ => vec![node],
            };
            self.record(now, "fabricate", node, None);
            if self.config.aggregation_enabled {
                for &m in &group {
                    let pos = report.position();
                    self.nodes[m].observe(report.event_type, pos, ROAD_ID, report.direction, now);
                }
                let actions = self.nodes[node].on_detect_event(&report, now);
                self.apply(node, actions, None, now);
            } else {
                for &m in &group {
                    self.baseline_originate(m, report, now);
                }
            }
        }
    }

    fn deadline(&mut self, node: usize, key: EventKey, now: u64) {
        self.record(now, "deadline", node, None);
        let Some(packet) = self.nodes[node].finalize_group(&key, now, &mut self.rng) else {
            return;
        };
        *self.metrics.aggregate_sizes.entry(packet.len()).or_default() += 1;
        let id = packet_id(&packet);
        self.log_reliable(node, id, &packet, now, true);
        self.send(node, Packet::A(packet), None, now);
    }

    fn expiry_of(&self, report: &EventReport) -> u64 {
        self.protocol
            .storage_time(report.event_type, report.road_class)
            .map(|t| report.timestamp_ms.saturating_add(t))
            .unwrap_or(report.timestamp_ms)
    }

    fn log_reliable(&mut self, node: usize, id: u64, packet: &PacketA, now: u64, originated: bool) {
        let real = self.is_real(&packet.report);
        if real {
            self.metrics.true_reliable += 1;
            self.warn(node, now);
        } else if self.is_honest(node) {
            self.metrics.false_reliable += 1;
        }
        self.reliable_log.push(ReliableRecord {
            node,
            packet_id: id,
            time_ms: now,
            signers: packet.distinct_signers(),
            expiry_ms: self.expiry_of(&packet.report),
            real,
            originated,
        });
    }

    /// Applies a misbehaving node's rewrite to an aggregate it is about to
    /// send. `None` means the node swallows it.
    fn outgoing_aggregate(&mut self, from: usize, p: PacketA) -> Option<PacketA> {
        let me = NodeId(from as u64);
        let own = p.leader() == Some(me);
        let digest = self.protocol.digest;
        let position = FixedPosition::from_position(&self.vehicles[from].position());
        let (kind, out) = match self.behavior(from).clone() {
            Behavior::ModifyAggregate if !own => (AttackKind::ModifyAggregate, tamper_report(&p)),
            Behavior::DiscardAggregate if !own => {
                self.metrics.attack_mut(AttackKind::DiscardAggregate).injected += 1;
                return None;
            }
            Behavior::FalseTrustIncrease if !own && !p.signer_ids().contains(&me) => (
                AttackKind::FalseTrustIncrease,
                append_signature(&p, &self.keys[from], position, digest),
            ),
            Behavior::LeaderFalseSignature if own => {
                (AttackKind::LeaderFalseSignature, forge_signature(&p, position, digest))
            }
            Behavior::Collusion { group } if own && self.fakes.contains_key(&p.report.key()) => {
                let claimed = p.signers[0].position;
                let mut out = p.clone();
                for m in group {
                    out = append_signature(&out, &self.keys[m.0 as usize], claimed, digest);
                }
                (AttackKind::Collusion, out)
            }
            _ => return Some(p),
        };
        self.attack_packets.insert(packet_id(&out), kind);
        Some(out)
    }

    fn attack_of(&self, p: &PacketA, id: u64) -> Option<AttackKind> {
        self.attack_packets
            .get(&id)
            .or_else(|| self.fakes.get(&p.report.key()))
            .copied()
    }

    fn send(&mut self, from: usize, packet: Packet, to: Option<usize>, now: u64) {
        let packet = match packet {
            Packet::A(p) if self.config.aggregation_enabled => match self.outgoing_aggregate(from, p) {
                Some(p) => Packet::A(p),
                None => return,
            },
            other => other,
        };
        if let (Some(t), Packet::A(p)) = (to, &packet) {
            if self.nodes[t].has_seen(packet_id(p)) {
                return;
            }
        }
        let range = self.config.tx_range_m;
        let origin = self.vehicles[from].position();
        let receivers: Vec<usize> = match to {
            Some(t) => vec![t],
            None => (0..self.vehicles.len())
                .filter(|&j| j != from && self.vehicles[j].position().planar_distance(&origin) <= range)
                .collect(),
        };
        if receivers.is_empty() {
            self.metrics.suppressed += 1;
            return;
        }
        let kind = packet.kind();
        *self.metrics.packets.entry(kind).or_default() += 1;
        self.record(now, &format!("tx-{}", kind.letter()), from, Some(&packet));
        let at = now + self.config.latency_ms;
        for j in receivers {
            self.metrics.receptions += 1;
            let in_range = self.vehicles[j].position().planar_distance(&origin) <= range;
            let lost = !in_range || (self.config.loss_rate > 0.0 && self.rng.gen_bool(self.config.loss_rate));
            if lost {
                self.metrics.lost += 1;
            } else {
                self.schedule(at, Kind::Deliver { to: j, packet: packet.clone() });
            }
        }
    }

    fn deliver(&mut self, to: usize, packet: Packet, now: u64) {
        self.metrics.delivered += 1;
        self.record(now, &format!("rx-{}", packet.kind().letter()), to, Some(&packet));
        if !self.config.aggregation_enabled {
            if let Packet::W(w) = packet {
                self.baseline_receive(to, w, now);
            }
            return;
        }
        self.refresh_sighting(to, now);
        match packet {
            Packet::W(w) => {
                let actions = self.nodes[to].on_packet_w(&w, now);
                self.apply(to, actions, None, now);
            }
            Packet::R(r) => {
                let actions = self.nodes[to].on_packet_r(&r, now);
                self.apply(to, actions, None, now);
            }
            Packet::S(s) => {
                let actions = self.nodes[to].on_packet_s(&s, now);
                self.apply(to, actions, None, now);
            }
            Packet::A(a) => {
                let id = packet_id(&a);
                let actions = self.nodes[to].receive_aggregate(&a, now);
                self.account_attack(to, &a, id, &actions);
                self.apply(to, actions, Some((id, &a)), now);
            }
        }
    }

    fn account_attack(&mut self, to: usize, p: &PacketA, id: u64, actions: &[Action]) {
        let Some(kind) = self.attack_of(p, id) else {
            return;
        };
        if !self.is_honest(to) {
            return;
        }
        let rejected = actions.iter().any(|a| {
            matches!(
                a,
                Action::Dropped(
                    DropReason::MarkedSender
                        | DropReason::BadSignature
                        | DropReason::UnknownSigner
                        | DropReason::Undetectable
                        | DropReason::NotReliable
                        | DropReason::CellInconsistent
                        | DropReason::NotEnoughSignatures
                )
            )
        });
        let accepted = actions
            .iter()
            .any(|a| matches!(a, Action::Stored { trust: Trust::Verified, .. }));
        let stats = self.metrics.attack_mut(kind);
        stats.injected += 1;
        stats.detected += u64::from(rejected);
        stats.accepted += u64::from(accepted);
    }

    fn apply(&mut self, node: usize, actions: Vec<Action>, received: Option<(u64, &PacketA)>, now: u64) {
        for action in actions {
            match action {
                Action::Broadcast(p) => self.send(node, p, None, now),
                Action::Unicast { to, packet } => self.send(node, packet, Some(to.0 as usize), now),
                Action::ArmDeadline { key, at_ms } => self.schedule(at_ms, Kind::Deadline { node, key }),
                Action::Dropped(reason) => *self.metrics.drops.entry(reason).or_default() += 1,
                Action::MarkedMalicious(who) => *self.metrics.malicious_marks.entry(who).or_default() += 1,
                Action::Verified(outcome) => {
                    if outcome.checked() > 0 {
                        *self.metrics.checked_histogram.entry(outcome.checked()).or_default() += 1;
                    }
                }
                Action::Stored { trust: Trust::Verified, .. } => {
                    if let Some((id, p)) = received {
                        self.log_reliable(node, id, p, now, false);
                    }
                }
                Action::Stored { .. } => {}
            }
        }
    }

    fn baseline_originate(&mut self, node: usize, report: EventReport, now: u64) {
        let b = &self.baseline[node];
        if b.originated.iter().any(|w| w.report.same_event_as(&report) && w.report.event_type == report.event_type) {
            return;
        }
        let sig = crypto::sign(&self.keys[node], &report.encode(), self.protocol.digest)
            .expect("encoded report is never empty");
        let w = PacketW { report, sig };
        let id = w_id(&w);
        let expiry = self.expiry_of(&report);
        if now > expiry {
            return;
        }
        let b = &mut self.baseline[node];
        b.seen.insert(id);
        b.store.insert(id, (w.clone(), expiry));
        b.originated.push(w.clone());
        self.send(node, Packet::W(w), None, now);
    }

    fn baseline_receive(&mut self, to: usize, w: PacketW, now: u64) {
        let id = w_id(&w);
        if !self.baseline[to].seen.insert(id) {
            return;
        }
        let Some(algo) = w.sig.algo() else {
            *self.metrics.drops.entry(DropReason::BadSignature).or_default() += 1;
            return;
        };
        let dir = self.nodes[to].directory();
        if !crypto::verify(dir, &w.sig, &w.report.encode(), algo) {
            *self.metrics.drops.entry(DropReason::BadSignature).or_default() += 1;
            return;
        }
        *self.metrics.checked_histogram.entry(1).or_default() += 1;
        let expiry = self.expiry_of(&w.report);
        if now > expiry {
            *self.metrics.drops.entry(DropReason::Expired).or_default() += 1;
            return;
        }
        let pos = self.vehicles[to].position();
        if pos.planar_distance(&w.report.position()) > f64::from(w.report.security_radius_m) {
            *self.metrics.drops.entry(DropReason::OutOfScope).or_default() += 1;
            return;
        }
        let report = w.report;
        self.baseline[to].store.insert(id, (w.clone(), expiry));
        self.send(to, Packet::W(w), None, now);

        let sources: BTreeSet<NodeId> = self.baseline[to]
            .store
            .values()
            .filter(|(s, _)| s.report.event_type == report.event_type && s.report.same_event_as(&report))
            .map(|(s, _)| s.sender())
            .collect();
        if sources.len() < self.protocol.verification.min_signatures() {
            return;
        }
        if self.is_real(&report) {
            self.warn(to, now);
        } else if self.is_honest(to) && self.baseline[to].trusted_fakes.insert(report.key()) {
            self.metrics.false_reliable += 1;
            if let Some(kind) = self.fakes.get(&report.key()).copied() {
                self.metrics.attack_mut(kind).accepted += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Position;
    use crate::sim::mobility::lane_y;

    fn initial_position(config: &SimConfig, node: usize) -> Position {
        let mut rng = ChaCha8Rng::from_seed(derive_seed("vagg-node", config.seed, node as u64));
        let direction = rng.gen_range(0..2u8);
        let lane = rng.gen_range(0..config.lanes_per_direction);
        let x = rng.gen_range(0.0..config.area_m);
        Position::planar(x, lane_y(direction, lane))
    }

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            node_count: 20,
            duration_ms: 120_000,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let c = SimConfig { trace: true, ..small(7) };
        let a = World::new(c.clone()).unwrap().run();
        let b = World::new(c).unwrap().run();
        assert_eq!(a, b);
        assert!(!a.trace.is_empty());
    }

    #[test]
    fn receptions_are_conserved() {
        for seed in 1..4 {
            let c = SimConfig { loss_rate: 0.2, ..small(seed) };
            let m = World::new(c).unwrap().run().metrics;
            assert_eq!(m.receptions, m.delivered + m.lost + m.in_flight);
            assert!(m.lost > 0);
        }
    }

    #[test]
    fn placement_is_prefix_stable() {
        let a = small(3);
        let b = SimConfig { node_count: 35, ..small(3) };
        for i in 0..20 {
            assert_eq!(initial_position(&a, i), initial_position(&b, i));
        }
    }

    #[test]
    fn warning_ids_differ_by_signer() {
        let c = small(1);
        let w = World::new(c).unwrap();
        let r = w.config.event_report(NodeId(0), 0).unwrap();
        let sig = crypto::sign(&w.keys[0], &r.encode(), w.protocol.digest).unwrap();
        let pw = PacketW { report: r, sig: sig.clone() };
        let other = PacketW { report: r, sig: crypto::sign(&w.keys[1], &r.encode(), w.protocol.digest).unwrap() };
        assert_ne!(w_id(&pw), w_id(&other));
    }

    #[test]
    fn event_queue_pops_in_time_then_insertion_order() {
        let mut heap = BinaryHeap::new();
        heap.push(Scheduled { time: 5, seq: 2, kind: Kind::Retransmit });
        heap.push(Scheduled { time: 5, seq: 1, kind: Kind::Fabricate });
        heap.push(Scheduled { time: 1, seq: 3, kind: Kind::EncounterCheck });
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop()).map(|s| s.seq).collect();
        assert_eq!(order, vec![3, 1, 2]);
    }
}
