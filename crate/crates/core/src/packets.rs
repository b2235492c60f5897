//! Wire formats for the four packet types and the packet-budget arithmetic.
//!
//! All integers are big-endian. Coordinates are signed fixed-point
//! millimeters. Every packet starts with a type tag and the digest-class code
//! of the signatures it carries:
//!
//! ```text
//! W  01 | algo | report(100) | signer u64 | sig
//! R  02 | algo | report(100) | signer u64 | pos 3×i64 | request_ts u64 | sig
//! S  03 | algo | report(100) | signer u64 | pos 3×i64 | member_ts u64 | sig
//! A  04 | algo | report(100) | count u16 | count × (id u64 | pos 3×i32 | sig)
//! ```
//!
//! The 100-byte report layout:
//!
//! ```text
//!  0 x i64 mm     8 y i64 mm    16 z i64 mm     24 event type   25 direction
//! 26 road id u32 30 road class  31 speed u16    33 lanes        34 heading mrad u16
//! 36 timestamp ms u64           44 source u64   52 danger u32   56 uncertainty u32
//! 60 security u32               64..100 zero padding
//! ```

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::crypto::{DigestAlgo, NodeId, Signature};
use crate::geo::{self, CellGrid, GeoError, Position, RoadClass, RoadProfile, ZoneRadii};

/// Size of the canonical report encoding.
pub const MESSAGE_BYTES: usize = 100;

/// Bytes in an aggregate signer record besides the digest: id plus a compact position.
pub const SIGNER_RECORD_OVERHEAD: usize = 8 + 12;

/// Tag, digest code and signer count preceding the report in an A packet.
pub const AGGREGATE_HEADER_BYTES: usize = 4;

const REPORT_PADDING_START: usize = 64;
const MAX_HEADING_MRAD: u16 = 6283;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated input at offset {offset}: need {needed} more byte(s)")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown packet tag 0x{tag:02x} at offset {offset}")]
    UnknownTag { offset: usize, tag: u8 },
    #[error("unknown digest code {code} at offset {offset}")]
    UnknownDigest { offset: usize, code: u8 },
    #[error("invalid {field} at offset {offset}")]
    InvalidField { offset: usize, field: &'static str },
    #[error("{extra} trailing byte(s) at offset {offset}")]
    Trailing { offset: usize, extra: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("signature of {0} bytes matches no digest class")]
    BadSignatureLength(usize),
    #[error("aggregate mixes digest classes")]
    MixedDigests,
    #[error("aggregate has no signers")]
    EmptyAggregate,
    #[error("aggregate holds {0} signers, more than the u16 count field allows")]
    TooManySigners(usize),
    #[error("signer position {0:?} does not fit the compact record")]
    PositionOutOfRange(FixedPosition),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("heading {0} mrad is outside [0, 2π)")]
    Heading(u16),
}

/// Position quantized to millimeters, the resolution used on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FixedPosition {
    pub x_mm: i64,
    pub y_mm: i64,
    pub z_mm: i64,
}

impl FixedPosition {
    pub fn from_position(p: &Position) -> Self {
        let q = |v: f64| (v * 1000.0).round() as i64;
        FixedPosition {
            x_mm: q(p.x),
            y_mm: q(p.y),
            z_mm: q(p.z),
        }
    }

    pub fn to_position(self) -> Position {
        Position::new(
            self.x_mm as f64 / 1000.0,
            self.y_mm as f64 / 1000.0,
            self.z_mm as f64 / 1000.0,
        )
    }

    fn fits_compact(self) -> bool {
        [self.x_mm, self.y_mm, self.z_mm]
            .iter()
            .all(|v| i32::try_from(*v).is_ok())
    }
}

impl From<Position> for FixedPosition {
    fn from(p: Position) -> Self {
        FixedPosition::from_position(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    TrafficJam,
    FreeParking,
    Accident,
    Obstacle,
}

impl EventType {
    pub const ALL: [EventType; 4] = [
        EventType::TrafficJam,
        EventType::FreeParking,
        EventType::Accident,
        EventType::Obstacle,
    ];

    pub fn code(self) -> u8 {
        match self {
            EventType::TrafficJam => 1,
            EventType::FreeParking => 2,
            EventType::Accident => 3,
            EventType::Obstacle => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        EventType::ALL.into_iter().find(|e| e.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            EventType::TrafficJam => "jam",
            EventType::FreeParking => "parking",
            EventType::Accident => "accident",
            EventType::Obstacle => "obstacle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jam" | "traffic_jam" | "trafficjam" => Some(EventType::TrafficJam),
            "parking" | "free_parking" | "freeparking" => Some(EventType::FreeParking),
            "accident" => Some(EventType::Accident),
            "obstacle" => Some(EventType::Obstacle),
            _ => None,
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity of a reported event: where, what, and when it was reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventKey {
    pub location: FixedPosition,
    pub event_type: EventType,
    pub timestamp_ms: u64,
}

/// The warning message every signature in the protocol covers.
///
/// Besides what the event is, the report carries the zone radii and the road
/// parameters so that each receiver rebuilds the same cell grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventReport {
    pub location: FixedPosition,
    pub event_type: EventType,
    pub direction: u8,
    pub road_id: u32,
    pub road_class: RoadClass,
    pub speed_limit_kmh: u16,
    pub lanes: u8,
    pub heading_mrad: u16,
    pub timestamp_ms: u64,
    pub source: NodeId,
    pub danger_radius_m: u32,
    pub uncertainty_radius_m: u32,
    pub security_radius_m: u32,
}

impl EventReport {
    pub fn key(&self) -> EventKey {
        EventKey {
            location: self.location,
            event_type: self.event_type,
            timestamp_ms: self.timestamp_ms,
        }
    }

    pub fn position(&self) -> Position {
        self.location.to_position()
    }

    pub fn heading(&self) -> f64 {
        f64::from(self.heading_mrad) / 1000.0
    }

    pub fn radii(&self) -> Result<ZoneRadii, GeoError> {
        ZoneRadii::new(
            f64::from(self.danger_radius_m),
            f64::from(self.uncertainty_radius_m),
            f64::from(self.security_radius_m),
        )
    }

    pub fn road_profile(&self) -> Result<RoadProfile, ReportError> {
        if self.heading_mrad > MAX_HEADING_MRAD {
            return Err(ReportError::Heading(self.heading_mrad));
        }
        Ok(RoadProfile::new(
            self.lanes,
            f64::from(self.speed_limit_kmh),
            self.road_class,
            self.heading(),
        )?)
    }

    pub fn grid(&self) -> Result<CellGrid, ReportError> {
        let road = self.road_profile()?;
        Ok(geo::build_grid(
            self.position(),
            &road,
            f64::from(self.danger_radius_m),
        )?)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        self.radii()?;
        self.road_profile()?;
        Ok(())
    }

    /// Whether two reports describe the same physical event: same kind, road
    /// and direction, with locations within one danger radius.
    pub fn same_event_as(&self, other: &EventReport) -> bool {
        self.event_type == other.event_type
            && self.road_id == other.road_id
            && self.direction == other.direction
            && self.position().planar_distance(&other.position())
                <= f64::from(self.danger_radius_m.max(other.danger_radius_m))
    }

    pub fn encode(&self) -> [u8; MESSAGE_BYTES] {
        let mut out = [0u8; MESSAGE_BYTES];
        out[0..8].copy_from_slice(&self.location.x_mm.to_be_bytes());
        out[8..16].copy_from_slice(&self.location.y_mm.to_be_bytes());
        out[16..24].copy_from_slice(&self.location.z_mm.to_be_bytes());
        out[24] = self.event_type.code();
        out[25] = self.direction;
        out[26..30].copy_from_slice(&self.road_id.to_be_bytes());
        out[30] = self.road_class.code();
        out[31..33].copy_from_slice(&self.speed_limit_kmh.to_be_bytes());
        out[33] = self.lanes;
        out[34..36].copy_from_slice(&self.heading_mrad.to_be_bytes());
        out[36..44].copy_from_slice(&self.timestamp_ms.to_be_bytes());
        out[44..52].copy_from_slice(&self.source.0.to_be_bytes());
        out[52..56].copy_from_slice(&self.danger_radius_m.to_be_bytes());
        out[56..60].copy_from_slice(&self.uncertainty_radius_m.to_be_bytes());
        out[60..64].copy_from_slice(&self.security_radius_m.to_be_bytes());
        out
    }

    /// Decodes exactly [`MESSAGE_BYTES`] bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let report = r.report()?;
        r.finish()?;
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketW {
    pub report: EventReport,
    /// The sender's signature over the report; `sig.signer` is the sender.
    pub sig: Signature,
}

impl PacketW {
    pub fn sender(&self) -> NodeId {
        self.sig.signer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketR {
    pub report: EventReport,
    pub leader_pos: FixedPosition,
    pub request_timestamp_ms: u64,
    /// The self-nominated leader's signature over the report.
    pub sig: Signature,
}

impl PacketR {
    pub fn leader(&self) -> NodeId {
        self.sig.signer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketS {
    pub report: EventReport,
    pub member_pos: FixedPosition,
    pub member_timestamp_ms: u64,
    /// The member's signature over the report.
    pub sig: Signature,
}

impl PacketS {
    pub fn member(&self) -> NodeId {
        self.sig.signer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignerEntry {
    pub position: FixedPosition,
    pub signature: Signature,
}

impl SignerEntry {
    pub fn node(&self) -> NodeId {
        self.signature.signer
    }
}

/// Aggregated warning: the leader's signature first, then its members'.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketA {
    pub report: EventReport,
    pub signers: Vec<SignerEntry>,
}

impl PacketA {
    pub fn leader(&self) -> Option<NodeId> {
        self.signers.first().map(SignerEntry::node)
    }

    pub fn len(&self) -> usize {
        self.signers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signers.is_empty()
    }

    /// Report plus signer records, the part counted against a packet budget.
    pub fn payload_len(&self) -> usize {
        MESSAGE_BYTES
            + self
                .signers
                .iter()
                .map(|s| SIGNER_RECORD_OVERHEAD + s.signature.bytes.len())
                .sum::<usize>()
    }

    pub fn signer_ids(&self) -> Vec<NodeId> {
        self.signers.iter().map(SignerEntry::node).collect()
    }

    pub fn distinct_signers(&self) -> usize {
        self.signers
            .iter()
            .map(SignerEntry::node)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Packet {
    W(PacketW),
    R(PacketR),
    S(PacketS),
    A(PacketA),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    W,
    R,
    S,
    A,
}

impl PacketKind {
    pub const ALL: [PacketKind; 4] = [PacketKind::W, PacketKind::R, PacketKind::S, PacketKind::A];

    pub fn tag(self) -> u8 {
        match self {
            PacketKind::W => 0x01,
            PacketKind::R => 0x02,
            PacketKind::S => 0x03,
            PacketKind::A => 0x04,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        PacketKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn letter(self) -> char {
        match self {
            PacketKind::W => 'W',
            PacketKind::R => 'R',
            PacketKind::S => 'S',
            PacketKind::A => 'A',
        }
    }
}

fn sig_algo(sig: &Signature) -> Result<DigestAlgo, EncodeError> {
    sig.algo()
        .ok_or(EncodeError::BadSignatureLength(sig.bytes.len()))
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::W(_) => PacketKind::W,
            Packet::R(_) => PacketKind::R,
            Packet::S(_) => PacketKind::S,
            Packet::A(_) => PacketKind::A,
        }
    }

    pub fn report(&self) -> &EventReport {
        match self {
            Packet::W(p) => &p.report,
            Packet::R(p) => &p.report,
            Packet::S(p) => &p.report,
            Packet::A(p) => &p.report,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut out = Vec::with_capacity(160);
        out.push(self.kind().tag());
        match self {
            Packet::W(p) => {
                out.push(sig_algo(&p.sig)?.code());
                out.extend_from_slice(&p.report.encode());
                out.extend_from_slice(&p.sig.signer.0.to_be_bytes());
                out.extend_from_slice(&p.sig.bytes);
            }
            Packet::R(PacketR {
                report,
                leader_pos: pos,
                request_timestamp_ms: ts,
                sig,
            })
            | Packet::S(PacketS {
                report,
                member_pos: pos,
                member_timestamp_ms: ts,
                sig,
            }) => {
                out.push(sig_algo(sig)?.code());
                out.extend_from_slice(&report.encode());
                out.extend_from_slice(&sig.signer.0.to_be_bytes());
                for v in [pos.x_mm, pos.y_mm, pos.z_mm] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                out.extend_from_slice(&ts.to_be_bytes());
                out.extend_from_slice(&sig.bytes);
            }
            Packet::A(p) => {
                let first = p.signers.first().ok_or(EncodeError::EmptyAggregate)?;
                let algo = sig_algo(&first.signature)?;
                if p.signers.iter().any(|s| s.signature.bytes.len() != algo.digest_size()) {
                    return Err(EncodeError::MixedDigests);
                }
                let count = u16::try_from(p.signers.len())
                    .map_err(|_| EncodeError::TooManySigners(p.signers.len()))?;
                out.push(algo.code());
                out.extend_from_slice(&p.report.encode());
                out.extend_from_slice(&count.to_be_bytes());
                for s in &p.signers {
                    if !s.position.fits_compact() {
                        return Err(EncodeError::PositionOutOfRange(s.position));
                    }
                    out.extend_from_slice(&s.signature.signer.0.to_be_bytes());
                    for v in [s.position.x_mm, s.position.y_mm, s.position.z_mm] {
                        out.extend_from_slice(&(v as i32).to_be_bytes());
                    }
                    out.extend_from_slice(&s.signature.bytes);
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        let kind = PacketKind::from_tag(tag).ok_or(DecodeError::UnknownTag { offset: 0, tag })?;
        let code = r.u8()?;
        let algo = DigestAlgo::from_code(code).ok_or(DecodeError::UnknownDigest { offset: 1, code })?;
        let report = r.report()?;
        let packet = match kind {
            PacketKind::W => {
                let signer = NodeId(r.u64()?);
                let bytes = r.take(algo.digest_size())?.to_vec();
                Packet::W(PacketW {
                    report,
                    sig: Signature { signer, bytes },
                })
            }
            PacketKind::R | PacketKind::S => {
                let signer = NodeId(r.u64()?);
                let pos = FixedPosition {
                    x_mm: r.i64()?,
                    y_mm: r.i64()?,
                    z_mm: r.i64()?,
                };
                let ts = r.u64()?;
                let sig = Signature {
                    signer,
                    bytes: r.take(algo.digest_size())?.to_vec(),
                };
                if kind == PacketKind::R {
                    Packet::R(PacketR {
                        report,
                        leader_pos: pos,
                        request_timestamp_ms: ts,
                        sig,
                    })
                } else {
                    Packet::S(PacketS {
                        report,
                        member_pos: pos,
                        member_timestamp_ms: ts,
                        sig,
                    })
                }
            }
            PacketKind::A => {
                let count_at = r.offset;
                let count = usize::from(r.u16()?);
                if count == 0 {
                    return Err(DecodeError::InvalidField {
                        offset: count_at,
                        field: "signer count",
                    });
                }
                let record = SIGNER_RECORD_OVERHEAD + algo.digest_size();
                if r.remaining() < count * record {
                    return Err(DecodeError::Truncated {
                        offset: r.offset,
                        needed: count * record - r.remaining(),
                    });
                }
                let mut signers = Vec::with_capacity(count);
                for _ in 0..count {
                    let signer = NodeId(r.u64()?);
                    let position = FixedPosition {
                        x_mm: i64::from(r.i32()?),
                        y_mm: i64::from(r.i32()?),
                        z_mm: i64::from(r.i32()?),
                    };
                    let bytes = r.take(algo.digest_size())?.to_vec();
                    signers.push(SignerEntry {
                        position,
                        signature: Signature { signer, bytes },
                    });
                }
                Packet::A(PacketA { report, signers })
            }
        };
        r.finish()?;
        Ok(packet)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, offset: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.offset
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                offset: self.offset,
                needed: n - self.remaining(),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, DecodeError> {
        Ok(i32::from_be_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    fn report(&mut self) -> Result<EventReport, DecodeError> {
        let base = self.offset;
        if self.remaining() < MESSAGE_BYTES {
            return Err(DecodeError::Truncated {
                offset: self.bytes.len(),
                needed: MESSAGE_BYTES - self.remaining(),
            });
        }
        let invalid = |rel: usize, field: &'static str| DecodeError::InvalidField {
            offset: base + rel,
            field,
        };
        let location = FixedPosition {
            x_mm: self.i64()?,
            y_mm: self.i64()?,
            z_mm: self.i64()?,
        };
        let event_type = EventType::from_code(self.u8()?).ok_or_else(|| invalid(24, "event type"))?;
        let direction = self.u8()?;
        let road_id = self.u32()?;
        let road_class = RoadClass::from_code(self.u8()?).ok_or_else(|| invalid(30, "road class"))?;
        let speed_limit_kmh = self.u16()?;
        if speed_limit_kmh == 0 {
            return Err(invalid(31, "speed limit"));
        }
        let lanes = self.u8()?;
        if lanes == 0 {
            return Err(invalid(33, "lane count"));
        }
        let heading_mrad = self.u16()?;
        if heading_mrad > MAX_HEADING_MRAD {
            return Err(invalid(34, "heading"));
        }
        let timestamp_ms = self.u64()?;
        let source = NodeId(self.u64()?);
        let danger_radius_m = self.u32()?;
        let uncertainty_radius_m = self.u32()?;
        let security_radius_m = self.u32()?;
        if !(0 < danger_radius_m
            && danger_radius_m < uncertainty_radius_m
            && uncertainty_radius_m < security_radius_m)
        {
            return Err(invalid(52, "zone radii"));
        }
        let padding = self.take(MESSAGE_BYTES - REPORT_PADDING_START)?;
        if let Some(i) = padding.iter().position(|b| *b != 0) {
            return Err(invalid(REPORT_PADDING_START + i, "padding"));
        }
        Ok(EventReport {
            location,
            event_type,
            direction,
            road_id,
            road_class,
            speed_limit_kmh,
            lanes,
            heading_mrad,
            timestamp_ms,
            source,
            danger_radius_m,
            uncertainty_radius_m,
            security_radius_m,
        })
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.remaining() > 0 {
            return Err(DecodeError::Trailing {
                offset: self.offset,
                extra: self.remaining(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("packet size must be one of 256, 512, 1024 or 1500 bytes, got {0}")]
pub struct BudgetError(pub u16);

/// Maximum packet size with a fixed 100-byte message; the rest holds signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PacketBudget {
    packet_size: u16,
}

impl PacketBudget {
    pub const SIZES: [u16; 4] = [256, 512, 1024, 1500];

    pub fn new(packet_size: u16) -> Result<Self, BudgetError> {
        if PacketBudget::SIZES.contains(&packet_size) {
            Ok(PacketBudget { packet_size })
        } else {
            Err(BudgetError(packet_size))
        }
    }

    pub fn all() -> impl Iterator<Item = PacketBudget> {
        PacketBudget::SIZES
            .into_iter()
            .map(|packet_size| PacketBudget { packet_size })
    }

    pub fn packet_size(&self) -> u16 {
        self.packet_size
    }

    pub fn message_bytes(&self) -> usize {
        MESSAGE_BYTES
    }

    pub fn signature_area(&self) -> usize {
        usize::from(self.packet_size) - MESSAGE_BYTES
    }
}

/// Signatures that fit when only digest bytes are counted.
pub fn max_signatures(budget: PacketBudget, algo: DigestAlgo) -> usize {
    budget.signature_area() / algo.digest_size()
}

/// Signer records (id, position, digest) that fit in an aggregate payload.
pub fn max_signers_practical(budget: PacketBudget, algo: DigestAlgo) -> usize {
    budget.signature_area() / (SIGNER_RECORD_OVERHEAD + algo.digest_size())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizingRow {
    pub algo: DigestAlgo,
    pub packet_size: u16,
    pub signature_area: usize,
    pub max_signatures: usize,
}

/// Every (digest class, packet size) pair, grouped by packet size.
pub fn sizing_table() -> Vec<SizingRow> {
    PacketBudget::all()
        .flat_map(|budget| {
            DigestAlgo::ALL.into_iter().map(move |algo| SizingRow {
                algo,
                packet_size: budget.packet_size(),
                signature_area: budget.signature_area(),
                max_signatures: max_signatures(budget, algo),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sample_report() -> EventReport {
        EventReport {
            location: FixedPosition {
                x_mm: 800_000,
                y_mm: -6_000,
                z_mm: 0,
            },
            event_type: EventType::TrafficJam,
            direction: 0,
            road_id: 7,
            road_class: RoadClass::Highway,
            speed_limit_kmh: 120,
            lanes: 3,
            heading_mrad: 0,
            timestamp_ms: 12_345,
            source: NodeId(3),
            danger_radius_m: 100,
            uncertainty_radius_m: 300,
            security_radius_m: 1000,
        }
    }

    fn sig(signer: u64, len: usize, fill: u8) -> Signature {
        Signature {
            signer: NodeId(signer),
            bytes: vec![fill; len],
        }
    }

    #[test]
    fn report_is_one_hundred_bytes() {
        let r = sample_report();
        let bytes = r.encode();
        assert_eq!(bytes.len(), 100);
        assert_eq!(EventReport::decode(&bytes).unwrap(), r);
        assert_eq!(&bytes[0..8], &800_000i64.to_be_bytes());
        assert!(bytes[64..].iter().all(|b| *b == 0));
    }

    #[test]
    fn short_report_is_truncated() {
        let bytes = sample_report().encode();
        assert!(matches!(
            EventReport::decode(&bytes[..99]),
            Err(DecodeError::Truncated { needed: 1, .. })
        ));
    }

    #[test]
    fn report_rejects_bad_fields() {
        let mut bytes = sample_report().encode();
        bytes[24] = 9;
        assert_eq!(
            EventReport::decode(&bytes),
            Err(DecodeError::InvalidField { offset: 24, field: "event type" })
        );
        let mut bytes = sample_report().encode();
        bytes[70] = 1;
        assert_eq!(
            EventReport::decode(&bytes),
            Err(DecodeError::InvalidField { offset: 70, field: "padding" })
        );
        let mut r = sample_report();
        r.uncertainty_radius_m = 50;
        assert_eq!(
            EventReport::decode(&r.encode()),
            Err(DecodeError::InvalidField { offset: 52, field: "zone radii" })
        );
    }

    #[test]
    fn packet_errors_name_offsets() {
        assert_eq!(
            Packet::decode(&[0x09, 2]),
            Err(DecodeError::UnknownTag { offset: 0, tag: 9 })
        );
        assert_eq!(
            Packet::decode(&[0x01, 7]),
            Err(DecodeError::UnknownDigest { offset: 1, code: 7 })
        );
        let w = Packet::W(PacketW {
            report: sample_report(),
            sig: sig(1, 20, 0xab),
        });
        let mut bytes = w.encode().unwrap();
        assert_eq!(bytes.len(), 1 + 1 + 100 + 8 + 20);
        bytes.push(0);
        assert_eq!(
            Packet::decode(&bytes),
            Err(DecodeError::Trailing { offset: 130, extra: 1 })
        );
        bytes.truncate(120);
        assert!(matches!(Packet::decode(&bytes), Err(DecodeError::Truncated { offset: 110, .. })));
    }

    #[test]
    fn aggregate_count_overflow_is_truncation() {
        let a = Packet::A(PacketA {
            report: sample_report(),
            signers: vec![SignerEntry {
                position: FixedPosition::default(),
                signature: sig(1, 16, 1),
            }],
        });
        let mut bytes = a.encode().unwrap();
        bytes[102..104].copy_from_slice(&5u16.to_be_bytes());
        assert!(matches!(
            Packet::decode(&bytes),
            Err(DecodeError::Truncated { offset: 104, .. })
        ));
    }

    #[test]
    fn aggregate_encoding_rules() {
        let entry = |id, len| SignerEntry {
            position: FixedPosition { x_mm: 1, y_mm: 2, z_mm: 3 },
            signature: sig(id, len, 0),
        };
        let empty = Packet::A(PacketA { report: sample_report(), signers: vec![] });
        assert_eq!(empty.encode(), Err(EncodeError::EmptyAggregate));
        let mixed = Packet::A(PacketA {
            report: sample_report(),
            signers: vec![entry(1, 20), entry(2, 32)],
        });
        assert_eq!(mixed.encode(), Err(EncodeError::MixedDigests));
        let far = Packet::A(PacketA {
            report: sample_report(),
            signers: vec![SignerEntry {
                position: FixedPosition { x_mm: i64::from(i32::MAX) + 1, y_mm: 0, z_mm: 0 },
                signature: sig(1, 20, 0),
            }],
        });
        assert!(matches!(far.encode(), Err(EncodeError::PositionOutOfRange(_))));
    }

    #[test]
    fn aggregate_size_is_affine_in_signers() {
        for algo in DigestAlgo::ALL {
            let mut lens = Vec::new();
            for n in 1..6u64 {
                let a = PacketA {
                    report: sample_report(),
                    signers: (0..n)
                        .map(|i| SignerEntry {
                            position: FixedPosition::default(),
                            signature: sig(i, algo.digest_size(), 3),
                        })
                        .collect(),
                };
                assert_eq!(a.payload_len(), 100 + n as usize * (20 + algo.digest_size()));
                lens.push(Packet::A(a).encode().unwrap().len());
            }
            for w in lens.windows(2) {
                assert_eq!(w[1] - w[0], SIGNER_RECORD_OVERHEAD + algo.digest_size());
            }
            assert_eq!(lens[0], AGGREGATE_HEADER_BYTES + 100 + 20 + algo.digest_size());
        }
    }

    #[test]
    fn budgets() {
        let areas: Vec<_> = PacketBudget::all().map(|b| b.signature_area()).collect();
        assert_eq!(areas, vec![156, 412, 924, 1400]);
        assert!(PacketBudget::new(300).is_err());
        let b = |s| PacketBudget::new(s).unwrap();
        assert_eq!(max_signatures(b(256), DigestAlgo::Sha1), 7);
        assert_eq!(max_signatures(b(512), DigestAlgo::Md5), 25);
        assert_eq!(max_signatures(b(1500), DigestAlgo::Sha256), 43);
        assert_eq!(max_signers_practical(b(256), DigestAlgo::Sha1), 3);
        assert_eq!(max_signers_practical(b(1024), DigestAlgo::Sha1), 23);
        assert_eq!(max_signers_practical(b(1500), DigestAlgo::Md5), 38);
    }

    #[test]
    fn sizing_table_rows() {
        let table = sizing_table();
        assert_eq!(table.len(), 12);
        let find = |algo, size| {
            *table
                .iter()
                .find(|r| r.algo == algo && r.packet_size == size)
                .unwrap()
        };
        let row = find(DigestAlgo::Sha1, 1024);
        assert_eq!((row.signature_area, row.max_signatures), (924, 46));
        assert_eq!(find(DigestAlgo::Md5, 1500).max_signatures, 87);
        assert_eq!(find(DigestAlgo::Sha256, 256).max_signatures, 4);
        assert_eq!(table[0].algo, DigestAlgo::Md5);
        assert_eq!(table[0].packet_size, 256);
        assert_eq!(table[11].algo, DigestAlgo::Sha256);
        assert_eq!(table[11].packet_size, 1500);
    }

    fn arb_fixed(range: i64) -> impl Strategy<Value = FixedPosition> {
        (-range..range, -range..range, -range..range)
            .prop_map(|(x_mm, y_mm, z_mm)| FixedPosition { x_mm, y_mm, z_mm })
    }

    prop_compose! {
        fn arb_report()(
            location in arb_fixed(i64::MAX / 2),
            et in 0usize..4, direction in any::<u8>(), road_id in any::<u32>(),
            highway in any::<bool>(), speed in 1u16.., lanes in 1u8..,
            heading_mrad in 0u16..=6283, timestamp_ms in any::<u64>(), source in any::<u64>(),
            d in 1u32..1000, du in 1u32..1000, ds in 1u32..10_000,
        ) -> EventReport {
            EventReport {
                location,
                event_type: EventType::ALL[et],
                direction,
                road_id,
                road_class: if highway { RoadClass::Highway } else { RoadClass::Conventional },
                speed_limit_kmh: speed,
                lanes,
                heading_mrad,
                timestamp_ms,
                source: NodeId(source),
                danger_radius_m: d,
                uncertainty_radius_m: d + du,
                security_radius_m: d + du + ds,
            }
        }
    }

    fn arb_sig(len: usize) -> impl Strategy<Value = Signature> {
        (any::<u64>(), proptest::collection::vec(any::<u8>(), len))
            .prop_map(|(s, bytes)| Signature { signer: NodeId(s), bytes })
    }

    fn arb_packet() -> impl Strategy<Value = Packet> {
        (0usize..3).prop_flat_map(|a| {
            let len = DigestAlgo::ALL[a].digest_size();
            prop_oneof![
                (arb_report(), arb_sig(len)).prop_map(|(report, sig)| Packet::W(PacketW { report, sig })),
                (arb_report(), arb_fixed(i64::MAX / 2), any::<u64>(), arb_sig(len)).prop_map(
                    |(report, leader_pos, request_timestamp_ms, sig)| Packet::R(PacketR {
                        report, leader_pos, request_timestamp_ms, sig
                    })
                ),
                (arb_report(), arb_fixed(i64::MAX / 2), any::<u64>(), arb_sig(len)).prop_map(
                    |(report, member_pos, member_timestamp_ms, sig)| Packet::S(PacketS {
                        report, member_pos, member_timestamp_ms, sig
                    })
                ),
                (
                    arb_report(),
                    proptest::collection::vec(
                        (arb_fixed(i64::from(i32::MAX)), arb_sig(len))
                            .prop_map(|(position, signature)| SignerEntry { position, signature }),
                        1..40,
                    )
                )
                    .prop_map(|(report, signers)| Packet::A(PacketA { report, signers })),
            ]
        })
    }

    proptest! {
        #[test]
        fn packets_round_trip(p in arb_packet()) {
            let bytes = p.encode().unwrap();
            prop_assert_eq!(bytes[0], p.kind().tag());
            let back = Packet::decode(&bytes).unwrap();
            prop_assert_eq!(&back, &p);
            // canonical: re-encoding is byte-identical
            prop_assert_eq!(back.encode().unwrap(), bytes);
        }

        #[test]
        fn truncation_never_panics(p in arb_packet(), cut in any::<prop::sample::Index>()) {
            let bytes = p.encode().unwrap();
            let n = cut.index(bytes.len());
            let is_truncated = matches!(Packet::decode(&bytes[..n]), Err(DecodeError::Truncated { .. }));
            prop_assert!(is_truncated);
        }
    }
}
