//! Probabilistic verification of aggregated packets and the closed-form
//! analytics behind the sampling design.
//!
//! A receiver holding an aggregate of `n` signatures checks each one
//! independently, roughly with probability `min(1, k/n)`, and accepts the
//! packet only if every checked signature is valid. At least two signatures
//! are always checked when two are available.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{self, Directory, NodeId, SigCheck};
use crate::geo::CellId;
use crate::packets::{PacketA, ReportError};

/// Stream index reserved for the draws that top up the two-check floor.
const FLOOR_STREAM: u64 = u64::MAX;
const DRAW_RANGE: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum VerifyError {
    #[error("signature count must be at least 1")]
    NoSignatures,
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("expected verification count k must be positive")]
    ZeroK,
    #[error("minimum signature count must be at least 1")]
    ZeroMinimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerificationPolicy {
    k: u32,
    min_signatures: usize,
}

impl Default for VerificationPolicy {
    fn default() -> Self {
        VerificationPolicy {
            k: 10,
            min_signatures: 3,
        }
    }
}

impl VerificationPolicy {
    pub fn new(k: u32, min_signatures: usize) -> Result<Self, VerifyError> {
        if k == 0 {
            return Err(VerifyError::ZeroK);
        }
        if min_signatures == 0 {
            return Err(VerifyError::ZeroMinimum);
        }
        Ok(VerificationPolicy { k, min_signatures })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn min_signatures(&self) -> usize {
        self.min_signatures
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationOutcome {
    Reliable {
        checked: usize,
    },
    NotReliable {
        signer: NodeId,
        /// `Invalid` or `UnknownSigner`.
        reason: SigCheck,
        checked: usize,
    },
    NotEnoughSignatures {
        present: usize,
    },
}

impl VerificationOutcome {
    pub fn is_reliable(&self) -> bool {
        matches!(self, VerificationOutcome::Reliable { .. })
    }

    pub fn checked(&self) -> usize {
        match *self {
            VerificationOutcome::Reliable { checked } | VerificationOutcome::NotReliable { checked, .. } => {
                checked
            }
            VerificationOutcome::NotEnoughSignatures { .. } => 0,
        }
    }
}

pub fn verification_probability(n: usize, k: u32) -> Result<f64, VerifyError> {
    if n == 0 {
        return Err(VerifyError::NoSignatures);
    }
    Ok((f64::from(k) / n as f64).min(1.0))
}

/// Probability that at least two of `n` independent Bernoulli(`p`) checks fire.
pub fn prob_at_least_two(n: usize, p: f64) -> Result<f64, VerifyError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(VerifyError::ProbabilityOutOfRange(p));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let q = 1.0 - p;
    let n_f = n as f64;
    let none = q.powf(n_f);
    let one = n_f * p * q.powf(n_f - 1.0);
    Ok((1.0 - none - one).clamp(0.0, 1.0))
}

pub fn expected_verifications(n: usize, k: u32) -> Result<f64, VerifyError> {
    Ok(n as f64 * verification_probability(n, k)?)
}

/// Exact per-signature selection probability of the integer draw rule used by
/// [`verify_aggregate`]: `u` uniform on `0..100`, checked iff `u·n > 100·(n−k)`.
pub fn selection_probability(n: usize, k: u32) -> f64 {
    let k = k as usize;
    if n == 0 || k >= n {
        return 1.0;
    }
    let selected = (0..DRAW_RANGE as usize)
        .filter(|u| u * n > 100 * (n - k))
        .count();
    selected as f64 / DRAW_RANGE as f64
}

/// Stable identifier of an aggregate, derived from its report and signer records.
pub fn packet_id(packet: &PacketA) -> u64 {
    let mut h = Sha256::new();
    h.update(packet.report.encode());
    for s in &packet.signers {
        h.update(s.signature.signer.0.to_be_bytes());
        for v in [s.position.x_mm, s.position.y_mm, s.position.z_mm] {
            h.update(v.to_be_bytes());
        }
        h.update((s.signature.bytes.len() as u32).to_be_bytes());
        h.update(&s.signature.bytes);
    }
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("digest is 32 bytes"))
}

fn draw_rng(seed: u64, packet_id: u64, stream: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(packet_id.to_be_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    rng.set_stream(stream);
    rng
}

/// Indices whose signatures will be checked, in ascending order.
///
/// The draw for index `i` depends only on `(seed, packet_id, i)`, so the
/// selection can be evaluated in any order or in parallel.
pub fn select_indices(n: usize, k: u32, seed: u64, packet_id: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if k as usize >= n {
        return (0..n).collect();
    }
    let threshold = 100 * (n - k as usize);
    let mut chosen: Vec<usize> = (0..n)
        .filter(|&i| {
            let u = draw_rng(seed, packet_id, i as u64).gen_range(0..DRAW_RANGE) as usize;
            u * n > threshold
        })
        .collect();
    let floor = n.min(2);
    if chosen.len() < floor {
        let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        let mut rng = draw_rng(seed, packet_id, FLOOR_STREAM);
        let need = floor - chosen.len();
        chosen.extend(index::sample(&mut rng, rest.len(), need).into_iter().map(|j| rest[j]));
        chosen.sort_unstable();
    }
    chosen
}

fn check_indices(packet: &PacketA, dir: &Directory, indices: &[usize]) -> VerificationOutcome {
    let message = packet.report.encode();
    let algo = packet.signers.first().and_then(|s| s.signature.algo());
    for (done, &i) in indices.iter().enumerate() {
        let sig = &packet.signers[i].signature;
        let result = match algo {
            Some(algo) => crypto::check(dir, sig, &message, algo),
            None if dir.contains(sig.signer) => SigCheck::Invalid,
            None => SigCheck::UnknownSigner,
        };
        if result != SigCheck::Valid {
            return VerificationOutcome::NotReliable {
                signer: sig.signer,
                reason: result,
                checked: done + 1,
            };
        }
    }
    VerificationOutcome::Reliable {
        checked: indices.len(),
    }
}

/// Sampled verification of an aggregate. Packets with fewer than
/// `policy.min_signatures` signers are not checked at all.
pub fn verify_aggregate(
    packet: &PacketA,
    dir: &Directory,
    policy: &VerificationPolicy,
    seed: u64,
) -> VerificationOutcome {
    let n = packet.len();
    if n < policy.min_signatures {
        return VerificationOutcome::NotEnoughSignatures { present: n };
    }
    let indices = select_indices(n, policy.k, seed, packet_id(packet));
    check_indices(packet, dir, &indices)
}

/// Checks every signature regardless of count, as a node that observed the
/// event itself can afford to.
pub fn verify_exhaustive(packet: &PacketA, dir: &Directory) -> VerificationOutcome {
    if packet.is_empty() {
        return VerificationOutcome::NotEnoughSignatures { present: 0 };
    }
    let all: Vec<usize> = (0..packet.len()).collect();
    check_indices(packet, dir, &all)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityCheck {
    /// Distinct cells among the internally consistent packets.
    pub distinct_groups: usize,
    pub cell_consistent: bool,
    /// Indices of packets whose signers span several cells (or that are empty).
    pub flagged: Vec<usize>,
    pub cells: BTreeMap<CellId, usize>,
}

/// Rebuilds the grid from the first packet's report and maps every signer of
/// every packet into it. Trust added by independent groups is the number of
/// distinct originating cells.
pub fn security_zone_check(packets: &[PacketA]) -> Result<SecurityCheck, ReportError> {
    let Some(first) = packets.first() else {
        return Ok(SecurityCheck {
            distinct_groups: 0,
            cell_consistent: true,
            flagged: Vec::new(),
            cells: BTreeMap::new(),
        });
    };
    let grid = first.report.grid()?;
    let mut cells = BTreeMap::new();
    let mut flagged = Vec::new();
    for (idx, p) in packets.iter().enumerate() {
        let signer_cells: BTreeSet<CellId> = p
            .signers
            .iter()
            .map(|s| grid.cell_of(&s.position.to_position()))
            .collect();
        match signer_cells.len() {
            1 => {
                let cell = *signer_cells.first().expect("one element");
                *cells.entry(cell).or_insert(0) += 1;
            }
            _ => flagged.push(idx),
        }
    }
    Ok(SecurityCheck {
        distinct_groups: cells.len(),
        cell_consistent: flagged.is_empty(),
        flagged,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{sign, DigestAlgo, KeyPair};
    use crate::geo::RoadClass;
    use crate::packets::{EventReport, EventType, FixedPosition, SignerEntry};
    use proptest::prelude::*;

    fn report() -> EventReport {
        EventReport {
            location: FixedPosition { x_mm: 0, y_mm: 0, z_mm: 0 },
            event_type: EventType::Accident,
            direction: 0,
            road_id: 1,
            road_class: RoadClass::Highway,
            speed_limit_kmh: 120,
            lanes: 3,
            heading_mrad: 0,
            timestamp_ms: 1_000,
            source: NodeId(0),
            danger_radius_m: 100,
            uncertainty_radius_m: 300,
            security_radius_m: 1000,
        }
    }

    fn aggregate(n: u64, forged: &[u64]) -> (PacketA, Directory) {
        let mut dir = Directory::new();
        let r = report();
        let msg = r.encode();
        let signers = (0..n)
            .map(|i| {
                let kp = KeyPair::from_seed(NodeId(i), [i as u8 + 1; 32]);
                dir.enroll(&kp).unwrap();
                let mut signature = sign(&kp, &msg, DigestAlgo::Sha1).unwrap();
                if forged.contains(&i) {
                    signature.bytes[0] ^= 1;
                }
                SignerEntry {
                    position: FixedPosition { x_mm: i as i64 * 1000, y_mm: 0, z_mm: 0 },
                    signature,
                }
            })
            .collect();
        (PacketA { report: r, signers }, dir)
    }

    #[test]
    fn probability_examples() {
        assert_eq!(verification_probability(20, 10).unwrap(), 0.5);
        assert_eq!(verification_probability(7, 10).unwrap(), 1.0);
        assert_eq!(verification_probability(10, 10).unwrap(), 1.0);
        assert!(verification_probability(0, 10).is_err());
        for n in 0..50 {
            assert_eq!(prob_at_least_two(n, 0.0).unwrap(), 0.0);
        }
        assert_eq!(prob_at_least_two(2, 1.0).unwrap(), 1.0);
        assert_eq!(prob_at_least_two(1, 0.7).unwrap(), 0.0);
        assert!((prob_at_least_two(20, 0.5).unwrap() - 0.99998).abs() < 1e-5);
        assert!(prob_at_least_two(5, 1.5).is_err());
    }

    #[test]
    fn expected_verification_examples() {
        assert_eq!(expected_verifications(46, 10).unwrap(), 10.0);
        assert_eq!(expected_verifications(7, 10).unwrap(), 7.0);
        assert_eq!(expected_verifications(4, 10).unwrap(), 4.0);
    }

    #[test]
    fn selection_probability_of_integer_rule() {
        assert_eq!(selection_probability(20, 10), 0.49);
        assert_eq!(selection_probability(7, 10), 1.0);
        assert_eq!(selection_probability(70, 10), 0.14);
    }

    #[test]
    fn too_few_signatures() {
        let (p, dir) = aggregate(2, &[]);
        assert_eq!(
            verify_aggregate(&p, &dir, &VerificationPolicy::default(), 1),
            VerificationOutcome::NotEnoughSignatures { present: 2 }
        );
        let (p, dir) = aggregate(3, &[]);
        assert!(verify_aggregate(&p, &dir, &VerificationPolicy::default(), 1).is_reliable());
    }

    #[test]
    fn small_aggregates_are_checked_fully() {
        let (p, dir) = aggregate(7, &[]);
        for seed in 0..50 {
            assert_eq!(
                verify_aggregate(&p, &dir, &VerificationPolicy::default(), seed),
                VerificationOutcome::Reliable { checked: 7 }
            );
        }
    }

    #[test]
    fn unknown_signer_is_distinguished() {
        let (p, _) = aggregate(4, &[]);
        let (_, mut dir) = aggregate(3, &[]);
        dir.enroll(&KeyPair::from_seed(NodeId(99), [9; 32])).unwrap();
        match verify_exhaustive(&p, &dir) {
            VerificationOutcome::NotReliable { signer, reason, .. } => {
                assert_eq!(signer, NodeId(3));
                assert_eq!(reason, SigCheck::UnknownSigner);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forged_signature_is_found_at_the_sampling_rate() {
        let (p, dir) = aggregate(20, &[13]);
        let policy = VerificationPolicy::default();
        let runs = 10_000;
        let detected = (0..runs)
            .filter(|&seed| !verify_aggregate(&p, &dir, &policy, seed).is_reliable())
            .count();
        let freq = detected as f64 / runs as f64;
        assert!((freq - 0.5).abs() <= 0.02, "detection frequency {freq}");
    }

    #[test]
    fn floor_applies_when_sampling_picks_too_few() {
        // k = 1 over 60 signatures selects fewer than two most of the time.
        for seed in 0..200 {
            assert!(select_indices(60, 1, seed, 42).len() >= 2);
        }
        assert_eq!(select_indices(1, 1, 0, 0), vec![0]);
    }

    #[test]
    fn security_zone_examples() {
        let (mut a, _) = aggregate(3, &[]);
        let (mut b, _) = aggregate(3, &[]);
        for s in &mut b.signers {
            s.position.x_mm += 288_000;
        }
        let check = security_zone_check(&[a.clone(), b]).unwrap();
        assert_eq!((check.distinct_groups, check.cell_consistent), (2, true));
        assert_eq!(security_zone_check(std::slice::from_ref(&a)).unwrap().distinct_groups, 1);
        a.signers[2].position.x_mm = 200_000;
        let check = security_zone_check(&[a]).unwrap();
        assert!(!check.cell_consistent);
        assert_eq!(check.flagged, vec![0]);
    }

    proptest! {
        #[test]
        fn same_seed_same_outcome(n in 3u64..60, seed in any::<u64>(), bad in proptest::collection::vec(0u64..60, 0..3)) {
            let (p, dir) = aggregate(n, &bad);
            let policy = VerificationPolicy::default();
            prop_assert_eq!(verify_aggregate(&p, &dir, &policy, seed), verify_aggregate(&p, &dir, &policy, seed));
        }

        #[test]
        fn fully_forged_is_always_rejected(n in 3u64..80, seed in any::<u64>()) {
            let all: Vec<u64> = (0..n).collect();
            let (p, dir) = aggregate(n, &all);
            let outcome = verify_aggregate(&p, &dir, &VerificationPolicy::default(), seed);
            let rejected = matches!(outcome, VerificationOutcome::NotReliable { reason: SigCheck::Invalid, .. });
            prop_assert!(rejected);
        }

        #[test]
        fn prob_is_monotone(n in 2usize..200, p in 0.0f64..1.0, dp in 0.0f64..0.1) {
            let base = prob_at_least_two(n, p).unwrap();
            prop_assert!(prob_at_least_two(n + 1, p).unwrap() >= base - 1e-12);
            prop_assert!(prob_at_least_two(n, (p + dp).min(1.0)).unwrap() >= base - 1e-12);
        }

        #[test]
        fn selection_is_sorted_unique_and_bounded(n in 1usize..120, k in 1u32..30, seed in any::<u64>(), id in any::<u64>()) {
            let sel = select_indices(n, k, seed, id);
            prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(sel.iter().all(|&i| i < n));
            prop_assert!(sel.len() >= n.min(2));
        }
    }
}
