//! Warning-message aggregation for vehicular ad-hoc networks: geometry,
//! wire formats, the per-node protocol, probabilistic verification and a
//! deterministic simulator.

pub mod crypto;
pub mod geo;
pub mod packets;
pub mod verify;
pub mod protocol;
pub mod sim;
