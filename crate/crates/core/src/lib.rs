//! Authenticated Wi-Fi beacon time broadcast with hash-chain keys, a
//! simplified authenticated network-time exchange, and GNSS time-spoofing
//! detection, plus a deterministic simulator tying them together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchor;
pub mod attacker;
pub mod beacon;
pub mod capture;
pub mod chain;
pub mod clock;
pub mod cost;
pub mod detector;
pub mod ids;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod timeserver;
pub mod transmitter;
pub mod verifier;
pub mod wire;

pub use anchor::{ApCertificate, Ed25519Signer, SignedAnchor, Signer, TrustStore};
pub use beacon::{build_beacon, BeaconFrame};
pub use chain::{generate_chain, HashChain, Validity};
pub use cost::{CostTable, OpCounters};
pub use ids::{ApId, ChainId};
pub use verifier::{AuthenticatedObservation, Verifier, VerifierConfig, VerifyOutcome, VerifyStatus};
pub use wire::DecodeError;
