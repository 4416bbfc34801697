//! Adversary behaviours: beacon forgery, replay and meaconing, rogue APs and
//! bogus time-server replies. The attacker only ever sees what is on the air.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{ApCertificate, Ed25519Signer, Signer};
use crate::beacon::{compute_mac, BeaconFrame};
use crate::chain::{generate_chain, ChainError, HashChain, Validity};
use crate::ids::{ApId, ChainId};
use crate::timeserver::TimeExchange;
use crate::transmitter::{ApConfig, Transmitter, TxError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    ForgeBeacon,
    ReplaySequence {
        /// How long after capture the recorded frames are replayed.
        replay_after_us: i64,
    },
    Meacon {
        delay_us: i64,
        /// Jam the legitimate AP so the client only hears the relay.
        #[serde(default = "yes")]
        block_legitimate: bool,
    },
    RogueAp {
        #[serde(default = "one")]
        rogue_aps: u32,
    },
    ForgeTimeReply {
        bogus_offset_us: i64,
    },
}

fn yes() -> bool {
    true
}

fn one() -> u32 {
    1
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::ForgeBeacon => "forge_beacon",
            AttackKind::ReplaySequence { .. } => "replay_sequence",
            AttackKind::Meacon { .. } => "meacon",
            AttackKind::RogueAp { .. } => "rogue_ap",
            AttackKind::ForgeTimeReply { .. } => "forge_time_reply",
        }
    }
}

/// Attack kind plus its activation window and volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    #[serde(flatten)]
    pub kind: AttackKind,
    #[serde(default)]
    pub start_us: i64,
    #[serde(default = "forever")]
    pub end_us: i64,
    /// Attacker frames or replies to inject over the window.
    #[serde(default = "thousand")]
    pub count: u32,
}

fn forever() -> i64 {
    i64::MAX
}

fn thousand() -> u32 {
    1000
}

impl Default for AttackScenario {
    fn default() -> Self {
        AttackScenario {
            kind: AttackKind::None,
            start_us: 0,
            end_us: i64::MAX,
            count: 1000,
        }
    }
}

impl AttackScenario {
    pub fn is_active_at(&self, t_us: i64) -> bool {
        self.kind != AttackKind::None && t_us >= self.start_us && t_us < self.end_us
    }
}

/// Syntactically valid beacon with an attacker-chosen timestamp and random
/// MAC and key.
pub fn forge_beacon(
    rng: &mut ChaCha8Rng,
    ap_id: ApId,
    chain_id: ChainId,
    index: u32,
    desired_timestamp_us: u64,
) -> BeaconFrame {
    let mut mac = [0u8; 32];
    let mut key = [0u8; 32];
    rng.fill_bytes(&mut mac);
    rng.fill_bytes(&mut key);
    BeaconFrame {
        timestamp_us: desired_timestamp_us,
        beacon_interval_tu: 100,
        ap_id,
        chain_id,
        index,
        mac,
        disclosed_key: key,
        anchor_blob: None,
        cert_blob: None,
        trailing: Vec::new(),
    }
}

/// Re-uses a disclosed key from an observed beacon and MACs a new timestamp
/// with the only key material available: keys already on the air.
pub fn forge_with_copied_key(observed: &BeaconFrame, desired_timestamp_us: u64) -> BeaconFrame {
    let mut f = observed.clone();
    f.timestamp_us = desired_timestamp_us;
    f.anchor_blob = None;
    f.cert_blob = None;
    f.mac = compute_mac(&observed.disclosed_key, &f);
    f
}

/// Same frames, received `delay_us` later.
pub fn meacon(frames: &[(BeaconFrame, i64)], delay_us: i64) -> Vec<(BeaconFrame, i64)> {
    assert!(delay_us >= 0, "meacon delay must be non-negative");
    frames.iter().map(|(f, t)| (f.clone(), t + delay_us)).collect()
}

/// Substitutes server timestamps; the original tag is kept and no longer matches.
pub fn forge_time_reply(x: &TimeExchange, bogus_t2: i64, bogus_t3: i64) -> TimeExchange {
    TimeExchange {
        t2: bogus_t2,
        t3: bogus_t3,
        ..x.clone()
    }
}

/// Shifts both server timestamps so an unauthenticated client's offset
/// estimate moves by `shift_us`.
pub fn skew_time_reply(x: &TimeExchange, shift_us: i64) -> TimeExchange {
    forge_time_reply(x, x.t2 + shift_us, x.t3 + shift_us)
}

/// Credentials an attacker can mint for a rogue AP: its own chain and a
/// certificate from an issuer it controls, claiming the name of a real root.
pub struct RogueIdentity {
    pub signer: Ed25519Signer,
    pub certificate: ApCertificate,
}

impl RogueIdentity {
    pub fn new(rng: &mut ChaCha8Rng, impersonated_ap: ApId, claimed_issuer: &str) -> Self {
        let signer = Ed25519Signer::from_secret(rng.random());
        let fake_root = Ed25519Signer::from_secret(rng.random());
        let certificate = ApCertificate::issue(impersonated_ap, signer.public_key(), claimed_issuer, &fake_root);
        RogueIdentity { signer, certificate }
    }

    pub fn chain(&self, rng: &mut ChaCha8Rng, length: u32, validity: Validity) -> Result<HashChain, ChainError> {
        generate_chain(rng.random(), length, length.max(1), validity)
    }

    /// Transmitter attaching the rogue anchor and certificate to every beacon.
    pub fn transmitter(&self, mut cfg: ApConfig, chain: HashChain) -> Result<Transmitter, TxError> {
        cfg.anchor_every = 1;
        cfg.cert_every = 1;
        Transmitter::new(cfg, chain, &self.signer, Some(self.certificate.clone()))
    }
}
