//! Simulated access point: beacons at nominal TBTTs with CSMA deferral and
//! TSF timestamp error.
//!
//! All signatures are produced in [`Transmitter::new`]; emitting beacons only
//! computes HMACs over data that was prepared up front.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{sign_anchor, ApCertificate, SignedAnchor, Signer};
use crate::beacon::{build_beacon, Attachments, BeaconError, BeaconFrame};
use crate::chain::{ChainError, HashChain};
use crate::ids::ApId;

/// 802.11 time unit.
pub const TU_US: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TsfModel {
    /// Independent uniform error per beacon, bounded by `tsf_ppm` of one interval.
    #[default]
    Uniform,
    /// Constant rate error accumulating since the chain's validity start.
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApConfig {
    pub ap_id: ApId,
    pub tbtt_tu: u16,
    pub tu_us: u32,
    pub tsf_ppm: f64,
    pub tsf_model: TsfModel,
    pub csma_defer_prob: f64,
    pub csma_defer_max_us: u32,
    /// Attach the current signed anchor to every beacon whose index is a
    /// multiple of this (0 disables).
    pub anchor_every: u32,
    /// Attach the AP certificate to every beacon whose index is a multiple of
    /// this (0 disables).
    pub cert_every: u32,
    pub rng_seed: u64,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            ap_id: ApId([0x02, 0, 0, 0, 0, 0x01]),
            tbtt_tu: 100,
            tu_us: TU_US,
            tsf_ppm: 100.0,
            tsf_model: TsfModel::Uniform,
            csma_defer_prob: 0.05,
            csma_defer_max_us: 2_000,
            anchor_every: 600,
            cert_every: 0,
            rng_seed: 0,
        }
    }
}

impl ApConfig {
    pub fn interval_us(&self) -> i64 {
        i64::from(self.tbtt_tu) * i64::from(self.tu_us)
    }

    /// Largest TSF error for one interval, `tsf_ppm * 1e-6 * interval`.
    pub fn tsf_bound_us(&self) -> f64 {
        self.tsf_ppm * 1e-6 * self.interval_us() as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tbtt_tu == 0 {
            return Err("tbtt_tu must be >= 1".into());
        }
        if self.tu_us == 0 {
            return Err("tu_us must be >= 1".into());
        }
        if !(self.tsf_ppm >= 0.0) {
            return Err("tsf_ppm must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.csma_defer_prob) {
            return Err("csma_defer_prob must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("chain exhausted: requested beacon {requested}, last transmittable is {last}")]
    ChainExhausted { requested: u64, last: u32 },
    #[error("invalid AP configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Beacon(#[from] BeaconError),
}

/// `n * tbtt_tu * tu_us`, relative to the chain's validity start.
pub fn nominal_tbtt(n: u32, cfg: &ApConfig) -> i64 {
    i64::from(n) * cfg.interval_us()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub n: u32,
    pub scheduled_us: i64,
    pub actual_tx_us: i64,
    pub frame: BeaconFrame,
}

pub struct Transmitter {
    cfg: ApConfig,
    chain: HashChain,
    anchors: BTreeMap<u32, SignedAnchor>,
    cert: Option<ApCertificate>,
}

impl Transmitter {
    /// Signs every anchor point of `chain` up front.
    pub fn new(
        cfg: ApConfig,
        chain: HashChain,
        signer: &dyn Signer,
        cert: Option<ApCertificate>,
    ) -> Result<Self, TxError> {
        cfg.validate().map_err(TxError::Config)?;
        let mut anchors = BTreeMap::new();
        let period = chain.anchor_period();
        let mut idx = 0u32;
        loop {
            anchors.insert(idx, sign_anchor(&chain, idx, cfg.ap_id, signer)?);
            match idx.checked_add(period) {
                Some(next) if next <= chain.length() => idx = next,
                _ => break,
            }
        }
        Ok(Transmitter {
            cfg,
            chain,
            anchors,
            cert,
        })
    }

    pub fn config(&self) -> &ApConfig {
        &self.cfg
    }

    pub fn chain(&self) -> &HashChain {
        &self.chain
    }

    pub fn certificate(&self) -> Option<&ApCertificate> {
        self.cert.as_ref()
    }

    /// The signed anchor at exactly `index`, if it is an anchor point.
    pub fn anchor(&self, index: u32) -> Option<&SignedAnchor> {
        self.anchors.get(&index)
    }

    /// Latest signed anchor at or below `index` (what an AP would hand out
    /// over the Internet to a client joining at `index`).
    pub fn latest_anchor(&self, index: u32) -> &SignedAnchor {
        self.anchors
            .range(..=index)
            .next_back()
            .map(|(_, a)| a)
            .expect("anchor 0 always exists")
    }

    pub fn last_transmittable(&self) -> u32 {
        self.chain.length() - 1
    }

    /// Beacons `1..=count`.
    pub fn emit_schedule(&self, count: u32) -> Result<Vec<Emission>, TxError> {
        self.emit_range(1, count)
    }

    /// Beacons `first..first + count`.
    pub fn emit_range(&self, first: u32, count: u32) -> Result<Vec<Emission>, TxError> {
        let last_requested = u64::from(first) + u64::from(count) - 1;
        if count > 0 && (first == 0 || last_requested > u64::from(self.last_transmittable())) {
            return Err(TxError::ChainExhausted {
                requested: last_requested.max(u64::from(first)),
                last: self.last_transmittable(),
            });
        }
        (first..first + count).map(|n| self.emit_one(n)).collect()
    }

    fn emit_one(&self, n: u32) -> Result<Emission, TxError> {
        let cfg = &self.cfg;
        let start = self.chain.validity().start_us as i64;
        let scheduled_us = start + nominal_tbtt(n, cfg);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ u64::from(n).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let deferral = if cfg.csma_defer_prob > 0.0 && rng.random_bool(cfg.csma_defer_prob) {
            rng.random_range(0..=cfg.csma_defer_max_us) as i64
        } else {
            0
        };
        let actual_tx_us = scheduled_us + deferral;

        let tsf_error = match cfg.tsf_model {
            TsfModel::Uniform => {
                let bound = cfg.tsf_bound_us();
                if bound > 0.0 {
                    rng.random_range(-bound..=bound)
                } else {
                    0.0
                }
            }
            TsfModel::Drift => cfg.tsf_ppm * 1e-6 * (actual_tx_us - start) as f64,
        };
        let timestamp_us = (actual_tx_us as f64 + tsf_error).round().max(0.0) as u64;

        let mut att = Attachments::none();
        if cfg.anchor_every > 0 && n.is_multiple_of(cfg.anchor_every) {
            att = att.with_anchor(self.latest_anchor(n));
        }
        if let Some(cert) = &self.cert {
            if cfg.cert_every > 0 && n.is_multiple_of(cfg.cert_every) {
                att = att.with_cert(cert);
            }
        }
        let frame = build_beacon(&self.chain, n, timestamp_us, cfg.ap_id, cfg.tbtt_tu, &att)?;
        Ok(Emission {
            n,
            scheduled_us,
            actual_tx_us,
            frame,
        })
    }
}
