//! Mobile-client beacon verification.
//!
//! A beacon `n` is buffered only if it arrived safely before its MAC key
//! `h_{n+1}` is scheduled to be disclosed. When a later beacon discloses a key
//! that hashes down to the client's most recent trusted chain element, every
//! buffered beacon whose key is now known gets its MAC checked and, on
//! success, becomes an [`AuthenticatedObservation`].
//!
//! Only this module constructs authenticated observations; the detector
//! accepts nothing else.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::anchor::{verify_anchor, ApCertificate, SignedAnchor, TrustStore};
use crate::beacon::{verify_mac, BeaconFrame};
use crate::chain::{hash_element, Element};
use crate::cost::OpCounters;
use crate::ids::{ApId, ChainId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerifyStatus {
    Authenticated,
    PendingKey,
    RejectedMac,
    RejectedChain,
    RejectedSecurityCondition,
    RejectedReplay,
    RejectedSignature,
}

impl VerifyStatus {
    pub fn is_rejection(self) -> bool {
        !matches!(self, VerifyStatus::Authenticated | VerifyStatus::PendingKey)
    }
}

impl fmt::Display for VerifyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerifyStatus::Authenticated => "Authenticated",
            VerifyStatus::PendingKey => "PendingKey",
            VerifyStatus::RejectedMac => "RejectedMAC",
            VerifyStatus::RejectedChain => "RejectedChain",
            VerifyStatus::RejectedSecurityCondition => "RejectedSecurityCondition",
            VerifyStatus::RejectedReplay => "RejectedReplay",
            VerifyStatus::RejectedSignature => "RejectedSignature",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierConfig {
    /// Minimum lead of a beacon's arrival over the disclosure of its key.
    pub safety_margin_us: i64,
    pub tu_us: u32,
    /// Beacons awaiting key disclosure, per AP chain.
    pub max_pending: usize,
    /// Beacons held while no anchor is trusted yet, per AP chain.
    pub max_waiting_for_anchor: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            safety_margin_us: 10_000,
            tu_us: crate::transmitter::TU_US,
            max_pending: 4,
            max_waiting_for_anchor: 4096,
        }
    }
}

/// Receive-side metadata attached to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxInfo {
    /// Arrival time read from the client's local clock.
    pub local_time_us: i64,
    /// Opaque caller-side identifier carried through to the observation.
    pub event_id: u64,
}

/// Final decision on a beacon that had been buffered earlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub ap_id: ApId,
    pub index: u32,
    pub event_id: u64,
    pub status: VerifyStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    /// Status of the frame just received.
    pub status: VerifyStatus,
    /// Hashes spent walking this frame's disclosed key to a trusted element.
    pub hash_walk_k: u32,
    pub detail: String,
    /// Earlier frames settled by this reception (authenticated or rejected).
    pub resolved: Vec<Resolution>,
}

impl VerifyOutcome {
    fn new(status: VerifyStatus, detail: impl Into<String>) -> Self {
        VerifyOutcome {
            status,
            hash_walk_k: 0,
            detail: detail.into(),
            resolved: Vec::new(),
        }
    }
}

/// A beacon timestamp that passed MAC, chain and security-condition checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatedObservation {
    ap_id: ApId,
    chain_id: ChainId,
    index: u32,
    timestamp_us: u64,
    rx_local_us: i64,
    event_id: u64,
}

impl AuthenticatedObservation {
    pub(crate) fn new(
        ap_id: ApId,
        chain_id: ChainId,
        index: u32,
        timestamp_us: u64,
        rx_local_us: i64,
        event_id: u64,
    ) -> Self {
        AuthenticatedObservation {
            ap_id,
            chain_id,
            index,
            timestamp_us,
            rx_local_us,
            event_id,
        }
    }

    pub fn ap_id(&self) -> ApId {
        self.ap_id
    }
    pub fn chain_id(&self) -> ChainId {
        self.chain_id
    }
    pub fn index(&self) -> u32 {
        self.index
    }
    pub fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }
    pub fn rx_local_us(&self) -> i64 {
        self.rx_local_us
    }
    pub fn event_id(&self) -> u64 {
        self.event_id
    }
}

#[derive(Debug, Clone)]
struct Buffered {
    frame: BeaconFrame,
    rx: RxInfo,
}

#[derive(Debug, Default)]
struct ApTrust {
    anchor: Option<SignedAnchor>,
    /// Highest chain element verified so far, `(index, h_index)`.
    latest: Option<(u32, Element)>,
    highest_authenticated: Option<u32>,
    pending: VecDeque<Buffered>,
    waiting: Vec<Buffered>,
}

/// Per-client verification state across all APs.
#[derive(Debug)]
pub struct Verifier {
    cfg: VerifierConfig,
    trust: TrustStore,
    certs: BTreeMap<ApId, ApCertificate>,
    aps: BTreeMap<(ApId, ChainId), ApTrust>,
    counters: OpCounters,
    time_offset_us: i64,
    observations: Vec<AuthenticatedObservation>,
}

impl Verifier {
    pub fn new(cfg: VerifierConfig, trust: TrustStore) -> Self {
        Verifier {
            cfg,
            trust,
            certs: BTreeMap::new(),
            aps: BTreeMap::new(),
            counters: OpCounters::default(),
            time_offset_us: 0,
            observations: Vec::new(),
        }
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.cfg
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    pub fn observations(&self) -> &[AuthenticatedObservation] {
        &self.observations
    }

    pub fn take_observations(&mut self) -> Vec<AuthenticatedObservation> {
        std::mem::take(&mut self.observations)
    }

    /// Offset (reference time minus local clock) from the time-server feed.
    pub fn set_time_offset(&mut self, offset_us: i64) {
        self.time_offset_us = offset_us;
    }

    pub fn time_offset(&self) -> i64 {
        self.time_offset_us
    }

    pub fn highest_authenticated(&self, ap: ApId, chain: ChainId) -> Option<u32> {
        self.aps.get(&(ap, chain)).and_then(|t| t.highest_authenticated)
    }

    pub fn best_anchor_index(&self, ap: ApId, chain: ChainId) -> Option<u32> {
        self.aps.get(&(ap, chain)).and_then(|t| t.anchor.as_ref().map(|a| a.index))
    }

    pub fn pending_len(&self, ap: ApId, chain: ChainId) -> usize {
        self.aps.get(&(ap, chain)).map_or(0, |t| t.pending.len() + t.waiting.len())
    }

    /// Installs an AP certificate obtained out of band (counts one certificate check).
    pub fn install_certificate(&mut self, cert: ApCertificate) -> bool {
        self.counters.cert_verifies += 1;
        if !self.trust.verify_certificate(&cert) {
            return false;
        }
        self.certs.insert(cert.ap_id, cert);
        true
    }

    /// Installs an anchor obtained out of band (e.g. from the Internet).
    pub fn install_anchor(&mut self, anchor: SignedAnchor, now_local_us: i64) -> VerifyOutcome {
        let mut resolved = Vec::new();
        let status = self.consider_anchor(anchor, now_local_us, &mut resolved);
        let mut out = match status {
            Ok(()) => VerifyOutcome::new(VerifyStatus::Authenticated, "anchor installed"),
            Err((s, why)) => VerifyOutcome::new(s, why),
        };
        out.resolved = resolved;
        out
    }

    fn now(&self, local_us: i64) -> i64 {
        local_us + self.time_offset_us
    }

    fn interval_us(&self, frame: &BeaconFrame) -> i64 {
        i64::from(frame.beacon_interval_tu) * i64::from(self.cfg.tu_us)
    }

    /// Verifies a certificate blob unless the identical certificate is already trusted.
    fn consider_cert(&mut self, frame: &BeaconFrame, blob: &[u8]) -> Result<(), (VerifyStatus, String)> {
        let cert = ApCertificate::decode(blob)
            .map_err(|e| (VerifyStatus::RejectedSignature, format!("malformed certificate: {e}")))?;
        if cert.ap_id != frame.ap_id {
            return Err((VerifyStatus::RejectedSignature, "certificate names another AP".into()));
        }
        if self.certs.get(&cert.ap_id) == Some(&cert) {
            return Ok(());
        }
        self.counters.cert_verifies += 1;
        if !self.trust.verify_certificate(&cert) {
            return Err((VerifyStatus::RejectedSignature, "certificate does not chain to a root".into()));
        }
        self.certs.insert(cert.ap_id, cert);
        Ok(())
    }

    /// Verifies and adopts `anchor` if it is newer than the best one held.
    fn consider_anchor(
        &mut self,
        anchor: SignedAnchor,
        now_local_us: i64,
        resolved: &mut Vec<Resolution>,
    ) -> Result<(), (VerifyStatus, String)> {
        let key = (anchor.signer_id, anchor.chain_id);
        if let Some(best) = self.aps.get(&key).and_then(|t| t.anchor.as_ref()) {
            if best.index >= anchor.index {
                return Ok(());
            }
        }
        let Some(cert) = self.certs.get(&anchor.signer_id) else {
            return Err((VerifyStatus::RejectedSignature, "no certificate for anchor signer".into()));
        };
        self.counters.sig_verifies += 1;
        if !verify_anchor(&anchor, cert, &self.trust) {
            return Err((VerifyStatus::RejectedSignature, "anchor signature invalid".into()));
        }
        if !anchor.validity.contains(self.now(now_local_us)) {
            return Err((VerifyStatus::RejectedSignature, "anchor outside its validity period".into()));
        }

        let entry = self.aps.entry(key).or_default();
        let had_anchor = entry.anchor.is_some();
        let (a_idx, a_val) = (anchor.index, anchor.value);
        entry.anchor = Some(anchor);
        let advanced = entry.latest.is_none_or(|(j, _)| j < a_idx);
        if advanced {
            entry.latest = Some((a_idx, a_val));
        }
        let mut waiting = if had_anchor { Vec::new() } else { std::mem::take(&mut entry.waiting) };
        waiting.sort_by_key(|b| b.frame.index);
        let later = waiting.split_off(waiting.partition_point(|b| b.frame.index < a_idx));

        // Held before the anchor arrived and keyed at or below it.
        let mut seen = std::collections::BTreeSet::new();
        for b in waiting {
            let status = if !seen.insert(b.frame.index) {
                Some(VerifyStatus::RejectedReplay)
            } else {
                self.security_check(key, &b.frame, b.rx).err().map(|(s, _)| s)
            };
            match status {
                Some(status) => resolved.push(Resolution {
                    ap_id: key.0,
                    index: b.frame.index,
                    event_id: b.rx.event_id,
                    status,
                }),
                None => self.aps.get_mut(&key).unwrap().pending.push_back(b),
            }
        }
        if advanced {
            self.release_below_anchor(key, a_idx, a_val, resolved);
        }
        for b in later {
            let out = self.process_trusted(key, &b.frame, b.rx);
            resolved.extend(out.resolved);
            if out.status != VerifyStatus::PendingKey {
                resolved.push(Resolution {
                    ap_id: key.0,
                    index: b.frame.index,
                    event_id: b.rx.event_id,
                    status: out.status,
                });
            }
        }
        Ok(())
    }

    /// Settles buffered beacons `p` with `p + 1 <= a_idx`, deriving their keys
    /// from the anchor value by hashing downwards.
    fn release_below_anchor(
        &mut self,
        key: (ApId, ChainId),
        a_idx: u32,
        a_val: Element,
        resolved: &mut Vec<Resolution>,
    ) {
        let entry = self.aps.get_mut(&key).unwrap();
        let mut ready: Vec<Buffered> = Vec::new();
        entry.pending.retain(|b| {
            if b.frame.index < a_idx {
                ready.push(b.clone());
                false
            } else {
                true
            }
        });
        if ready.is_empty() {
            return;
        }
        let lowest = ready.iter().map(|b| b.frame.index).min().unwrap();
        let mut keys = BTreeMap::new();
        let mut cur = a_val;
        keys.insert(a_idx, cur);
        for idx in (lowest + 1..a_idx).rev() {
            cur = hash_element(&cur);
            self.counters.hashes += 1;
            keys.insert(idx, cur);
        }
        ready.sort_by_key(|b| b.frame.index);
        for b in ready {
            let k = keys[&(b.frame.index + 1)];
            let status = self.check_mac_and_record(key, &b, &k);
            resolved.push(Resolution {
                ap_id: key.0,
                index: b.frame.index,
                event_id: b.rx.event_id,
                status,
            });
        }
    }

    fn check_mac_and_record(&mut self, key: (ApId, ChainId), b: &Buffered, mac_key: &Element) -> VerifyStatus {
        self.counters.hmacs += 1;
        if !verify_mac(mac_key, &b.frame) {
            return VerifyStatus::RejectedMac;
        }
        let entry = self.aps.get_mut(&key).unwrap();
        if entry.highest_authenticated.is_some_and(|h| h >= b.frame.index) {
            return VerifyStatus::RejectedReplay;
        }
        entry.highest_authenticated = Some(b.frame.index);
        self.observations.push(AuthenticatedObservation::new(
            b.frame.ap_id,
            b.frame.chain_id,
            b.frame.index,
            b.frame.timestamp_us,
            b.rx.local_time_us,
            b.rx.event_id,
        ));
        VerifyStatus::Authenticated
    }

    /// Processes one received beacon.
    pub fn on_receive(&mut self, frame: &BeaconFrame, rx: RxInfo) -> VerifyOutcome {
        let mut resolved = Vec::new();

        if let Some(blob) = &frame.cert_blob {
            if let Err((s, why)) = self.consider_cert(frame, blob) {
                return VerifyOutcome::new(s, why);
            }
        }
        if let Some(blob) = &frame.anchor_blob {
            let anchor = match SignedAnchor::decode(blob) {
                Ok(a) => a,
                Err(e) => {
                    return VerifyOutcome::new(VerifyStatus::RejectedSignature, format!("malformed anchor: {e}"))
                }
            };
            if anchor.chain_id != frame.chain_id || anchor.signer_id != frame.ap_id {
                return VerifyOutcome::new(VerifyStatus::RejectedSignature, "anchor belongs to another chain");
            }
            if let Err((s, why)) = self.consider_anchor(anchor, rx.local_time_us, &mut resolved) {
                let mut out = VerifyOutcome::new(s, why);
                out.resolved = resolved;
                return out;
            }
        }

        if frame.index == 0 {
            let mut out = VerifyOutcome::new(VerifyStatus::RejectedChain, "index 0 is never a beacon key");
            out.resolved = resolved;
            return out;
        }

        let key = (frame.ap_id, frame.chain_id);
        let entry = self.aps.entry(key).or_default();
        if entry.anchor.is_none() {
            if entry.waiting.len() >= self.cfg.max_waiting_for_anchor {
                let dropped = entry.waiting.remove(0);
                resolved.push(Resolution {
                    ap_id: key.0,
                    index: dropped.frame.index,
                    event_id: dropped.rx.event_id,
                    status: VerifyStatus::RejectedSecurityCondition,
                });
            }
            entry.waiting.push(Buffered {
                frame: frame.clone(),
                rx,
            });
            let mut out = VerifyOutcome::new(VerifyStatus::PendingKey, "awaiting a trusted anchor");
            out.resolved = resolved;
            return out;
        }

        let mut out = self.process_trusted(key, frame, rx);
        resolved.append(&mut out.resolved);
        out.resolved = resolved;
        out
    }

    /// TESLA security condition plus chain validity for frame `n`.
    fn security_check(&self, key: (ApId, ChainId), frame: &BeaconFrame, rx: RxInfo) -> Result<(), (VerifyStatus, String)> {
        let n = frame.index;
        let now = self.now(rx.local_time_us);
        let interval = self.interval_us(frame);
        let margin = self.cfg.safety_margin_us;
        let validity = self.aps[&key].anchor.as_ref().expect("anchor trusted").validity;
        let disclosure = validity.start_us as i64 + (i64::from(n) + 1) * interval;
        if now > disclosure - margin {
            return Err((
                VerifyStatus::RejectedSecurityCondition,
                format!("arrived {} us before key disclosure (margin {margin})", disclosure - now),
            ));
        }
        if !validity.contains(now) {
            return Err((VerifyStatus::RejectedChain, "outside chain validity".into()));
        }
        let max_index = if interval > 0 {
            ((validity.end_us - validity.start_us) as i64 / interval) as u64
        } else {
            0
        };
        if u64::from(n) > max_index {
            return Err((VerifyStatus::RejectedChain, "index beyond chain validity".into()));
        }
        Ok(())
    }

    /// Pipeline for a chain whose anchor is trusted.
    fn process_trusted(&mut self, key: (ApId, ChainId), frame: &BeaconFrame, rx: RxInfo) -> VerifyOutcome {
        let n = frame.index;
        let max_pending = self.cfg.max_pending;
        let entry = self.aps.get_mut(&key).expect("trusted entry exists");
        let (j, hj) = entry.latest.expect("anchor implies a latest element");

        if entry.highest_authenticated.is_some_and(|h| n <= h) {
            return VerifyOutcome::new(VerifyStatus::RejectedReplay, "index already authenticated");
        }
        if entry.pending.iter().any(|b| b.frame.index == n) {
            return VerifyOutcome::new(VerifyStatus::RejectedReplay, "index already buffered");
        }
        if u64::from(j) > u64::from(n) {
            return VerifyOutcome::new(VerifyStatus::RejectedReplay, "key for this index already disclosed");
        }

        if let Err((status, detail)) = self.security_check(key, frame, rx) {
            return VerifyOutcome::new(status, detail);
        }

        // Walk h_n down to h_j, keeping the intermediate elements as keys.
        let k = n - j;
        let mut keys = Vec::with_capacity(k as usize + 1);
        let mut cur = frame.disclosed_key;
        keys.push(cur);
        for _ in 0..k {
            cur = hash_element(&cur);
            keys.push(cur);
        }
        self.counters.hashes += u64::from(k);
        // keys[i] = claimed h_{n - i}
        if keys[k as usize] != hj {
            let mut out = VerifyOutcome::new(VerifyStatus::RejectedChain, "disclosed key not on trusted chain");
            out.hash_walk_k = k;
            return out;
        }

        let entry = self.aps.get_mut(&key).unwrap();
        entry.latest = Some((n, frame.disclosed_key));
        let mut ready = Vec::new();
        entry.pending.retain(|b| {
            if b.frame.index < n {
                ready.push(b.clone());
                false
            } else {
                true
            }
        });

        let mut out = VerifyOutcome::new(VerifyStatus::PendingKey, "buffered until key disclosure");
        out.hash_walk_k = k;
        for b in ready {
            let mac_key = keys[(n - (b.frame.index + 1)) as usize];
            let status = self.check_mac_and_record(key, &b, &mac_key);
            out.resolved.push(Resolution {
                ap_id: key.0,
                index: b.frame.index,
                event_id: b.rx.event_id,
                status,
            });
        }

        let entry = self.aps.get_mut(&key).unwrap();
        entry.pending.push_back(Buffered {
            frame: frame.clone(),
            rx,
        });
        while entry.pending.len() > max_pending {
            let dropped = entry.pending.pop_front().unwrap();
            out.resolved.push(Resolution {
                ap_id: key.0,
                index: dropped.frame.index,
                event_id: dropped.rx.event_id,
                status: VerifyStatus::RejectedSecurityCondition,
            });
        }
        out
    }
}

/// Control client without authentication: every decodable beacon is trusted.
#[derive(Debug, Default)]
pub struct LegacyReceiver {
    accepted: Vec<(BeaconFrame, RxInfo)>,
}

impl LegacyReceiver {
    pub fn new() -> Self {
        LegacyReceiver::default()
    }

    pub fn on_receive(&mut self, frame: &BeaconFrame, rx: RxInfo) -> VerifyStatus {
        self.accepted.push((frame.clone(), rx));
        VerifyStatus::Authenticated
    }

    pub fn accepted(&self) -> &[(BeaconFrame, RxInfo)] {
        &self.accepted
    }
}
