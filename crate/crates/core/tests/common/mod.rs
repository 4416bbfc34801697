//! Brute-force reference model of beacon verification.
//!
//! Everything here is recomputed from first principles (raw SHA-256, HMAC over
//! hand-assembled bytes, Ed25519 over hand-assembled anchor bytes) and only
//! the public data types of the crate are shared.

#![allow(dead_code)]

use std::collections::BTreeMap;

use beacontime::anchor::sign_anchor;
use beacontime::verifier::RxInfo;
use beacontime::{
    generate_chain, ApCertificate, ApId, BeaconFrame, ChainId, Ed25519Signer, Signer, SignedAnchor,
    TrustStore, Validity, Verifier, VerifierConfig, VerifyStatus,
};
use ed25519_dalek::{Signature, VerifyingKey};
use hmac::{Hmac, Mac};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const TU: i64 = 1024;
pub const MARGIN: i64 = 10_000;
pub const AP: ApId = ApId([0x02, 0xaa, 0, 0, 0, 0x07]);

pub fn sha(x: &[u8; 32]) -> [u8; 32] {
    Sha256::digest(x).into()
}

/// `truth[i] = h_i`, with `truth[n] = seed`.
pub fn truth_chain(seed: [u8; 32], n: usize) -> Vec<[u8; 32]> {
    let mut t = vec![[0u8; 32]; n + 1];
    t[n] = seed;
    for i in (0..n).rev() {
        t[i] = sha(&t[i + 1]);
    }
    t
}

pub fn chain_id_of(h0: &[u8; 32], start: u64, end: u64) -> ChainId {
    let mut h = Sha256::new();
    h.update(b"beacontime/chain-id");
    h.update(h0);
    h.update(start.to_be_bytes());
    h.update(end.to_be_bytes());
    let d = h.finalize();
    ChainId(d[..16].try_into().unwrap())
}

pub fn mac_input(f: &BeaconFrame) -> Vec<u8> {
    let mut m = Vec::new();
    m.extend_from_slice(&f.timestamp_us.to_be_bytes());
    m.extend_from_slice(&f.beacon_interval_tu.to_be_bytes());
    m.extend_from_slice(&f.ap_id.0);
    m.extend_from_slice(&f.chain_id.0);
    m.extend_from_slice(&f.index.to_be_bytes());
    m
}

pub fn hmac(key: &[u8; 32], msg: &[u8]) -> [u8; 32] {
    let mut m = Hmac::<Sha256>::new_from_slice(key).unwrap();
    m.update(msg);
    m.finalize().into_bytes().into()
}

pub fn anchor_ok(a: &SignedAnchor, ap_public: &[u8]) -> bool {
    let mut msg = Vec::new();
    msg.extend_from_slice(&a.chain_id.0);
    msg.extend_from_slice(&a.index.to_be_bytes());
    msg.extend_from_slice(&a.value);
    msg.extend_from_slice(&a.validity.start_us.to_be_bytes());
    msg.extend_from_slice(&a.validity.end_us.to_be_bytes());
    let Ok(pk) = <[u8; 32]>::try_from(ap_public) else { return false };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else { return false };
    let Ok(sig) = Signature::from_slice(&a.signature) else { return false };
    vk.verify_strict(&msg, &sig).is_ok()
}

/// Reference state for one chain.
pub struct Oracle {
    truth: Vec<[u8; 32]>,
    vstart: i64,
    vend: i64,
    offset: i64,
    trusted: bool,
    latest: u32,
    highest: Option<u32>,
    pending: Vec<(BeaconFrame, i64)>,
    waiting: usize,
    pub hashes: u64,
    pub hmacs: u64,
    pub authenticated: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub status: VerifyStatus,
    pub k: u32,
    pub resolved: Vec<(u32, VerifyStatus)>,
}

impl Oracle {
    pub fn new(truth: Vec<[u8; 32]>, vstart: i64, vend: i64, offset: i64) -> Self {
        Oracle {
            truth,
            vstart,
            vend,
            offset,
            trusted: false,
            latest: 0,
            highest: None,
            pending: Vec::new(),
            waiting: 0,
            hashes: 0,
            hmacs: 0,
            authenticated: Vec::new(),
        }
    }

    pub fn install(&mut self, a: &SignedAnchor, ap_public: &[u8], local: i64) -> bool {
        let now = local + self.offset;
        let ok = anchor_ok(a, ap_public) && now >= a.validity.start_us as i64 && now <= a.validity.end_us as i64;
        if ok {
            self.trusted = true;
            self.latest = a.index;
        }
        ok
    }

    fn key(&self, i: u32) -> Option<[u8; 32]> {
        self.truth.get(i as usize).copied()
    }

    pub fn receive(&mut self, f: &BeaconFrame, local: i64) -> Step {
        let plain = |status| Step { status, k: 0, resolved: vec![] };
        let n = f.index;
        if n == 0 {
            return plain(VerifyStatus::RejectedChain);
        }
        if !self.trusted {
            self.waiting += 1;
            return plain(VerifyStatus::PendingKey);
        }
        if self.highest.is_some_and(|h| n <= h)
            || self.pending.iter().any(|(p, _)| p.index == n)
            || self.latest > n
        {
            return plain(VerifyStatus::RejectedReplay);
        }
        let now = local + self.offset;
        let interval = i64::from(f.beacon_interval_tu) * TU;
        if now > self.vstart + (i64::from(n) + 1) * interval - MARGIN {
            return plain(VerifyStatus::RejectedSecurityCondition);
        }
        if now < self.vstart || now > self.vend {
            return plain(VerifyStatus::RejectedChain);
        }
        if interval == 0 || i64::from(n) > (self.vend - self.vstart) / interval {
            return plain(VerifyStatus::RejectedChain);
        }
        let k = n - self.latest;
        self.hashes += u64::from(k);
        if self.key(n) != Some(f.disclosed_key) {
            return Step { status: VerifyStatus::RejectedChain, k, resolved: vec![] };
        }
        self.latest = n;
        let mut resolved = Vec::new();
        let ready: Vec<_> = std::mem::take(&mut self.pending);
        for (p, _) in ready {
            self.hmacs += 1;
            let ok = self.key(p.index + 1).is_some_and(|key| hmac(&key, &mac_input(&p)) == p.mac);
            let status = if ok {
                self.highest = Some(p.index);
                self.authenticated.push(p.index);
                VerifyStatus::Authenticated
            } else {
                VerifyStatus::RejectedMac
            };
            resolved.push((p.index, status));
        }
        self.pending.push((f.clone(), local));
        Step { status: VerifyStatus::PendingKey, k, resolved }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len() + self.waiting
    }
}

/// Shared PKI for all cases: signing keys are fixed, chains are random.
pub struct Pki {
    pub ap_signer: Ed25519Signer,
    pub cert: ApCertificate,
    pub trust: TrustStore,
}

impl Pki {
    pub fn new() -> Self {
        let root = Ed25519Signer::from_secret([0x51; 32]);
        let ap_signer = Ed25519Signer::from_secret([0x52; 32]);
        let cert = ApCertificate::issue(AP, ap_signer.public_key(), "oracle-root", &root);
        let mut trust = TrustStore::default();
        trust.add_root("oracle-root", root.public_key());
        Pki { ap_signer, cert, trust }
    }
}

#[derive(Debug, Default, Clone)]
pub struct CaseStats {
    pub frames: usize,
    pub authenticated: usize,
    pub rejected: usize,
    pub hashes: u64,
}

fn honest_frame(truth: &[[u8; 32]], cid: ChainId, n: u32, interval_tu: u16) -> BeaconFrame {
    let mut f = BeaconFrame {
        timestamp_us: (i64::from(n) * i64::from(interval_tu) * TU) as u64 + 7,
        beacon_interval_tu: interval_tu,
        ap_id: AP,
        chain_id: cid,
        index: n,
        mac: [0; 32],
        disclosed_key: truth[n as usize],
        anchor_blob: None,
        cert_blob: None,
        trailing: Vec::new(),
    };
    f.mac = hmac(&truth[n as usize + 1], &mac_input(&f));
    f
}

/// Runs one randomized case through both the crate verifier and the oracle.
/// Returns an error describing the first disagreement.
pub fn run_case(pki: &Pki, seed: u64) -> Result<CaseStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_len: u32 = rng.random_range(4..=64);
    let period: u32 = rng.random_range(1..=n_len);
    let interval_tu: u16 = 100;
    let interval = i64::from(interval_tu) * TU;
    let vstart: u64 = 0;
    let vend: u64 = ((i64::from(n_len) + 1) * interval) as u64;
    let seed_elem: [u8; 32] = rng.random();

    let truth = truth_chain(seed_elem, n_len as usize);
    let chain = generate_chain(seed_elem, n_len, period, Validity::new(vstart, vend)).map_err(|e| e.to_string())?;
    for i in 0..=n_len {
        if chain.element(i) != Some(truth[i as usize]) {
            return Err(format!("chain element {i} differs"));
        }
    }
    let cid = chain_id_of(&truth[0], vstart, vend);
    if chain.chain_id() != cid {
        return Err("chain id differs".into());
    }

    let anchors: Vec<u32> = (0..n_len).filter(|i| i % period == 0).collect();
    let a_idx = anchors[rng.random_range(0..anchors.len())];
    let mut anchor = sign_anchor(&chain, a_idx, AP, &pki.ap_signer).map_err(|e| e.to_string())?;
    let roll: f64 = rng.random();
    if roll < 0.05 {
        anchor.value[rng.random_range(0..32)] ^= 1 << rng.random_range(0..8);
    } else if roll < 0.08 {
        let at = rng.random_range(0..anchor.signature.len());
        anchor.signature[at] ^= 0x40;
    } else if roll < 0.10 {
        anchor.index = (anchor.index + 1).min(n_len - 1);
    }

    let offset: i64 = rng.random_range(-5_000..=5_000);
    let mut v = Verifier::new(VerifierConfig::default(), pki.trust.clone());
    v.set_time_offset(offset);
    if !v.install_certificate(pki.cert.clone()) {
        return Err("certificate rejected".into());
    }
    let mut o = Oracle::new(truth.clone(), vstart as i64, vend as i64, offset);
    let install_local = if rng.random_bool(0.03) { vend as i64 + 1_000_000 } else { 0 } - offset;
    let got = v.install_anchor(anchor.clone(), install_local).status == VerifyStatus::Authenticated;
    let want = o.install(&anchor, &pki.ap_signer.public_key(), install_local);
    if got != want {
        return Err(format!("anchor install: verifier {got}, oracle {want}"));
    }

    let mut stats = CaseStats::default();
    let mut sent: Vec<(BeaconFrame, i64)> = Vec::new();
    let mut cursor = a_idx.max(1) + rng.random_range(0..3);
    let steps = rng.random_range(1..=(2 * n_len as usize));
    for step in 0..steps {
        let action: u32 = rng.random_range(0..100);
        let (frame, true_rx) = if action < 8 && !sent.is_empty() {
            let (f, rx) = sent[rng.random_range(0..sent.len())].clone();
            let rx = if rng.random_bool(0.5) { rx } else { rx + rng.random_range(0..3 * interval) };
            (f, rx)
        } else if action < 14 {
            let mut f = honest_frame(&truth, cid, 1, interval_tu);
            f.index = rng.random_range(0..n_len + 3);
            f.disclosed_key = rng.random();
            f.mac = rng.random();
            let rx = i64::from(f.index) * interval + rng.random_range(0..2_000);
            (f, rx)
        } else {
            if cursor >= n_len {
                break;
            }
            if action < 24 {
                cursor = (cursor + rng.random_range(1..4)).min(n_len - 1);
            }
            let n = cursor;
            cursor += 1;
            let mut f = honest_frame(&truth, cid, n, interval_tu);
            let mut rx = i64::from(n) * interval + rng.random_range(0..2_500);
            match action {
                24..=31 => rx = (i64::from(n) + 1) * interval - MARGIN + rng.random_range(-3_000..=3_000),
                32..=36 => f.timestamp_us += rng.random_range(1..1_000),
                37..=41 => f.disclosed_key[rng.random_range(0..32)] ^= 0x01,
                42..=45 => f.index += rng.random_range(1..3),
                46..=50 => f.mac[rng.random_range(0..32)] ^= 0x80,
                51..=52 => f.beacon_interval_tu = 50,
                53..=54 => f.chain_id.0[0] ^= 0xff,
                _ => {}
            }
            (f, rx)
        };
        let local = true_rx - offset;
        sent.push((frame.clone(), true_rx));
        stats.frames += 1;

        let out = v.on_receive(&frame, RxInfo { local_time_us: local, event_id: step as u64 });
        let mut got_resolved: Vec<(u32, VerifyStatus)> = out.resolved.iter().map(|r| (r.index, r.status)).collect();
        got_resolved.sort();
        let got = Step { status: out.status, k: out.hash_walk_k, resolved: got_resolved };
        let want = if frame.chain_id == cid {
            o.receive(&frame, local)
        } else if frame.index == 0 {
            Step { status: VerifyStatus::RejectedChain, k: 0, resolved: vec![] }
        } else {
            Step { status: VerifyStatus::PendingKey, k: 0, resolved: vec![] }
        };
        if got != want {
            return Err(format!(
                "seed {seed} step {step} (N={n_len}, P={period}, anchor={a_idx}, frame n={}): verifier {got:?} ({}), oracle {want:?}",
                frame.index, out.detail
            ));
        }
        if got.status.is_rejection() {
            stats.rejected += 1;
        }
    }

    let c = v.counters();
    if c.hashes != o.hashes || c.hmacs != o.hmacs {
        return Err(format!(
            "seed {seed}: counters verifier hashes={} hmacs={}, oracle hashes={} hmacs={}",
            c.hashes, c.hmacs, o.hashes, o.hmacs
        ));
    }
    if v.pending_len(AP, cid) != o.pending_len() {
        return Err(format!("seed {seed}: pending {} vs {}", v.pending_len(AP, cid), o.pending_len()));
    }
    let obs: Vec<u32> = v.observations().iter().map(|x| x.index()).collect();
    if obs != o.authenticated {
        return Err(format!("seed {seed}: observations {obs:?} vs oracle {:?}", o.authenticated));
    }
    for x in v.observations() {
        let (f, _) = &sent[x.event_id() as usize];
        if f.index != x.index() || f.timestamp_us != x.timestamp_us() {
            return Err(format!("seed {seed}: observation does not match its frame"));
        }
        if hmac(&truth[f.index as usize + 1], &mac_input(f)) != f.mac {
            return Err(format!("seed {seed}: authenticated a frame with a bad MAC"));
        }
    }
    stats.authenticated = o.authenticated.len();
    stats.hashes = o.hashes;
    Ok(stats)
}

/// Honest consecutive reception from index `s` with `m` further beacons after an anchor at `a`.
/// Returns the verifier's total hash count.
pub fn honest_run_hashes(pki: &Pki, seed: [u8; 32], n_len: u32, a: u32, s: u32, m: u32) -> u64 {
    let interval = 100 * TU;
    let vend = ((i64::from(n_len) + 1) * interval) as u64;
    let chain = generate_chain(seed, n_len, 1, Validity::new(0, vend)).unwrap();
    let truth = truth_chain(seed, n_len as usize);
    let anchor = sign_anchor(&chain, a, AP, &pki.ap_signer).unwrap();
    let mut v = Verifier::new(VerifierConfig::default(), pki.trust.clone());
    v.install_certificate(pki.cert.clone());
    v.install_anchor(anchor, 0);
    let mut statuses = BTreeMap::new();
    for n in s..=s + m {
        let f = honest_frame(&truth, chain.chain_id(), n, 100);
        let out = v.on_receive(&f, RxInfo { local_time_us: i64::from(n) * interval + 300, event_id: 0 });
        statuses.insert(n, out.status);
    }
    assert!(statuses.values().all(|s| *s == VerifyStatus::PendingKey));
    assert_eq!(v.observations().len(), m as usize);
    v.counters().hashes
}

/// Arbitrary frame with blob sizes spread across the legal range and past it.
pub fn random_frame(rng: &mut impl Rng) -> BeaconFrame {
    let mut blob = |p: f64, max: usize| {
        rng.random_bool(p).then(|| {
            let len = rng.random_range(0..=max);
            (0..len).map(|_| rng.random()).collect::<Vec<u8>>()
        })
    };
    let anchor_blob = blob(0.4, 1_200);
    let cert_blob = blob(0.3, 1_200);
    let trailing = blob(0.3, 200).unwrap_or_default();
    BeaconFrame {
        timestamp_us: rng.random(),
        beacon_interval_tu: rng.random(),
        ap_id: ApId(rng.random()),
        chain_id: ChainId(rng.random()),
        index: rng.random(),
        mac: rng.random(),
        disclosed_key: rng.random(),
        anchor_blob,
        cert_blob,
        trailing,
    }
}
