//! Authenticated beacon frames and their binary layout.
//!
//! Each beacon `n` carries `MAC^n = HMAC-SHA256(h_{n+1}, covered fields)` and
//! discloses `h_n`, the key of the previous beacon. The payload stands in for
//! the vendor-specific information element of an 802.11 beacon:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ATB1"
//!      4     8  timestamp_us          (big-endian)
//!     12     2  beacon_interval_tu
//!     14     6  ap_id
//!     20    16  chain_id
//!     36     4  index n
//!     40    32  mac
//!     72    32  disclosed_key (h_n)
//!    104     1  flags: bit0 anchor present, bit1 cert present
//!    105     -  [anchor_len(2) anchor] [cert_len(2) cert] [opaque trailing tags]
//! ```

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::anchor::{ApCertificate, SignedAnchor};
use crate::chain::{Element, HashChain};
use crate::ids::{ApId, ChainId};
use crate::wire::{put_prefixed, DecodeError, Reader};

type HmacSha256 = Hmac<Sha256>;

pub const MAGIC: [u8; 4] = *b"ATB1";
/// Largest frame body an 802.11 management frame may carry.
pub const MAX_FRAME_LEN: usize = 2320;
/// Size of the fixed part of the layout.
pub const FIXED_LEN: usize = 105;

const FLAG_ANCHOR: u8 = 0x01;
const FLAG_CERT: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BeaconError {
    #[error("beacon index {index} outside transmittable range [1, {max}]")]
    IndexOutOfChain { index: u32, max: u32 },
    #[error("serialized frame would be {len} octets (limit {MAX_FRAME_LEN})")]
    OversizeFrame { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconFrame {
    pub timestamp_us: u64,
    pub beacon_interval_tu: u16,
    pub ap_id: ApId,
    pub chain_id: ChainId,
    pub index: u32,
    pub mac: [u8; 32],
    pub disclosed_key: Element,
    pub anchor_blob: Option<Vec<u8>>,
    pub cert_blob: Option<Vec<u8>>,
    /// Unknown vendor tags following the known fields, preserved verbatim.
    pub trailing: Vec<u8>,
}

/// Optional credential blobs piggybacked on a beacon.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Attachments {
    pub anchor: Option<Vec<u8>>,
    pub cert: Option<Vec<u8>>,
}

impl Attachments {
    pub fn none() -> Self {
        Attachments::default()
    }

    pub fn with_anchor(mut self, anchor: &SignedAnchor) -> Self {
        self.anchor = Some(anchor.encode());
        self
    }

    pub fn with_cert(mut self, cert: &ApCertificate) -> Self {
        self.cert = Some(cert.encode());
        self
    }
}

/// Canonical MAC input: `timestamp_us || interval_tu || ap_id || chain_id || index`.
///
/// The disclosed key is left out: it authenticates itself through the chain.
pub fn mac_message_bytes(frame: &BeaconFrame) -> [u8; 36] {
    let mut out = [0u8; 36];
    out[0..8].copy_from_slice(&frame.timestamp_us.to_be_bytes());
    out[8..10].copy_from_slice(&frame.beacon_interval_tu.to_be_bytes());
    out[10..16].copy_from_slice(&frame.ap_id.0);
    out[16..32].copy_from_slice(&frame.chain_id.0);
    out[32..36].copy_from_slice(&frame.index.to_be_bytes());
    out
}

pub fn compute_mac(key: &Element, frame: &BeaconFrame) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&mac_message_bytes(frame));
    mac.finalize().into_bytes().into()
}

/// Constant-time check of `frame.mac` under `key`.
pub fn verify_mac(key: &Element, frame: &BeaconFrame) -> bool {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&mac_message_bytes(frame));
    mac.verify_slice(&frame.mac).is_ok()
}

/// Builds beacon `n`: discloses `h_n` and authenticates with `h_{n+1}`.
pub fn build_beacon(
    chain: &HashChain,
    n: u32,
    timestamp_us: u64,
    ap_id: ApId,
    beacon_interval_tu: u16,
    attachments: &Attachments,
) -> Result<BeaconFrame, BeaconError> {
    let max = chain.length().saturating_sub(1);
    if n == 0 || n > max {
        return Err(BeaconError::IndexOutOfChain { index: n, max });
    }
    let mut frame = BeaconFrame {
        timestamp_us,
        beacon_interval_tu,
        ap_id,
        chain_id: chain.chain_id(),
        index: n,
        mac: [0; 32],
        disclosed_key: chain.element(n).expect("n < N"),
        anchor_blob: attachments.anchor.clone(),
        cert_blob: attachments.cert.clone(),
        trailing: Vec::new(),
    };
    let len = frame.encoded_len();
    if len > MAX_FRAME_LEN {
        return Err(BeaconError::OversizeFrame { len });
    }
    let key = chain.element(n + 1).expect("n + 1 <= N");
    frame.mac = compute_mac(&key, &frame);
    Ok(frame)
}

impl BeaconFrame {
    pub fn encoded_len(&self) -> usize {
        FIXED_LEN
            + self.anchor_blob.as_ref().map_or(0, |b| 2 + b.len())
            + self.cert_blob.as_ref().map_or(0, |b| 2 + b.len())
            + self.trailing.len()
    }

    pub fn serialize(&self) -> Result<Vec<u8>, BeaconError> {
        let len = self.encoded_len();
        if len > MAX_FRAME_LEN {
            return Err(BeaconError::OversizeFrame { len });
        }
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.timestamp_us.to_be_bytes());
        out.extend_from_slice(&self.beacon_interval_tu.to_be_bytes());
        out.extend_from_slice(&self.ap_id.0);
        out.extend_from_slice(&self.chain_id.0);
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.mac);
        out.extend_from_slice(&self.disclosed_key);
        let mut flags = 0;
        if self.anchor_blob.is_some() {
            flags |= FLAG_ANCHOR;
        }
        if self.cert_blob.is_some() {
            flags |= FLAG_CERT;
        }
        out.push(flags);
        if let Some(a) = &self.anchor_blob {
            put_prefixed(&mut out, a);
        }
        if let Some(c) = &self.cert_blob {
            put_prefixed(&mut out, c);
        }
        out.extend_from_slice(&self.trailing);
        debug_assert_eq!(out.len(), len);
        Ok(out)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() > MAX_FRAME_LEN {
            return Err(DecodeError::new(
                MAX_FRAME_LEN,
                format!("frame of {} octets exceeds {MAX_FRAME_LEN}", bytes.len()),
            ));
        }
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(DecodeError::new(0, "bad magic"));
        }
        let timestamp_us = r.u64("timestamp")?;
        let beacon_interval_tu = r.u16("beacon interval")?;
        let ap_id = ApId(r.array("ap_id")?);
        let chain_id = ChainId(r.array("chain_id")?);
        let index = r.u32("index")?;
        let mac = r.array("mac")?;
        let disclosed_key = r.array("disclosed key")?;
        let flags_at = r.position();
        let flags = r.u8("flags")?;
        if flags & !(FLAG_ANCHOR | FLAG_CERT) != 0 {
            return Err(DecodeError::new(flags_at, format!("unknown flag bits {flags:#04x}")));
        }
        let anchor_blob = if flags & FLAG_ANCHOR != 0 {
            Some(r.prefixed("anchor blob")?.to_vec())
        } else {
            None
        };
        let cert_blob = if flags & FLAG_CERT != 0 {
            Some(r.prefixed("cert blob")?.to_vec())
        } else {
            None
        };
        let trailing = r.rest().to_vec();
        Ok(BeaconFrame {
            timestamp_us,
            beacon_interval_tu,
            ap_id,
            chain_id,
            index,
            mac,
            disclosed_key,
            anchor_blob,
            cert_blob,
            trailing,
        })
    }
}
