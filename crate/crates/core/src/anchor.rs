//! Signed chain anchors, AP certificates and the client trust store.
//!
//! Signatures sit behind [`Signer`] / [`SignatureVerifier`]; the reference
//! scheme is Ed25519.
//!
//! Record layouts (all multi-byte integers big-endian):
//!
//! ```text
//! SignedAnchor  = chain_id(16) index(4) value(32) signer_id(6)
//!                 validity_start(8) validity_end(8) sig_len(2) signature
//! ApCertificate = ap_id(6) key_len(2) public_key issuer_len(2) issuer_id(utf-8)
//!                 sig_len(2) issuer_signature
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};

use crate::chain::{ChainError, Element, HashChain, Validity};
use crate::ids::{ApId, ChainId};
use crate::wire::{put_prefixed, DecodeError, Reader};

/// Produces signatures over arbitrary messages.
pub trait Signer {
    fn public_key(&self) -> Vec<u8>;
    fn sign(&self, message: &[u8]) -> Vec<u8>;
}

/// Verifies signatures produced by a matching [`Signer`].
pub trait SignatureVerifier: Send + Sync {
    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

/// Ed25519 signing key.
#[derive(Clone)]
pub struct Ed25519Signer {
    key: SigningKey,
}

impl Ed25519Signer {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        Ed25519Signer {
            key: SigningKey::from_bytes(&secret),
        }
    }
}

impl Signer for Ed25519Signer {
    fn public_key(&self) -> Vec<u8> {
        self.key.verifying_key().to_bytes().to_vec()
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.key.sign(message).to_bytes().to_vec()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ed25519Verifier;

impl SignatureVerifier for Ed25519Verifier {
    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(signature) else {
            return false;
        };
        vk.verify(message, &sig).is_ok()
    }
}

/// Wraps a signer and counts how many signatures it produced.
pub struct CountingSigner<S> {
    inner: S,
    count: AtomicU64,
}

impl<S: Signer> CountingSigner<S> {
    pub fn new(inner: S) -> Self {
        CountingSigner {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn signatures(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<S: Signer> Signer for CountingSigner<S> {
    fn public_key(&self) -> Vec<u8> {
        self.inner.public_key()
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.sign(message)
    }
}

/// A chain element signed by its AP, binding the chain to the AP identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedAnchor {
    pub chain_id: ChainId,
    pub index: u32,
    pub value: Element,
    pub signer_id: ApId,
    pub validity: Validity,
    pub signature: Vec<u8>,
}

impl SignedAnchor {
    /// Bytes covered by the anchor signature:
    /// `chain_id || index || value || validity_start || validity_end`.
    pub fn signed_bytes(&self) -> Vec<u8> {
        anchor_signed_bytes(self.chain_id, self.index, &self.value, self.validity)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(76 + self.signature.len());
        out.extend_from_slice(&self.chain_id.0);
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.value);
        out.extend_from_slice(&self.signer_id.0);
        out.extend_from_slice(&self.validity.start_us.to_be_bytes());
        out.extend_from_slice(&self.validity.end_us.to_be_bytes());
        put_prefixed(&mut out, &self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let anchor = SignedAnchor {
            chain_id: ChainId(r.array("anchor chain_id")?),
            index: r.u32("anchor index")?,
            value: r.array("anchor value")?,
            signer_id: ApId(r.array("anchor signer_id")?),
            validity: Validity::new(r.u64("anchor validity_start")?, r.u64("anchor validity_end")?),
            signature: r.prefixed("anchor signature")?.to_vec(),
        };
        r.finish("anchor")?;
        Ok(anchor)
    }
}

fn anchor_signed_bytes(chain_id: ChainId, index: u32, value: &Element, validity: Validity) -> Vec<u8> {
    let mut out = Vec::with_capacity(68);
    out.extend_from_slice(&chain_id.0);
    out.extend_from_slice(&index.to_be_bytes());
    out.extend_from_slice(value);
    out.extend_from_slice(&validity.start_us.to_be_bytes());
    out.extend_from_slice(&validity.end_us.to_be_bytes());
    out
}

/// Binds an AP identity to its public key, signed by an issuer root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApCertificate {
    pub ap_id: ApId,
    pub public_key: Vec<u8>,
    pub issuer_id: String,
    pub issuer_signature: Vec<u8>,
}

impl ApCertificate {
    /// Issues a certificate for `ap_id` / `public_key` signed by `issuer`.
    pub fn issue(ap_id: ApId, public_key: Vec<u8>, issuer_id: &str, issuer: &dyn Signer) -> Self {
        let mut cert = ApCertificate {
            ap_id,
            public_key,
            issuer_id: issuer_id.to_string(),
            issuer_signature: Vec::new(),
        };
        cert.issuer_signature = issuer.sign(&cert.signed_bytes());
        cert
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"beacontime/cert");
        out.extend_from_slice(&self.ap_id.0);
        put_prefixed(&mut out, &self.public_key);
        put_prefixed(&mut out, self.issuer_id.as_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.ap_id.0);
        put_prefixed(&mut out, &self.public_key);
        put_prefixed(&mut out, self.issuer_id.as_bytes());
        put_prefixed(&mut out, &self.issuer_signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let ap_id = ApId(r.array("cert ap_id")?);
        let public_key = r.prefixed("cert public_key")?.to_vec();
        let issuer_at = r.position();
        let issuer = r.prefixed("cert issuer_id")?;
        let issuer_id = String::from_utf8(issuer.to_vec())
            .map_err(|_| DecodeError::new(issuer_at, "issuer_id is not utf-8"))?;
        let issuer_signature = r.prefixed("cert issuer_signature")?.to_vec();
        r.finish("certificate")?;
        Ok(ApCertificate {
            ap_id,
            public_key,
            issuer_id,
            issuer_signature,
        })
    }
}

/// Root keys and trusted time servers known to a client.
#[derive(Clone)]
pub struct TrustStore {
    roots: BTreeMap<String, Vec<u8>>,
    time_servers: BTreeSet<String>,
    verifier: Arc<dyn SignatureVerifier>,
}

impl std::fmt::Debug for TrustStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrustStore")
            .field("roots", &self.roots.keys().collect::<Vec<_>>())
            .field("time_servers", &self.time_servers)
            .finish()
    }
}

impl Default for TrustStore {
    fn default() -> Self {
        TrustStore::new(Arc::new(Ed25519Verifier))
    }
}

impl TrustStore {
    pub fn new(verifier: Arc<dyn SignatureVerifier>) -> Self {
        TrustStore {
            roots: BTreeMap::new(),
            time_servers: BTreeSet::new(),
            verifier,
        }
    }

    pub fn add_root(&mut self, issuer_id: &str, public_key: Vec<u8>) {
        self.roots.insert(issuer_id.to_string(), public_key);
    }

    pub fn add_time_server(&mut self, server_id: &str) {
        self.time_servers.insert(server_id.to_string());
    }

    pub fn trusts_time_server(&self, server_id: &str) -> bool {
        self.time_servers.contains(server_id)
    }

    pub fn roots(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.roots.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn verify_signature(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        self.verifier.verify(public_key, message, signature)
    }

    /// True iff the certificate's issuer is a known root and its signature checks out.
    pub fn verify_certificate(&self, cert: &ApCertificate) -> bool {
        match self.roots.get(&cert.issuer_id) {
            Some(root) => self.verify_signature(root, &cert.signed_bytes(), &cert.issuer_signature),
            None => false,
        }
    }

    /// Text form: one `root <issuer_id> <hex key>` or `timeserver <id>` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, key) in &self.roots {
            s.push_str(&format!("root {id} {}\n", hex::encode(key)));
        }
        for id in &self.time_servers {
            s.push_str(&format!("timeserver {id}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DecodeError> {
        let mut store = TrustStore::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["root", id, key] => {
                    let key = hex::decode(key)
                        .map_err(|e| DecodeError::new(lineno, format!("bad root key: {e}")))?;
                    store.add_root(id, key);
                }
                ["timeserver", id] => store.add_time_server(id),
                _ => return Err(DecodeError::new(lineno, format!("unrecognised trust line `{line}`"))),
            }
        }
        Ok(store)
    }
}

/// Signs the anchor point `index` of `chain` on behalf of `signer_id`.
pub fn sign_anchor(
    chain: &HashChain,
    index: u32,
    signer_id: ApId,
    signer: &dyn Signer,
) -> Result<SignedAnchor, ChainError> {
    if !chain.is_anchor_point(index) {
        return Err(ChainError::IndexNotAnchorPoint {
            index,
            period: chain.anchor_period(),
            length: chain.length(),
        });
    }
    let value = chain.element(index).expect("anchor point lies inside the chain");
    let validity = chain.validity();
    let signature = signer.sign(&anchor_signed_bytes(chain.chain_id(), index, &value, validity));
    Ok(SignedAnchor {
        chain_id: chain.chain_id(),
        index,
        value,
        signer_id,
        validity,
        signature,
    })
}

/// True iff `cert` chains to a trust-store root, names the anchor's signer,
/// and the anchor signature verifies under the certified key.
pub fn verify_anchor(anchor: &SignedAnchor, cert: &ApCertificate, trust: &TrustStore) -> bool {
    cert.ap_id == anchor.signer_id
        && trust.verify_certificate(cert)
        && trust.verify_signature(&cert.public_key, &anchor.signed_bytes(), &anchor.signature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::generate_chain;

    const AP: ApId = ApId([2, 0, 0, 0, 0, 1]);

    fn setup() -> (HashChain, Ed25519Signer, ApCertificate, TrustStore) {
        let chain = generate_chain([4; 32], 30, 5, Validity::new(0, 10_000_000)).unwrap();
        let root = Ed25519Signer::from_secret([1; 32]);
        let ap_key = Ed25519Signer::from_secret([2; 32]);
        let cert = ApCertificate::issue(AP, ap_key.public_key(), "root-ca", &root);
        let mut trust = TrustStore::default();
        trust.add_root("root-ca", root.public_key());
        (chain, ap_key, cert, trust)
    }

    #[test]
    fn initial_and_intermediate_anchor() {
        let (chain, key, cert, trust) = setup();
        let a0 = sign_anchor(&chain, 0, AP, &key).unwrap();
        assert_eq!(a0.value, chain.initial_anchor());
        assert!(verify_anchor(&a0, &cert, &trust));
        let a15 = sign_anchor(&chain, 15, AP, &key).unwrap();
        assert_eq!(a15.value, chain.element(15).unwrap());
        assert!(verify_anchor(&a15, &cert, &trust));
    }

    #[test]
    fn misaligned_anchor_index() {
        let (chain, key, _, _) = setup();
        assert_eq!(
            sign_anchor(&chain, 7, AP, &key),
            Err(ChainError::IndexNotAnchorPoint { index: 7, period: 5, length: 30 })
        );
        assert!(sign_anchor(&chain, 35, AP, &key).is_err());
    }

    #[test]
    fn period_600_anchor() {
        let chain = generate_chain([8; 32], 1200, 600, Validity::new(0, 1)).unwrap();
        let key = Ed25519Signer::from_secret([2; 32]);
        let a = sign_anchor(&chain, 600, AP, &key).unwrap();
        assert_eq!(a.index, 600);
        assert_eq!(a.value, chain.element(600).unwrap());
    }

    #[test]
    fn attacker_key_rejected() {
        let (chain, _, cert, trust) = setup();
        let attacker = Ed25519Signer::from_secret([66; 32]);
        let forged = sign_anchor(&chain, 0, AP, &attacker).unwrap();
        assert!(!verify_anchor(&forged, &cert, &trust));

        // Attacker-issued certificate for the same AP id does not chain to the root.
        let rogue_cert = ApCertificate::issue(AP, attacker.public_key(), "root-ca", &attacker);
        assert!(!verify_anchor(&forged, &rogue_cert, &trust));
    }

    #[test]
    fn corrupted_issuer_signature() {
        let (chain, key, mut cert, trust) = setup();
        let a = sign_anchor(&chain, 0, AP, &key).unwrap();
        cert.issuer_signature[3] ^= 0x10;
        assert!(!verify_anchor(&a, &cert, &trust));
    }

    #[test]
    fn anchor_fields_are_covered() {
        let (chain, key, cert, trust) = setup();
        let a = sign_anchor(&chain, 5, AP, &key).unwrap();
        let mut b = a.clone();
        b.validity.end_us += 1;
        assert!(!verify_anchor(&b, &cert, &trust));
        let mut c = a.clone();
        c.index = 10;
        assert!(!verify_anchor(&c, &cert, &trust));
        let mut d = a;
        d.signer_id = ApId([9; 6]);
        assert!(!verify_anchor(&d, &cert, &trust));
    }

    #[test]
    fn record_round_trip_and_truncation() {
        let (chain, key, cert, trust) = setup();
        let a = sign_anchor(&chain, 10, AP, &key).unwrap();
        let bytes = a.encode();
        assert_eq!(SignedAnchor::decode(&bytes).unwrap(), a);
        let err = SignedAnchor::decode(&bytes[..50]).unwrap_err();
        // value spans 20..52
        assert_eq!(err.offset, 20);
        let cbytes = cert.encode();
        assert_eq!(ApCertificate::decode(&cbytes).unwrap(), cert);
        assert!(ApCertificate::decode(&cbytes[..cbytes.len() - 1]).is_err());
        let mut extra = cbytes.clone();
        extra.push(0);
        assert!(ApCertificate::decode(&extra).is_err());

        let text = trust.to_text();
        let back = TrustStore::from_text(&text).unwrap();
        assert!(back.verify_certificate(&cert));
    }

    #[test]
    fn counting_signer() {
        let (chain, key, _, _) = setup();
        let counting = CountingSigner::new(key);
        sign_anchor(&chain, 0, AP, &counting).unwrap();
        sign_anchor(&chain, 5, AP, &counting).unwrap();
        assert_eq!(counting.signatures(), 2);
    }
}
