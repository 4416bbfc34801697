//! One-way SHA-256 key chains.
//!
//! A chain `h_0 .. h_N` is generated backwards from a secret seed `h_N`:
//! `h_i = SHA-256(h_{i+1})`. `h_0` is the initial anchor; keys are disclosed
//! in forward order `h_1, h_2, ..` so that any disclosed element can be
//! authenticated by hashing it back down to an already trusted one.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::anchor::SignedAnchor;
use crate::ids::ChainId;

/// A 32-byte chain element.
pub type Element = [u8; 32];

/// Number of elements kept in memory before switching to checkpoints.
pub const DEFAULT_MATERIALIZE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("invalid chain parameter: {0}")]
    InvalidParameter(String),
    #[error("claimed index {claimed} precedes trusted anchor index {trusted}")]
    IndexOrder { claimed: u32, trusted: u32 },
    #[error("index {index} is not an anchor point (period {period}, length {length})")]
    IndexNotAnchorPoint { index: u32, period: u32, length: u32 },
}

/// Simulation-time validity interval of a chain, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Validity {
    pub start_us: u64,
    pub end_us: u64,
}

impl Validity {
    pub fn new(start_us: u64, end_us: u64) -> Self {
        Validity { start_us, end_us }
    }

    pub fn contains(&self, t_us: i64) -> bool {
        t_us >= self.start_us as i64 && t_us <= self.end_us as i64
    }
}

/// SHA-256 of a single element.
pub fn hash_element(e: &Element) -> Element {
    Sha256::digest(e).into()
}

/// Applies SHA-256 `steps` times.
pub fn hash_n(e: &Element, steps: u64) -> Element {
    let mut cur = *e;
    for _ in 0..steps {
        cur = hash_element(&cur);
    }
    cur
}

#[derive(Clone)]
enum Storage {
    /// `elements[i] = h_i`.
    Full(Vec<Element>),
    /// `points[j] = h_{min(j * stride, N)}`; other elements are recomputed.
    Checkpoints { stride: u32, points: Vec<Element> },
}

/// A precomputed hash chain with its anchor schedule.
#[derive(Clone)]
pub struct HashChain {
    chain_id: ChainId,
    length: u32,
    seed: Element,
    storage: Storage,
    anchor_period: u32,
    validity: Validity,
}

impl std::fmt::Debug for HashChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HashChain")
            .field("chain_id", &self.chain_id)
            .field("length", &self.length)
            .field("anchor_period", &self.anchor_period)
            .field("validity", &self.validity)
            .finish_non_exhaustive()
    }
}

/// Generates a chain of `length` usable keys from `seed` (which becomes `h_N`).
pub fn generate_chain(
    seed: Element,
    length: u32,
    anchor_period: u32,
    validity: Validity,
) -> Result<HashChain, ChainError> {
    generate_chain_with_cap(seed, length, anchor_period, validity, DEFAULT_MATERIALIZE_CAP)
}

/// Same as [`generate_chain`] with an explicit in-memory element cap.
pub fn generate_chain_with_cap(
    seed: Element,
    length: u32,
    anchor_period: u32,
    validity: Validity,
    materialize_cap: usize,
) -> Result<HashChain, ChainError> {
    if length == 0 {
        return Err(ChainError::InvalidParameter("length must be >= 1".into()));
    }
    if anchor_period == 0 || anchor_period > length {
        return Err(ChainError::InvalidParameter(format!(
            "anchor period {anchor_period} outside [1, {length}]"
        )));
    }
    if validity.end_us < validity.start_us {
        return Err(ChainError::InvalidParameter(
            "validity end precedes start".into(),
        ));
    }
    if materialize_cap < 2 {
        return Err(ChainError::InvalidParameter(
            "materialize cap must be >= 2".into(),
        ));
    }

    let n = length as usize;
    let storage = if n < materialize_cap {
        let mut elements = vec![[0u8; 32]; n + 1];
        elements[n] = seed;
        for i in (0..n).rev() {
            elements[i] = hash_element(&elements[i + 1]);
        }
        Storage::Full(elements)
    } else {
        let stride = n.div_ceil(materialize_cap - 1) as u32;
        let count = n.div_ceil(stride as usize) + 1;
        let mut points = vec![[0u8; 32]; count];
        let mut cur = seed;
        // Walk down from h_N, recording every element that lands on a checkpoint.
        for i in (0..=n).rev() {
            if i == n || i % stride as usize == 0 {
                let slot = if i == n { count - 1 } else { i / stride as usize };
                points[slot] = cur;
            }
            if i > 0 {
                cur = hash_element(&cur);
            }
        }
        Storage::Checkpoints { stride, points }
    };

    let mut chain = HashChain {
        chain_id: ChainId::default(),
        length,
        seed,
        storage,
        anchor_period,
        validity,
    };
    chain.chain_id = derive_chain_id(&chain.initial_anchor(), &validity);
    Ok(chain)
}

fn derive_chain_id(h0: &Element, validity: &Validity) -> ChainId {
    let mut hasher = Sha256::new();
    hasher.update(b"beacontime/chain-id");
    hasher.update(h0);
    hasher.update(validity.start_us.to_be_bytes());
    hasher.update(validity.end_us.to_be_bytes());
    let digest = hasher.finalize();
    let mut id = [0u8; 16];
    id.copy_from_slice(&digest[..16]);
    ChainId(id)
}

impl HashChain {
    pub fn chain_id(&self) -> ChainId {
        self.chain_id
    }

    /// Number of usable key elements `N`.
    pub fn length(&self) -> u32 {
        self.length
    }

    pub fn seed(&self) -> &Element {
        &self.seed
    }

    pub fn anchor_period(&self) -> u32 {
        self.anchor_period
    }

    pub fn validity(&self) -> Validity {
        self.validity
    }

    /// `h_0`.
    pub fn initial_anchor(&self) -> Element {
        self.element(0).expect("h_0 always exists")
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.storage, Storage::Full(_))
    }

    /// `h_index`, or `None` past the end of the chain.
    pub fn element(&self, index: u32) -> Option<Element> {
        if index > self.length {
            return None;
        }
        match &self.storage {
            Storage::Full(v) => Some(v[index as usize]),
            Storage::Checkpoints { stride, points } => {
                let upper = index.div_ceil(*stride) * stride;
                let (slot, cp_index) = if upper >= self.length {
                    (points.len() - 1, self.length)
                } else {
                    ((upper / stride) as usize, upper)
                };
                Some(hash_n(&points[slot], u64::from(cp_index - index)))
            }
        }
    }

    pub fn is_anchor_point(&self, index: u32) -> bool {
        index <= self.length && index.is_multiple_of(self.anchor_period)
    }

    /// The most recent anchor point at or below `index`.
    pub fn anchor_point_at_or_below(&self, index: u32) -> u32 {
        let i = index.min(self.length);
        i - i % self.anchor_period
    }
}

/// Result of authenticating a chain element against a trusted anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementCheck {
    pub accepted: bool,
    /// Number of SHA-256 invocations performed (`claimed_index - anchor.index`).
    pub hash_ops: u32,
}

/// Checks that hashing `candidate` exactly `claimed_index - trusted.index` times
/// reproduces the trusted anchor value.
pub fn verify_element(
    candidate: &Element,
    claimed_index: u32,
    trusted: &SignedAnchor,
) -> Result<ElementCheck, ChainError> {
    verify_against(candidate, claimed_index, trusted.index, &trusted.value)
}

/// [`verify_element`] against a bare `(index, value)` pair already trusted.
pub fn verify_against(
    candidate: &Element,
    claimed_index: u32,
    trusted_index: u32,
    trusted_value: &Element,
) -> Result<ElementCheck, ChainError> {
    if claimed_index < trusted_index {
        return Err(ChainError::IndexOrder {
            claimed: claimed_index,
            trusted: trusted_index,
        });
    }
    let k = claimed_index - trusted_index;
    let walked = hash_n(candidate, u64::from(k));
    Ok(ElementCheck {
        accepted: walked == *trusted_value,
        hash_ops: k,
    })
}
