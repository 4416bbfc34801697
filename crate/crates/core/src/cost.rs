//! Receiver-side authentication cost model.
//!
//! First authentication after joining an AP costs
//! `C' = C_SIG + C_HMAC + k * C_HASH` (plus a certificate check when the AP
//! certificate is not already trusted), every following beacon
//! `C'' = C_HMAC + C_HASH`, and a gap of `g` lost beacons `C_HMAC + g * C_HASH`.

use serde::{Deserialize, Serialize};

/// Per-operation delays in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub c_sig_us: f64,
    pub c_hmac_us: f64,
    pub c_hash_us: f64,
    pub c_cert_us: f64,
}

impl Default for CostTable {
    /// RSA-1024 verify / HMAC-SHA256 / SHA-256 on an Intel i7-8750H.
    fn default() -> Self {
        CostTable {
            c_sig_us: 52.0,
            c_hmac_us: 7.67,
            c_hash_us: 1.64,
            c_cert_us: 52.0,
        }
    }
}

impl CostTable {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("c_sig_us", self.c_sig_us),
            ("c_hmac_us", self.c_hmac_us),
            ("c_hash_us", self.c_hash_us),
            ("c_cert_us", self.c_cert_us),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

pub fn first_authentication_cost(k: u32, include_cert: bool, delays: &CostTable) -> f64 {
    let cert = if include_cert { delays.c_cert_us } else { 0.0 };
    delays.c_sig_us + delays.c_hmac_us + f64::from(k) * delays.c_hash_us + cert
}

pub fn steady_state_cost(delays: &CostTable) -> f64 {
    delays.c_hmac_us + delays.c_hash_us
}

/// Cost of authenticating a beacon after a gap of `gap` key disclosures.
/// Returns `None` for `gap == 0`.
pub fn lost_beacons_cost(gap: u32, delays: &CostTable) -> Option<f64> {
    (gap >= 1).then(|| delays.c_hmac_us + f64::from(gap) * delays.c_hash_us)
}

/// Primitive invocation counts collected by a verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounters {
    pub sig_verifies: u64,
    pub cert_verifies: u64,
    pub hmacs: u64,
    pub hashes: u64,
}

impl OpCounters {
    pub fn cost_us(&self, delays: &CostTable) -> f64 {
        self.sig_verifies as f64 * delays.c_sig_us
            + self.cert_verifies as f64 * delays.c_cert_us
            + self.hmacs as f64 * delays.c_hmac_us
            + self.hashes as f64 * delays.c_hash_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitCost {
    pub transit_s: f64,
    pub beacons: u64,
    pub k: u32,
    pub total_auth_us: f64,
    /// `total_auth / transit`, as a plain ratio (multiply by 100 for percent).
    pub fraction: f64,
}

/// Authentication budget for a client crossing one AP's coverage area.
pub fn transit_cost_report(
    speed_kmh: f64,
    coverage_m: f64,
    beacon_interval_us: f64,
    k_worst: u32,
    delays: &CostTable,
) -> TransitCost {
    let transit_s = coverage_m / (speed_kmh / 3.6);
    let beacons = if transit_s.is_finite() {
        (transit_s * 1e6 / beacon_interval_us).floor() as u64
    } else {
        0
    };
    let total_auth_us = if beacons == 0 {
        0.0
    } else {
        first_authentication_cost(k_worst, false, delays)
            + (beacons - 1) as f64 * steady_state_cost(delays)
    };
    let fraction = if transit_s > 0.0 && transit_s.is_finite() {
        total_auth_us / (transit_s * 1e6)
    } else {
        0.0
    };
    TransitCost {
        transit_s,
        beacons,
        k: k_worst,
        total_auth_us,
        fraction,
    }
}
