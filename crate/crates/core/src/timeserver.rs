//! Four-timestamp network time exchange, plain (NTP-like) or with a
//! session MAC over the server timestamps (NTS-like).

use hmac::{Hmac, Mac};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::anchor::TrustStore;
use crate::clock::{read_clock, ClockModel};

type HmacSha256 = Hmac<Sha256>;

/// RTD samples below this are redrawn.
pub const MIN_RTD_S: f64 = 1e-3;

/// Computational load of one authenticated exchange relative to a plain one.
pub const DEFAULT_NTS_LOAD_MULTIPLIER: f64 = 6.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TimeServerError {
    #[error("server {0:?} is not in the trust store")]
    UnknownServer(String),
    #[error("invalid delay model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ntp,
    Nts,
}

/// Delay distribution of a client/server path, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub rtd_mean_s: f64,
    pub rtd_std_s: f64,
    pub offset_mean_s: f64,
    pub offset_std_s: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl DelayModel {
    pub fn symmetric(one_way_s: f64) -> Self {
        DelayModel {
            rtd_mean_s: 2.0 * one_way_s,
            rtd_std_s: 0.0,
            offset_mean_s: 0.0,
            offset_std_s: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TimeServerError> {
        let all = [self.rtd_mean_s, self.rtd_std_s, self.offset_mean_s, self.offset_std_s];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(TimeServerError::InvalidModel("parameters must be finite".into()));
        }
        if self.rtd_std_s < 0.0 || self.offset_std_s < 0.0 {
            return Err(TimeServerError::InvalidModel("standard deviations must be >= 0".into()));
        }
        if self.rtd_mean_s < MIN_RTD_S && self.rtd_std_s == 0.0 {
            return Err(TimeServerError::InvalidModel(format!("rtd_mean_s must be >= {MIN_RTD_S} s")));
        }
        Ok(())
    }
}

/// Measured 4G server profiles (mean and standard deviation in seconds).
pub const PRESETS: &[(&str, Protocol, [f64; 4])] = &[
    ("nts.sth2", Protocol::Nts, [2.825e-2, 7.200e-3, 1.228e-3, 4.331e-3]),
    ("nts.sth1", Protocol::Nts, [2.765e-2, 7.151e-3, 9.380e-4, 3.309e-3]),
    ("nts.sth", Protocol::Nts, [2.774e-2, 6.970e-3, 1.042e-3, 3.131e-3]),
    ("sth1", Protocol::Ntp, [2.673e-2, 6.512e-3, 3.177e-4, 3.409e-3]),
    ("sth2", Protocol::Ntp, [2.631e-2, 5.526e-3, 4.223e-4, 2.975e-3]),
    ("npt3.sptime.se", Protocol::Ntp, [3.931e-2, 1.375e-3, -5.802e-3, 6.985e-3]),
];

/// Looks up a preset by short name (`nts.sth1`) or full host name (`nts.sth1.ntp.se`).
pub fn preset(name: &str) -> Option<(Protocol, DelayModel)> {
    let short = name.strip_suffix(".ntp.se").unwrap_or(name);
    PRESETS.iter().find(|(n, _, _)| *n == short).map(|&(_, p, v)| {
        (
            p,
            DelayModel {
                rtd_mean_s: v[0],
                rtd_std_s: v[1],
                offset_mean_s: v[2],
                offset_std_s: v[3],
                rng_seed: 0,
            },
        )
    })
}

#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub client_to_server: [u8; 32],
    pub server_to_client: [u8; 32],
    pub established_at_us: i64,
    pub server_id: String,
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKeys")
            .field("server_id", &self.server_id)
            .field("established_at_us", &self.established_at_us)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeExchange {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
    pub auth_tag: Option<[u8; 32]>,
    pub nonce: [u8; 16],
    pub server_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetRtd {
    /// Server clock minus client clock.
    pub offset_s: f64,
    pub rtd_s: f64,
}

/// `offset = ((t2 - t1) + (t3 - t4)) / 2`, `rtd = (t4 - t1) - (t3 - t2)`.
pub fn compute_offset_rtd(x: &TimeExchange) -> OffsetRtd {
    let offset_us = ((x.t2 - x.t1) + (x.t3 - x.t4)) as f64 / 2.0;
    let rtd_us = ((x.t4 - x.t1) - (x.t3 - x.t2)) as f64;
    OffsetRtd {
        offset_s: offset_us * 1e-6,
        rtd_s: rtd_us * 1e-6,
    }
}

fn reply_tag(key: &[u8; 32], t2: i64, t3: i64, nonce: &[u8; 16]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(&t2.to_be_bytes());
    mac.update(&t3.to_be_bytes());
    mac.update(nonce);
    mac
}

/// True iff the reply carries a valid tag and echoes `request_nonce`.
pub fn verify_exchange_auth(x: &TimeExchange, keys: &SessionKeys, request_nonce: &[u8; 16]) -> bool {
    let Some(tag) = x.auth_tag else {
        return false;
    };
    if &x.nonce != request_nonce || x.server_id != keys.server_id {
        return false;
    }
    reply_tag(&keys.server_to_client, x.t2, x.t3, &x.nonce)
        .verify_slice(&tag)
        .is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExchangeCounters {
    pub exchanges: u64,
    pub authenticated_exchanges: u64,
    pub key_establishments: u64,
    pub mac_generations: u64,
    pub mac_verifications: u64,
}

impl ExchangeCounters {
    /// Load in units of one plain exchange; authenticated ones weigh `multiplier`.
    pub fn computational_load(&self, multiplier: f64) -> f64 {
        let plain = self.exchanges - self.authenticated_exchanges;
        plain as f64 + self.authenticated_exchanges as f64 * multiplier
    }
}

/// Simulated client/server pair sharing one delay model.
#[derive(Debug)]
pub struct TimeService {
    model: DelayModel,
    rng: ChaCha8Rng,
    counters: ExchangeCounters,
    /// Server hold time between t2 and t3.
    pub processing_us: i64,
}

impl TimeService {
    pub fn new(model: DelayModel) -> Result<Self, TimeServerError> {
        model.validate()?;
        Ok(TimeService {
            model,
            rng: crate::rng::stream(model.rng_seed, "timeserver"),
            counters: ExchangeCounters::default(),
            processing_us: 0,
        })
    }

    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    pub fn counters(&self) -> ExchangeCounters {
        self.counters
    }

    pub fn establish_session(
        &mut self,
        trust: &TrustStore,
        server_id: &str,
        now_us: i64,
    ) -> Result<SessionKeys, TimeServerError> {
        if !trust.trusts_time_server(server_id) {
            return Err(TimeServerError::UnknownServer(server_id.to_string()));
        }
        let mut keys = SessionKeys {
            client_to_server: [0; 32],
            server_to_client: [0; 32],
            established_at_us: now_us,
            server_id: server_id.to_string(),
        };
        self.rng.fill_bytes(&mut keys.client_to_server);
        self.rng.fill_bytes(&mut keys.server_to_client);
        self.counters.key_establishments += 1;
        Ok(keys)
    }

    /// One-way delays `(outbound, return)` in microseconds.
    pub fn sample_delays_us(&mut self) -> (f64, f64) {
        let m = self.model;
        let rtd = if m.rtd_std_s > 0.0 {
            let d = Normal::new(m.rtd_mean_s, m.rtd_std_s).expect("validated");
            loop {
                let v = d.sample(&mut self.rng);
                if v >= MIN_RTD_S {
                    break v;
                }
            }
        } else {
            m.rtd_mean_s
        };
        let asym = if m.offset_std_s > 0.0 {
            Normal::new(m.offset_mean_s, m.offset_std_s).expect("validated").sample(&mut self.rng)
        } else {
            m.offset_mean_s
        };
        let out = (rtd / 2.0 + asym).max(0.0);
        let back = (rtd / 2.0 - asym).max(0.0);
        (out * 1e6, back * 1e6)
    }

    /// Runs one exchange starting at true time `t_us`; the reply is tagged iff `keys` is given.
    pub fn exchange(
        &mut self,
        client: &ClockModel,
        server: &ClockModel,
        t_us: i64,
        keys: Option<&SessionKeys>,
        server_id: &str,
    ) -> TimeExchange {
        let (out, back) = self.sample_delays_us();
        let mut nonce = [0u8; 16];
        self.rng.fill(&mut nonce);
        let arrive = t_us + out.round() as i64;
        let depart = arrive + self.processing_us;
        let back_at = depart + back.round() as i64;
        let t1 = read_clock(client, t_us);
        let t2 = read_clock(server, arrive);
        let t3 = read_clock(server, depart).max(t2);
        let t4 = read_clock(client, back_at).max(t1);
        self.counters.exchanges += 1;
        let auth_tag = keys.map(|k| {
            self.counters.authenticated_exchanges += 1;
            self.counters.mac_generations += 1;
            let tag = reply_tag(&k.server_to_client, t2, t3, &nonce).finalize().into_bytes();
            let mut out = [0u8; 32];
            out.copy_from_slice(&tag);
            out
        });
        TimeExchange {
            t1,
            t2,
            t3,
            t4,
            auth_tag,
            nonce,
            server_id: server_id.to_string(),
        }
    }

    /// [`verify_exchange_auth`] with counting.
    pub fn verify(&mut self, x: &TimeExchange, keys: &SessionKeys, request_nonce: &[u8; 16]) -> bool {
        self.counters.mac_verifications += 1;
        verify_exchange_auth(x, keys, request_nonce)
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
