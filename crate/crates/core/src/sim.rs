//! Deterministic event-loop simulation: APs, one client, a time server, the
//! GNSS receiver and an optional attacker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::anchor::{ApCertificate, Ed25519Signer, Signer, TrustStore};
use crate::attacker::{forge_beacon, forge_with_copied_key, skew_time_reply, AttackKind, RogueIdentity};
use crate::beacon::BeaconFrame;
use crate::chain::{generate_chain, Validity};
use crate::clock::{read_clock, GnssSource, PVT_PERIOD_US};
use crate::cost::{first_authentication_cost, steady_state_cost, transit_cost_report, OpCounters, TransitCost};
use crate::detector::{beacon_residuals, run_detection, DetectionReport, GnssFix, ServerFix};
use crate::ids::{ApId, ChainId};
use crate::rng::stream;
use crate::scenario::{ConfigError, Scenario};
use crate::timeserver::{compute_offset_rtd, ExchangeCounters, TimeExchange, TimeService};
use crate::transmitter::{Emission, Transmitter};
use crate::verifier::{AuthenticatedObservation, LegacyReceiver, RxInfo, Verifier, VerifierConfig, VerifyStatus};

/// Issuer name of the simulated certificate authority.
pub const ROOT_ID: &str = "root-ca";

/// Description of the residual estimator, echoed into run summaries.
pub const RESIDUAL_ESTIMATOR: &str =
    "gnss time interpolated at local rx instant minus (beacon timestamp + nominal rx delay); \
     time-server residual = gnss time minus (local + accepted offset); windows aligned to t = 0";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> SimError {
    SimError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Entry,
    Gnss,
    Exchange,
    Tx,
    Rx,
    Verify,
    Resolve,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Entry => "entry",
            EventKind::Gnss => "gnss",
            EventKind::Exchange => "exchange",
            EventKind::Tx => "tx",
            EventKind::Rx => "rx",
            EventKind::Verify => "verify",
            EventKind::Resolve => "resolve",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time_us: i64,
    pub seq: u64,
    pub kind: EventKind,
    pub source: String,
    pub index: Option<u32>,
    pub status: String,
    pub detail: String,
}

#[derive(Debug, Default)]
struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    fn push(&mut self, time_us: i64, kind: EventKind, source: &str, index: Option<u32>, status: &str, detail: String) {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            time_us,
            seq,
            kind,
            source: source.to_string(),
            index,
            status: status.to_string(),
            detail,
        });
    }

    fn finish(mut self) -> Vec<Event> {
        self.events.sort_by_key(|e| (e.time_us, e.seq));
        self.events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Legit,
    Attacker,
}

#[derive(Debug, Clone)]
struct Reception {
    rx_true_us: i64,
    frame: BeaconFrame,
    origin: Origin,
    source: String,
}

#[derive(Debug, Clone)]
struct ExchangeInput {
    done_true_us: i64,
    exchange: TimeExchange,
    forged: bool,
    accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Input {
    Entry,
    Gnss(usize),
    Exchange(usize),
    Rx(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub counters: OpCounters,
    /// All counted primitives priced with the cost table.
    pub measured_us: f64,
    /// Same, excluding certificate checks.
    pub beacon_auth_us: f64,
    /// Distance from the installed anchor to the first verified key.
    pub first_k: Option<u32>,
    pub authenticated: u64,
    /// `C'(first_k) + (authenticated - 1) * C''`, for a loss-free single-AP run.
    pub formula_us: Option<f64>,
    pub transit: Option<TransitSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitSummary {
    pub transit_s: f64,
    pub beacons: u64,
    pub k: u32,
    pub total_auth_us: f64,
    pub fraction_percent: f64,
}

impl From<TransitCost> for TransitSummary {
    fn from(t: TransitCost) -> Self {
        TransitSummary {
            transit_s: t.transit_s,
            beacons: t.beacons,
            k: t.k,
            total_auth_us: t.total_auth_us,
            fraction_percent: t.fraction * 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationRow {
    pub event_id: u64,
    pub ap_id: ApId,
    pub index: u32,
    pub timestamp_us: u64,
    pub rx_local_us: i64,
    pub residual_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SecuritySummary {
    pub attack: String,
    pub attacker_frames: u64,
    pub attacker_frames_authenticated: u64,
    pub attacker_frames_in_detector_feed: u64,
    pub legacy_attacker_frames_accepted: u64,
    pub attacker_replies: u64,
    pub attacker_replies_accepted: u64,
    pub legacy_attacker_replies_accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub window_s: f64,
    pub windows: usize,
    pub alarms: usize,
    pub false_alarms: usize,
    pub first_alarm_s: Option<f64>,
    pub time_to_detect_s: Option<f64>,
    /// Std of the per-window mean residual over attack-free windows.
    pub clean_window_mean_std_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangeSummary {
    pub exchanges: u64,
    pub accepted: u64,
    pub discarded: u64,
    pub counters: ExchangeCounters,
    pub nts_load_multiplier: f64,
    pub computational_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: String,
    pub master_seed: u64,
    pub duration_s: f64,
    pub residual_estimator: String,
    pub beacons_transmitted: u64,
    pub frames_received: u64,
    pub statuses: BTreeMap<String, u64>,
    pub security: SecuritySummary,
    pub timeserver: ExchangeSummary,
    pub detection: Vec<WindowSummary>,
    pub cost: CostReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub events: Vec<Event>,
    pub observations: Vec<ObservationRow>,
    pub reports: Vec<DetectionReport>,
    pub summary: Summary,
}

struct ApRuntime {
    ap_id: ApId,
    chain_id: ChainId,
    authenticated: bool,
    tx: Transmitter,
    cert: Option<ApCertificate>,
    emissions: Vec<Emission>,
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let master = scenario.seeds.master;
    let duration = scenario.duration_us();
    let client = &scenario.client;
    let mut log = EventLog::default();

    let root = Ed25519Signer::from_secret(stream(master, "pki/root").random());
    let mut trust = TrustStore::default();
    trust.add_root(ROOT_ID, root.public_key());
    trust.add_time_server(&scenario.timeserver.server_id);

    // Access points and their full emission schedules.
    let mut aps = Vec::with_capacity(scenario.aps.len());
    for (i, section) in scenario.aps.iter().enumerate() {
        let mut rng = stream(master, &format!("ap/{i}"));
        let signer = Ed25519Signer::from_secret(rng.random());
        let mut cfg = section.config.clone();
        cfg.rng_seed ^= rng.random::<u64>();
        let interval = cfg.interval_us();
        let count = ((duration - 1).max(0) / interval) as u32;
        let length = count + 2;
        let validity = Validity::new(0, (u64::from(length) + 1) * interval as u64);
        let chain = generate_chain(rng.random(), length, section.anchor_period.min(length), validity).map_err(runtime)?;
        let cert = section
            .authenticated
            .then(|| ApCertificate::issue(cfg.ap_id, signer.public_key(), ROOT_ID, &root));
        if !section.authenticated {
            cfg.anchor_every = 0;
            cfg.cert_every = 0;
        }
        let tx = Transmitter::new(cfg.clone(), chain, &signer, cert.clone()).map_err(runtime)?;
        let emissions = tx.emit_schedule(count).map_err(runtime)?;
        let source = cfg.ap_id.to_string();
        for e in &emissions {
            log.push(e.actual_tx_us, EventKind::Tx, &source, Some(e.n), "sent", format!("ts={}", e.frame.timestamp_us));
        }
        aps.push(ApRuntime {
            ap_id: cfg.ap_id,
            chain_id: tx.chain().chain_id(),
            authenticated: section.authenticated,
            tx,
            cert,
            emissions,
        });
    }
    let target = aps.iter().position(|a| a.authenticated).unwrap_or(0);

    let entry = (client.entry_s * 1e6).round() as i64;
    let exit = client
        .transit_s()
        .map_or(i64::MAX, |s| entry.saturating_add((s * 1e6).round() as i64));
    let in_coverage = |t: i64| t >= entry && t < exit && t < duration;

    // Legitimate receptions.
    let mut receptions: Vec<Reception> = Vec::new();
    let mut legit_rx: Vec<Vec<(usize, i64)>> = Vec::new();
    for (i, ap) in aps.iter().enumerate() {
        let mut rng = stream(master, &format!("rx/jitter/{i}"));
        let jitter = (client.rx_jitter_std_us > 0.0)
            .then(|| Normal::new(0.0, client.rx_jitter_std_us).expect("validated"));
        let mut rows = Vec::new();
        for (k, e) in ap.emissions.iter().enumerate() {
            let j = jitter.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            let rx = e.actual_tx_us + (client.rx_delay_us + j).round() as i64;
            rows.push((k, rx));
        }
        legit_rx.push(rows);
    }

    // Attacker transmissions.
    let attack = scenario.attack;
    let a_start = attack.start_us.max(0);
    let a_end = attack.end_us.min(duration);
    let mut rng = stream(master, "attack");
    let mut blocked: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut attacker_rx: Vec<Reception> = Vec::new();
    let t_ap = &aps[target];
    let t_src = format!("attacker:{}", t_ap.ap_id);
    let in_window = |t: i64| t >= a_start && t < a_end;
    match attack.kind {
        AttackKind::None | AttackKind::ForgeTimeReply { .. } => {}
        AttackKind::ForgeBeacon => {
            let span = (a_end - a_start).max(1);
            let interval = t_ap.tx.config().interval_us();
            let last = t_ap.tx.last_transmittable();
            for k in 0..i64::from(attack.count) {
                let t = a_start + (2 * k + 1) * span / (2 * i64::from(attack.count));
                let n_cur = ((t / interval) as u32).clamp(1, last);
                let desired = (t + 20_000) as u64;
                let frame = match t_ap.emissions.get(n_cur as usize - 1) {
                    Some(e) if k % 2 == 1 => forge_with_copied_key(&e.frame, desired),
                    _ => forge_beacon(&mut rng, t_ap.ap_id, t_ap.chain_id, (n_cur + 1).min(last), desired),
                };
                attacker_rx.push(Reception {
                    rx_true_us: t,
                    frame,
                    origin: Origin::Attacker,
                    source: t_src.clone(),
                });
            }
        }
        AttackKind::ReplaySequence { replay_after_us } => {
            let picked = t_ap.emissions.iter().zip(&legit_rx[target]).filter(|(e, _)| in_window(e.actual_tx_us));
            for (e, &(_, rx)) in picked.take(attack.count as usize) {
                attacker_rx.push(Reception {
                    rx_true_us: rx + replay_after_us,
                    frame: e.frame.clone(),
                    origin: Origin::Attacker,
                    source: t_src.clone(),
                });
            }
        }
        AttackKind::Meacon { delay_us, block_legitimate } => {
            let picked = t_ap.emissions.iter().zip(&legit_rx[target]).filter(|(e, _)| in_window(e.actual_tx_us));
            for (e, &(k, rx)) in picked.take(attack.count as usize) {
                if block_legitimate {
                    blocked.insert((target, k));
                }
                attacker_rx.push(Reception {
                    rx_true_us: rx + delay_us,
                    frame: e.frame.clone(),
                    origin: Origin::Attacker,
                    source: t_src.clone(),
                });
            }
        }
        AttackKind::RogueAp { rogue_aps } => {
            let interval = t_ap.tx.config().interval_us();
            let length = t_ap.tx.chain().length();
            let validity = t_ap.tx.chain().validity();
            let first = ((a_start + interval - 1) / interval).max(1) as u32;
            for r in 0..rogue_aps {
                let share = attack.count / rogue_aps + u32::from(r < attack.count % rogue_aps);
                let identity = RogueIdentity::new(&mut rng, t_ap.ap_id, ROOT_ID);
                let chain = identity.chain(&mut rng, length, validity).map_err(runtime)?;
                let mut cfg = t_ap.tx.config().clone();
                cfg.rng_seed = rng.random();
                let tx = identity.transmitter(cfg, chain).map_err(runtime)?;
                let share = share.min(tx.last_transmittable().saturating_sub(first) + 1);
                for e in tx.emit_range(first, share).map_err(runtime)? {
                    attacker_rx.push(Reception {
                        rx_true_us: e.actual_tx_us + client.rx_delay_us.round() as i64 + 500 * (i64::from(r) + 1),
                        frame: e.frame,
                        origin: Origin::Attacker,
                        source: format!("rogue{r}:{}", t_ap.ap_id),
                    });
                }
            }
        }
    }

    for (i, ap) in aps.iter().enumerate() {
        let source = ap.ap_id.to_string();
        for &(k, rx) in &legit_rx[i] {
            if in_coverage(rx) && !blocked.contains(&(i, k)) {
                receptions.push(Reception {
                    rx_true_us: rx,
                    frame: ap.emissions[k].frame.clone(),
                    origin: Origin::Legit,
                    source: source.clone(),
                });
            }
        }
    }
    receptions.extend(attacker_rx.into_iter().filter(|r| in_coverage(r.rx_true_us)));

    // Time-server exchanges.
    let ts_cfg = &scenario.timeserver;
    let mut exchanges: Vec<ExchangeInput> = Vec::new();
    let mut service = {
        let mut model = ts_cfg.delay_model()?;
        model.rng_seed ^= stream(master, "timeserver").random::<u64>();
        TimeService::new(model).map_err(runtime)?
    };
    let mut forged_replies = 0u64;
    if ts_cfg.enabled {
        let keys = if ts_cfg.auth {
            Some(service.establish_session(&trust, &ts_cfg.server_id, 0).map_err(runtime)?)
        } else {
            None
        };
        let poll = (ts_cfg.poll_interval_s * 1e6).round().max(1.0) as i64;
        let mut t = entry;
        while t < duration {
            let x = service.exchange(&client.clock, &ts_cfg.server_clock, t, keys.as_ref(), &ts_cfg.server_id);
            let done = t + (x.t4 - x.t1);
            let (x_rx, forged) = match attack.kind {
                AttackKind::ForgeTimeReply { bogus_offset_us }
                    if in_window(t) && forged_replies < u64::from(attack.count) =>
                {
                    forged_replies += 1;
                    (skew_time_reply(&x, bogus_offset_us), true)
                }
                _ => (x.clone(), false),
            };
            let accepted = match &keys {
                Some(k) => service.verify(&x_rx, k, &x.nonce),
                None => true,
            };
            exchanges.push(ExchangeInput {
                done_true_us: done,
                exchange: x_rx,
                forged,
                accepted,
            });
            t += poll;
        }
    }

    // GNSS fixes at 1 Hz.
    let gnss_source = GnssSource {
        profile: scenario.gnss.profile(),
        noise_std_us: scenario.gnss.noise_std_us,
        rng_seed: stream(master, "gnss").random(),
    };
    let mut gnss = Vec::new();
    for epoch in 0..=(duration / PVT_PERIOD_US) as u64 {
        let s = gnss_source.sample(epoch);
        gnss.push((
            s.true_time_us,
            GnssFix {
                local_us: read_clock(&client.clock, s.true_time_us),
                gnss_us: s.reported_time_us as f64,
            },
        ));
    }

    // Event loop.
    let mut inputs: Vec<(i64, Input)> = Vec::new();
    inputs.push((entry, Input::Entry));
    inputs.extend(gnss.iter().enumerate().map(|(i, (t, _))| (*t, Input::Gnss(i))));
    inputs.extend(exchanges.iter().enumerate().map(|(i, x)| (x.done_true_us, Input::Exchange(i))));
    inputs.extend(receptions.iter().enumerate().map(|(i, r)| (r.rx_true_us, Input::Rx(i))));
    inputs.sort();

    let mut verifier = Verifier::new(
        VerifierConfig {
            safety_margin_us: client.safety_margin_us,
            max_pending: client.max_pending,
            ..VerifierConfig::default()
        },
        trust.clone(),
    );
    let mut legacy = LegacyReceiver::new();
    let mut final_status: BTreeMap<u64, VerifyStatus> = BTreeMap::new();
    let mut attacker_events: BTreeSet<u64> = BTreeSet::new();
    let mut server_fixes = Vec::new();
    let mut installed_anchor: Option<u32> = None;
    let mut first_target_index: Option<u32> = None;
    let mut sec = SecuritySummary {
        attack: attack.kind.name().to_string(),
        attacker_replies: forged_replies,
        ..Default::default()
    };
    let mut accepted_exchanges = 0u64;

    for (t, input) in inputs {
        match input {
            Input::Entry => {
                if !client.internet_anchor {
                    log.push(t, EventKind::Entry, "client", None, "no_anchor", String::new());
                    continue;
                }
                for (i, ap) in aps.iter().enumerate() {
                    let Some(cert) = &ap.cert else { continue };
                    let local = read_clock(&client.clock, t);
                    let ok = verifier.install_certificate(cert.clone());
                    let idx = ((t / ap.tx.config().interval_us()) as u32).min(ap.tx.last_transmittable());
                    let anchor = ap.tx.latest_anchor(idx).clone();
                    let a_idx = anchor.index;
                    let out = verifier.install_anchor(anchor, local);
                    if i == target && out.status == VerifyStatus::Authenticated {
                        installed_anchor = Some(a_idx);
                    }
                    log.push(
                        t,
                        EventKind::Entry,
                        &ap.ap_id.to_string(),
                        Some(a_idx),
                        &out.status.to_string(),
                        format!("certificate_ok={ok}"),
                    );
                }
            }
            Input::Gnss(i) => {
                let fix = gnss[i].1;
                log.push(t, EventKind::Gnss, "gnss", None, "fix", format!("gnss_us={:.0}", fix.gnss_us));
            }
            Input::Exchange(i) => {
                let x = &exchanges[i];
                let r = compute_offset_rtd(&x.exchange);
                let origin = if x.forged { "attacker" } else { "server" };
                if x.accepted {
                    accepted_exchanges += 1;
                    let offset_us = r.offset_s * 1e6;
                    verifier.set_time_offset(offset_us.round() as i64);
                    server_fixes.push(ServerFix {
                        local_us: (x.exchange.t1 + x.exchange.t4) / 2,
                        offset_us,
                    });
                    if x.forged {
                        sec.attacker_replies_accepted += 1;
                    }
                }
                if x.forged {
                    sec.legacy_attacker_replies_accepted += 1;
                }
                log.push(
                    t,
                    EventKind::Exchange,
                    origin,
                    None,
                    if x.accepted { "accepted" } else { "discarded" },
                    format!("offset_us={:.1} rtd_us={:.1}", r.offset_s * 1e6, r.rtd_s * 1e6),
                );
            }
            Input::Rx(i) => {
                let rec = &receptions[i];
                let event_id = i as u64;
                if rec.origin == Origin::Attacker {
                    attacker_events.insert(event_id);
                    sec.attacker_frames += 1;
                }
                let local = read_clock(&client.clock, t);
                let decoded = rec
                    .frame
                    .serialize()
                    .map_err(|e| e.to_string())
                    .and_then(|b| BeaconFrame::deserialize(&b).map_err(|e| e.to_string()));
                let frame = match decoded {
                    Ok(f) => f,
                    Err(e) => {
                        log.push(t, EventKind::Rx, &rec.source, Some(rec.frame.index), "undecodable", e);
                        continue;
                    }
                };
                log.push(t, EventKind::Rx, &rec.source, Some(frame.index), "received", format!("event={event_id}"));
                let rx = RxInfo {
                    local_time_us: local,
                    event_id,
                };
                legacy.on_receive(&frame, rx);
                if rec.origin == Origin::Attacker {
                    sec.legacy_attacker_frames_accepted += 1;
                }
                if rec.origin == Origin::Legit && frame.ap_id == aps[target].ap_id && first_target_index.is_none() {
                    first_target_index = Some(frame.index);
                }
                let out = verifier.on_receive(&frame, rx);
                final_status.insert(event_id, out.status);
                log.push(
                    t,
                    EventKind::Verify,
                    &rec.source,
                    Some(frame.index),
                    &out.status.to_string(),
                    format!("k={} {}", out.hash_walk_k, out.detail),
                );
                for res in out.resolved {
                    final_status.insert(res.event_id, res.status);
                    log.push(
                        t,
                        EventKind::Resolve,
                        &res.ap_id.to_string(),
                        Some(res.index),
                        &res.status.to_string(),
                        format!("event={}", res.event_id),
                    );
                }
            }
        }
    }

    let observations: Vec<AuthenticatedObservation> = verifier.observations().to_vec();
    sec.attacker_frames_authenticated = observations
        .iter()
        .filter(|o| attacker_events.contains(&o.event_id()))
        .count() as u64;

    let fixes: Vec<GnssFix> = gnss.iter().map(|(_, f)| *f).collect();
    let configs = scenario.detection_configs();
    let nominal = configs.first().map_or(client.rx_delay_us, |c| c.nominal_rx_delay_us);
    let residuals = beacon_residuals(&fixes, &observations, nominal);
    // Residuals are computed only from verifier output, so the detector feed
    // is exactly the authenticated set.
    sec.attacker_frames_in_detector_feed = observations
        .iter()
        .zip(&residuals)
        .filter(|(o, _)| attacker_events.contains(&o.event_id()))
        .count() as u64;
    let rows: Vec<ObservationRow> = observations
        .iter()
        .zip(&residuals)
        .map(|(o, (_, r))| ObservationRow {
            event_id: o.event_id(),
            ap_id: o.ap_id(),
            index: o.index(),
            timestamp_us: o.timestamp_us(),
            rx_local_us: o.rx_local_us(),
            residual_us: *r,
        })
        .collect();

    let profile = scenario.gnss.profile();
    let attack_start = profile.is_active().then_some(profile.ramp_start_us);
    let reports: Vec<DetectionReport> = configs
        .iter()
        .map(|c| run_detection(&fixes, &observations, &server_fixes, c, duration, attack_start))
        .collect();
    let detection = reports
        .iter()
        .map(|r| {
            let w_us = (r.config.window_s * 1e6).round() as i64;
            let clean: Vec<f64> = r
                .windows
                .iter()
                .filter(|w| w.n_obs > 0 && attack_start.is_none_or(|s| w.window_start_us + w_us <= s))
                .map(|w| w.mean_residual_us)
                .collect();
            WindowSummary {
                window_s: r.config.window_s,
                windows: r.windows.len(),
                alarms: r.windows.iter().filter(|w| w.alarm).count(),
                false_alarms: r.false_alarm_count,
                first_alarm_s: r.first_alarm_time_us.map(|t| t as f64 * 1e-6),
                time_to_detect_s: r.time_to_detect_us.map(|t| t as f64 * 1e-6),
                clean_window_mean_std_us: (clean.len() >= 2).then(|| crate::timeserver::mean_std(&clean).1),
            }
        })
        .collect();

    let costs = &scenario.costs;
    let counters = verifier.counters();
    let measured_us = counters.cost_us(costs);
    let beacon_auth_us = OpCounters {
        cert_verifies: 0,
        ..counters
    }
    .cost_us(costs);
    let first_k = match (installed_anchor, first_target_index) {
        (Some(a), Some(s)) if s >= a => Some(s + 1 - a),
        _ => None,
    };
    let authenticated = observations.len() as u64;
    let formula_us = first_k.filter(|_| authenticated > 0).map(|k| {
        first_authentication_cost(k, false, costs) + (authenticated - 1) as f64 * steady_state_cost(costs)
    });
    let transit = client.transit_s().map(|_| {
        let ap = &scenario.aps[target];
        transit_cost_report(
            client.speed_kmh,
            client.ap_coverage_m,
            ap.config.interval_us() as f64,
            ap.anchor_period.saturating_sub(1),
            costs,
        )
        .into()
    });

    let mut statuses: BTreeMap<String, u64> = BTreeMap::new();
    for s in final_status.values() {
        *statuses.entry(s.to_string()).or_default() += 1;
    }
    let tcounters = service.counters();
    let summary = Summary {
        schema: scenario.schema.clone(),
        master_seed: master,
        duration_s: scenario.simulation.duration_s,
        residual_estimator: RESIDUAL_ESTIMATOR.to_string(),
        beacons_transmitted: aps.iter().map(|a| a.emissions.len() as u64).sum(),
        frames_received: receptions.len() as u64,
        statuses,
        security: sec,
        timeserver: ExchangeSummary {
            exchanges: exchanges.len() as u64,
            accepted: accepted_exchanges,
            discarded: exchanges.len() as u64 - accepted_exchanges,
            counters: tcounters,
            nts_load_multiplier: ts_cfg.nts_load_multiplier,
            computational_load: tcounters.computational_load(ts_cfg.nts_load_multiplier),
        },
        detection,
        cost: CostReport {
            counters,
            measured_us,
            beacon_auth_us,
            first_k,
            authenticated,
            formula_us,
            transit,
        },
    };

    Ok(RunOutput {
        scenario: scenario.clone(),
        events: log.finish(),
        observations: rows,
        reports,
        summary,
    })
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.3}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `1` for whole seconds, otherwise the value with `.` replaced by `p`.
pub fn window_label(window_s: f64) -> String {
    if window_s.fract() == 0.0 {
        format!("{}", window_s as i64)
    } else {
        format!("{window_s}").replace('.', "p")
    }
}

pub fn events_csv(events: &[Event]) -> String {
    let mut s = String::from("time_us,seq,kind,source,index,status,detail\n");
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.time_us,
            e.seq,
            e.kind.as_str(),
            csv_field(&e.source),
            e.index.map(|i| i.to_string()).unwrap_or_default(),
            csv_field(&e.status),
            csv_field(&e.detail),
        );
    }
    s
}

pub fn windows_csv(report: &DetectionReport) -> String {
    let mut s = String::from("start_s,mean_us,std_us,max_abs_us,n,source,alarm\n");
    for w in &report.windows {
        let source = match w.source {
            crate::detector::WindowSource::Beacons => "beacons",
            crate::detector::WindowSource::TimeServer => "timeserver",
            crate::detector::WindowSource::None => "none",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_f(w.window_start_us as f64 * 1e-6),
            fmt_f(w.mean_residual_us),
            fmt_f(w.std_residual_us),
            fmt_f(w.max_abs_residual_us),
            w.n_obs,
            source,
            u8::from(w.alarm),
        );
    }
    s
}

pub fn observations_csv(rows: &[ObservationRow]) -> String {
    let mut s = String::from("event_id,ap_id,index,timestamp_us,rx_local_us,residual_us\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.event_id,
            r.ap_id,
            r.index,
            r.timestamp_us,
            r.rx_local_us,
            fmt_f(r.residual_us)
        );
    }
    s
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    summary: &'a Summary,
    scenario: &'a Scenario,
}

pub fn summary_toml(out: &RunOutput) -> String {
    toml::to_string(&SummaryFile {
        summary: &out.summary,
        scenario: &out.scenario,
    })
    .expect("summary serializes")
}

/// Writes `events.csv`, `observations.csv`, `windows_<w>s.csv` and `summary.toml`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("events.csv"), events_csv(&out.events))?;
    fs::write(dir.join("observations.csv"), observations_csv(&out.observations))?;
    for r in &out.reports {
        fs::write(dir.join(format!("windows_{}s.csv", window_label(r.config.window_s))), windows_csv(r))?;
    }
    fs::write(dir.join("summary.toml"), summary_toml(out))?;
    Ok(())
}
