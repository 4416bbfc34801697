//! Windowed cross-check of GNSS time against authenticated beacon
//! timestamps, falling back to time-server offsets when beacons are scarce.
//!
//! A beacon residual is the GNSS time at the beacon's local arrival instant
//! (interpolated between 1 Hz fixes) minus the beacon timestamp plus the
//! nominal propagation and reception delay. Residuals are grouped into
//! non-overlapping windows aligned to t = 0 on the reference time axis.

use serde::{Deserialize, Serialize};

use crate::timeserver::mean_std;
use crate::verifier::AuthenticatedObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    BeaconsOnly,
    TimeServerOnly,
    #[default]
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlarmRule {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub window_s: f64,
    pub epsilon_us: f64,
    pub min_observations: usize,
    pub reference: Reference,
    pub alarm_rule: AlarmRule,
    /// Threshold for windows judged on time-server residuals.
    pub epsilon_server_us: f64,
    /// Expected AP-to-client delay subtracted from every beacon residual.
    pub nominal_rx_delay_us: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            window_s: 1.0,
            epsilon_us: 25.5,
            min_observations: 5,
            reference: Reference::Fused,
            alarm_rule: AlarmRule::Mean,
            epsilon_server_us: 10_000.0,
            nominal_rx_delay_us: 0.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err("window_s must be > 0".into());
        }
        if !(self.epsilon_us > 0.0) {
            return Err("epsilon_us must be > 0".into());
        }
        if !(self.epsilon_server_us > 0.0) {
            return Err("epsilon_server_us must be > 0".into());
        }
        if self.min_observations == 0 {
            return Err("min_observations must be >= 1".into());
        }
        Ok(())
    }

    fn window_us(&self) -> i64 {
        (self.window_s * 1e6).round() as i64
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DetectorError {
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// One GNSS PVT time solution, stamped with the local clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub local_us: i64,
    pub gnss_us: f64,
}

/// Offset estimate from an accepted time-server exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerFix {
    pub local_us: i64,
    /// Server minus local clock.
    pub offset_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSource {
    Beacons,
    TimeServer,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    pub window_start_us: i64,
    pub mean_residual_us: f64,
    pub std_residual_us: f64,
    pub max_abs_residual_us: f64,
    pub n_obs: usize,
    pub source: WindowSource,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub config: DetectionConfig,
    pub windows: Vec<WindowRecord>,
    /// End of the first alarming window.
    pub first_alarm_time_us: Option<i64>,
    /// First alarm after the attack started, minus the attack start.
    pub time_to_detect_us: Option<i64>,
    /// Alarming windows that end at or before the attack start.
    pub false_alarm_count: usize,
}

/// Sample standard deviation of attack-free beacon residuals.
pub fn calibrate_epsilon(residuals_us: &[f64]) -> Result<f64, DetectorError> {
    const NEEDED: usize = 100;
    if residuals_us.len() < NEEDED {
        return Err(DetectorError::InsufficientData {
            needed: NEEDED,
            got: residuals_us.len(),
        });
    }
    Ok(mean_std(residuals_us).1)
}

/// GNSS time at local instant `local_us`, linear between the surrounding fixes.
pub fn gnss_time_at(fixes: &[GnssFix], local_us: i64) -> Option<f64> {
    if fixes.is_empty() {
        return None;
    }
    let i = fixes.partition_point(|f| f.local_us <= local_us);
    let (a, b) = match i {
        0 => {
            if fixes.len() < 2 {
                return Some(fixes[0].gnss_us + (local_us - fixes[0].local_us) as f64);
            }
            (fixes[0], fixes[1])
        }
        i if i >= fixes.len() => {
            if fixes.len() < 2 {
                return Some(fixes[0].gnss_us + (local_us - fixes[0].local_us) as f64);
            }
            (fixes[fixes.len() - 2], fixes[fixes.len() - 1])
        }
        i => (fixes[i - 1], fixes[i]),
    };
    let span = (b.local_us - a.local_us) as f64;
    if span <= 0.0 {
        return Some(a.gnss_us);
    }
    let w = (local_us - a.local_us) as f64 / span;
    Some(a.gnss_us + w * (b.gnss_us - a.gnss_us))
}

/// `(reference time, residual)` per authenticated beacon, in input order.
pub fn beacon_residuals(
    gnss: &[GnssFix],
    observations: &[AuthenticatedObservation],
    nominal_rx_delay_us: f64,
) -> Vec<(i64, f64)> {
    observations
        .iter()
        .filter_map(|o| {
            let g = gnss_time_at(gnss, o.rx_local_us())?;
            let expected = o.timestamp_us() as f64 + nominal_rx_delay_us;
            Some((o.timestamp_us() as i64, g - expected))
        })
        .collect()
}

/// `(reference time, residual)` per accepted time-server exchange.
pub fn server_residuals(gnss: &[GnssFix], fixes: &[ServerFix]) -> Vec<(i64, f64)> {
    fixes
        .iter()
        .filter_map(|f| {
            let g = gnss_time_at(gnss, f.local_us)?;
            let reference = f.local_us as f64 + f.offset_us;
            Some((reference.round() as i64, g - reference))
        })
        .collect()
}

fn bucket(points: &[(i64, f64)], window_us: i64, n_windows: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); n_windows];
    for &(t, r) in points {
        if t < 0 {
            continue;
        }
        let w = (t / window_us) as usize;
        if w < n_windows {
            out[w].push(r);
        }
    }
    out
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let (m, s) = mean_std(values);
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (m, s, max)
}

/// Windows `[k W, (k + 1) W)` covering `[0, horizon_us)`.
pub fn run_detection(
    gnss: &[GnssFix],
    observations: &[AuthenticatedObservation],
    server: &[ServerFix],
    cfg: &DetectionConfig,
    horizon_us: i64,
    attack_start_us: Option<i64>,
) -> DetectionReport {
    let w_us = cfg.window_us().max(1);
    let n_windows = ((horizon_us.max(0) + w_us - 1) / w_us) as usize;
    let beacons = if cfg.reference == Reference::TimeServerOnly {
        Vec::new()
    } else {
        beacon_residuals(gnss, observations, cfg.nominal_rx_delay_us)
    };
    let servers = if cfg.reference == Reference::BeaconsOnly {
        Vec::new()
    } else {
        server_residuals(gnss, server)
    };
    let b_buckets = bucket(&beacons, w_us, n_windows);
    let s_buckets = bucket(&servers, w_us, n_windows);

    let mut windows = Vec::with_capacity(n_windows);
    for (k, (b, s)) in b_buckets.iter().zip(&s_buckets).enumerate() {
        let (values, source, eps) = if cfg.reference != Reference::TimeServerOnly
            && (b.len() >= cfg.min_observations || cfg.reference == Reference::BeaconsOnly || s.is_empty())
        {
            (b, if b.is_empty() { WindowSource::None } else { WindowSource::Beacons }, cfg.epsilon_us)
        } else {
            (s, if s.is_empty() { WindowSource::None } else { WindowSource::TimeServer }, cfg.epsilon_server_us)
        };
        let (mean, std, max_abs) = stats(values);
        let min_obs = if source == WindowSource::TimeServer { 1 } else { cfg.min_observations };
        let statistic = match cfg.alarm_rule {
            AlarmRule::Mean => mean.abs(),
            AlarmRule::Max => max_abs,
        };
        let alarm = values.len() >= min_obs && statistic > eps;
        windows.push(WindowRecord {
            window_start_us: k as i64 * w_us,
            mean_residual_us: mean,
            std_residual_us: std,
            max_abs_residual_us: max_abs,
            n_obs: values.len(),
            source,
            alarm,
        });
    }

    let end = |w: &WindowRecord| w.window_start_us + w_us;
    let first_alarm_time_us = windows.iter().find(|w| w.alarm).map(end);
    let (time_to_detect_us, false_alarm_count) = match attack_start_us {
        Some(start) => (
            windows.iter().filter(|w| w.alarm && end(w) > start).map(|w| end(w) - start).next(),
            windows.iter().filter(|w| w.alarm && end(w) <= start).count(),
        ),
        None => (None, windows.iter().filter(|w| w.alarm).count()),
    };
    DetectionReport {
        config: *cfg,
        windows,
        first_alarm_time_us,
        time_to_detect_us,
        false_alarm_count,
    }
}
