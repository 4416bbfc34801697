//! Local clock model and the GNSS time source with an adversarial bias.

use serde::{Deserialize, Serialize};

use crate::rng::normal_at;

/// GNSS receivers deliver one PVT solution per second.
pub const PVT_PERIOD_US: i64 = 1_000_000;

/// `reading(t) = t + offset + drift_ppm * 1e-6 * t + N(0, noise_std)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockModel {
    #[serde(default)]
    pub offset_us: i64,
    #[serde(default)]
    pub drift_ppm: f64,
    #[serde(default)]
    pub noise_std_us: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ClockModel {
    pub fn ideal() -> Self {
        ClockModel {
            offset_us: 0,
            drift_ppm: 0.0,
            noise_std_us: 0.0,
            rng_seed: 0,
        }
    }

    pub fn with_offset(offset_us: i64) -> Self {
        ClockModel {
            offset_us,
            ..ClockModel::ideal()
        }
    }

    /// Deterministic part of the reading, without noise.
    pub fn mean_reading(&self, t_us: i64) -> f64 {
        t_us as f64 + self.offset_us as f64 + self.drift_ppm * 1e-6 * t_us as f64
    }
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel::ideal()
    }
}

/// Clock reading at simulation time `t_us`, rounded to the microsecond.
pub fn read_clock(model: &ClockModel, t_us: i64) -> i64 {
    let noise = if model.noise_std_us > 0.0 {
        model.noise_std_us * normal_at(model.rng_seed, t_us)
    } else {
        0.0
    };
    (model.mean_reading(t_us) + noise).round() as i64
}

/// Time-shifting spoofer: linear ramp from `ramp_start_us` until the bias
/// reaches `max_bias_us`, then held (or released when `hold_after_max` is false).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnssAttackProfile {
    pub ramp_start_us: i64,
    pub ramp_rate_us_per_s: f64,
    pub max_bias_us: i64,
    #[serde(default = "default_hold")]
    pub hold_after_max: bool,
}

fn default_hold() -> bool {
    true
}

impl GnssAttackProfile {
    /// A profile that never biases the reported time.
    pub fn none() -> Self {
        GnssAttackProfile {
            ramp_start_us: i64::MAX,
            ramp_rate_us_per_s: 0.0,
            max_bias_us: 0,
            hold_after_max: true,
        }
    }

    /// 120 ms bias reached at `ramp_rate_us_per_s`, held afterwards.
    pub fn progressive(ramp_start_us: i64, ramp_rate_us_per_s: f64) -> Self {
        GnssAttackProfile {
            ramp_start_us,
            ramp_rate_us_per_s,
            max_bias_us: 120_000,
            hold_after_max: true,
        }
    }

    pub fn is_active(&self) -> bool {
        self.max_bias_us != 0 && self.ramp_rate_us_per_s > 0.0
    }

    /// Time `t0` at which the full bias is reached, if the ramp is active.
    pub fn full_bias_time_us(&self) -> Option<i64> {
        if !self.is_active() {
            return None;
        }
        let secs = self.max_bias_us.unsigned_abs() as f64 / self.ramp_rate_us_per_s;
        Some(self.ramp_start_us.saturating_add((secs * 1e6).ceil() as i64))
    }
}

impl Default for GnssAttackProfile {
    fn default() -> Self {
        GnssAttackProfile::none()
    }
}

pub fn gnss_bias(profile: &GnssAttackProfile, t_us: i64) -> f64 {
    if !profile.is_active() || t_us < profile.ramp_start_us {
        return 0.0;
    }
    let max = profile.max_bias_us.unsigned_abs() as f64;
    let ramp = profile.ramp_rate_us_per_s * (t_us - profile.ramp_start_us) as f64 * 1e-6;
    let magnitude = if ramp >= max {
        if profile.hold_after_max {
            max
        } else {
            0.0
        }
    } else {
        ramp
    };
    magnitude * profile.max_bias_us.signum() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssSample {
    pub true_time_us: i64,
    pub reported_time_us: i64,
    pub pvt_epoch_index: u64,
}

/// GNSS source: attack profile plus optional reported-time noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GnssSource {
    pub profile: GnssAttackProfile,
    pub noise_std_us: f64,
    pub rng_seed: u64,
}

impl GnssSource {
    pub fn sample(&self, epoch: u64) -> GnssSample {
        let t = epoch as i64 * PVT_PERIOD_US;
        let noise = if self.noise_std_us > 0.0 {
            self.noise_std_us * normal_at(self.rng_seed, t)
        } else {
            0.0
        };
        GnssSample {
            true_time_us: t,
            reported_time_us: (t as f64 + gnss_bias(&self.profile, t) + noise).round() as i64,
            pvt_epoch_index: epoch,
        }
    }
}

/// Noise-free GNSS sample at `t_us`.
pub fn sample_gnss(profile: &GnssAttackProfile, t_us: i64) -> GnssSample {
    GnssSample {
        true_time_us: t_us,
        reported_time_us: (t_us as f64 + gnss_bias(profile, t_us)).round() as i64,
        pvt_epoch_index: t_us.div_euclid(PVT_PERIOD_US) as u64,
    }
}
