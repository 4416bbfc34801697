//! Scenario files (TOML) for the simulator.

use serde::{Deserialize, Serialize};

use crate::attacker::{AttackKind, AttackScenario};
use crate::clock::{ClockModel, GnssAttackProfile};
use crate::cost::CostTable;
use crate::detector::{AlarmRule, DetectionConfig, Reference};
use crate::timeserver::{preset, DelayModel, DEFAULT_NTS_LOAD_MULTIPLIER};
use crate::transmitter::ApConfig;

pub const SCHEMA: &str = "beacontime-scenario/1";

/// A configuration problem, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub simulation: SimulationSection,
    #[serde(rename = "ap")]
    pub aps: Vec<ApSection>,
    #[serde(default)]
    pub client: ClientSection,
    #[serde(default)]
    pub timeserver: TimeServerSection,
    #[serde(default)]
    pub gnss: GnssSection,
    #[serde(default)]
    pub attack: AttackScenario,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub costs: CostTable,
    #[serde(default)]
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSection {
    /// Unauthenticated APs have no certificate the client can validate.
    #[serde(default = "yes")]
    pub authenticated: bool,
    #[serde(default = "default_anchor_period")]
    pub anchor_period: u32,
    #[serde(flatten)]
    pub config: ApConfig,
}

fn yes() -> bool {
    true
}

fn default_anchor_period() -> u32 {
    600
}

impl Default for ApSection {
    fn default() -> Self {
        ApSection {
            authenticated: true,
            anchor_period: default_anchor_period(),
            config: ApConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientSection {
    /// 0 keeps the client in coverage for the whole run.
    pub speed_kmh: f64,
    pub ap_coverage_m: f64,
    pub entry_s: f64,
    pub rx_delay_us: f64,
    pub rx_jitter_std_us: f64,
    pub safety_margin_us: i64,
    pub max_pending: usize,
    /// Fetch the AP certificate and latest anchor out of band on entry.
    pub internet_anchor: bool,
    pub clock: ClockModel,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection {
            speed_kmh: 0.0,
            ap_coverage_m: 100.0,
            entry_s: 0.0,
            rx_delay_us: 200.0,
            rx_jitter_std_us: 24.80,
            safety_margin_us: 10_000,
            max_pending: 4,
            internet_anchor: true,
            clock: ClockModel::ideal(),
        }
    }
}

impl ClientSection {
    /// Time spent inside AP coverage, `None` when stationary.
    pub fn transit_s(&self) -> Option<f64> {
        (self.speed_kmh > 0.0).then(|| self.ap_coverage_m / (self.speed_kmh / 3.6))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeServerSection {
    pub enabled: bool,
    /// Named delay profile; ignored when `model` is given.
    pub preset: Option<String>,
    pub model: Option<DelayModel>,
    pub auth: bool,
    pub poll_interval_s: f64,
    pub server_id: String,
    pub nts_load_multiplier: f64,
    pub server_clock: ClockModel,
}

impl Default for TimeServerSection {
    fn default() -> Self {
        TimeServerSection {
            enabled: true,
            preset: Some("nts.sth1".into()),
            model: None,
            auth: true,
            poll_interval_s: 64.0,
            server_id: "nts.sth1.ntp.se".into(),
            nts_load_multiplier: DEFAULT_NTS_LOAD_MULTIPLIER,
            server_clock: ClockModel::ideal(),
        }
    }
}

impl TimeServerSection {
    pub fn delay_model(&self) -> Result<DelayModel, ConfigError> {
        if let Some(m) = self.model {
            return Ok(m);
        }
        let name = self.preset.as_deref().unwrap_or("nts.sth1");
        preset(name)
            .map(|(_, m)| m)
            .ok_or_else(|| ConfigError::new("timeserver.preset", format!("unknown preset {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnssSection {
    /// Start of the time-shifting ramp; absent means no spoofing.
    pub ramp_start_s: Option<f64>,
    pub ramp_rate_us_per_s: f64,
    pub max_bias_us: i64,
    pub hold_after_max: bool,
    pub noise_std_us: f64,
}

impl Default for GnssSection {
    fn default() -> Self {
        GnssSection {
            ramp_start_s: None,
            ramp_rate_us_per_s: 5_000.0,
            max_bias_us: 120_000,
            hold_after_max: true,
            noise_std_us: 0.0,
        }
    }
}

impl GnssSection {
    pub fn profile(&self) -> GnssAttackProfile {
        match self.ramp_start_s {
            Some(s) => GnssAttackProfile {
                ramp_start_us: (s * 1e6).round() as i64,
                ramp_rate_us_per_s: self.ramp_rate_us_per_s,
                max_bias_us: self.max_bias_us,
                hold_after_max: self.hold_after_max,
            },
            None => GnssAttackProfile::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub windows_s: Vec<f64>,
    pub epsilon_us: f64,
    pub min_observations: usize,
    pub reference: Reference,
    pub alarm_rule: AlarmRule,
    pub epsilon_server_us: f64,
    /// Defaults to `client.rx_delay_us`.
    pub nominal_rx_delay_us: Option<f64>,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionConfig::default();
        DetectionSection {
            windows_s: vec![1.0, 3.0, 5.0],
            epsilon_us: d.epsilon_us,
            min_observations: d.min_observations,
            reference: d.reference,
            alarm_rule: d.alarm_rule,
            epsilon_server_us: d.epsilon_server_us,
            nominal_rx_delay_us: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { master: 1 }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().message().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn duration_us(&self) -> i64 {
        (self.simulation.duration_s * 1e6).round() as i64
    }

    pub fn detection_configs(&self) -> Vec<DetectionConfig> {
        let d = &self.detection;
        d.windows_s
            .iter()
            .map(|&w| DetectionConfig {
                window_s: w,
                epsilon_us: d.epsilon_us,
                min_observations: d.min_observations,
                reference: d.reference,
                alarm_rule: d.alarm_rule,
                epsilon_server_us: d.epsilon_server_us,
                nominal_rx_delay_us: d.nominal_rx_delay_us.unwrap_or(self.client.rx_delay_us),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(ConfigError::new("schema", format!("expected {SCHEMA:?}, got {:?}", self.schema)));
        }
        let dur = self.simulation.duration_s;
        if !(dur > 0.0 && dur.is_finite()) {
            return Err(ConfigError::new("simulation.duration_s", "must be > 0"));
        }
        if self.aps.is_empty() {
            return Err(ConfigError::new("ap", "at least one AP is required"));
        }
        for (i, ap) in self.aps.iter().enumerate() {
            ap.config
                .validate()
                .map_err(|m| ConfigError::new(format!("ap[{i}]"), m))?;
            if ap.anchor_period == 0 {
                return Err(ConfigError::new(format!("ap[{i}].anchor_period"), "must be >= 1"));
            }
        }

        let c = &self.client;
        if !(c.speed_kmh >= 0.0 && c.speed_kmh.is_finite()) {
            return Err(ConfigError::new("client.speed_kmh", "must be >= 0"));
        }
        if !(c.ap_coverage_m > 0.0) {
            return Err(ConfigError::new("client.ap_coverage_m", "must be > 0"));
        }
        if !(c.entry_s >= 0.0 && c.entry_s < dur) {
            return Err(ConfigError::new("client.entry_s", "must lie in [0, duration_s)"));
        }
        if !(c.rx_delay_us >= 0.0) {
            return Err(ConfigError::new("client.rx_delay_us", "must be >= 0"));
        }
        if !(c.rx_jitter_std_us >= 0.0) {
            return Err(ConfigError::new("client.rx_jitter_std_us", "must be >= 0"));
        }
        if c.safety_margin_us < 0 {
            return Err(ConfigError::new("client.safety_margin_us", "must be >= 0"));
        }
        if c.max_pending == 0 {
            return Err(ConfigError::new("client.max_pending", "must be >= 1"));
        }

        let t = &self.timeserver;
        let model = t.delay_model()?;
        model
            .validate()
            .map_err(|e| ConfigError::new("timeserver.model", e.to_string()))?;
        if !(t.poll_interval_s > 0.0) {
            return Err(ConfigError::new("timeserver.poll_interval_s", "must be > 0"));
        }
        if !(t.nts_load_multiplier >= 1.0) {
            return Err(ConfigError::new("timeserver.nts_load_multiplier", "must be >= 1"));
        }

        let g = &self.gnss;
        if !(g.ramp_rate_us_per_s >= 0.0) {
            return Err(ConfigError::new("gnss.ramp_rate_us_per_s", "must be >= 0"));
        }
        if !(g.noise_std_us >= 0.0) {
            return Err(ConfigError::new("gnss.noise_std_us", "must be >= 0"));
        }

        match self.attack.kind {
            AttackKind::Meacon { delay_us, .. } if delay_us < 0 => {
                return Err(ConfigError::new("attack.delay_us", "must be >= 0"));
            }
            AttackKind::ReplaySequence { replay_after_us } if replay_after_us < 0 => {
                return Err(ConfigError::new("attack.replay_after_us", "must be >= 0"));
            }
            AttackKind::RogueAp { rogue_aps: 0 } => {
                return Err(ConfigError::new("attack.rogue_aps", "must be >= 1"));
            }
            _ => {}
        }
        if self.attack.end_us <= self.attack.start_us {
            return Err(ConfigError::new("attack.end_us", "must be after start_us"));
        }

        if self.detection.windows_s.is_empty() {
            return Err(ConfigError::new("detection.windows_s", "at least one window is required"));
        }
        for (i, cfg) in self.detection_configs().iter().enumerate() {
            cfg.validate()
                .map_err(|m| ConfigError::new(format!("detection.windows_s[{i}]"), m))?;
            if cfg.window_s > dur {
                return Err(ConfigError::new(
                    format!("detection.windows_s[{i}]"),
                    "longer than the simulated duration",
                ));
            }
        }
        self.costs
            .validate()
            .map_err(|m| ConfigError::new("costs", m))?;
        Ok(())
    }
}

/// A minimal valid scenario, useful as a template.
pub fn example_scenario() -> &'static str {
    r#"schema = "beacontime-scenario/1"

[simulation]
duration_s = 300.0

[[ap]]
ap_id = "02:00:00:00:00:01"
anchor_period = 600

[gnss]
ramp_start_s = 60.0
ramp_rate_us_per_s = 5000.0

[detection]
windows_s = [1.0, 3.0, 5.0]
epsilon_us = 25.5

[seeds]
master = 1
"#
}
