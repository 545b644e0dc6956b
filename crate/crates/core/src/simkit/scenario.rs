use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{SimError, Result};
use crate::apps::{OtpMode, AES_KEY_BITS};
use crate::fabric::TerminalRole;
use crate::fixtures::FixtureSource;
use crate::netctl::{Network, PolicySpec, Timing};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SAMPLE_INTERVAL_S: f64 = 300.0;

fn default_interval() -> f64 {
    DEFAULT_SAMPLE_INTERVAL_S
}

fn default_mode() -> String {
    "lab".into()
}

/// One test campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    /// Network definition file, resolved next to the scenario.
    pub network: String,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub mode_params: Map<String, Value>,
    pub duration_s: f64,
    #[serde(default = "default_interval")]
    pub sample_interval_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicySpec,
    /// Per-domain policies that replace `policy`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub domain_policies: BTreeMap<String, PolicySpec>,
    /// Replaces the network's own timing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(default)]
    pub events: Vec<EnvironmentEvent>,
    #[serde(default)]
    pub sessions: Vec<SessionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentEvent {
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    FiberCut {
        fiber: String,
        repair_after_s: f64,
    },
    PowerOutage {
        node: String,
        restore_after_s: f64,
    },
    /// Detector moved to a warmer set point: same efficiency, more dark
    /// counts from then on. `halt_s` takes the detector down while it
    /// settles.
    TempExcursion {
        detector: String,
        dark_multiplier: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_setpoint_c: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        halt_s: Option<f64>,
    },
    /// Adds `amplitude_db * sin(2π (t - at) / period_s)` of loss.
    LossDrift {
        fiber: String,
        amplitude_db: f64,
        period_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration_s: Option<f64>,
    },
    ControlHalt {
        node: String,
        resume_after_s: f64,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::FiberCut { .. } => "fiber_cut",
            EventKind::PowerOutage { .. } => "power_outage",
            EventKind::TempExcursion { .. } => "temp_excursion",
            EventKind::LossDrift { .. } => "loss_drift",
            EventKind::ControlHalt { .. } => "control_halt",
        }
    }

    pub fn target(&self) -> &str {
        match self {
            EventKind::FiberCut { fiber, .. } | EventKind::LossDrift { fiber, .. } => fiber,
            EventKind::PowerOutage { node, .. } | EventKind::ControlHalt { node, .. } => node,
            EventKind::TempExcursion { detector, .. } => detector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub id: String,
    /// Node route; two nodes use their direct pool, longer routes relay.
    pub route: Vec<String>,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    #[serde(flatten)]
    pub app: AppSpec,
}

fn aes_bits() -> u64 {
    AES_KEY_BITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "app", rename_all = "snake_case")]
pub enum AppSpec {
    Otp {
        #[serde(flatten)]
        mode: OtpMode,
        data_rate_bps: f64,
    },
    Vpn {
        #[serde(default = "aes_bits")]
        key_size_bits: u64,
        refresh_period_s: f64,
    },
}

fn bad(m: impl Into<String>) -> SimError {
    SimError::Scenario(m.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(text)
            .map_err(|e| bad(format!("line {}: {e}", e.line())))?;
        if sc.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(bad(format!(
                "unsupported schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                sc.schema_version
            )));
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Loads a scenario and the network it names from the same source.
    pub fn load(source: &dyn FixtureSource, file: &str) -> Result<(Self, Network)> {
        let text = source.read(file)?;
        let sc = Self::from_json(&text).map_err(|e| SimError::Load {
            file: source.locate(file),
            message: e.to_string(),
        })?;
        let net = Network::load(source, &sc.network)?;
        sc.validate_against(&net)?;
        Ok((sc, net))
    }

    /// Checks that need no network.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(bad(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(bad(format!(
                "sample_interval_s must be positive, got {}",
                self.sample_interval_s
            )));
        }
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].at_s < w[0].at_s {
                return Err(SimError::Event {
                    index: i + 1,
                    message: format!("events must be time-sorted ({} after {})", w[1].at_s, w[0].at_s),
                });
            }
        }
        for (index, e) in self.events.iter().enumerate() {
            let err = |m: String| SimError::Event { index, message: m };
            if !(e.at_s >= 0.0) {
                return Err(err(format!("negative time {}", e.at_s)));
            }
            let positive = |what: &str, v: f64| {
                if v > 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(err(format!("{what} must be positive, got {v}")))
                }
            };
            match &e.kind {
                EventKind::FiberCut { repair_after_s, .. } => positive("repair_after_s", *repair_after_s)?,
                EventKind::PowerOutage { restore_after_s, .. } => {
                    positive("restore_after_s", *restore_after_s)?
                }
                EventKind::ControlHalt { resume_after_s, .. } => positive("resume_after_s", *resume_after_s)?,
                EventKind::TempExcursion {
                    dark_multiplier,
                    halt_s,
                    ..
                } => {
                    positive("dark_multiplier", *dark_multiplier)?;
                    if let Some(h) = halt_s {
                        positive("halt_s", *h)?;
                    }
                }
                EventKind::LossDrift {
                    amplitude_db,
                    period_s,
                    duration_s,
                    ..
                } => {
                    positive("period_s", *period_s)?;
                    if !amplitude_db.is_finite() {
                        return Err(err("amplitude_db must be finite".into()));
                    }
                    if let Some(d) = duration_s {
                        positive("duration_s", *d)?;
                    }
                }
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.sessions {
            let invalid = |m: String| SimError::Session {
                id: s.id.clone(),
                message: m,
            };
            if !ids.insert(&s.id) {
                return Err(invalid("duplicate session id".into()));
            }
            if s.route.len() < 2 {
                return Err(invalid("route needs at least two nodes".into()));
            }
            if s.end_s.is_some_and(|e| e <= s.start_s) {
                return Err(invalid("end_s must follow start_s".into()));
            }
            match &s.app {
                AppSpec::Otp { mode, data_rate_bps } => {
                    if !(*data_rate_bps >= 0.0) {
                        return Err(invalid("data_rate_bps must be non-negative".into()));
                    }
                    if let OtpMode::Preloaded { card_bits: 0 } = mode {
                        return Err(invalid("card_bits must be positive".into()));
                    }
                }
                AppSpec::Vpn {
                    key_size_bits,
                    refresh_period_s,
                } => {
                    if *key_size_bits != AES_KEY_BITS {
                        return Err(invalid(format!(
                            "key_size_bits must be {AES_KEY_BITS}, got {key_size_bits}"
                        )));
                    }
                    if !(*refresh_period_s > 0.0) {
                        return Err(invalid("refresh_period_s must be positive".into()));
                    }
                }
            }
        }
        super::channel_modes().create(&self.mode, &Value::Object(self.mode_params.clone()))?;
        self.policy.build()?;
        for p in self.domain_policies.values() {
            p.build()?;
        }
        if let Some(t) = &self.timing {
            t.validate()?;
        }
        Ok(())
    }

    /// Checks every event and session target exists in `net`.
    pub fn validate_against(&self, net: &Network) -> Result<()> {
        let has_node = |n: &str| net.nodes.iter().any(|x| x.id == n);
        for (index, e) in self.events.iter().enumerate() {
            let err = |m: String| SimError::Event { index, message: m };
            match &e.kind {
                EventKind::FiberCut { fiber, .. } | EventKind::LossDrift { fiber, .. } => {
                    if net.catalog.get(fiber).is_none() {
                        return Err(err(format!("unknown fiber '{fiber}'")));
                    }
                }
                EventKind::PowerOutage { node, .. } | EventKind::ControlHalt { node, .. } => {
                    if !has_node(node) {
                        return Err(err(format!("unknown node '{node}'")));
                    }
                }
                EventKind::TempExcursion { detector, .. } => {
                    let is_rx = matches!(
                        net.fabric.kind(detector),
                        Some(crate::fabric::ComponentKind::Terminal { role: TerminalRole::Rx })
                    );
                    if !is_rx || net.node_of(detector).is_err() {
                        return Err(err(format!("unknown receiver '{detector}'")));
                    }
                }
            }
        }
        for s in &self.sessions {
            if let Some(n) = s.route.iter().find(|n| !has_node(n)) {
                return Err(SimError::Session {
                    id: s.id.clone(),
                    message: format!("unknown node '{n}' in route"),
                });
            }
        }
        for d in self.domain_policies.keys() {
            net.domain(d)?;
        }
        Ok(())
    }
}
