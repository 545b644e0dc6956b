use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Domain, NetError, Network, Result};
use crate::registry::{Registry, RegistryError};

pub const DEFAULT_DWELL_S: f64 = 1800.0;

/// How a domain moves between its states.
pub trait SwitchStrategy: fmt::Debug + Send + Sync {
    fn mode(&self) -> &'static str;

    /// Whether this strategy can drive `domain`.
    fn applies_to(&self, domain: &Domain) -> bool;

    fn validate(&self, domain: &Domain) -> Result<()>;

    /// State changes within `[0, horizon_s)`.
    fn schedule(&self, domain: &Domain, horizon_s: f64) -> Vec<(f64, String)>;
}

/// Switch once to a pinned state and keep it.
#[derive(Debug, Clone, PartialEq)]
pub struct Preemptive {
    pub pinned: String,
}

impl SwitchStrategy for Preemptive {
    fn mode(&self) -> &'static str {
        "preemptive"
    }

    fn applies_to(&self, domain: &Domain) -> bool {
        domain.state(&self.pinned).is_some()
    }

    fn validate(&self, domain: &Domain) -> Result<()> {
        if self.applies_to(domain) {
            Ok(())
        } else {
            Err(NetError::UnknownState {
                id: self.pinned.clone(),
                known: domain.states.iter().map(|s| s.id.clone()).collect(),
            })
        }
    }

    fn schedule(&self, _domain: &Domain, horizon_s: f64) -> Vec<(f64, String)> {
        if horizon_s > 0.0 {
            vec![(0.0, self.pinned.clone())]
        } else {
            vec![]
        }
    }
}

/// Round-robin over a cycle with a fixed dwell per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Automatic {
    pub dwell_s: f64,
    /// Overrides the domain's own cycle when set.
    pub cycle: Option<Vec<String>>,
}

impl Automatic {
    fn cycle<'a>(&'a self, domain: &'a Domain) -> &'a [String] {
        self.cycle.as_deref().unwrap_or(&domain.cycle)
    }
}

impl Default for Automatic {
    fn default() -> Self {
        Self {
            dwell_s: DEFAULT_DWELL_S,
            cycle: None,
        }
    }
}

impl SwitchStrategy for Automatic {
    fn mode(&self) -> &'static str {
        "automatic"
    }

    fn applies_to(&self, domain: &Domain) -> bool {
        self.cycle(domain).iter().all(|s| domain.state(s).is_some())
    }

    fn validate(&self, domain: &Domain) -> Result<()> {
        if !(self.dwell_s > 0.0) {
            return Err(NetError::Definition(format!(
                "dwell interval must be positive, got {}",
                self.dwell_s
            )));
        }
        let cycle = self.cycle(domain);
        if cycle.is_empty() {
            return Err(NetError::Definition(format!(
                "empty cycle for domain {}",
                domain.id
            )));
        }
        match cycle.iter().find(|s| domain.state(s).is_none()) {
            Some(s) => Err(NetError::UnknownState {
                id: s.clone(),
                known: domain.states.iter().map(|s| s.id.clone()).collect(),
            }),
            None => Ok(()),
        }
    }

    fn schedule(&self, domain: &Domain, horizon_s: f64) -> Vec<(f64, String)> {
        let cycle = self.cycle(domain);
        let mut out = Vec::new();
        let mut k: u64 = 0;
        loop {
            let t = k as f64 * self.dwell_s;
            if t >= horizon_s {
                break;
            }
            out.push((t, cycle[k as usize % cycle.len()].clone()));
            k += 1;
        }
        out
    }
}

/// Serialized policy choice: a registered mode name plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub mode: String,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

impl PolicySpec {
    pub fn automatic() -> Self {
        Self {
            mode: "automatic".into(),
            params: Map::new(),
        }
    }

    pub fn preemptive(pinned: &str) -> Self {
        let mut params = Map::new();
        params.insert("pinned".into(), Value::String(pinned.to_string()));
        Self {
            mode: "preemptive".into(),
            params,
        }
    }

    pub fn build(&self) -> std::result::Result<Box<dyn SwitchStrategy>, RegistryError> {
        switch_strategies().create(&self.mode, &Value::Object(self.params.clone()))
    }
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self::automatic()
    }
}

pub fn switch_strategies() -> Registry<dyn SwitchStrategy> {
    let mut r: Registry<dyn SwitchStrategy> = Registry::new("switching mode");
    r.register("preemptive", |p| {
        let pinned = p
            .get("pinned")
            .and_then(Value::as_str)
            .ok_or("needs a 'pinned' state id")?;
        Ok(Box::new(Preemptive {
            pinned: pinned.to_string(),
        }))
    });
    r.register("automatic", |p| {
        let dwell_s = match p.get("dwell_s") {
            None => DEFAULT_DWELL_S,
            Some(v) => v.as_f64().ok_or("'dwell_s' must be a number")?,
        };
        let cycle = match p.get("cycle") {
            None => None,
            Some(v) => Some(
                serde_json::from_value::<Vec<String>>(v.clone())
                    .map_err(|_| "'cycle' must be a list of state ids")?,
            ),
        };
        Ok(Box::new(Automatic { dwell_s, cycle }))
    });
    r
}

/// `schedule(policy, horizon)` for a single domain.
pub fn schedule(
    strategy: &dyn SwitchStrategy,
    domain: &Domain,
    horizon_s: f64,
) -> Result<Vec<(f64, String)>> {
    strategy.validate(domain)?;
    Ok(strategy.schedule(domain, horizon_s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t_s: f64,
    pub domain: String,
    pub state: String,
}

/// Merged schedule of every domain, ordered by time then domain.
///
/// `default` drives each domain it applies to; a preemptive default only
/// applies to the domain owning the pinned state, and domains it cannot
/// drive fall back to automatic switching. `overrides` replace the policy of
/// named domains.
pub fn network_schedule(
    network: &Network,
    default: &PolicySpec,
    overrides: &BTreeMap<String, PolicySpec>,
    horizon_s: f64,
) -> Result<Vec<Transition>> {
    for d in overrides.keys() {
        network.domain(d)?;
    }
    let default_strategy = default.build()?;
    if default_strategy.mode() == "preemptive"
        && !network
            .domains
            .iter()
            .any(|d| default_strategy.applies_to(d))
    {
        // Surface the unknown pinned state with the full list of states.
        if let Some(pinned) = default.params.get("pinned").and_then(Value::as_str) {
            network.domain_of_state(pinned)?;
        }
    }
    let fallback = Automatic::default();
    let mut out = Vec::new();
    for dom in &network.domains {
        let owned;
        let strategy: &dyn SwitchStrategy = match overrides.get(&dom.id) {
            Some(spec) => {
                owned = spec.build()?;
                owned.as_ref()
            }
            None if default_strategy.applies_to(dom) => default_strategy.as_ref(),
            None => &fallback,
        };
        for (t_s, state) in schedule(strategy, dom, horizon_s)? {
            out.push(Transition {
                t_s,
                domain: dom.id.clone(),
                state,
            });
        }
    }
    out.sort_by(|a, b| a.t_s.total_cmp(&b.t_s).then_with(|| a.domain.cmp(&b.domain)));
    Ok(out)
}
