use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Link, NetError, Network, Result};
use crate::fabric::ResolvedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    /// Link setup with cached parameters.
    pub t_fast_s: f64,
    /// Link setup that has to recalibrate from scratch.
    pub t_calibrate_s: f64,
    /// Age after which a cache entry no longer counts; `None` keeps entries forever.
    pub cache_ttl_s: Option<f64>,
    /// Start with an entry for every link any state can produce.
    pub warm_cache: bool,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            t_fast_s: 2.0,
            t_calibrate_s: 60.0,
            cache_ttl_s: None,
            warm_cache: false,
        }
    }
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_fast_s >= 0.0
            && self.t_calibrate_s >= 0.0
            && self.cache_ttl_s.is_none_or(|t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(NetError::Definition(format!("invalid timing {self:?}")))
        }
    }
}

/// Per-pair configuration found by calibration. The values are opaque to
/// the simulator; only their presence and age matter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub half_wave_voltage_v: f64,
    pub delay_ps: f64,
    pub refreshed_at_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationCache {
    entries: BTreeMap<Link, CacheEntry>,
    ttl_s: Option<f64>,
}

impl CalibrationCache {
    pub fn new(ttl_s: Option<f64>) -> Self {
        Self {
            entries: BTreeMap::new(),
            ttl_s,
        }
    }

    pub fn get(&self, link: &Link) -> Option<&CacheEntry> {
        self.entries.get(link)
    }

    pub fn is_fresh(&self, link: &Link, at_s: f64) -> bool {
        self.entries
            .get(link)
            .is_some_and(|e| self.ttl_s.is_none_or(|ttl| at_s - e.refreshed_at_s <= ttl))
    }

    pub fn record(&mut self, link: &Link, at_s: f64) {
        let digest = Sha256::digest(format!("{}->{}", link.0, link.1));
        let h = u16::from_le_bytes([digest[0], digest[1]]);
        self.entries.insert(
            link.clone(),
            CacheEntry {
                half_wave_voltage_v: 3.0 + f64::from(h % 1000) / 1000.0,
                delay_ps: f64::from(h % 5000),
                refreshed_at_s: at_s,
            },
        );
    }

    /// Self-calibration of a device refreshes every entry involving its
    /// transmitter or receiver.
    pub fn refresh_parts(&mut self, transmitter: &str, receiver: &str, at_s: f64) {
        for (link, e) in self.entries.iter_mut() {
            if link.0 == transmitter || link.1 == receiver {
                e.refreshed_at_s = e.refreshed_at_s.max(at_s);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveLink {
    pub link: Link,
    pub path: ResolvedPath,
    /// When the optical path appeared.
    pub since_s: f64,
    /// When key production starts.
    pub ready_at_s: f64,
    pub self_calibration: bool,
}

impl ActiveLink {
    pub fn producing_at(&self, t_s: f64) -> bool {
        t_s >= self.ready_at_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateChange {
    pub t_s: f64,
    pub domain: Option<String>,
    pub state: Option<String>,
    /// New links with their establishment delay.
    pub established: Vec<(Link, f64)>,
    pub kept: Vec<Link>,
    pub dropped: Vec<Link>,
}

/// Single-owner state machine over the active link set.
#[derive(Debug, Clone)]
pub struct Controller<'n> {
    network: &'n Network,
    timing: Timing,
    chosen: BTreeMap<String, String>,
    active: BTreeMap<Link, ActiveLink>,
    cache: CalibrationCache,
    started: bool,
    /// Resolved paths per combination of domain states.
    resolved: BTreeMap<BTreeMap<String, String>, Vec<ResolvedPath>>,
}

impl<'n> Controller<'n> {
    pub fn new(network: &'n Network, timing: Timing) -> Result<Self> {
        timing.validate()?;
        Ok(Self {
            network,
            cache: CalibrationCache::new(timing.cache_ttl_s),
            timing,
            chosen: network.initial_states(),
            active: BTreeMap::new(),
            started: false,
            resolved: BTreeMap::new(),
        })
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn cache(&self) -> &CalibrationCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut CalibrationCache {
        &mut self.cache
    }

    pub fn current_states(&self) -> &BTreeMap<String, String> {
        &self.chosen
    }

    pub fn active(&self) -> impl Iterator<Item = &ActiveLink> {
        self.active.values()
    }

    pub fn link(&self, link: &Link) -> Option<&ActiveLink> {
        self.active.get(link)
    }

    fn delay_for(&self, link: &Link, at_s: f64) -> f64 {
        if self.cache.is_fresh(link, at_s) {
            self.timing.t_fast_s
        } else {
            self.timing.t_calibrate_s
        }
    }

    fn warm(&mut self, at_s: f64) -> Result<()> {
        let mut links = Vec::new();
        for dom in &self.network.domains {
            for s in &dom.states {
                let mut chosen = self.chosen.clone();
                chosen.insert(dom.id.clone(), s.id.clone());
                links.extend(self.network.resolve(&chosen)?.into_iter().map(|p| p.link()));
            }
        }
        for l in links {
            self.cache.record(&l, at_s);
        }
        Ok(())
    }

    /// Brings up the initial link set.
    pub fn start(&mut self, at_s: f64) -> Result<StateChange> {
        if self.timing.warm_cache && !self.started {
            self.warm(at_s)?;
        }
        self.started = true;
        self.reconcile(at_s, None, None)
    }

    /// Switches the domain owning `state_id`. Links present before and after
    /// keep producing; new links wait for their establishment delay.
    pub fn apply_state(&mut self, state_id: &str, at_s: f64) -> Result<StateChange> {
        let domain = self.network.domain_of_state(state_id)?.id.clone();
        if !self.started {
            self.chosen.insert(domain.clone(), state_id.to_string());
            let mut change = self.start(at_s)?;
            change.domain = Some(domain);
            change.state = Some(state_id.to_string());
            return Ok(change);
        }
        let previous = self.chosen.insert(domain.clone(), state_id.to_string());
        match self.reconcile(at_s, Some(domain.clone()), Some(state_id.to_string())) {
            Ok(c) => Ok(c),
            Err(e) => {
                if let Some(p) = previous {
                    self.chosen.insert(domain, p);
                }
                Err(e)
            }
        }
    }

    fn reconcile(
        &mut self,
        at_s: f64,
        domain: Option<String>,
        state: Option<String>,
    ) -> Result<StateChange> {
        let paths = match self.resolved.get(&self.chosen) {
            Some(p) => p.clone(),
            None => {
                let p = self.network.resolve(&self.chosen)?;
                self.resolved.insert(self.chosen.clone(), p.clone());
                p
            }
        };
        for a in self.active.values().filter(|a| a.self_calibration) {
            self.cache.refresh_parts(&a.link.0, &a.link.1, at_s);
        }
        let mut next = BTreeMap::new();
        let mut established = Vec::new();
        let mut kept = Vec::new();
        for path in paths {
            let link = path.link();
            if let Some(mut old) = self.active.remove(&link) {
                old.path = path;
                kept.push(link.clone());
                next.insert(link, old);
                continue;
            }
            let delay = self.delay_for(&link, at_s);
            self.cache.record(&link, at_s + delay);
            established.push((link.clone(), delay));
            next.insert(
                link.clone(),
                ActiveLink {
                    self_calibration: self.network.is_self_calibration(&link),
                    link,
                    path,
                    since_s: at_s,
                    ready_at_s: at_s + delay,
                },
            );
        }
        let dropped = std::mem::take(&mut self.active).into_keys().collect();
        self.active = next;
        Ok(StateChange {
            t_s: at_s,
            domain,
            state,
            established,
            kept,
            dropped,
        })
    }

    /// Restarts key production on `link` after an interruption. Returns the
    /// establishment delay, or `None` if the link is not active.
    pub fn reestablish(&mut self, link: &Link, at_s: f64) -> Option<f64> {
        if !self.active.contains_key(link) {
            return None;
        }
        let delay = self.delay_for(link, at_s);
        self.cache.record(link, at_s + delay);
        let a = self.active.get_mut(link).expect("checked above");
        a.ready_at_s = at_s + delay;
        Some(delay)
    }
}
