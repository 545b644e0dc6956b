//! Network-level control: named switch states, switching policies, the
//! calibration cache and the active link set over time.

mod controller;
mod policy;

pub use controller::{ActiveLink, CacheEntry, CalibrationCache, Controller, StateChange, Timing};
pub use policy::{
    network_schedule, schedule, switch_strategies, Automatic, PolicySpec, Preemptive,
    SwitchStrategy, Transition,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::fabric::{ComponentStates, FabricError, OpticalFabric, ResolvedPath, TerminalRole};
use crate::fixtures::{FixtureError, FixtureSource};
use crate::keymgmt::PairingMatrix;
use crate::photonics::{CalibrationSet, DetectorConfig, LinkCatalog, PhotonicsError};
use crate::registry::RegistryError;

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

/// Directed transmitter-to-receiver pair.
pub type Link = (String, String);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("{file}: {message}")]
    Load { file: String, message: String },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("invalid network definition: {0}")]
    Definition(String),
    #[error("unknown state '{id}' (known: {})", known.join(", "))]
    UnknownState { id: String, known: Vec<String> },
    #[error("unknown domain '{0}'")]
    UnknownDomain(String),
    #[error("unknown device part '{0}'")]
    UnknownPart(String),
    #[error("state {state} resolves to [{}] but expects [{}]", fmt_links(resolved), fmt_links(expected))]
    StateMismatch {
        state: String,
        expected: Vec<Link>,
        resolved: Vec<Link>,
    },
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Policy(#[from] RegistryError),
    #[error(transparent)]
    Photonics(#[from] PhotonicsError),
}

fn fmt_links(links: &[Link]) -> String {
    links
        .iter()
        .map(|(t, r)| format!("{t}->{r}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(default)]
    pub city: String,
}

/// A QKD unit at one node: a transmitter, a receiver, or a transceiver
/// holding both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub node: String,
    #[serde(default)]
    pub transmitter: Option<String>,
    #[serde(default)]
    pub receiver: Option<String>,
    #[serde(default)]
    pub detector_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub id: String,
    pub settings: ComponentStates,
    pub expected_links: Vec<Link>,
}

/// Independently switched part of the network with its own state table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub id: String,
    /// Transmitter and receiver ids whose links this domain switches.
    pub parts: Vec<String>,
    pub states: Vec<NetworkState>,
    pub cycle: Vec<String>,
}

impl Domain {
    pub fn state(&self, id: &str) -> Option<&NetworkState> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn owns_part(&self, part: &str) -> bool {
        self.parts.iter().any(|p| p == part)
    }

    pub fn initial_state(&self) -> &str {
        self.cycle
            .first()
            .map(String::as_str)
            .unwrap_or(&self.states[0].id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDefinition {
    pub schema_version: u32,
    pub name: String,
    pub fabric: String,
    pub catalog: String,
    pub calibration: String,
    #[serde(default)]
    pub misalignment: Option<String>,
    pub nodes: Vec<Node>,
    pub devices: Vec<Device>,
    pub domains: Vec<Domain>,
    #[serde(default)]
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq)]
struct Part {
    device: String,
    node: String,
    role: TerminalRole,
}

/// A loaded, cross-checked network.
#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub nodes: Vec<Node>,
    pub devices: Vec<Device>,
    pub domains: Vec<Domain>,
    pub timing: Timing,
    pub fabric: OpticalFabric,
    pub catalog: LinkCatalog,
    pub calibration: CalibrationSet,
    pub misalignment: Option<PairingMatrix>,
    parts: BTreeMap<String, Part>,
}

fn load_err(source: &dyn FixtureSource, file: &str, message: impl ToString) -> NetError {
    NetError::Load {
        file: source.locate(file),
        message: message.to_string(),
    }
}

impl Network {
    /// Loads `file` and everything it references from `source`.
    pub fn load(source: &dyn FixtureSource, file: &str) -> Result<Self> {
        let text = source.read(file)?;
        let def: NetworkDefinition = serde_json::from_str(&text).map_err(|e| {
            load_err(source, file, format!("line {}: {e}", e.line()))
        })?;
        if def.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(load_err(
                source,
                file,
                format!("unsupported schema_version {}", def.schema_version),
            ));
        }
        let catalog = LinkCatalog::from_csv(source.read(&def.catalog)?.as_bytes())
            .map_err(|e| load_err(source, &def.catalog, e))?;
        let fabric = OpticalFabric::from_json(&source.read(&def.fabric)?, &catalog)
            .map_err(|e| load_err(source, &def.fabric, e))?;
        let calibration = CalibrationSet::from_json(&source.read(&def.calibration)?)
            .map_err(|e| load_err(source, &def.calibration, e))?;
        let misalignment = match &def.misalignment {
            Some(f) => Some(
                PairingMatrix::from_csv(source.read(f)?.as_bytes())
                    .map_err(|e| load_err(source, f, e))?,
            ),
            None => None,
        };
        Self::assemble(def, fabric, catalog, calibration, misalignment)
    }

    pub fn assemble(
        def: NetworkDefinition,
        fabric: OpticalFabric,
        catalog: LinkCatalog,
        calibration: CalibrationSet,
        misalignment: Option<PairingMatrix>,
    ) -> Result<Self> {
        let bad = |m: String| NetError::Definition(m);
        let node_ids: BTreeSet<&str> = def.nodes.iter().map(|n| n.id.as_str()).collect();
        if node_ids.len() != def.nodes.len() {
            return Err(bad("duplicate node id".into()));
        }
        let mut parts = BTreeMap::new();
        for d in &def.devices {
            if !node_ids.contains(d.node.as_str()) {
                return Err(bad(format!("device {} sits at unknown node {}", d.id, d.node)));
            }
            if d.transmitter.is_none() && d.receiver.is_none() {
                return Err(bad(format!("device {} has neither transmitter nor receiver", d.id)));
            }
            for (part, role) in [
                (&d.transmitter, TerminalRole::Tx),
                (&d.receiver, TerminalRole::Rx),
            ] {
                let Some(part) = part else { continue };
                let kind = fabric.kind(part).ok_or_else(|| {
                    bad(format!("part {part} of device {} is not in the fabric", d.id))
                })?;
                if *kind != (crate::fabric::ComponentKind::Terminal { role }) {
                    return Err(bad(format!("fabric component {part} is not a {role:?} terminal")));
                }
                let p = Part {
                    device: d.id.clone(),
                    node: d.node.clone(),
                    role,
                };
                if parts.insert(part.clone(), p).is_some() {
                    return Err(bad(format!("part {part} belongs to two devices")));
                }
            }
            if d.receiver.is_some() {
                let class = d.detector_class.as_deref().ok_or_else(|| {
                    bad(format!("receiver device {} needs a detector_class", d.id))
                })?;
                if !calibration.classes.contains_key(class) {
                    return Err(bad(format!("device {}: unknown detector class {class}", d.id)));
                }
            }
        }
        let mut seen_states = BTreeSet::new();
        for dom in &def.domains {
            if dom.states.is_empty() || dom.cycle.is_empty() {
                return Err(bad(format!("domain {} needs states and a cycle", dom.id)));
            }
            for p in &dom.parts {
                if !parts.contains_key(p) {
                    return Err(NetError::UnknownPart(p.clone()));
                }
            }
            for s in &dom.states {
                if !seen_states.insert(s.id.clone()) {
                    return Err(bad(format!("state id {} is used twice", s.id)));
                }
            }
            for c in &dom.cycle {
                if dom.state(c).is_none() {
                    return Err(bad(format!("cycle of domain {} names unknown state {c}", dom.id)));
                }
            }
        }
        let net = Self {
            name: def.name,
            nodes: def.nodes,
            devices: def.devices,
            domains: def.domains,
            timing: def.timing,
            fabric,
            catalog,
            calibration,
            misalignment,
            parts,
        };
        net.validate_states()?;
        Ok(net)
    }

    /// Golden check: every state resolves to exactly its expected links.
    pub fn validate_states(&self) -> Result<()> {
        for dom in &self.domains {
            for s in &dom.states {
                let mut resolved: Vec<Link> = self
                    .domain_links(&dom.id, &s.id)?
                    .into_iter()
                    .collect();
                resolved.sort();
                let mut expected = s.expected_links.clone();
                expected.sort();
                if resolved != expected {
                    return Err(NetError::StateMismatch {
                        state: s.id.clone(),
                        expected,
                        resolved,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn state_ids(&self) -> Vec<String> {
        self.domains
            .iter()
            .flat_map(|d| d.states.iter().map(|s| s.id.clone()))
            .collect()
    }

    fn unknown_state(&self, id: &str) -> NetError {
        NetError::UnknownState {
            id: id.to_string(),
            known: self.state_ids(),
        }
    }

    /// Domain owning the state `state_id`.
    pub fn domain_of_state(&self, state_id: &str) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.state(state_id).is_some())
            .ok_or_else(|| self.unknown_state(state_id))
    }

    pub fn domain(&self, id: &str) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| NetError::UnknownDomain(id.to_string()))
    }

    /// Each domain's first cycle state.
    pub fn initial_states(&self) -> BTreeMap<String, String> {
        self.domains
            .iter()
            .map(|d| (d.id.clone(), d.initial_state().to_string()))
            .collect()
    }

    /// Component settings for a choice of one state per domain.
    pub fn settings_for(&self, chosen: &BTreeMap<String, String>) -> Result<ComponentStates> {
        let mut out = ComponentStates::new();
        for dom in &self.domains {
            let sid = chosen
                .get(&dom.id)
                .map(String::as_str)
                .unwrap_or_else(|| dom.initial_state());
            let s = dom.state(sid).ok_or_else(|| self.unknown_state(sid))?;
            out.extend(s.settings.clone());
        }
        Ok(out)
    }

    pub fn resolve(&self, chosen: &BTreeMap<String, String>) -> Result<Vec<ResolvedPath>> {
        Ok(self.fabric.resolve_paths(&self.settings_for(chosen)?)?)
    }

    /// Links switched by `domain` when it is in `state_id`, other domains in
    /// their initial states.
    pub fn domain_links(&self, domain: &str, state_id: &str) -> Result<BTreeSet<Link>> {
        let dom = self.domain(domain)?;
        if dom.state(state_id).is_none() {
            return Err(self.unknown_state(state_id));
        }
        let mut chosen = self.initial_states();
        chosen.insert(domain.to_string(), state_id.to_string());
        Ok(self
            .resolve(&chosen)?
            .into_iter()
            .filter(|p| dom.owns_part(&p.transmitter))
            .map(|p| p.link())
            .collect())
    }

    pub fn node_of(&self, part: &str) -> Result<&str> {
        self.parts
            .get(part)
            .map(|p| p.node.as_str())
            .ok_or_else(|| NetError::UnknownPart(part.to_string()))
    }

    pub fn device_of(&self, part: &str) -> Result<&str> {
        self.parts
            .get(part)
            .map(|p| p.device.as_str())
            .ok_or_else(|| NetError::UnknownPart(part.to_string()))
    }

    /// A transmitter looping back into the receiver of its own device.
    pub fn is_self_calibration(&self, link: &Link) -> bool {
        match (self.parts.get(&link.0), self.parts.get(&link.1)) {
            (Some(t), Some(r)) => t.device == r.device,
            _ => false,
        }
    }

    /// Node-level direction of a device link.
    pub fn node_link(&self, link: &Link) -> Result<Link> {
        Ok((
            self.node_of(&link.0)?.to_string(),
            self.node_of(&link.1)?.to_string(),
        ))
    }

    /// Detector serving `link`: class from the receiver device, misalignment
    /// from the back-to-back table when measured, else the calibrated default.
    pub fn detector(&self, link: &Link, field: bool) -> Result<DetectorConfig> {
        let rx_device = self.device_of(&link.1)?;
        let class = self
            .devices
            .iter()
            .find(|d| d.id == rx_device)
            .and_then(|d| d.detector_class.as_deref())
            .ok_or_else(|| NetError::UnknownPart(link.1.clone()))?;
        let e_det = self
            .misalignment
            .as_ref()
            .and_then(|m| m.get(&link.0, &link.1))
            .unwrap_or(self.calibration.e_det_default);
        Ok(self.calibration.detector(class, e_det, field)?)
    }

    pub fn nodes_hosting(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (part, p) in &self.parts {
            out.entry(p.node.clone()).or_default().push(part.clone());
        }
        out
    }
}

/// Union of node-level directed links over `states`, without self-calibration
/// loops.
pub fn coverage(network: &Network, states: &[&str]) -> Result<BTreeSet<Link>> {
    let mut out = BTreeSet::new();
    for s in states {
        let dom = network.domain_of_state(s)?;
        for link in network.domain_links(&dom.id, s)? {
            let (a, b) = network.node_link(&link)?;
            if a != b {
                out.insert((a, b));
            }
        }
    }
    Ok(out)
}

/// Unordered node pairs of a set of directed links.
pub fn unordered_pairs(links: &BTreeSet<Link>) -> BTreeSet<Link> {
    links
        .iter()
        .map(|(a, b)| {
            if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            }
        })
        .collect()
}
