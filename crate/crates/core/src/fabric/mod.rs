//! Optical switching fabric.
//!
//! Components are joined port-to-port by fiber segments. Given a state for
//! every switch, light from each transmitter is traced through circulators,
//! switches and splitters until it reaches a receiver, dies on an unconnected
//! port, or closes a loop. The result is the set of active
//! transmitter-to-receiver paths with their accumulated loss.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::photonics::LinkCatalog;

pub const FABRIC_SCHEMA_VERSION: u32 = 1;

/// Switch settings keyed by component id: `cross`/`bar` for 2x2 switches,
/// the selected port for 1xN switches, `on`/`off` for terminals.
pub type ComponentStates = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FabricError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported fabric schema_version {0}")]
    Schema(u32),
    #[error("duplicate component '{0}'")]
    DuplicateComponent(String),
    #[error("component '{id}': {message}")]
    BadComponent { id: String, message: String },
    #[error("segment {index}: unknown component in '{port}'")]
    UnknownComponent { index: usize, port: String },
    #[error("segment {index}: component '{component}' has no port '{port}'")]
    UnknownPort {
        index: usize,
        component: String,
        port: String,
    },
    #[error("segment {index}: malformed port reference '{port}' (expected COMPONENT.PORT)")]
    BadPortRef { index: usize, port: String },
    #[error("segment {index}: port '{port}' is already connected")]
    PortReused { index: usize, port: String },
    #[error("segment {index}: unknown fiber '{fiber}'")]
    UnknownFiber { index: usize, fiber: String },
    #[error("segment {index}: loss must be non-positive, got {loss_db} dB")]
    PositiveLoss { index: usize, loss_db: f64 },
    #[error("a splitter needs at least one branch")]
    ZeroBranches,
    #[error("no state given for switch '{0}'")]
    MissingState(String),
    #[error("state '{state}' is not valid for '{component}'")]
    InvalidState { component: String, state: String },
    #[error("state given for unknown component '{0}'")]
    UnknownStateTarget(String),
    #[error("fabric conflict: transmitter {from} reaches transmitter {to}")]
    TransmitterLoop { from: String, to: String },
    #[error("fabric conflict: receiver {from} is optically joined to receiver {to}")]
    ReceiverLoop { from: String, to: String },
    #[error("fabric conflict: receiver {receiver} is reached by {}", transmitters.join(", "))]
    Contention {
        receiver: String,
        transmitters: Vec<String>,
    },
    #[error("fabric conflict: transmitter {transmitter} fans out to {}", receivers.join(", "))]
    FanOut {
        transmitter: String,
        receivers: Vec<String>,
    },
}

pub type Result<T> = std::result::Result<T, FabricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalRole {
    Tx,
    Rx,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentKind {
    Circulator3,
    #[serde(rename = "switch_1x2")]
    Switch1x2,
    #[serde(rename = "switch_2x2")]
    Switch2x2,
    #[serde(rename = "switch_1xn")]
    Switch1xN { ports: u32 },
    Splitter { branches: u32 },
    Terminal { role: TerminalRole },
}

impl ComponentKind {
    pub fn ports(&self) -> Vec<String> {
        let numbered = |n: u32| {
            std::iter::once("c".to_string())
                .chain((1..=n).map(|i| i.to_string()))
                .collect()
        };
        match self {
            ComponentKind::Circulator3 => vec!["1".into(), "2".into(), "3".into()],
            ComponentKind::Switch1x2 => numbered(2),
            ComponentKind::Switch1xN { ports } => numbered(*ports),
            ComponentKind::Splitter { branches } => numbered(*branches),
            ComponentKind::Switch2x2 => ["a1", "a2", "b1", "b2"].map(String::from).to_vec(),
            ComponentKind::Terminal { .. } => vec!["p".into()],
        }
    }

    pub fn is_switch(&self) -> bool {
        matches!(
            self,
            ComponentKind::Switch1x2 | ComponentKind::Switch2x2 | ComponentKind::Switch1xN { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: ComponentKind,
    /// Insertion loss per pass; falls back to the fabric default for the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InsertionLosses {
    pub circulator_db: f64,
    pub switch_db: f64,
}

impl Default for InsertionLosses {
    fn default() -> Self {
        Self {
            circulator_db: -0.8,
            switch_db: -0.6,
        }
    }
}

/// On-disk form of a fabric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricSpec {
    pub schema_version: u32,
    #[serde(default)]
    pub insertion_losses: InsertionLosses,
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub segments: Vec<SegmentSpec>,
}

impl FabricSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| FabricError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if spec.schema_version != FABRIC_SCHEMA_VERSION {
            return Err(FabricError::Schema(spec.schema_version));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub component: String,
    pub port: String,
}

impl PortRef {
    fn new(component: &str, port: &str) -> Self {
        Self {
            component: component.to_string(),
            port: port.to_string(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.port)
    }
}

impl Serialize for PortRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    kind: ComponentKind,
    loss_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    a: PortRef,
    b: PortRef,
    loss_db: f64,
    fiber: Option<String>,
}

/// One traversed fiber segment of a resolved path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hop {
    pub from: PortRef,
    pub to: PortRef,
    pub loss_db: f64,
    pub fiber: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedPath {
    pub transmitter: String,
    pub receiver: String,
    pub hops: Vec<Hop>,
    /// Intermediate components in traversal order, with their insertion loss.
    pub components: Vec<(String, f64)>,
    pub total_loss_db: f64,
}

impl ResolvedPath {
    pub fn fibers(&self) -> impl Iterator<Item = &str> {
        self.hops.iter().filter_map(|h| h.fiber.as_deref())
    }

    pub fn uses_fiber(&self, fiber: &str) -> bool {
        self.fibers().any(|f| f == fiber)
    }

    pub fn link(&self) -> (String, String) {
        (self.transmitter.clone(), self.receiver.clone())
    }
}

/// A validated wiring graph.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalFabric {
    components: BTreeMap<String, Component>,
    segments: Vec<Segment>,
    attached: BTreeMap<PortRef, usize>,
}

/// Terminal reached, hops walked and components crossed with their loss.
type Trace = (String, Vec<Hop>, Vec<(String, f64)>);

impl OpticalFabric {
    pub fn empty() -> Self {
        Self {
            components: BTreeMap::new(),
            segments: Vec::new(),
            attached: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str, catalog: &LinkCatalog) -> Result<Self> {
        Self::build(&FabricSpec::from_json(text)?, catalog)
    }

    pub fn build(spec: &FabricSpec, catalog: &LinkCatalog) -> Result<Self> {
        let mut components = BTreeMap::new();
        for c in &spec.components {
            let bad = |message: &str| FabricError::BadComponent {
                id: c.id.clone(),
                message: message.to_string(),
            };
            if c.id.is_empty() || c.id.contains('.') {
                return Err(bad("id must be non-empty and contain no '.'"));
            }
            match c.kind {
                ComponentKind::Splitter { branches: 0 } => {
                    return Err(bad("splitter needs at least one branch"))
                }
                ComponentKind::Switch1xN { ports: 0 } => {
                    return Err(bad("switch needs at least one port"))
                }
                _ => {}
            }
            let default_loss = match &c.kind {
                ComponentKind::Circulator3 => spec.insertion_losses.circulator_db,
                ComponentKind::Switch1x2
                | ComponentKind::Switch2x2
                | ComponentKind::Switch1xN { .. } => spec.insertion_losses.switch_db,
                ComponentKind::Splitter { branches } => splitter_loss(*branches)?,
                ComponentKind::Terminal { .. } => 0.0,
            };
            let loss_db = c.loss_db.unwrap_or(default_loss);
            if loss_db > 0.0 || loss_db.is_nan() {
                return Err(bad("insertion loss must be non-positive"));
            }
            let component = Component {
                kind: c.kind.clone(),
                loss_db,
            };
            if components.insert(c.id.clone(), component).is_some() {
                return Err(FabricError::DuplicateComponent(c.id.clone()));
            }
        }

        let mut segments = Vec::with_capacity(spec.segments.len());
        let mut attached = BTreeMap::new();
        for (index, s) in spec.segments.iter().enumerate() {
            let a = parse_port(index, &s.a, &components)?;
            let b = parse_port(index, &s.b, &components)?;
            for p in [&a, &b] {
                if attached.insert(p.clone(), index).is_some() {
                    return Err(FabricError::PortReused {
                        index,
                        port: p.to_string(),
                    });
                }
            }
            let loss_db = match (&s.fiber, s.loss_db) {
                (_, Some(l)) => l,
                (Some(f), None) => {
                    catalog
                        .get(f)
                        .ok_or_else(|| FabricError::UnknownFiber {
                            index,
                            fiber: f.clone(),
                        })?
                        .loss_db
                }
                (None, None) => 0.0,
            };
            if loss_db > 0.0 || loss_db.is_nan() {
                return Err(FabricError::PositiveLoss { index, loss_db });
            }
            segments.push(Segment {
                a,
                b,
                loss_db,
                fiber: s.fiber.clone(),
            });
        }
        Ok(Self {
            components,
            segments,
            attached,
        })
    }

    pub fn terminals(&self, role: TerminalRole) -> impl Iterator<Item = &str> {
        self.components.iter().filter_map(move |(id, c)| match c.kind {
            ComponentKind::Terminal { role: r } if r == role => Some(id.as_str()),
            _ => None,
        })
    }

    pub fn switches(&self) -> impl Iterator<Item = &str> {
        self.components
            .iter()
            .filter(|(_, c)| c.kind.is_switch())
            .map(|(id, _)| id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.components.contains_key(id)
    }

    pub fn kind(&self, id: &str) -> Option<&ComponentKind> {
        self.components.get(id).map(|c| &c.kind)
    }

    /// Checks that `states` names only known components, gives a valid
    /// setting for each, and covers every switch.
    pub fn check_states(&self, states: &ComponentStates) -> Result<()> {
        for (id, state) in states {
            let c = self
                .components
                .get(id)
                .ok_or_else(|| FabricError::UnknownStateTarget(id.clone()))?;
            let valid = match &c.kind {
                ComponentKind::Switch2x2 => state == "cross" || state == "bar",
                ComponentKind::Terminal { .. } => state == "on" || state == "off",
                ComponentKind::Circulator3 | ComponentKind::Splitter { .. } => false,
                kind => kind.ports().iter().skip(1).any(|p| p == state),
            };
            if !valid {
                return Err(FabricError::InvalidState {
                    component: id.clone(),
                    state: state.clone(),
                });
            }
        }
        for id in self.switches() {
            if !states.contains_key(id) {
                return Err(FabricError::MissingState(id.to_string()));
            }
        }
        Ok(())
    }

    fn exits(&self, id: &str, port: &str, states: &ComponentStates, reverse: bool) -> Vec<String> {
        let c = &self.components[id];
        let state = states.get(id).map(String::as_str);
        match &c.kind {
            ComponentKind::Circulator3 => {
                let next = match (port, reverse) {
                    ("1", false) | ("3", true) => "2",
                    ("2", false) | ("1", true) => "3",
                    _ => "1",
                };
                vec![next.to_string()]
            }
            ComponentKind::Switch1x2 | ComponentKind::Switch1xN { .. } => {
                let selected = state.unwrap_or("");
                if port == "c" {
                    vec![selected.to_string()]
                } else if port == selected {
                    vec!["c".to_string()]
                } else {
                    vec![]
                }
            }
            ComponentKind::Switch2x2 => {
                let partner = match (state, port) {
                    (Some("bar"), "a1") => "b1",
                    (Some("bar"), "b1") => "a1",
                    (Some("bar"), "a2") => "b2",
                    (Some("bar"), "b2") => "a2",
                    (_, "a1") => "b2",
                    (_, "b2") => "a1",
                    (_, "a2") => "b1",
                    _ => "a2",
                };
                vec![partner.to_string()]
            }
            ComponentKind::Splitter { branches } => {
                if port == "c" {
                    (1..=*branches).map(|i| i.to_string()).collect()
                } else {
                    vec!["c".to_string()]
                }
            }
            ComponentKind::Terminal { .. } => vec![],
        }
    }

    fn enabled(&self, id: &str, states: &ComponentStates) -> bool {
        states.get(id).map(String::as_str) != Some("off")
    }

    /// Follows light from `start` (a terminal) and returns every terminal it
    /// reaches, with the path taken. `reverse` runs circulators backwards.
    fn trace(
        &self,
        start: &str,
        states: &ComponentStates,
        reverse: bool,
    ) -> Vec<Trace> {
        struct Frame {
            out: PortRef,
            hops: Vec<Hop>,
            comps: Vec<(String, f64)>,
        }
        let mut found = Vec::new();
        let mut visited: HashSet<PortRef> = HashSet::new();
        let mut stack = vec![Frame {
            out: PortRef::new(start, "p"),
            hops: Vec::new(),
            comps: Vec::new(),
        }];
        while let Some(Frame { out, hops, comps }) = stack.pop() {
            let Some(&seg_idx) = self.attached.get(&out) else {
                continue;
            };
            let seg = &self.segments[seg_idx];
            let entry = if seg.a == out { &seg.b } else { &seg.a };
            if !visited.insert(entry.clone()) {
                continue;
            }
            let mut hops = hops;
            hops.push(Hop {
                from: out.clone(),
                to: entry.clone(),
                loss_db: seg.loss_db,
                fiber: seg.fiber.clone(),
            });
            let c = &self.components[&entry.component];
            if let ComponentKind::Terminal { .. } = c.kind {
                found.push((entry.component.clone(), hops, comps));
                continue;
            }
            let mut comps = comps;
            comps.push((entry.component.clone(), c.loss_db));
            let exits = self.exits(&entry.component, &entry.port, states, reverse);
            for port in exits.into_iter().rev() {
                stack.push(Frame {
                    out: PortRef::new(&entry.component, &port),
                    hops: hops.clone(),
                    comps: comps.clone(),
                });
            }
        }
        found
    }

    /// Active transmitter-to-receiver paths under `states`.
    pub fn resolve_paths(&self, states: &ComponentStates) -> Result<Vec<ResolvedPath>> {
        self.check_states(states)?;
        let mut paths = Vec::new();
        let mut by_receiver: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for tx in self.terminals(TerminalRole::Tx) {
            if !self.enabled(tx, states) {
                continue;
            }
            let mut receivers = Vec::new();
            for (target, hops, comps) in self.trace(tx, states, false) {
                match self.components[&target].kind {
                    ComponentKind::Terminal {
                        role: TerminalRole::Tx,
                    } => {
                        return Err(FabricError::TransmitterLoop {
                            from: tx.to_string(),
                            to: target,
                        })
                    }
                    _ if !self.enabled(&target, states) => {}
                    _ => {
                        let total_loss_db = hops.iter().map(|h| h.loss_db).sum::<f64>()
                            + comps.iter().map(|(_, l)| l).sum::<f64>();
                        receivers.push(target.clone());
                        by_receiver
                            .entry(target.clone())
                            .or_default()
                            .push(tx.to_string());
                        paths.push(ResolvedPath {
                            transmitter: tx.to_string(),
                            receiver: target,
                            hops,
                            components: comps,
                            total_loss_db,
                        });
                    }
                }
            }
            if receivers.len() > 1 {
                receivers.sort();
                return Err(FabricError::FanOut {
                    transmitter: tx.to_string(),
                    receivers,
                });
            }
        }
        for (receiver, transmitters) in by_receiver {
            if transmitters.len() > 1 {
                return Err(FabricError::Contention {
                    receiver,
                    transmitters,
                });
            }
        }
        for rx in self.terminals(TerminalRole::Rx) {
            if !self.enabled(rx, states) {
                continue;
            }
            for (target, _, _) in self.trace(rx, states, true) {
                let is_rx = matches!(
                    self.components[&target].kind,
                    ComponentKind::Terminal {
                        role: TerminalRole::Rx
                    }
                );
                if is_rx && self.enabled(&target, states) {
                    return Err(FabricError::ReceiverLoop {
                        from: rx.to_string(),
                        to: target,
                    });
                }
            }
        }
        paths.sort_by_cached_key(ResolvedPath::link);
        Ok(paths)
    }

    /// The `(transmitter, receiver)` pairs of [`resolve_paths`](Self::resolve_paths).
    pub fn resolve_links(&self, states: &ComponentStates) -> Result<BTreeSet<(String, String)>> {
        Ok(self
            .resolve_paths(states)?
            .into_iter()
            .map(|p| (p.transmitter, p.receiver))
            .collect())
    }
}

fn parse_port(
    index: usize,
    text: &str,
    components: &BTreeMap<String, Component>,
) -> Result<PortRef> {
    let (id, port) = text.split_once('.').ok_or_else(|| FabricError::BadPortRef {
        index,
        port: text.to_string(),
    })?;
    let c = components
        .get(id)
        .ok_or_else(|| FabricError::UnknownComponent {
            index,
            port: text.to_string(),
        })?;
    if !c.kind.ports().iter().any(|p| p == port) {
        return Err(FabricError::UnknownPort {
            index,
            component: id.to_string(),
            port: port.to_string(),
        });
    }
    Ok(PortRef::new(id, port))
}

/// Nodes a real-time full-mesh router can interconnect with `n_wavelengths`.
pub fn rtfm_capacity(n_wavelengths: u32) -> u32 {
    2 * n_wavelengths + 1
}

/// Pairs that can key simultaneously through a full-mesh optical switch with
/// `n_ports` node-facing ports.
pub fn fmos_simultaneous_limit(n_ports: u32) -> u32 {
    n_ports / 2
}

/// Per-branch insertion loss of an ideal 1xN splitter.
pub fn splitter_loss(n_branches: u32) -> Result<f64> {
    if n_branches == 0 {
        return Err(FabricError::ZeroBranches);
    }
    Ok(-10.0 * f64::from(n_branches).log10())
}

#[cfg(test)]
mod tests;
