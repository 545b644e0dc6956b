use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::channel::{channel_modes, sample_link, ChannelMode};
use super::scenario::{AppSpec, EventKind, Scenario, SessionSpec};
use super::timeline::{EventRecord, LinkInfo, Sample, SessionReport, Timeline, TIMELINE_SCHEMA_VERSION};
use super::{Result, SimError};
use crate::apps::{route_available, AppError, OtpMode, OtpSession, VpnTunnel, AES_KEY_BITS};
use crate::keymgmt::{KeyStore, RelayRoute};
use crate::netctl::{network_schedule, ActiveLink, Controller, Link, Network};
use crate::photonics::{asymptotic_budget, transmittance, DetectorConfig};

pub fn link_id(link: &Link) -> String {
    format!("{}->{}", link.0, link.1)
}

#[derive(Debug, Clone, Copy)]
enum Target<'a> {
    Fiber(&'a str),
    Node(&'a str),
    Receiver(&'a str),
}

/// Interval during which a target produces nothing.
#[derive(Debug, Clone, Copy)]
struct Window<'a> {
    start: f64,
    end: f64,
    target: Target<'a>,
    event: usize,
}

#[derive(Debug, Clone, Copy)]
enum Item {
    End(usize),
    Transition(usize),
    Start(usize),
}

impl Item {
    fn rank(self) -> u8 {
        match self {
            Item::End(_) => 0,
            Item::Transition(_) => 1,
            Item::Start(_) => 2,
        }
    }
}

enum App {
    Otp(OtpSession),
    Vpn(VpnTunnel),
}

struct SessionState<'s> {
    spec: &'s SessionSpec,
    app: App,
    report: SessionReport,
    starved: bool,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    network: &'a Network,
    mode: Box<dyn ChannelMode>,
    windows: Vec<Window<'a>>,
    blocked: BTreeMap<Link, Vec<(f64, f64)>>,
    detectors: BTreeMap<Link, DetectorConfig>,
    events: Vec<EventRecord>,
}

impl<'a> Sim<'a> {
    fn affects(&self, target: Target<'_>, a: &ActiveLink) -> bool {
        match target {
            Target::Fiber(f) => a.path.uses_fiber(f),
            Target::Receiver(r) => a.link.1 == r,
            Target::Node(n) => {
                self.network.node_of(&a.link.0).is_ok_and(|x| x == n)
                    || self.network.node_of(&a.link.1).is_ok_and(|x| x == n)
            }
        }
    }

    fn down_at(&self, a: &ActiveLink, t: f64, except: usize) -> bool {
        self.windows
            .iter()
            .enumerate()
            .any(|(i, w)| i != except && w.start <= t && t < w.end && self.affects(w.target, a))
    }

    /// Seconds of `(t0, t1]` during which `a` could produce key.
    fn uptime(&self, a: &ActiveLink, t0: f64, t1: f64) -> f64 {
        let mut iv: Vec<(f64, f64)> = Vec::new();
        if a.since_s > t0 {
            iv.push((t0, a.since_s));
        }
        if let Some(b) = self.blocked.get(&a.link) {
            iv.extend(b.iter().copied());
        }
        for w in &self.windows {
            if w.start < t1 && w.end > t0 && self.affects(w.target, a) {
                iv.push((w.start, w.end));
            }
        }
        let mut clipped: Vec<(f64, f64)> = iv
            .into_iter()
            .map(|(s, e)| (s.max(t0), e.min(t1)))
            .filter(|(s, e)| e > s)
            .collect();
        clipped.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut down = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in clipped {
            cur = match cur {
                Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    down += ce - cs;
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some((cs, ce)) = cur {
            down += ce - cs;
        }
        (t1 - t0 - down).max(0.0)
    }

    fn loss_db(&self, a: &ActiveLink, t: f64) -> f64 {
        let mut loss = a.path.total_loss_db;
        for f in a.path.fibers() {
            if let Some(ch) = self.network.catalog.get(f) {
                loss += self.mode.loss_offset_db(ch, t, self.scenario.seed);
            }
            for e in &self.scenario.events {
                if let EventKind::LossDrift {
                    fiber,
                    amplitude_db,
                    period_s,
                    duration_s,
                } = &e.kind
                {
                    let live = e.at_s < t && duration_s.is_none_or(|d| t < e.at_s + d);
                    if fiber == f && live {
                        loss -= amplitude_db * (TAU * (t - e.at_s) / period_s).sin();
                    }
                }
            }
        }
        loss.min(0.0)
    }

    fn dark_multiplier(&self, receiver: &str, t: f64) -> f64 {
        self.scenario
            .events
            .iter()
            .filter(|e| e.at_s < t)
            .filter_map(|e| match &e.kind {
                EventKind::TempExcursion {
                    detector,
                    dark_multiplier,
                    ..
                } if detector == receiver => Some(*dark_multiplier),
                _ => None,
            })
            .product()
    }

    fn detector(&mut self, link: &Link) -> Result<DetectorConfig> {
        if let Some(d) = self.detectors.get(link) {
            return Ok(d.clone());
        }
        let d = self.network.detector(link, self.mode.field())?;
        self.detectors.insert(link.clone(), d.clone());
        Ok(d)
    }
}

fn sample_rng(seed: u64, link: &Link, tick: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"sample\0");
    h.update(link.0.as_bytes());
    h.update([0]);
    h.update(link.1.as_bytes());
    h.update(tick.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn event_detail(kind: &EventKind) -> String {
    match kind {
        EventKind::FiberCut { repair_after_s, .. } => format!("repair after {repair_after_s} s"),
        EventKind::PowerOutage { restore_after_s, .. } => format!("restore after {restore_after_s} s"),
        EventKind::ControlHalt { resume_after_s, .. } => format!("resume after {resume_after_s} s"),
        EventKind::TempExcursion {
            dark_multiplier,
            new_setpoint_c,
            halt_s,
            ..
        } => {
            let mut s = format!("dark x{dark_multiplier}");
            if let Some(c) = new_setpoint_c {
                s += &format!(", set point {c} C");
            }
            if let Some(h) = halt_s {
                s += &format!(", halted {h} s");
            }
            s
        }
        EventKind::LossDrift {
            amplitude_db,
            period_s,
            ..
        } => format!("{amplitude_db} dB over {period_s} s"),
    }
}

fn build_sessions(scenario: &Scenario) -> Result<Vec<SessionState<'_>>> {
    scenario
        .sessions
        .iter()
        .map(|spec| {
            let route = RelayRoute::new(&spec.route).map_err(|e| SimError::Session {
                id: spec.id.clone(),
                message: e.to_string(),
            })?;
            let (app, name) = match &spec.app {
                AppSpec::Otp { mode, data_rate_bps } => (
                    App::Otp(OtpSession::new(&spec.id, route, *mode, *data_rate_bps)?),
                    "otp",
                ),
                AppSpec::Vpn {
                    refresh_period_s, ..
                } => (App::Vpn(VpnTunnel::new(&spec.id, route, *refresh_period_s)?), "vpn"),
            };
            Ok(SessionState {
                spec,
                app,
                report: SessionReport {
                    id: spec.id.clone(),
                    app: name.into(),
                    route: spec.route.clone(),
                    consumed_bits: 0,
                    served: 0,
                    card_loads: 0,
                    missed: 0,
                    exhausted_samples: 0,
                    first_exhausted_s: None,
                },
                starved: false,
            })
        })
        .collect()
}

/// Advances every session over `(t0, t1]`. Returns exhaustion records.
fn serve_sessions(
    sessions: &mut [SessionState<'_>],
    store: &mut KeyStore,
    t0: f64,
    t1: f64,
) -> Result<Vec<EventRecord>> {
    let mut log = Vec::new();
    for st in sessions.iter_mut() {
        let from = t0.max(st.spec.start_s);
        let to = st.spec.end_s.map_or(t1, |e| e.min(t1));
        if to <= from {
            continue;
        }
        let outcome: std::result::Result<(), AppError> = match &mut st.app {
            App::Otp(s) => {
                let demand = (s.data_rate_bps * (to - from)).floor() as u64;
                let mut res = Ok(());
                if let OtpMode::Preloaded { .. } = s.mode() {
                    if s.card_remaining() < demand {
                        res = s.load_card(store, false);
                        if res.is_ok() {
                            st.report.card_loads += 1;
                        }
                    }
                }
                let res = res.and_then(|_| s.consume(store, demand));
                if res.is_ok() {
                    st.report.served += demand;
                }
                st.report.consumed_bits = s.consumed_bits();
                res
            }
            App::Vpn(v) => {
                let due = v.due(from, to);
                let res = match v.refresh_many(store, due) {
                    Ok(done) if done < due => Err(AppError::KeyExhausted {
                        session: v.id().to_string(),
                        needed: (due - done) * AES_KEY_BITS,
                        available: route_available(store, v.route()),
                    }),
                    Ok(_) => Ok(()),
                    Err(e) => Err(e),
                };
                st.report.served = v.refreshes();
                st.report.missed = v.missed();
                st.report.consumed_bits = v.consumed_bits();
                res
            }
        };
        match outcome {
            Ok(()) => st.starved = false,
            Err(AppError::KeyExhausted { needed, available, .. }) => {
                st.report.exhausted_samples += 1;
                st.report.first_exhausted_s.get_or_insert(t1);
                if !st.starved {
                    log.push(EventRecord {
                        t_s: t1,
                        kind: "key_exhausted".into(),
                        phase: "applied".into(),
                        target: st.spec.id.clone(),
                        links: vec![],
                        detail: format!("needed {needed} bits, {available} available"),
                    });
                }
                st.starved = true;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(log)
}

/// Runs a scenario. The result is a pure function of the scenario, its seed
/// and the network.
pub fn run(scenario: &Scenario, network: &Network) -> Result<Timeline> {
    scenario.validate()?;
    scenario.validate_against(network)?;
    let mode = channel_modes().create(&scenario.mode, &Value::Object(scenario.mode_params.clone()))?;
    let timing = scenario.timing.clone().unwrap_or_else(|| network.timing.clone());
    let dt = scenario.sample_interval_s;
    let transitions = network_schedule(
        network,
        &scenario.policy,
        &scenario.domain_policies,
        scenario.duration_s,
    )?;
    let mut ctl = Controller::new(network, timing)?;

    let mut windows = Vec::new();
    for (i, e) in scenario.events.iter().enumerate() {
        let w = |len: f64, target| Window {
            start: e.at_s,
            end: e.at_s + len,
            target,
            event: i,
        };
        match &e.kind {
            EventKind::FiberCut {
                fiber,
                repair_after_s,
            } => windows.push(w(*repair_after_s, Target::Fiber(fiber))),
            EventKind::PowerOutage {
                node,
                restore_after_s,
            } => windows.push(w(*restore_after_s, Target::Node(node))),
            EventKind::ControlHalt {
                node,
                resume_after_s,
            } => windows.push(w(*resume_after_s, Target::Node(node))),
            EventKind::TempExcursion {
                detector,
                halt_s: Some(h),
                ..
            } => windows.push(w(*h, Target::Receiver(detector))),
            _ => {}
        }
    }

    let mut items: Vec<(f64, Item)> = Vec::new();
    items.extend(transitions.iter().enumerate().map(|(i, t)| (t.t_s, Item::Transition(i))));
    items.extend(scenario.events.iter().enumerate().map(|(i, e)| (e.at_s, Item::Start(i))));
    items.extend(windows.iter().enumerate().map(|(i, w)| (w.end, Item::End(i))));
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.rank().cmp(&b.1.rank())));

    let mut sim = Sim {
        scenario,
        network,
        mode,
        windows,
        blocked: BTreeMap::new(),
        detectors: BTreeMap::new(),
        events: Vec::new(),
    };
    if transitions.is_empty() {
        for (l, d) in ctl.start(0.0)?.established {
            sim.blocked.entry(l).or_default().push((0.0, d));
        }
    }
    let mut sessions = build_sessions(scenario)?;
    let mut store = KeyStore::new(scenario.seed);
    let mut samples = Vec::new();
    let mut infos: Vec<LinkInfo> = Vec::new();
    let mut seen: BTreeMap<Link, usize> = BTreeMap::new();
    let source = &network.calibration.source;
    let security = &network.calibration.security;

    let n_ticks = (scenario.duration_s / dt + 1e-9).floor() as u64;
    let mut cursor = 0;
    for k in 1..=n_ticks {
        let t1 = k as f64 * dt;
        let t0 = t1 - dt;
        while cursor < items.len() && items[cursor].0 < t1 {
            let (at, item) = items[cursor];
            cursor += 1;
            match item {
                Item::Transition(i) => {
                    let change = ctl.apply_state(&transitions[i].state, at)?;
                    for l in &change.dropped {
                        sim.blocked.remove(l);
                    }
                    for (l, d) in change.established {
                        sim.blocked.entry(l).or_default().push((at, at + d));
                    }
                }
                Item::Start(i) => {
                    let e = &scenario.events[i];
                    let target = match &e.kind {
                        EventKind::FiberCut { fiber, .. } | EventKind::LossDrift { fiber, .. } => {
                            Target::Fiber(fiber)
                        }
                        EventKind::PowerOutage { node, .. } | EventKind::ControlHalt { node, .. } => {
                            Target::Node(node)
                        }
                        EventKind::TempExcursion { detector, .. } => Target::Receiver(detector),
                    };
                    let links = ctl
                        .active()
                        .filter(|a| !a.self_calibration && sim.affects(target, a))
                        .map(|a| link_id(&a.link))
                        .collect();
                    sim.events.push(EventRecord {
                        t_s: at,
                        kind: e.kind.name().into(),
                        phase: "start".into(),
                        target: e.kind.target().into(),
                        links,
                        detail: event_detail(&e.kind),
                    });
                }
                Item::End(wi) => {
                    let w = sim.windows[wi];
                    let affected: Vec<Link> = ctl
                        .active()
                        .filter(|a| sim.affects(w.target, a) && !sim.down_at(a, at, wi))
                        .map(|a| a.link.clone())
                        .collect();
                    let mut names = Vec::new();
                    for l in affected {
                        if let Some(d) = ctl.reestablish(&l, at) {
                            sim.blocked.entry(l.clone()).or_default().push((at, at + d));
                            names.push(link_id(&l));
                        }
                    }
                    let e = &scenario.events[w.event];
                    sim.events.push(EventRecord {
                        t_s: at,
                        kind: e.kind.name().into(),
                        phase: "end".into(),
                        target: e.kind.target().into(),
                        links: names,
                        detail: String::new(),
                    });
                }
            }
        }
        for b in sim.blocked.values_mut() {
            b.retain(|(_, e)| *e > t0);
        }

        let mut rows: Vec<(Sample, usize)> = Vec::new();
        for a in ctl.active().filter(|a| !a.self_calibration) {
            if !seen.contains_key(&a.link) {
                let (from, to) = network.node_link(&a.link)?;
                seen.insert(a.link.clone(), infos.len());
                infos.push(LinkInfo {
                    link: link_id(&a.link),
                    transmitter: a.link.0.clone(),
                    receiver: a.link.1.clone(),
                    from_node: from,
                    to_node: to,
                    loss_db: a.path.total_loss_db,
                    fibers: a.path.fibers().map(String::from).collect(),
                });
            }
            let info = seen[&a.link];
            let (from, to) = (&infos[info].from_node, &infos[info].to_node);
            let uptime = sim.uptime(a, t0, t1);
            let mut sample = Sample {
                t_s: t1,
                link: link_id(&a.link),
                qber_signal: 0.0,
                qber_decoy: 0.0,
                vacuum_yield: 0.0,
                rate_bps: 0.0,
                pool_bits: 0,
            };
            if uptime > 0.0 {
                let mut det = sim.detector(&a.link)?;
                det.y0_dark *= sim.dark_multiplier(&a.link.1, t1);
                let loss = sim.loss_db(a, t1);
                let expected = asymptotic_budget(transmittance(loss)?, source, &det)?;
                let mut rng = sample_rng(scenario.seed, &a.link, k);
                let s = sample_link(&expected, source, security, uptime, &mut rng)?;
                let bits = (s.rate_bps * uptime).floor() as u64;
                if bits > 0 {
                    store.deposit(from, to, bits);
                }
                sample.qber_signal = s.budget.e_mu;
                sample.qber_decoy = s.budget.e_nu;
                sample.vacuum_yield = s.budget.y0;
                sample.rate_bps = bits as f64 / dt;
            }
            rows.push((sample, info));
        }
        let starved = serve_sessions(&mut sessions, &mut store, t0, t1)?;
        sim.events.extend(starved);
        for (mut s, info) in rows {
            s.pool_bits = store.available(&infos[info].from_node, &infos[info].to_node);
            samples.push(s);
        }
    }

    Ok(Timeline {
        schema_version: TIMELINE_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        mode: scenario.mode.clone(),
        seed: scenario.seed,
        duration_s: scenario.duration_s,
        sample_interval_s: dt,
        links: infos,
        transitions,
        samples,
        events: sim.events,
        sessions: sessions.into_iter().map(|s| s.report).collect(),
        pools: store.snapshot(),
    })
}
