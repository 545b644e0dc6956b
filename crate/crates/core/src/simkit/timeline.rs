use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Result, SimError};
use crate::keymgmt::PoolSnapshot;
use crate::netctl::Transition;

pub const TIMELINE_SCHEMA_VERSION: u32 = 1;
pub const SAMPLE_CSV_HEADER: &str = "t_s,link,qber_signal,qber_decoy,vacuum_yield,rate_bps,pool_bits";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub link: String,
    pub qber_signal: f64,
    pub qber_decoy: f64,
    pub vacuum_yield: f64,
    pub rate_bps: f64,
    /// Pool balance of the link's node pair after this tick.
    pub pool_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub link: String,
    pub transmitter: String,
    pub receiver: String,
    pub from_node: String,
    pub to_node: String,
    pub loss_db: f64,
    pub fibers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_s: f64,
    pub kind: String,
    /// `start`, `end` or `applied`.
    pub phase: String,
    pub target: String,
    pub links: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub id: String,
    pub app: String,
    pub route: Vec<String>,
    /// Key bits taken from the pools (card loads included).
    pub consumed_bits: u64,
    /// Payload bits encrypted, or seed keys installed.
    pub served: u64,
    pub card_loads: u64,
    pub missed: u64,
    pub exhausted_samples: u64,
    pub first_exhausted_s: Option<f64>,
}

/// Everything one run produced. Immutable once returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_interval_s: f64,
    pub links: Vec<LinkInfo>,
    pub transitions: Vec<Transition>,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub sessions: Vec<SessionReport>,
    pub pools: Vec<PoolSnapshot>,
}

fn io(e: impl ToString) -> SimError {
    SimError::Io(e.to_string())
}

impl Timeline {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("timeline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)
            .map_err(|e| SimError::Scenario(format!("timeline line {}: {e}", e.line())))?;
        if t.schema_version != TIMELINE_SCHEMA_VERSION {
            return Err(SimError::Scenario(format!(
                "unsupported timeline schema_version {}",
                t.schema_version
            )));
        }
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_samples_csv(&self.samples, w)
    }

    pub fn write_events_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t_s", "kind", "phase", "target", "links", "detail"])
            .map_err(io)?;
        for e in &self.events {
            out.write_record([
                e.t_s.to_string(),
                e.kind.clone(),
                e.phase.clone(),
                e.target.clone(),
                e.links.join(" "),
                e.detail.clone(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn samples_for<'a>(&'a self, link: &'a str) -> impl Iterator<Item = &'a Sample> + 'a {
        self.samples.iter().filter(move |s| s.link == link)
    }

    pub fn summary(&self) -> Summary {
        Summary::from_samples(&self.samples, &self.links)
    }
}

pub fn write_samples_csv<W: Write>(samples: &[Sample], w: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(w);
    writeln!(out, "{SAMPLE_CSV_HEADER}").map_err(io)?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.t_s, s.link, s.qber_signal, s.qber_decoy, s.vacuum_yield, s.rate_bps, s.pool_bits
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(io)?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != SAMPLE_CSV_HEADER {
        return Err(SimError::Scenario(format!(
            "unexpected timeline header, expected '{SAMPLE_CSV_HEADER}'"
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io)?;
        let s: Sample = rec
            .deserialize(Some(&headers))
            .map_err(|e| SimError::Scenario(format!("timeline line {}: {e}", i + 2)))?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub link: String,
    #[serde(default)]
    pub from_node: String,
    #[serde(default)]
    pub to_node: String,
    pub samples: usize,
    /// Samples with a positive rate.
    pub producing: usize,
    pub mean_rate_bps: f64,
    pub mean_qber_signal: f64,
    pub mean_qber_decoy: f64,
    pub sd_qber_signal: f64,
    pub produced_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub links: Vec<LinkSummary>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl Summary {
    /// Per-link statistics. Means are over producing samples; `links`
    /// supplies node labels when available.
    pub fn from_samples(samples: &[Sample], links: &[LinkInfo]) -> Self {
        let interval = infer_interval(samples);
        let mut by_link: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
        for s in samples {
            by_link.entry(&s.link).or_default().push(s);
        }
        let order: Vec<&str> = links
            .iter()
            .map(|l| l.link.as_str())
            .filter(|l| by_link.contains_key(l))
            .chain(by_link.keys().copied().filter(|k| !links.iter().any(|l| l.link == *k)))
            .collect();
        let out = order
            .into_iter()
            .map(|link| {
                let rows = &by_link[link];
                let prod: Vec<&&Sample> = rows.iter().filter(|s| s.rate_bps > 0.0).collect();
                let pick = |f: fn(&Sample) -> f64| prod.iter().map(|s| f(s)).collect::<Vec<_>>();
                let info = links.iter().find(|l| l.link == link);
                LinkSummary {
                    link: link.to_string(),
                    from_node: info.map(|i| i.from_node.clone()).unwrap_or_default(),
                    to_node: info.map(|i| i.to_node.clone()).unwrap_or_default(),
                    samples: rows.len(),
                    producing: prod.len(),
                    mean_rate_bps: mean(&pick(|s| s.rate_bps)),
                    mean_qber_signal: mean(&pick(|s| s.qber_signal)),
                    mean_qber_decoy: mean(&pick(|s| s.qber_decoy)),
                    sd_qber_signal: sd(&pick(|s| s.qber_signal)),
                    produced_bits: rows.iter().map(|s| (s.rate_bps * interval).round()).sum(),
                }
            })
            .collect();
        Self { links: out }
    }

    pub fn link(&self, link: &str) -> Option<&LinkSummary> {
        self.links.iter().find(|l| l.link == link)
    }

    /// Plain-text table, one row per link.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<14} {:>8} {:>9} {:>10} {:>9} {:>9}",
            "link", "nodes", "samples", "producing", "rate kbps", "qber sig", "qber dec"
        );
        for l in &self.links {
            let nodes = if l.from_node.is_empty() {
                "-".to_string()
            } else {
                format!("{}->{}", l.from_node, l.to_node)
            };
            let _ = writeln!(
                s,
                "{:<10} {:<14} {:>8} {:>9} {:>10.2} {:>8.2}% {:>8.2}%",
                l.link,
                nodes,
                l.samples,
                l.producing,
                l.mean_rate_bps / 1000.0,
                l.mean_qber_signal * 100.0,
                l.mean_qber_decoy * 100.0
            );
        }
        s
    }
}

/// Smallest positive gap between consecutive samples of one link.
fn infer_interval(samples: &[Sample]) -> f64 {
    let mut last: BTreeMap<&str, f64> = BTreeMap::new();
    let mut best = f64::INFINITY;
    for s in samples {
        if let Some(prev) = last.insert(&s.link, s.t_s) {
            let d = s.t_s - prev;
            if d > 0.0 && d < best {
                best = d;
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        samples.first().map_or(0.0, |s| s.t_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDelta {
    pub link: String,
    pub lab_qber_signal: f64,
    pub field_qber_signal: f64,
    pub delta_qber_signal: f64,
    pub lab_rate_bps: f64,
    pub field_rate_bps: f64,
    /// `(field - lab) / lab`.
    pub rate_change: f64,
    pub lab_sd_qber_signal: f64,
    pub field_sd_qber_signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub links: Vec<ModeDelta>,
}

impl ModeComparison {
    pub fn from_timelines(lab: &Timeline, field: &Timeline) -> Self {
        let (a, b) = (lab.summary(), field.summary());
        let links = a
            .links
            .iter()
            .filter_map(|l| {
                let f = b.link(&l.link)?;
                Some(ModeDelta {
                    link: l.link.clone(),
                    lab_qber_signal: l.mean_qber_signal,
                    field_qber_signal: f.mean_qber_signal,
                    delta_qber_signal: f.mean_qber_signal - l.mean_qber_signal,
                    lab_rate_bps: l.mean_rate_bps,
                    field_rate_bps: f.mean_rate_bps,
                    rate_change: if l.mean_rate_bps > 0.0 {
                        (f.mean_rate_bps - l.mean_rate_bps) / l.mean_rate_bps
                    } else {
                        0.0
                    },
                    lab_sd_qber_signal: l.sd_qber_signal,
                    field_sd_qber_signal: f.sd_qber_signal,
                })
            })
            .collect();
        Self { links }
    }

    pub fn link(&self, link: &str) -> Option<&ModeDelta> {
        self.links.iter().find(|l| l.link == link)
    }
}
