//! Discrete-event campaign simulator: switch schedules, sampled link
//! production, environment events, key consumers and exported time series.

mod channel;
mod engine;
mod scenario;
mod timeline;

pub use channel::{channel_modes, sample_link, seeded_phase, ChannelMode, Field, Lab, SampledLink, DAY_S};
pub use engine::{link_id, run};
pub use scenario::{
    AppSpec, EnvironmentEvent, EventKind, Scenario, SessionSpec, DEFAULT_SAMPLE_INTERVAL_S,
    SCENARIO_SCHEMA_VERSION,
};
pub use timeline::{
    read_samples_csv, write_samples_csv, EventRecord, LinkInfo, LinkSummary, ModeComparison,
    ModeDelta, Sample, SessionReport, Summary, Timeline, SAMPLE_CSV_HEADER, TIMELINE_SCHEMA_VERSION,
};

use crate::apps::AppError;
use crate::fixtures::FixtureError;
use crate::netctl::{NetError, Network};
use crate::photonics::PhotonicsError;
use crate::registry::RegistryError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("{file}: {message}")]
    Load { file: String, message: String },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("event {index}: {message}")]
    Event { index: usize, message: String },
    #[error("session {id}: {message}")]
    Session { id: String, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Photonics(#[from] PhotonicsError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("scenarios differ in more than their mode: {0}")]
    ModeMismatch(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Runs two scenarios that differ only in channel mode (and name) and reports the
/// per-link change from the first to the second.
pub fn compare_modes(lab: &Scenario, field: &Scenario, network: &Network) -> Result<ModeComparison> {
    let strip = |s: &Scenario| {
        let mut s = s.clone();
        s.mode.clear();
        s.mode_params.clear();
        s.name.clear();
        s
    };
    if strip(lab) != strip(field) {
        return Err(SimError::ModeMismatch(format!("{} vs {}", lab.name, field.name)));
    }
    let a = run(lab, network)?;
    let b = run(field, network)?;
    Ok(ModeComparison::from_timelines(&a, &b))
}
