use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::photonics::{
    key_rate_from_budget, Environment, FiberChannel, LinkBudget, PhotonicsError, SecurityParams,
    SourceConfig,
};
use crate::registry::Registry;

pub const DAY_S: f64 = 86_400.0;

/// Lab bench or deployed fiber.
pub trait ChannelMode: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether detectors see the field background and misalignment.
    fn field(&self) -> bool;

    /// Loss added to `fiber` at time `t_s`, in dB (negative is more loss).
    fn loss_offset_db(&self, fiber: &FiberChannel, t_s: f64, seed: u64) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Lab;

impl ChannelMode for Lab {
    fn name(&self) -> &'static str {
        "lab"
    }

    fn field(&self) -> bool {
        false
    }

    fn loss_offset_db(&self, _fiber: &FiberChannel, _t_s: f64, _seed: u64) -> f64 {
        0.0
    }
}

/// Deployed fiber: a daily loss swing with a seeded phase per fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub metro_amplitude_db: f64,
    pub intercity_amplitude_db: f64,
    pub period_s: f64,
}

impl Default for Field {
    fn default() -> Self {
        Self {
            metro_amplitude_db: 0.3,
            intercity_amplitude_db: 0.5,
            period_s: DAY_S,
        }
    }
}

/// Uniform phase in `[0, 2π)` fixed by the seed and fiber id.
pub fn seeded_phase(seed: u64, fiber: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"phase\0");
    h.update(fiber.as_bytes());
    let d = h.finalize();
    let u = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    TAU * (u >> 11) as f64 / (1u64 << 53) as f64
}

impl ChannelMode for Field {
    fn name(&self) -> &'static str {
        "field"
    }

    fn field(&self) -> bool {
        true
    }

    fn loss_offset_db(&self, fiber: &FiberChannel, t_s: f64, seed: u64) -> f64 {
        let amplitude = match fiber.environment {
            Environment::Intercity => self.intercity_amplitude_db,
            Environment::Metro | Environment::Patch => self.metro_amplitude_db,
        };
        amplitude * (TAU * t_s / self.period_s + seeded_phase(seed, &fiber.id)).sin()
    }
}

fn param(p: &Value, key: &str, default: f64) -> Result<f64, String> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite() && *x >= 0.0)
            .ok_or_else(|| format!("'{key}' must be a non-negative number")),
    }
}

pub fn channel_modes() -> Registry<dyn ChannelMode> {
    let mut r: Registry<dyn ChannelMode> = Registry::new("channel mode");
    r.register("lab", |_| Ok(Box::new(Lab)));
    r.register("field", |p| {
        let d = Field::default();
        let period_s = param(p, "period_s", d.period_s)?;
        if period_s == 0.0 {
            return Err("'period_s' must be positive".into());
        }
        Ok(Box::new(Field {
            metro_amplitude_db: param(p, "metro_amplitude_db", d.metro_amplitude_db)?,
            intercity_amplitude_db: param(p, "intercity_amplitude_db", d.intercity_amplitude_db)?,
            period_s,
        }))
    });
    r
}

/// One sample's worth of counted observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledLink {
    pub budget: LinkBudget,
    pub rate_bps: f64,
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    } else {
        0.0
    }
}

fn binomial<R: Rng>(rng: &mut R, n: f64, p: f64) -> f64 {
    if n <= 0.0 || p <= 0.0 {
        return 0.0;
    }
    Binomial::new(n as u64, p.min(1.0))
        .expect("valid binomial")
        .sample(rng) as f64
}

/// Counts clicks and errors over `uptime_s` of pulses and rebuilds the
/// budget from them: Poisson click counts at the expected gains, binomial
/// error counts at the expected QBERs.
pub fn sample_link<R: Rng>(
    expected: &LinkBudget,
    source: &SourceConfig,
    security: &SecurityParams,
    uptime_s: f64,
    rng: &mut R,
) -> Result<SampledLink, PhotonicsError> {
    let pulses = source.pulse_rate_hz * uptime_s;
    let n_mu = pulses * source.mix.signal_fraction();
    let n_nu = pulses * source.mix.decoy_fraction();
    let n_0 = pulses * source.mix.vacuum_fraction();
    let c_mu = poisson(rng, n_mu * expected.q_mu);
    let c_nu = poisson(rng, n_nu * expected.q_nu);
    let c_0 = poisson(rng, n_0 * expected.y0);
    let err_mu = binomial(rng, c_mu, expected.e_mu);
    let err_nu = binomial(rng, c_nu, expected.e_nu);
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let budget = LinkBudget {
        q_mu: ratio(c_mu, n_mu),
        q_nu: ratio(c_nu, n_nu),
        e_mu: ratio(err_mu, c_mu),
        e_nu: ratio(err_nu, c_nu),
        y0: ratio(c_0, n_0),
    };
    let rate_bps = key_rate_from_budget(&budget, source, security)?;
    Ok(SampledLink { budget, rate_bps })
}
