//! Single-link physics for decoy-state BB84 over fiber.
//!
//! Everything here is a pure function of its inputs. The model is asymptotic:
//! gains and QBERs are expectations, and statistical fluctuation is layered on
//! by the simulator, not here.
//!
//! Channel and detector combine into one overall efficiency
//! `eta = transmittance * eta_det * duty_factor`. A weak coherent pulse of mean
//! photon number `mu` then clicks with probability `Q = Y0 + 1 - exp(-eta mu)`
//! and is in error with probability
//! `E Q = e0 Y0 + e_det (1 - exp(-eta mu))`.

mod calibration;
mod catalog;

pub use calibration::{
    fit_calibration, CalibrationSet, DetectorClass, FieldAdjustment, FitBounds, FitReport,
    FitTarget, Observable, CALIBRATION_SCHEMA_VERSION,
};
pub use catalog::{channel_from_length, Environment, FiberChannel, LinkCatalog};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhotonicsError {
    #[error("loss must be non-positive, got {0} dB")]
    PositiveLoss(f64),
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("QBER undefined: expected gain is zero")]
    UndefinedQber,
    #[error("decoy intensity {nu} must be strictly below signal intensity {mu}")]
    DegenerateDecoy { mu: f64, nu: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, PhotonicsError>;

/// Error fraction of noise clicks: a dark count is a coin toss.
pub const NOISE_ERROR_FRACTION: f64 = 0.5;

/// Signal : decoy : vacuum pulse ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseMix {
    pub signal: u32,
    pub decoy: u32,
    pub vacuum: u32,
}

impl PulseMix {
    pub fn total(&self) -> u32 {
        self.signal + self.decoy + self.vacuum
    }

    pub fn signal_fraction(&self) -> f64 {
        f64::from(self.signal) / f64::from(self.total())
    }

    pub fn decoy_fraction(&self) -> f64 {
        f64::from(self.decoy) / f64::from(self.total())
    }

    pub fn vacuum_fraction(&self) -> f64 {
        f64::from(self.vacuum) / f64::from(self.total())
    }
}

impl Default for PulseMix {
    fn default() -> Self {
        Self {
            signal: 14,
            decoy: 1,
            vacuum: 1,
        }
    }
}

/// Transmitter-side decoy-state source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub pulse_rate_hz: f64,
    pub mu_signal: f64,
    pub nu_decoy: f64,
    pub mix: PulseMix,
    pub quantum_wavelength_nm: f64,
    pub sync_wavelength_nm: f64,
    pub pulse_width_ps: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            pulse_rate_hz: 2.0e7,
            mu_signal: 0.65,
            nu_decoy: 0.1,
            mix: PulseMix::default(),
            quantum_wavelength_nm: 1550.92,
            sync_wavelength_nm: 1549.32,
            pulse_width_ps: 600.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rate_hz > 0.0) {
            return Err(PhotonicsError::InvalidParameter(format!(
                "pulse rate must be positive, got {}",
                self.pulse_rate_hz
            )));
        }
        if !(self.nu_decoy > 0.0 && self.mu_signal < 1.0) {
            return Err(PhotonicsError::InvalidParameter(format!(
                "intensities must satisfy 0 < nu < mu < 1, got mu={} nu={}",
                self.mu_signal, self.nu_decoy
            )));
        }
        if self.nu_decoy >= self.mu_signal {
            return Err(PhotonicsError::DegenerateDecoy {
                mu: self.mu_signal,
                nu: self.nu_decoy,
            });
        }
        if self.mix.signal == 0 || self.mix.decoy == 0 || self.mix.vacuum == 0 {
            return Err(PhotonicsError::InvalidParameter(
                "pulse mix entries must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Receiver-side single-photon detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub eta_det: f64,
    pub y0_dark: f64,
    #[serde(default)]
    pub y_background: f64,
    pub e_det: f64,
    #[serde(default = "default_e0")]
    pub e0: f64,
    pub apd_count: u8,
}

fn default_e0() -> f64 {
    NOISE_ERROR_FRACTION
}

impl DetectorConfig {
    /// Fraction of gates actually watched by an APD. With a single APD and
    /// four-phase modulation only half the detection slots are covered.
    pub fn duty_factor(&self) -> f64 {
        if self.apd_count >= 2 {
            1.0
        } else {
            0.5
        }
    }

    /// Total vacuum yield: dark counts plus leakage photons.
    pub fn y0(&self) -> f64 {
        self.y0_dark + self.y_background
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_det > 0.0 && self.eta_det <= 1.0) {
            return Err(PhotonicsError::Domain {
                what: "eta_det",
                value: self.eta_det,
            });
        }
        if !(self.y0_dark >= 0.0) {
            return Err(PhotonicsError::Domain {
                what: "y0_dark",
                value: self.y0_dark,
            });
        }
        if !(self.y_background >= 0.0) {
            return Err(PhotonicsError::Domain {
                what: "y_background",
                value: self.y_background,
            });
        }
        if !(0.0..0.5).contains(&self.e_det) {
            return Err(PhotonicsError::Domain {
                what: "e_det",
                value: self.e_det,
            });
        }
        if !matches!(self.apd_count, 1 | 2) {
            return Err(PhotonicsError::InvalidParameter(format!(
                "apd_count must be 1 or 2, got {}",
                self.apd_count
            )));
        }
        Ok(())
    }
}

/// Post-processing constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityParams {
    pub sifting: f64,
    pub f_ec: f64,
    pub qber_abort_threshold: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            sifting: 0.5,
            f_ec: 1.16,
            qber_abort_threshold: 0.11,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sifting > 0.0 && self.sifting <= 1.0) {
            return Err(PhotonicsError::Domain {
                what: "sifting",
                value: self.sifting,
            });
        }
        if !(self.f_ec >= 1.0) {
            return Err(PhotonicsError::Domain {
                what: "f_ec",
                value: self.f_ec,
            });
        }
        Ok(())
    }
}

/// Observed (or expected) per-intensity gains and error rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub q_mu: f64,
    pub q_nu: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub y0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyBounds {
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// Set when an intermediate bound went negative and was clamped.
    pub clamped: bool,
}

/// Decibel loss to linear power fraction.
pub fn transmittance(loss_db: f64) -> Result<f64> {
    if loss_db > 0.0 || loss_db.is_nan() {
        return Err(PhotonicsError::PositiveLoss(loss_db));
    }
    Ok(10f64.powf(loss_db / 10.0))
}

/// Overall detection efficiency of a channel/detector pair.
pub fn overall_efficiency(transmittance: f64, detector: &DetectorConfig) -> f64 {
    transmittance * detector.eta_det * detector.duty_factor()
}

/// `1 - exp(-eta mu)`, computed without cancellation for tiny arguments.
fn signal_click_probability(mu: f64, eta: f64) -> f64 {
    -(-eta * mu).exp_m1()
}

pub fn expected_gain(mu: f64, eta: f64, y0: f64) -> f64 {
    y0 + signal_click_probability(mu, eta)
}

pub fn expected_qber(mu: f64, eta: f64, y0: f64, e_det: f64, e0: f64) -> Result<f64> {
    let gain = expected_gain(mu, eta, y0);
    if gain <= 0.0 {
        return Err(PhotonicsError::UndefinedQber);
    }
    Ok((e0 * y0 + e_det * signal_click_probability(mu, eta)) / gain)
}

/// Expected budget for a channel of the given transmittance.
pub fn asymptotic_budget(
    transmittance: f64,
    source: &SourceConfig,
    detector: &DetectorConfig,
) -> Result<LinkBudget> {
    let eta = overall_efficiency(transmittance, detector);
    let y0 = detector.y0();
    let e0 = detector.e0;
    let (mu, nu) = (source.mu_signal, source.nu_decoy);
    Ok(LinkBudget {
        q_mu: expected_gain(mu, eta, y0),
        q_nu: expected_gain(nu, eta, y0),
        e_mu: expected_qber(mu, eta, y0, detector.e_det, e0)?,
        e_nu: expected_qber(nu, eta, y0, detector.e_det, e0)?,
        y0,
    })
}

/// Vacuum + weak-decoy bounds on the single-photon yield and error rate.
pub fn decoy_bounds(budget: &LinkBudget, mu: f64, nu: f64) -> Result<DecoyBounds> {
    decoy_bounds_with_noise(budget, mu, nu, NOISE_ERROR_FRACTION)
}

pub fn decoy_bounds_with_noise(
    budget: &LinkBudget,
    mu: f64,
    nu: f64,
    e0: f64,
) -> Result<DecoyBounds> {
    if !(nu > 0.0) || mu <= nu {
        return Err(PhotonicsError::DegenerateDecoy { mu, nu });
    }
    let mu2 = mu * mu;
    let nu2 = nu * nu;
    let y1 = mu / (mu * nu - nu2)
        * (budget.q_nu * nu.exp()
            - budget.q_mu * mu.exp() * nu2 / mu2
            - (mu2 - nu2) / mu2 * budget.y0);
    if !(y1 > 0.0) {
        return Ok(DecoyBounds {
            y1_lower: 0.0,
            e1_upper: 0.5,
            clamped: true,
        });
    }
    let mut clamped = false;
    let y1_lower = if y1 > 1.0 {
        clamped = true;
        1.0
    } else {
        y1
    };
    let raw_e1 = (budget.e_nu * budget.q_nu * nu.exp() - e0 * budget.y0) / (y1_lower * nu);
    let e1_upper = if raw_e1 < 0.0 {
        clamped = true;
        0.0
    } else if raw_e1 > 0.5 {
        0.5
    } else {
        raw_e1
    };
    Ok(DecoyBounds {
        y1_lower,
        e1_upper,
        clamped,
    })
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(PhotonicsError::Domain {
            what: "probability",
            value: p,
        });
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Secure key rate in bits/second from a (possibly sampled) budget.
pub fn key_rate_from_budget(
    budget: &LinkBudget,
    source: &SourceConfig,
    security: &SecurityParams,
) -> Result<f64> {
    if budget.q_mu <= 0.0 || budget.e_mu >= security.qber_abort_threshold {
        return Ok(0.0);
    }
    let mu = source.mu_signal;
    let bounds = decoy_bounds(budget, mu, source.nu_decoy)?;
    let q1 = bounds.y1_lower * mu * (-mu).exp();
    let per_pulse = -budget.q_mu * security.f_ec * binary_entropy(budget.e_mu.clamp(0.0, 1.0))?
        + q1 * (1.0 - binary_entropy(bounds.e1_upper)?);
    Ok(source.pulse_rate_hz
        * source.mix.signal_fraction()
        * security.sifting
        * per_pulse.max(0.0))
}

pub fn secure_key_rate(
    channel: &FiberChannel,
    source: &SourceConfig,
    detector: &DetectorConfig,
    security: &SecurityParams,
) -> Result<f64> {
    secure_key_rate_at_loss(channel.loss_db, source, detector, security)
}

pub fn secure_key_rate_at_loss(
    loss_db: f64,
    source: &SourceConfig,
    detector: &DetectorConfig,
    security: &SecurityParams,
) -> Result<f64> {
    source.validate()?;
    detector.validate()?;
    security.validate()?;
    let budget = asymptotic_budget(transmittance(loss_db)?, source, detector)?;
    key_rate_from_budget(&budget, source, security)
}
