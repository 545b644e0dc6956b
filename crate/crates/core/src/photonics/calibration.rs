//! Detector calibration.
//!
//! Detector efficiency and dark yield are not published for the deployed
//! devices, so they are fitted once against observed intercity figures and
//! persisted as a versioned document. Every receiver of a detector class
//! (single- or dual-APD) shares the fitted efficiency; the dark yield is
//! shared across classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    asymptotic_budget, expected_qber, key_rate_from_budget, overall_efficiency, transmittance,
    DetectorConfig, PhotonicsError, Result, SecurityParams, SourceConfig, NOISE_ERROR_FRACTION,
};

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorClass {
    pub apd_count: u8,
    pub eta_det: f64,
}

/// Lab-to-field deltas: leakage photons from parallel fibers and
/// vibration-induced misalignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAdjustment {
    pub y_background: f64,
    pub e_det_increment: f64,
}

impl Default for FieldAdjustment {
    fn default() -> Self {
        Self {
            y_background: 1e-6,
            e_det_increment: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    RateBps,
    QberSignal,
    QberDecoy,
    VacuumYield,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTarget {
    pub label: String,
    pub loss_db: f64,
    pub class: String,
    pub observable: Observable,
    pub value: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub eta_det: (f64, f64),
    pub y0_dark: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            eta_det: (0.01, 0.15),
            y0_dark: (1e-6, 1e-5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub schema_version: u32,
    pub version: String,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub security: SecurityParams,
    pub y0_dark: f64,
    pub e_det_default: f64,
    pub classes: BTreeMap<String, DetectorClass>,
    #[serde(default)]
    pub field: FieldAdjustment,
    #[serde(default)]
    pub bounds: FitBounds,
    #[serde(default)]
    pub targets: Vec<FitTarget>,
}

impl CalibrationSet {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let set: Self = serde_json::from_str(text)
            .map_err(|e| format!("line {}: {}", e.line(), e))?;
        if set.schema_version != CALIBRATION_SCHEMA_VERSION {
            return Err(format!(
                "unsupported calibration schema_version {} (expected {})",
                set.schema_version, CALIBRATION_SCHEMA_VERSION
            ));
        }
        set.validate().map_err(|e| e.to_string())?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.security.validate()?;
        for (name, class) in &self.classes {
            self.detector(name, self.e_det_default, false)?.validate()?;
            if !matches!(class.apd_count, 1 | 2) {
                return Err(PhotonicsError::InvalidParameter(format!(
                    "class {name}: apd_count must be 1 or 2"
                )));
            }
        }
        Ok(())
    }

    /// Name of the class serving receivers with this many APDs.
    pub fn class_for_apd_count(&self, apd_count: u8) -> Option<&str> {
        self.classes
            .iter()
            .find(|(_, c)| c.apd_count == apd_count)
            .map(|(n, _)| n.as_str())
    }

    /// Detector for one receiver. `field` applies the field adjustment.
    pub fn detector(&self, class: &str, e_det: f64, field: bool) -> Result<DetectorConfig> {
        let c = self.classes.get(class).ok_or_else(|| {
            PhotonicsError::InvalidParameter(format!("unknown detector class '{class}'"))
        })?;
        let (y_background, e_inc) = if field {
            (self.field.y_background, self.field.e_det_increment)
        } else {
            (0.0, 0.0)
        };
        Ok(DetectorConfig {
            eta_det: c.eta_det,
            y0_dark: self.y0_dark,
            y_background,
            e_det: e_det + e_inc,
            e0: NOISE_ERROR_FRACTION,
            apd_count: c.apd_count,
        })
    }

    /// Field-mode prediction of one observable at the given loss.
    pub fn predict(&self, class: &str, loss_db: f64, observable: Observable) -> Result<f64> {
        let det = self.detector(class, self.e_det_default, true)?;
        let t = transmittance(loss_db)?;
        let budget = asymptotic_budget(t, &self.source, &det)?;
        Ok(match observable {
            Observable::RateBps => key_rate_from_budget(&budget, &self.source, &self.security)?,
            Observable::QberSignal => budget.e_mu,
            Observable::QberDecoy => budget.e_nu,
            Observable::VacuumYield => budget.y0,
        })
    }

    /// Signal-QBER increase when the background yield rises by `delta_y0`.
    pub fn background_qber_delta(&self, class: &str, loss_db: f64, delta_y0: f64) -> Result<f64> {
        let det = self.detector(class, self.e_det_default, true)?;
        let eta = overall_efficiency(transmittance(loss_db)?, &det);
        let mu = self.source.mu_signal;
        let before = expected_qber(mu, eta, det.y0(), det.e_det, det.e0)?;
        let after = expected_qber(mu, eta, det.y0() + delta_y0, det.e_det, det.e0)?;
        Ok(after - before)
    }

    fn objective(&self) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.targets {
            let p = self.predict(&t.class, t.loss_db, t.observable)?;
            sum += t.weight * (p / t.value - 1.0).powi(2);
        }
        Ok(sum)
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub set: CalibrationSet,
    pub residual: f64,
    pub predictions: Vec<(FitTarget, f64)>,
}

/// Fits per-class `eta_det` and the shared `y0_dark` by bounded least squares
/// on relative residuals. Starts from a coarse grid, then refines with a
/// compass search in normalized coordinates.
pub fn fit_calibration(template: &CalibrationSet) -> Result<FitReport> {
    if template.targets.is_empty() {
        return Err(PhotonicsError::InvalidParameter(
            "calibration needs at least one target".into(),
        ));
    }
    for t in &template.targets {
        if !template.classes.contains_key(&t.class) {
            return Err(PhotonicsError::InvalidParameter(format!(
                "target '{}' names unknown class '{}'",
                t.label, t.class
            )));
        }
        if !(t.value > 0.0) {
            return Err(PhotonicsError::InvalidParameter(format!(
                "target '{}' must be positive",
                t.label
            )));
        }
    }
    let names: Vec<String> = template.classes.keys().cloned().collect();
    let dim = names.len() + 1;
    let bounds = template.bounds.clone();
    let (lo_y, hi_y) = (bounds.y0_dark.0.log10(), bounds.y0_dark.1.log10());

    let decode = |x: &[f64]| -> CalibrationSet {
        let mut set = template.clone();
        for (i, name) in names.iter().enumerate() {
            let eta = bounds.eta_det.0 + x[i] * (bounds.eta_det.1 - bounds.eta_det.0);
            set.classes.get_mut(name).expect("class exists").eta_det = eta;
        }
        set.y0_dark = 10f64.powf(lo_y + x[dim - 1] * (hi_y - lo_y));
        set
    };
    let score = |x: &[f64]| decode(x).objective().unwrap_or(f64::INFINITY);

    const GRID: usize = 11;
    let mut best = vec![0.5; dim];
    let mut best_score = f64::INFINITY;
    let mut idx = vec![0usize; dim];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 / (GRID - 1) as f64).collect();
        let s = score(&x);
        if s < best_score {
            best_score = s;
            best = x;
        }
        let mut k = 0;
        loop {
            if k == dim {
                break;
            }
            idx[k] += 1;
            if idx[k] < GRID {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            break;
        }
    }

    let mut step = 0.5 / (GRID - 1) as f64;
    while step > 1e-9 {
        let mut improved = false;
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                let mut x = best.clone();
                x[d] = (x[d] + sign * step).clamp(0.0, 1.0);
                let s = score(&x);
                if s < best_score {
                    best_score = s;
                    best = x;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let set = decode(&best);
    let predictions = set
        .targets
        .iter()
        .map(|t| {
            set.predict(&t.class, t.loss_db, t.observable)
                .map(|p| (t.clone(), p))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitReport {
        set,
        residual: best_score,
        predictions,
    })
}
