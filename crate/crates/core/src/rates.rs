//! Analytic BB84 link model: detection with dead-time saturation, QBER,
//! secure fraction and the derived conversions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coexistence::CoexistenceModel;
use crate::solve::bisect;
use crate::units::db_to_transmission;

pub const SMF_LOSS_DB_PER_KM: f64 = 0.277;
pub const AES_GCM_BYTES_PER_KEY: f64 = 64e9;
pub const AES_KEY_BITS: f64 = 256.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("calibration fit failed: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub symbol_rate_hz: f64,
    pub mean_photon_number: f64,
    pub duty_cycle: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self { symbol_rate_hz: 1e9, mean_photon_number: 0.1, duty_cycle: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dead_time_s: f64,
    pub dark_rate_hz: Vec<f64>,
    pub timestamp_resolution_s: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { efficiency: 0.10, dead_time_s: 25e-6, dark_rate_hz: vec![559.0, 599.0], timestamp_resolution_s: 82.3e-12 }
    }
}

impl DetectorModel {
    pub fn count(&self) -> usize {
        self.dark_rate_hz.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEnvironment {
    pub background_rate_hz: Vec<f64>,
    pub intrinsic_error: f64,
}

/// Everything the rate equations need, with the fitted constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub source: SourceSpec,
    pub detectors: DetectorModel,
    pub environment: NoiseEnvironment,
    /// Unmodeled receiver transmission before the detectors.
    pub system_efficiency: f64,
    /// Fraction of registered detections kept by the offline evaluation.
    pub evaluation_acceptance: f64,
    pub ec_efficiency: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), RateError> {
        let bad = |m: &str| Err(RateError::Model(m.to_string()));
        let s = &self.source;
        if !(s.symbol_rate_hz > 0.0) {
            return bad("symbol_rate_hz must be positive");
        }
        if !(s.mean_photon_number >= 0.0) {
            return bad("mean_photon_number must be non-negative");
        }
        if !(s.duty_cycle > 0.0 && s.duty_cycle <= 1.0) {
            return bad("duty_cycle must lie in (0, 1]");
        }
        let d = &self.detectors;
        if !(d.efficiency > 0.0 && d.efficiency <= 1.0) {
            return bad("detector efficiency must lie in (0, 1]");
        }
        if !(d.dead_time_s >= 0.0) {
            return bad("dead_time_s must be non-negative");
        }
        if !(d.timestamp_resolution_s > 0.0) {
            return bad("timestamp_resolution_s must be positive");
        }
        if d.count() == 0 || d.dark_rate_hz.iter().any(|r| !(*r >= 0.0)) {
            return bad("need at least one detector with a non-negative dark rate");
        }
        let e = &self.environment;
        if e.background_rate_hz.len() != d.count() {
            return bad("background_rate_hz needs one entry per detector");
        }
        if e.background_rate_hz.iter().any(|r| !(*r >= 0.0)) {
            return bad("background rates must be non-negative");
        }
        if !(e.intrinsic_error >= 0.0 && e.intrinsic_error < 0.5) {
            return bad("intrinsic_error must lie in [0, 0.5)");
        }
        if !(self.system_efficiency > 0.0) {
            return bad("system_efficiency must be positive");
        }
        if !(self.evaluation_acceptance > 0.0 && self.evaluation_acceptance <= 1.0) {
            return bad("evaluation_acceptance must lie in (0, 1]");
        }
        if !(self.ec_efficiency >= 1.0) {
            return bad("ec_efficiency must be at least 1");
        }
        Ok(())
    }

    /// Mean photons per symbol reaching one detector.
    pub fn photons_per_detector(&self, budget_db: f64) -> f64 {
        self.source.mean_photon_number * db_to_transmission(budget_db) * self.system_efficiency * self.detectors.efficiency
            / self.detectors.count() as f64
    }

    /// Dark plus ambient counts per detector.
    pub fn noise_rate_hz(&self) -> Vec<f64> {
        self.detectors.dark_rate_hz.iter().zip(&self.environment.background_rate_hz).map(|(a, b)| a + b).collect()
    }

    /// Copy with `total_hz` of extra ambient counts spread evenly over the detectors.
    pub fn with_extra_background(&self, total_hz: f64) -> Self {
        let mut out = self.clone();
        let share = total_hz / out.detectors.count() as f64;
        for b in &mut out.environment.background_rate_hz {
            *b += share;
        }
        out
    }

    pub fn evaluate(&self, budget_db: f64) -> Result<KeyRateReport, RateError> {
        let rates = detection_rates(self, budget_db)?;
        let q = qber(rates.sifted_rate_hz, rates.accepted_background_hz, self.environment.intrinsic_error)?;
        let skr = rates.sifted_rate_hz * secure_fraction_with(q, self.ec_efficiency);
        Ok(KeyRateReport {
            budget_db,
            classical_power_dbm: None,
            sifted_rate_hz: rates.sifted_rate_hz,
            background_rate_hz: rates.accepted_background_hz,
            qber: q,
            secure_rate_hz: skr,
            fiber_equiv_km: fiber_equivalent(budget_db),
            secured_capacity_bps: aes_gcm_secured_capacity(skr),
        })
    }
}

pub fn binary_entropy(p: f64) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RateError::Domain(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// `max(0, 1 − 2·h2(q))`.
pub fn secure_fraction(q: f64) -> f64 {
    secure_fraction_with(q, 1.0)
}

/// `max(0, 1 − (1 + f)·h2(q))` where `f` is the error-correction efficiency.
pub fn secure_fraction_with(q: f64, ec_efficiency: f64) -> f64 {
    let q = q.clamp(0.0, 0.5);
    let h = binary_entropy(q).expect("clamped");
    (1.0 - (1.0 + ec_efficiency) * h).max(0.0)
}

/// QBER at which the secure fraction reaches zero.
pub fn secure_threshold_qber(ec_efficiency: f64) -> f64 {
    bisect(|q| 1.0 - (1.0 + ec_efficiency) * binary_entropy(q).unwrap(), 1e-12, 0.5, 1e-12).expect("h2 spans [0, 1]")
}

/// Non-paralyzable detector: `R/(1 + R·τ)`.
pub fn dead_time_saturation(incident_rate_hz: f64, dead_time_s: f64) -> f64 {
    incident_rate_hz / (1.0 + incident_rate_hz * dead_time_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRates {
    /// Signal clicks per second before dead time.
    pub signal_incident_hz: f64,
    /// Dark plus ambient counts per second before dead time.
    pub noise_incident_hz: f64,
    pub signal_registered_hz: f64,
    pub noise_registered_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub per_detector: Vec<DetectorRates>,
    /// Accepted signal detections over both bases (the raw-key rate).
    pub sifted_rate_hz: f64,
    pub accepted_background_hz: f64,
}

pub fn detection_rates(link: &LinkModel, budget_db: f64) -> Result<DetectionRates, RateError> {
    if !(budget_db >= 0.0) {
        return Err(RateError::Domain(format!("budget {budget_db} dB must be non-negative")));
    }
    link.validate()?;
    let lambda = link.photons_per_detector(budget_db);
    let click = link.source.symbol_rate_hz * -(-lambda).exp_m1();
    let tau = link.detectors.dead_time_s;
    let per_detector: Vec<_> = link
        .noise_rate_hz()
        .into_iter()
        .map(|noise| {
            let gain = 1.0 / (1.0 + (click + noise) * tau);
            DetectorRates {
                signal_incident_hz: click,
                noise_incident_hz: noise,
                signal_registered_hz: click * gain,
                noise_registered_hz: noise * gain,
            }
        })
        .collect();
    let k = link.evaluation_acceptance;
    Ok(DetectionRates {
        sifted_rate_hz: k * per_detector.iter().map(|d| d.signal_registered_hz).sum::<f64>(),
        accepted_background_hz: k * per_detector.iter().map(|d| d.noise_registered_hz).sum::<f64>(),
        per_detector,
    })
}

/// `(e·S + ½·B)/(S + B)`.
pub fn qber(signal_rate_hz: f64, background_rate_hz: f64, intrinsic_error: f64) -> Result<f64, RateError> {
    if !(signal_rate_hz >= 0.0 && background_rate_hz >= 0.0) {
        return Err(RateError::Domain("rates must be non-negative".into()));
    }
    let total = signal_rate_hz + background_rate_hz;
    if total == 0.0 {
        return Err(RateError::Domain("no detections: QBER undefined".into()));
    }
    Ok((intrinsic_error * signal_rate_hz + 0.5 * background_rate_hz) / total)
}

pub fn fiber_equivalent(budget_db: f64) -> f64 {
    budget_db / SMF_LOSS_DB_PER_KM
}

pub fn aes_gcm_secured_capacity(skr_bps: f64) -> f64 {
    skr_bps / AES_KEY_BITS * AES_GCM_BYTES_PER_KEY * 8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub budget_db: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classical_power_dbm: Option<f64>,
    pub sifted_rate_hz: f64,
    pub background_rate_hz: f64,
    pub qber: f64,
    pub secure_rate_hz: f64,
    pub fiber_equiv_km: f64,
    pub secured_capacity_bps: f64,
}

pub fn sweep_budget(link: &LinkModel, budgets_db: &[f64]) -> Result<Vec<KeyRateReport>, RateError> {
    if budgets_db.is_empty() {
        return Err(RateError::Domain("empty budget grid".into()));
    }
    budgets_db.par_iter().map(|&b| link.evaluate(b)).collect()
}

pub fn sweep_classical_power(
    link: &LinkModel,
    budget_db: f64,
    coexistence: &CoexistenceModel,
    powers_dbm: &[f64],
) -> Result<Vec<KeyRateReport>, RateError> {
    if powers_dbm.is_empty() {
        return Err(RateError::Domain("empty power grid".into()));
    }
    powers_dbm
        .par_iter()
        .map(|&p| {
            let noise = coexistence.noise_rate_hz(p, link.detectors.efficiency);
            let mut report = link.with_extra_background(noise).evaluate(budget_db)?;
            report.classical_power_dbm = Some(p);
            Ok(report)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Budget,
    ClassicalPower,
}

pub fn reports_to_csv(reports: &[KeyRateReport], axis: SweepAxis) -> String {
    let first = match axis {
        SweepAxis::Budget => "budget_db",
        SweepAxis::ClassicalPower => "p_cla_dbm",
    };
    let mut out = format!("{first},sifted_hz,qber,skr_hz,fiber_km,capacity_bps\n");
    for r in reports {
        let x = match axis {
            SweepAxis::Budget => r.budget_db,
            SweepAxis::ClassicalPower => r.classical_power_dbm.unwrap_or(f64::NEG_INFINITY),
        };
        out.push_str(&format!(
            "{x},{:.3},{:.6},{:.3},{:.3},{:.6e}\n",
            r.sifted_rate_hz, r.qber, r.secure_rate_hz, r.fiber_equiv_km, r.secured_capacity_bps
        ));
    }
    out
}

/// Budget at which the QBER reaches `target_q`, searched on `[0, max_budget_db]`.
pub fn qber_crossing_budget(link: &LinkModel, target_q: f64, max_budget_db: f64) -> Result<f64, RateError> {
    let mut err = None;
    let root = bisect(
        |b| match link.evaluate(b) {
            Ok(r) => r.qber - target_q,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        },
        0.0,
        max_budget_db,
        1e-10,
    );
    if let Some(e) = err {
        return Err(e);
    }
    root.map_err(|nb| {
        RateError::Fit(format!("QBER {target_q} not crossed in [0, {max_budget_db}] dB (excess {} .. {})", nb.f_lo, nb.f_hi))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateAnchors {
    pub b2b_sifted_hz: f64,
    pub b2b_qber: f64,
    pub reference_budget_db: f64,
    pub reference_sifted_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedChain {
    pub system_efficiency: f64,
    pub evaluation_acceptance: f64,
    pub intrinsic_error: f64,
}

/// Fits system efficiency, evaluation acceptance and intrinsic error so the
/// model reproduces the back-to-back rate and QBER and the rate at the
/// reference budget. The noise environment of `link` is kept as is.
pub fn fit_detection_chain(link: &LinkModel, anchors: &RateAnchors) -> Result<FittedChain, RateError> {
    let fit_err = |m: String| RateError::Fit(m);
    if !(anchors.b2b_sifted_hz > 0.0 && anchors.reference_sifted_hz > 0.0 && anchors.reference_budget_db > 0.0) {
        return Err(fit_err("anchor rates and reference budget must be positive".into()));
    }
    let target_ratio = anchors.reference_sifted_hz / anchors.b2b_sifted_hz;
    let mut trial = link.clone();
    trial.evaluation_acceptance = 1.0;
    trial.environment.intrinsic_error = 0.0;
    let unscaled = |m: &LinkModel, b: f64| detection_rates(m, b).map(|r| r.sifted_rate_hz);
    let ratio_at = |log_s: f64| {
        let mut m = trial.clone();
        m.system_efficiency = 10f64.powf(log_s);
        match (unscaled(&m, anchors.reference_budget_db), unscaled(&m, 0.0)) {
            (Ok(a), Ok(b)) if b > 0.0 => a / b - target_ratio,
            _ => f64::NAN,
        }
    };
    let log_s = bisect(ratio_at, -9.0, 3.0, 1e-13).map_err(|_| {
        fit_err(format!(
            "rate ratio {target_ratio:.4} at {} dB is not reachable by any system efficiency",
            anchors.reference_budget_db
        ))
    })?;
    trial.system_efficiency = 10f64.powf(log_s);
    let r0 = detection_rates(&trial, 0.0)?;
    let k = anchors.b2b_sifted_hz / r0.sifted_rate_hz;
    if !(k > 0.0 && k <= 1.0) {
        return Err(fit_err(format!("fitted evaluation acceptance {k:.4} outside (0, 1]")));
    }
    let (s, b) = (r0.sifted_rate_hz, r0.accepted_background_hz);
    let e = (anchors.b2b_qber * (s + b) - 0.5 * b) / s;
    if !(0.0..0.5).contains(&e) {
        return Err(fit_err(format!("fitted intrinsic error {e:.5} outside [0, 0.5)")));
    }
    Ok(FittedChain { system_efficiency: trial.system_efficiency, evaluation_acceptance: k, intrinsic_error: e })
}

/// Raman coefficient giving `target_q` at `power_dbm` on a link of
/// `budget_db`. Uses the plan and filter of `coexistence`.
pub fn fit_raman_coefficient(
    link: &LinkModel,
    budget_db: f64,
    coexistence: &CoexistenceModel,
    power_dbm: f64,
    target_q: f64,
) -> Result<f64, RateError> {
    let q_at = |log_rho: f64| {
        let model = CoexistenceModel { raman_coefficient: 10f64.powf(log_rho), ..coexistence.clone() };
        let noise = model.noise_rate_hz(power_dbm, link.detectors.efficiency);
        link.with_extra_background(noise).evaluate(budget_db).map(|r| r.qber - target_q).unwrap_or(f64::NAN)
    };
    let log_rho = bisect(q_at, -40.0, 0.0, 1e-13)
        .map_err(|_| RateError::Fit(format!("QBER {target_q} at {power_dbm} dBm not reachable by a Raman coefficient")))?;
    Ok(10f64.powf(log_rho))
}
