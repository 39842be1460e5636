//! DWDM classical channel plan around the quantum channel, notch filtering,
//! and the noise the classical load and sunlight inject into the quantum
//! receiver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{dbm_to_watts, frequency_hz, photon_energy_j, SPEED_OF_LIGHT};

pub const QUANTUM_WAVELENGTH_M: f64 = 1550.12e-9;
pub const PLAN_MIN_WAVELENGTH_M: f64 = 1530.25e-9;
pub const PLAN_MAX_WAVELENGTH_M: f64 = 1618.63e-9;
pub const MIN_DETUNING_HZ: f64 = 155.5e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoexistenceError {
    #[error("channel {index}: {reason}")]
    Channel { index: usize, reason: String },
    #[error("channel plan needs 47 data channels and 1 supervisory channel, found {data} + {supervisory}")]
    Composition { data: usize, supervisory: usize },
    #[error("{0}")]
    Fit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Data,
    Supervisory,
}

impl ChannelRole {
    fn as_str(self) -> &'static str {
        match self {
            ChannelRole::Data => "data",
            ChannelRole::Supervisory => "supervisory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub index: usize,
    pub wavelength_m: f64,
    pub role: ChannelRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub channels: Vec<Channel>,
    pub quantum_wavelength_m: f64,
}

impl ChannelPlan {
    /// Validates a user plan. Channels are numbered from 1 in the given order.
    pub fn from_channels(quantum_wavelength_m: f64, channels: &[(f64, ChannelRole)]) -> Result<Self, CoexistenceError> {
        let plan = ChannelPlan {
            channels: channels
                .iter()
                .enumerate()
                .map(|(i, &(wavelength_m, role))| Channel { index: i + 1, wavelength_m, role })
                .collect(),
            quantum_wavelength_m,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// 100-GHz plan: 23 C-band channels stepping down from 1530.25 nm, one
    /// guard-edge channel 155.5 GHz above the quantum channel, 23 L-band
    /// channels on the ITU grid from 190.8 THz, and the supervisory channel at
    /// 1618.63 nm.
    pub fn default_plan() -> Self {
        let f_top = frequency_hz(PLAN_MIN_WAVELENGTH_M);
        let f_q = frequency_hz(QUANTUM_WAVELENGTH_M);
        let mut chans = Vec::with_capacity(48);
        chans.push((PLAN_MIN_WAVELENGTH_M, ChannelRole::Data));
        for k in 1..23 {
            chans.push((SPEED_OF_LIGHT / (f_top - k as f64 * 100e9), ChannelRole::Data));
        }
        chans.push((SPEED_OF_LIGHT / (f_q + MIN_DETUNING_HZ), ChannelRole::Data));
        for k in 0..23 {
            chans.push((SPEED_OF_LIGHT / (190.8e12 - k as f64 * 100e9), ChannelRole::Data));
        }
        chans.push((PLAN_MAX_WAVELENGTH_M, ChannelRole::Supervisory));
        Self::from_channels(QUANTUM_WAVELENGTH_M, &chans).expect("default plan satisfies its invariants")
    }

    pub fn validate(&self) -> Result<(), CoexistenceError> {
        let f_q = frequency_hz(self.quantum_wavelength_m);
        let tol_m = 1e-15;
        for ch in &self.channels {
            let bad = |reason: String| CoexistenceError::Channel { index: ch.index, reason };
            if !(ch.wavelength_m >= PLAN_MIN_WAVELENGTH_M - tol_m && ch.wavelength_m <= PLAN_MAX_WAVELENGTH_M + tol_m) {
                return Err(bad(format!("wavelength {:.3} nm outside 1530.25..1618.63 nm", ch.wavelength_m * 1e9)));
            }
            let detuning = (frequency_hz(ch.wavelength_m) - f_q).abs();
            if detuning == 0.0 {
                return Err(bad("coincides with the quantum channel".into()));
            }
            if detuning < MIN_DETUNING_HZ * (1.0 - 1e-9) {
                return Err(bad(format!("detuning {:.1} GHz below the 155.5 GHz guard", detuning / 1e9)));
            }
        }
        let data = self.channels.iter().filter(|c| c.role == ChannelRole::Data).count();
        let supervisory = self.channels.len() - data;
        if data != 47 || supervisory != 1 {
            return Err(CoexistenceError::Composition { data, supervisory });
        }
        Ok(())
    }

    pub fn detuning_hz(&self, ch: &Channel) -> f64 {
        (frequency_hz(ch.wavelength_m) - frequency_hz(self.quantum_wavelength_m)).abs()
    }

    /// (min, max) absolute detuning from the quantum channel.
    pub fn detuning_extremes_hz(&self) -> (f64, f64) {
        self.channels.iter().map(|c| self.detuning_hz(c)).fold((f64::INFINITY, 0.0), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,wavelength_nm,detuning_ghz,role\n");
        for ch in &self.channels {
            out.push_str(&format!(
                "{},{:.3},{:.1},{}\n",
                ch.index,
                ch.wavelength_m * 1e9,
                self.detuning_hz(ch) / 1e9,
                ch.role.as_str()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchFilter {
    pub suppression_db_at_quantum: f64,
}

impl Default for NotchFilter {
    fn default() -> Self {
        Self { suppression_db_at_quantum: 132.3 }
    }
}

/// Classical load on the link: the plan, the notch filter protecting the
/// quantum channel, and the fitted Raman coefficient (W in-band per W launched).
#[derive(Debug, Clone, PartialEq)]
pub struct CoexistenceModel {
    pub plan: ChannelPlan,
    pub filter: NotchFilter,
    pub raman_coefficient: f64,
}

impl CoexistenceModel {
    /// Detected noise counts per second over the whole receiver for an
    /// aggregate classical launch power.
    pub fn noise_rate_hz(&self, aggregate_power_dbm: f64, detector_efficiency: f64) -> f64 {
        coexistence_noise_rate(&self.plan, aggregate_power_dbm, &self.filter, self.raman_coefficient, detector_efficiency)
    }
}

/// `η_det·(P_leak + ρ·P)/(h·ν_Q)` with `P_leak = P·10^(-suppression/10)`.
pub fn coexistence_noise_rate(
    plan: &ChannelPlan,
    aggregate_power_dbm: f64,
    filter: &NotchFilter,
    raman_coefficient: f64,
    detector_efficiency: f64,
) -> f64 {
    let p = dbm_to_watts(aggregate_power_dbm);
    let leak = p * 10f64.powf(-filter.suppression_db_at_quantum / 10.0);
    detector_efficiency * (leak + raman_coefficient * p) / photon_energy_j(plan.quantum_wavelength_m)
}

/// Total per-detector count rate under sunlight: `slope·irradiance + dark`.
pub fn solar_background(irradiance_lux: f64, slope_hz_per_lux: &[f64], dark_rate_hz: &[f64]) -> Vec<f64> {
    slope_hz_per_lux.iter().zip(dark_rate_hz).map(|(s, d)| s * irradiance_lux.max(0.0) + d).collect()
}

/// Per-detector slopes reproducing measured total counts at one irradiance.
pub fn fit_solar_slopes(
    irradiance_lux: f64,
    total_counts_hz: &[f64],
    dark_rate_hz: &[f64],
) -> Result<Vec<f64>, CoexistenceError> {
    if !(irradiance_lux > 0.0) {
        return Err(CoexistenceError::Fit("solar anchor irradiance must be positive".into()));
    }
    if total_counts_hz.len() != dark_rate_hz.len() {
        return Err(CoexistenceError::Fit("solar anchor needs one count rate per detector".into()));
    }
    total_counts_hz
        .iter()
        .zip(dark_rate_hz)
        .map(|(t, d)| {
            if t < d {
                Err(CoexistenceError::Fit(format!("anchor count {t} below dark rate {d}")))
            } else {
                Ok((t - d) / irradiance_lux)
            }
        })
        .collect()
}
