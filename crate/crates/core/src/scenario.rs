//! Scenario files: one TOML document per experiment, with the fitted
//! constants kept in a `[calibration]` table.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coexistence::{fit_solar_slopes, solar_background, ChannelPlan, CoexistenceModel, NotchFilter};
use crate::geometry::{CollimatorSpec, ElementIndex, HexLattice};
use crate::optics::{simulate_coupling_map, CouplingMap, FpaTerminal, TerminalPose};
use crate::rates::{
    fit_detection_chain, fit_raman_coefficient, DetectorModel, LinkModel, NoiseEnvironment, RateAnchors, SourceSpec,
};
use crate::sounding::SoundingConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("missing calibration value(s): {0}; run `calibrate` first")]
    MissingCalibration(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ScenarioError {
    /// True for errors caused by the scenario file rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, ScenarioError::Numerical(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub distance_m: f64,
    #[serde(default = "default_wavelength_nm")]
    pub wavelength_nm: f64,
    /// Fixed optical budget; the best coupling-map pair is used when absent.
    pub budget_db: Option<f64>,
}

fn default_wavelength_nm() -> f64 {
    1550.12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    pub pitch_um: f64,
    pub rings: u32,
    pub mode_field_diameter_um: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self { pitch_um: 36.9, rings: 4, mode_field_diameter_um: 8.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollimatorSection {
    pub focal_length_mm: f64,
    pub aperture_diameter_mm: f64,
}

impl Default for CollimatorSection {
    fn default() -> Self {
        Self { focal_length_mm: 150.0, aperture_diameter_mm: 50.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    #[serde(default)]
    pub boresight_error_urad: [f64; 2],
    /// Number of central elements taking part in the link.
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub irradiance_lux: f64,
    pub extra_background_hz: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { irradiance_lux: 0.0, extra_background_hz: vec![0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoexistenceSection {
    pub suppression_db: f64,
    /// Aggregate classical launch power applied to every analysis; off when absent.
    pub launch_power_dbm: Option<f64>,
    /// `[start, stop, step]` for `sweep-power`.
    pub power_grid_dbm: [f64; 3],
}

impl Default for CoexistenceSection {
    fn default() -> Self {
        Self { suppression_db: 132.3, launch_power_dbm: None, power_grid_dbm: [-10.0, 12.0, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyRateSection {
    pub ec_efficiency: f64,
    /// `[start, stop, step]` for `sweep-budget`.
    pub budget_grid_db: [f64; 3],
}

impl Default for KeyRateSection {
    fn default() -> Self {
        Self { ec_efficiency: 1.0, budget_grid_db: [0.0, 40.0, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub duration_s: f64,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self { duration_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSection {
    pub b2b_sifted_hz: f64,
    pub b2b_qber: f64,
    pub reference_budget_db: f64,
    pub reference_sifted_hz: f64,
    pub raman_power_dbm: f64,
    pub raman_qber: f64,
    pub raman_budget_db: f64,
    pub solar_irradiance_lux: f64,
    pub solar_counts_hz: Vec<f64>,
    pub best_pair_loss_db: Option<f64>,
    #[serde(default = "default_insertion_floor")]
    pub insertion_loss_floor_db: f64,
}

fn default_insertion_floor() -> f64 {
    2.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub system_efficiency: Option<f64>,
    pub evaluation_acceptance: Option<f64>,
    pub intrinsic_error: Option<f64>,
    pub excess_loss_db: Option<[f64; 2]>,
    pub raman_coefficient: Option<f64>,
    pub solar_slope_hz_per_lux: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub link: LinkSection,
    #[serde(default)]
    pub lattice: LatticeSection,
    #[serde(default)]
    pub collimator: CollimatorSection,
    pub tx: TerminalSection,
    pub rx: TerminalSection,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub detectors: DetectorModel,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub coexistence: CoexistenceSection,
    #[serde(default)]
    pub sounding: SoundingConfig,
    #[serde(default)]
    pub key_rate: KeyRateSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
    pub anchors: AnchorSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse { path: path.to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    fn lattice(&self) -> Result<HexLattice, ScenarioError> {
        let l = &self.lattice;
        HexLattice::new(l.pitch_um * 1e-6, l.rings, l.mode_field_diameter_um * 1e-6)
            .map_err(|e| ScenarioError::Invalid(format!("[lattice] {e}")))
    }

    fn collimator(&self) -> Result<CollimatorSpec, ScenarioError> {
        let c = &self.collimator;
        CollimatorSpec::new(c.focal_length_mm * 1e-3, c.aperture_diameter_mm * 1e-3)
            .map_err(|e| ScenarioError::Invalid(format!("[collimator] {e}")))
    }

    /// Terminals with the given per-terminal excess loss.
    pub fn terminals(&self, excess_db: [f64; 2]) -> Result<(FpaTerminal, FpaTerminal), ScenarioError> {
        if !(self.link.distance_m > 0.0) {
            return Err(ScenarioError::Invalid("[link] distance_m must be positive".into()));
        }
        let lattice = self.lattice()?;
        let collimator = self.collimator()?;
        let wl = self.link.wavelength_nm * 1e-9;
        let pose = |t: &TerminalSection, z: f64, excess: f64| TerminalPose {
            position_m: [0.0, 0.0, z],
            boresight_error_rad: [t.boresight_error_urad[0] * 1e-6, t.boresight_error_urad[1] * 1e-6],
            excess_loss_db: excess,
        };
        let mk =
            |pose| FpaTerminal::new(lattice.clone(), collimator, wl, pose).map_err(|e| ScenarioError::Invalid(e.to_string()));
        Ok((mk(pose(&self.tx, 0.0, excess_db[0]))?, mk(pose(&self.rx, self.link.distance_m, excess_db[1]))?))
    }

    fn subsets(&self, lattice: &HexLattice) -> Result<(Vec<ElementIndex>, Vec<ElementIndex>), ScenarioError> {
        let n = lattice.len();
        for (name, t) in [("tx", &self.tx), ("rx", &self.rx)] {
            if t.elements == 0 || t.elements > n {
                return Err(ScenarioError::Invalid(format!("[{name}] elements must lie in 1..={n}")));
            }
        }
        Ok((lattice.central_subset(self.tx.elements), lattice.central_subset(self.rx.elements)))
    }

    pub fn coupling_map_with(&self, excess_db: [f64; 2]) -> Result<CouplingMap, ScenarioError> {
        let (tx, rx) = self.terminals(excess_db)?;
        let (ts, rs) = self.subsets(&tx.lattice)?;
        simulate_coupling_map(&tx, &rx, &ts, &rs, self.link.distance_m).map_err(|e| ScenarioError::Numerical(e.to_string()))
    }

    fn chain_template(&self) -> LinkModel {
        LinkModel {
            source: self.source.clone(),
            detectors: self.detectors.clone(),
            environment: NoiseEnvironment { background_rate_hz: vec![0.0; self.detectors.count()], intrinsic_error: 0.0 },
            system_efficiency: 1.0,
            evaluation_acceptance: 1.0,
            ec_efficiency: self.key_rate.ec_efficiency,
        }
    }

    fn coexistence_model(&self, raman_coefficient: f64) -> CoexistenceModel {
        CoexistenceModel {
            plan: ChannelPlan::default_plan(),
            filter: NotchFilter { suppression_db_at_quantum: self.coexistence.suppression_db },
            raman_coefficient,
        }
    }

    /// Fits every calibrated constant against the `[anchors]` table. The
    /// detection chain and the Raman coefficient are fitted with dark counts
    /// only, the condition under which the anchors were measured.
    pub fn calibrate(&self) -> Result<Calibration, ScenarioError> {
        let a = &self.anchors;
        let num = |e: crate::rates::RateError| ScenarioError::Numerical(e.to_string());
        let mut dark_only = self.chain_template();
        dark_only.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let fit = fit_detection_chain(
            &dark_only,
            &RateAnchors {
                b2b_sifted_hz: a.b2b_sifted_hz,
                b2b_qber: a.b2b_qber,
                reference_budget_db: a.reference_budget_db,
                reference_sifted_hz: a.reference_sifted_hz,
            },
        )
        .map_err(num)?;
        dark_only.system_efficiency = fit.system_efficiency;
        dark_only.evaluation_acceptance = fit.evaluation_acceptance;
        dark_only.environment.intrinsic_error = fit.intrinsic_error;
        let raman =
            fit_raman_coefficient(&dark_only, a.raman_budget_db, &self.coexistence_model(0.0), a.raman_power_dbm, a.raman_qber)
                .map_err(num)?;
        let slopes = fit_solar_slopes(a.solar_irradiance_lux, &a.solar_counts_hz, &self.detectors.dark_rate_hz)
            .map_err(|e| ScenarioError::Numerical(e.to_string()))?;
        let excess = match a.best_pair_loss_db {
            Some(target) => {
                let best = self.coupling_map_with([0.0, 0.0])?.best().expect("non-empty map");
                let per_terminal = (target - best.loss_db) / 2.0;
                if per_terminal < a.insertion_loss_floor_db {
                    return Err(ScenarioError::Numerical(format!(
                        "best pair already loses {:.2} dB geometrically; {target} dB leaves {per_terminal:.2} dB per terminal, below the {} dB insertion floor",
                        best.loss_db, a.insertion_loss_floor_db
                    )));
                }
                [per_terminal, per_terminal]
            }
            None => [a.insertion_loss_floor_db, a.insertion_loss_floor_db],
        };
        Ok(Calibration {
            system_efficiency: fit.system_efficiency,
            evaluation_acceptance: fit.evaluation_acceptance,
            intrinsic_error: fit.intrinsic_error,
            excess_loss_db: excess,
            raman_coefficient: raman,
            solar_slope_hz_per_lux: slopes,
        })
    }

    pub fn calibration(&self) -> Result<Calibration, ScenarioError> {
        let c = &self.calibration;
        let mut missing = Vec::new();
        if c.system_efficiency.is_none() {
            missing.push("system_efficiency");
        }
        if c.evaluation_acceptance.is_none() {
            missing.push("evaluation_acceptance");
        }
        if c.intrinsic_error.is_none() {
            missing.push("intrinsic_error");
        }
        if c.excess_loss_db.is_none() {
            missing.push("excess_loss_db");
        }
        if c.raman_coefficient.is_none() {
            missing.push("raman_coefficient");
        }
        if c.solar_slope_hz_per_lux.is_none() {
            missing.push("solar_slope_hz_per_lux");
        }
        if !missing.is_empty() {
            return Err(ScenarioError::MissingCalibration(missing.join(", ")));
        }
        Ok(Calibration {
            system_efficiency: c.system_efficiency.unwrap(),
            evaluation_acceptance: c.evaluation_acceptance.unwrap(),
            intrinsic_error: c.intrinsic_error.unwrap(),
            excess_loss_db: c.excess_loss_db.unwrap(),
            raman_coefficient: c.raman_coefficient.unwrap(),
            solar_slope_hz_per_lux: c.solar_slope_hz_per_lux.clone().unwrap(),
        })
    }

    /// Resolves the scenario against its stored calibration.
    pub fn resolve(&self) -> Result<LinkScenario, ScenarioError> {
        let cal = self.calibration()?;
        if cal.solar_slope_hz_per_lux.len() != self.detectors.count()
            || self.noise.extra_background_hz.len() != self.detectors.count()
        {
            return Err(ScenarioError::Invalid("per-detector lists must have one entry per dark rate".into()));
        }
        self.sounding.validate().map_err(|e| ScenarioError::Invalid(format!("[sounding] {e}")))?;
        let (tx, rx) = self.terminals(cal.excess_loss_db)?;
        let (tx_subset, rx_subset) = self.subsets(&tx.lattice)?;
        let coexistence = self.coexistence_model(cal.raman_coefficient);
        let dark_zero = vec![0.0; self.detectors.count()];
        let solar = solar_background(self.noise.irradiance_lux, &cal.solar_slope_hz_per_lux, &dark_zero);
        let background: Vec<f64> = solar.iter().zip(&self.noise.extra_background_hz).map(|(a, b)| a + b).collect();
        let quiet_link = LinkModel {
            environment: NoiseEnvironment { background_rate_hz: background, intrinsic_error: cal.intrinsic_error },
            system_efficiency: cal.system_efficiency,
            evaluation_acceptance: cal.evaluation_acceptance,
            ..self.chain_template()
        };
        quiet_link.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let link = match self.coexistence.launch_power_dbm {
            Some(p) => quiet_link.with_extra_background(coexistence.noise_rate_hz(p, self.detectors.efficiency)),
            None => quiet_link.clone(),
        };
        Ok(LinkScenario {
            seed: self.seed,
            distance_m: self.link.distance_m,
            fixed_budget_db: self.link.budget_db,
            tx,
            rx,
            tx_subset,
            rx_subset,
            link,
            quiet_link,
            coexistence,
            sounding: self.sounding,
            budget_grid_db: grid(self.key_rate.budget_grid_db, "[key_rate] budget_grid_db")?,
            power_grid_dbm: grid(self.coexistence.power_grid_dbm, "[coexistence] power_grid_dbm")?,
            montecarlo_duration_s: self.montecarlo.duration_s,
            calibration: cal,
        })
    }
}

/// Expands `[start, stop, step]` inclusively.
pub fn grid(spec: [f64; 3], name: &str) -> Result<Vec<f64>, ScenarioError> {
    let [start, stop, step] = spec;
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(ScenarioError::Invalid(format!("{name} needs start <= stop and a positive step")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub system_efficiency: f64,
    pub evaluation_acceptance: f64,
    pub intrinsic_error: f64,
    pub excess_loss_db: [f64; 2],
    pub raman_coefficient: f64,
    pub solar_slope_hz_per_lux: Vec<f64>,
}

impl Calibration {
    /// `key = value` lines, in a fixed order.
    pub fn summary_lines(&self) -> Vec<String> {
        vec![
            format!("system_efficiency = {}", self.system_efficiency),
            format!("evaluation_acceptance = {}", self.evaluation_acceptance),
            format!("intrinsic_error = {}", self.intrinsic_error),
            format!("excess_loss_db = [{}, {}]", self.excess_loss_db[0], self.excess_loss_db[1]),
            format!("raman_coefficient = {:e}", self.raman_coefficient),
            format!(
                "solar_slope_hz_per_lux = [{}]",
                self.solar_slope_hz_per_lux.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
            ),
        ]
    }
}

/// A scenario with its calibration applied.
#[derive(Debug, Clone)]
pub struct LinkScenario {
    pub seed: u64,
    pub distance_m: f64,
    pub fixed_budget_db: Option<f64>,
    pub tx: FpaTerminal,
    pub rx: FpaTerminal,
    pub tx_subset: Vec<ElementIndex>,
    pub rx_subset: Vec<ElementIndex>,
    /// Link model including the configured classical load.
    pub link: LinkModel,
    /// Same link without classical channels.
    pub quiet_link: LinkModel,
    pub coexistence: CoexistenceModel,
    pub sounding: SoundingConfig,
    pub budget_grid_db: Vec<f64>,
    pub power_grid_dbm: Vec<f64>,
    pub montecarlo_duration_s: f64,
    pub calibration: Calibration,
}

impl LinkScenario {
    pub fn coupling_map(&self) -> Result<CouplingMap, ScenarioError> {
        simulate_coupling_map(&self.tx, &self.rx, &self.tx_subset, &self.rx_subset, self.distance_m)
            .map_err(|e| ScenarioError::Numerical(e.to_string()))
    }

    /// Optical budget used by the rate analyses.
    pub fn budget_db(&self) -> Result<f64, ScenarioError> {
        match self.fixed_budget_db {
            Some(b) => Ok(b),
            None => Ok(self.coupling_map()?.best().expect("non-empty map").loss_db),
        }
    }
}
