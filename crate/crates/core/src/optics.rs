//! Gaussian-beam collimation and element-to-element power coupling.
//!
//! Each terminal collimates its selected focal-plane element into a pencil
//! beam of waist `w = f·λ/(π·MFD/2)`. Coupling between a TX element and an RX
//! element is the overlap of the TX beam with the time-reversed RX mode:
//!
//! ```text
//! η = exp(-|Δd|²/w² - (π·w·|Δα|/λ)²)
//! ```
//!
//! where `Δα` is the angular mismatch and `Δd` the lateral walk-off, taken at
//! the link midpoint so the result is reciprocal. Both terminals use
//! "looking at the peer" coordinates; the RX frame is the TX frame mirrored in
//! `y`. Defocus and aperture truncation are neglected (`L ≪ z_R`).

use std::f64::consts::{LN_10, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{steering_angle, CollimatorSpec, ElementId, ElementIndex, GeometryError, HexLattice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("link distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("excess loss must be non-negative, got {0} dB")]
    NegativeExcessLoss(f64),
    #[error("TX and RX beams differ (waists {0} m vs {1} m); the overlap model assumes equal beams")]
    MismatchedBeams(f64, f64),
    #[error("empty element subset")]
    EmptySubset,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBeam {
    pub waist_radius_m: f64,
    pub wavelength_m: f64,
    pub center_offset_m: [f64; 2],
    pub direction_offset_rad: [f64; 2],
}

impl GaussianBeam {
    pub fn diameter_m(&self) -> f64 {
        2.0 * self.waist_radius_m
    }

    pub fn rayleigh_range_m(&self) -> f64 {
        PI * self.waist_radius_m.powi(2) / self.wavelength_m
    }

    pub fn with_offsets(mut self, center_m: [f64; 2], direction_rad: [f64; 2]) -> Self {
        self.center_offset_m = center_m;
        self.direction_offset_rad = direction_rad;
        self
    }

    /// Overlap exponent in nepers, `-ln η`. Kept separate from [`Self::overlap`]
    /// because η underflows for grossly misaligned pairs.
    pub fn mismatch_nepers(&self, other: &GaussianBeam) -> Result<f64, OpticsError> {
        let w = self.waist_radius_m;
        if (w - other.waist_radius_m).abs() > 1e-9 * w
            || (self.wavelength_m - other.wavelength_m).abs() > 1e-9 * self.wavelength_m
        {
            return Err(OpticsError::MismatchedBeams(w, other.waist_radius_m));
        }
        let dd2 = norm2(sub(self.center_offset_m, other.center_offset_m));
        let da2 = norm2(sub(self.direction_offset_rad, other.direction_offset_rad));
        Ok(dd2 / (w * w) + (PI * w / self.wavelength_m).powi(2) * da2)
    }

    pub fn overlap(&self, other: &GaussianBeam) -> Result<f64, OpticsError> {
        Ok((-self.mismatch_nepers(other)?).exp())
    }
}

/// Collimated beam produced by a focal-plane element of mode-field diameter
/// `MFD` behind a lens of focal length `f`.
pub fn collimate(lattice: &HexLattice, collimator: &CollimatorSpec, wavelength_m: f64) -> Result<GaussianBeam, OpticsError> {
    if !(wavelength_m > 0.0 && wavelength_m.is_finite()) {
        return Err(OpticsError::NonPositive("wavelength_m"));
    }
    let mode_radius = lattice.mode_field_diameter_m / 2.0;
    Ok(GaussianBeam {
        waist_radius_m: collimator.focal_length_m * wavelength_m / (PI * mode_radius),
        wavelength_m,
        center_offset_m: [0.0; 2],
        direction_offset_rad: [0.0; 2],
    })
}

pub fn rayleigh_range(beam: &GaussianBeam) -> f64 {
    beam.rayleigh_range_m()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalPose {
    pub position_m: [f64; 3],
    /// Small-angle deviation of the optical axis from the line of sight, in
    /// the terminal's own "looking at the peer" frame.
    pub boresight_error_rad: [f64; 2],
    /// Switch, lantern and residual non-ideal loss of this terminal.
    pub excess_loss_db: f64,
}

impl TerminalPose {
    pub fn aligned_at(position_m: [f64; 3]) -> Self {
        Self { position_m, boresight_error_rad: [0.0; 2], excess_loss_db: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpaTerminal {
    pub lattice: HexLattice,
    pub collimator: CollimatorSpec,
    pub wavelength_m: f64,
    pub pose: TerminalPose,
}

impl FpaTerminal {
    pub fn new(
        lattice: HexLattice,
        collimator: CollimatorSpec,
        wavelength_m: f64,
        pose: TerminalPose,
    ) -> Result<Self, OpticsError> {
        if !(wavelength_m > 0.0 && wavelength_m.is_finite()) {
            return Err(OpticsError::NonPositive("wavelength_m"));
        }
        if !(pose.excess_loss_db >= 0.0) {
            return Err(OpticsError::NegativeExcessLoss(pose.excess_loss_db));
        }
        Ok(Self { lattice, collimator, wavelength_m, pose })
    }

    pub fn beam(&self) -> GaussianBeam {
        collimate(&self.lattice, &self.collimator, self.wavelength_m).expect("wavelength validated in constructor")
    }

    /// Direction of the pencil beam launched by `idx`, terminal frame.
    pub fn launch_direction(&self, idx: ElementIndex) -> [f64; 2] {
        let steer = steering_angle(&self.lattice, &self.collimator, idx.axial);
        add(steer, self.pose.boresight_error_rad)
    }
}

fn mirror(v: [f64; 2]) -> [f64; 2] {
    [v[0], -v[1]]
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: [f64; 2], k: f64) -> [f64; 2] {
    [a[0] * k, a[1] * k]
}

fn norm2(a: [f64; 2]) -> f64 {
    a[0] * a[0] + a[1] * a[1]
}

/// Geometric overlap loss (excess losses excluded) in dB.
pub fn geometric_loss_db(
    tx: &FpaTerminal,
    tx_idx: ElementIndex,
    rx: &FpaTerminal,
    rx_idx: ElementIndex,
    distance_m: f64,
) -> Result<f64, OpticsError> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(OpticsError::NonPositiveDistance(distance_m));
    }
    let s_tx = tx.launch_direction(tx_idx);
    let s_rx = mirror(rx.launch_direction(rx_idx));
    let half = distance_m / 2.0;
    let tx_beam = tx.beam().with_offsets(scale(s_tx, half), s_tx);
    let rx_mode = rx.beam().with_offsets(scale(s_rx, -half), s_rx);
    Ok(tx_beam.mismatch_nepers(&rx_mode)? * 10.0 / LN_10)
}

/// Total coupling loss between one TX element and one RX element, in dB.
pub fn pair_coupling(
    tx: &FpaTerminal,
    tx_idx: ElementIndex,
    rx: &FpaTerminal,
    rx_idx: ElementIndex,
    distance_m: f64,
) -> Result<f64, OpticsError> {
    let geo = geometric_loss_db(tx, tx_idx, rx, rx_idx, distance_m)?;
    Ok(geo + tx.pose.excess_loss_db + rx.pose.excess_loss_db)
}

/// Loss surface indexed by (TX element, RX element).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMap {
    pub tx_ids: Vec<ElementId>,
    pub rx_ids: Vec<ElementId>,
    /// Row-major, one row per TX element.
    pub loss_db: Vec<f64>,
    pub distance_m: f64,
}

/// Best pair of a map or ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLoss {
    pub tx: ElementId,
    pub rx: ElementId,
    pub loss_db: f64,
}

impl CouplingMap {
    pub fn new(tx_ids: Vec<ElementId>, rx_ids: Vec<ElementId>, loss_db: Vec<f64>, distance_m: f64) -> Self {
        assert_eq!(tx_ids.len() * rx_ids.len(), loss_db.len(), "map dimensions");
        Self { tx_ids, rx_ids, loss_db, distance_m }
    }

    pub fn loss(&self, tx: ElementId, rx: ElementId) -> Option<f64> {
        let i = self.tx_ids.iter().position(|&t| t == tx)?;
        let j = self.rx_ids.iter().position(|&r| r == rx)?;
        Some(self.loss_db[i * self.rx_ids.len() + j])
    }

    pub fn row(&self, tx: ElementId) -> Option<&[f64]> {
        let i = self.tx_ids.iter().position(|&t| t == tx)?;
        let n = self.rx_ids.len();
        Some(&self.loss_db[i * n..(i + 1) * n])
    }

    pub fn pairs(&self) -> impl Iterator<Item = PairLoss> + '_ {
        let n = self.rx_ids.len();
        self.loss_db.iter().enumerate().map(move |(k, &loss_db)| PairLoss {
            tx: self.tx_ids[k / n],
            rx: self.rx_ids[k % n],
            loss_db,
        })
    }

    /// Lowest-loss pair; ties go to the lexicographically smaller (tx, rx).
    pub fn best(&self) -> Option<PairLoss> {
        self.pairs().min_by(|a, b| a.loss_db.total_cmp(&b.loss_db).then((a.tx, a.rx).cmp(&(b.tx, b.rx))))
    }

    /// CSV: header of RX ids, then one row per TX id with losses to 3 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tx_id");
        for rx in &self.rx_ids {
            out.push_str(&format!(",{rx}"));
        }
        out.push('\n');
        for (i, tx) in self.tx_ids.iter().enumerate() {
            out.push_str(&tx.to_string());
            for j in 0..self.rx_ids.len() {
                out.push_str(&format!(",{:.3}", self.loss_db[i * self.rx_ids.len() + j]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_document(&self, tx_pose: TerminalPose, rx_pose: TerminalPose, seed: u64) -> CouplingMapDocument {
        let n = self.rx_ids.len();
        CouplingMapDocument {
            distance_m: self.distance_m,
            seed,
            tx_pose,
            rx_pose,
            tx_ids: self.tx_ids.clone(),
            rx_ids: self.rx_ids.clone(),
            loss_db: self.loss_db.chunks(n).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// JSON form of a coupling map with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMapDocument {
    pub distance_m: f64,
    pub seed: u64,
    pub tx_pose: TerminalPose,
    pub rx_pose: TerminalPose,
    pub tx_ids: Vec<ElementId>,
    pub rx_ids: Vec<ElementId>,
    pub loss_db: Vec<Vec<f64>>,
}

/// Evaluates [`pair_coupling`] over the cross product of two element subsets.
/// Rows are computed in parallel; the result is identical to a sequential pass.
pub fn simulate_coupling_map(
    tx: &FpaTerminal,
    rx: &FpaTerminal,
    tx_ids: &[ElementIndex],
    rx_ids: &[ElementIndex],
    distance_m: f64,
) -> Result<CouplingMap, OpticsError> {
    if tx_ids.is_empty() || rx_ids.is_empty() {
        return Err(OpticsError::EmptySubset);
    }
    let z_r = tx.beam().rayleigh_range_m();
    if distance_m >= z_r {
        log::warn!("link distance {distance_m} m exceeds the Rayleigh range {z_r:.1} m; collimated model is approximate");
    }
    let rows: Vec<Vec<f64>> = tx_ids
        .par_iter()
        .map(|&t| rx_ids.iter().map(|&r| pair_coupling(tx, t, rx, r, distance_m)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    Ok(CouplingMap::new(tx_ids.iter().map(|e| e.id).collect(), rx_ids.iter().map(|e| e.id).collect(), rows.concat(), distance_m))
}
