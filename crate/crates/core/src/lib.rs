//! Simulator for free-space optical QKD links whose terminals are
//! focal-plane-array beamformers.
//!
//! * [`geometry`]: hexagonal focal-plane lattice, steering and field of view
//! * [`optics`]: Gaussian collimation and element-pair coupling maps
//! * [`sounding`]: pair sweep protocol, ranking and failover
//! * [`rates`]: analytic BB84 detection and key-rate model
//! * [`sim`]: time-tag Monte Carlo engine and offline sifting
//! * [`coexistence`]: DWDM channel plan and in-band noise
//! * [`scenario`]: scenario files and calibration

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coexistence;
pub mod geometry;
pub mod optics;
pub mod rates;
pub mod scenario;
pub mod sim;
pub mod solve;
pub mod sounding;
pub mod units;

pub use geometry::{Axial, CollimatorSpec, ElementId, ElementIndex, HexLattice};
pub use optics::{CouplingMap, FpaTerminal, TerminalPose};
pub use rates::{KeyRateReport, LinkModel};
pub use scenario::{LinkScenario, ScenarioConfig};
