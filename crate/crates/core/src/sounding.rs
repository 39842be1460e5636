//! Time-interleaved channel sounding between a TX controller and an RX agent.
//!
//! The controller steps its own switch through every TX element (outer loop)
//! and remotely steps the RX switch through every RX element (inner loop). For
//! each pair the agent reports the received probe power, from which the
//! controller builds a measured [`CouplingMap`] and a [`PairRanking`]. The
//! control channel is reliable and ordered.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ElementId, ElementIndex};
use crate::optics::{pair_coupling, CouplingMap, FpaTerminal, OpticsError, PairLoss};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoundingError {
    #[error("invalid sounding config: {0}")]
    Config(String),
    #[error("empty ranking")]
    EmptyRanking,
    #[error("pair ({0}, {1}) is not part of the ranking")]
    UnknownPair(ElementId, ElementId),
}

/// Failure of the coupling oracle while measuring one pair.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("oracle failed at ({tx}, {rx}): {reason}")]
pub struct OracleError {
    pub tx: ElementId,
    pub rx: ElementId,
    pub reason: String,
}

/// Ground-truth loss of a TX/RX pair, as seen by the power meter.
pub trait CouplingOracle {
    fn true_loss_db(&self, tx: ElementId, rx: ElementId) -> Result<f64, OracleError>;
}

impl CouplingOracle for CouplingMap {
    fn true_loss_db(&self, tx: ElementId, rx: ElementId) -> Result<f64, OracleError> {
        self.loss(tx, rx).ok_or_else(|| OracleError { tx, rx, reason: "pair not in map".into() })
    }
}

/// Physical link evaluated pair by pair through the Gaussian overlap model.
pub struct SimulatedLink<'a> {
    pub tx: &'a FpaTerminal,
    pub rx: &'a FpaTerminal,
    pub distance_m: f64,
}

impl CouplingOracle for SimulatedLink<'_> {
    fn true_loss_db(&self, tx: ElementId, rx: ElementId) -> Result<f64, OracleError> {
        let wrap = |e: OpticsError| OracleError { tx, rx, reason: e.to_string() };
        let t = self.tx.lattice.by_id(tx).map_err(|e| wrap(e.into()))?;
        let r = self.rx.lattice.by_id(rx).map_err(|e| wrap(e.into()))?;
        pair_coupling(self.tx, t, self.rx, r, self.distance_m).map_err(wrap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoundingConfig {
    pub dwell_time_s: f64,
    pub power_meter_noise_db: f64,
    pub resound_period_s: f64,
    pub fade_trigger_db: f64,
    /// Margin a pair must keep below `budget_threshold_db` to count as usable.
    pub margin_db: f64,
    /// Highest link loss that still yields a secure key.
    pub budget_threshold_db: f64,
    pub probe_power_dbm: f64,
}

impl Default for SoundingConfig {
    fn default() -> Self {
        Self {
            dwell_time_s: 1e-3,
            power_meter_noise_db: 0.2,
            resound_period_s: 60.0,
            fade_trigger_db: 3.0,
            margin_db: 1.0,
            budget_threshold_db: 26.0,
            probe_power_dbm: 0.0,
        }
    }
}

impl SoundingConfig {
    pub fn validate(&self) -> Result<(), SoundingError> {
        let positive = [
            ("dwell_time_s", self.dwell_time_s),
            ("resound_period_s", self.resound_period_s),
            ("fade_trigger_db", self.fade_trigger_db),
            ("margin_db", self.margin_db),
            ("budget_threshold_db", self.budget_threshold_db),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SoundingError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.power_meter_noise_db >= 0.0 && self.power_meter_noise_db.is_finite()) {
            return Err(SoundingError::Config("power_meter_noise_db must be non-negative".into()));
        }
        if !self.probe_power_dbm.is_finite() {
            return Err(SoundingError::Config("probe_power_dbm must be finite".into()));
        }
        Ok(())
    }

    pub fn is_usable(&self, loss_db: f64) -> bool {
        loss_db + self.margin_db <= self.budget_threshold_db
    }

    pub fn resound_due(&self, last_sounding_s: f64, now_s: f64) -> bool {
        now_s - last_sounding_s >= self.resound_period_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MessageKind {
    BeginSound,
    SetTx { tx: ElementId },
    SetRx { rx: ElementId },
    Report { tx: ElementId, rx: ElementId, power_dbm: f64 },
    EndSound,
    Ack,
    Nack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundingMessage {
    pub sequence: u64,
    pub timestamp_s: f64,
    #[serde(flatten)]
    pub kind: MessageKind,
}

/// JSON-lines encoding, one message per line.
pub fn trace_to_jsonl(trace: &[SoundingMessage]) -> String {
    let mut out = String::new();
    for m in trace {
        out.push_str(&serde_json::to_string(m).expect("messages serialize"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(text: &str) -> Result<Vec<SoundingMessage>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRanking {
    /// Ascending by loss, ties by (tx, rx).
    pub entries: Vec<PairLoss>,
    pub usable_count: usize,
}

impl PairRanking {
    pub fn from_map(map: &CouplingMap, cfg: &SoundingConfig) -> Self {
        let mut entries: Vec<PairLoss> = map.pairs().collect();
        entries.sort_by(|a, b| a.loss_db.total_cmp(&b.loss_db).then((a.tx, a.rx).cmp(&(b.tx, b.rx))));
        let usable_count = entries.iter().filter(|e| cfg.is_usable(e.loss_db)).count();
        Self { entries, usable_count }
    }

    pub fn best(&self) -> Option<PairLoss> {
        self.entries.first().copied()
    }

    /// Entries within `window_db` of the best one, the best included.
    pub fn within_of_best(&self, window_db: f64) -> usize {
        match self.best() {
            Some(b) => self.entries.iter().take_while(|e| e.loss_db - b.loss_db < window_db).count(),
            None => 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tx_id,rx_id,loss_db\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:.3}\n", e.tx, e.rx, e.loss_db));
        }
        out
    }
}

pub fn select_pair(ranking: &PairRanking) -> Result<(ElementId, ElementId), SoundingError> {
    ranking.best().map(|b| (b.tx, b.rx)).ok_or(SoundingError::EmptyRanking)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailoverDecision {
    Stay,
    SwitchTo(ElementId, ElementId),
    Resound,
}

/// Reaction to an observed power drop on the active pair.
///
/// Below the fade trigger nothing happens. Otherwise the first usable entry
/// ranked after the current pair, whose recorded loss beats the faded loss of
/// the current pair, is chosen; when the list is exhausted a new sounding is
/// requested.
pub fn fading_failover(
    ranking: &PairRanking,
    current: (ElementId, ElementId),
    observed_drop_db: f64,
    cfg: &SoundingConfig,
) -> Result<FailoverDecision, SoundingError> {
    let pos =
        ranking.entries.iter().position(|e| (e.tx, e.rx) == current).ok_or(SoundingError::UnknownPair(current.0, current.1))?;
    if observed_drop_db < cfg.fade_trigger_db {
        return Ok(FailoverDecision::Stay);
    }
    let faded = ranking.entries[pos].loss_db + observed_drop_db;
    Ok(ranking.entries[pos + 1..]
        .iter()
        .find(|e| cfg.is_usable(e.loss_db) && e.loss_db < faded)
        .map_or(FailoverDecision::Resound, |e| FailoverDecision::SwitchTo(e.tx, e.rx)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundingSession {
    pub map: CouplingMap,
    pub ranking: PairRanking,
    pub trace: Vec<SoundingMessage>,
}

/// A sweep that stopped early. The partial measurements are not a valid map.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("sounding aborted after {} of {expected} pairs: {cause}", measured.len())]
pub struct SoundingAbort {
    pub measured: Vec<PairLoss>,
    pub expected: usize,
    pub trace: Vec<SoundingMessage>,
    pub cause: OracleError,
}

struct Controller {
    seq: u64,
    now_s: f64,
    trace: Vec<SoundingMessage>,
}

impl Controller {
    fn send(&mut self, kind: MessageKind) {
        self.trace.push(SoundingMessage { sequence: self.seq, timestamp_s: self.now_s, kind });
        self.seq += 1;
    }
}

/// Sweeps every (TX, RX) pair once and ranks the measured losses.
pub fn run_sounding(
    oracle: &dyn CouplingOracle,
    tx_ids: &[ElementIndex],
    rx_ids: &[ElementIndex],
    distance_m: f64,
    cfg: &SoundingConfig,
    seed: u64,
) -> Result<Result<SoundingSession, SoundingAbort>, SoundingError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.power_meter_noise_db).map_err(|e| SoundingError::Config(e.to_string()))?;
    let expected = tx_ids.len() * rx_ids.len();
    let mut ctl = Controller { seq: 0, now_s: 0.0, trace: Vec::with_capacity(3 * expected + 8) };
    let mut measured = Vec::with_capacity(expected);

    ctl.send(MessageKind::BeginSound);
    ctl.send(MessageKind::Ack);
    for t in tx_ids {
        ctl.send(MessageKind::SetTx { tx: t.id });
        for r in rx_ids {
            ctl.send(MessageKind::SetRx { rx: r.id });
            match oracle.true_loss_db(t.id, r.id) {
                Ok(loss) => {
                    // sample unconditionally so the noise stream does not depend on σ
                    let n = noise.sample(&mut rng);
                    let measured_loss = if cfg.power_meter_noise_db > 0.0 { loss + n } else { loss };
                    ctl.now_s += cfg.dwell_time_s;
                    ctl.send(MessageKind::Report { tx: t.id, rx: r.id, power_dbm: cfg.probe_power_dbm - measured_loss });
                    measured.push(PairLoss { tx: t.id, rx: r.id, loss_db: measured_loss });
                }
                Err(cause) => {
                    ctl.send(MessageKind::Nack);
                    return Ok(Err(SoundingAbort { measured, expected, trace: ctl.trace, cause }));
                }
            }
        }
    }
    ctl.send(MessageKind::EndSound);
    ctl.send(MessageKind::Ack);

    let map = CouplingMap::new(
        tx_ids.iter().map(|e| e.id).collect(),
        rx_ids.iter().map(|e| e.id).collect(),
        measured.iter().map(|m| m.loss_db).collect(),
        distance_m,
    );
    let ranking = PairRanking::from_map(&map, cfg);
    Ok(Ok(SoundingSession { map, ranking, trace: ctl.trace }))
}
