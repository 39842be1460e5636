//! Time-tag Monte Carlo engine and offline sifting.
//!
//! Time is kept in integer femtoseconds. One physical detector serves each
//! basis; the two outcomes of a basis arrive at a quarter and three quarters
//! of the symbol period, so the outcome of a tag is read from its phase.

use std::io::{self, Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rates::{LinkModel, RateError};

pub const TAG_MAGIC: &[u8; 4] = b"FSOQ";
pub const TAG_FORMAT_VERSION: u16 = 1;
const FS_PER_S: f64 = 1e15;
const ALICE_STREAM: u64 = 0;
const ACCEPTANCE_STREAM: u64 = 1;
const DETECTOR_STREAM_BASE: u64 = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] RateError),
    #[error("invalid run: {0}")]
    Invalid(String),
    #[error("tag stream: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolState {
    H,
    V,
    R,
    L,
}

impl PolState {
    fn from_bits(b: u32) -> Self {
        match b & 3 {
            0 => PolState::H,
            1 => PolState::V,
            2 => PolState::R,
            _ => PolState::L,
        }
    }

    /// 0 for H/V, 1 for R/L.
    pub fn basis(self) -> u8 {
        match self {
            PolState::H | PolState::V => 0,
            PolState::R | PolState::L => 1,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            PolState::H | PolState::R => 0,
            PolState::V | PolState::L => 1,
        }
    }
}

/// Integer time base shared by generator and evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timebase {
    pub resolution_fs: u64,
    pub symbol_period_fs: u64,
}

impl Timebase {
    pub fn from_link(link: &LinkModel) -> Result<Self, SimError> {
        let resolution_fs = (link.detectors.timestamp_resolution_s * FS_PER_S).round() as u64;
        let symbol_period_fs = (FS_PER_S / link.source.symbol_rate_hz).round() as u64;
        if resolution_fs == 0 || symbol_period_fs < 4 * resolution_fs {
            return Err(SimError::Invalid(format!(
                "symbol period {symbol_period_fs} fs too short for {resolution_fs} fs timestamps"
            )));
        }
        Ok(Self { resolution_fs, symbol_period_fs })
    }

    pub fn slot_of(&self, tick: u64) -> u64 {
        tick * self.resolution_fs / self.symbol_period_fs
    }

    /// Outcome bit encoded by the position of the tag inside its symbol.
    pub fn bit_of(&self, tick: u64) -> u8 {
        u8::from((tick * self.resolution_fs) % self.symbol_period_fs >= self.symbol_period_fs / 2)
    }

    fn tick_for(&self, slot: u64, bit: u8) -> u64 {
        let offset = if bit == 0 { self.symbol_period_fs / 4 } else { 3 * self.symbol_period_fs / 4 };
        (slot * self.symbol_period_fs + offset) / self.resolution_fs
    }
}

/// Alice's random state record, addressable by symbol slot.
#[derive(Debug, Clone)]
pub struct AliceRecord {
    rng: ChaCha8Rng,
}

impl AliceRecord {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ALICE_STREAM);
        Self { rng }
    }

    pub fn state(&mut self, slot: u64) -> PolState {
        self.rng.set_word_pos(slot as u128);
        PolState::from_bits(self.rng.next_u32())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTag {
    pub detector: u8,
    pub tick: u64,
    /// Alice's state in the tag's slot. Ground truth, not serialized.
    pub true_state: PolState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub seed: u64,
    pub duration_s: f64,
    pub model: LinkModel,
    pub budget_db: f64,
    pub timebase: Timebase,
    /// Sorted by tick, then detector.
    pub tags: Vec<TimeTag>,
}

impl SimRun {
    pub fn dead_ticks(&self) -> u64 {
        dead_ticks(&self.model, &self.timebase)
    }
}

fn dead_ticks(link: &LinkModel, tb: &Timebase) -> u64 {
    (link.detectors.dead_time_s * FS_PER_S / tb.resolution_fs as f64).ceil() as u64
}

/// Photon number of a Poisson(λ) pulse that is known to be non-empty.
fn nonzero_poisson(rng: &mut impl Rng, lambda: f64) -> u32 {
    let total = -(-lambda).exp_m1();
    let mut u = rng.random::<f64>() * total;
    let mut k = 1u32;
    let mut p = (-lambda).exp() * lambda;
    while u > p && k < 1000 {
        u -= p;
        k += 1;
        p *= lambda / k as f64;
    }
    k
}

pub fn generate_tags(link: &LinkModel, budget_db: f64, duration_s: f64, seed: u64) -> Result<SimRun, SimError> {
    link.validate()?;
    if !(duration_s > 0.0) {
        return Err(SimError::Invalid("duration must be positive".into()));
    }
    if !(budget_db >= 0.0) {
        return Err(SimError::Invalid("budget must be non-negative".into()));
    }
    if link.detectors.count() > 2 {
        return Err(SimError::Invalid("the engine models one detector per basis (at most 2)".into()));
    }
    let tb = Timebase::from_link(link)?;
    let end_fs = (duration_s * FS_PER_S).round() as u64;
    let n_slots = end_fs / tb.symbol_period_fs;
    let dead = dead_ticks(link, &tb);
    let lambda = link.photons_per_detector(budget_db);
    let e_int = link.environment.intrinsic_error;
    let noise = link.noise_rate_hz();
    let mut alice = AliceRecord::new(seed);
    let mut tags = Vec::new();

    for (det, &noise_hz) in noise.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DETECTOR_STREAM_BASE + det as u64);
        let basis = det as u8;
        let signal_gap = |rng: &mut ChaCha8Rng| -> u64 {
            if lambda > 0.0 {
                let x: f64 = Exp1.sample(rng);
                let g = (x / lambda).floor();
                if g >= u64::MAX as f64 / 2.0 {
                    u64::MAX / 2
                } else {
                    g as u64
                }
            } else {
                u64::MAX / 2
            }
        };
        let noise_gap = |rng: &mut ChaCha8Rng| -> f64 {
            if noise_hz > 0.0 {
                let x: f64 = Exp1.sample(rng);
                x / noise_hz * FS_PER_S
            } else {
                f64::INFINITY
            }
        };
        let mut next_slot = signal_gap(&mut rng);
        let mut next_noise_fs = noise_gap(&mut rng);
        let mut dead_until = 0u64;
        loop {
            let noise_tick = (next_noise_fs < end_fs as f64).then(|| (next_noise_fs / tb.resolution_fs as f64) as u64);
            let signal = if next_slot < n_slots {
                let slot = next_slot;
                let state = alice.state(slot);
                let mut outcome = 1u8;
                for _ in 0..nonzero_poisson(&mut rng, lambda) {
                    let b = if state.basis() == basis {
                        state.bit() ^ u8::from(rng.random::<f64>() < e_int)
                    } else {
                        u8::from(rng.random::<bool>())
                    };
                    outcome &= b;
                }
                Some((tb.tick_for(slot, outcome), slot))
            } else {
                None
            };
            let (tick, slot) = match (signal, noise_tick) {
                (None, None) => break,
                (Some((st, _)), Some(n)) if n < st => (n, tb.slot_of(n)),
                (Some(s), _) => s,
                (None, Some(n)) => (n, tb.slot_of(n)),
            };
            if tick * tb.resolution_fs >= end_fs {
                break;
            }
            if tick < dead_until {
                // a pulse whose time bin falls inside the dead window
                next_slot = slot + 1 + signal_gap(&mut rng);
                continue;
            }
            tags.push(TimeTag { detector: det as u8, tick, true_state: alice.state(slot) });
            dead_until = tick + dead;
            let dead_until_fs = dead_until * tb.resolution_fs;
            next_slot = (dead_until_fs / tb.symbol_period_fs).max(slot + 1).saturating_add(signal_gap(&mut rng));
            next_noise_fs = dead_until_fs as f64 + noise_gap(&mut rng);
        }
    }
    tags.sort_by_key(|t| (t.tick, t.detector));
    Ok(SimRun { seed, duration_s, model: link.clone(), budget_db, timebase: tb, tags })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftEstimate {
    pub duration_s: f64,
    pub registered_per_detector: Vec<u64>,
    pub accepted: u64,
    /// Accepted tags whose detector basis matches Alice's basis.
    pub sifted: u64,
    pub errors: u64,
    pub sifted_rate_hz: f64,
    /// `None` when nothing was sifted.
    pub qber: Option<f64>,
}

impl SiftEstimate {
    pub fn registered_rate_hz(&self, det: usize) -> f64 {
        self.registered_per_detector[det] as f64 / self.duration_s
    }

    pub fn sifted_rate_std_err(&self) -> f64 {
        (self.sifted as f64).sqrt() / self.duration_s
    }

    pub fn qber_std_err(&self) -> Option<f64> {
        self.qber.map(|q| (q * (1.0 - q) / self.sifted as f64).sqrt())
    }
}

/// Offline evaluation: applies the evaluation acceptance, keeps matched-basis
/// tags and counts errors against Alice's record. Only the serialized fields
/// of the tags are used.
pub fn sift_and_estimate(run: &SimRun) -> SiftEstimate {
    let n_det = run.model.detectors.count();
    let mut registered = vec![0u64; n_det];
    let mut thin = ChaCha8Rng::seed_from_u64(run.seed);
    thin.set_stream(ACCEPTANCE_STREAM);
    let mut alice = AliceRecord::new(run.seed);
    let k = run.model.evaluation_acceptance;
    let (mut accepted, mut sifted, mut errors) = (0u64, 0u64, 0u64);
    for tag in &run.tags {
        registered[tag.detector as usize] += 1;
        if thin.random::<f64>() >= k {
            continue;
        }
        accepted += 1;
        let state = alice.state(run.timebase.slot_of(tag.tick));
        if state.basis() != tag.detector {
            continue;
        }
        sifted += 1;
        if run.timebase.bit_of(tag.tick) != state.bit() {
            errors += 1;
        }
    }
    SiftEstimate {
        duration_s: run.duration_s,
        registered_per_detector: registered,
        accepted,
        sifted,
        errors,
        sifted_rate_hz: sifted as f64 / run.duration_s,
        qber: (sifted > 0).then(|| errors as f64 / sifted as f64),
    }
}

pub fn write_tags_binary(run: &SimRun, mut w: impl Write) -> io::Result<()> {
    w.write_all(TAG_MAGIC)?;
    w.write_all(&TAG_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&run.timebase.resolution_fs.to_le_bytes())?;
    for t in &run.tags {
        w.write_all(&[t.detector])?;
        w.write_all(&t.tick.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a binary tag stream as (resolution_fs, [(detector, tick)]).
pub fn read_tags_binary(mut r: impl Read) -> Result<(u64, Vec<(u8, u64)>), SimError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != TAG_MAGIC {
        return Err(SimError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != TAG_FORMAT_VERSION {
        return Err(SimError::Format(format!("unsupported version {version}")));
    }
    let resolution = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 9 != 0 {
        return Err(SimError::Format("truncated record".into()));
    }
    let recs = body.chunks_exact(9).map(|c| (c[0], u64::from_le_bytes(c[1..9].try_into().expect("8 bytes")))).collect();
    Ok((resolution, recs))
}

pub fn tags_to_csv(run: &SimRun) -> String {
    let mut out = String::from("detector,tick,time_s\n");
    for t in &run.tags {
        let fs = t.tick as u128 * run.timebase.resolution_fs as u128;
        out.push_str(&format!("{},{},{}.{:015}\n", t.detector, t.tick, fs / 1_000_000_000_000_000, fs % 1_000_000_000_000_000));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{detection_rates, qber, DetectorModel, NoiseEnvironment, SourceSpec};

    fn link(mu: f64, dark: [f64; 2], e: f64) -> LinkModel {
        LinkModel {
            source: SourceSpec { mean_photon_number: mu, ..SourceSpec::default() },
            detectors: DetectorModel { dark_rate_hz: dark.to_vec(), ..DetectorModel::default() },
            environment: NoiseEnvironment { background_rate_hz: vec![0.0, 0.0], intrinsic_error: e },
            system_efficiency: 0.2,
            evaluation_acceptance: 0.7,
            ec_efficiency: 1.0,
        }
    }

    #[test]
    fn empty_source_and_no_noise_gives_no_tags() {
        let run = generate_tags(&link(0.0, [0.0, 0.0], 0.02), 0.0, 1.0, 1).unwrap();
        assert!(run.tags.is_empty());
        let est = sift_and_estimate(&run);
        assert_eq!(est.qber, None);
        assert_eq!(est.sifted_rate_hz, 0.0);
    }

    #[test]
    fn dead_time_and_quantization_hold() {
        let run = generate_tags(&link(0.1, [559.0, 599.0], 0.02), 0.0, 0.2, 7).unwrap();
        assert!(!run.tags.is_empty());
        let dead_fs = 25e-6 * 1e15;
        for det in 0..2u8 {
            let ticks: Vec<u64> = run.tags.iter().filter(|t| t.detector == det).map(|t| t.tick).collect();
            for w in ticks.windows(2) {
                assert!(((w[1] - w[0]) * run.timebase.resolution_fs) as f64 >= dead_fs);
            }
        }
        assert_eq!(run.timebase.resolution_fs, 82_300);
    }

    #[test]
    fn same_seed_same_bytes() {
        let l = link(0.1, [559.0, 599.0], 0.02);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_tags_binary(&generate_tags(&l, 3.0, 0.1, 42).unwrap(), &mut a).unwrap();
        write_tags_binary(&generate_tags(&l, 3.0, 0.1, 42).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_tags_binary(&generate_tags(&l, 3.0, 0.1, 43).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn binary_round_trip_and_header() {
        let run = generate_tags(&link(0.1, [559.0, 599.0], 0.02), 0.0, 0.05, 3).unwrap();
        let mut buf = Vec::new();
        write_tags_binary(&run, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"FSOQ");
        assert_eq!(buf.len(), 16 + 9 * run.tags.len());
        let (res, recs) = read_tags_binary(buf.as_slice()).unwrap();
        assert_eq!(res, 82_300);
        let expected: Vec<_> = run.tags.iter().map(|t| (t.detector, t.tick)).collect();
        assert_eq!(recs, expected);
        buf[0] = b'X';
        assert!(read_tags_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn phase_encodes_outcome() {
        let tb = Timebase { resolution_fs: 82_300, symbol_period_fs: 1_000_000 };
        for slot in [0u64, 1, 17, 9_999_999_999] {
            for bit in 0..2 {
                let t = tb.tick_for(slot, bit);
                assert_eq!(tb.slot_of(t), slot);
                assert_eq!(tb.bit_of(t), bit);
            }
        }
    }

    #[test]
    fn error_free_run_has_zero_qber() {
        let run = generate_tags(&link(0.1, [0.0, 0.0], 0.0), 0.0, 0.2, 11).unwrap();
        let est = sift_and_estimate(&run);
        assert!(est.sifted > 1000);
        assert_eq!(est.qber, Some(0.0));
    }

    #[test]
    fn background_only_qber_is_half() {
        let run = generate_tags(&link(0.0, [20_000.0, 20_000.0], 0.0), 0.0, 1.0, 5).unwrap();
        let est = sift_and_estimate(&run);
        let q = est.qber.unwrap();
        assert!((q - 0.5).abs() < 3.0 * est.qber_std_err().unwrap(), "q = {q}");
    }

    #[test]
    fn short_run_tracks_analytic_model() {
        let l = link(0.1, [559.0, 599.0], 0.02);
        let run = generate_tags(&l, 10.0, 1.0, 21).unwrap();
        let est = sift_and_estimate(&run);
        let r = detection_rates(&l, 10.0).unwrap();
        let expected = 0.5 * (r.sifted_rate_hz + r.accepted_background_hz);
        assert!((est.sifted_rate_hz - expected).abs() < 3.0 * est.sifted_rate_std_err());
        let q = qber(r.sifted_rate_hz, r.accepted_background_hz, 0.02).unwrap();
        assert!((est.qber.unwrap() - q).abs() < 3.0 * est.qber_std_err().unwrap());
    }

    #[test]
    fn csv_has_exact_times() {
        let run = generate_tags(&link(0.1, [559.0, 599.0], 0.02), 0.0, 0.01, 2).unwrap();
        let csv = tags_to_csv(&run);
        assert!(csv.starts_with("detector,tick,time_s\n"));
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<_> = line.split(',').collect();
        let tick: u64 = fields[1].parse().unwrap();
        let frac = fields[2].split('.').nth(1).unwrap();
        assert_eq!(frac.parse::<u64>().unwrap(), tick * 82_300);
    }
}
