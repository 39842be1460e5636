//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every verdict is printed.
//!
//! The process fails if a criterion fails that is not listed in
//! `KNOWN_FAILURES`, or if a listed one unexpectedly passes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;

use fpa_qkd::coexistence::ChannelPlan;
use fpa_qkd::geometry::{field_of_view_deg, footprint_m, CollimatorSpec, HexLattice};
use fpa_qkd::optics::collimate;
use fpa_qkd::rates::{
    aes_gcm_secured_capacity, detection_rates, fiber_equivalent, qber, qber_crossing_budget, secure_fraction,
    secure_threshold_qber, sweep_classical_power,
};
use fpa_qkd::scenario::{LinkScenario, ScenarioConfig};
use fpa_qkd::sim::{generate_tags, sift_and_estimate};

/// Criteria that are implemented as stated and cannot pass; see the
/// project notes for the analysis.
const KNOWN_FAILURES: &[&str] = &["AC8", "AC9"];

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, &'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn shipped(name: &str) -> LinkScenario {
    ScenarioConfig::load(&scenario_path(name)).and_then(|c| c.resolve()).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ac1() -> Verdict {
    let l = HexLattice::lantern61();
    let c = CollimatorSpec::two_inch_150mm();
    let fov = field_of_view_deg(&l, &c);
    let fp = footprint_m(&l, &c, 63.0);
    verdict(within(fov, 0.127, 0.005) && within(fp, 0.139, 0.005), format!("FoV {fov:.4} deg, 63 m footprint {fp:.4} m"))
}

fn ac2() -> Verdict {
    let d = collimate(&HexLattice::lantern61(), &CollimatorSpec::two_inch_150mm(), 1550.12e-9).unwrap().diameter_m();
    let rel = (d - 0.032).abs() / 0.032;
    verdict(within(d, 0.0352, 0.0001) && rel <= 0.15, format!("diameter {:.2} mm, {:.1} % from 32 mm", d * 1e3, rel * 100.0))
}

fn ac3() -> Verdict {
    let q = secure_threshold_qber(1.0);
    verdict(within(q, 0.110, 0.002), format!("secure fraction reaches zero at Q = {q:.4}"))
}

fn ac4() -> Verdict {
    let a = 17_500.0 * secure_fraction(0.103);
    let b = 10_100.0 * secure_fraction(0.0913);
    verdict(
        (a - 785.0).abs() <= 0.10 * 785.0 && (b - 1200.0).abs() <= 0.05 * 1200.0,
        format!("SKR {a:.0} b/s (vs 785), {b:.0} b/s (vs 1200)"),
    )
}

fn ac5() -> Verdict {
    let c = aes_gcm_secured_capacity(785.0);
    verdict((c - 1.57e12).abs() <= 0.01 * 1.57e12, format!("{:.4} Tb/s", c / 1e12))
}

fn ac6() -> Verdict {
    let km = fiber_equivalent(26.0);
    verdict(within(km, 93.9, 0.5), format!("{km:.2} km"))
}

fn ac7() -> Verdict {
    let b2b = shipped("b2b.cfg");
    let fso = shipped("fso_indoor_6m.cfg");
    let r0 = b2b.link.evaluate(0.0).unwrap();
    let threshold = secure_threshold_qber(1.0);
    let cross = qber_crossing_budget(&b2b.link, threshold, 100.0).unwrap();
    let fso_cross = qber_crossing_budget(&fso.link, threshold, 100.0).unwrap();
    let headroom = fso_cross - fso.budget_db().unwrap();
    let pass = (r0.sifted_rate_hz - 54_300.0).abs() <= 0.01 * 54_300.0
        && within(r0.qber, 0.0207, 0.0005)
        && within(cross, 26.0, 4.0)
        && within(headroom, 10.5, 4.0);
    verdict(
        pass,
        format!(
            "0 dB: {:.1} b/s, QBER {:.3} %; crossing {cross:.2} dB; FSO headroom {headroom:.2} dB",
            r0.sifted_rate_hz,
            r0.qber * 100.0
        ),
    )
}

fn ac8() -> Verdict {
    let s = shipped("coexistence.cfg");
    let budget = s.budget_db().unwrap();
    let quiet = s.quiet_link.evaluate(budget).unwrap().qber;
    let loaded = sweep_classical_power(&s.quiet_link, budget, &s.coexistence, &[0.0, 11.2]).unwrap();
    let shift_pp = (loaded[0].qber - quiet) * 100.0;
    verdict(
        shift_pp <= 0.3,
        format!("Q(11.2 dBm) = {:.2} %, shift at 0 dBm {shift_pp:.3} pp (limit 0.3)", loaded[1].qber * 100.0),
    )
}

fn ac9() -> Verdict {
    let (lo, hi) = ChannelPlan::default_plan().detuning_extremes_hz();
    verdict(
        within(lo, 155.5e9, 2e9) && within(hi, 8.19e12, 2e9),
        format!("detuning {:.2} GHz .. {:.2} GHz (targets 155.5, 8190 +/- 2)", lo / 1e9, hi / 1e9),
    )
}

fn ac10() -> Verdict {
    let s = shipped("b2b.cfg");
    let analytic = detection_rates(&s.link, 0.0).unwrap();
    let rate = 0.5 * (analytic.sifted_rate_hz + analytic.accepted_background_hz);
    let q = qber(analytic.sifted_rate_hz, analytic.accepted_background_hz, s.link.environment.intrinsic_error).unwrap();
    let seeds: Vec<u64> = (0..100).map(|i| 1_000 + i).collect();
    let good = seeds
        .par_iter()
        .filter(|&&seed| {
            let est = sift_and_estimate(&generate_tags(&s.link, 0.0, 10.0, seed).unwrap());
            let q_est = est.qber.expect("sifted events");
            (est.sifted_rate_hz - rate).abs() <= 3.0 * est.sifted_rate_std_err()
                && (q_est - q).abs() <= 3.0 * est.qber_std_err().unwrap()
        })
        .count();

    let mut dark = s.link.clone();
    dark.source.mean_photon_number = 0.0;
    let tau = dark.detectors.dead_time_s;
    let dark_good = seeds
        .par_iter()
        .filter(|&&seed| {
            let est = sift_and_estimate(&generate_tags(&dark, 0.0, 10.0, seed).unwrap());
            (0..2).all(|d| {
                // dead-time corrected estimate of the incident rate
                let r = est.registered_rate_hz(d);
                let corrected = r / (1.0 - r * tau);
                let se = (est.registered_per_detector[d] as f64).sqrt() / est.duration_s / (1.0 - r * tau).powi(2);
                (corrected - dark.detectors.dark_rate_hz[d]).abs() <= 3.0 * se
            })
        })
        .count();
    verdict(good >= 99 && dark_good >= 99, format!("{good}/100 b2b runs and {dark_good}/100 dark-only runs within 3 SE"))
}

fn ac11() -> Verdict {
    let aligned = shipped("b2b.cfg");
    let aligned_best = aligned.coupling_map().unwrap().best().unwrap();
    let center = aligned.tx.lattice.center().id;
    let s = shipped("fso_indoor_6m.cfg");
    let map = s.coupling_map().unwrap();
    let best = map.best().unwrap();
    let row = map.row(best.tx).unwrap();
    let second = map.rx_ids.iter().zip(row).filter(|(id, _)| **id != best.rx).map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
    let fallbacks = map.pairs().filter(|p| (p.tx, p.rx) != (best.tx, best.rx) && p.loss_db - best.loss_db < 3.0).count();
    let pass = aligned_best.tx == center
        && aligned_best.rx == center
        && within(best.loss_db, 15.5, 0.1)
        && (best.tx, best.rx) != (center, center)
        && second - best.loss_db >= 14.4
        && fallbacks >= 1;
    verdict(
        pass,
        format!(
            "aligned best ({}, {}); calibrated best ({}, {}) at {:.3} dB, next receiver {:.1} dB lower, {fallbacks} fallbacks within 3 dB",
            aligned_best.tx,
            aligned_best.rx,
            best.tx,
            best.rx,
            best.loss_db,
            second - best.loss_db
        ),
    )
}

fn run_cli(out: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_fpa-qkd")).arg("--out-dir").arg(out).args(args).output().expect("spawn cli");
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn ac12() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let mut checked = 0;
    for name in ["b2b.cfg", "fso_indoor_6m.cfg", "fso_outdoor_63m.cfg", "coexistence.cfg"] {
        let cfg = work.path().join(name);
        std::fs::copy(scenario_path(name), &cfg).unwrap();
        let cfg_s = cfg.to_str().unwrap();
        let commands: Vec<Vec<&str>> = vec![
            vec!["calibrate", cfg_s],
            vec!["map", cfg_s],
            vec!["--format", "json", "map", cfg_s],
            vec!["sweep-budget", cfg_s],
            vec!["sweep-power", cfg_s],
            vec!["--format", "json", "sweep-power", cfg_s],
            vec!["montecarlo", cfg_s, "--duration", "1", "--tags-csv"],
            vec!["--seed", "99", "montecarlo", cfg_s, "--duration", "1"],
            vec!["capacity", "785"],
        ];
        for (i, args) in commands.iter().enumerate() {
            let mut outputs = Vec::new();
            for rep in 0..2 {
                let out = work.path().join(format!("{name}-{i}-{rep}"));
                let (code, stdout) = run_cli(&out, args);
                let cfg_bytes = std::fs::read(&cfg).unwrap();
                outputs.push((code, stdout.clone(), dir_contents(&out), cfg_bytes));
            }
            checked += 1;
            let (a, b) = (&outputs[0], &outputs[1]);
            if a.0 != 0 {
                failures.push(format!("{name} {args:?} exited {}", a.0));
            }
            let strip = |s: &[u8], rep: usize| String::from_utf8_lossy(s).replace(&format!("{name}-{i}-{rep}"), "OUT");
            if strip(&a.1, 0) != strip(&b.1, 1) || a.2 != b.2 || a.3 != b.3 {
                failures.push(format!("{name} {args:?} differs between runs"));
            }
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() { format!("{checked} invocations reproduced byte for byte") } else { failures.join("; ") },
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("AC1", "field of view and footprint", ac1),
        ("AC2", "collimated beam diameter", ac2),
        ("AC3", "secure-key QBER threshold", ac3),
        ("AC4", "secure-rate reproduction", ac4),
        ("AC5", "AES-GCM secured capacity", ac5),
        ("AC6", "fiber equivalence", ac6),
        ("AC7", "calibrated full chain", ac7),
        ("AC8", "coexistence penalty at 0 dBm", ac8),
        ("AC9", "channel plan detuning extremes", ac9),
        ("AC10", "Monte Carlo oracle equivalence", ac10),
        ("AC11", "coupling map structure", ac11),
        ("AC12", "determinism of every subcommand", ac12),
    ];
    let mut unexpected = Vec::new();
    for (id, title, check) in criteria {
        let v = check();
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (v.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known failure)",
        };
        println!("{id:<5} {tag:<13} {title}: {}", v.detail);
        if v.pass == known {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all verdicts as expected");
    } else {
        println!("acceptance: unexpected verdicts for {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
