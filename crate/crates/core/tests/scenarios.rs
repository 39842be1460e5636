use std::path::PathBuf;

use fpa_qkd::coexistence::{coexistence_noise_rate, ChannelPlan, ChannelRole, NotchFilter, QUANTUM_WAVELENGTH_M};
use fpa_qkd::rates::{detection_rates, qber, sweep_classical_power};
use fpa_qkd::scenario::ScenarioConfig;
use fpa_qkd::sim::{generate_tags, sift_and_estimate};
use fpa_qkd::sounding::{run_sounding, SimulatedLink};
use fpa_qkd::units::{frequency_hz, SPEED_OF_LIGHT};
use proptest::prelude::*;

const SHIPPED: [&str; 4] = ["b2b.cfg", "fso_indoor_6m.cfg", "fso_outdoor_63m.cfg", "coexistence.cfg"];

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn shipped_calibration_is_current() {
    for name in SHIPPED {
        let cfg = ScenarioConfig::load(&path(name)).unwrap();
        let stored = cfg.calibration().unwrap();
        let fresh = cfg.calibrate().unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        assert!(close(stored.system_efficiency, fresh.system_efficiency), "{name}");
        assert!(close(stored.evaluation_acceptance, fresh.evaluation_acceptance), "{name}");
        assert!(close(stored.intrinsic_error, fresh.intrinsic_error), "{name}");
        assert!(close(stored.raman_coefficient, fresh.raman_coefficient), "{name}");
        for i in 0..2 {
            assert!(close(stored.excess_loss_db[i], fresh.excess_loss_db[i]), "{name}");
            assert!(close(stored.solar_slope_hz_per_lux[i], fresh.solar_slope_hz_per_lux[i]), "{name}");
        }
    }
}

#[test]
fn outdoor_scenario_structure() {
    let s = ScenarioConfig::load(&path("fso_outdoor_63m.cfg")).unwrap().resolve().unwrap();
    assert!((s.budget_db().unwrap() - 20.0).abs() < 1e-9);
    let totals: Vec<f64> =
        s.link.environment.background_rate_hz.iter().zip(&s.link.detectors.dark_rate_hz).map(|(b, d)| b + d).collect();
    assert!((totals[0] - 1204.0).abs() < 1e-6 && (totals[1] - 980.0).abs() < 1e-6);
    let r = s.link.evaluate(20.0).unwrap();
    assert!(r.qber > 0.02 && r.qber < 0.11);
    assert!(r.secure_rate_hz > 0.0 && r.secure_rate_hz < r.sifted_rate_hz);
}

#[test]
fn sounding_against_geometry_matches_sounding_against_map() {
    let s = ScenarioConfig::load(&path("fso_indoor_6m.cfg")).unwrap().resolve().unwrap();
    let map = s.coupling_map().unwrap();
    let live = SimulatedLink { tx: &s.tx, rx: &s.rx, distance_m: s.distance_m };
    let a = run_sounding(&map, &s.tx_subset, &s.rx_subset, s.distance_m, &s.sounding, 5).unwrap().unwrap();
    let b = run_sounding(&live, &s.tx_subset, &s.rx_subset, s.distance_m, &s.sounding, 5).unwrap().unwrap();
    assert_eq!(a.ranking, b.ranking);
    assert_eq!(a.trace, b.trace);
    assert!(a.ranking.usable_count >= 2);
}

#[test]
fn monte_carlo_tracks_model_under_loss_and_sunlight() {
    let s = ScenarioConfig::load(&path("fso_outdoor_63m.cfg")).unwrap().resolve().unwrap();
    let budget = s.budget_db().unwrap();
    let analytic = detection_rates(&s.link, budget).unwrap();
    let rate = 0.5 * (analytic.sifted_rate_hz + analytic.accepted_background_hz);
    let q = qber(analytic.sifted_rate_hz, analytic.accepted_background_hz, s.link.environment.intrinsic_error).unwrap();
    let mut ok = 0;
    for seed in 0..10 {
        let est = sift_and_estimate(&generate_tags(&s.link, budget, 5.0, seed).unwrap());
        if (est.sifted_rate_hz - rate).abs() <= 3.0 * est.sifted_rate_std_err()
            && (est.qber.unwrap() - q).abs() <= 3.0 * est.qber_std_err().unwrap()
        {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10");
}

#[test]
fn classical_power_sweep_is_monotone() {
    let s = ScenarioConfig::load(&path("coexistence.cfg")).unwrap().resolve().unwrap();
    let budget = s.budget_db().unwrap();
    let reps = sweep_classical_power(&s.quiet_link, budget, &s.coexistence, &s.power_grid_dbm).unwrap();
    for w in reps.windows(2) {
        assert!(w[1].qber >= w[0].qber);
    }
    let last = reps.iter().find(|r| (r.classical_power_dbm.unwrap() - 11.0).abs() < 1e-9).unwrap();
    assert!(last.qber > 0.09 && last.qber < 0.11);
}

proptest! {
    #[test]
    fn noise_is_linear_in_absolute_power(p in -40.0f64..20.0, rho in 0.0f64..1e-10) {
        let plan = ChannelPlan::default_plan();
        let f = NotchFilter::default();
        let a = coexistence_noise_rate(&plan, p, &f, rho, 0.1);
        let b = coexistence_noise_rate(&plan, p + 10.0 * 2f64.log10(), &f, rho, 0.1);
        prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b);
    }

    #[test]
    fn plan_rejects_channels_inside_the_guard(detuning_ghz in -155.0f64..155.0, slot in 0usize..47) {
        let mut chans: Vec<_> = ChannelPlan::default_plan().channels.iter().map(|c| (c.wavelength_m, c.role)).collect();
        chans[slot] = (SPEED_OF_LIGHT / (frequency_hz(QUANTUM_WAVELENGTH_M) + detuning_ghz * 1e9), ChannelRole::Data);
        prop_assert!(ChannelPlan::from_channels(QUANTUM_WAVELENGTH_M, &chans).is_err());
    }
}
