use std::f64::consts::PI;

use optomag::channels::{click_probability, DetectorSpec};
use optomag::protocol::witness::phase_grid;
use optomag::protocol::*;
use optomag::Tolerances;
use proptest::prelude::*;

fn ideal() -> ProtocolConfig {
    ProtocolConfig::ideal()
}

#[test]
fn loss_leaves_fidelity_and_lowers_rate() {
    let mut last_rate = f64::INFINITY;
    let mut fids = Vec::new();
    for k in 0..=15 {
        let eta = 1.0 - 0.05 * k as f64;
        let h = entangle_stage(&ideal().with_transmissivity(eta)).unwrap();
        assert!(h.herald_probability < last_rate, "eta {eta}");
        last_rate = h.herald_probability;
        fids.push(h.fidelity_to_target().unwrap());
    }
    let spread = fids.iter().cloned().fold(f64::MIN, f64::max) - fids.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.01, "{spread}");
}

#[test]
fn herald_sign_sets_fringe_position() {
    let grid = phase_grid(64);
    let det = DetectorSpec::ideal();
    let argmin = |d: HeraldDetector| {
        let cfg = ProtocolConfig {
            herald_detector: d,
            ..ideal()
        };
        let h = entangle_stage(&cfg).unwrap();
        let probs: Vec<f64> = grid
            .iter()
            .map(|&phi| {
                let out = read_stage(&h, &ProtocolConfig { read_phase_rad: phi, ..cfg.clone() }).unwrap();
                click_probability(&out, ANTISTOKES_A, &det).unwrap()
            })
            .collect();
        let k = (0..probs.len()).min_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        (grid[k], probs)
    };
    let (phi1, p1) = argmin(HeraldDetector::One);
    let (phi2, p2) = argmin(HeraldDetector::Two);
    let shift = (phi2 - phi1).rem_euclid(2.0 * PI);
    assert!((shift - PI).abs() < 1e-9, "{phi1} {phi2}");
    // same contrast, only displaced
    let range = |p: &[f64]| p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
    assert!((range(&p1) - range(&p2)).abs() < 1e-9);
}

#[test]
fn witness_fringe_shifts_by_pi_between_herald_detectors() {
    let grid = phase_grid(32);
    let w1 = witness_exact(&ideal(), &grid, HeraldDetector::One).unwrap();
    let w2 = witness_exact(&ideal(), &grid, HeraldDetector::Two).unwrap();
    for k in 0..grid.len() {
        let shifted = &w1[(k + 16) % 32];
        assert!((w2[k].g2_a1_sj - shifted.g2_a1_sj).abs() < 1e-6 * shifted.g2_a1_sj.max(1.0));
        if !w2[k].divergent {
            assert!((w2[k].r_m - shifted.r_m).abs() < 1e-9 * shifted.r_m.max(1.0));
        }
    }
}

#[test]
fn weak_read_still_certifies() {
    let cfg = ProtocolConfig {
        read_swap_angle_rad: 0.1,
        ..ideal()
    };
    let pts = witness_exact(&cfg, &phase_grid(16), HeraldDetector::One).unwrap();
    assert!(pts.iter().any(|p| p.certifies_entanglement()));
}

#[test]
fn baselines_never_violate() {
    let grid = phase_grid(24);
    let cfg = ProtocolConfig::default();
    for b in [
        SeparableBaseline::ProductThermal { mean_occupation: 0.036 },
        SeparableBaseline::ClassicalMixture,
    ] {
        for j in [HeraldDetector::One, HeraldDetector::Two] {
            for p in separable_baseline(&cfg, &b, &grid, j).unwrap() {
                assert!(p.divergent || p.r_m >= 1.0 - 1e-6, "{} {p:?}", b.name());
            }
        }
    }
}

#[test]
fn consistency_report_at_default_temperature() {
    let r = consistency_check_thermal(&ProtocolConfig::default()).unwrap();
    assert!(r.trace_distance.unwrap() <= r.bound);
    // pipeline keeps the bosonic enhancement the closed form omits: F ≈ (1 − S)³
    let s = r.thermal_ratio;
    assert!((r.fidelity_pipeline.unwrap() - (1.0 - s).powi(3)).abs() < 1e-3);
}

#[test]
fn thermal_pipeline_matches_cubic_oracle() {
    // Weak drive: an initial |ij⟩ heralds with weight ∝ (i + j + 2) and only
    // |00⟩ maps onto the target, so F = 2(1 − S)² / Σ (1 − S)² S^{i+j}(i + j + 2) = (1 − S)³.
    for s in [0.001, 0.01, 0.035] {
        let cfg = ProtocolConfig {
            thermal: ThermalSource::ThermalRatio(s),
            pulse_mean_photons: 1e-3,
            ..ideal().with_stokes_probability(1e-3)
        };
        let mut c5 = cfg.clone();
        c5.numerics.magnon_cutoff = 6;
        let f = entangle_stage(&c5).unwrap().fidelity_to_target().unwrap();
        assert!((f - (1.0 - s).powi(3)).abs() < 2e-4, "S {s}: {f}");
    }
}

#[test]
fn heralded_state_is_valid_density() {
    let h = entangle_stage(&ProtocolConfig::default()).unwrap();
    assert!(h.rho_magnons.is_valid_state(&Tolerances::default()));
    assert!((0.0..=1.0).contains(&h.herald_probability));
    assert!(h.truncation_error < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn herald_scales_linearly(p in 0.002f64..0.005, big_p in 0.002f64..0.005) {
        let base = ProtocolConfig { pulse_mean_photons: p, ..ideal().with_stokes_probability(big_p) };
        let h0 = entangle_stage(&base).unwrap().herald_probability;
        let h_p = entangle_stage(&ProtocolConfig { pulse_mean_photons: 2.0 * p, ..base.clone() }).unwrap().herald_probability;
        let h_big = entangle_stage(&base.clone().with_stokes_probability(2.0 * big_p)).unwrap().herald_probability;
        prop_assert!((h_p / h0 / 2.0 - 1.0).abs() < 0.05);
        prop_assert!((h_big / h0 / 2.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn witness_two_pi_periodic(phi in 0.0f64..6.2) {
        let pts = witness_exact(&ideal(), &[phi, phi + 2.0 * PI], HeraldDetector::One).unwrap();
        prop_assert_eq!(pts[0].divergent, pts[1].divergent);
        if !pts[0].divergent {
            prop_assert!((pts[0].r_m - pts[1].r_m).abs() < 1e-9 * pts[0].r_m.max(1.0));
        }
    }
}
