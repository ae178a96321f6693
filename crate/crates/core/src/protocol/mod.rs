//! Heralded magnon entanglement: entangling stage, read-out stage, thermal
//! closed form and the correlation witness.
//!
//! The entangling pulse is treated as a classical coherent amplitude `√p`
//! split on the input beamsplitter; each arm then scatters Stokes photons
//! with pair probability `tanh² r_X = P_X |β_X|²` and phase `arg β_X`. The
//! pulse modes themselves never enter the Hilbert space.
//!
//! Port conventions: after the output beamsplitter, detector 1 sits on the
//! `*_A` mode and detector 2 on the `*_B` mode. A detector-1 herald prepares
//! `(|01⟩ − |10⟩)/√2` on `(magnon_A, magnon_B)`, detector 2 the `+` state.

pub mod config;
pub mod stats;
pub mod witness;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{
    beamsplitter_unitary, loss_channel, phase_shift_unitary, swap_coupler_unitary, thermal_state,
    two_mode_squeezer_unitary, BeamsplitterSpec, SqueezerSpec, SwapSpec,
};
use crate::error::{Error, Result};
use crate::fock::{DensityOperator, Evolve, ModeRegistry, MultiModeState, Tolerances};

pub use config::{
    load_config, mean_thermal_occupation, parse_config, thermal_ratio, HeraldDetector, MonteCarloSettings,
    Numerics, PhysicalCouplings, ProtocolConfig, ThermalSource,
};
pub use stats::{outcome_distributions, ClickOutcome, OutcomeDistribution};
pub use witness::{separable_baseline, witness_exact, SeparableBaseline, WitnessPoint};

pub const STOKES_A: &str = "stokes_A";
pub const STOKES_B: &str = "stokes_B";
pub const MAGNON_A: &str = "magnon_A";
pub const MAGNON_B: &str = "magnon_B";
pub const ANTISTOKES_A: &str = "antistokes_A";
pub const ANTISTOKES_B: &str = "antistokes_B";

/// Constant of the report-only thermal consistency bound `max(p, P, S²)·C`.
pub const CONSISTENCY_CONSTANT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeraldSign {
    Plus,
    Minus,
}

impl HeraldSign {
    pub fn from_detector(d: HeraldDetector) -> Self {
        match d {
            HeraldDetector::One => Self::Minus,
            HeraldDetector::Two => Self::Plus,
        }
    }

    fn factor(self) -> f64 {
        match self {
            Self::Plus => 1.0,
            Self::Minus => -1.0,
        }
    }
}

/// Stokes mode feeding detector `d`.
pub fn stokes_port(d: HeraldDetector) -> &'static str {
    match d {
        HeraldDetector::One => STOKES_A,
        HeraldDetector::Two => STOKES_B,
    }
}

pub fn magnon_registry(cutoff: usize) -> Result<ModeRegistry> {
    ModeRegistry::new([(MAGNON_A, cutoff), (MAGNON_B, cutoff)])
}

/// `(|01⟩ ± |10⟩)/√2` on `(magnon_A, magnon_B)`.
pub fn ideal_target_state(sign: HeraldSign, magnon_cutoff: usize) -> Result<MultiModeState> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    MultiModeState::from_terms(
        &magnon_registry(magnon_cutoff)?,
        &[
            (&[0, 1], Complex64::new(h, 0.0)),
            (&[1, 0], Complex64::new(sign.factor() * h, 0.0)),
        ],
    )
}

#[derive(Debug, Clone)]
pub struct HeraldedState {
    pub rho_magnons: DensityOperator,
    pub herald_probability: f64,
    pub herald_sign: HeraldSign,
    pub truncation_error: f64,
}

impl HeraldedState {
    pub fn fidelity_to_target(&self) -> Result<f64> {
        let cutoff = self.rho_magnons.registry().cutoff_of(MAGNON_A)?;
        let target = ideal_target_state(self.herald_sign, cutoff)?;
        self.rho_magnons.fidelity_with_pure(&target, &Tolerances::default())
    }
}

/// Joint state of `(stokes_A, stokes_B, magnon_A, magnon_B)` just before the
/// Stokes detectors, with the summed truncation error of its ingredients.
pub(crate) fn entangle_pre_detection(config: &ProtocolConfig) -> Result<(DensityOperator, f64)> {
    config.validate()?;
    let n = &config.numerics;
    let nbar = config.mean_occupation()?;
    let (th_a, tail_a) = thermal_state(MAGNON_A, nbar, n.magnon_cutoff)?;
    let (th_b, tail_b) = thermal_state(MAGNON_B, nbar, n.magnon_cutoff)?;
    let optics = DensityOperator::vacuum(&ModeRegistry::new([
        (STOKES_A, n.optical_cutoff),
        (STOKES_B, n.optical_cutoff),
    ])?);
    let mut rho = optics.tensor(&th_a)?.tensor(&th_b)?;
    let registry = rho.registry().clone();

    let splitter = BeamsplitterSpec::balanced("pulse_A", "pulse_B");
    let alpha = Complex64::new(config.pulse_mean_photons.sqrt(), 0.0);
    let (beta_a, beta_b) = splitter.transform_amplitudes(alpha, Complex64::new(0.0, 0.0));
    let mut truncation = tail_a + tail_b;
    for (stokes, magnon, beta, prob) in [
        (STOKES_A, MAGNON_A, beta_a, config.stokes_probability_a),
        (STOKES_B, MAGNON_B, beta_b, config.stokes_probability_b),
    ] {
        let lambda = prob * beta.norm_sqr();
        let spec = SqueezerSpec::from_probability(stokes, magnon, lambda, beta.arg())?;
        truncation += spec.vacuum_truncation_error(n.optical_cutoff.min(n.magnon_cutoff));
        let u = two_mode_squeezer_unitary(&spec, &registry, n.truncation_bound)?;
        rho = rho.apply_unitary(&u)?;
    }
    rho = loss_channel(&rho, STOKES_A, config.transmissivity_a)?;
    rho = loss_channel(&rho, STOKES_B, config.transmissivity_b)?;
    let bs = beamsplitter_unitary(&BeamsplitterSpec::balanced(STOKES_A, STOKES_B), &registry)?;
    Ok((rho.apply_unitary(&bs)?, truncation))
}

/// Runs the entangling stage and conditions on exactly the configured herald
/// detector clicking (the other one silent).
pub fn entangle_stage(config: &ProtocolConfig) -> Result<HeraldedState> {
    let (rho, truncation_error) = entangle_pre_detection(config)?;
    let det = config.detector;
    let herald = config.herald_detector;
    let sigma = rho.trace_out_weighted(&[STOKES_A, STOKES_B], |t| match herald {
        HeraldDetector::One => det.click_weight(t[0]) * det.no_click_weight(t[1]),
        HeraldDetector::Two => det.no_click_weight(t[0]) * det.click_weight(t[1]),
    })?;
    let herald_probability = sigma.trace().re.max(0.0);
    if !(herald_probability > config.numerics.herald_floor) {
        return Err(Error::HeraldBelowFloor {
            probability: herald_probability,
            floor: config.numerics.herald_floor,
        });
    }
    Ok(HeraldedState {
        rho_magnons: sigma.normalized()?,
        herald_probability,
        herald_sign: HeraldSign::from_detector(herald),
        truncation_error,
    })
}

fn phi_state(registry: &ModeRegistry, sign: HeraldSign, base: [usize; 2]) -> Result<MultiModeState> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let [i, j] = base;
    MultiModeState::from_terms(
        registry,
        &[
            (&[i, j + 1], Complex64::new(h, 0.0)),
            (&[i + 1, j], Complex64::new(sign.factor() * h, 0.0)),
        ],
    )
}

/// Closed-form thermally degraded herald state
/// `∝ |φ₀₀⟩⟨φ₀₀| + S(|φ₀₁⟩⟨φ₀₁| + |φ₁₀⟩⟨φ₁₀|) + S²|φ₁₁⟩⟨φ₁₁|`, where `φ_ij`
/// adds one shared excitation on top of the initial `|ij⟩`.
pub fn thermal_final_state(s: f64, sign: HeraldSign, magnon_cutoff: usize) -> Result<DensityOperator> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::OutOfRange {
            name: "thermal ratio",
            value: s,
            allowed: "[0, 1)",
        });
    }
    if magnon_cutoff < 2 {
        return Err(Error::InvalidCutoff(format!("{MAGNON_A} needs cutoff >= 2")));
    }
    let registry = magnon_registry(magnon_cutoff)?;
    let mut terms = Vec::new();
    for (w, base) in [(1.0, [0, 0]), (s, [0, 1]), (s, [1, 0]), (s * s, [1, 1])] {
        terms.push((w, DensityOperator::from_pure(&phi_state(&registry, sign, base)?)));
    }
    let refs: Vec<(f64, &DensityOperator)> = terms.iter().map(|(w, r)| (*w, r)).collect();
    DensityOperator::mixture(&refs)?.normalized()
}

/// Comparison of the full pipeline with the closed form; report only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalConsistencyReport {
    pub thermal_ratio: f64,
    pub herald_probability: f64,
    /// `None` when nothing heralds (e.g. `P = 0`).
    pub trace_distance: Option<f64>,
    pub fidelity_pipeline: Option<f64>,
    pub fidelity_closed_form: f64,
    pub bound: f64,
    pub within_bound: bool,
}

pub fn consistency_check_thermal(config: &ProtocolConfig) -> Result<ThermalConsistencyReport> {
    let s = config.thermal_ratio()?;
    let sign = HeraldSign::from_detector(config.herald_detector);
    let closed = thermal_final_state(s, sign, config.numerics.magnon_cutoff)?;
    let target = ideal_target_state(sign, config.numerics.magnon_cutoff)?;
    let fidelity_closed_form = closed.fidelity_with_pure(&target, &Tolerances::default())?;
    let p_max = config
        .pulse_mean_photons
        .max(config.stokes_probability_a)
        .max(config.stokes_probability_b);
    let bound = p_max.max(s * s) * CONSISTENCY_CONSTANT;
    match entangle_stage(config) {
        Ok(h) => {
            let d = h.rho_magnons.trace_distance(&closed)?;
            Ok(ThermalConsistencyReport {
                thermal_ratio: s,
                herald_probability: h.herald_probability,
                trace_distance: Some(d),
                fidelity_pipeline: Some(h.fidelity_to_target()?),
                fidelity_closed_form,
                bound,
                within_bound: d <= bound,
            })
        }
        Err(Error::HeraldBelowFloor { probability, .. }) => Ok(ThermalConsistencyReport {
            thermal_ratio: s,
            herald_probability: probability,
            trace_distance: None,
            fidelity_pipeline: None,
            fidelity_closed_form,
            bound,
            within_bound: false,
        }),
        Err(e) => Err(e),
    }
}

/// Swaps each magnon onto a fresh anti-Stokes mode and traces the magnon out.
/// Any other modes of `rho` (e.g. a Stokes port) are carried along. Works on
/// unnormalized operators.
pub(crate) fn convert_magnons(rho: &DensityOperator, config: &ProtocolConfig) -> Result<DensityOperator> {
    let n = &config.numerics;
    let as_cutoff = n.optical_cutoff.max(n.magnon_cutoff);
    let mut rho = rho.clone();
    if config.magnon_delay_over_lifetime > 0.0 {
        let eta = (-config.magnon_delay_over_lifetime).exp();
        rho = loss_channel(&rho, MAGNON_A, eta)?;
        rho = loss_channel(&rho, MAGNON_B, eta)?;
    }
    for (magnon, antistokes) in [(MAGNON_A, ANTISTOKES_A), (MAGNON_B, ANTISTOKES_B)] {
        rho = rho.tensor(&DensityOperator::vacuum(&ModeRegistry::single(antistokes, as_cutoff)?))?;
        let u = swap_coupler_unitary(&SwapSpec::new(antistokes, magnon, config.read_swap_angle_rad), rho.registry())?;
        rho = rho.apply_unitary(&u)?;
        let keep: Vec<String> = rho.registry().labels().filter(|l| *l != magnon).map(String::from).collect();
        let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
        rho = rho.partial_trace(&keep)?;
    }
    Ok(rho)
}

/// Phase offset on arm A, propagation loss, output beamsplitter.
pub(crate) fn interfere_antistokes(
    rho: &DensityOperator,
    config: &ProtocolConfig,
    delta_phi: f64,
) -> Result<DensityOperator> {
    let registry = rho.registry().clone();
    let mut rho = rho.apply_unitary(&phase_shift_unitary(&registry, ANTISTOKES_A, delta_phi)?)?;
    rho = loss_channel(&rho, ANTISTOKES_A, config.transmissivity_a)?;
    rho = loss_channel(&rho, ANTISTOKES_B, config.transmissivity_b)?;
    let bs = beamsplitter_unitary(&BeamsplitterSpec::balanced(ANTISTOKES_A, ANTISTOKES_B), &registry)?;
    rho.apply_unitary(&bs)
}

/// Read-out stage: the anti-Stokes state at the two read detectors
/// (detector 1 on `antistokes_A`, detector 2 on `antistokes_B`).
pub fn read_stage(heralded: &HeraldedState, config: &ProtocolConfig) -> Result<DensityOperator> {
    config.validate()?;
    let converted = convert_magnons(&heralded.rho_magnons, config)?;
    interfere_antistokes(&converted, config, config.read_phase_rad)
}
