//! Cross-correlation witness `R_m = 4(g₁ + g₂ − 1)/(g₁ − g₂)²`, where
//! `g_i = ⟨A_i†S_j†A_iS_j⟩/(⟨A_i†A_i⟩⟨S_j†S_j⟩)`.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use super::{
    convert_magnons, entangle_pre_detection, interfere_antistokes, magnon_registry, stokes_port, HeraldDetector,
    ProtocolConfig, ANTISTOKES_A, ANTISTOKES_B, MAGNON_A, MAGNON_B,
};
use crate::channels::thermal_state;
use crate::error::{Error, Result};
use crate::fock::{number_operator, DensityOperator, ModeRegistry};

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessPoint {
    pub delta_phi: f64,
    pub j: usize,
    pub g2_a1_sj: f64,
    pub g2_a2_sj: f64,
    /// `+∞` when `divergent`.
    #[serde(serialize_with = "finite_or_null")]
    pub r_m: f64,
    pub divergent: bool,
}

impl WitnessPoint {
    /// Divergent when `|g₁ − g₂| < ε·max(1, g₁ + g₂)`.
    pub fn from_g2(delta_phi: f64, j: HeraldDetector, g1: f64, g2: f64, epsilon: f64) -> Self {
        let diff = g1 - g2;
        let divergent = diff.abs() < epsilon * (g1 + g2).max(1.0);
        Self {
            delta_phi,
            j: j.index(),
            g2_a1_sj: g1,
            g2_a2_sj: g2,
            r_m: if divergent {
                f64::INFINITY
            } else {
                witness_value(g1, g2)
            },
            divergent,
        }
    }

    pub fn certifies_entanglement(&self) -> bool {
        !self.divergent && self.r_m < 1.0
    }
}

pub fn witness_value(g1: f64, g2: f64) -> f64 {
    4.0 * (g1 + g2 - 1.0) / ((g1 - g2) * (g1 - g2))
}

/// g² pair from exact expectations on a `(stokes, antistokes_A, antistokes_B)` state.
fn g2_pair(rho: &DensityOperator, stokes: &str) -> Result<(f64, f64)> {
    let reg = rho.registry().clone();
    let ns = number_operator(&reg, stokes)?;
    let mean_s = rho.expectation(&ns)?.re;
    if !(mean_s > 0.0) {
        return Err(Error::ZeroIntensity("Stokes light".into()));
    }
    let mut out = [0.0; 2];
    for (k, mode) in [ANTISTOKES_A, ANTISTOKES_B].into_iter().enumerate() {
        let na = number_operator(&reg, mode)?;
        let mean_a = rho.expectation(&na)?.re;
        if !(mean_a > 0.0) {
            return Err(Error::ZeroIntensity(format!("anti-Stokes detector {}", k + 1)));
        }
        let joint = rho.expectation(&na.compose(&ns)?)?.re;
        out[k] = joint / (mean_a * mean_s);
    }
    Ok((out[0], out[1]))
}

fn sweep(
    joint: &DensityOperator,
    stokes: &str,
    config: &ProtocolConfig,
    grid: &[f64],
    j: HeraldDetector,
) -> Result<Vec<WitnessPoint>> {
    let converted = convert_magnons(joint, config)?;
    grid.par_iter()
        .map(|&phi| {
            let out = interfere_antistokes(&converted, config, phi)?;
            let (g1, g2) = g2_pair(&out, stokes)?;
            Ok(WitnessPoint::from_g2(phi, j, g1, g2, config.numerics.divergence_epsilon))
        })
        .collect()
}

/// Unconditioned Stokes/anti-Stokes correlations over one full run, for
/// Stokes detector `j`, at every `Δφ` of `grid` (results in grid order).
pub fn witness_exact(config: &ProtocolConfig, grid: &[f64], j: HeraldDetector) -> Result<Vec<WitnessPoint>> {
    let (rho, _) = entangle_pre_detection(config)?;
    let stokes = stokes_port(j);
    let joint = rho.partial_trace(&[stokes, MAGNON_A, MAGNON_B])?;
    sweep(&joint, stokes, config, grid, j)
}

/// Separable magnon states substituted for the heralded one.
#[derive(Debug, Clone)]
pub enum SeparableBaseline {
    /// Independent thermal states of the given mean occupation on both magnons.
    ProductThermal { mean_occupation: f64 },
    /// `(|01⟩⟨01| + |10⟩⟨10|)/2`.
    ClassicalMixture,
    /// Any state on `(magnon_A, magnon_B)`; separability is the caller's claim.
    Custom(DensityOperator),
}

impl SeparableBaseline {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ProductThermal { .. } => "product_thermal",
            Self::ClassicalMixture => "classical_mixture",
            Self::Custom(_) => "custom",
        }
    }

    pub fn state(&self, magnon_cutoff: usize) -> Result<DensityOperator> {
        match self {
            Self::ProductThermal { mean_occupation } => {
                let (a, _) = thermal_state(MAGNON_A, *mean_occupation, magnon_cutoff)?;
                let (b, _) = thermal_state(MAGNON_B, *mean_occupation, magnon_cutoff)?;
                a.tensor(&b)
            }
            Self::ClassicalMixture => {
                let reg = magnon_registry(magnon_cutoff)?;
                let a = DensityOperator::fock(&reg, &[0, 1])?;
                let b = DensityOperator::fock(&reg, &[1, 0])?;
                DensityOperator::mixture(&[(0.5, &a), (0.5, &b)])
            }
            Self::Custom(rho) => {
                let expected = magnon_registry(magnon_cutoff)?;
                if rho.registry() != &expected {
                    return Err(Error::RegistryMismatch);
                }
                Ok(rho.clone())
            }
        }
    }
}

/// Witness curve with the heralded magnon state replaced by `baseline`.
///
/// The Stokes port keeps its statistics from the pipeline: with probability
/// `q = ⟨S_j†S_j⟩` it holds one photon and the magnons are in the baseline
/// state, otherwise it is empty and the magnons are in vacuum. The joint
/// state is classical on the Stokes side and separable on the magnon side.
pub fn separable_baseline(
    config: &ProtocolConfig,
    baseline: &SeparableBaseline,
    grid: &[f64],
    j: HeraldDetector,
) -> Result<Vec<WitnessPoint>> {
    let (rho, _) = entangle_pre_detection(config)?;
    let stokes = stokes_port(j);
    let joint = rho.partial_trace(&[stokes, MAGNON_A, MAGNON_B])?;
    let cutoff_s = joint.registry().cutoff_of(stokes)?;
    let q = joint.weighted_trace(|t| t[0] as f64);
    if !(q > 0.0) {
        return Err(Error::ZeroIntensity("Stokes light".into()));
    }
    let rest = DensityOperator::vacuum(&magnon_registry(config.numerics.magnon_cutoff)?);
    let tau = baseline.state(config.numerics.magnon_cutoff)?;

    let sreg = ModeRegistry::single(stokes, cutoff_s)?;
    let zero = DensityOperator::fock(&sreg, &[0])?.tensor(&rest)?;
    let one = DensityOperator::fock(&sreg, &[1])?.tensor(&tau)?;
    let state = DensityOperator::mixture(&[(1.0 - q, &zero), (q, &one)])?;
    sweep(&state, stokes, config, grid, j)
}

/// `count` evenly spaced phases covering `[0, 2π)`.
pub fn phase_grid(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / count as f64)
        .collect()
}
