//! Optical and magnonic building blocks as unitaries and CPTP maps.
//!
//! Beamsplitter convention: `U = exp[θ(e^{iφ} a†b − e^{−iφ} a b†)]`, which maps
//! `a† → cos θ a† − e^{−iφ} sin θ b†` and `b† → cos θ b† + e^{iφ} sin θ a†`.
//! [`BeamsplitterSpec::balanced`] fixes `θ = π/4, φ = π/2`, the symmetric
//! convention where the reflected amplitude picks up a factor `i`:
//! `a† → (a† + i b†)/√2`, `b† → (i a† + b†)/√2`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{local_annihilation, DensityOperator, ModeOperator, ModeRegistry, MultiModeState};
use crate::linalg::{expm, kron, CMatrix};

/// Default bound on the vacuum-input truncation error of a squeezer.
pub const DEFAULT_TRUNCATION_BOUND: f64 = 1e-6;

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::OutOfRange {
            name,
            value,
            allowed: "[0, 1]",
        });
    }
    Ok(())
}

/// Local ladder operators of two distinct modes, in Kronecker order `[a, b]`.
fn pair_ladders(registry: &ModeRegistry, a: &str, b: &str) -> Result<(CMatrix, CMatrix)> {
    if a == b {
        return Err(Error::IdenticalModes(a.to_string()));
    }
    let ca = registry.cutoff_of(a)?;
    let cb = registry.cutoff_of(b)?;
    let ia = CMatrix::identity(ca + 1, ca + 1);
    let ib = CMatrix::identity(cb + 1, cb + 1);
    Ok((
        kron(&local_annihilation(ca), &ib),
        kron(&ia, &local_annihilation(cb)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamsplitterSpec {
    pub mode_a: String,
    pub mode_b: String,
    pub mixing_angle: f64,
    pub relative_phase: f64,
}

impl BeamsplitterSpec {
    pub fn new(mode_a: &str, mode_b: &str, mixing_angle: f64, relative_phase: f64) -> Self {
        Self {
            mode_a: mode_a.to_string(),
            mode_b: mode_b.to_string(),
            mixing_angle,
            relative_phase,
        }
    }

    /// 50/50 splitter in the symmetric convention.
    pub fn balanced(mode_a: &str, mode_b: &str) -> Self {
        Self::new(mode_a, mode_b, FRAC_PI_4, FRAC_PI_2)
    }

    /// Output coherent amplitudes for coherent inputs `|α_a⟩|α_b⟩`.
    pub fn transform_amplitudes(&self, alpha_a: Complex64, alpha_b: Complex64) -> (Complex64, Complex64) {
        let (s, c) = self.mixing_angle.sin_cos();
        let e = Complex64::from_polar(1.0, self.relative_phase);
        (
            alpha_a * c + alpha_b * e * s,
            -alpha_a * e.conj() * s + alpha_b * c,
        )
    }
}

pub fn beamsplitter_unitary(spec: &BeamsplitterSpec, registry: &ModeRegistry) -> Result<ModeOperator> {
    let (a, b) = pair_ladders(registry, &spec.mode_a, &spec.mode_b)?;
    let e = Complex64::from_polar(spec.mixing_angle, spec.relative_phase);
    let gen = a.adjoint() * &b * e - &a * b.adjoint() * e.conj();
    ModeOperator::from_local(registry, &[&spec.mode_a, &spec.mode_b], &expm(&gen))
}

/// Stokes-type two-mode squeezer `exp[r(e^{iχ} a†m† − e^{−iχ} a m)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezerSpec {
    pub optical_mode: String,
    pub magnon_mode: String,
    pub squeeze_parameter: f64,
    pub phase: f64,
}

impl SqueezerSpec {
    pub fn new(optical_mode: &str, magnon_mode: &str, squeeze_parameter: f64, phase: f64) -> Self {
        Self {
            optical_mode: optical_mode.to_string(),
            magnon_mode: magnon_mode.to_string(),
            squeeze_parameter,
            phase,
        }
    }

    /// Squeezer whose single-pair probability `tanh² r` equals `probability`.
    pub fn from_probability(optical_mode: &str, magnon_mode: &str, probability: f64, phase: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&probability) {
            return Err(Error::OutOfRange {
                name: "scattering probability",
                value: probability,
                allowed: "[0, 1)",
            });
        }
        Ok(Self::new(optical_mode, magnon_mode, probability.sqrt().atanh(), phase))
    }

    pub fn scattering_probability(&self) -> f64 {
        self.squeeze_parameter.tanh().powi(2)
    }

    /// Same squeezer with the opposite sign of `r` (its inverse).
    pub fn inverse(&self) -> Self {
        Self {
            phase: self.phase + std::f64::consts::PI,
            ..self.clone()
        }
    }

    /// Weight of the ideal squeezed vacuum beyond `cutoff`: `(tanh² r)^{cutoff+1}`.
    pub fn vacuum_truncation_error(&self, cutoff: usize) -> f64 {
        self.scattering_probability().powi(cutoff as i32 + 1)
    }
}

pub fn two_mode_squeezer_unitary(
    spec: &SqueezerSpec,
    registry: &ModeRegistry,
    truncation_bound: f64,
) -> Result<ModeOperator> {
    if !(spec.squeeze_parameter >= 0.0) {
        return Err(Error::OutOfRange {
            name: "squeeze_parameter",
            value: spec.squeeze_parameter,
            allowed: "[0, inf)",
        });
    }
    let (a, m) = pair_ladders(registry, &spec.optical_mode, &spec.magnon_mode)?;
    let cutoff = registry
        .cutoff_of(&spec.optical_mode)?
        .min(registry.cutoff_of(&spec.magnon_mode)?);
    let err = spec.vacuum_truncation_error(cutoff);
    if err > truncation_bound {
        return Err(Error::TruncationExceeded {
            error: err,
            bound: truncation_bound,
        });
    }
    let e = Complex64::from_polar(spec.squeeze_parameter, spec.phase);
    let gen = a.adjoint() * m.adjoint() * e - &a * &m * e.conj();
    ModeOperator::from_local(registry, &[&spec.optical_mode, &spec.magnon_mode], &expm(&gen))
}

/// Anti-Stokes state-swap coupler `exp[−iθ(a m† + a† m)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapSpec {
    pub optical_mode: String,
    pub magnon_mode: String,
    pub swap_angle: f64,
}

impl SwapSpec {
    pub fn new(optical_mode: &str, magnon_mode: &str, swap_angle: f64) -> Self {
        Self {
            optical_mode: optical_mode.to_string(),
            magnon_mode: magnon_mode.to_string(),
            swap_angle,
        }
    }
}

pub fn swap_coupler_unitary(spec: &SwapSpec, registry: &ModeRegistry) -> Result<ModeOperator> {
    if !(0.0..=FRAC_PI_2 + 1e-12).contains(&spec.swap_angle) {
        return Err(Error::OutOfRange {
            name: "swap_angle",
            value: spec.swap_angle,
            allowed: "[0, pi/2]",
        });
    }
    let (a, m) = pair_ladders(registry, &spec.optical_mode, &spec.magnon_mode)?;
    let coupling = &a * m.adjoint() + a.adjoint() * &m;
    let gen = coupling * Complex64::new(0.0, -spec.swap_angle);
    ModeOperator::from_local(registry, &[&spec.optical_mode, &spec.magnon_mode], &expm(&gen))
}

/// `diag(e^{i n Δφ})` on one mode.
pub fn phase_shift_unitary(registry: &ModeRegistry, mode: &str, delta_phi: f64) -> Result<ModeOperator> {
    let p = registry.position(mode)?;
    Ok(ModeOperator::diagonal(registry, |occ| {
        Complex64::from_polar(1.0, delta_phi * occ[p] as f64)
    }))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kraus operators of the pure-loss channel on occupations `0..=cutoff`:
/// `K_k = Σ_n √(C(n,k) η^{n−k} (1−η)^k) |n−k⟩⟨n|`.
pub fn loss_kraus(cutoff: usize, transmissivity: f64) -> Vec<CMatrix> {
    let d = cutoff + 1;
    (0..d)
        .map(|k| {
            let mut m = CMatrix::zeros(d, d);
            for n in k..d {
                let w = binomial(n, k)
                    * transmissivity.powi((n - k) as i32)
                    * (1.0 - transmissivity).powi(k as i32);
                m[(n - k, n)] = Complex64::new(w.sqrt(), 0.0);
            }
            m
        })
        .collect()
}

/// Pure-loss channel of transmissivity `η` on `mode`. Equivalent to mixing
/// the mode with a vacuum environment on a beamsplitter with `cos²θ = η` and
/// discarding the environment.
pub fn loss_channel(rho: &DensityOperator, mode: &str, transmissivity: f64) -> Result<DensityOperator> {
    check_probability("transmissivity", transmissivity)?;
    let registry = rho.registry();
    let cutoff = registry.cutoff_of(mode)?;
    if transmissivity == 1.0 {
        return Ok(rho.clone());
    }
    let mut out: Option<DensityOperator> = None;
    for k in loss_kraus(cutoff, transmissivity) {
        let op = ModeOperator::from_local(registry, &[mode], &k)?;
        let term = rho.sandwich(&op)?;
        out = Some(match out {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(out.expect("at least one Kraus operator"))
}

/// Truncated thermal state of mean occupation `n̄`, renormalized; returns the
/// discarded tail weight `S^{cutoff+1}` alongside.
pub fn thermal_state(label: &str, mean_occupation: f64, cutoff: usize) -> Result<(DensityOperator, f64)> {
    if !(mean_occupation >= 0.0) || !mean_occupation.is_finite() {
        return Err(Error::OutOfRange {
            name: "mean_occupation",
            value: mean_occupation,
            allowed: "[0, inf)",
        });
    }
    let registry = ModeRegistry::single(label, cutoff)?;
    let s = mean_occupation / (mean_occupation + 1.0);
    let raw: Vec<f64> = (0..=cutoff).map(|n| (1.0 - s) * s.powi(n as i32)).collect();
    let kept: f64 = raw.iter().sum();
    let pops: Vec<f64> = raw.iter().map(|p| p / kept).collect();
    Ok((DensityOperator::from_diagonal(&registry, &pops)?, 1.0 - kept))
}

/// Truncated coherent state `|α⟩`, renormalized; returns `1 − norm²` alongside.
pub fn coherent_state(
    label: &str,
    alpha: Complex64,
    cutoff: usize,
    truncation_bound: f64,
) -> Result<(MultiModeState, f64)> {
    let registry = ModeRegistry::single(label, cutoff)?;
    let prefactor = (-alpha.norm_sqr() / 2.0).exp();
    let mut amps = Vec::with_capacity(cutoff + 1);
    let mut term = Complex64::new(prefactor, 0.0);
    for n in 0..=cutoff {
        if n > 0 {
            term *= alpha / (n as f64).sqrt();
        }
        amps.push(term);
    }
    let state = MultiModeState::new(registry, nalgebra::DVector::from_vec(amps))?;
    let (normalized, missing) = state.normalized()?;
    if missing > truncation_bound {
        return Err(Error::TruncationExceeded {
            error: missing,
            bound: truncation_bound,
        });
    }
    Ok((normalized, missing))
}

/// Photon-number non-resolving detector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_click_probability: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DetectorSpec {
    pub fn new(efficiency: f64, dark_click_probability: f64) -> Result<Self> {
        check_probability("efficiency", efficiency)?;
        check_probability("dark_click_probability", dark_click_probability)?;
        Ok(Self {
            efficiency,
            dark_click_probability,
        })
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_click_probability: 0.0,
        }
    }

    /// `⟨n|Π₀|n⟩ = (1 − dark)(1 − η)^n`.
    pub fn no_click_weight(&self, photons: usize) -> f64 {
        (1.0 - self.dark_click_probability) * (1.0 - self.efficiency).powi(photons as i32)
    }

    pub fn click_weight(&self, photons: usize) -> f64 {
        1.0 - self.no_click_weight(photons)
    }
}

/// Result of a click/no-click measurement with the measured mode discarded.
#[derive(Debug, Clone)]
pub struct ClickMeasurement {
    pub p_click: f64,
    click: Option<DensityOperator>,
    no_click: Option<DensityOperator>,
    modes_remain: bool,
}

impl ClickMeasurement {
    pub fn p_no_click(&self) -> f64 {
        1.0 - self.p_click
    }

    /// Normalized state after a click.
    pub fn click_state(&self) -> Result<&DensityOperator> {
        if !self.modes_remain {
            return Err(Error::EmptyKeepSet);
        }
        self.click.as_ref().ok_or(Error::ImpossibleCondition)
    }

    /// Normalized state after no click.
    pub fn no_click_state(&self) -> Result<&DensityOperator> {
        if !self.modes_remain {
            return Err(Error::EmptyKeepSet);
        }
        self.no_click.as_ref().ok_or(Error::ImpossibleCondition)
    }
}

/// Unnormalized operators `Tr_mode[Π₀ ρ]` and `Tr_mode[Π_click ρ]`.
pub(crate) fn click_branches(
    rho: &DensityOperator,
    mode: &str,
    detector: &DetectorSpec,
) -> Result<(DensityOperator, DensityOperator)> {
    let no_click = rho.trace_out_weighted(&[mode], |t| detector.no_click_weight(t[0]))?;
    let click = rho.trace_out_weighted(&[mode], |t| detector.click_weight(t[0]))?;
    Ok((click, no_click))
}

pub fn click_probability(rho: &DensityOperator, mode: &str, detector: &DetectorSpec) -> Result<f64> {
    let dist = rho.marginal_distribution(mode)?;
    let p: f64 = dist
        .iter()
        .enumerate()
        .map(|(n, p)| p * detector.click_weight(n))
        .sum();
    Ok(p.clamp(0.0, 1.0))
}

pub fn click_measurement(rho: &DensityOperator, mode: &str, detector: &DetectorSpec) -> Result<ClickMeasurement> {
    let p_click = click_probability(rho, mode, detector)?;
    if rho.registry().len() == 1 {
        return Ok(ClickMeasurement {
            p_click,
            click: None,
            no_click: None,
            modes_remain: false,
        });
    }
    let (click, no_click) = click_branches(rho, mode, detector)?;
    Ok(ClickMeasurement {
        p_click,
        click: (p_click > 0.0).then(|| click.normalized()).transpose()?,
        no_click: (p_click < 1.0).then(|| no_click.normalized()).transpose()?,
        modes_remain: true,
    })
}
