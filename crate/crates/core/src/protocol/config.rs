//! Protocol configuration and its flat dotted-key file format.
//!
//! Keys (SI units, suffix names the unit):
//!
//! ```text
//! pulse.mean_photons            p, mean photon number of the entangling pulse
//! stokes.probability            P on both arms (or stokes.probability_a / _b)
//! magnon.frequency_hz           magnon frequency
//! magnon.temperature_k          bath temperature; 0 means no thermal magnons
//! magnon.mean_occupation        n̄ override (temperature ignored)
//! magnon.thermal_ratio          S = n̄/(n̄+1) override (temperature ignored)
//! magnon.delay_over_lifetime    magnon decay between pulses, 0 = none
//! loss.transmissivity           η on both arms (or loss.transmissivity_a / _b)
//! detector.efficiency
//! detector.dark_click_probability
//! read.phase_rad                Δφ on arm A's read path
//! read.swap_angle_rad           θ_r of the anti-Stokes swap coupler
//! herald.detector               1 or 2
//! numerics.optical_cutoff
//! numerics.magnon_cutoff
//! numerics.truncation_bound
//! numerics.herald_floor
//! numerics.divergence_epsilon
//! mc.trials
//! mc.seed
//! couplings.*                   g0_hz, g1_hz, g2_hz, n1, n2, omega1_hz, omega2_hz (not used)
//! ```
//!
//! Both `a.b = 1` lines and `[a]` sections are accepted.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::channels::DetectorSpec;
use crate::error::{Error, Result};

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Bose-Einstein occupation `1/(exp(h f / k_B T) − 1)` for a mode at
/// ordinary frequency `f`.
pub fn mean_thermal_occupation(frequency_hz: f64, temperature_k: f64) -> Result<f64> {
    if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
        return Err(Error::OutOfRange {
            name: "magnon frequency",
            value: frequency_hz,
            allowed: "(0, inf) Hz",
        });
    }
    if !(temperature_k > 0.0) || !temperature_k.is_finite() {
        return Err(Error::OutOfRange {
            name: "temperature",
            value: temperature_k,
            allowed: "(0, inf) K",
        });
    }
    let x = PLANCK * frequency_hz / (BOLTZMANN * temperature_k);
    Ok(1.0 / x.exp_m1())
}

/// `S = n̄/(n̄+1)`.
pub fn thermal_ratio(mean_occupation: f64) -> f64 {
    mean_occupation / (mean_occupation + 1.0)
}

/// Stokes detector behind the output beamsplitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeraldDetector {
    One,
    Two,
}

impl HeraldDetector {
    pub fn from_index(j: usize) -> Option<Self> {
        match j {
            1 => Some(Self::One),
            2 => Some(Self::Two),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Self::One => Self::Two,
            Self::Two => Self::One,
        }
    }
}

/// How the initial magnon occupation is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThermalSource {
    Temperature { frequency_hz: f64, temperature_k: f64 },
    MeanOccupation(f64),
    ThermalRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    pub optical_cutoff: usize,
    pub magnon_cutoff: usize,
    pub truncation_bound: f64,
    pub herald_floor: f64,
    pub divergence_epsilon: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            optical_cutoff: 3,
            magnon_cutoff: 3,
            truncation_bound: 1e-6,
            herald_floor: 1e-12,
            divergence_epsilon: 1e-9,
        }
    }
}

/// `trials = 0` means "not requested"; sampling commands then use
/// [`MonteCarloSettings::DEFAULT_TRIALS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSettings {
    pub trials: u64,
    pub seed: u64,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        Self {
            trials: 0,
            seed: 1,
        }
    }
}

impl MonteCarloSettings {
    pub const DEFAULT_TRIALS: u64 = 100_000;

    pub fn trials_or_default(&self) -> u64 {
        if self.trials == 0 {
            Self::DEFAULT_TRIALS
        } else {
            self.trials
        }
    }
}

/// Device parameters carried for reference only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicalCouplings {
    pub g0_hz: Option<f64>,
    pub g1_hz: Option<f64>,
    pub g2_hz: Option<f64>,
    pub n1: Option<f64>,
    pub n2: Option<f64>,
    pub omega1_hz: Option<f64>,
    pub omega2_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub pulse_mean_photons: f64,
    pub stokes_probability_a: f64,
    pub stokes_probability_b: f64,
    pub thermal: ThermalSource,
    pub magnon_delay_over_lifetime: f64,
    pub transmissivity_a: f64,
    pub transmissivity_b: f64,
    pub detector: DetectorSpec,
    pub read_phase_rad: f64,
    pub read_swap_angle_rad: f64,
    pub herald_detector: HeraldDetector,
    pub numerics: Numerics,
    pub mc: MonteCarloSettings,
    pub couplings: PhysicalCouplings,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            pulse_mean_photons: 0.01,
            stokes_probability_a: 0.01,
            stokes_probability_b: 0.01,
            thermal: ThermalSource::Temperature {
                frequency_hz: 7e9,
                temperature_k: 0.1,
            },
            magnon_delay_over_lifetime: 0.0,
            transmissivity_a: 1.0,
            transmissivity_b: 1.0,
            detector: DetectorSpec::ideal(),
            read_phase_rad: 0.0,
            read_swap_angle_rad: std::f64::consts::FRAC_PI_2,
            herald_detector: HeraldDetector::One,
            numerics: Numerics::default(),
            mc: MonteCarloSettings::default(),
            couplings: PhysicalCouplings::default(),
        }
    }
}

fn domain(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigDomain {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(domain(field, format!("{v} is outside [0, 1]")));
    }
    Ok(())
}

impl ProtocolConfig {
    /// Ideal device at zero temperature: no loss, perfect detectors.
    pub fn ideal() -> Self {
        Self {
            thermal: ThermalSource::MeanOccupation(0.0),
            ..Self::default()
        }
    }

    pub fn with_stokes_probability(mut self, p: f64) -> Self {
        self.stokes_probability_a = p;
        self.stokes_probability_b = p;
        self
    }

    pub fn with_transmissivity(mut self, eta: f64) -> Self {
        self.transmissivity_a = eta;
        self.transmissivity_b = eta;
        self
    }

    pub fn mean_occupation(&self) -> Result<f64> {
        match self.thermal {
            ThermalSource::Temperature {
                temperature_k,
                frequency_hz,
            } => {
                if temperature_k == 0.0 {
                    Ok(0.0)
                } else {
                    mean_thermal_occupation(frequency_hz, temperature_k)
                }
            }
            ThermalSource::MeanOccupation(n) => Ok(n),
            ThermalSource::ThermalRatio(s) => Ok(s / (1.0 - s)),
        }
    }

    pub fn thermal_ratio(&self) -> Result<f64> {
        match self.thermal {
            ThermalSource::ThermalRatio(s) => Ok(s),
            _ => Ok(thermal_ratio(self.mean_occupation()?)),
        }
    }

    /// Checks every field; names the first offending one.
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_mean_photons >= 0.0) || !self.pulse_mean_photons.is_finite() {
            return Err(domain("pulse.mean_photons", "must be finite and nonnegative"));
        }
        check_unit("stokes.probability_a", self.stokes_probability_a)?;
        check_unit("stokes.probability_b", self.stokes_probability_b)?;
        match self.thermal {
            ThermalSource::Temperature {
                frequency_hz,
                temperature_k,
            } => {
                if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
                    return Err(domain("magnon.frequency_hz", "must be positive"));
                }
                if !(temperature_k >= 0.0) || !temperature_k.is_finite() {
                    return Err(domain("magnon.temperature_k", "must be finite and nonnegative"));
                }
            }
            ThermalSource::MeanOccupation(n) => {
                if !(n >= 0.0) || !n.is_finite() {
                    return Err(domain("magnon.mean_occupation", "must be finite and nonnegative"));
                }
            }
            ThermalSource::ThermalRatio(s) => {
                if !(0.0..1.0).contains(&s) {
                    return Err(domain("magnon.thermal_ratio", "must lie in [0, 1)"));
                }
            }
        }
        if !(self.magnon_delay_over_lifetime >= 0.0) {
            return Err(domain("magnon.delay_over_lifetime", "must be nonnegative"));
        }
        check_unit("loss.transmissivity_a", self.transmissivity_a)?;
        check_unit("loss.transmissivity_b", self.transmissivity_b)?;
        check_unit("detector.efficiency", self.detector.efficiency)?;
        check_unit("detector.dark_click_probability", self.detector.dark_click_probability)?;
        if !self.read_phase_rad.is_finite() {
            return Err(domain("read.phase_rad", "must be finite"));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.read_swap_angle_rad) {
            return Err(domain("read.swap_angle_rad", "must lie in [0, pi/2]"));
        }
        let n = &self.numerics;
        if n.optical_cutoff < 1 {
            return Err(domain("numerics.optical_cutoff", "must be at least 1"));
        }
        if n.magnon_cutoff < 2 {
            return Err(domain("numerics.magnon_cutoff", "must be at least 2"));
        }
        if !(n.truncation_bound > 0.0) {
            return Err(domain("numerics.truncation_bound", "must be positive"));
        }
        if !(n.herald_floor >= 0.0) {
            return Err(domain("numerics.herald_floor", "must be nonnegative"));
        }
        if !(n.divergence_epsilon > 0.0) {
            return Err(domain("numerics.divergence_epsilon", "must be positive"));
        }
        Ok(())
    }

    /// Log warnings for parameters outside the weak-excitation regime.
    pub fn warn_regime(&self) {
        if self.pulse_mean_photons > 0.1 {
            warn!(
                "pulse.mean_photons = {} exceeds 0.1; the protocol assumes p << 1",
                self.pulse_mean_photons
            );
        }
        for (name, v) in [
            ("stokes.probability_a", self.stokes_probability_a),
            ("stokes.probability_b", self.stokes_probability_b),
        ] {
            if v > 0.1 {
                warn!("{name} = {v} exceeds 0.1; the protocol assumes P << 1");
            }
        }
    }

    /// Names accepted by [`ProtocolConfig::set_real`].
    pub const REAL_FIELDS: &'static [&'static str] = &[
        "pulse.mean_photons",
        "stokes.probability",
        "stokes.probability_a",
        "stokes.probability_b",
        "magnon.frequency_hz",
        "magnon.temperature_k",
        "magnon.mean_occupation",
        "magnon.thermal_ratio",
        "magnon.delay_over_lifetime",
        "loss.transmissivity",
        "loss.transmissivity_a",
        "loss.transmissivity_b",
        "detector.efficiency",
        "detector.dark_click_probability",
        "read.phase_rad",
        "read.swap_angle_rad",
    ];

    /// Sets a real-valued field by its dotted key. Does not validate.
    pub fn set_real(&mut self, key: &str, v: f64) -> Result<()> {
        match key {
            "pulse.mean_photons" => self.pulse_mean_photons = v,
            "stokes.probability" => {
                self.stokes_probability_a = v;
                self.stokes_probability_b = v;
            }
            "stokes.probability_a" => self.stokes_probability_a = v,
            "stokes.probability_b" => self.stokes_probability_b = v,
            "magnon.frequency_hz" => {
                if let ThermalSource::Temperature { frequency_hz, .. } = &mut self.thermal {
                    *frequency_hz = v;
                } else {
                    info!("magnon.frequency_hz ignored: occupation set directly");
                }
            }
            "magnon.temperature_k" => {
                if let ThermalSource::Temperature { temperature_k, .. } = &mut self.thermal {
                    *temperature_k = v;
                } else {
                    info!("magnon.temperature_k ignored: occupation set directly");
                }
            }
            "magnon.mean_occupation" => self.thermal = ThermalSource::MeanOccupation(v),
            "magnon.thermal_ratio" => self.thermal = ThermalSource::ThermalRatio(v),
            "magnon.delay_over_lifetime" => self.magnon_delay_over_lifetime = v,
            "loss.transmissivity" => {
                self.transmissivity_a = v;
                self.transmissivity_b = v;
            }
            "loss.transmissivity_a" => self.transmissivity_a = v,
            "loss.transmissivity_b" => self.transmissivity_b = v,
            "detector.efficiency" => self.detector.efficiency = v,
            "detector.dark_click_probability" => self.detector.dark_click_probability = v,
            "read.phase_rad" => self.read_phase_rad = v,
            "read.swap_angle_rad" => self.read_swap_angle_rad = v,
            _ => return Err(domain(key, "not a real-valued configuration field")),
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn as_real(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(domain(key, "expected a number")),
    }
}

fn as_count(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(domain(key, "expected a nonnegative integer")),
    }
}

/// Parses a config document; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ProtocolConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);

    let mut cfg = ProtocolConfig::default();
    let overrides = ["magnon.mean_occupation", "magnon.thermal_ratio"];
    if overrides.iter().all(|k| flat.contains_key(*k)) {
        return Err(domain(
            "magnon.thermal_ratio",
            "give either magnon.mean_occupation or magnon.thermal_ratio, not both",
        ));
    }
    // temperature-side keys first so an occupation override takes precedence
    for key in ["magnon.frequency_hz", "magnon.temperature_k"] {
        if let Some(v) = flat.get(key) {
            cfg.set_real(key, as_real(key, v)?)?;
        }
    }
    for key in overrides {
        if let Some(v) = flat.get(key) {
            cfg.set_real(key, as_real(key, v)?)?;
            if flat.contains_key("magnon.temperature_k") {
                info!("{key} given; magnon.temperature_k is ignored");
            }
        }
    }

    for (key, v) in &flat {
        match key.as_str() {
            "magnon.frequency_hz" | "magnon.temperature_k" => {}
            k if overrides.contains(&k) => {}
            "herald.detector" => {
                let j = as_count(key, v)? as usize;
                cfg.herald_detector =
                    HeraldDetector::from_index(j).ok_or_else(|| domain(key, "must be 1 or 2"))?;
            }
            "numerics.optical_cutoff" => cfg.numerics.optical_cutoff = as_count(key, v)? as usize,
            "numerics.magnon_cutoff" => cfg.numerics.magnon_cutoff = as_count(key, v)? as usize,
            "numerics.truncation_bound" => cfg.numerics.truncation_bound = as_real(key, v)?,
            "numerics.herald_floor" => cfg.numerics.herald_floor = as_real(key, v)?,
            "numerics.divergence_epsilon" => cfg.numerics.divergence_epsilon = as_real(key, v)?,
            "mc.trials" => cfg.mc.trials = as_count(key, v)?,
            "mc.seed" => cfg.mc.seed = as_count(key, v)?,
            "couplings.g0_hz" => cfg.couplings.g0_hz = Some(as_real(key, v)?),
            "couplings.g1_hz" => cfg.couplings.g1_hz = Some(as_real(key, v)?),
            "couplings.g2_hz" => cfg.couplings.g2_hz = Some(as_real(key, v)?),
            "couplings.n1" => cfg.couplings.n1 = Some(as_real(key, v)?),
            "couplings.n2" => cfg.couplings.n2 = Some(as_real(key, v)?),
            "couplings.omega1_hz" => cfg.couplings.omega1_hz = Some(as_real(key, v)?),
            "couplings.omega2_hz" => cfg.couplings.omega2_hz = Some(as_real(key, v)?),
            k if ProtocolConfig::REAL_FIELDS.contains(&k) => cfg.set_real(k, as_real(k, v)?)?,
            _ => return Err(domain(key, "unknown configuration key")),
        }
    }
    cfg.validate()?;
    cfg.warn_regime();
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ProtocolConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupation_at_reference_points() {
        let n = mean_thermal_occupation(7e9, 0.1).unwrap();
        assert!((n - 0.036).abs() < 1e-3, "{n}");
        let s = thermal_ratio(mean_thermal_occupation(7e9, 0.05).unwrap());
        assert!((s - 0.001).abs() < 5e-4, "{s}");
        assert!(mean_thermal_occupation(7e9, 1e-4).unwrap() < 1e-100);
        assert!(mean_thermal_occupation(7e9, 0.0).is_err());
        assert!(mean_thermal_occupation(-1.0, 0.1).is_err());
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ProtocolConfig::default());
        assert_eq!(parse_config("# only a comment\n").unwrap(), ProtocolConfig::default());
    }

    #[test]
    fn dotted_keys_and_sections_agree() {
        let a = parse_config("stokes.probability = 0.02\nloss.transmissivity_a = 0.5\n").unwrap();
        let b = parse_config("[stokes]\nprobability = 0.02\n[loss]\ntransmissivity_a = 0.5\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stokes_probability_b, 0.02);
        assert_eq!(a.transmissivity_a, 0.5);
        assert_eq!(a.transmissivity_b, 1.0);
    }

    #[test]
    fn negative_temperature_names_field() {
        match parse_config("magnon.temperature_k = -1") {
            Err(Error::ConfigDomain { field, .. }) => assert_eq!(field, "magnon.temperature_k"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn occupation_override_wins() {
        let cfg = parse_config("magnon.temperature_k = 5.0\nmagnon.mean_occupation = 0.02\n").unwrap();
        assert_eq!(cfg.mean_occupation().unwrap(), 0.02);
    }

    #[test]
    fn parse_error_reports_line() {
        match parse_config("pulse.mean_photons = 0.01\n\nread.phase_rad = = 3\n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(parse_config("pulse.colour = 1"), Err(Error::ConfigDomain { .. })));
        assert!(matches!(parse_config("herald.detector = 3"), Err(Error::ConfigDomain { .. })));
    }
}
