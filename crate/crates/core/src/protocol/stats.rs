//! Exact click statistics of one full run: Stokes detection, read-out,
//! anti-Stokes detection.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    convert_magnons, entangle_pre_detection, interfere_antistokes, HeraldDetector, ProtocolConfig, STOKES_A,
    STOKES_B,
};
use crate::channels::DetectorSpec;
use crate::error::{Error, Result};
use crate::fock::DensityOperator;

/// Joint outcome of a detector pair in one counting window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClickOutcome {
    None,
    Detector1,
    Detector2,
    Both,
}

impl ClickOutcome {
    pub const ALL: [ClickOutcome; 4] = [Self::None, Self::Detector1, Self::Detector2, Self::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_clicks(first: bool, second: bool) -> Self {
        match (first, second) {
            (false, false) => Self::None,
            (true, false) => Self::Detector1,
            (false, true) => Self::Detector2,
            (true, true) => Self::Both,
        }
    }

    /// Whether detector `d` fired (alone or together with the other).
    pub fn fired(self, d: HeraldDetector) -> bool {
        match d {
            HeraldDetector::One => matches!(self, Self::Detector1 | Self::Both),
            HeraldDetector::Two => matches!(self, Self::Detector2 | Self::Both),
        }
    }

    /// Whether exactly detector `d` fired.
    pub fn only(self, d: HeraldDetector) -> bool {
        self == Self::exactly(d)
    }

    pub fn exactly(d: HeraldDetector) -> Self {
        match d {
            HeraldDetector::One => Self::Detector1,
            HeraldDetector::Two => Self::Detector2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Detector1 => "detector1",
            Self::Detector2 => "detector2",
            Self::Both => "both",
        }
    }

    /// `⟨n₁ n₂|Π|n₁ n₂⟩` for this outcome on a detector pair.
    pub fn weight(self, det: &DetectorSpec, n1: usize, n2: usize) -> f64 {
        let f = |fires: bool, n: usize| {
            if fires {
                det.click_weight(n)
            } else {
                det.no_click_weight(n)
            }
        };
        let (a, b) = match self {
            Self::None => (false, false),
            Self::Detector1 => (true, false),
            Self::Detector2 => (false, true),
            Self::Both => (true, true),
        };
        f(a, n1) * f(b, n2)
    }
}

impl fmt::Display for ClickOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClickOutcome {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown click outcome `{s}`"))
    }
}

/// `probabilities[stokes][antistokes]` over [`ClickOutcome::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub delta_phi: f64,
    pub probabilities: [[f64; 4]; 4],
}

impl OutcomeDistribution {
    fn sum_where(&self, f: impl Fn(ClickOutcome, ClickOutcome) -> bool) -> f64 {
        let mut total = 0.0;
        for s in ClickOutcome::ALL {
            for a in ClickOutcome::ALL {
                if f(s, a) {
                    total += self.probabilities[s.index()][a.index()];
                }
            }
        }
        total
    }

    pub fn total(&self) -> f64 {
        self.sum_where(|_, _| true)
    }

    /// Probability that Stokes detector `j` fires.
    pub fn stokes_click_rate(&self, j: HeraldDetector) -> f64 {
        self.sum_where(|s, _| s.fired(j))
    }

    /// Probability that anti-Stokes detector `i` fires.
    pub fn antistokes_click_rate(&self, i: HeraldDetector) -> f64 {
        self.sum_where(|_, a| a.fired(i))
    }

    /// Probability that exactly Stokes detector `j` fires (the herald).
    pub fn herald_probability(&self, j: HeraldDetector) -> f64 {
        self.sum_where(|s, _| s.only(j))
    }

    /// Exclusive coincidence: only `i` in the anti-Stokes window, only `j` in the Stokes window.
    pub fn coincidence(&self, i: HeraldDetector, j: HeraldDetector) -> f64 {
        self.sum_where(|s, a| s.only(j) && a.only(i))
    }

    /// Click-based cross-correlation, the quantity the coincidence estimator targets.
    pub fn g2_click(&self, i: HeraldDetector, j: HeraldDetector) -> Result<f64> {
        let pa = self.antistokes_click_rate(i);
        let ps = self.stokes_click_rate(j);
        if !(ps > 0.0) {
            return Err(Error::ZeroIntensity(format!("Stokes detector {}", j.index())));
        }
        if !(pa > 0.0) {
            return Err(Error::ZeroIntensity(format!("anti-Stokes detector {}", i.index())));
        }
        Ok(self.coincidence(i, j) / (pa * ps))
    }
}

fn pair_probabilities(rho: &DensityOperator, det: &DetectorSpec) -> [f64; 4] {
    let mut out = [0.0; 4];
    for o in ClickOutcome::ALL {
        out[o.index()] = rho.weighted_trace(|t| o.weight(det, t[0], t[1])).max(0.0);
    }
    out
}

/// Exact joint outcome distributions, one per `Δφ`, in grid order.
pub fn outcome_distributions(config: &ProtocolConfig, grid: &[f64]) -> Result<Vec<OutcomeDistribution>> {
    let (rho, _) = entangle_pre_detection(config)?;
    let det = config.detector;
    let branches = ClickOutcome::ALL
        .iter()
        .map(|o| {
            let sigma = rho.trace_out_weighted(&[STOKES_A, STOKES_B], |t| o.weight(&det, t[0], t[1]))?;
            convert_magnons(&sigma, config)
        })
        .collect::<Result<Vec<_>>>()?;
    grid.par_iter()
        .map(|&delta_phi| {
            let mut probabilities = [[0.0; 4]; 4];
            for (s, branch) in branches.iter().enumerate() {
                let out = interfere_antistokes(branch, config, delta_phi)?;
                probabilities[s] = pair_probabilities(&out, &det);
            }
            Ok(OutcomeDistribution {
                delta_phi,
                probabilities,
            })
        })
        .collect()
}
