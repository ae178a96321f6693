//! Click-record sampling from the exact outcome distribution, and the
//! coincidence estimators for g² and the witness.
//!
//! Random streams: trials are cut into chunks of [`CHUNK_SIZE`]; chunk `c` of
//! grid point `k` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `(k << 32) | c`. Records therefore depend only on `(config, seed, n)`,
//! not on how many threads run the chunks.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::witness::witness_value;
use crate::protocol::{outcome_distributions, ClickOutcome, HeraldDetector, OutcomeDistribution, ProtocolConfig};

pub const CHUNK_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClickRecord {
    pub trial_index: u64,
    pub stokes_click: ClickOutcome,
    pub antistokes_click: ClickOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub standard_error: f64,
    pub n_trials: u64,
}

impl EstimateWithError {
    /// `|value − exact| / standard_error`, infinite for a zero error with a mismatch.
    pub fn z_score(&self, exact: f64) -> f64 {
        let diff = (self.value - exact).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.standard_error
        }
    }
}

fn sample_chunk(cdf: &[f64; 16], start: u64, len: u64, seed: u64, stream: u64) -> Vec<ClickRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let total = cdf[15];
    (start..start + len)
        .map(|trial_index| {
            let u = rng.random::<f64>() * total;
            let cell = cdf.iter().position(|&c| u < c).unwrap_or(15);
            ClickRecord {
                trial_index,
                stokes_click: ClickOutcome::ALL[cell / 4],
                antistokes_click: ClickOutcome::ALL[cell % 4],
            }
        })
        .collect()
}

/// Samples `n_trials` records from `dist` on the streams of grid point `point`.
pub fn sample_distribution(dist: &OutcomeDistribution, n_trials: u64, seed: u64, point: u32) -> Vec<ClickRecord> {
    let mut cdf = [0.0; 16];
    let mut acc = 0.0;
    for (k, slot) in cdf.iter_mut().enumerate() {
        acc += dist.probabilities[k / 4][k % 4];
        *slot = acc;
    }
    if !(acc > 0.0) {
        cdf = [1.0; 16];
    }
    let chunks = n_trials.div_ceil(CHUNK_SIZE);
    let base = (point as u64) << 32;
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK_SIZE;
            let len = CHUNK_SIZE.min(n_trials - start);
            sample_chunk(&cdf, start, len, seed, base | c)
        })
        .flatten()
        .collect()
}

/// Records for the configured read phase.
pub fn sample_trials(config: &ProtocolConfig, n_trials: u64, seed: u64) -> Result<Vec<ClickRecord>> {
    let dist = outcome_distributions(config, &[config.read_phase_rad])?;
    Ok(sample_distribution(&dist[0], n_trials, seed, 0))
}

/// Records for every phase of `grid`, in grid order.
pub fn sample_grid(
    config: &ProtocolConfig,
    grid: &[f64],
    n_trials: u64,
    seed: u64,
) -> Result<Vec<(f64, Vec<ClickRecord>)>> {
    let dists = outcome_distributions(config, grid)?;
    Ok(dists
        .iter()
        .enumerate()
        .map(|(k, d)| (d.delta_phi, sample_distribution(d, n_trials, seed, k as u32)))
        .collect())
}

/// Cell counts of the 4×4 Stokes/anti-Stokes outcome table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClickCounts {
    pub n: u64,
    pub cells: [[u64; 4]; 4],
}

impl ClickCounts {
    pub fn from_records(records: &[ClickRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            c.n += 1;
            c.cells[r.stokes_click.index()][r.antistokes_click.index()] += 1;
        }
        c
    }

    fn sum_where(&self, f: impl Fn(ClickOutcome, ClickOutcome) -> bool) -> u64 {
        let mut t = 0;
        for s in ClickOutcome::ALL {
            for a in ClickOutcome::ALL {
                if f(s, a) {
                    t += self.cells[s.index()][a.index()];
                }
            }
        }
        t
    }

    /// Delta-method variance of a smooth function of the cell frequencies,
    /// given its gradient per cell. Empty cells are weighted as if they held
    /// one count (then renormalized) so rare outcomes never yield a zero error.
    fn delta_variance(&self, grad: impl Fn(ClickOutcome, ClickOutcome) -> f64) -> f64 {
        let n = self.n as f64;
        let floored: u64 = self.cells.iter().flatten().map(|&c| c.max(1)).sum();
        let (mut m1, mut m2) = (0.0, 0.0);
        for s in ClickOutcome::ALL {
            for a in ClickOutcome::ALL {
                let w = self.cells[s.index()][a.index()].max(1) as f64 / floored as f64;
                let g = grad(s, a);
                m1 += w * g;
                m2 += w * g * g;
            }
        }
        ((m2 - m1 * m1) / n).max(0.0)
    }

    fn estimate(&self, value: f64, grad: impl Fn(ClickOutcome, ClickOutcome) -> f64) -> EstimateWithError {
        EstimateWithError {
            value,
            standard_error: self.delta_variance(grad).sqrt(),
            n_trials: self.n,
        }
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::ZeroCounts("no trials".into()));
        }
        Ok(())
    }

    /// Frequency of trials satisfying `pred`.
    pub fn rate(&self, pred: impl Fn(ClickOutcome, ClickOutcome) -> bool + Copy) -> Result<EstimateWithError> {
        self.check_nonempty()?;
        let value = self.sum_where(pred) as f64 / self.n as f64;
        Ok(self.estimate(value, |s, a| if pred(s, a) { 1.0 } else { 0.0 }))
    }

    fn g2_parts(&self, i: HeraldDetector, j: HeraldDetector) -> Result<(f64, f64, f64)> {
        self.check_nonempty()?;
        let n = self.n as f64;
        let ns = self.sum_where(|s, _| s.fired(j));
        let na = self.sum_where(|_, a| a.fired(i));
        if ns == 0 {
            return Err(Error::ZeroCounts(format!("Stokes detector {}", j.index())));
        }
        if na == 0 {
            return Err(Error::ZeroCounts(format!("anti-Stokes detector {}", i.index())));
        }
        let nc = self.sum_where(|s, a| s.only(j) && a.only(i));
        Ok((nc as f64 / n, na as f64 / n, ns as f64 / n))
    }

    /// Gradient of `g = C/(A·S)` with respect to one cell frequency.
    fn g2_grad(
        &self,
        i: HeraldDetector,
        j: HeraldDetector,
    ) -> Result<(f64, impl Fn(ClickOutcome, ClickOutcome) -> f64)> {
        let (c, a, s) = self.g2_parts(i, j)?;
        let g = c / (a * s);
        let grad = move |so: ClickOutcome, ao: ClickOutcome| {
            let dc = if so.only(j) && ao.only(i) { 1.0 / (a * s) } else { 0.0 };
            let da = if ao.fired(i) { -g / a } else { 0.0 };
            let ds = if so.fired(j) { -g / s } else { 0.0 };
            dc + da + ds
        };
        Ok((g, grad))
    }

    pub fn g2(&self, i: HeraldDetector, j: HeraldDetector) -> Result<EstimateWithError> {
        let (g, grad) = self.g2_grad(i, j)?;
        Ok(self.estimate(g, grad))
    }
}

/// Coincidence estimate `N_coinc·N/(N_Ai·N_Sj)`; trials with both detectors
/// of a window firing count toward the marginals but not the coincidences.
pub fn estimate_g2(records: &[ClickRecord], i: HeraldDetector, j: HeraldDetector) -> Result<EstimateWithError> {
    ClickCounts::from_records(records).g2(i, j)
}

pub fn estimate_herald_probability(records: &[ClickRecord], j: HeraldDetector) -> Result<EstimateWithError> {
    ClickCounts::from_records(records).rate(|s, _| s.only(j))
}

pub fn estimate_stokes_click_rate(records: &[ClickRecord], j: HeraldDetector) -> Result<EstimateWithError> {
    ClickCounts::from_records(records).rate(|s, _| s.fired(j))
}

pub fn estimate_antistokes_click_rate(records: &[ClickRecord], i: HeraldDetector) -> Result<EstimateWithError> {
    ClickCounts::from_records(records).rate(|_, a| a.fired(i))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessEstimate {
    pub delta_phi: f64,
    pub j: usize,
    pub g2_a1_sj: EstimateWithError,
    pub g2_a2_sj: EstimateWithError,
    /// `g₁ − g₂`, the witness denominator before squaring.
    pub difference: EstimateWithError,
    /// `None` when flagged divergent.
    pub r_m: Option<EstimateWithError>,
    pub divergent: bool,
}

fn witness_from_counts(delta_phi: f64, counts: &ClickCounts, j: HeraldDetector) -> Result<WitnessEstimate> {
    let (g1, grad1) = counts.g2_grad(HeraldDetector::One, j)?;
    let (g2, grad2) = counts.g2_grad(HeraldDetector::Two, j)?;
    let d = g1 - g2;
    let sd = counts.delta_variance(|s, a| grad1(s, a) - grad2(s, a)).sqrt();
    let divergent = d.abs() < 2.0 * sd || d == 0.0;
    let r_m = (!divergent).then(|| {
        let num = g1 + g2 - 1.0;
        let dr1 = 4.0 / (d * d) - 8.0 * num / (d * d * d);
        let dr2 = 4.0 / (d * d) + 8.0 * num / (d * d * d);
        counts.estimate(witness_value(g1, g2), |s, a| dr1 * grad1(s, a) + dr2 * grad2(s, a))
    });
    Ok(WitnessEstimate {
        delta_phi,
        j: j.index(),
        g2_a1_sj: counts.estimate(g1, &grad1),
        g2_a2_sj: counts.estimate(g2, &grad2),
        difference: EstimateWithError {
            value: d,
            standard_error: sd,
            n_trials: counts.n,
        },
        r_m,
        divergent,
    })
}

/// Witness estimates per `Δφ` group, with delta-method errors; a point is
/// divergent when `|g₁ − g₂|` is within 2σ of zero.
pub fn estimate_witness(groups: &[(f64, Vec<ClickRecord>)], j: HeraldDetector) -> Result<Vec<WitnessEstimate>> {
    groups
        .iter()
        .map(|(phi, records)| witness_from_counts(*phi, &ClickCounts::from_records(records), j))
        .collect()
}

pub const RECORD_HEADER: &str = "trial_index,stokes_click,antistokes_click";

pub fn write_records(records: &[ClickRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 24 + 48);
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.trial_index, r.stokes_click, r.antistokes_click);
    }
    out
}

pub fn read_records(input: impl BufRead) -> Result<Vec<ClickRecord>> {
    let mut records = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line_no = k + 1;
        let bad = |message: String| Error::RecordParse { line: line_no, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if k == 0 {
            if line.trim() != RECORD_HEADER {
                return Err(bad(format!("expected header `{RECORD_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [idx, s, a] = fields[..] else {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        };
        records.push(ClickRecord {
            trial_index: idx.parse().map_err(|e| bad(format!("trial_index: {e}")))?,
            stokes_click: s.parse().map_err(bad)?,
            antistokes_click: a.parse().map_err(bad)?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(i: u64, s: ClickOutcome, a: ClickOutcome) -> ClickRecord {
        ClickRecord {
            trial_index: i,
            stokes_click: s,
            antistokes_click: a,
        }
    }

    #[test]
    fn deterministic_and_thread_count_free() {
        let cfg = ProtocolConfig::ideal();
        let a = sample_trials(&cfg, 10_000, 7).unwrap();
        let b = sample_trials(&cfg, 10_000, 7).unwrap();
        assert_eq!(a, b);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = one.install(|| sample_trials(&cfg, 10_000, 7).unwrap());
        assert_eq!(a, c);
        assert_ne!(a, sample_trials(&cfg, 10_000, 8).unwrap());
        assert!(a.iter().enumerate().all(|(k, r)| r.trial_index == k as u64));
    }

    #[test]
    fn zero_pulse_never_clicks() {
        let cfg = ProtocolConfig {
            pulse_mean_photons: 0.0,
            ..ProtocolConfig::ideal()
        };
        let r = sample_trials(&cfg, 5000, 1).unwrap();
        assert!(r.iter().all(|r| r.stokes_click == ClickOutcome::None));
        assert!(matches!(
            estimate_g2(&r, HeraldDetector::One, HeraldDetector::One),
            Err(Error::ZeroCounts(_))
        ));
    }

    #[test]
    fn records_round_trip() {
        let cfg = ProtocolConfig::ideal();
        let r = sample_trials(&cfg, 100, 3).unwrap();
        let text = write_records(&r);
        assert_eq!(read_records(text.as_bytes()).unwrap(), r);
        let bad = format!("{RECORD_HEADER}\n0,none,twice\n");
        assert!(matches!(read_records(bad.as_bytes()), Err(Error::RecordParse { line: 2, .. })));
    }

    #[test]
    fn g2_hand_count() {
        use ClickOutcome::*;
        // N = 8, Stokes d1 in 4, anti-Stokes d1 in 4, exclusive coincidences 3
        let r = vec![
            rec(0, Detector1, Detector1),
            rec(1, Detector1, Detector1),
            rec(2, Detector1, Detector1),
            rec(3, Detector1, None),
            rec(4, None, Detector1),
            rec(5, None, None),
            rec(6, None, None),
            rec(7, None, None),
        ];
        let g = estimate_g2(&r, HeraldDetector::One, HeraldDetector::One).unwrap();
        assert!((g.value - 3.0 * 8.0 / 16.0).abs() < 1e-15);
        assert!(g.standard_error > 0.0 && g.standard_error.is_finite());
    }

    #[test]
    fn single_trial_is_well_formed() {
        let r = vec![rec(0, ClickOutcome::Detector1, ClickOutcome::Detector1)];
        let g = estimate_g2(&r, HeraldDetector::One, HeraldDetector::One).unwrap();
        assert_eq!(g.value, 1.0);
        assert!(g.standard_error > 0.1 && g.standard_error.is_finite());
    }

    #[test]
    fn independent_streams_have_unit_g2() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r: Vec<ClickRecord> = (0..200_000)
            .map(|i| {
                let s = ClickOutcome::from_clicks(rng.random::<f64>() < 0.1, rng.random::<f64>() < 0.05);
                let a = ClickOutcome::from_clicks(rng.random::<f64>() < 0.2, rng.random::<f64>() < 0.02);
                rec(i, s, a)
            })
            .collect();
        let g = estimate_g2(&r, HeraldDetector::One, HeraldDetector::One).unwrap();
        // exclusive coincidences: P(only a1)·P(only s1)/(P(a1)P(s1)) = 0.98·0.95
        let expected = 0.98 * 0.95;
        assert!(g.z_score(expected) < 4.0, "{g:?}");
    }

    #[test]
    fn near_balanced_point_is_divergent() {
        let cfg = ProtocolConfig {
            pulse_mean_photons: 0.5,
            ..ProtocolConfig::ideal().with_stokes_probability(0.1)
        };
        let groups = sample_grid(&cfg, &[0.0], 20_000, 5).unwrap();
        let w = estimate_witness(&groups, HeraldDetector::One).unwrap();
        assert!(w[0].divergent && w[0].r_m.is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimates_never_nan(cells in proptest::collection::vec(0u64..20, 16)) {
            let mut r = Vec::new();
            for (k, &c) in cells.iter().enumerate() {
                for _ in 0..c {
                    r.push(rec(r.len() as u64, ClickOutcome::ALL[k / 4], ClickOutcome::ALL[k % 4]));
                }
            }
            prop_assume!(!r.is_empty());
            for j in [HeraldDetector::One, HeraldDetector::Two] {
                if let Ok(g) = estimate_g2(&r, HeraldDetector::One, j) {
                    prop_assert!(g.value.is_finite() && g.standard_error.is_finite() && g.standard_error >= 0.0);
                }
                if let Ok(ws) = estimate_witness(&[(0.0, r.clone())], j) {
                    for w in ws {
                        if let Some(e) = w.r_m {
                            prop_assert!(!e.value.is_nan() && !e.standard_error.is_nan());
                        }
                    }
                }
                let h = estimate_herald_probability(&r, j).unwrap();
                prop_assert!(h.value.is_finite() && h.standard_error > 0.0);
            }
        }
    }
}
