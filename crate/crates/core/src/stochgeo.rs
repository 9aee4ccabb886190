//! Expected interference under a stationary Poisson point process, and the
//! distance / neighbour threshold solvers built on it.
//!
//! Every interferer transmits at unit power with gain
//! `g(r) = min{1, (r/d0)^-α}`. The total expectation comes from Campbell's
//! theorem; the per-neighbour expectations integrate `g` against the
//! distance law of the n-th nearest point.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, QuadError, Tolerance};
use crate::special::{self, GammaError};

/// Upper bound on neighbour-count iterations before declaring numeric failure.
pub const NEIGHBOUR_ITERATION_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochGeoError {
    #[error("invalid PPP parameters: {0}")]
    InvalidParams(String),
    #[error("distance threshold {t} is below the reference distance {d0}")]
    ThresholdBelowReference { t: f64, d0: f64 },
    #[error("target ratio {0} is not reachable (must lie below 1)")]
    UnreachableRatio(f64),
    #[error("neighbour solver exceeded {cap} iterations (last ratio {last_ratio})")]
    IterationCap { cap: usize, last_ratio: f64 },
    #[error("monte-carlo needs at least one trial and a positive region side")]
    InvalidSampling,
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Intensity λ (points per m²), path-loss exponent α and reference distance d0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PppParams {
    intensity: f64,
    path_loss_exponent: f64,
    reference_distance: f64,
}

impl PppParams {
    pub fn new(intensity: f64, path_loss_exponent: f64, reference_distance: f64) -> Result<Self, StochGeoError> {
        if !(intensity > 0.0) || !intensity.is_finite() {
            return Err(StochGeoError::InvalidParams(format!("intensity must be > 0, got {intensity}")));
        }
        // α ≤ 2 makes the Campbell integral diverge
        if !(path_loss_exponent > 2.0) {
            return Err(StochGeoError::InvalidParams(format!(
                "path-loss exponent must be > 2, got {path_loss_exponent}"
            )));
        }
        if !(reference_distance > 0.0) || !reference_distance.is_finite() {
            return Err(StochGeoError::InvalidParams(format!(
                "reference distance must be > 0, got {reference_distance}"
            )));
        }
        Ok(Self { intensity, path_loss_exponent, reference_distance })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn alpha(&self) -> f64 {
        self.path_loss_exponent
    }

    pub fn d0(&self) -> f64 {
        self.reference_distance
    }

    /// Gain of an interferer at distance `r`.
    pub fn gain(&self, r: f64) -> f64 {
        path_gain(r, self.path_loss_exponent, self.reference_distance)
    }

    fn lambda_pi(&self) -> f64 {
        self.intensity * PI
    }
}

/// `min{1, (r/d0)^-α}`.
pub fn path_gain(r: f64, alpha: f64, d0: f64) -> f64 {
    if r <= d0 {
        1.0
    } else {
        (r / d0).powf(-alpha)
    }
}

/// Edge-pruning rule applied to the interference graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThresholdSpec {
    /// Keep interferers whose transmitter lies within `t` metres of the receiver.
    Distance { t: f64 },
    /// Keep the `n` closest interferers of each receiver.
    Neighbour { n: usize },
    /// No pruning.
    Complete,
}

impl ThresholdSpec {
    pub fn validate(&self, d0: f64) -> Result<(), StochGeoError> {
        match *self {
            ThresholdSpec::Distance { t } if !(t >= d0) => Err(StochGeoError::ThresholdBelowReference { t, d0 }),
            ThresholdSpec::Neighbour { n: 0 } => {
                Err(StochGeoError::InvalidParams("neighbour count must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSpec::Distance { t } => write!(f, "distance:{t}"),
            ThresholdSpec::Neighbour { n } => write!(f, "neighbour:{n}"),
            ThresholdSpec::Complete => write!(f, "complete"),
        }
    }
}

impl FromStr for ThresholdSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("complete") {
            return Ok(ThresholdSpec::Complete);
        }
        let (kind, value) =
            s.split_once(':').ok_or_else(|| format!("expected distance:<t>, neighbour:<n> or complete, got {s:?}"))?;
        match kind.to_ascii_lowercase().as_str() {
            "distance" => value
                .parse::<f64>()
                .map(|t| ThresholdSpec::Distance { t })
                .map_err(|e| format!("bad distance threshold {value:?}: {e}")),
            "neighbour" | "neighbor" => value
                .parse::<usize>()
                .map(|n| ThresholdSpec::Neighbour { n })
                .map_err(|e| format!("bad neighbour count {value:?}: {e}")),
            other => Err(format!("unknown threshold kind {other:?}")),
        }
    }
}

/// A solver answer: the integer threshold and the ratio it actually captures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub spec: ThresholdSpec,
    pub target_ratio: f64,
    pub achieved_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceStats {
    pub mean: f64,
    pub variance: f64,
    pub sample_count: usize,
}

impl InterferenceStats {
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.sample_count as f64).sqrt()
    }

    /// Sample mean and unbiased variance; a single sample has zero variance.
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        let mean = samples.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self { mean, variance, sample_count: count }
    }
}

/// E[I] = πλd0²(1 + 2/(α−2)).
pub fn expected_total_interference(p: &PppParams) -> f64 {
    p.lambda_pi() * p.d0() * p.d0() * (1.0 + 2.0 / (p.alpha() - 2.0))
}

/// Fraction of E[I] contributed by interferers within `t` of the receiver.
pub fn distance_interference_ratio(p: &PppParams, t: f64) -> Result<f64, StochGeoError> {
    if !(t >= p.d0()) {
        return Err(StochGeoError::ThresholdBelowReference { t, d0: p.d0() });
    }
    let alpha = p.alpha();
    Ok((alpha - 2.0 * (t / p.d0()).powf(2.0 - alpha)) / alpha)
}

/// Smallest whole multiple of d0 whose distance ratio reaches `target_ratio`.
pub fn solve_distance_threshold(p: &PppParams, target_ratio: f64) -> Result<ThresholdSolution, StochGeoError> {
    if !(target_ratio < 1.0) {
        return Err(StochGeoError::UnreachableRatio(target_ratio));
    }
    let alpha = p.alpha();
    let floor_ratio = (alpha - 2.0) / alpha;
    if target_ratio <= floor_ratio {
        return Ok(ThresholdSolution {
            spec: ThresholdSpec::Distance { t: p.d0() },
            target_ratio,
            achieved_ratio: floor_ratio,
        });
    }
    let exact = (alpha * (1.0 - target_ratio) / 2.0).powf(1.0 / (2.0 - alpha));
    // step from just below the continuous answer so exact integers are not
    // pushed up by rounding in powf
    let mut units = (exact.floor() - 1.0).max(1.0);
    loop {
        let ratio = distance_interference_ratio(p, units * p.d0())?;
        if ratio >= target_ratio - 1e-12 {
            return Ok(ThresholdSolution {
                spec: ThresholdSpec::Distance { t: units * p.d0() },
                target_ratio,
                achieved_ratio: ratio,
            });
        }
        units += 1.0;
    }
}

/// Upper incomplete gamma Γ(s, x); see [`special::upper_incomplete_gamma`].
pub fn upper_incomplete_gamma(s: f64, x: f64) -> Result<f64, StochGeoError> {
    Ok(special::upper_incomplete_gamma(s, x)?)
}

/// Density of the distance from a fixed location to its n-th nearest point.
pub fn nth_neighbour_distance_pdf(p: &PppParams, n: usize, r: f64) -> f64 {
    assert!(n >= 1, "neighbour index starts at 1");
    if r <= 0.0 {
        return 0.0;
    }
    let mass = p.lambda_pi() * r * r;
    let ln_pdf = -mass + std::f64::consts::LN_2 + n as f64 * mass.ln() - r.ln() - special::ln_gamma(n as f64);
    ln_pdf.exp()
}

/// E[I_n(n)]: expected gain contributed by the n-th nearest interferer alone.
///
/// `P(n, x) + x^{α/2} Γ(n − α/2, x) / Γ(n)` with `x = λπd0²`, where the
/// first term is the probability that the n-th neighbour lies inside d0.
pub fn nth_neighbour_expected_interference(p: &PppParams, n: usize) -> Result<f64, StochGeoError> {
    if n == 0 {
        return Err(StochGeoError::InvalidParams("neighbour index starts at 1".into()));
    }
    let x = p.lambda_pi() * p.d0() * p.d0();
    let nf = n as f64;
    let half_alpha = 0.5 * p.alpha();
    let inside = special::regularized_lower_gamma(nf, x)?;
    let s = nf - half_alpha;
    let outside = if s > 0.0 {
        let q = special::regularized_upper_gamma(s, x)?;
        q * (half_alpha * x.ln() + special::ln_gamma(s) - special::ln_gamma(nf)).exp()
    } else {
        x.powf(half_alpha) * special::upper_incomplete_gamma(s, x)? / special::gamma(nf)
    };
    Ok(inside + outside)
}

/// O_n: share of E[I] captured by the n nearest interferers.
pub fn neighbour_interference_ratio(p: &PppParams, n: usize) -> Result<f64, StochGeoError> {
    if n == 0 {
        return Err(StochGeoError::InvalidParams("neighbour count must be at least 1".into()));
    }
    let mut captured = 0.0;
    for i in 1..=n {
        captured += nth_neighbour_expected_interference(p, i)?;
    }
    Ok(captured / expected_total_interference(p))
}

/// Smallest n with O_n ≥ `target_ratio`.
pub fn solve_neighbour_threshold(p: &PppParams, target_ratio: f64) -> Result<ThresholdSolution, StochGeoError> {
    if !(target_ratio < 1.0) {
        return Err(StochGeoError::UnreachableRatio(target_ratio));
    }
    let total = expected_total_interference(p);
    let mut captured = 0.0;
    for n in 1..=NEIGHBOUR_ITERATION_CAP {
        captured += nth_neighbour_expected_interference(p, n)?;
        let ratio = captured / total;
        if ratio >= target_ratio {
            return Ok(ThresholdSolution { spec: ThresholdSpec::Neighbour { n }, target_ratio, achieved_ratio: ratio });
        }
    }
    Err(StochGeoError::IterationCap { cap: NEIGHBOUR_ITERATION_CAP, last_ratio: captured / total })
}

fn radial_tolerance() -> Tolerance {
    Tolerance { abs: 1e-13, rel: 1e-12, max_intervals: 20_000 }
}

/// ∫ g(r) f_{R_n}(r) dr by adaptive quadrature, split at the kink r = d0.
pub fn nth_neighbour_interference_quadrature(p: &PppParams, n: usize) -> Result<f64, StochGeoError> {
    let d0 = p.d0();
    let inner = quad::integrate(|r| nth_neighbour_distance_pdf(p, n, r), 0.0, d0, radial_tolerance())?;
    let outer =
        quad::integrate_to_infinity(|r| p.gain(r) * nth_neighbour_distance_pdf(p, n, r), d0, radial_tolerance())?;
    Ok(inner + outer)
}

/// λ ∫ g(r) 2πr dr by adaptive quadrature.
pub fn total_interference_quadrature(p: &PppParams) -> Result<f64, StochGeoError> {
    let d0 = p.d0();
    let lam = p.intensity();
    let density = |r: f64| lam * 2.0 * PI * r * p.gain(r);
    let inner = quad::integrate(density, 0.0, d0, radial_tolerance())?;
    let outer = quad::integrate_to_infinity(density, d0, radial_tolerance())?;
    Ok(inner + outer)
}

/// Per-trial captured interference at the centre of a `region_side` square.
///
/// Each trial draws a Poisson(λ·side²) count of uniformly scattered points
/// from its own ChaCha8 stream (`seed`, trial index), so serial and parallel
/// runs agree bit for bit.
pub fn monte_carlo_interference_samples(
    p: &PppParams,
    spec: ThresholdSpec,
    region_side: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, StochGeoError> {
    if trials == 0 || !(region_side > 0.0) {
        return Err(StochGeoError::InvalidSampling);
    }
    spec.validate(p.d0())?;
    let mean_count = p.intensity() * region_side * region_side;
    let counts = Poisson::new(mean_count).map_err(|e| StochGeoError::InvalidParams(e.to_string()))?;
    let centre = 0.5 * region_side;
    let samples = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let count = counts.sample(&mut rng) as usize;
            let mut scratch: Vec<(f64, f64)> = (0..count)
                .map(|_| {
                    let x = rng.random::<f64>() * region_side - centre;
                    let y = rng.random::<f64>() * region_side - centre;
                    let r = x.hypot(y);
                    (r, p.gain(r))
                })
                .collect();
            captured_interference(&mut scratch, spec)
        })
        .collect();
    Ok(samples)
}

fn captured_interference(points: &mut [(f64, f64)], spec: ThresholdSpec) -> f64 {
    match spec {
        ThresholdSpec::Complete => points.iter().map(|&(_, g)| g).sum(),
        ThresholdSpec::Distance { t } => points.iter().filter(|&&(r, _)| r <= t).map(|&(_, g)| g).sum(),
        ThresholdSpec::Neighbour { n } => {
            if points.len() > n {
                points.select_nth_unstable_by(n, |a, b| a.0.total_cmp(&b.0));
            }
            let keep = n.min(points.len());
            let kept = &mut points[..keep];
            kept.sort_by(|a, b| a.0.total_cmp(&b.0));
            kept.iter().map(|&(_, g)| g).sum()
        }
    }
}

/// Mean and variance of captured interference over `trials` realisations.
pub fn monte_carlo_interference_stats(
    p: &PppParams,
    spec: ThresholdSpec,
    region_side: f64,
    trials: usize,
    seed: u64,
) -> Result<InterferenceStats, StochGeoError> {
    let samples = monte_carlo_interference_samples(p, spec, region_side, trials, seed)?;
    Ok(InterferenceStats::from_samples(&samples))
}
