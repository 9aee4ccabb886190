//! SINR, per-link rates and the weighted sum-rate objective.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::NetworkInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("power vector has length {got}, instance has {expected} pairs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("power {power} of pair {pair} is outside [0, {p_max}]")]
    PowerOutOfRange { pair: usize, power: f64, p_max: f64 },
    #[error("result and baseline sets differ in size ({results} vs {baseline})")]
    SetMismatch { results: usize, baseline: usize },
    #[error("baseline mean sum-rate is zero")]
    ZeroBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub baseline: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_link_sinr: Vec<f64>,
    pub per_link_rate: Vec<f64>,
    pub weighted_sum_rate: f64,
    pub normalized_vs: Option<Normalized>,
}

/// Powers chosen by an allocator together with what they achieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub powers: Vec<f64>,
    pub weighted_sum_rate: f64,
    /// Wall-clock seconds spent producing `powers`.
    pub inference_time: f64,
}

fn check_powers(net: &NetworkInstance, powers: &[f64]) -> Result<(), MetricsError> {
    if powers.len() != net.pairs() {
        return Err(MetricsError::LengthMismatch { expected: net.pairs(), got: powers.len() });
    }
    let p_max = net.p_max();
    for (pair, &power) in powers.iter().enumerate() {
        if !(0.0..=p_max).contains(&power) {
            return Err(MetricsError::PowerOutOfRange { pair, power, p_max });
        }
    }
    Ok(())
}

/// SINR at the receiver of every pair.
pub fn sinr(net: &NetworkInstance, powers: &[f64]) -> Vec<f64> {
    let t = net.pairs();
    (0..t)
        .map(|i| {
            let mut interference = net.noise()[i];
            for (j, &pj) in powers.iter().enumerate() {
                if j != i {
                    interference += net.gain(j, i) * pj;
                }
            }
            net.gain(i, i) * powers[i] / interference
        })
        .collect()
}

/// Σ w_t log2(1 + SINR_t) without range checks.
pub fn weighted_sum_rate(net: &NetworkInstance, powers: &[f64]) -> f64 {
    sinr(net, powers).iter().zip(net.weights()).map(|(s, w)| w * (1.0 + s).log2()).sum()
}

pub fn evaluate(net: &NetworkInstance, powers: &[f64]) -> Result<RateReport, MetricsError> {
    check_powers(net, powers)?;
    let per_link_sinr = sinr(net, powers);
    let per_link_rate: Vec<f64> = per_link_sinr.iter().map(|s| (1.0 + s).log2()).collect();
    let weighted_sum_rate = per_link_rate.iter().zip(net.weights()).map(|(r, w)| w * r).sum();
    Ok(RateReport { per_link_sinr, per_link_rate, weighted_sum_rate, normalized_vs: None })
}

impl RateReport {
    pub fn normalized_against(mut self, baseline: &str, baseline_rate: f64) -> Self {
        self.normalized_vs =
            Some(Normalized { baseline: baseline.to_string(), ratio: self.weighted_sum_rate / baseline_rate });
        self
    }
}

/// mean(results) / mean(baseline) over the same instance set.
pub fn normalized_performance(results: &[f64], baseline: &[f64]) -> Result<f64, MetricsError> {
    if results.len() != baseline.len() || results.is_empty() {
        return Err(MetricsError::SetMismatch { results: results.len(), baseline: baseline.len() });
    }
    let n = results.len() as f64;
    let base = baseline.iter().sum::<f64>() / n;
    if base == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(results.iter().sum::<f64>() / n / base)
}

/// One line of the per-instance results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub instance_id: usize,
    pub algorithm: String,
    pub sum_rate: f64,
    pub normalized: Option<f64>,
    pub time_s: Option<f64>,
}

pub const RESULT_COLUMNS: &str = "instance_id,algorithm,sum_rate,normalized,time_s";

pub fn write_result_rows<W: Write>(out: &mut W, rows: &[ResultRow]) -> std::io::Result<()> {
    writeln!(out, "{RESULT_COLUMNS}")?;
    for row in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            row.instance_id,
            row.algorithm,
            row.sum_rate,
            opt(row.normalized),
            opt(row.time_s)
        )?;
    }
    Ok(())
}
