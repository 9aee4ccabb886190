//! Reference power allocators.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{weighted_sum_rate, AllocationResult};
use crate::netsim::NetworkInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WmmseConfig {
    pub max_iters: usize,
    /// Stop once the relative objective change drops below this.
    pub tolerance: f64,
    /// Initial power in watts; `None` starts every pair at `P_max`.
    pub p_init: Option<f64>,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self { max_iters: 100, tolerance: 1e-6, p_init: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOutcome {
    pub allocation: AllocationResult,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialisation and after every iteration.
    pub objective_trace: Vec<f64>,
}

pub fn wmmse_allocate(net: &NetworkInstance, cfg: &WmmseConfig) -> WmmseOutcome {
    let p0 = cfg.p_init.unwrap_or(net.p_max()).clamp(0.0, net.p_max());
    wmmse_from(net, cfg, &vec![p0; net.pairs()])
}

/// WMMSE started from the given powers.
pub fn wmmse_from(net: &NetworkInstance, cfg: &WmmseConfig, init: &[f64]) -> WmmseOutcome {
    let start = Instant::now();
    let t = net.pairs();
    let alpha = net.weights();
    let sigma2 = net.noise();
    let v_max = net.p_max().sqrt();
    let h: Vec<f64> = (0..t).map(|k| net.gain(k, k).sqrt()).collect();
    let mut v: Vec<f64> = init.iter().map(|p| p.clamp(0.0, net.p_max()).sqrt()).collect();
    let mut u = vec![0.0; t];
    let mut w = vec![0.0; t];
    let powers_of = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<f64>>();
    let mut objective = weighted_sum_rate(net, &powers_of(&v));
    let mut trace = vec![objective];
    let mut best = (objective, v.clone());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        for k in 0..t {
            let received: f64 = (0..t).map(|j| net.gain(j, k) * v[j] * v[j]).sum::<f64>() + sigma2[k];
            u[k] = h[k] * v[k] / received;
            w[k] = 1.0 / (1.0 - u[k] * h[k] * v[k]);
        }
        for k in 0..t {
            let denom: f64 = (0..t).map(|j| alpha[j] * w[j] * u[j] * u[j] * net.gain(k, j)).sum();
            v[k] = if denom > 0.0 { (alpha[k] * w[k] * u[k] * h[k] / denom).clamp(0.0, v_max) } else { v_max };
        }
        let next = weighted_sum_rate(net, &powers_of(&v));
        trace.push(next);
        if next > best.0 {
            best = (next, v.clone());
        }
        let change = (next - objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        objective = next;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let powers = powers_of(&best.1);
    WmmseOutcome {
        allocation: AllocationResult {
            powers,
            weighted_sum_rate: best.0,
            inference_time: start.elapsed().as_secs_f64(),
        },
        iterations,
        converged,
        objective_trace: trace,
    }
}

fn finish(net: &NetworkInstance, powers: Vec<f64>, start: Instant) -> AllocationResult {
    let weighted_sum_rate = weighted_sum_rate(net, &powers);
    AllocationResult { powers, weighted_sum_rate, inference_time: start.elapsed().as_secs_f64() }
}

/// Full power for the `ceil(T/2)` strongest direct links, silence elsewhere.
pub fn heuristic_allocate(net: &NetworkInstance) -> AllocationResult {
    let start = Instant::now();
    let t = net.pairs();
    let mut order: Vec<usize> = (0..t).collect();
    // stable sort keeps the lower index first among equal gains
    order.sort_by(|&a, &b| net.gain(b, b).total_cmp(&net.gain(a, a)));
    let mut powers = vec![0.0; t];
    for &k in &order[..t.div_ceil(2)] {
        powers[k] = net.p_max();
    }
    finish(net, powers, start)
}

pub fn max_power_allocate(net: &NetworkInstance) -> AllocationResult {
    let start = Instant::now();
    finish(net, vec![net.p_max(); net.pairs()], start)
}

/// I.i.d. uniform powers on `[0, P_max]`.
pub fn random_allocate(net: &NetworkInstance, seed: u64) -> AllocationResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powers = (0..net.pairs()).map(|_| rng.random_range(0.0..=net.p_max())).collect();
    finish(net, powers, start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Wmmse,
    Heuristic,
    MaxPower,
    Random,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Wmmse, Baseline::Heuristic, Baseline::MaxPower, Baseline::Random];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Wmmse => "wmmse",
            Baseline::Heuristic => "heuristic",
            Baseline::MaxPower => "maxpower",
            Baseline::Random => "random",
        }
    }

    pub fn run(self, net: &NetworkInstance, wmmse: &WmmseConfig, seed: u64) -> AllocationResult {
        match self {
            Baseline::Wmmse => wmmse_allocate(net, wmmse).allocation,
            Baseline::Heuristic => heuristic_allocate(net),
            Baseline::MaxPower => max_power_allocate(net),
            Baseline::Random => random_allocate(net, seed),
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s.trim())
            .ok_or_else(|| format!("unknown baseline {s:?}; expected wmmse, heuristic, maxpower or random"))
    }
}
