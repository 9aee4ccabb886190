//! Random D2D network realisations and their JSON-lines persistence.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochgeo::path_gain;

pub const DATASET_FORMAT: &str = "prunegnn-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetsimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid network instance: {0}")]
    InvalidInstance(String),
    #[error("dataset i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    AllOnes,
    UniformRandom,
}

/// How one network realisation is drawn.
///
/// Exactly one of `pairs` (fixed count) and `intensity` (Poisson count with
/// mean `intensity · region_side²`) is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub pairs: Option<usize>,
    pub intensity: Option<f64>,
    pub region_side: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub alpha: f64,
    pub d0: f64,
    pub noise: f64,
    pub p_max: f64,
    pub weight_mode: WeightMode,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            pairs: Some(20),
            intensity: None,
            region_side: 100.0,
            d_min: 2.0,
            d_max: 10.0,
            alpha: 3.5,
            d0: 1.0,
            noise: 1e-4,
            p_max: 1.0,
            weight_mode: WeightMode::AllOnes,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), NetsimError> {
        let bad = |msg: String| Err(NetsimError::InvalidScenario(msg));
        match (self.pairs, self.intensity) {
            (Some(0), None) => return bad("pairs must be >= 1".into()),
            (Some(_), None) => {}
            (None, Some(l)) if l > 0.0 && l.is_finite() => {}
            (None, Some(l)) => return bad(format!("intensity must be > 0, got {l}")),
            _ => return bad("set exactly one of pairs and intensity".into()),
        }
        if !(self.region_side > 0.0) {
            return bad(format!("region_side must be > 0, got {}", self.region_side));
        }
        if !(self.d_min > 0.0 && self.d_min <= self.d_max) {
            return bad(format!("need 0 < d_min <= d_max, got [{}, {}]", self.d_min, self.d_max));
        }
        if !(self.alpha > 0.0) || !(self.d0 > 0.0) {
            return bad("alpha and d0 must be > 0".into());
        }
        if !(self.noise > 0.0) || !(self.p_max > 0.0) {
            return bad("noise and p_max must be > 0".into());
        }
        Ok(())
    }

    /// Pair density implied by the scenario (pairs per m²).
    pub fn effective_intensity(&self) -> f64 {
        match (self.pairs, self.intensity) {
            (_, Some(l)) => l,
            (Some(t), None) => t as f64 / (self.region_side * self.region_side),
            (None, None) => f64::NAN,
        }
    }
}

/// One realisation of T transceiver pairs.
///
/// Matrices are row-major T×T with entry `[j * T + i]` describing the link
/// from transmitter `j` into the receiver paired with `i`; the diagonal holds
/// the direct links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRecord", into = "InstanceRecord")]
pub struct NetworkInstance {
    pairs: usize,
    tx: Vec<[f64; 2]>,
    rx: Vec<[f64; 2]>,
    channel_re: Vec<f64>,
    channel_im: Vec<f64>,
    gains: Vec<f64>,
    distances: Vec<f64>,
    weights: Vec<f64>,
    noise: Vec<f64>,
    p_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    tx: Vec<[f64; 2]>,
    rx: Vec<[f64; 2]>,
    h_re: Vec<f64>,
    h_im: Vec<f64>,
    weights: Vec<f64>,
    noise: Vec<f64>,
    p_max: f64,
}

impl TryFrom<InstanceRecord> for NetworkInstance {
    type Error = NetsimError;

    fn try_from(r: InstanceRecord) -> Result<Self, Self::Error> {
        NetworkInstance::from_parts(r.tx, r.rx, r.h_re, r.h_im, r.weights, r.noise, r.p_max)
    }
}

impl From<NetworkInstance> for InstanceRecord {
    fn from(n: NetworkInstance) -> Self {
        InstanceRecord {
            tx: n.tx,
            rx: n.rx,
            h_re: n.channel_re,
            h_im: n.channel_im,
            weights: n.weights,
            noise: n.noise,
            p_max: n.p_max,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl NetworkInstance {
    /// Assemble an instance from positions and complex channels; gains and
    /// distances are derived.
    pub fn from_parts(
        tx: Vec<[f64; 2]>,
        rx: Vec<[f64; 2]>,
        channel_re: Vec<f64>,
        channel_im: Vec<f64>,
        weights: Vec<f64>,
        noise: Vec<f64>,
        p_max: f64,
    ) -> Result<Self, NetsimError> {
        let t = tx.len();
        let bad = |msg: String| Err(NetsimError::InvalidInstance(msg));
        if t == 0 {
            return bad("instance needs at least one pair".into());
        }
        if rx.len() != t || weights.len() != t || noise.len() != t {
            return bad(format!("per-pair arrays must all have length {t}"));
        }
        if channel_re.len() != t * t || channel_im.len() != t * t {
            return bad(format!("channel matrices must have {} entries", t * t));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad("weights must lie in [0, 1]".into());
        }
        if noise.iter().any(|s| !(*s > 0.0)) || !(p_max > 0.0) {
            return bad("noise powers and p_max must be > 0".into());
        }
        if channel_re.iter().chain(&channel_im).any(|v| !v.is_finite()) {
            return bad("channel entries must be finite".into());
        }
        let gains = channel_re.iter().zip(&channel_im).map(|(re, im)| re * re + im * im).collect();
        let mut distances = Vec::with_capacity(t * t);
        for a in &tx {
            for b in &rx {
                distances.push(dist(*a, *b));
            }
        }
        Ok(Self { pairs: t, tx, rx, channel_re, channel_im, gains, distances, weights, noise, p_max })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn tx(&self) -> &[[f64; 2]] {
        &self.tx
    }

    pub fn rx(&self) -> &[[f64; 2]] {
        &self.rx
    }

    /// `h_{j, D(i)}` as (re, im).
    pub fn channel(&self, j: usize, i: usize) -> (f64, f64) {
        let k = j * self.pairs + i;
        (self.channel_re[k], self.channel_im[k])
    }

    /// `|h_{j, D(i)}|²`.
    pub fn gain(&self, j: usize, i: usize) -> f64 {
        self.gains[j * self.pairs + i]
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Distance from transmitter `j` to the receiver of pair `i`.
    pub fn distance(&self, j: usize, i: usize) -> f64 {
        self.distances[j * self.pairs + i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Copy with different per-pair weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, NetsimError> {
        Self::from_parts(
            self.tx.clone(),
            self.rx.clone(),
            self.channel_re.clone(),
            self.channel_im.clone(),
            weights,
            self.noise.clone(),
            self.p_max,
        )
    }

    /// Relabel pairs: new pair `k` is old pair `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, NetsimError> {
        let t = self.pairs;
        if perm.len() != t {
            return Err(NetsimError::InvalidInstance("permutation length mismatch".into()));
        }
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        let mut re = Vec::with_capacity(t * t);
        let mut im = Vec::with_capacity(t * t);
        for &pj in perm {
            for &pi in perm {
                re.push(self.channel_re[pj * t + pi]);
                im.push(self.channel_im[pj * t + pi]);
            }
        }
        Self::from_parts(
            perm.iter().map(|&p| self.tx[p]).collect(),
            perm.iter().map(|&p| self.rx[p]).collect(),
            re,
            im,
            pick(&self.weights),
            pick(&self.noise),
            self.p_max,
        )
    }
}

/// Draw realisation `index` of the scenario.
///
/// Each index owns ChaCha8 stream `index` under `cfg.seed`. A Poisson draw of
/// zero pairs is redrawn from the same stream.
pub fn sample_network(cfg: &ScenarioConfig, index: u64) -> Result<NetworkInstance, NetsimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let side = cfg.region_side;

    let t = match (cfg.pairs, cfg.intensity) {
        (Some(t), _) => t,
        (None, Some(lambda)) => {
            let counts = Poisson::new(lambda * side * side).map_err(|e| NetsimError::InvalidScenario(e.to_string()))?;
            loop {
                let n = counts.sample(&mut rng) as usize;
                if n > 0 {
                    break n;
                }
            }
        }
        (None, None) => unreachable!("validated"),
    };

    let mut tx = Vec::with_capacity(t);
    let mut rx = Vec::with_capacity(t);
    for _ in 0..t {
        let p = [rng.random::<f64>() * side, rng.random::<f64>() * side];
        let angle = rng.random::<f64>() * 2.0 * PI;
        let radius = cfg.d_min + rng.random::<f64>() * (cfg.d_max - cfg.d_min);
        tx.push(p);
        rx.push([p[0] + radius * angle.cos(), p[1] + radius * angle.sin()]);
    }

    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut re = Vec::with_capacity(t * t);
    let mut im = Vec::with_capacity(t * t);
    for a in &tx {
        for b in &rx {
            let amplitude = path_gain(dist(*a, *b), cfg.alpha, cfg.d0).sqrt();
            let zr: f64 = rng.sample(StandardNormal);
            let zi: f64 = rng.sample(StandardNormal);
            re.push(amplitude * scale * zr);
            im.push(amplitude * scale * zi);
        }
    }

    let weights = match cfg.weight_mode {
        WeightMode::AllOnes => vec![1.0; t],
        WeightMode::UniformRandom => (0..t).map(|_| rng.random::<f64>()).collect(),
    };
    NetworkInstance::from_parts(tx, rx, re, im, weights, vec![cfg.noise; t], cfg.p_max)
}

/// Realisations `start..start + count`, in index order.
pub fn generate_dataset(cfg: &ScenarioConfig, start: u64, count: usize) -> Result<Vec<NetworkInstance>, NetsimError> {
    cfg.validate()?;
    (0..count as u64).into_par_iter().map(|k| sample_network(cfg, start + k)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
    count: usize,
    scenario: Option<ScenarioConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: Option<ScenarioConfig>,
    pub instances: Vec<NetworkInstance>,
}

/// One header line followed by one JSON object per instance.
pub fn write_dataset(
    path: impl AsRef<Path>,
    scenario: Option<&ScenarioConfig>,
    instances: &[NetworkInstance],
) -> Result<(), NetsimError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        count: instances.len(),
        scenario: scenario.cloned(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| NetsimError::Schema(e.to_string()))?;
    out.write_all(b"\n")?;
    for inst in instances {
        serde_json::to_writer(&mut out, inst).map_err(|e| NetsimError::Schema(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, NetsimError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| NetsimError::Schema("empty file".into()))??;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| NetsimError::Schema(format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(NetsimError::Schema(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(NetsimError::Schema(format!(
            "dataset version {} is not supported (expected {DATASET_VERSION})",
            header.version
        )));
    }
    let mut instances = Vec::with_capacity(header.count);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: NetworkInstance =
            serde_json::from_str(&line).map_err(|e| NetsimError::Schema(format!("instance {k}: {e}")))?;
        instances.push(inst);
    }
    if instances.len() != header.count {
        return Err(NetsimError::Schema(format!(
            "header declares {} instances, found {}",
            header.count,
            instances.len()
        )));
    }
    Ok(Dataset { scenario: header.scenario, instances })
}
