//! Threshold-pruned message-passing power allocator.
//!
//! Per layer, every vertex `v` sums `f_A([m_u, E_vu])` over its in-neighbours
//! `u` and updates its power as `f_C([α_v, m_v])`. `m_u` is the vertex
//! feature row followed by the current normalised power `p_u / P_max`;
//! `E_vu` is the edge feature row. The two MLPs are shared by all layers and
//! `f_C` ends in a sigmoid scaled by `P_max`.
//!
//! With [`FeatureEncoding::Gain`] a vertex carries
//! `[log10 |h_vv|², w_v, d_vv]` and an edge `[log10 |h_uv|², d_uv]`, each
//! column standardised with training statistics held in [`FeatureScaler`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{build_graph, GraphError, InterferenceGraph};
use crate::metrics::{weighted_sum_rate, AllocationResult};
use crate::netsim::NetworkInstance;
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mat, Mlp, MlpScratch, NnError, Tape};
use crate::stochgeo::ThresholdSpec;

pub const MODEL_FORMAT: &str = "prunegnn-model";
pub const MODEL_VERSION: u32 = 1;

/// Smallest gain passed through `log10`, so silent links stay finite.
const GAIN_FLOOR: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph and model disagree: {0}")]
    Mismatch(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Diverged { epoch: usize, batch: usize, what: String },
    #[error("empty training set")]
    EmptyDataset,
    #[error("stale model: {0}")]
    StaleModel(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEncoding {
    /// Standardised `log10 |h|²`.
    #[default]
    Gain,
    /// Real and imaginary channel parts, scaled by their training spread.
    ReIm,
}

impl FeatureEncoding {
    /// Static vertex columns, excluding the power column.
    pub fn vertex_dim(self) -> usize {
        match self {
            FeatureEncoding::Gain => 3,
            FeatureEncoding::ReIm => 4,
        }
    }

    pub fn edge_dim(self) -> usize {
        match self {
            FeatureEncoding::Gain => 2,
            FeatureEncoding::ReIm => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, std: 1.0 };

    fn fit(values: &[f64], centred: bool) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = if centred { 0.0 } else { values.iter().sum::<f64>() / n };
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Per-column statistics of the channel and distance features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub encoding: FeatureEncoding,
    pub vertex_channel: Standardizer,
    pub vertex_distance: Standardizer,
    pub edge_channel: Standardizer,
    pub edge_distance: Standardizer,
}

impl FeatureScaler {
    pub fn identity(encoding: FeatureEncoding) -> Self {
        let i = Standardizer::IDENTITY;
        Self { encoding, vertex_channel: i, vertex_distance: i, edge_channel: i, edge_distance: i }
    }

    /// Fit on the graphs the model will be trained on.
    pub fn fit(graphs: &[InterferenceGraph], encoding: FeatureEncoding) -> Self {
        let (mut vc, mut vd, mut ec, mut ed) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for g in graphs {
            for v in 0..g.vertex_count() {
                match encoding {
                    FeatureEncoding::Gain => vc.push(g.direct_gain(v).max(GAIN_FLOOR).log10()),
                    FeatureEncoding::ReIm => {
                        let (re, im) = g.direct_channel(v);
                        vc.extend([re, im]);
                    }
                }
                vd.push(g.direct_distance(v));
            }
            for e in 0..g.edge_count() {
                match encoding {
                    FeatureEncoding::Gain => ec.push(g.edge_gain(e).max(GAIN_FLOOR).log10()),
                    FeatureEncoding::ReIm => {
                        let (re, im) = g.edge_channel(e);
                        ec.extend([re, im]);
                    }
                }
                ed.push(g.edge_distance(e));
            }
        }
        let centred = encoding == FeatureEncoding::ReIm;
        Self {
            encoding,
            vertex_channel: Standardizer::fit(&vc, centred),
            vertex_distance: Standardizer::fit(&vd, false),
            edge_channel: Standardizer::fit(&ec, centred),
            edge_distance: Standardizer::fit(&ed, false),
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("scaler serialises"))
    }

    /// Static vertex rows, `V × vertex_dim`.
    pub fn vertex_features(&self, g: &InterferenceGraph) -> Vec<f64> {
        let mut out = Vec::with_capacity(g.vertex_count() * self.encoding.vertex_dim());
        for v in 0..g.vertex_count() {
            let d = self.vertex_distance.apply(g.direct_distance(v));
            match self.encoding {
                FeatureEncoding::Gain => {
                    out.extend([self.vertex_channel.apply(g.direct_gain(v).max(GAIN_FLOOR).log10()), g.weight(v), d])
                }
                FeatureEncoding::ReIm => {
                    let (re, im) = g.direct_channel(v);
                    out.extend([self.vertex_channel.apply(re), self.vertex_channel.apply(im), g.weight(v), d]);
                }
            }
        }
        out
    }

    /// Edge rows in graph edge order, `E × edge_dim`.
    pub fn edge_features(&self, g: &InterferenceGraph) -> Vec<f64> {
        let mut out = Vec::with_capacity(g.edge_count() * self.encoding.edge_dim());
        for e in 0..g.edge_count() {
            let d = self.edge_distance.apply(g.edge_distance(e));
            match self.encoding {
                FeatureEncoding::Gain => {
                    out.extend([self.edge_channel.apply(g.edge_gain(e).max(GAIN_FLOOR).log10()), d])
                }
                FeatureEncoding::ReIm => {
                    let (re, im) = g.edge_channel(e);
                    out.extend([self.edge_channel.apply(re), self.edge_channel.apply(im), d]);
                }
            }
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub f_a_hidden: Vec<usize>,
    pub f_c_hidden: Vec<usize>,
    pub encoding: FeatureEncoding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layers: 3, f_a_hidden: vec![16, 32], f_c_hidden: vec![16, 8], encoding: FeatureEncoding::Gain }
    }
}

impl ModelConfig {
    pub fn f_a_dims(&self) -> Vec<usize> {
        let m = self.encoding.vertex_dim() + 1;
        let mut dims = vec![m + self.encoding.edge_dim()];
        dims.extend(&self.f_a_hidden);
        dims
    }

    pub fn f_c_dims(&self) -> Vec<usize> {
        let m = self.encoding.vertex_dim() + 1;
        let mut dims = vec![self.f_a_hidden.last().copied().unwrap_or(0) + m];
        dims.extend(&self.f_c_hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    f_a: Mlp,
    f_c: Mlp,
    layers: usize,
    p_max: f64,
    spec: ThresholdSpec,
    scaler: FeatureScaler,
    seed: u64,
}

/// Graph features ready for either forward route.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    vertices: usize,
    vertex: Vec<f64>,
    edge: Vec<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    offsets: Vec<usize>,
}

impl GnnModel {
    pub fn new(
        cfg: &ModelConfig,
        scaler: FeatureScaler,
        spec: ThresholdSpec,
        p_max: f64,
        seed: u64,
    ) -> Result<Self, GnnError> {
        if cfg.layers == 0 || cfg.f_a_hidden.is_empty() {
            return Err(GnnError::Mismatch("need at least one layer and one f_A width".into()));
        }
        if scaler.encoding != cfg.encoding {
            return Err(GnnError::Mismatch("scaler encoding differs from model encoding".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f_a = Mlp::kaiming_uniform(&cfg.f_a_dims(), Activation::Identity, &mut rng)?;
        let f_c = Mlp::kaiming_uniform(&cfg.f_c_dims(), Activation::Sigmoid, &mut rng)?;
        Ok(Self { f_a, f_c, layers: cfg.layers, p_max, spec, scaler, seed })
    }

    pub fn f_a(&self) -> &Mlp {
        &self.f_a
    }

    pub fn f_c(&self) -> &Mlp {
        &self.f_c
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn spec(&self) -> ThresholdSpec {
        self.spec
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoding(&self) -> FeatureEncoding {
        self.scaler.encoding
    }

    pub fn parameter_count(&self) -> usize {
        self.f_a.params().len() + self.f_c.params().len()
    }

    /// f_A parameters followed by f_C parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.f_a.params().to_vec();
        p.extend_from_slice(self.f_c.params());
        p
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<(), GnnError> {
        if values.len() != self.parameter_count() {
            return Err(NnError::DimMismatch { expected: self.parameter_count(), got: values.len() }.into());
        }
        let (a, c) = values.split_at(self.f_a.params().len());
        self.f_a.set_params(a)?;
        self.f_c.set_params(c)?;
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        let header = serde_json::json!({
            "layers": self.layers,
            "p_max": self.p_max,
            "spec": self.spec,
            "f_a_dims": self.f_a.dims(),
            "f_c_dims": self.f_c.dims(),
            "scaler": self.scaler,
        });
        sha256_hex(header.to_string().as_bytes())
    }

    pub fn prepare(&self, g: &InterferenceGraph) -> PreparedGraph {
        PreparedGraph {
            vertices: g.vertex_count(),
            vertex: self.scaler.vertex_features(g),
            edge: self.scaler.edge_features(g),
            src: g.sources().to_vec(),
            dst: g.targets().to_vec(),
            offsets: g.offsets().to_vec(),
        }
    }

    /// Powers for every vertex of `g`, in watts.
    pub fn forward(&self, g: &InterferenceGraph) -> Vec<f64> {
        self.forward_prepared(&self.prepare(g))
    }

    pub fn forward_prepared(&self, g: &PreparedGraph) -> Vec<f64> {
        let kv = self.scaler.encoding.vertex_dim();
        let ke = self.scaler.encoding.edge_dim();
        let hidden = self.f_a.output_dim();
        let mut sa = MlpScratch::new(&self.f_a);
        let mut sc = MlpScratch::new(&self.f_c);
        let mut a_in = vec![0.0; kv + 1 + ke];
        let mut c_in = vec![0.0; hidden + kv + 1];
        let mut p = vec![1.0; g.vertices];
        let mut next = vec![0.0; g.vertices];
        for _ in 0..self.layers {
            for v in 0..g.vertices {
                let acc = &mut c_in[..hidden];
                acc.fill(0.0);
                for e in g.offsets[v]..g.offsets[v + 1] {
                    let u = g.src[e];
                    a_in[..kv].copy_from_slice(&g.vertex[u * kv..(u + 1) * kv]);
                    a_in[kv] = p[u];
                    a_in[kv + 1..].copy_from_slice(&g.edge[e * ke..(e + 1) * ke]);
                    let msg = self.f_a.forward_with(&a_in, &mut sa);
                    for (s, m) in acc.iter_mut().zip(msg) {
                        *s += m;
                    }
                }
                c_in[hidden..hidden + kv].copy_from_slice(&g.vertex[v * kv..(v + 1) * kv]);
                c_in[hidden + kv] = p[v];
                next[v] = self.f_c.forward_with(&c_in, &mut sc)[0];
            }
            std::mem::swap(&mut p, &mut next);
        }
        p.iter().map(|x| x * self.p_max).collect()
    }

    /// Record the batched forward pass over the disjoint union of `batch`;
    /// returns the tape and the `ΣV × 1` power node in watts.
    pub fn forward_tape(&self, batch: &[&PreparedGraph]) -> (Tape, crate::nn::Var) {
        let kv = self.scaler.encoding.vertex_dim();
        let ke = self.scaler.encoding.edge_dim();
        let total_v: usize = batch.iter().map(|g| g.vertices).sum();
        let total_e: usize = batch.iter().map(|g| g.src.len()).sum();
        let mut vertex = Vec::with_capacity(total_v * kv);
        let mut edge = Vec::with_capacity(total_e * ke);
        let mut src = Vec::with_capacity(total_e);
        let mut dst = Vec::with_capacity(total_e);
        let mut base = 0;
        for g in batch {
            vertex.extend_from_slice(&g.vertex);
            edge.extend_from_slice(&g.edge);
            src.extend(g.src.iter().map(|u| u + base));
            dst.extend(g.dst.iter().map(|v| v + base));
            base += g.vertices;
        }
        let mut tape = Tape::new(self.flat_params());
        let vx = tape.input(Mat { rows: total_v, cols: kv, data: vertex });
        let ex = tape.input(Mat { rows: total_e, cols: ke, data: edge });
        let mut p = tape.input(Mat { rows: total_v, cols: 1, data: vec![1.0; total_v] });
        let c_offset = self.f_a.params().len();
        for _ in 0..self.layers {
            let m = tape.concat_cols(vx, p);
            let mu = tape.gather_rows(m, src.clone());
            let a_in = tape.concat_cols(mu, ex);
            let msg = self.f_a.forward_tape(&mut tape, a_in, 0);
            let agg = tape.segment_sum(msg, dst.clone(), total_v);
            let c_in = tape.concat_cols(agg, m);
            p = self.f_c.forward_tape(&mut tape, c_in, c_offset);
        }
        let out = tape.scale(p, self.p_max);
        (tape, out)
    }

    pub fn allocate(&self, net: &NetworkInstance, spec: ThresholdSpec) -> Result<Vec<f64>, GnnError> {
        self.check_instance(net)?;
        Ok(self.forward(&build_graph(net, spec)?))
    }

    fn check_instance(&self, net: &NetworkInstance) -> Result<(), GnnError> {
        if net.p_max() != self.p_max {
            return Err(GnnError::StaleModel(format!(
                "model trained for P_max {} but instance has {}",
                self.p_max,
                net.p_max()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config_hash: self.config_hash(),
            scaler_hash: self.scaler.hash(),
            seed: self.seed,
            layers: self.layers,
            p_max: self.p_max,
            spec: self.spec,
            f_a_dims: self.f_a.dims().to_vec(),
            f_c_dims: self.f_c.dims().to_vec(),
            scaler: self.scaler.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        serde_json::to_writer(&mut w, &self.flat_params())?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GnnError> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header_line = lines.next().ok_or_else(|| GnnError::Format("empty file".into()))??;
        let header: ModelHeader = serde_json::from_str(&header_line)?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(GnnError::Format(format!("unsupported {} v{}", header.format, header.version)));
        }
        if header.scaler.hash() != header.scaler_hash {
            return Err(GnnError::StaleModel("feature statistics do not match their recorded hash".into()));
        }
        let params_line = lines.next().ok_or_else(|| GnnError::Format("missing parameter line".into()))??;
        let params: Vec<f64> = serde_json::from_str(&params_line)?;
        let f_a_len = crate::nn::parameter_count(&header.f_a_dims);
        if params.len() != f_a_len + crate::nn::parameter_count(&header.f_c_dims) {
            return Err(GnnError::Format("parameter count does not match layer dims".into()));
        }
        let model = Self {
            f_a: Mlp::with_params(&header.f_a_dims, Activation::Identity, params[..f_a_len].to_vec())?,
            f_c: Mlp::with_params(&header.f_c_dims, Activation::Sigmoid, params[f_a_len..].to_vec())?,
            layers: header.layers,
            p_max: header.p_max,
            spec: header.spec,
            scaler: header.scaler,
            seed: header.seed,
        };
        if model.config_hash() != header.config_hash {
            return Err(GnnError::StaleModel("configuration hash mismatch".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format: String,
    version: u32,
    config_hash: String,
    scaler_hash: String,
    seed: u64,
    layers: usize,
    p_max: f64,
    spec: ThresholdSpec,
    f_a_dims: Vec<usize>,
    f_c_dims: Vec<usize>,
    scaler: FeatureScaler,
}

/// `−Σ_t w_t log2(1 + SINR_t)` for one instance.
pub fn sum_rate_loss(powers: &[f64], net: &NetworkInstance) -> f64 {
    -weighted_sum_rate(net, powers)
}

/// Loss of one instance and its gradient with respect to the powers.
pub fn sum_rate_loss_grad(powers: &[f64], net: &NetworkInstance) -> (f64, Vec<f64>) {
    let t = net.pairs();
    let w = net.weights();
    let mut grad = vec![0.0; t];
    let mut loss = 0.0;
    let ln2 = std::f64::consts::LN_2;
    for i in 0..t {
        let own = net.gain(i, i) * powers[i];
        let mut interference = net.noise()[i];
        for (j, &pj) in powers.iter().enumerate() {
            if j != i {
                interference += net.gain(j, i) * pj;
            }
        }
        let total = interference + own;
        loss -= w[i] * (own / interference).ln_1p() / ln2;
        if w[i] == 0.0 {
            continue;
        }
        for (k, g) in grad.iter_mut().enumerate() {
            let gk = net.gain(k, i);
            let d = if k == i { gk / total } else { gk / total - gk / interference };
            *g -= w[i] * d / ln2;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, adam: AdamConfig::default(), seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub eval_sum_rate: Option<f64>,
}

pub const TRAIN_LOG_COLUMNS: &str = "epoch,loss,eval_sum_rate";

fn instance_gradient(model: &GnnModel, g: &PreparedGraph, net: &NetworkInstance) -> (f64, Vec<f64>) {
    let (tape, out) = model.forward_tape(&[g]);
    let (loss, seed) = sum_rate_loss_grad(&tape.value(out).data, net);
    let (grads, _) = tape.backward_from(out, Mat { rows: seed.len(), cols: 1, data: seed });
    (loss, grads.values)
}

/// Mean loss and mean parameter gradient over `batch`.
///
/// Each instance gets its own tape, which bounds memory on dense graphs.
/// Per-instance results are summed in batch order whatever the thread
/// count, so the update is reproducible.
fn batch_gradient(model: &GnnModel, batch: &[(&PreparedGraph, &NetworkInstance)]) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = batch.par_iter().map(|(g, net)| instance_gradient(model, g, net)).collect();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.parameter_count()];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

/// Mean loss and gradient of a set of instances, exposed for checks.
pub fn loss_and_gradient(
    model: &GnnModel,
    nets: &[NetworkInstance],
    spec: ThresholdSpec,
) -> Result<(f64, Vec<f64>), GnnError> {
    let prepared =
        nets.iter().map(|n| Ok(model.prepare(&build_graph(n, spec)?))).collect::<Result<Vec<_>, GnnError>>()?;
    let batch: Vec<_> = prepared.iter().zip(nets).collect();
    Ok(batch_gradient(model, &batch))
}

/// Minimise the batch-mean negative weighted sum rate with Adam.
///
/// The model's own pruning rule builds every training graph. Per epoch the
/// instance order is shuffled by a generator seeded with `cfg.seed`.
pub fn train(
    model: &mut GnnModel,
    train_set: &[NetworkInstance],
    eval_set: Option<&[NetworkInstance]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>, GnnError> {
    if train_set.is_empty() || cfg.batch_size == 0 {
        return Err(GnnError::EmptyDataset);
    }
    for net in train_set {
        model.check_instance(net)?;
    }
    let spec = model.spec;
    let prepared =
        train_set.iter().map(|n| Ok(model.prepare(&build_graph(n, spec)?))).collect::<Result<Vec<_>, GnnError>>()?;
    let eval_graphs = match eval_set {
        Some(nets) => Some(
            nets.iter()
                .map(|n| Ok((model.prepare(&build_graph(n, spec)?), n)))
                .collect::<Result<Vec<_>, GnnError>>()?,
        ),
        None => None,
    };
    let mut params = model.flat_params();
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| (&prepared[i], &train_set[i])).collect();
            let (loss, grads) = batch_gradient(model, &batch);
            if !loss.is_finite() {
                return Err(GnnError::Diverged { epoch, batch: bi, what: format!("loss {loss}") });
            }
            if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
                return Err(GnnError::Diverged {
                    epoch,
                    batch: bi,
                    what: format!("gradient entry {bad} is {}", grads[bad]),
                });
            }
            adam_step(&mut params, &grads, &mut state, &cfg.adam);
            if let Some(bad) = params.iter().position(|p| !p.is_finite()) {
                return Err(GnnError::Diverged {
                    epoch,
                    batch: bi,
                    what: format!("parameter {bad} is {}", params[bad]),
                });
            }
            model.set_flat_params(&params)?;
            loss_sum += loss * chunk.len() as f64;
            weight_sum += chunk.len() as f64;
        }
        let eval_sum_rate = eval_graphs.as_ref().map(|set| {
            set.iter().map(|(g, net)| weighted_sum_rate(net, &model.forward_prepared(g))).sum::<f64>()
                / set.len() as f64
        });
        log.push(EpochLog { epoch, loss: loss_sum / weight_sum, eval_sum_rate });
    }
    Ok(log)
}

pub fn write_train_log<W: Write>(out: &mut W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "{TRAIN_LOG_COLUMNS}")?;
    for e in log {
        let eval = e.eval_sum_rate.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", e.epoch, e.loss, eval)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { repeats: 20, warmup: 2 }
    }
}

impl TimingConfig {
    /// Single unwarmed runs carry scheduler noise.
    pub fn is_noisy(&self) -> bool {
        self.repeats < 2 || self.warmup == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedInference {
    /// `inference_time` is the median forward time with the graph prebuilt.
    pub allocation: AllocationResult,
    pub graph_build_time: f64,
    pub edges: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Build the graph under `spec` and time the forward pass.
pub fn infer_timed(
    model: &GnnModel,
    net: &NetworkInstance,
    spec: ThresholdSpec,
    timing: TimingConfig,
) -> Result<TimedInference, GnnError> {
    model.check_instance(net)?;
    let start = Instant::now();
    let graph = build_graph(net, spec)?;
    let prepared = model.prepare(&graph);
    let graph_build_time = start.elapsed().as_secs_f64();
    for _ in 0..timing.warmup {
        std::hint::black_box(model.forward_prepared(&prepared));
    }
    let mut times = Vec::with_capacity(timing.repeats.max(1));
    let mut powers = Vec::new();
    for _ in 0..timing.repeats.max(1) {
        let t0 = Instant::now();
        powers = std::hint::black_box(model.forward_prepared(&prepared));
        times.push(t0.elapsed().as_secs_f64());
    }
    let weighted_sum_rate = weighted_sum_rate(net, &powers);
    Ok(TimedInference {
        allocation: AllocationResult { powers, weighted_sum_rate, inference_time: median(&mut times) },
        graph_build_time,
        edges: graph.edge_count(),
    })
}
