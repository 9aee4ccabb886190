//! Dense layers, a small reverse-mode tape and Adam.
//!
//! Parameters of a model live in one flat `f64` array. Each [`Mlp`] stores
//! its layers as weight matrix (row-major, `in × out`) followed by bias, and
//! [`Gradients`] use the same layout so the optimiser never needs to know
//! about shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("loss must be a 1x1 value, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("layer dims must list at least an input and an output width")]
    TooFewDims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::DimMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network with ReLU between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize], output: Activation) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::TooFewDims);
        }
        Ok(Self { dims: dims.to_vec(), output, params: vec![0.0; parameter_count(dims)] })
    }

    /// Uniform fan-in initialisation, `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn kaiming_uniform<R: Rng>(dims: &[usize], output: Activation, rng: &mut R) -> Result<Self, NnError> {
        let mut m = Self::zeros(dims, output)?;
        let mut offset = 0;
        for w in dims.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for p in &mut m.params[offset..offset + w[0] * w[1]] {
                *p = rng.random_range(-bound..bound);
            }
            offset += w[0] * w[1] + w[1];
        }
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated on construction")
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.params.len() {
            return Err(NnError::DimMismatch { expected: self.params.len(), got: values.len() });
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn with_params(dims: &[usize], output: Activation, params: Vec<f64>) -> Result<Self, NnError> {
        let mut m = Self::zeros(dims, output)?;
        m.set_params(&params)?;
        Ok(m)
    }

    fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output
        } else {
            Activation::Relu
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), got: x.len() });
        }
        let mut scratch = MlpScratch::new(self);
        Ok(self.forward_with(x, &mut scratch).to_vec())
    }

    /// Allocation-free forward; `x.len()` must equal the input width.
    pub fn forward_with<'a>(&self, x: &[f64], scratch: &'a mut MlpScratch) -> &'a [f64] {
        debug_assert_eq!(x.len(), self.input_dim());
        let MlpScratch { a, b } = scratch;
        a[..x.len()].copy_from_slice(x);
        let mut offset = 0;
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let out = &mut b[..n_out];
            out.copy_from_slice(bias);
            for (k, &xk) in a[..n_in].iter().enumerate() {
                let wrow = &w[k * n_out..(k + 1) * n_out];
                for (o, &wkc) in out.iter_mut().zip(wrow) {
                    *o += xk * wkc;
                }
            }
            let act = self.activation_of(layer);
            for o in out.iter_mut() {
                *o = act.apply(*o);
            }
            std::mem::swap(a, b);
            offset += n_in * n_out + n_out;
        }
        &a[..self.output_dim()]
    }

    /// Record the forward pass of a row batch `x` on `tape`, reading the
    /// parameters from `tape`'s flat array starting at `offset`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, offset: usize) -> Var {
        let mut h = x;
        let mut at = offset;
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            h = tape.affine(h, at, n_in, n_out);
            at += n_in * n_out + n_out;
            h = match self.activation_of(layer) {
                Activation::Identity => h,
                Activation::Relu => tape.relu(h),
                Activation::Sigmoid => tape.sigmoid(h),
            };
        }
        h
    }
}

/// Ping-pong buffers for [`Mlp::forward_with`].
#[derive(Debug, Clone)]
pub struct MlpScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl MlpScratch {
    pub fn new(m: &Mlp) -> Self {
        let widest = *m.dims.iter().max().expect("validated on construction");
        Self { a: vec![0.0; widest], b: vec![0.0; widest] }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Affine { x: usize, offset: usize, n_in: usize, n_out: usize },
    Relu(usize),
    Sigmoid(usize),
    Scale(usize, f64),
    Add(usize, usize),
    ConcatCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    SegmentSum(usize, Vec<usize>),
    Sum(usize),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records operations on row-batched matrices for one backward sweep.
pub struct Tape {
    params: Vec<f64>,
    nodes: Vec<Node>,
}

/// Gradient of a scalar with respect to the flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|g| *g *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl Tape {
    pub fn new(params: Vec<f64>) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    /// `x · W + b` with `W` (`n_in × n_out`, row-major) and `b` read from the
    /// parameter array at `offset`.
    pub fn affine(&mut self, x: Var, offset: usize, n_in: usize, n_out: usize) -> Var {
        let xm = &self.nodes[x.0].value;
        assert_eq!(xm.cols, n_in, "affine input width");
        let w = &self.params[offset..offset + n_in * n_out];
        let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        let mut out = Mat::zeros(xm.rows, n_out);
        for r in 0..xm.rows {
            let o = &mut out.data[r * n_out..(r + 1) * n_out];
            o.copy_from_slice(bias);
            for (k, &xk) in xm.row(r).iter().enumerate() {
                for (oc, &wkc) in o.iter_mut().zip(&w[k * n_out..(k + 1) * n_out]) {
                    *oc += xk * wkc;
                }
            }
        }
        self.push(out, Op::Affine { x: x.0, offset, n_in, n_out })
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xm = &self.nodes[x.0].value;
        let out = Mat { rows: xm.rows, cols: xm.cols, data: xm.data.iter().map(|&v| f(v)).collect() };
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.map(x, |v| v * k, Op::Scale(x.0, k))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((am.rows, am.cols), (bm.rows, bm.cols), "add shapes");
        let data = am.data.iter().zip(&bm.data).map(|(x, y)| x + y).collect();
        let out = Mat { rows: am.rows, cols: am.cols, data };
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(am.rows, bm.rows, "concat rows");
        let cols = am.cols + bm.cols;
        let mut data = Vec::with_capacity(am.rows * cols);
        for r in 0..am.rows {
            data.extend_from_slice(am.row(r));
            data.extend_from_slice(bm.row(r));
        }
        let out = Mat { rows: am.rows, cols, data };
        self.push(out, Op::ConcatCols(a.0, b.0))
    }

    /// Row `k` of the result is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let xm = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(index.len() * xm.cols);
        for &i in &index {
            data.extend_from_slice(xm.row(i));
        }
        let out = Mat { rows: index.len(), cols: xm.cols, data };
        self.push(out, Op::GatherRows(x.0, index))
    }

    /// Row `s` of the result is the sum of the rows `k` of `x` with
    /// `segment[k] == s`, added in increasing `k`.
    pub fn segment_sum(&mut self, x: Var, segment: Vec<usize>, segments: usize) -> Var {
        let xm = &self.nodes[x.0].value;
        assert_eq!(segment.len(), xm.rows, "one segment id per row");
        let mut out = Mat::zeros(segments, xm.cols);
        for (k, &s) in segment.iter().enumerate() {
            for (o, v) in out.data[s * xm.cols..(s + 1) * xm.cols].iter_mut().zip(xm.row(k)) {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum(x.0, segment))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0].value.data.iter().sum();
        self.push(Mat { rows: 1, cols: 1, data: vec![total] }, Op::Sum(x.0))
    }

    /// Gradients of a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let m = &self.nodes[loss.0].value;
        if (m.rows, m.cols) != (1, 1) {
            return Err(NnError::NonScalarLoss { rows: m.rows, cols: m.cols });
        }
        Ok(self.backward_from(loss, Mat { rows: 1, cols: 1, data: vec![1.0] }).0)
    }

    /// Pull `seed` (∂L/∂output) back through the tape. Returns parameter
    /// gradients and the adjoint of every input node, indexed by `Var`.
    pub fn backward_from(&self, output: Var, seed: Mat) -> (Gradients, Vec<Option<Mat>>) {
        let mut params = Gradients::zeros(self.params.len());
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!((seed.rows, seed.cols), (self.nodes[output.0].value.rows, self.nodes[output.0].value.cols));
        adj[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {
                    adj[id] = Some(g);
                }
                &Op::Affine { x, offset, n_in, n_out } => {
                    let xm = &self.nodes[x].value;
                    let w = &self.params[offset..offset + n_in * n_out];
                    let mut dx = Mat::zeros(xm.rows, n_in);
                    let (gw, gb) = params.values[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                    for r in 0..xm.rows {
                        let gr = g.row(r);
                        let xr = xm.row(r);
                        for (b, &gv) in gb.iter_mut().zip(gr) {
                            *b += gv;
                        }
                        for k in 0..n_in {
                            let wrow = &w[k * n_out..(k + 1) * n_out];
                            let gwrow = &mut gw[k * n_out..(k + 1) * n_out];
                            let mut acc = 0.0;
                            for c in 0..n_out {
                                acc += gr[c] * wrow[c];
                                gwrow[c] += xr[k] * gr[c];
                            }
                            dx.data[r * n_in + k] = acc;
                        }
                    }
                    accumulate(&mut adj, x, dx);
                }
                &Op::Relu(x) => {
                    let xm = &self.nodes[x].value;
                    let data = g.data.iter().zip(&xm.data).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                    accumulate(&mut adj, x, Mat { rows: g.rows, cols: g.cols, data });
                }
                &Op::Sigmoid(x) => {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                    accumulate(&mut adj, x, Mat { rows: g.rows, cols: g.cols, data });
                }
                &Op::Scale(x, k) => {
                    let data = g.data.iter().map(|&gv| gv * k).collect();
                    accumulate(&mut adj, x, Mat { rows: g.rows, cols: g.cols, data });
                }
                &Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g);
                }
                &Op::ConcatCols(a, b) => {
                    let ac = self.nodes[a].value.cols;
                    let bc = self.nodes[b].value.cols;
                    let mut ga = Mat::zeros(g.rows, ac);
                    let mut gb = Mat::zeros(g.rows, bc);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        ga.data[r * ac..(r + 1) * ac].copy_from_slice(&gr[..ac]);
                        gb.data[r * bc..(r + 1) * bc].copy_from_slice(&gr[ac..]);
                    }
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::GatherRows(x, index) => {
                    let xm = &self.nodes[*x].value;
                    let mut dx = Mat::zeros(xm.rows, xm.cols);
                    for (k, &i) in index.iter().enumerate() {
                        for (d, v) in dx.data[i * xm.cols..(i + 1) * xm.cols].iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::SegmentSum(x, segment) => {
                    let cols = g.cols;
                    let mut dx = Mat::zeros(segment.len(), cols);
                    for (k, &s) in segment.iter().enumerate() {
                        dx.data[k * cols..(k + 1) * cols].copy_from_slice(g.row(s));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                &Op::Sum(x) => {
                    let xm = &self.nodes[x].value;
                    accumulate(&mut adj, x, Mat { rows: xm.rows, cols: xm.cols, data: vec![g.data[0]; xm.data.len()] });
                }
            }
        }
        (params, adj)
    }
}

fn accumulate(adj: &mut [Option<Mat>], id: usize, g: Mat) {
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight_line(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        let n_layers = m.dims.len() - 1;
        for l in 0..n_layers {
            let (i, o) = (m.dims[l], m.dims[l + 1]);
            let mut next = vec![0.0; o];
            for c in 0..o {
                let mut s = m.params[off + i * o + c];
                for k in 0..i {
                    s += h[k] * m.params[off + k * o + c];
                }
                next[c] = if l + 1 == n_layers { m.output.apply(s) } else { s.max(0.0) };
            }
            off += i * o + o;
            h = next;
        }
        h
    }

    #[test]
    fn zero_model_gives_zero() {
        let m = Mlp::zeros(&[3, 4, 2], Activation::Identity).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.params().len(), parameter_count(&[3, 4, 2]));
        assert_eq!(parameter_count(&[6, 16, 32]), 6 * 16 + 16 + 16 * 32 + 32);
    }

    #[test]
    fn identity_layer() {
        let mut p = vec![0.0; 12];
        for k in 0..3 {
            p[k * 3 + k] = 1.0;
        }
        let m = Mlp::with_params(&[3, 3], Activation::Identity, p).unwrap();
        assert_eq!(m.forward(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Identity, Activation::Sigmoid] {
            let m = Mlp::kaiming_uniform(&[5, 7, 4, 2], act, &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = m.forward(&x).unwrap();
            let b = straight_line(&m, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = Mlp::zeros(&[3, 1], Activation::Identity).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(NnError::DimMismatch { .. })));
        assert!(matches!(Mlp::zeros(&[3], Activation::Identity), Err(NnError::TooFewDims)));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new(vec![]);
        let x = tape.input(Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = tape.sum(x);
        let (_, adj) = tape.backward_from(s, Mat { rows: 1, cols: 1, data: vec![1.0] });
        assert_eq!(adj[x.0].as_ref().unwrap().data, vec![1.0; 6]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let m = Mlp::zeros(&[2, 3, 1], Activation::Identity).unwrap();
        let mut tape = Tape::new(m.params().to_vec());
        let c = tape.input(Mat::from_vec(1, 1, vec![4.0]).unwrap());
        let x = tape.input(Mat::from_vec(1, 2, vec![1.0, 1.0]).unwrap());
        let _ = m.forward_tape(&mut tape, x, 0);
        let g = tape.backward(c).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new(vec![]);
        let x = tape.input(Mat::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(NnError::NonScalarLoss { .. })));
    }

    fn loss_of(m: &Mlp, params: &[f64], x: &Mat, index: &[usize], seg: &[usize]) -> (f64, Gradients) {
        let mut tape = Tape::new(params.to_vec());
        let xv = tape.input(x.clone());
        let g = tape.gather_rows(xv, index.to_vec());
        let both = tape.concat_cols(g, g);
        let h = m.forward_tape(&mut tape, both, 0);
        let s = tape.segment_sum(h, seg.to_vec(), 2);
        let s = tape.scale(s, 0.7);
        let sq = tape.sigmoid(s);
        let tot = tape.add(sq, s);
        let loss = tape.sum(tot);
        let value = tape.value(loss).data[0];
        (value, tape.backward(loss).unwrap())
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mlp::kaiming_uniform(&[4, 5, 3], Activation::Sigmoid, &mut rng).unwrap();
            let mut params = m.params().to_vec();
            for p in params.iter_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let x = Mat::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let index = [0, 2, 1, 2];
            let seg = [0, 1, 1, 0];
            let (_, grads) = loss_of(&m, &params, &x, &index, &seg);
            let h = 1e-5;
            for i in 0..params.len() {
                let mut up = params.clone();
                up[i] += h;
                let mut dn = params.clone();
                dn[i] -= h;
                let fd = (loss_of(&m, &up, &x, &index, &seg).0 - loss_of(&m, &dn, &x, &index, &seg).0) / (2.0 * h);
                let a = grads.values[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} param {i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_moves_against_constant_gradient() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        for _ in 0..50 {
            adam_step(&mut p, &[2.0, -0.5], &mut st, &AdamConfig::default());
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn adam_second_step_by_hand() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = vec![1.0];
        let mut st = AdamState { m: vec![0.2], v: vec![0.01], step: 1 };
        adam_step(&mut p, &[0.5], &mut st, &cfg);
        // m = 0.18 + 0.05, v = 0.00999 + 0.00025
        let m: f64 = 0.23;
        let v: f64 = 0.01024;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.998001);
        let expected = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((st.m[0] - m).abs() < 1e-15);
        assert!((st.v[0] - v).abs() < 1e-15);
        assert!((p[0] - expected).abs() < 1e-14);
        assert_eq!(st.step, 2);
    }
}
