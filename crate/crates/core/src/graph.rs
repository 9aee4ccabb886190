//! Interference graph of a network instance under a pruning rule.
//!
//! Vertex `v` stands for transceiver pair `v`. A directed edge `u → v`
//! carries the interference link from transmitter `u` into the receiver of
//! pair `v`, so pruning measures `d_{u, D(v)}`. In-edges of each vertex are
//! stored contiguously and ordered by source index, which fixes the
//! aggregation order independent of the rule that admitted them.

use std::ops::Range;

use thiserror::Error;

use crate::netsim::NetworkInstance;
use crate::stochgeo::ThresholdSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid pruning rule {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceGraph {
    spec: ThresholdSpec,
    direct_re: Vec<f64>,
    direct_im: Vec<f64>,
    direct_gain: Vec<f64>,
    direct_distance: Vec<f64>,
    weight: Vec<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    edge_re: Vec<f64>,
    edge_im: Vec<f64>,
    edge_gain: Vec<f64>,
    edge_distance: Vec<f64>,
    offsets: Vec<usize>,
}

/// Sources admitted at receiver `v`, ascending.
fn admitted(net: &NetworkInstance, spec: ThresholdSpec, v: usize) -> Vec<usize> {
    let t = net.pairs();
    match spec {
        ThresholdSpec::Complete => (0..t).filter(|&u| u != v).collect(),
        ThresholdSpec::Distance { t: radius } => (0..t).filter(|&u| u != v && net.distance(u, v) <= radius).collect(),
        ThresholdSpec::Neighbour { n } => {
            if n >= t - 1 {
                return (0..t).filter(|&u| u != v).collect();
            }
            let mut candidates: Vec<(f64, usize)> =
                (0..t).filter(|&u| u != v).map(|u| (net.distance(u, v), u)).collect();
            let by_distance_then_index = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            candidates.select_nth_unstable_by(n, by_distance_then_index);
            let mut chosen: Vec<usize> = candidates[..n].iter().map(|&(_, u)| u).collect();
            chosen.sort_unstable();
            chosen
        }
    }
}

/// Build the pruned interference graph.
///
/// `Neighbour { n }` with `n ≥ T − 1` degenerates to the complete graph.
/// Distance ties at exactly `t` are kept.
pub fn build_graph(net: &NetworkInstance, spec: ThresholdSpec) -> Result<InterferenceGraph, GraphError> {
    match spec {
        ThresholdSpec::Distance { t } if !(t >= 0.0) => return Err(GraphError::InvalidSpec(spec.to_string())),
        ThresholdSpec::Neighbour { n: 0 } => return Err(GraphError::InvalidSpec(spec.to_string())),
        _ => {}
    }
    let t = net.pairs();
    let mut g = InterferenceGraph {
        spec,
        direct_re: Vec::with_capacity(t),
        direct_im: Vec::with_capacity(t),
        direct_gain: Vec::with_capacity(t),
        direct_distance: Vec::with_capacity(t),
        weight: net.weights().to_vec(),
        src: Vec::new(),
        dst: Vec::new(),
        edge_re: Vec::new(),
        edge_im: Vec::new(),
        edge_gain: Vec::new(),
        edge_distance: Vec::new(),
        offsets: Vec::with_capacity(t + 1),
    };
    g.offsets.push(0);
    for v in 0..t {
        let (re, im) = net.channel(v, v);
        g.direct_re.push(re);
        g.direct_im.push(im);
        g.direct_gain.push(net.gain(v, v));
        g.direct_distance.push(net.distance(v, v));
        for u in admitted(net, spec, v) {
            let (re, im) = net.channel(u, v);
            g.src.push(u);
            g.dst.push(v);
            g.edge_re.push(re);
            g.edge_im.push(im);
            g.edge_gain.push(net.gain(u, v));
            g.edge_distance.push(net.distance(u, v));
        }
        g.offsets.push(g.src.len());
    }
    Ok(g)
}

impl InterferenceGraph {
    pub fn spec(&self) -> ThresholdSpec {
        self.spec
    }

    pub fn vertex_count(&self) -> usize {
        self.direct_gain.len()
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    /// Edge indices of the in-neighbourhood N(v).
    pub fn in_edges(&self, v: usize) -> Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbours(&self, v: usize) -> &[usize] {
        &self.src[self.in_edges(v)]
    }

    pub fn sources(&self) -> &[usize] {
        &self.src
    }

    pub fn targets(&self) -> &[usize] {
        &self.dst
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Directed edge list as (source, target) pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    pub fn direct_channel(&self, v: usize) -> (f64, f64) {
        (self.direct_re[v], self.direct_im[v])
    }

    pub fn direct_gain(&self, v: usize) -> f64 {
        self.direct_gain[v]
    }

    pub fn direct_distance(&self, v: usize) -> f64 {
        self.direct_distance[v]
    }

    pub fn weight(&self, v: usize) -> f64 {
        self.weight[v]
    }

    pub fn edge_channel(&self, e: usize) -> (f64, f64) {
        (self.edge_re[e], self.edge_im[e])
    }

    pub fn edge_gain(&self, e: usize) -> f64 {
        self.edge_gain[e]
    }

    pub fn edge_distance(&self, e: usize) -> f64 {
        self.edge_distance[e]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{sample_network, ScenarioConfig};

    fn net(t: usize, seed: u64) -> NetworkInstance {
        sample_network(&ScenarioConfig { pairs: Some(t), seed, ..ScenarioConfig::default() }, 0).unwrap()
    }

    #[test]
    fn neighbour_full_equals_complete() {
        let n = net(9, 1);
        let complete = build_graph(&n, ThresholdSpec::Complete).unwrap();
        assert_eq!(complete.edge_count(), 9 * 8);
        for k in [8, 9, 50] {
            let g = build_graph(&n, ThresholdSpec::Neighbour { n: k }).unwrap();
            assert_eq!(g.sources(), complete.sources());
            assert_eq!(g.targets(), complete.targets());
        }
    }

    #[test]
    fn neighbour_edge_count_law() {
        let n = net(12, 4);
        for k in 1..=11 {
            let g = build_graph(&n, ThresholdSpec::Neighbour { n: k }).unwrap();
            assert_eq!(g.edge_count(), k * 12);
            assert!((0..12).all(|v| g.in_degree(v) == k));
        }
    }

    #[test]
    fn collinear_distance_pruning() {
        // receiver of pair 0 at the origin; interferers at 1, 5 and 100 m
        let tx = vec![[-3.0, 0.0], [1.0, 0.0], [5.0, 0.0], [100.0, 0.0]];
        let rx = vec![[0.0, 0.0], [1.0, 2.0], [5.0, 2.0], [100.0, 2.0]];
        let t = 4;
        let net =
            NetworkInstance::from_parts(tx, rx, vec![0.1; t * t], vec![0.0; t * t], vec![1.0; t], vec![1e-4; t], 1.0)
                .unwrap();
        let g = build_graph(&net, ThresholdSpec::Distance { t: 10.0 }).unwrap();
        assert_eq!(g.neighbours(0), &[1, 2]);
        let ds: Vec<f64> = g.in_edges(0).map(|e| g.edge_distance(e)).collect();
        assert_eq!(ds, vec![1.0, 5.0]);
        // tie at exactly t is kept
        let tie = build_graph(&net, ThresholdSpec::Distance { t: 5.0 }).unwrap();
        assert_eq!(tie.neighbours(0), &[1, 2]);
    }

    #[test]
    fn isolated_vertex_is_legal() {
        let n = net(6, 2);
        let g = build_graph(&n, ThresholdSpec::Distance { t: 0.0 }).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(g.neighbours(3).is_empty());
    }

    #[test]
    fn neighbour_ties_prefer_lower_index() {
        // all interferers equidistant from receiver 0
        let t = 4;
        let tx = vec![[0.0, -9.0], [3.0, 0.0], [0.0, 3.0], [-3.0, 0.0]];
        let rx = vec![[0.0, 0.0], [3.0, 5.0], [0.0, 8.0], [-3.0, 5.0]];
        let net = NetworkInstance::from_parts(tx, rx, vec![0.1; 16], vec![0.0; 16], vec![1.0; t], vec![1e-4; t], 1.0)
            .unwrap();
        let g = build_graph(&net, ThresholdSpec::Neighbour { n: 2 }).unwrap();
        assert_eq!(g.neighbours(0), &[1, 2]);
    }

    #[test]
    fn invalid_specs_rejected() {
        let n = net(3, 0);
        assert!(build_graph(&n, ThresholdSpec::Neighbour { n: 0 }).is_err());
        assert!(build_graph(&n, ThresholdSpec::Distance { t: -1.0 }).is_err());
    }

    #[test]
    fn vertex_features_unchanged_by_pruning() {
        let n = net(10, 5);
        let a = build_graph(&n, ThresholdSpec::Complete).unwrap();
        let b = build_graph(&n, ThresholdSpec::Neighbour { n: 2 }).unwrap();
        let c = build_graph(&n, ThresholdSpec::Distance { t: 20.0 }).unwrap();
        for v in 0..10 {
            for g in [&b, &c] {
                assert_eq!(g.direct_channel(v), a.direct_channel(v));
                assert_eq!(g.direct_distance(v), a.direct_distance(v));
                assert_eq!(g.weight(v), a.weight(v));
            }
        }
    }
}
