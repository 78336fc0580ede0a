//! Neighbor-similarity training.
//!
//! Minimizes `J = sum_k sum_{i in N_k} sum_{j notin N_k}
//! (log sigma(h_k . h_j) - log sigma(h_k . h_i))` with negative sampling and
//! Adam. Within one loss/gradient evaluation all neighbor samples are pinned,
//! so `J` is a deterministic function of the parameters and the analytic
//! gradient can be checked against central finite differences.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ProjectionTable;
use crate::graph::{HeteroGraph, NodeRef, NodeType};
use crate::model::{backward, evaluate, Grads, ModelDims, ModelParams, Plan};
use crate::util::{central_difference, log_sigmoid, mix_seed, sigmoid};

const BATCH_RNG_TAG: u64 = 0xBA;
const PLAN_SEED_TAG: u64 = 0x5A;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Uniform over all nodes of all types.
    Uniform,
    /// Proportional to degree (draws a random edge endpoint).
    DegreeProportional,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Negative samples per positive pair.
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub negative_sampling: NegativeSampling,
    /// Forces single-threaded evaluation. Output is bit-reproducible either
    /// way; this removes scheduling variance entirely.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            negatives: 20,
            batch_size: 512,
            epochs: 5,
            seed: 42,
            negative_sampling: NegativeSampling::Uniform,
            deterministic: false,
        }
    }
}

/// One training sample: a center, one true neighbor, and negatives drawn
/// outside `N_k ∪ {k}` (any node type may pair with any).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub center: NodeRef,
    pub positive: NodeRef,
    pub negatives: Vec<NodeRef>,
}

/// Node at position `idx` of the global (type-major) node enumeration.
fn node_at(graph: &HeteroGraph, mut idx: usize) -> NodeRef {
    for t in NodeType::ALL {
        let n = graph.node_count(t);
        if idx < n {
            return NodeRef::new(t, idx as u32);
        }
        idx -= n;
    }
    unreachable!("global node index out of range")
}

/// Draws `count` samples: positives uniform over the undirected edge set with
/// random orientation; negatives by rejection against `N_k ∪ {k}`. The
/// rejection loop is capped at `100 * negatives` tries per sample.
pub fn sample_batch(
    graph: &HeteroGraph,
    edges: &[(NodeRef, NodeRef)],
    cfg: &TrainConfig,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainSample>> {
    if edges.is_empty() {
        return Err(Error::Input("graph has no edges to sample from".into()));
    }
    let total = graph.total_nodes();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (a, b) = edges[rng.random_range(0..edges.len())];
        let (center, positive) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let mut negatives = Vec::with_capacity(cfg.negatives);
        let cap = 100 * cfg.negatives.max(1);
        let mut tries = 0usize;
        while negatives.len() < cfg.negatives {
            tries += 1;
            if tries > cap {
                return Err(Error::Input(format!(
                    "negative sampling for {center} exhausted {cap} tries \
                     (node may be adjacent to nearly all nodes)"
                )));
            }
            let j = match cfg.negative_sampling {
                NegativeSampling::Uniform => node_at(graph, rng.random_range(0..total)),
                NegativeSampling::DegreeProportional => {
                    let (x, y) = edges[rng.random_range(0..edges.len())];
                    if rng.random_bool(0.5) {
                        x
                    } else {
                        y
                    }
                }
            };
            if j == center || graph.has_edge(center, j) {
                continue;
            }
            negatives.push(j);
        }
        out.push(TrainSample {
            center,
            positive,
            negatives,
        });
    }
    Ok(out)
}

/// A batch with its sampling plan pinned: the loss becomes a deterministic
/// function of the parameters, which both the optimizer step and the
/// finite-difference oracle rely on.
pub struct PinnedBatch<'a> {
    graph: &'a HeteroGraph,
    table: &'a ProjectionTable,
    samples: &'a [TrainSample],
    plan: Plan,
    /// Per sample: plan-root positions of (center, positive, negatives...).
    roots: Vec<(usize, usize, Vec<usize>)>,
}

impl<'a> PinnedBatch<'a> {
    pub fn new(
        graph: &'a HeteroGraph,
        table: &'a ProjectionTable,
        dims: &ModelDims,
        samples: &'a [TrainSample],
        seed: u64,
    ) -> Self {
        let mut nodes: Vec<NodeRef> = Vec::with_capacity(samples.len() * (2 + 4));
        for s in samples {
            nodes.push(s.center);
            nodes.push(s.positive);
            nodes.extend_from_slice(&s.negatives);
        }
        let plan = Plan::build(graph, dims, &nodes, seed);
        let pos = |n: NodeRef| plan.root_index(n).expect("sample node in plan");
        let roots = samples
            .iter()
            .map(|s| {
                (
                    pos(s.center),
                    pos(s.positive),
                    s.negatives.iter().map(|&j| pos(j)).collect(),
                )
            })
            .collect();
        PinnedBatch {
            graph,
            table,
            samples,
            plan,
            roots,
        }
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    fn loss_from_embeddings(&self, h: &[Array1<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (idx, (k, i, js)) in self.roots.iter().enumerate() {
            let hk = &h[*k];
            let u_pos = hk.dot(&h[*i]);
            let mut contrib = -(js.len() as f64) * log_sigmoid(u_pos);
            for &j in js {
                contrib += log_sigmoid(hk.dot(&h[j]));
            }
            if !contrib.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss contribution at sample {idx} (center {})",
                    self.samples[idx].center
                )));
            }
            total += contrib;
        }
        Ok(total)
    }

    /// Batch loss (summed over samples, per the objective definition).
    pub fn loss(&self, params: &ModelParams) -> Result<f64> {
        let bf = evaluate(self.graph, self.table, params, &self.plan)?;
        self.loss_from_embeddings(&bf.h)
    }

    /// Batch loss plus the exact analytic gradient of every trainable tensor.
    pub fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Grads)> {
        let bf = evaluate(self.graph, self.table, params, &self.plan)?;
        let total = self.loss_from_embeddings(&bf.h)?;

        let mut dh: Vec<Array1<f64>> = vec![Array1::zeros(params.dims.hidden); self.plan.roots.len()];
        for (k, i, js) in &self.roots {
            let hk = bf.h[*k].clone();
            // positive appears once per negative: d/du [-Q log sigma(u)] = -Q sigma(-u)
            let u_pos = hk.dot(&bf.h[*i]);
            let cp = -(js.len() as f64) * sigmoid(-u_pos);
            dh[*k].scaled_add(cp, &bf.h[*i]);
            dh[*i].scaled_add(cp, &hk);
            for &j in js {
                let u_neg = hk.dot(&bf.h[j]);
                let cn = sigmoid(-u_neg);
                dh[*k].scaled_add(cn, &bf.h[j]);
                dh[j].scaled_add(cn, &hk);
            }
        }
        let grads = backward(params, &self.plan, &bf, &dh);
        Ok((total, grads))
    }
}

/// Loss of a batch under pinned sampling seeds.
pub fn loss(
    graph: &HeteroGraph,
    table: &ProjectionTable,
    params: &ModelParams,
    samples: &[TrainSample],
    seed: u64,
) -> Result<f64> {
    PinnedBatch::new(graph, table, &params.dims, samples, seed).loss(params)
}

/// Analytic gradient of a batch under pinned sampling seeds.
pub fn grad(
    graph: &HeteroGraph,
    table: &ProjectionTable,
    params: &ModelParams,
    samples: &[TrainSample],
    seed: u64,
) -> Result<(f64, Grads)> {
    PinnedBatch::new(graph, table, &params.dims, samples, seed).loss_and_grad(params)
}

/// Central-difference gradient over every parameter entry, reusing the
/// batch's pinned sampling plan. Returns the flat layout of
/// [`ModelParams::to_flat`]. Intended for small configurations only.
pub fn fd_oracle(pinned: &PinnedBatch, params: &ModelParams, step: f64) -> Result<Vec<f64>> {
    let dims = params.dims;
    let lambda = params.lambda_s;
    let flat = params.to_flat();
    let mut failure: Option<Error> = None;
    let g = central_difference(
        |x| {
            if failure.is_some() {
                return 0.0;
            }
            let p = match ModelParams::from_flat(dims, lambda, x) {
                Ok(p) => p,
                Err(e) => {
                    failure = Some(e);
                    return 0.0;
                }
            };
            match pinned.loss(&p) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        &flat,
        step,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

/// Maximum relative error between analytic and finite-difference gradients,
/// using `|a - b| / (|b| + 1e-8)` per entry.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-8))
        .fold(0.0, f64::max)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, flat: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((x, g), (m, v)) in flat
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

/// Full training run: one epoch draws as many positive pairs as there are
/// edges. Reports the per-sample mean loss of each epoch through `on_epoch`
/// (called with the epoch index, mean loss, and current parameters). On a
/// non-finite loss the error is returned and the last finite parameters are
/// whatever `on_epoch` last observed.
pub fn train(
    graph: &HeteroGraph,
    table: &ProjectionTable,
    dims: ModelDims,
    lambda_s: f64,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &ModelParams) -> Result<()>,
) -> Result<(ModelParams, Vec<f64>)> {
    let edges = graph.edge_list();
    if edges.is_empty() {
        return Err(Error::Input("cannot train on a graph with no edges".into()));
    }
    let params = ModelParams::init(dims, lambda_s, cfg.seed);
    let mut flat = params.to_flat();
    let mut params = params;
    let mut adam = Adam::new(flat.len());
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut remaining = edges.len();
        let mut batch_idx = 0u64;
        let mut loss_sum = 0.0;
        while remaining > 0 {
            let size = remaining.min(cfg.batch_size);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                cfg.seed,
                &[BATCH_RNG_TAG, epoch as u64, batch_idx],
            ));
            let samples = sample_batch(graph, &edges, cfg, size, &mut rng)?;
            let plan_seed = mix_seed(cfg.seed, &[PLAN_SEED_TAG, epoch as u64, batch_idx]);
            let pinned = PinnedBatch::new(graph, table, &dims, &samples, plan_seed);
            let (batch_loss, grads) = pinned.loss_and_grad(&params)?;
            adam.step(cfg, &mut flat, &grads.to_flat());
            params = ModelParams::from_flat(dims, lambda_s, &flat)?;
            loss_sum += batch_loss;
            remaining -= size;
            batch_idx += 1;
        }
        let mean = loss_sum / edges.len() as f64;
        curve.push(mean);
        on_epoch(epoch, mean, &params)?;
    }
    Ok((params, curve))
}

/// Writes the per-epoch loss curve as `epoch,mean_loss` CSV.
pub fn write_loss_curve(path: &std::path::Path, curve: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("epoch,mean_loss\n");
    for (i, v) in curve.iter().enumerate() {
        body.push_str(&format!("{i},{v}\n"));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FieldDims;
    use crate::graph::EdgeType;

    fn toy_dims() -> ModelDims {
        ModelDims {
            fields: FieldDims([2, 2, 2, 2, 2]),
            hidden: 4,
            sample_l1: 4,
            sample_l2: 3,
        }
    }

    fn toy_graph() -> HeteroGraph {
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoVideo.index()] = vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)];
        edges[EdgeType::VideoTag.index()] = vec![(0, 0), (1, 0), (2, 1), (3, 1), (4, 2)];
        edges[EdgeType::VideoMedia.index()] = vec![(0, 0), (1, 0), (2, 1), (3, 1)];
        edges[EdgeType::VideoWord.index()] = vec![(0, 0), (1, 1), (2, 2), (3, 0)];
        edges[EdgeType::VideoUser.index()] = vec![(0, 0), (2, 0)];
        edges[EdgeType::TagTag.index()] = vec![(0, 1), (1, 2)];
        HeteroGraph::from_edges([5, 3, 2, 1, 3], edges).unwrap()
    }

    fn toy_setup() -> (HeteroGraph, ProjectionTable, ModelParams) {
        let g = toy_graph();
        let dims = toy_dims();
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 17);
        (g, table, params)
    }

    #[test]
    fn single_edge_graph_forces_the_pair() {
        // one edge plus an unconnected extra video so negatives exist
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(0, 0)];
        let g = HeteroGraph::from_edges([2, 1, 0, 0, 0], edges).unwrap();
        let edges = g.edge_list();
        let cfg = TrainConfig {
            negatives: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&g, &edges, &cfg, 16, &mut rng).unwrap();
        for s in &batch {
            let mut pair = [s.center, s.positive];
            pair.sort();
            assert_eq!(
                pair,
                [
                    NodeRef::new(NodeType::Video, 0),
                    NodeRef::new(NodeType::Tag, 0)
                ]
            );
        }
    }

    #[test]
    fn negatives_never_in_neighborhood() {
        let (g, _, _) = toy_setup();
        let edges = g.edge_list();
        let cfg = TrainConfig {
            negatives: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let batch = sample_batch(&g, &edges, &cfg, 8, &mut rng).unwrap();
            for s in &batch {
                for &j in &s.negatives {
                    assert_ne!(j, s.center);
                    assert_ne!(j, s.positive);
                    assert!(!g.has_edge(s.center, j));
                }
            }
        }
    }

    #[test]
    fn batch_sampling_deterministic() {
        let (g, _, _) = toy_setup();
        let edges = g.edge_list();
        let cfg = TrainConfig::default();
        let a = sample_batch(&g, &edges, &cfg, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_batch(&g, &edges, &cfg, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_node_errors_after_capped_rejection() {
        // video 0 adjacent to every other node
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoVideo.index()] = vec![(0, 1)];
        edges[EdgeType::VideoTag.index()] = vec![(0, 0)];
        let g = HeteroGraph::from_edges([2, 1, 0, 0, 0], edges).unwrap();
        let list = g.edge_list();
        let cfg = TrainConfig {
            negatives: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // every draw hits N_k ∪ {k}, so the cap must trip
        let err = sample_batch(&g, &list, &cfg, 4, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn zero_embeddings_give_zero_loss() {
        // matched positive/negative logits cancel exactly
        let (g, table, params) = toy_setup();
        let zero = ModelParams::from_flat(params.dims, 0.5, &vec![0.0; params.param_count()])
            .unwrap();
        let edges = g.edge_list();
        let cfg = TrainConfig {
            negatives: 20,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sample_batch(&g, &edges, &cfg, 1, &mut rng).unwrap();
        let j = loss(&g, &table, &zero, &batch, 7).unwrap();
        assert_eq!(j, 0.0);
        // and the gradient is exactly zero (locally flat)
        let (_, grads) = grad(&g, &table, &zero, &batch, 7).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn loss_sign_semantics() {
        // lowering the positive logit raises J; raising the negative logit raises J
        let base = log_sigmoid(0.3) - log_sigmoid(0.8);
        let worse_pos = log_sigmoid(0.3) - log_sigmoid(0.2);
        let worse_neg = log_sigmoid(0.9) - log_sigmoid(0.8);
        assert!(worse_pos > base);
        assert!(worse_neg > base);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (g, table, params) = toy_setup();
        let edges = g.edge_list();
        let cfg = TrainConfig {
            negatives: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = sample_batch(&g, &edges, &cfg, 4, &mut rng).unwrap();
        let pinned = PinnedBatch::new(&g, &table, &params.dims, &batch, 23);
        let (_, grads) = pinned.loss_and_grad(&params).unwrap();
        let fd = fd_oracle(&pinned, &params, 1e-5).unwrap();
        let err = max_relative_error(&grads.to_flat(), &fd);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_lr_keeps_params_and_curve_flat() {
        let (g, table, _) = toy_setup();
        let dims = toy_dims();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            negatives: 2,
            batch_size: 8,
            ..Default::default()
        };
        let (params, curve) = train(&g, &table, dims, 0.5, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(params, ModelParams::init(dims, 0.5, cfg.seed));
        assert_eq!(curve.len(), 3);
        assert!((curve[0] - curve[1]).abs() < 1e-12);
        assert!((curve[1] - curve[2]).abs() < 1e-12);
    }

    #[test]
    fn training_is_reproducible() {
        let (g, table, _) = toy_setup();
        let dims = toy_dims();
        let cfg = TrainConfig {
            epochs: 2,
            negatives: 2,
            batch_size: 8,
            ..Default::default()
        };
        let (p1, c1) = train(&g, &table, dims, 0.5, &cfg, |_, _, _| Ok(())).unwrap();
        let (p2, c2) = train(&g, &table, dims, 0.5, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn training_reduces_loss_on_toy_graph() {
        let (g, table, _) = toy_setup();
        let dims = toy_dims();
        let cfg = TrainConfig {
            epochs: 12,
            negatives: 4,
            batch_size: 16,
            lr: 5e-3,
            ..Default::default()
        };
        let (_, curve) = train(&g, &table, dims, 0.5, &cfg, |_, _, _| Ok(())).unwrap();
        assert!(
            curve.last().unwrap() < curve.first().unwrap(),
            "loss should decrease: {curve:?}"
        );
    }
}
