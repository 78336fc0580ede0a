//! Sampled two-layer forward pass.
//!
//! A `Plan` pins every neighbor sample for a set of root nodes, making the
//! network output a deterministic function of the parameters. Layer-1
//! outputs of shared neighbors are computed once per plan, so batched
//! evaluation matches per-node forwards exactly while avoiding repeated work.

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureVector, ProjectionTable};
use crate::graph::{HeteroGraph, NodeRef, NodeType};
use crate::model::{relu, LayerParams, ModelDims, ModelParams};
use crate::util::{mix_seed, softmax};

const ROOT_SAMPLE_TAG: u64 = 0x01;
const SUB_SAMPLE_TAG: u64 = 0x02;

/// Pinned neighbor samples for a set of root nodes.
#[derive(Clone, Debug)]
pub struct Plan {
    pub seed: u64,
    /// Distinct roots, ascending.
    pub roots: Vec<NodeRef>,
    /// Per root, its sampled one-hop neighbors (ascending).
    pub s1: Vec<Vec<NodeRef>>,
    /// Distinct union of all `s1` lists, ascending.
    pub subs: Vec<NodeRef>,
    /// Per sub, its own sampled neighbors (ascending).
    pub s2: Vec<Vec<NodeRef>>,
    /// Distinct union of roots, subs and all `s2` members: nodes whose
    /// features are needed.
    pub universe: Vec<NodeRef>,
    // index remaps (positions into `universe` / `subs`)
    roots_u: Vec<u32>,
    subs_u: Vec<u32>,
    s1_sub: Vec<Vec<u32>>,
    s2_u: Vec<Vec<u32>>,
}

impl Plan {
    pub fn build(graph: &HeteroGraph, dims: &ModelDims, roots: &[NodeRef], seed: u64) -> Plan {
        let mut roots: Vec<NodeRef> = roots.to_vec();
        roots.sort_unstable();
        roots.dedup();

        let root_seed = mix_seed(seed, &[ROOT_SAMPLE_TAG]);
        let sub_seed = mix_seed(seed, &[SUB_SAMPLE_TAG]);
        let s1: Vec<Vec<NodeRef>> = roots
            .par_iter()
            .map(|&r| graph.sample_neighbors(r, dims.sample_l1, root_seed))
            .collect();

        let mut subs: Vec<NodeRef> = s1.iter().flatten().copied().collect();
        subs.sort_unstable();
        subs.dedup();
        let s2: Vec<Vec<NodeRef>> = subs
            .par_iter()
            .map(|&n| graph.sample_neighbors(n, dims.sample_l2, sub_seed))
            .collect();

        let mut universe: Vec<NodeRef> = roots
            .iter()
            .chain(subs.iter())
            .chain(s2.iter().flatten())
            .copied()
            .collect();
        universe.sort_unstable();
        universe.dedup();

        let uidx = |n: NodeRef| universe.binary_search(&n).expect("node in universe") as u32;
        let roots_u = roots.iter().map(|&r| uidx(r)).collect();
        let subs_u = subs.iter().map(|&n| uidx(n)).collect();
        let s1_sub = s1
            .iter()
            .map(|list| {
                list.iter()
                    .map(|n| subs.binary_search(n).expect("sampled neighbor in subs") as u32)
                    .collect()
            })
            .collect();
        let s2_u = s2
            .iter()
            .map(|list| list.iter().map(|&n| uidx(n)).collect())
            .collect();

        Plan {
            seed,
            roots,
            s1,
            subs,
            s2,
            universe,
            roots_u,
            subs_u,
            s1_sub,
            s2_u,
        }
    }

    pub fn root_index(&self, node: NodeRef) -> Option<usize> {
        self.roots.binary_search(&node).ok()
    }
}

/// One layer-1 evaluation: attention over the feature blocks of the sampled
/// neighbors plus the self-loop on the center's own feature.
#[derive(Clone, Debug)]
pub(crate) struct L1Trace {
    /// Universe index of the center.
    pub center: u32,
    /// Universe indices of the sampled neighbors, ascending node order.
    pub nbrs: Vec<u32>,
    pub alphas: [Vec<f64>; 5],
    /// Concatenated per-field aggregates (feature_dim wide).
    pub concat: Array1<f64>,
    pub n_pre: Array1<f64>,
    pub s_pre: Array1<f64>,
    pub y: Array1<f64>,
}

/// One layer-2 evaluation for a root: attention over the layer-1 outputs of
/// its sampled neighbors, partitioned by node type.
#[derive(Clone, Debug)]
pub(crate) struct L2Trace {
    /// Per field, positions into `subs` of the member neighbors.
    pub members: [Vec<u32>; 5],
    pub alphas: [Vec<f64>; 5],
    /// Concatenated per-field aggregates (5 * hidden wide).
    pub concat: Array1<f64>,
    pub n_pre: Array1<f64>,
    pub s_pre: Array1<f64>,
}

/// Forward evaluation of a plan, with all intermediates retained for the
/// backward pass.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub(crate) feats: Vec<FeatureVector>,
    pub(crate) l1_subs: Vec<L1Trace>,
    pub(crate) l1_roots: Vec<L1Trace>,
    pub(crate) l2: Vec<L2Trace>,
    /// Final aggregated embedding per plan root.
    pub h: Vec<Array1<f64>>,
}

fn l1_eval(
    layer: &LayerParams,
    dims: &ModelDims,
    lambda_s: f64,
    feats: &[FeatureVector],
    center: u32,
    nbrs: Vec<u32>,
) -> L1Trace {
    let fdims = dims.fields;
    let mut concat = Array1::<f64>::zeros(fdims.feature_dim());
    let mut alphas: [Vec<f64>; 5] = Default::default();
    if !nbrs.is_empty() {
        let cslice = concat.as_slice_mut().unwrap();
        for t in NodeType::ALL {
            let w = layer.attn[t.index()].as_slice().unwrap();
            let logits: Vec<f64> = nbrs
                .iter()
                .map(|&u| {
                    feats[u as usize]
                        .field_slots(t)
                        .iter()
                        .map(|&s| w[s as usize])
                        .sum()
                })
                .collect();
            let al = softmax(&logits);
            let off = fdims.offset(t);
            for (i, &u) in nbrs.iter().enumerate() {
                let a = al[i];
                for &s in feats[u as usize].field_slots(t) {
                    cslice[off + s as usize] += a;
                }
            }
            alphas[t.index()] = al;
        }
    }
    let n_pre = layer.combine.dot(&concat);
    let mut s_pre = Array1::<f64>::zeros(dims.hidden);
    {
        let active = feats[center as usize].global_indices();
        for (r, out) in s_pre.iter_mut().enumerate() {
            let row = layer.self_loop.row(r);
            *out = active.iter().map(|&g| row[g]).sum();
        }
    }
    let y = lambda_s * s_pre.mapv(relu) + (1.0 - lambda_s) * n_pre.mapv(relu);
    L1Trace {
        center,
        nbrs,
        alphas,
        concat,
        n_pre,
        s_pre,
        y,
    }
}

fn l2_eval(
    layer: &LayerParams,
    hidden: usize,
    lambda_s: f64,
    plan: &Plan,
    root_pos: usize,
    y_subs: &[Array1<f64>],
    y_root: &Array1<f64>,
) -> (L2Trace, Array1<f64>) {
    let mut members: [Vec<u32>; 5] = Default::default();
    for (node, &sub) in plan.s1[root_pos].iter().zip(&plan.s1_sub[root_pos]) {
        members[node.node_type.index()].push(sub);
    }
    let mut alphas: [Vec<f64>; 5] = Default::default();
    let mut concat = Array1::<f64>::zeros(5 * hidden);
    for t in NodeType::ALL {
        let list = &members[t.index()];
        if list.is_empty() {
            continue; // empty partition contributes a zero aggregate
        }
        let w = &layer.attn[t.index()];
        let logits: Vec<f64> = list.iter().map(|&si| w.dot(&y_subs[si as usize])).collect();
        let al = softmax(&logits);
        let off = t.index() * hidden;
        let cslice = concat.as_slice_mut().unwrap();
        for (i, &si) in list.iter().enumerate() {
            let y = y_subs[si as usize].as_slice().unwrap();
            let a = al[i];
            for (d, &v) in y.iter().enumerate() {
                cslice[off + d] += a * v;
            }
        }
        alphas[t.index()] = al;
    }
    let n_pre = layer.combine.dot(&concat);
    let s_pre = layer.self_loop.dot(y_root);
    let h = lambda_s * s_pre.mapv(relu) + (1.0 - lambda_s) * n_pre.mapv(relu);
    (
        L2Trace {
            members,
            alphas,
            concat,
            n_pre,
            s_pre,
        },
        h,
    )
}

/// Runs the full two-layer forward for every root in the plan.
pub fn evaluate(
    graph: &HeteroGraph,
    table: &ProjectionTable,
    params: &ModelParams,
    plan: &Plan,
) -> Result<BatchForward> {
    if table.dims() != params.dims.fields {
        return Err(Error::Shape(format!(
            "projection table dims {:?} differ from model dims {:?}",
            table.dims(),
            params.dims.fields
        )));
    }
    let feats: Vec<FeatureVector> = plan
        .universe
        .par_iter()
        .map(|&n| table.feature(graph, n))
        .collect();

    let l1_subs: Vec<L1Trace> = plan
        .subs_u
        .par_iter()
        .zip(&plan.s2_u)
        .map(|(&center, nbrs)| {
            l1_eval(
                &params.layer1,
                &params.dims,
                params.lambda_s,
                &feats,
                center,
                nbrs.clone(),
            )
        })
        .collect();
    let y_subs: Vec<Array1<f64>> = l1_subs.iter().map(|t| t.y.clone()).collect();

    let l1_roots: Vec<L1Trace> = plan
        .roots_u
        .par_iter()
        .enumerate()
        .map(|(i, &center)| {
            let nbrs: Vec<u32> = plan.s1_sub[i]
                .iter()
                .map(|&si| plan.subs_u[si as usize])
                .collect();
            l1_eval(
                &params.layer1,
                &params.dims,
                params.lambda_s,
                &feats,
                center,
                nbrs,
            )
        })
        .collect();

    let pairs: Vec<(L2Trace, Array1<f64>)> = (0..plan.roots.len())
        .into_par_iter()
        .map(|i| {
            l2_eval(
                &params.layer2,
                params.dims.hidden,
                params.lambda_s,
                plan,
                i,
                &y_subs,
                &l1_roots[i].y,
            )
        })
        .collect();
    let (l2, h): (Vec<L2Trace>, Vec<Array1<f64>>) = pairs.into_iter().unzip();

    Ok(BatchForward {
        feats,
        l1_subs,
        l1_roots,
        l2,
        h,
    })
}

/// Two-layer forward for a single node; deterministic for a fixed seed and
/// identical to the node's row in any batched evaluation with the same seed.
pub fn forward(
    graph: &HeteroGraph,
    table: &ProjectionTable,
    params: &ModelParams,
    node: NodeRef,
    seed: u64,
) -> Result<Array1<f64>> {
    if !graph.contains(node) {
        return Err(Error::Input(format!("node {node} not in graph")));
    }
    let plan = Plan::build(graph, &params.dims, &[node], seed);
    let bf = evaluate(graph, table, params, &plan)?;
    Ok(bf.h.into_iter().next().expect("single root"))
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
            sample_l1: 3,
            sample_l2: 2,
        }
    }

    fn toy_graph() -> HeteroGraph {
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoVideo.index()] = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        edges[EdgeType::VideoTag.index()] = vec![(0, 0), (1, 0), (2, 1), (3, 1)];
        edges[EdgeType::VideoMedia.index()] = vec![(0, 0), (1, 0), (2, 0), (3, 0)];
        edges[EdgeType::VideoWord.index()] = vec![(0, 0), (1, 1), (2, 0)];
        edges[EdgeType::TagTag.index()] = vec![(0, 1)];
        HeteroGraph::from_edges([4, 2, 1, 0, 2], edges).unwrap()
    }

    #[test]
    fn output_width_matches_hidden() {
        let g = toy_graph();
        let dims = toy_dims();
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 3);
        let h = forward(&g, &table, &params, NodeRef::new(NodeType::Video, 0), 11).unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|v| v.is_finite()));
        // ReLU mix keeps every output component non-negative
        assert!(h.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn forward_deterministic_for_seed() {
        let g = toy_graph();
        let dims = toy_dims();
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 3);
        let n = NodeRef::new(NodeType::Video, 1);
        let a = forward(&g, &table, &params, n, 11).unwrap();
        let b = forward(&g, &table, &params, n, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batched_forward_matches_single_node() {
        let g = toy_graph();
        let dims = toy_dims();
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 5);
        let nodes = [
            NodeRef::new(NodeType::Video, 0),
            NodeRef::new(NodeType::Tag, 1),
            NodeRef::new(NodeType::Video, 3),
        ];
        let plan = Plan::build(&g, &dims, &nodes, 42);
        let bf = evaluate(&g, &table, &params, &plan).unwrap();
        for &n in &nodes {
            let single = forward(&g, &table, &params, n, 42).unwrap();
            let i = plan.root_index(n).unwrap();
            assert_eq!(bf.h[i], single);
        }
    }

    #[test]
    fn single_isolated_node_uses_self_path_only() {
        let g = HeteroGraph::from_edges([1, 0, 0, 0, 0], Default::default()).unwrap();
        let dims = toy_dims();
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 7);
        let node = NodeRef::new(NodeType::Video, 0);
        let h = forward(&g, &table, &params, node, 1).unwrap();

        // two-layer pure self-loop composition of an all-zero feature
        let feat = Array1::zeros(dims.feature_dim());
        let y1 = 0.5 * params.layer1.self_loop.dot(&feat).mapv(relu);
        let expect = 0.5 * params.layer2.self_loop.dot(&y1).mapv(relu);
        assert_eq!(h, expect);
    }

    #[test]
    fn missing_node_is_error() {
        let g = toy_graph();
        let dims = toy_dims();
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 7);
        assert!(forward(&g, &table, &params, NodeRef::new(NodeType::Media, 9), 1).is_err());
    }
}
