//! Hand-written backward pass through the two-layer forward.
//!
//! Gradients flow to the trainable tensors only: features are fixed
//! indicators and lambda_s is a constant, so backpropagation stops at the
//! feature layer. Accumulation is sequential in a fixed order, which keeps
//! full training runs bit-reproducible regardless of forward parallelism.

use ndarray::Array1;

use crate::features::FeatureVector;
use crate::graph::NodeType;
use crate::model::forward::{BatchForward, L1Trace, L2Trace, Plan};
use crate::model::{LayerParams, ModelDims, ModelParams};

/// Gradient tensors, mirroring [`ModelParams`] shape for shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub layer1: LayerParams,
    pub layer2: LayerParams,
}

impl Grads {
    pub fn zeros(dims: &ModelDims) -> Self {
        let zero = |(attn, out, concat, selfw): ([usize; 5], usize, usize, usize)| LayerParams {
            attn: attn.map(Array1::zeros),
            combine: ndarray::Array2::zeros((out, concat)),
            self_loop: ndarray::Array2::zeros((out, selfw)),
        };
        Grads {
            layer1: zero(ModelParams::layer1_shape(dims)),
            layer2: zero(ModelParams::layer2_shape(dims)),
        }
    }

    /// Same canonical layout as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in [&self.layer1, &self.layer2] {
            for a in &layer.attn {
                out.extend(a.iter());
            }
            out.extend(layer.combine.iter());
            out.extend(layer.self_loop.iter());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

fn is_zero(v: &Array1<f64>) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Backward through one layer-1 trace. `dy` is the upstream gradient on the
/// trace's output; nothing flows to the (fixed) features.
fn l1_backward(
    layer: &LayerParams,
    dims: &ModelDims,
    lambda_s: f64,
    feats: &[FeatureVector],
    trace: &L1Trace,
    dy: &Array1<f64>,
    grad: &mut LayerParams,
) {
    let hidden = dims.hidden;
    let fdim = dims.fields.feature_dim();
    let mut dn_pre = vec![0.0; hidden];
    let mut ds_pre = vec![0.0; hidden];
    for r in 0..hidden {
        if trace.n_pre[r] > 0.0 {
            dn_pre[r] = (1.0 - lambda_s) * dy[r];
        }
        if trace.s_pre[r] > 0.0 {
            ds_pre[r] = lambda_s * dy[r];
        }
    }

    // self-loop path: columns of the center's active feature indices
    let active = feats[trace.center as usize].global_indices();
    if !active.is_empty() {
        for (r, &d) in ds_pre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let mut row = grad.self_loop.row_mut(r);
            for &g in &active {
                row[g] += d;
            }
        }
    }

    // combine path: outer product with the aggregate, plus the pull-back du
    let concat = trace.concat.as_slice().unwrap();
    let mut du = vec![0.0; fdim];
    for (r, &d) in dn_pre.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let wrow = layer.combine.row(r);
        let wrow = wrow.as_slice().unwrap();
        let grow = grad.combine.row_mut(r).into_slice().unwrap();
        for c in 0..fdim {
            grow[c] += d * concat[c];
            du[c] += wrow[c] * d;
        }
    }

    // attention paths, per field
    for t in NodeType::ALL {
        let alphas = &trace.alphas[t.index()];
        if alphas.is_empty() {
            continue;
        }
        let off = dims.fields.offset(t);
        let width = dims.fields.width(t);
        let dagg = &du[off..off + width];
        let dal: Vec<f64> = trace
            .nbrs
            .iter()
            .map(|&u| {
                feats[u as usize]
                    .field_slots(t)
                    .iter()
                    .map(|&s| dagg[s as usize])
                    .sum()
            })
            .collect();
        let sdot: f64 = alphas.iter().zip(&dal).map(|(a, d)| a * d).sum();
        let gattn = grad.attn[t.index()].as_slice_mut().unwrap();
        for (i, &u) in trace.nbrs.iter().enumerate() {
            let dlogit = alphas[i] * (dal[i] - sdot);
            if dlogit == 0.0 {
                continue;
            }
            for &s in feats[u as usize].field_slots(t) {
                gattn[s as usize] += dlogit;
            }
        }
    }
}

/// Backward through one layer-2 trace, accumulating into the layer-2 grads
/// and into the upstream gradients of the root's own layer-1 output and the
/// member neighbors' layer-1 outputs.
#[allow(clippy::too_many_arguments)]
fn l2_backward(
    layer: &LayerParams,
    hidden: usize,
    lambda_s: f64,
    trace: &L2Trace,
    y_root: &Array1<f64>,
    y_subs: &[Array1<f64>],
    dh: &Array1<f64>,
    grad: &mut LayerParams,
    dy_root: &mut Array1<f64>,
    dy_subs: &mut [Array1<f64>],
) {
    let mut dn_pre = vec![0.0; hidden];
    let mut ds_pre = vec![0.0; hidden];
    for r in 0..hidden {
        if trace.n_pre[r] > 0.0 {
            dn_pre[r] = (1.0 - lambda_s) * dh[r];
        }
        if trace.s_pre[r] > 0.0 {
            ds_pre[r] = lambda_s * dh[r];
        }
    }

    let yr = y_root.as_slice().unwrap();
    for (r, &d) in ds_pre.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let wrow = layer.self_loop.row(r);
        let wrow = wrow.as_slice().unwrap();
        let grow = grad.self_loop.row_mut(r).into_slice().unwrap();
        let dyr = dy_root.as_slice_mut().unwrap();
        for c in 0..hidden {
            grow[c] += d * yr[c];
            dyr[c] += wrow[c] * d;
        }
    }

    let concat = trace.concat.as_slice().unwrap();
    let mut du = vec![0.0; 5 * hidden];
    for (r, &d) in dn_pre.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let wrow = layer.combine.row(r);
        let wrow = wrow.as_slice().unwrap();
        let grow = grad.combine.row_mut(r).into_slice().unwrap();
        for c in 0..5 * hidden {
            grow[c] += d * concat[c];
            du[c] += wrow[c] * d;
        }
    }

    for t in NodeType::ALL {
        let members = &trace.members[t.index()];
        if members.is_empty() {
            continue;
        }
        let alphas = &trace.alphas[t.index()];
        let dagg = &du[t.index() * hidden..(t.index() + 1) * hidden];
        let dal: Vec<f64> = members
            .iter()
            .map(|&si| {
                let y = y_subs[si as usize].as_slice().unwrap();
                dagg.iter().zip(y).map(|(a, b)| a * b).sum()
            })
            .collect();
        let sdot: f64 = alphas.iter().zip(&dal).map(|(a, d)| a * d).sum();
        let w = layer.attn[t.index()].as_slice().unwrap();
        let gattn = grad.attn[t.index()].as_slice_mut().unwrap();
        for (i, &si) in members.iter().enumerate() {
            let a = alphas[i];
            let dlogit = a * (dal[i] - sdot);
            let y = y_subs[si as usize].as_slice().unwrap();
            let dst = dy_subs[si as usize].as_slice_mut().unwrap();
            for d in 0..hidden {
                dst[d] += a * dagg[d] + dlogit * w[d];
                gattn[d] += dlogit * y[d];
            }
        }
    }
}

/// Full backward pass: `dh[i]` is the loss gradient on the i-th root's final
/// embedding. Returns the parameter gradients of both layers.
pub fn backward(params: &ModelParams, plan: &Plan, bf: &BatchForward, dh: &[Array1<f64>]) -> Grads {
    assert_eq!(dh.len(), plan.roots.len());
    let dims = &params.dims;
    let mut grads = Grads::zeros(dims);
    let y_subs: Vec<Array1<f64>> = bf.l1_subs.iter().map(|t| t.y.clone()).collect();

    let mut dy_roots: Vec<Array1<f64>> = vec![Array1::zeros(dims.hidden); plan.roots.len()];
    let mut dy_subs: Vec<Array1<f64>> = vec![Array1::zeros(dims.hidden); plan.subs.len()];

    for (i, trace) in bf.l2.iter().enumerate() {
        if is_zero(&dh[i]) {
            continue;
        }
        l2_backward(
            &params.layer2,
            dims.hidden,
            params.lambda_s,
            trace,
            &bf.l1_roots[i].y,
            &y_subs,
            &dh[i],
            &mut grads.layer2,
            &mut dy_roots[i],
            &mut dy_subs,
        );
    }
    for (i, trace) in bf.l1_roots.iter().enumerate() {
        if is_zero(&dy_roots[i]) {
            continue;
        }
        l1_backward(
            &params.layer1,
            dims,
            params.lambda_s,
            &bf.feats,
            trace,
            &dy_roots[i],
            &mut grads.layer1,
        );
    }
    for (j, trace) in bf.l1_subs.iter().enumerate() {
        if is_zero(&dy_subs[j]) {
            continue;
        }
        l1_backward(
            &params.layer1,
            dims,
            params.lambda_s,
            &bf.feats,
            trace,
            &dy_subs[j],
            &mut grads.layer1,
        );
    }
    grads
}
