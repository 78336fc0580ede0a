//! Two-layer field-level attention network over the heterogeneous graph.
//!
//! Layer 1 attends, per field, over the feature-block sub-vectors of a node's
//! sampled neighbors; layer 2 attends over the dense layer-1 outputs of those
//! neighbors partitioned by node type. Each layer mixes a neighbor-combine
//! projection with a self-loop projection, `y = lambda_s * y_self +
//! (1 - lambda_s) * y_neighbors`, both ReLU-gated. Final output width is the
//! hidden size (120 by default).

mod backward;
mod forward;

pub use backward::{backward, Grads};
pub use forward::{evaluate, forward, BatchForward, Plan};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FieldDims;
use crate::graph::NodeType;
use crate::util::{mix_seed, softmax};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub fields: FieldDims,
    pub hidden: usize,
    /// One-hop neighbor sampling budget.
    pub sample_l1: usize,
    /// Two-hop (per-neighbor) sampling budget.
    pub sample_l2: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            fields: FieldDims::default(),
            hidden: 120,
            sample_l1: 30,
            sample_l2: 20,
        }
    }
}

impl ModelDims {
    pub fn feature_dim(&self) -> usize {
        self.fields.feature_dim()
    }
}

/// Trainable tensors of one layer: five field attention vectors, the
/// neighbor-combine matrix and the self-loop matrix. No bias terms anywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub attn: [Array1<f64>; 5],
    pub combine: Array2<f64>,
    pub self_loop: Array2<f64>,
}

impl LayerParams {
    fn zeros(attn_widths: [usize; 5], out_dim: usize, concat_width: usize, self_width: usize) -> Self {
        LayerParams {
            attn: attn_widths.map(Array1::zeros),
            combine: Array2::zeros((out_dim, concat_width)),
            self_loop: Array2::zeros((out_dim, self_width)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.attn.iter().map(|a| a.len()).sum::<usize>()
            + self.combine.len()
            + self.self_loop.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub layer1: LayerParams,
    pub layer2: LayerParams,
    /// Self-loop mixing weight, fixed at 0.5 (not trained).
    pub lambda_s: f64,
}

impl ModelParams {
    pub fn layer1_shape(dims: &ModelDims) -> ([usize; 5], usize, usize, usize) {
        let widths = NodeType::ALL.map(|t| dims.fields.width(t));
        (widths, dims.hidden, dims.feature_dim(), dims.feature_dim())
    }

    pub fn layer2_shape(dims: &ModelDims) -> ([usize; 5], usize, usize, usize) {
        let h = dims.hidden;
        ([h; 5], h, 5 * h, h)
    }

    /// Seeded initialization: matrices uniform(-a, a) with
    /// a = sqrt(6 / (fan_in + fan_out)), attention vectors uniform(-0.1, 0.1).
    pub fn init(dims: ModelDims, lambda_s: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x1417]));
        let mut layer = |shape: ([usize; 5], usize, usize, usize)| {
            let (attn_w, out, concat_w, self_w) = shape;
            let mut p = LayerParams::zeros(attn_w, out, concat_w, self_w);
            for a in &mut p.attn {
                for v in a.iter_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
            for m in [&mut p.combine, &mut p.self_loop] {
                let bound = (6.0 / (m.nrows() + m.ncols()) as f64).sqrt();
                for v in m.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
            p
        };
        let layer1 = layer(Self::layer1_shape(&dims));
        let layer2 = layer(Self::layer2_shape(&dims));
        ModelParams {
            dims,
            layer1,
            layer2,
            lambda_s,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer1.param_count() + self.layer2.param_count()
    }

    /// Canonical flat layout: layer 1 then layer 2, each as the five
    /// attention vectors followed by row-major combine and self-loop.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in [&self.layer1, &self.layer2] {
            for a in &layer.attn {
                out.extend(a.iter());
            }
            out.extend(layer.combine.iter());
            out.extend(layer.self_loop.iter());
        }
        out
    }

    pub fn from_flat(dims: ModelDims, lambda_s: f64, flat: &[f64]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[f64]> {
            let s = flat
                .get(pos..pos + n)
                .ok_or_else(|| Error::Shape("flat parameter vector too short".into()))?;
            pos += n;
            Ok(s)
        };
        let mut layer = |shape: ([usize; 5], usize, usize, usize)| -> Result<LayerParams> {
            let (attn_w, out, concat_w, self_w) = shape;
            let mut p = LayerParams::zeros(attn_w, out, concat_w, self_w);
            for a in &mut p.attn {
                let n = a.len();
                a.as_slice_mut().unwrap().copy_from_slice(take(n)?);
            }
            for m in [&mut p.combine, &mut p.self_loop] {
                let n = m.len();
                m.as_slice_mut().unwrap().copy_from_slice(take(n)?);
            }
            Ok(p)
        };
        let layer1 = layer(Self::layer1_shape(&dims))?;
        let layer2 = layer(Self::layer2_shape(&dims))?;
        if pos != flat.len() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {pos}",
                flat.len()
            )));
        }
        Ok(ModelParams {
            dims,
            layer1,
            layer2,
            lambda_s,
        })
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Softmax attention over one field: weights from `weight . input_i`,
/// aggregate is the weighted sum. An empty field yields a zero aggregate and
/// no weights.
pub fn field_attention(
    weight: ArrayView1<f64>,
    inputs: &[ArrayView1<f64>],
) -> (Array1<f64>, Vec<f64>) {
    if inputs.is_empty() {
        return (Array1::zeros(weight.len()), Vec::new());
    }
    let logits: Vec<f64> = inputs.iter().map(|x| weight.dot(x)).collect();
    let alphas = softmax(&logits);
    let mut agg = Array1::zeros(weight.len());
    for (a, x) in alphas.iter().zip(inputs) {
        agg.scaled_add(*a, x);
    }
    (agg, alphas)
}

/// One attention layer over dense inputs: per-field attention aggregates,
/// neighbor-combine and self-loop projections, ReLU, then the lambda_s mix.
pub fn layer_forward(
    layer: &LayerParams,
    self_input: ArrayView1<f64>,
    neighbor_inputs: &[Vec<Array1<f64>>; 5],
    lambda_s: f64,
) -> Result<Array1<f64>> {
    let concat_width: usize = layer.attn.iter().map(|a| a.len()).sum();
    let mut concat = Array1::zeros(concat_width);
    let mut off = 0usize;
    for t in NodeType::ALL {
        let w = &layer.attn[t.index()];
        for (i, x) in neighbor_inputs[t.index()].iter().enumerate() {
            if x.len() != w.len() {
                return Err(Error::Shape(format!(
                    "{} field: neighbor {i} has width {}, expected {}",
                    t.name(),
                    x.len(),
                    w.len()
                )));
            }
        }
        let views: Vec<ArrayView1<f64>> =
            neighbor_inputs[t.index()].iter().map(|x| x.view()).collect();
        let (agg, _) = field_attention(w.view(), &views);
        concat.slice_mut(ndarray::s![off..off + w.len()]).assign(&agg);
        off += w.len();
    }
    if layer.combine.ncols() != concat_width {
        return Err(Error::Shape(format!(
            "neighbor-combine expects width {}, got {concat_width}",
            layer.combine.ncols()
        )));
    }
    if layer.self_loop.ncols() != self_input.len() {
        return Err(Error::Shape(format!(
            "self-loop expects width {}, got {}",
            layer.self_loop.ncols(),
            self_input.len()
        )));
    }
    let n_pre = layer.combine.dot(&concat);
    let s_pre = layer.self_loop.dot(&self_input);
    Ok(lambda_s * s_pre.mapv(relu) + (1.0 - lambda_s) * n_pre.mapv(relu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn attention_equal_logits_split_evenly() {
        let w = array![1.0, 0.0];
        let a = array![0.5, 1.0];
        let b = array![0.5, -1.0];
        let (agg, alphas) = field_attention(w.view(), &[a.view(), b.view()]);
        assert!((alphas[0] - 0.5).abs() < 1e-12);
        assert!((alphas[1] - 0.5).abs() < 1e-12);
        assert!((agg[0] - 0.5).abs() < 1e-12);
        assert!((agg[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn attention_single_neighbor_passes_through() {
        let w = array![0.3, -0.2, 0.1];
        let x = array![1.0, 2.0, 3.0];
        let (agg, alphas) = field_attention(w.view(), &[x.view()]);
        assert_eq!(alphas, vec![1.0]);
        assert_eq!(agg, x);
    }

    #[test]
    fn attention_closed_form_quarter_three_quarters() {
        // logits (0, ln 3) => alphas (0.25, 0.75)
        let w = array![1.0];
        let a = array![0.0];
        let b = array![3f64.ln()];
        let (_, alphas) = field_attention(w.view(), &[a.view(), b.view()]);
        assert!((alphas[0] - 0.25).abs() < 1e-12);
        assert!((alphas[1] - 0.75).abs() < 1e-12);
        assert!((alphas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_empty_field_zero_aggregate() {
        let w = array![1.0, 2.0];
        let (agg, alphas) = field_attention(w.view(), &[]);
        assert!(alphas.is_empty());
        assert_eq!(agg, array![0.0, 0.0]);
    }

    fn tiny_layer() -> LayerParams {
        // all field widths 2, hidden 2, self width 10 (5 fields x 2)
        let mut p = LayerParams::zeros([2; 5], 2, 10, 10);
        p.combine.fill(0.1);
        p.self_loop.fill(0.2);
        for a in &mut p.attn {
            a.fill(0.5);
        }
        p
    }

    #[test]
    fn lambda_one_ignores_neighbors() {
        let layer = tiny_layer();
        let self_in = Array1::from_elem(10, 1.0);
        let with_nbrs: [Vec<Array1<f64>>; 5] =
            std::array::from_fn(|_| vec![array![5.0, -3.0]]);
        let none: [Vec<Array1<f64>>; 5] = Default::default();
        let a = layer_forward(&layer, self_in.view(), &with_nbrs, 1.0).unwrap();
        let b = layer_forward(&layer, self_in.view(), &none, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_fields_empty_leaves_self_path() {
        let layer = tiny_layer();
        let self_in = Array1::from_elem(10, 1.0);
        let none: [Vec<Array1<f64>>; 5] = Default::default();
        let y = layer_forward(&layer, self_in.view(), &none, 0.5).unwrap();
        // neighbor term is ReLU(W_n . 0) = 0, so y = 0.5 * ReLU(W_s . self)
        let expect = 0.5 * (0.2 * 10.0);
        for v in y.iter() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn convexity_fixed_point() {
        // with lambda 0.5 and y_self == y_nbrs, output equals either branch
        let mut layer = tiny_layer();
        layer.combine.fill(0.0);
        layer.self_loop.fill(0.0);
        // identical zero branches -> zero output
        let self_in = Array1::from_elem(10, 1.0);
        let none: [Vec<Array1<f64>>; 5] = Default::default();
        let y = layer_forward(&layer, self_in.view(), &none, 0.5).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_field() {
        let layer = tiny_layer();
        let self_in = Array1::from_elem(10, 1.0);
        let mut nbrs: [Vec<Array1<f64>>; 5] = Default::default();
        nbrs[NodeType::Media.index()] = vec![array![1.0, 2.0, 3.0]];
        let err = layer_forward(&layer, self_in.view(), &nbrs, 0.5).unwrap_err();
        assert!(err.to_string().contains("media"));
    }

    #[test]
    fn flat_round_trip() {
        let dims = ModelDims {
            fields: FieldDims([2, 2, 2, 2, 2]),
            hidden: 4,
            sample_l1: 3,
            sample_l2: 2,
        };
        let p = ModelParams::init(dims, 0.5, 9);
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.param_count());
        let q = ModelParams::from_flat(dims, 0.5, &flat).unwrap();
        assert_eq!(p, q);
        assert!(ModelParams::from_flat(dims, 0.5, &flat[..flat.len() - 1]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = ModelDims {
            fields: FieldDims([2, 2, 2, 2, 2]),
            hidden: 4,
            sample_l1: 3,
            sample_l2: 2,
        };
        let a = ModelParams::init(dims, 0.5, 1);
        let b = ModelParams::init(dims, 0.5, 1);
        let c = ModelParams::init(dims, 0.5, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for v in &a.layer1.attn[0] {
            assert!(v.abs() <= 0.1);
        }
        let bound = (6.0 / (4 + 10) as f64).sqrt();
        for v in a.layer1.combine.iter() {
            assert!(v.abs() <= bound);
        }
    }
}
