//! Dense feed-forward stacks: affine layers, activations, exact backprop.
//!
//! An [`Mlp`] owns only its shape; parameters live in a flat slice supplied by
//! the caller (see [`super::param::ParamVector`]). Both a per-sample path and
//! an ndarray-batched path are provided; the batched path is what the training
//! loops use.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::param::LayoutEntry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    // log(1 + e^z), overflow-safe
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One dense layer: `out_dim x in_dim` weights, `out_dim` biases, activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape(format!(
                "layer dims must be >= 1, got {in_dim}x{out_dim}"
            )));
        }
        Ok(Self { in_dim, out_dim, activation })
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LayerSpec>,
}

/// Cached forward pass (per-sample path): input and each layer's output.
pub struct MlpCache {
    activations: Vec<Vec<f64>>, // activations[0] = input, activations[l+1] = layer l output
}

/// Cached batched forward pass.
pub struct MlpBatchCache {
    activations: Vec<Array2<f64>>,
}

impl MlpBatchCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }
}

impl Mlp {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(format!(
                    "layer output dim {} does not feed layer input dim {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Stack from a list of output sizes with a shared hidden activation and a
    /// final activation, e.g. `chain(108, &[64, 1], Relu, Identity)`.
    pub fn chain(
        input_dim: usize,
        dims: &[usize],
        hidden: Activation,
        last: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = input_dim;
        for (i, &d) in dims.iter().enumerate() {
            let act = if i + 1 == dims.len() { last } else { hidden };
            layers.push(LayerSpec::new(prev, d, act)?);
            prev = d;
        }
        Mlp::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Layout entries `{prefix}.l{i}.w` / `{prefix}.l{i}.b` in flattening order.
    pub fn layout_entries(&self, prefix: &str) -> Vec<LayoutEntry> {
        let mut entries = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            entries.push(LayoutEntry::new(
                format!("{prefix}.l{i}.w"),
                vec![l.out_dim, l.in_dim],
            ));
            entries.push(LayoutEntry::new(format!("{prefix}.l{i}.b"), vec![l.out_dim]));
        }
        entries
    }

    /// He-scaled Gaussian weights, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        for l in &self.layers {
            let dist = Normal::new(0.0, (2.0 / l.in_dim as f64).sqrt()).unwrap();
            for _ in 0..l.out_dim * l.in_dim {
                out.push(dist.sample(rng));
            }
            out.extend(std::iter::repeat(0.0).take(l.out_dim));
        }
    }

    fn check_params_and_input(&self, params: &[f64], x_len: usize) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} params, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if x_len != self.input_dim() {
            return Err(Error::shape(format!(
                "expected input dim {}, got {}",
                self.input_dim(),
                x_len
            )));
        }
        Ok(())
    }

    /// Per-sample forward pass.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward_cached(params, x)?
            .activations
            .pop()
            .expect("cache holds the input"))
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64]) -> Result<MlpCache> {
        self.check_params_and_input(params, x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for l in &self.layers {
            let (w, rest) = params[offset..].split_at(l.out_dim * l.in_dim);
            let b = &rest[..l.out_dim];
            offset += l.param_count();
            let input = activations.last().expect("non-empty");
            let mut out = Vec::with_capacity(l.out_dim);
            for o in 0..l.out_dim {
                let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                let z: f64 =
                    row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>() + b[o];
                out.push(l.activation.apply(z));
            }
            activations.push(out);
        }
        Ok(MlpCache { activations })
    }

    /// Per-sample backward pass. `upstream` is dL/d(output). Gradients are
    /// accumulated into `grad` (same flattening as `params`); returns dL/dx.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream grad dim {} != output dim {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grad.len() != self.param_count() {
            return Err(Error::shape("gradient buffer length mismatch".to_string()));
        }
        let mut delta = upstream.to_vec();
        let mut offset = self.param_count();
        for (li, l) in self.layers.iter().enumerate().rev() {
            offset -= l.param_count();
            let w = &params[offset..offset + l.out_dim * l.in_dim];
            let (gw, gb) = grad[offset..offset + l.param_count()]
                .split_at_mut(l.out_dim * l.in_dim);
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            // through the activation
            for (d, a) in delta.iter_mut().zip(output) {
                *d *= l.activation.derivative_from_output(*a);
            }
            let mut dx = vec![0.0; l.in_dim];
            for o in 0..l.out_dim {
                let d = delta[o];
                gb[o] += d;
                let wrow = &w[o * l.in_dim..(o + 1) * l.in_dim];
                let grow = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                for i in 0..l.in_dim {
                    grow[i] += d * input[i];
                    dx[i] += d * wrow[i];
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Batched forward: `x` is (batch, in_dim).
    pub fn forward_batch(&self, params: &[f64], x: ArrayView2<f64>) -> Result<MlpBatchCache> {
        self.check_params_and_input(params, x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        let mut offset = 0;
        for l in &self.layers {
            let w = ArrayView2::from_shape(
                (l.out_dim, l.in_dim),
                &params[offset..offset + l.out_dim * l.in_dim],
            )
            .expect("layer span");
            let b = &params[offset + l.out_dim * l.in_dim..offset + l.param_count()];
            offset += l.param_count();
            let input = activations.last().expect("non-empty");
            let mut z = input.dot(&w.t());
            let bias = Array1::from_vec(b.to_vec());
            z += &bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            activations.push(z);
        }
        Ok(MlpBatchCache { activations })
    }

    /// Batched backward. `upstream` is (batch, out_dim); gradients are summed
    /// over the batch (callers scale by 1/batch); returns dL/dx (batch, in_dim).
    pub fn backward_batch(
        &self,
        params: &[f64],
        cache: &MlpBatchCache,
        upstream: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<Array2<f64>> {
        if upstream.ncols() != self.output_dim() {
            return Err(Error::shape("batched upstream grad dim mismatch".to_string()));
        }
        let mut delta = upstream.to_owned();
        let mut offset = self.param_count();
        for (li, l) in self.layers.iter().enumerate().rev() {
            offset -= l.param_count();
            let w = ArrayView2::from_shape(
                (l.out_dim, l.in_dim),
                &params[offset..offset + l.out_dim * l.in_dim],
            )
            .expect("layer span");
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            delta.zip_mut_with(output, |d, a| {
                *d *= l.activation.derivative_from_output(*a)
            });
            let dw = delta.t().dot(input);
            let db = delta.sum_axis(Axis(0));
            let (gw, gb) = grad[offset..offset + l.param_count()]
                .split_at_mut(l.out_dim * l.in_dim);
            for (g, d) in gw.iter_mut().zip(dw.iter()) {
                *g += d;
            }
            for (g, d) in gb.iter_mut().zip(db.iter()) {
                *g += d;
            }
            delta = delta.dot(&w);
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    fn two_layer() -> Mlp {
        Mlp::chain(3, &[4, 2], Activation::Relu, Activation::Sigmoid).unwrap()
    }

    #[test]
    fn zero_weights_sigmoid_gives_half() {
        let net = Mlp::chain(3, &[2], Activation::Relu, Activation::Sigmoid).unwrap();
        let params = vec![0.0; net.param_count()];
        let out = net.forward(&params, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_net_is_identity() {
        let net = Mlp::chain(3, &[3], Activation::Relu, Activation::Identity).unwrap();
        let mut params = vec![0.0; net.param_count()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let x = [0.7, -0.2, 1.5];
        assert_eq!(net.forward(&params, &x).unwrap(), x.to_vec());
    }

    // Independent oracle: explicit nested loops, no shared code with forward().
    fn oracle_forward(net: &Mlp, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in &net.layers {
            let mut next = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut z = params[off + l.out_dim * l.in_dim + o];
                for i in 0..l.in_dim {
                    z += params[off + o * l.in_dim + i] * cur[i];
                }
                next[o] = match l.activation {
                    Activation::Identity => z,
                    Activation::Relu => z.max(0.0),
                    Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                };
            }
            off += l.param_count();
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_hand_rolled_oracle() {
        let net = two_layer();
        let mut rng = crate::rng::rng(42);
        let mut params = Vec::new();
        net.init_params(&mut rng, &mut params);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = net.forward(&params, &x).unwrap();
        let want = oracle_forward(&net, &params, &x);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = two_layer();
        let mut rng = crate::rng::rng(1);
        let mut params = Vec::new();
        net.init_params(&mut rng, &mut params);
        let x = [0.1, 0.2, 0.3];
        let a = net.forward(&params, &x).unwrap();
        let b = net.forward(&params, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn forward_rejects_bad_input_dim() {
        let net = two_layer();
        let params = vec![0.0; net.param_count()];
        assert!(net.forward(&params, &[1.0]).is_err());
        assert!(net.forward(&[0.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = two_layer();
        let mut rng = crate::rng::rng(3);
        let mut params = Vec::new();
        net.init_params(&mut rng, &mut params);
        let cache = net.forward_cached(&params, &[0.5, -0.5, 1.0]).unwrap();
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&params, &cache, &[0.0, 0.0], &mut grad).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sigmoid_unit_bce_grad_is_prob_minus_label() {
        // single sigmoid unit, BCE at label y: dL/dz = sigma(z) - y
        let net = Mlp::chain(2, &[1], Activation::Relu, Activation::Identity).unwrap();
        let params = vec![0.4, -0.3, 0.1];
        let x = [1.0, 2.0];
        let cache = net.forward_cached(&params, &x).unwrap();
        let z = net.forward(&params, &x).unwrap()[0];
        let p = sigmoid(z);
        let y = 1.0;
        let mut grad = vec![0.0; 3];
        // upstream on the logit is exactly p - y
        net.backward(&params, &cache, &[p - y], &mut grad).unwrap();
        assert_abs_diff_eq!(grad[0], (p - y) * x[0], epsilon = 1e-15);
        assert_abs_diff_eq!(grad[1], (p - y) * x[1], epsilon = 1e-15);
        assert_abs_diff_eq!(grad[2], p - y, epsilon = 1e-15);
    }

    #[test]
    fn batch_matches_per_sample() {
        let net = two_layer();
        let mut rng = crate::rng::rng(9);
        let mut params = Vec::new();
        net.init_params(&mut rng, &mut params);
        let batch: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let flat: Vec<f64> = batch.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((5, 3), flat).unwrap();
        let cache = net.forward_batch(&params, x.view()).unwrap();
        for (row, sample) in cache.output().outer_iter().zip(&batch) {
            let want = net.forward(&params, sample).unwrap();
            for (g, w) in row.iter().zip(&want) {
                assert_abs_diff_eq!(g, w, epsilon = 1e-12);
            }
        }
        // batched grad == sum of per-sample grads
        let upstream = Array2::from_elem((5, 2), 1.0);
        let mut grad_b = vec![0.0; net.param_count()];
        net.backward_batch(&params, &cache, upstream.view(), &mut grad_b)
            .unwrap();
        let mut grad_s = vec![0.0; net.param_count()];
        for sample in &batch {
            let c = net.forward_cached(&params, sample).unwrap();
            net.backward(&params, &c, &[1.0, 1.0], &mut grad_s).unwrap();
        }
        for (a, b) in grad_b.iter().zip(&grad_s) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}
