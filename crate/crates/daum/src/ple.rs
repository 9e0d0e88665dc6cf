//! Progressive layered extraction multi-task network.
//!
//! Shared experts plus per-task experts, mixed per task by a softmax gate over
//! the raw input, followed by a per-task tower that emits one sigmoid
//! probability per objective. Single extraction level; MLP experts.
//!
//! The parameter partition distinguishes `backbone.*` entries (experts and
//! gates) from `head.*` entries (towers); the distinction is what the SWAG
//! scope flag keys on.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::engine::{sigmoid, Activation, Layout, Mlp, MlpBatchCache, ParamVector};
use crate::error::{Error, Result};

/// Task order used throughout the crate.
pub const TASK_NAMES: [&str; 4] = ["c2s_click", "online", "add_to_cart", "deal"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PleConfig {
    pub n_tasks: usize,
    pub n_shared_experts: usize,
    pub experts_per_task: usize,
    pub input_dim: usize,
    /// Expert layer widths; the last entry is the shared expert output width.
    pub expert_dims: Vec<usize>,
    /// Hidden widths of the gate network; the softmax output layer over
    /// experts is appended automatically.
    pub gate_dims: Vec<usize>,
    /// Tower layer widths; the last entry must be 1 (the task logit).
    pub tower_dims: Vec<usize>,
}

impl Default for PleConfig {
    fn default() -> Self {
        Self {
            n_tasks: 4,
            n_shared_experts: 3,
            experts_per_task: 1,
            input_dim: 8,
            expert_dims: vec![64],
            gate_dims: vec![],
            tower_dims: vec![32, 1],
        }
    }
}

impl PleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0
            || self.n_shared_experts == 0
            || self.experts_per_task == 0
            || self.input_dim == 0
        {
            return Err(Error::config("PLE counts and input_dim must be >= 1".to_string()));
        }
        if self.expert_dims.is_empty() || self.tower_dims.is_empty() {
            return Err(Error::config("expert_dims and tower_dims must be non-empty".to_string()));
        }
        if *self.tower_dims.last().unwrap() != 1 {
            return Err(Error::config("tower must end in a single logit unit".to_string()));
        }
        if self.expert_dims.contains(&0) || self.gate_dims.contains(&0) || self.tower_dims.contains(&0)
        {
            return Err(Error::config("layer widths must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn expert_width(&self) -> usize {
        *self.expert_dims.last().unwrap()
    }

    /// Experts visible to one task's gate: all shared plus its own.
    pub fn experts_per_gate(&self) -> usize {
        self.n_shared_experts + self.experts_per_task
    }
}

/// The PLE model: config, component shapes, and flattened parameters.
#[derive(Debug, Clone)]
pub struct PleNetwork {
    pub config: PleConfig,
    pub params: ParamVector,
    expert: Mlp,
    gate: Mlp,
    tower: Mlp,
    shared_offsets: Vec<usize>,
    task_expert_offsets: Vec<Vec<usize>>,
    gate_offsets: Vec<usize>,
    tower_offsets: Vec<usize>,
}

/// Forward outputs for one instance.
#[derive(Debug, Clone)]
pub struct PleOutput {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    /// Per-task gate weights over {shared experts, own experts}.
    pub gates: Vec<Vec<f64>>,
}

/// Cached batched forward pass, consumed by [`PleNetwork::backward_batch`].
pub struct PleBatchCache {
    expert_caches: Vec<MlpBatchCache>, // shared first, then task experts in task order
    gate_caches: Vec<MlpBatchCache>,
    gate_weights: Vec<Array2<f64>>,
    tower_caches: Vec<MlpBatchCache>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl PleNetwork {
    /// Build the component shapes and a zero parameter vector.
    pub fn zeros(config: PleConfig) -> Result<Self> {
        config.validate()?;
        let expert = Mlp::chain(
            config.input_dim,
            &config.expert_dims,
            Activation::Relu,
            Activation::Relu,
        )?;
        let mut gate_dims = config.gate_dims.clone();
        gate_dims.push(config.experts_per_gate());
        let gate = Mlp::chain(config.input_dim, &gate_dims, Activation::Relu, Activation::Identity)?;
        let tower = Mlp::chain(
            config.expert_width(),
            &config.tower_dims,
            Activation::Relu,
            Activation::Identity,
        )?;

        let mut entries = Vec::new();
        let mut offset = 0;
        let push = |mlp: &Mlp, prefix: String, entries: &mut Vec<_>, offset: &mut usize| {
            let start = *offset;
            entries.extend(mlp.layout_entries(&prefix));
            *offset += mlp.param_count();
            start
        };

        let mut shared_offsets = Vec::new();
        for i in 0..config.n_shared_experts {
            shared_offsets.push(push(&expert, format!("backbone.shared{i}"), &mut entries, &mut offset));
        }
        let mut task_expert_offsets = Vec::new();
        for t in 0..config.n_tasks {
            let mut offs = Vec::new();
            for j in 0..config.experts_per_task {
                offs.push(push(
                    &expert,
                    format!("backbone.task{t}_expert{j}"),
                    &mut entries,
                    &mut offset,
                ));
            }
            task_expert_offsets.push(offs);
        }
        let mut gate_offsets = Vec::new();
        for t in 0..config.n_tasks {
            gate_offsets.push(push(&gate, format!("backbone.gate{t}"), &mut entries, &mut offset));
        }
        let mut tower_offsets = Vec::new();
        for t in 0..config.n_tasks {
            tower_offsets.push(push(&tower, format!("head.tower{t}"), &mut entries, &mut offset));
        }

        let layout = Layout::new(entries);
        Ok(Self {
            config,
            params: ParamVector::zeros(layout),
            expert,
            gate,
            tower,
            shared_offsets,
            task_expert_offsets,
            gate_offsets,
            tower_offsets,
        })
    }

    /// He-initialized network from a seed.
    pub fn init(config: PleConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = crate::rng::rng(seed);
        let mut values = Vec::with_capacity(net.params.len());
        for _ in 0..net.config.n_shared_experts {
            net.expert.init_params(&mut rng, &mut values);
        }
        for _ in 0..net.config.n_tasks * net.config.experts_per_task {
            net.expert.init_params(&mut rng, &mut values);
        }
        for _ in 0..net.config.n_tasks {
            net.gate.init_params(&mut rng, &mut values);
        }
        for _ in 0..net.config.n_tasks {
            net.tower.init_params(&mut rng, &mut values);
        }
        net.params = ParamVector::new(values, net.params.layout.clone())?;
        Ok(net)
    }

    /// Same shapes, different parameter values.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        if params.layout != self.params.layout {
            return Err(Error::shape("parameter layout does not match network".to_string()));
        }
        let mut net = self.clone();
        net.params = params;
        Ok(net)
    }

    pub fn layout(&self) -> &Layout {
        &self.params.layout
    }

    fn expert_slice<'a>(&self, values: &'a [f64], offset: usize) -> &'a [f64] {
        &values[offset..offset + self.expert.param_count()]
    }

    /// Batched forward over `x` (batch, input_dim).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<PleBatchCache> {
        self.forward_batch_with(&self.params.values, x)
    }

    /// Batched forward with an externally supplied parameter vector sharing
    /// this network's layout (used by sampled-weight inference).
    pub fn forward_batch_with(&self, values: &[f64], x: ArrayView2<f64>) -> Result<PleBatchCache> {
        if values.len() != self.params.len() {
            return Err(Error::shape("parameter vector length mismatch".to_string()));
        }
        if x.ncols() != self.config.input_dim {
            return Err(Error::shape(format!(
                "input dim {} != expected {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let batch = x.nrows();
        let width = self.config.expert_width();

        let mut expert_caches = Vec::new();
        for &off in &self.shared_offsets {
            expert_caches.push(self.expert.forward_batch(self.expert_slice(values, off), x)?);
        }
        for offs in &self.task_expert_offsets {
            for &off in offs {
                expert_caches.push(self.expert.forward_batch(self.expert_slice(values, off), x)?);
            }
        }

        let mut gate_caches = Vec::new();
        let mut gate_weights = Vec::new();
        let mut tower_caches = Vec::new();
        let mut logits = Array2::zeros((batch, self.config.n_tasks));
        for t in 0..self.config.n_tasks {
            let gc = self.gate.forward_batch(
                &values[self.gate_offsets[t]..self.gate_offsets[t] + self.gate.param_count()],
                x,
            )?;
            let weights = softmax_rows(gc.output());
            let mut mixture = Array2::zeros((batch, width));
            for (k, ei) in self.gate_expert_indices(t).enumerate() {
                let e = expert_caches[ei].output();
                let col = weights.column(k);
                for b in 0..batch {
                    let wk = col[b];
                    let erow = e.row(b);
                    let mut mrow = mixture.row_mut(b);
                    for (m, v) in mrow.iter_mut().zip(erow.iter()) {
                        *m += wk * v;
                    }
                }
            }
            let tc = self.tower.forward_batch(
                &values[self.tower_offsets[t]..self.tower_offsets[t] + self.tower.param_count()],
                mixture.view(),
            )?;
            logits.column_mut(t).assign(&tc.output().column(0));
            gate_caches.push(gc);
            gate_weights.push(weights);
            tower_caches.push(tc);
        }
        let probs = logits.mapv(sigmoid);
        Ok(PleBatchCache {
            expert_caches,
            gate_caches,
            gate_weights,
            tower_caches,
            logits,
            probs,
        })
    }

    /// Expert-cache indices visible to task `t`'s gate: shared, then own.
    fn gate_expert_indices(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        let own_start = self.config.n_shared_experts + t * self.config.experts_per_task;
        (0..self.config.n_shared_experts).chain(own_start..own_start + self.config.experts_per_task)
    }

    /// Per-instance forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<PleOutput> {
        let xv = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::shape(e.to_string()))?;
        let cache = self.forward_batch(xv)?;
        Ok(PleOutput {
            probs: cache.probs.row(0).to_vec(),
            logits: cache.logits.row(0).to_vec(),
            gates: cache.gate_weights.iter().map(|g| g.row(0).to_vec()).collect(),
        })
    }

    /// Batched backward pass. `d_logits` is dL/d(task logit) per instance
    /// (batch, n_tasks). Returns the gradient summed over the batch; callers
    /// scale by 1/batch for a mean-loss gradient. Shared-expert gradients
    /// accumulate contributions from every task.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        cache: &PleBatchCache,
        d_logits: ArrayView2<f64>,
    ) -> Result<ParamVector> {
        if d_logits.dim() != cache.logits.dim() {
            return Err(Error::shape("d_logits shape mismatch".to_string()));
        }
        let batch = x.nrows();
        let width = self.config.expert_width();
        let n_experts = self.expert_count();
        let mut grad = vec![0.0; self.params.len()];
        let mut d_experts: Vec<Array2<f64>> =
            (0..n_experts).map(|_| Array2::zeros((batch, width))).collect();

        for t in 0..self.config.n_tasks {
            let upstream = d_logits.column(t).insert_axis(Axis(1));
            let d_mixture = self.tower.backward_batch(
                &self.params.values
                    [self.tower_offsets[t]..self.tower_offsets[t] + self.tower.param_count()],
                &cache.tower_caches[t],
                upstream.view(),
                &mut grad[self.tower_offsets[t]..self.tower_offsets[t] + self.tower.param_count()],
            )?;

            let weights = &cache.gate_weights[t];
            let n_gate = self.config.experts_per_gate();
            // d(gate weight)[b,k] = <d_mixture[b,:], expert_k[b,:]>
            let mut d_weights: Array2<f64> = Array2::zeros((batch, n_gate));
            for (k, ei) in self.gate_expert_indices(t).enumerate() {
                let e = cache.expert_caches[ei].output();
                for b in 0..batch {
                    d_weights[(b, k)] =
                        d_mixture.row(b).iter().zip(e.row(b).iter()).map(|(a, c)| a * c).sum();
                    // expert receives weight * d_mixture
                    let wk = weights[(b, k)];
                    let mut drow = d_experts[ei].row_mut(b);
                    for (d, m) in drow.iter_mut().zip(d_mixture.row(b).iter()) {
                        *d += wk * m;
                    }
                }
            }
            // softmax backward: dG = A .* (dA - rowsum(dA .* A))
            let mut d_gate_logits: Array2<f64> = Array2::zeros((batch, n_gate));
            for b in 0..batch {
                let dot: f64 = (0..n_gate).map(|k| d_weights[(b, k)] * weights[(b, k)]).sum();
                for k in 0..n_gate {
                    d_gate_logits[(b, k)] = weights[(b, k)] * (d_weights[(b, k)] - dot);
                }
            }
            self.gate.backward_batch(
                &self.params.values
                    [self.gate_offsets[t]..self.gate_offsets[t] + self.gate.param_count()],
                &cache.gate_caches[t],
                d_gate_logits.view(),
                &mut grad[self.gate_offsets[t]..self.gate_offsets[t] + self.gate.param_count()],
            )?;
        }

        for (ei, off) in self.expert_offsets().enumerate() {
            self.expert.backward_batch(
                self.expert_slice(&self.params.values, off),
                &cache.expert_caches[ei],
                d_experts[ei].view(),
                &mut grad[off..off + self.expert.param_count()],
            )?;
        }
        ParamVector::new(grad, self.params.layout.clone())
    }

    fn expert_count(&self) -> usize {
        self.config.n_shared_experts + self.config.n_tasks * self.config.experts_per_task
    }

    fn expert_offsets(&self) -> impl Iterator<Item = usize> + '_ {
        self.shared_offsets
            .iter()
            .copied()
            .chain(self.task_expert_offsets.iter().flatten().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::grad_check;
    use crate::losses::bce;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    fn small_config() -> PleConfig {
        PleConfig {
            n_tasks: 3,
            n_shared_experts: 2,
            experts_per_task: 1,
            input_dim: 5,
            expert_dims: vec![6],
            gate_dims: vec![],
            tower_dims: vec![4, 1],
        }
    }

    fn random_batch(rng: &mut impl Rng, n: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.5..1.5))
    }

    #[test]
    fn default_config_matches_three_shared_one_specific() {
        let c = PleConfig::default();
        assert_eq!(c.n_shared_experts, 3);
        assert_eq!(c.experts_per_task, 1);
        assert_eq!(c.n_tasks, 4);
        assert_eq!(c.input_dim, 8);
    }

    #[test]
    fn default_net_produces_four_probabilities() {
        let net = PleNetwork::init(PleConfig::default(), 7).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = net.forward(&x).unwrap();
        assert_eq!(out.probs.len(), 4);
        assert!(out.probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_params_give_half_everywhere() {
        let net = PleNetwork::zeros(small_config()).unwrap();
        let out = net.forward(&[0.3, -0.2, 0.5, 1.0, -1.0]).unwrap();
        for p in out.probs {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn gate_weights_are_simplex_points() {
        let net = PleNetwork::init(small_config(), 13).unwrap();
        let mut rng = crate::rng::rng(4);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let out = net.forward(&x).unwrap();
            for g in out.gates {
                assert!(g.iter().all(|&w| w >= 0.0));
                assert_abs_diff_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = PleNetwork::init(small_config(), 1).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn backbone_head_partition_is_total_and_disjoint() {
        let net = PleNetwork::init(small_config(), 1).unwrap();
        let layout = net.layout();
        let backbone: usize = layout
            .spans_where(|n| n.starts_with("backbone."))
            .map(|(_, l)| l)
            .sum();
        let head: usize =
            layout.spans_where(|n| n.starts_with("head.")).map(|(_, l)| l).sum();
        assert_eq!(backbone + head, net.params.len());
        assert!(layout
            .entries
            .iter()
            .all(|e| e.name.starts_with("backbone.") || e.name.starts_with("head.")));
    }

    fn mean_loss(net: &PleNetwork, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let cache = net.forward_batch(x.view()).unwrap();
        let mut total = 0.0;
        for b in 0..x.nrows() {
            for t in 0..net.config.n_tasks {
                total += bce(cache.probs[(b, t)], y[(b, t)]);
            }
        }
        total / x.nrows() as f64
    }

    fn mean_grad(net: &PleNetwork, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        let cache = net.forward_batch(x.view()).unwrap();
        let d_logits = (&cache.probs - y).mapv(|v| v / x.nrows() as f64);
        net.backward_batch(x.view(), &cache, d_logits.view()).unwrap().values
    }

    #[test]
    fn full_model_grad_check_on_16_sample_batch() {
        let net = PleNetwork::init(small_config(), 21).unwrap();
        let mut rng = crate::rng::rng(22);
        let x = random_batch(&mut rng, 16, 5);
        let y = Array2::from_shape_fn((16, 3), |_| f64::from(rng.gen_range(0..2)));
        let grad = mean_grad(&net, &x, &y);
        let report = grad_check(
            |p| {
                let probe = net
                    .with_params(
                        ParamVector::new(p.to_vec(), net.params.layout.clone()).unwrap(),
                    )
                    .unwrap();
                mean_loss(&probe, &x, &y)
            },
            &net.params.values,
            &grad,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn zero_task_loss_zeroes_that_tower_gradient() {
        let net = PleNetwork::init(small_config(), 31).unwrap();
        let mut rng = crate::rng::rng(32);
        let x = random_batch(&mut rng, 8, 5);
        let cache = net.forward_batch(x.view()).unwrap();
        let mut d_logits = Array2::from_elem((8, 3), 0.7);
        d_logits.column_mut(1).fill(0.0); // task 1 loss removed
        let grad = net.backward_batch(x.view(), &cache, d_logits.view()).unwrap();
        let (off, len) = grad.layout.span("head.tower1.l0.w").unwrap();
        assert!(grad.values[off..off + len].iter().all(|&g| g == 0.0));
        let (off, len) = grad.layout.span("head.tower0.l0.w").unwrap();
        assert!(grad.values[off..off + len].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn shared_expert_gradient_is_sum_of_per_task_gradients() {
        let net = PleNetwork::init(small_config(), 41).unwrap();
        let mut rng = crate::rng::rng(42);
        let x = random_batch(&mut rng, 4, 5);
        let cache = net.forward_batch(x.view()).unwrap();
        let d_full = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let grad_full = net.backward_batch(x.view(), &cache, d_full.view()).unwrap();
        let mut grad_sum = vec![0.0; net.params.len()];
        for t in 0..3 {
            let mut d_only = Array2::zeros((4, 3));
            d_only.column_mut(t).assign(&d_full.column(t));
            let g = net.backward_batch(x.view(), &cache, d_only.view()).unwrap();
            for (a, b) in grad_sum.iter_mut().zip(&g.values) {
                *a += b;
            }
        }
        let (off, len) = net.layout().span("backbone.shared0.l0.w").unwrap();
        for i in off..off + len {
            assert_abs_diff_eq!(grad_full.values[i], grad_sum[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn removing_a_task_preserves_other_task_outputs() {
        // build a 2-task net, then a 1-task net that copies the shared
        // parameters and task-0 components; task-0 outputs must agree.
        let big = PleNetwork::init(
            PleConfig { n_tasks: 2, ..small_config() },
            51,
        )
        .unwrap();
        let mut small = PleNetwork::zeros(PleConfig { n_tasks: 1, ..small_config() }).unwrap();
        let mut values = small.params.values.clone();
        for entry in &small.params.layout.entries.clone() {
            let (dst, len) = small.params.layout.span(&entry.name).unwrap();
            let (src, src_len) = big.params.layout.span(&entry.name).unwrap();
            assert_eq!(len, src_len, "{}", entry.name);
            values[dst..dst + len]
                .copy_from_slice(&big.params.values[src..src + len]);
        }
        small.params = ParamVector::new(values, small.params.layout.clone()).unwrap();
        let mut rng = crate::rng::rng(52);
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = big.forward(&x).unwrap();
            let b = small.forward(&x).unwrap();
            assert_abs_diff_eq!(a.probs[0], b.probs[0], epsilon = 1e-12);
        }
    }
}
