//! Distillation of the sampled-inference teacher into a single-pass student.
//!
//! The student shares a dense trunk and carries, per task, a sigmoid
//! prediction head and a softplus uncertainty head. Teacher variances are
//! rescaled so their per-task mean matches the label mean, then regressed
//! jointly with the classification loss:
//!
//! ```text
//! L = sum_t [ BCE(pred_t, y_t) + lambda * (unc_t - u'_t)^2 ]
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::engine::{sigmoid, softplus, Activation, Layout, Mlp, MlpBatchCache, ParamVector};
use crate::error::{Error, Result};
use crate::losses::bce;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub input_dim: usize,
    pub n_tasks: usize,
    /// Trunk layer widths; defaults to half the teacher expert width.
    pub trunk_dims: Vec<usize>,
    /// Hidden widths of each head; the single output unit is appended.
    pub head_dims: Vec<usize>,
    /// Weight of the uncertainty-regression term.
    pub lambda: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            n_tasks: 4,
            trunk_dims: vec![32],
            head_dims: vec![16],
            lambda: 1.0,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_tasks == 0 {
            return Err(Error::config("input_dim and n_tasks must be >= 1".to_string()));
        }
        if self.trunk_dims.is_empty() || self.trunk_dims.contains(&0) || self.head_dims.contains(&0)
        {
            return Err(Error::config("student layer widths must be >= 1".to_string()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be >= 0".to_string()));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        *self.trunk_dims.last().unwrap()
    }
}

/// Rescaled uncertainty targets and the per-task factors that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    pub u_prime: Array2<f64>,
    pub gamma: Vec<f64>,
}

/// `gamma_t = mean(y_t)/mean(u_t)`, `u' = gamma_t * u`: matches the mean of
/// the uncertainty targets to the label mean so the two loss terms sit on the
/// same scale.
pub fn rescale_uncertainty_labels(
    u: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<DistillTargets> {
    if u.dim() != y.dim() {
        return Err(Error::shape(format!(
            "teacher variances {:?} vs labels {:?}",
            u.dim(),
            y.dim()
        )));
    }
    if u.nrows() == 0 {
        return Err(Error::data("empty training set".to_string()));
    }
    let mut gamma = Vec::with_capacity(u.ncols());
    let mut u_prime = u.to_owned();
    for t in 0..u.ncols() {
        let mean_u = u.column(t).mean().unwrap();
        if mean_u <= 0.0 {
            return Err(Error::data(format!(
                "teacher variance for task {t} has mean {mean_u}; nothing to distill"
            )));
        }
        let mean_y = y.column(t).mean().unwrap();
        let g = mean_y / mean_u;
        for v in u_prime.column_mut(t) {
            *v *= g;
        }
        gamma.push(g);
    }
    Ok(DistillTargets { u_prime, gamma })
}

/// Single-pass student: trunk plus per-task prediction and uncertainty heads.
#[derive(Debug)]
pub struct StudentNet {
    pub config: StudentConfig,
    pub params: ParamVector,
    trunk: Mlp,
    pred_head: Mlp,
    unc_head: Mlp,
    pred_offsets: Vec<usize>,
    unc_offsets: Vec<usize>,
    /// Number of forward evaluations performed, for single-pass verification.
    forward_passes: AtomicU64,
}

impl Clone for StudentNet {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            trunk: self.trunk.clone(),
            pred_head: self.pred_head.clone(),
            unc_head: self.unc_head.clone(),
            pred_offsets: self.pred_offsets.clone(),
            unc_offsets: self.unc_offsets.clone(),
            forward_passes: AtomicU64::new(self.forward_passes.load(Ordering::Relaxed)),
        }
    }
}

/// Cached batched student forward pass.
pub struct StudentBatchCache {
    trunk_cache: MlpBatchCache,
    pred_caches: Vec<MlpBatchCache>,
    unc_caches: Vec<MlpBatchCache>,
    pub probs: Array2<f64>,
    pub uncertainties: Array2<f64>,
}

impl StudentNet {
    pub fn zeros(config: StudentConfig) -> Result<Self> {
        config.validate()?;
        let trunk =
            Mlp::chain(config.input_dim, &config.trunk_dims, Activation::Relu, Activation::Relu)?;
        let mut head_dims = config.head_dims.clone();
        head_dims.push(1);
        let pred_head =
            Mlp::chain(config.trunk_width(), &head_dims, Activation::Relu, Activation::Identity)?;
        let unc_head =
            Mlp::chain(config.trunk_width(), &head_dims, Activation::Relu, Activation::Identity)?;

        let mut entries = trunk.layout_entries("trunk");
        let mut offset = trunk.param_count();
        let mut pred_offsets = Vec::new();
        let mut unc_offsets = Vec::new();
        for t in 0..config.n_tasks {
            pred_offsets.push(offset);
            entries.extend(pred_head.layout_entries(&format!("task{t}.pred")));
            offset += pred_head.param_count();
            unc_offsets.push(offset);
            entries.extend(unc_head.layout_entries(&format!("task{t}.unc")));
            offset += unc_head.param_count();
        }
        let layout = Layout::new(entries);
        Ok(Self {
            config,
            params: ParamVector::zeros(layout),
            trunk,
            pred_head,
            unc_head,
            pred_offsets,
            unc_offsets,
            forward_passes: AtomicU64::new(0),
        })
    }

    pub fn init(config: StudentConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = crate::rng::rng(seed);
        let mut values = Vec::with_capacity(net.params.len());
        net.trunk.init_params(&mut rng, &mut values);
        for _ in 0..net.config.n_tasks {
            net.pred_head.init_params(&mut rng, &mut values);
            net.unc_head.init_params(&mut rng, &mut values);
        }
        net.params = ParamVector::new(values, net.params.layout.clone())?;
        Ok(net)
    }

    pub fn with_params(config: StudentConfig, params: ParamVector) -> Result<Self> {
        let net = Self::zeros(config)?;
        if params.layout != net.params.layout {
            return Err(Error::shape("parameter layout does not match student".to_string()));
        }
        Ok(Self { params, ..net })
    }

    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<StudentBatchCache> {
        self.forward_batch_with(&self.params.values, x)
    }

    /// Forward with an explicit parameter vector (same layout).
    pub fn forward_batch_with(&self, values: &[f64], x: ArrayView2<f64>) -> Result<StudentBatchCache> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        let n = x.nrows();
        let t_count = self.config.n_tasks;
        let trunk_cache = self.trunk.forward_batch(&values[..self.trunk.param_count()], x)?;
        let mut probs = Array2::zeros((n, t_count));
        let mut uncertainties = Array2::zeros((n, t_count));
        let mut pred_caches = Vec::with_capacity(t_count);
        let mut unc_caches = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let po = self.pred_offsets[t];
            let pc = self.pred_head.forward_batch(
                &values[po..po + self.pred_head.param_count()],
                trunk_cache.output().view(),
            )?;
            for (i, row) in pc.output().outer_iter().enumerate() {
                probs[[i, t]] = sigmoid(row[0]);
            }
            pred_caches.push(pc);
            let uo = self.unc_offsets[t];
            let uc = self.unc_head.forward_batch(
                &values[uo..uo + self.unc_head.param_count()],
                trunk_cache.output().view(),
            )?;
            for (i, row) in uc.output().outer_iter().enumerate() {
                uncertainties[[i, t]] = softplus(row[0]);
            }
            unc_caches.push(uc);
        }
        Ok(StudentBatchCache { trunk_cache, pred_caches, unc_caches, probs, uncertainties })
    }

    /// Batch-mean joint loss for the cached forward outputs.
    pub fn joint_loss(
        &self,
        cache: &StudentBatchCache,
        y: ArrayView2<f64>,
        u_prime: ArrayView2<f64>,
    ) -> f64 {
        let n = cache.probs.nrows();
        let mut total = 0.0;
        for i in 0..n {
            for t in 0..self.config.n_tasks {
                let r = cache.uncertainties[[i, t]] - u_prime[[i, t]];
                total += bce(cache.probs[[i, t]], y[[i, t]]) + self.config.lambda * r * r;
            }
        }
        total / n as f64
    }

    /// Gradient of the batch-mean joint loss; same layout as `params`.
    pub fn backward_batch(
        &self,
        cache: &StudentBatchCache,
        y: ArrayView2<f64>,
        u_prime: ArrayView2<f64>,
    ) -> Result<ParamVector> {
        self.backward_batch_with(&self.params.values, cache, y, u_prime)
    }

    pub fn backward_batch_with(
        &self,
        values: &[f64],
        cache: &StudentBatchCache,
        y: ArrayView2<f64>,
        u_prime: ArrayView2<f64>,
    ) -> Result<ParamVector> {
        let n = cache.probs.nrows();
        if y.dim() != cache.probs.dim() || u_prime.dim() != cache.probs.dim() {
            return Err(Error::shape("label/target shape mismatch".to_string()));
        }
        let inv_n = 1.0 / n as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut d_trunk_out: Array2<f64> = Array2::zeros(cache.trunk_cache.output().raw_dim());
        for t in 0..self.config.n_tasks {
            // d BCE / d logit = p - y
            let mut up = Array2::zeros((n, 1));
            for i in 0..n {
                up[[i, 0]] = (cache.probs[[i, t]] - y[[i, t]]) * inv_n;
            }
            let po = self.pred_offsets[t];
            let dx = self.pred_head.backward_batch(
                &values[po..po + self.pred_head.param_count()],
                &cache.pred_caches[t],
                up.view(),
                &mut grad[po..po + self.pred_head.param_count()],
            )?;
            d_trunk_out += &dx;

            // d lambda(u - u')^2 / d raw = 2 lambda (u - u') * sigmoid(raw)
            let mut up = Array2::zeros((n, 1));
            for i in 0..n {
                let u = cache.uncertainties[[i, t]];
                let raw_sig = cache.unc_caches[t].output()[[i, 0]];
                up[[i, 0]] = 2.0
                    * self.config.lambda
                    * (u - u_prime[[i, t]])
                    * sigmoid(raw_sig)
                    * inv_n;
            }
            let uo = self.unc_offsets[t];
            let dx = self.unc_head.backward_batch(
                &values[uo..uo + self.unc_head.param_count()],
                &cache.unc_caches[t],
                up.view(),
                &mut grad[uo..uo + self.unc_head.param_count()],
            )?;
            d_trunk_out += &dx;
        }
        self.trunk.backward_batch(
            &values[..self.trunk.param_count()],
            &cache.trunk_cache,
            d_trunk_out.view(),
            &mut grad[..self.trunk.param_count()],
        )?;
        ParamVector::new(grad, self.params.layout.clone())
    }

    /// Single-pass inference for one instance.
    pub fn student_infer(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::shape(e.to_string()))?;
        let cache = self.forward_batch(view)?;
        Ok((
            cache.probs.row(0).to_vec(),
            cache.uncertainties.row(0).to_vec(),
        ))
    }

    /// Single-pass inference for a batch: (probabilities, uncertainties).
    pub fn student_infer_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let cache = self.forward_batch(x)?;
        Ok((cache.probs, cache.uncertainties))
    }
}

/// Train the student on labels plus rescaled teacher variances by mini-batch
/// SGD; deterministic for a fixed config.
pub fn train_student(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    teacher_var: ArrayView2<f64>,
    student_config: &StudentConfig,
    train_config: &TrainConfig,
) -> Result<(StudentNet, DistillTargets)> {
    train_config.validate()?;
    if x.nrows() != y.nrows() || x.nrows() != teacher_var.nrows() {
        return Err(Error::data(format!(
            "teacher reports cover {} rows but the train set has {}",
            teacher_var.nrows(),
            x.nrows()
        )));
    }
    let targets = rescale_uncertainty_labels(teacher_var, y)?;
    let mut net = StudentNet::init(student_config.clone(), train_config.seed)?;
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng_for(train_config.seed, 0xd157);
    for _ in 0..train_config.epochs {
        use rand::Rng;
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(train_config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let ub = targets.u_prime.select(Axis(0), chunk);
            let cache = net.forward_batch(xb.view())?;
            let grad = net.backward_batch(&cache, yb.view(), ub.view())?;
            net.params.sgd_step_inplace(&grad, train_config.learning_rate)?;
        }
    }
    Ok((net, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::grad_check;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::Rng;

    fn tiny_config() -> StudentConfig {
        StudentConfig {
            input_dim: 6,
            n_tasks: 4,
            trunk_dims: vec![8],
            head_dims: vec![5],
            lambda: 1.0,
        }
    }

    #[test]
    fn rescale_hand_case() {
        let u = arr2(&[[0.1], [0.3]]);
        let y = arr2(&[[0.0], [1.0]]);
        let t = rescale_uncertainty_labels(u.view(), y.view()).unwrap();
        assert_abs_diff_eq!(t.gamma[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.u_prime[[0, 0]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(t.u_prime[[1, 0]], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn rescale_matches_means_within_1e9() {
        let mut rng = crate::rng::rng(1);
        let u = Array2::from_shape_fn((200, 4), |_| rng.gen_range(1e-4..0.2));
        let y = Array2::from_shape_fn((200, 4), |_| f64::from(rng.gen_bool(0.3)));
        let t = rescale_uncertainty_labels(u.view(), y.view()).unwrap();
        for task in 0..4 {
            let mu = t.u_prime.column(task).mean().unwrap();
            let my = y.column(task).mean().unwrap();
            assert!((mu - my).abs() < 1e-9, "task {task}: {mu} vs {my}");
        }
    }

    #[test]
    fn rescale_identity_when_means_already_match() {
        let u = arr2(&[[0.0], [1.0]]);
        let y = arr2(&[[1.0], [0.0]]);
        let t = rescale_uncertainty_labels(u.view(), y.view()).unwrap();
        assert_eq!(t.gamma, vec![1.0]);
        assert_eq!(t.u_prime, u);
    }

    #[test]
    fn rescale_rejects_degenerate_teacher() {
        let u = arr2(&[[0.0], [0.0]]);
        let y = arr2(&[[1.0], [0.0]]);
        assert!(rescale_uncertainty_labels(u.view(), y.view()).is_err());
    }

    #[test]
    fn rescale_preserves_instance_ordering() {
        let mut rng = crate::rng::rng(2);
        let u = Array2::from_shape_fn((50, 1), |_| rng.gen_range(0.0..1.0));
        let y = Array2::from_shape_fn((50, 1), |_| f64::from(rng.gen_bool(0.5)));
        let t = rescale_uncertainty_labels(u.view(), y.view()).unwrap();
        let rank = |col: &[f64]| {
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
            idx
        };
        assert_eq!(
            rank(u.column(0).as_slice().unwrap()),
            rank(t.u_prime.column(0).as_slice().unwrap())
        );
    }

    #[test]
    fn zero_weight_student_outputs_half_and_softplus_zero() {
        let net = StudentNet::zeros(tiny_config()).unwrap();
        let (p, u) = net.student_infer(&[0.3, -0.1, 0.7, 0.0, 1.0, -2.0]).unwrap();
        for v in p {
            assert_eq!(v, 0.5);
        }
        for v in u {
            assert_abs_diff_eq!(v, 2.0_f64.ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_counter_counts_single_passes() {
        let net = StudentNet::init(tiny_config(), 3).unwrap();
        assert_eq!(net.forward_passes(), 0);
        net.student_infer(&[0.0; 6]).unwrap();
        assert_eq!(net.forward_passes(), 1);
        net.student_infer(&[1.0; 6]).unwrap();
        net.student_infer_batch(Array2::zeros((9, 6)).view()).unwrap();
        assert_eq!(net.forward_passes(), 3);
    }

    #[test]
    fn inference_is_deterministic() {
        let net = StudentNet::init(tiny_config(), 4).unwrap();
        let x = [0.2, -0.4, 0.9, 0.0, -1.2, 0.5];
        let (p1, u1) = net.student_infer(&x).unwrap();
        let (p2, u2) = net.student_infer(&x).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p1), bits(&p2));
        assert_eq!(bits(&u1), bits(&u2));
    }

    #[test]
    fn batch_matches_single_rows() {
        let net = StudentNet::init(tiny_config(), 5).unwrap();
        let mut rng = crate::rng::rng(6);
        let x = Array2::from_shape_fn((7, 6), |_| rng.gen_range(-1.0..1.0));
        let (probs, uncs) = net.student_infer_batch(x.view()).unwrap();
        for i in 0..7 {
            let (p, u) = net.student_infer(x.row(i).as_slice().unwrap()).unwrap();
            assert_eq!(probs.row(i).to_vec(), p);
            assert_eq!(uncs.row(i).to_vec(), u);
        }
    }

    #[test]
    fn joint_loss_gradient_passes_finite_difference_check() {
        let net = StudentNet::init(tiny_config(), 7).unwrap();
        // batch seed chosen so no relu preactivation sits within the
        // finite-difference step of its kink
        let mut rng = crate::rng::rng(16);
        let x = Array2::from_shape_fn((16, 6), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((16, 4), |_| f64::from(rng.gen_bool(0.4)));
        let u_prime = Array2::from_shape_fn((16, 4), |_| rng.gen_range(0.0..0.5));
        let cache = net.forward_batch(x.view()).unwrap();
        let analytic = net.backward_batch(&cache, y.view(), u_prime.view()).unwrap();
        let report = grad_check(
            |p| {
                let c = net.forward_batch_with(p, x.view()).unwrap();
                net.joint_loss(&c, y.view(), u_prime.view())
            },
            &net.params.values,
            &analytic.values,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(
            report.passed(),
            "max rel error {} at {:?} ({:?})",
            report.max_rel_error,
            report.worst_index,
            report.worst_index.map(|i| net.params.layout.name_at(i))
        );
    }

    #[test]
    fn lambda_zero_leaves_uncertainty_heads_at_init() {
        let mut rng = crate::rng::rng(9);
        let x = Array2::from_shape_fn((64, 6), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((64, 4), |(_, t)| f64::from(rng.gen_bool(0.2 + 0.1 * t as f64)));
        let u = Array2::from_shape_fn((64, 4), |_| rng.gen_range(0.01..0.2));
        let config = StudentConfig { lambda: 0.0, ..tiny_config() };
        let tc = TrainConfig { epochs: 3, batch_size: 16, learning_rate: 0.1, seed: 11 };
        let (net, _) = train_student(x.view(), y.view(), u.view(), &config, &tc).unwrap();
        let init = StudentNet::init(config, 11).unwrap();
        for t in 0..4 {
            let (off, len) = net.params.layout.span(&format!("task{t}.unc.l0.w")).unwrap();
            assert_eq!(
                &net.params.values[off..off + len],
                &init.params.values[off..off + len],
                "task {t} uncertainty head moved with lambda = 0"
            );
            let (poff, plen) = net.params.layout.span(&format!("task{t}.pred.l0.w")).unwrap();
            assert_ne!(&net.params.values[poff..poff + plen], &init.params.values[poff..poff + plen]);
        }
    }

    #[test]
    fn training_reduces_joint_loss_and_is_deterministic() {
        let mut rng = crate::rng::rng(12);
        let x: Array2<f64> = Array2::from_shape_fn((128, 6), |_| rng.gen_range(-1.0..1.0));
        // separable-ish labels driven by the first feature
        let y = Array2::from_shape_fn((128, 4), |(i, _)| f64::from(x[[i, 0]] > 0.0));
        let u: Array2<f64> = Array2::from_shape_fn((128, 4), |(i, _)| 0.01 + 0.1 * x[[i, 1]].abs());
        let config = tiny_config();
        let tc = TrainConfig { epochs: 8, batch_size: 32, learning_rate: 0.5, seed: 13 };
        let targets = rescale_uncertainty_labels(u.view(), y.view()).unwrap();
        let init = StudentNet::init(config.clone(), tc.seed).unwrap();
        let before = {
            let c = init.forward_batch(x.view()).unwrap();
            init.joint_loss(&c, y.view(), targets.u_prime.view())
        };
        let (net, _) = train_student(x.view(), y.view(), u.view(), &config, &tc).unwrap();
        let after = {
            let c = net.forward_batch(x.view()).unwrap();
            net.joint_loss(&c, y.view(), targets.u_prime.view())
        };
        assert!(after < 0.5 * before, "loss {before} -> {after}");
        let (again, _) = train_student(x.view(), y.view(), u.view(), &config, &tc).unwrap();
        assert_eq!(
            net.params.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.params.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn train_rejects_coverage_gap() {
        let x = Array2::zeros((10, 6));
        let y = Array2::zeros((10, 4));
        let u = Array2::from_elem((9, 4), 0.1);
        assert!(train_student(
            x.view(),
            y.view(),
            u.view(),
            &tiny_config(),
            &TrainConfig::default()
        )
        .is_err());
    }
}
