//! Mini-batch SGD training loop for the PLE network.
//!
//! Single-threaded and deterministic for a fixed seed: the epoch shuffle and
//! the batch order are functions of the config seed only. A per-epoch hook
//! exposes the weights so the SWAG snapshot buffer can collect the final
//! rounds.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::bce;
use crate::ple::PleNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.2, epochs: 60, batch_size: 512, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0".to_string()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Mean multi-task BCE over a dataset.
pub fn mean_multitask_bce(net: &PleNetwork, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let cache = net.forward_batch(x)?;
    let mut total = 0.0;
    for (p_row, y_row) in cache.probs.outer_iter().zip(y.outer_iter()) {
        for (&p, &yy) in p_row.iter().zip(y_row.iter()) {
            total += bce(p, yy);
        }
    }
    Ok(total / x.nrows() as f64)
}

/// Train in place. `x` is (n, input_dim); `y` is (n, n_tasks) of 0/1 labels.
/// `on_epoch_end(epoch_index, net)` fires after each epoch's updates.
pub fn train_ple(
    net: &mut PleNetwork,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    config: &TrainConfig,
    mut on_epoch_end: impl FnMut(usize, &PleNetwork),
) -> Result<()> {
    config.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::shape("feature/label row counts differ".to_string()));
    }
    if y.ncols() != net.config.n_tasks {
        return Err(Error::shape(format!(
            "{} label columns for {} tasks",
            y.ncols(),
            net.config.n_tasks
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::data("empty training set".to_string()));
    }
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng_for(config.seed, 0xe90c);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let cache = net.forward_batch(xb.view())?;
            // dL/dlogit of mean BCE = (p - y)/batch
            let scale = 1.0 / chunk.len() as f64;
            let mut d_logits: Array2<f64> = &cache.probs - &yb;
            d_logits.mapv_inplace(|v| v * scale);
            let grad = net.backward_batch(xb.view(), &cache, d_logits.view())?;
            net.params.sgd_step_inplace(&grad, config.learning_rate)?;
        }
        on_epoch_end(epoch, net);
    }
    Ok(())
}
