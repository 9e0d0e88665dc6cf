//! SWAG posterior over network weights.
//!
//! Weight snapshots from the final training rounds are reduced to a mean,
//! a diagonal variance, and a low-rank deviation matrix; weight vectors are
//! then drawn as
//!
//! ```text
//! w = mean + (1/sqrt(2)) * diag_var^(1/2) .* z2 + (1/sqrt(2(K-1))) * D z1
//! ```
//!
//! with `K = rank + 1` and `z1 ~ N(0, I_r)`, `z2 ~ N(0, I_d)`.

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{Layout, ParamVector};
use crate::error::{Error, Result};

/// Which parameter segments the posterior spreads over. Under `BackboneOnly`
/// the task heads stay pinned at the SWA mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwagScope {
    #[default]
    All,
    BackboneOnly,
}

/// Ring buffer of the last `k_small` weight snapshots.
#[derive(Debug, Clone)]
pub struct SnapshotBuffer {
    snapshots: VecDeque<ParamVector>,
    k_small: usize,
}

impl SnapshotBuffer {
    pub fn new(k_small: usize) -> Result<Self> {
        if k_small < 2 {
            return Err(Error::argument("k_small must be >= 2".to_string()));
        }
        Ok(Self { snapshots: VecDeque::with_capacity(k_small), k_small })
    }

    pub fn k_small(&self) -> usize {
        self.k_small
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.snapshots.len() == self.k_small
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &ParamVector> {
        self.snapshots.iter()
    }

    /// Append a snapshot by value, evicting the oldest when over capacity.
    pub fn collect_snapshot(&mut self, params: &ParamVector) -> Result<()> {
        if let Some(first) = self.snapshots.front() {
            if first.layout != params.layout {
                return Err(Error::shape("snapshot layout differs from buffer".to_string()));
            }
        }
        if self.snapshots.len() == self.k_small {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(params.clone());
        Ok(())
    }
}

/// Fitted SWAG posterior: SWA mean, diagonal variance, low-rank deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwagPosterior {
    pub mean: ParamVector,
    /// Element-wise mean of squared deviations from the mean; all entries >= 0.
    pub diag_var: Vec<f64>,
    /// `rank` deviation columns (theta_i - mean), each of length d.
    pub deviations: Vec<Vec<f64>>,
    pub rank: usize,
    pub scope: SwagScope,
}

/// Fit the posterior from a full snapshot buffer.
///
/// `mean` is the snapshot average, `diag_var` the element-wise mean squared
/// deviation, and the deviation matrix holds the last `rank` snapshot
/// deviations. Requires `1 <= rank <= k_small - 1` and a full buffer.
pub fn fit_posterior(
    buffer: &SnapshotBuffer,
    rank: usize,
    scope: SwagScope,
) -> Result<SwagPosterior> {
    if !buffer.is_full() {
        return Err(Error::state(format!(
            "snapshot buffer holds {}/{} snapshots",
            buffer.len(),
            buffer.k_small()
        )));
    }
    if rank == 0 || rank > buffer.k_small() - 1 {
        return Err(Error::argument(format!(
            "rank must be in 1..={}, got {rank}",
            buffer.k_small() - 1
        )));
    }
    let k = buffer.k_small();
    let layout: Layout = buffer.snapshots.front().unwrap().layout.clone();
    let d = layout.len();

    // Streaming mean: exact when every snapshot is identical, so a collapsed
    // trajectory yields a posterior that is degenerate to the last bit.
    let mut mean = vec![0.0; d];
    for (i, snap) in buffer.snapshots().enumerate() {
        let inv = 1.0 / (i + 1) as f64;
        for (m, v) in mean.iter_mut().zip(&snap.values) {
            *m += (v - *m) * inv;
        }
    }

    let mut diag_var = vec![0.0; d];
    for snap in buffer.snapshots() {
        for ((s, v), m) in diag_var.iter_mut().zip(&snap.values).zip(&mean) {
            let dev = v - m;
            *s += dev * dev;
        }
    }
    for s in &mut diag_var {
        *s /= k as f64;
    }

    let deviations: Vec<Vec<f64>> = buffer
        .snapshots()
        .skip(k - rank)
        .map(|snap| snap.values.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut posterior = SwagPosterior {
        mean: ParamVector::new(mean, layout)?,
        diag_var,
        deviations,
        rank,
        scope,
    };
    if scope == SwagScope::BackboneOnly {
        mask_heads(&mut posterior);
    }
    Ok(posterior)
}

/// Zero the variance and deviation entries of `head.*` segments so sampling
/// leaves the task heads at the mean.
fn mask_heads(posterior: &mut SwagPosterior) {
    let spans: Vec<(usize, usize)> = posterior
        .mean
        .layout
        .spans_where(|n| n.starts_with("head."))
        .collect();
    for (start, len) in spans {
        for v in &mut posterior.diag_var[start..start + len] {
            *v = 0.0;
        }
        for col in &mut posterior.deviations {
            for v in &mut col[start..start + len] {
                *v = 0.0;
            }
        }
    }
}

impl SwagPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draw one weight vector; bit-reproducible for a fixed seed.
    pub fn sample_weights(&self, noise_seed: u64) -> ParamVector {
        let mut rng = crate::rng::rng(noise_seed);
        let d = self.dim();
        let k = self.rank + 1;
        let diag_scale = std::f64::consts::FRAC_1_SQRT_2;
        let lowrank_scale = 1.0 / (2.0 * (k as f64 - 1.0)).sqrt();

        let z1: Vec<f64> =
            (0..self.rank).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut values = Vec::with_capacity(d);
        for i in 0..d {
            let z2: f64 = StandardNormal.sample(&mut rng);
            let mut v = self.mean.values[i] + diag_scale * self.diag_var[i].sqrt() * z2;
            for (col, z) in self.deviations.iter().zip(&z1) {
                v += lowrank_scale * col[i] * z;
            }
            values.push(v);
        }
        ParamVector { values, layout: self.mean.layout.clone() }
    }
}
