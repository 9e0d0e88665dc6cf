//! Budgeted pass/intercept decisions.
//!
//! Per-instance expected reward from per-metric scores, a two-tier ordering
//! key that ranks the most uncertain instances above everything else, and the
//! top-k selection that solves the cardinality-constrained interception
//! problem exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictive mean and uncertainty for one metric of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    /// Predictive mean in [0, 1].
    pub s: f64,
    /// Uncertainty, >= 0.
    pub u: f64,
}

impl MetricScore {
    pub fn new(s: f64, u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::argument(format!("score must be in [0,1], got {s}")));
        }
        if u < 0.0 {
            return Err(Error::argument(format!("uncertainty must be >= 0, got {u}")));
        }
        Ok(Self { s, u })
    }
}

/// Weights of the default reward combiner plus the uncertainty pass fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// One nonnegative weight per metric (click, online, cart, deal).
    pub weights: [f64; 4],
    /// Fraction of instances ranked above everything else by uncertainty.
    pub uncertainty_pass_fraction: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { weights: [1.0, 1.0, 1.0, 1.0], uncertainty_pass_fraction: 0.1 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::config("reward weights must be nonnegative".to_string()));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::config("at least one reward weight must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.uncertainty_pass_fraction) {
            return Err(Error::config("uncertainty_pass_fraction must be in [0,1]".to_string()));
        }
        Ok(())
    }
}

/// How a pass/intercept plan was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Pass by the task's own uncertainty, classify the rest by its score.
    DirectTask { task: usize },
    /// Pass by another task's uncertainty, classify by the target's score.
    IndirectSource { source: usize, target: usize },
    /// Rank by expected reward and keep the best (1 - r) fraction.
    RewardRanking,
}

/// Per-instance pass (1) / intercept (0) decisions under a rate budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptPlan {
    pub decisions: Vec<u8>,
    pub rate: f64,
    pub strategy: Strategy,
}

impl InterceptPlan {
    pub fn n_passed(&self) -> usize {
        self.decisions.iter().filter(|&&z| z == 1).count()
    }
}

/// Ordering key: uncertainty-passed instances form the top tier (ranked among
/// themselves by uncertainty), the rest rank by score. Larger keys rank first;
/// ties everywhere break by ascending instance index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderKey {
    pub tier: u8, // 1 = passed by uncertainty, 0 = score tier
    pub value: f64,
}

/// Two-tier combination of score and uncertainty: the top `fraction` of
/// instances by uncertainty (ties by index) receive tier-1 keys valued by
/// their uncertainty; the rest keep tier-0 keys valued by their score.
pub fn combine_score_uncertainty(
    scores: &[MetricScore],
    uncertainty_pass_fraction: f64,
) -> Result<Vec<OrderKey>> {
    if scores.is_empty() {
        return Err(Error::argument("empty batch".to_string()));
    }
    if !(0.0..=1.0).contains(&uncertainty_pass_fraction) {
        return Err(Error::argument("fraction must be in [0,1]".to_string()));
    }
    let n = scores.len();
    let n_top = if uncertainty_pass_fraction == 0.0 {
        0
    } else {
        (uncertainty_pass_fraction * n as f64).ceil() as usize
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b].u.partial_cmp(&scores[a].u).unwrap().then(a.cmp(&b))
    });
    let mut keys: Vec<OrderKey> =
        scores.iter().map(|m| OrderKey { tier: 0, value: m.s }).collect();
    for &i in order.iter().take(n_top) {
        keys[i] = OrderKey { tier: 1, value: scores[i].u };
    }
    Ok(keys)
}

/// Descending ranking of ordering keys, ties by ascending index.
pub fn rank_by_keys(keys: &[OrderKey]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .tier
            .cmp(&keys[a].tier)
            .then(keys[b].value.partial_cmp(&keys[a].value).unwrap())
            .then(a.cmp(&b))
    });
    order
}

/// Default reward combiner: weighted sum over the four metric scores.
pub fn expected_reward(t: &[f64; 4], config: &RewardConfig) -> Result<f64> {
    config.validate()?;
    Ok(t.iter().zip(&config.weights).map(|(ti, wi)| ti * wi).sum())
}

/// Keep the `ceil((1 - r) * N)` instances with the largest rewards (ties by
/// ascending index); intercept the rest. Exactly optimal for the cardinality
/// constraint.
pub fn solve_interception(rewards: &[f64], r: f64) -> Result<InterceptPlan> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::argument(format!("rate must be in [0,1], got {r}")));
    }
    let n = rewards.len();
    let n_pass = if r == 1.0 { 0 } else { ((1.0 - r) * n as f64).ceil() as usize };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap().then(a.cmp(&b)));
    let mut decisions = vec![0u8; n];
    for &i in order.iter().take(n_pass) {
        decisions[i] = 1;
    }
    Ok(InterceptPlan { decisions, rate: r, strategy: Strategy::RewardRanking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ms(s: f64, u: f64) -> MetricScore {
        MetricScore::new(s, u).unwrap()
    }

    #[test]
    fn zero_fraction_orders_by_score() {
        let keys =
            combine_score_uncertainty(&[ms(0.9, 0.5), ms(0.2, 0.9)], 0.0).unwrap();
        assert!(keys.iter().all(|k| k.tier == 0));
        assert_eq!(rank_by_keys(&keys), vec![0, 1]);
    }

    #[test]
    fn full_fraction_orders_by_uncertainty_alone() {
        let keys = combine_score_uncertainty(
            &[ms(0.9, 0.1), ms(0.2, 0.9), ms(0.5, 0.5)],
            1.0,
        )
        .unwrap();
        assert!(keys.iter().all(|k| k.tier == 1));
        assert_eq!(rank_by_keys(&keys), vec![1, 2, 0]);
    }

    #[test]
    fn third_fraction_sort_oracle() {
        // s=[0.9,0.2,0.6], u=[0.01,0.5,0.02], fraction=1/3:
        // instance 1 passes on uncertainty, then 0, then 2 by score
        let keys = combine_score_uncertainty(
            &[ms(0.9, 0.01), ms(0.2, 0.5), ms(0.6, 0.02)],
            1.0 / 3.0,
        )
        .unwrap();
        assert_eq!(rank_by_keys(&keys), vec![1, 0, 2]);
    }

    #[test]
    fn uncertainty_tier_always_ranks_above_score_tier() {
        let mut rng = crate::rng::rng(8);
        for _ in 0..50 {
            let scores: Vec<MetricScore> = (0..10)
                .map(|_| ms(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.25)))
                .collect();
            let keys = combine_score_uncertainty(&scores, 0.3).unwrap();
            let ranked = rank_by_keys(&keys);
            let n_top = keys.iter().filter(|k| k.tier == 1).count();
            assert!(ranked[..n_top].iter().all(|&i| keys[i].tier == 1));
        }
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(combine_score_uncertainty(&[], 0.5).is_err());
    }

    #[test]
    fn reward_deal_emphasis() {
        let cfg = RewardConfig { weights: [0.0, 0.0, 0.0, 1.0], ..Default::default() };
        let e = expected_reward(&[0.9, 0.8, 0.7, 0.31], &cfg).unwrap();
        assert_abs_diff_eq!(e, 0.31, epsilon = 1e-15);
    }

    #[test]
    fn reward_convex_combination_is_constant_on_equal_scores() {
        let cfg = RewardConfig { weights: [0.4, 0.3, 0.2, 0.1], ..Default::default() };
        let e = expected_reward(&[0.6, 0.6, 0.6, 0.6], &cfg).unwrap();
        assert_abs_diff_eq!(e, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn reward_hand_arithmetic() {
        let cfg = RewardConfig { weights: [1.0, 1.0, 1.0, 1.0], ..Default::default() };
        let e = expected_reward(&[0.1, 0.2, 0.3, 0.4], &cfg).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_config_validation() {
        assert!(RewardConfig { weights: [0.0; 4], ..Default::default() }.validate().is_err());
        assert!(RewardConfig { weights: [-1.0, 1.0, 0.0, 0.0], ..Default::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn interception_half_rate_hand_case() {
        let plan = solve_interception(&[3.0, 1.0, 4.0, 2.0], 0.5).unwrap();
        assert_eq!(plan.decisions, vec![1, 0, 1, 0]);
    }

    #[test]
    fn interception_edge_rates() {
        let e = [0.5, 0.1, 0.9];
        assert_eq!(solve_interception(&e, 0.0).unwrap().decisions, vec![1, 1, 1]);
        assert_eq!(solve_interception(&e, 1.0).unwrap().decisions, vec![0, 0, 0]);
    }

    /// Brute-force: best objective over all z with the same pass count.
    fn oracle_best(rewards: &[f64], n_pass: usize) -> f64 {
        let n = rewards.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n_pass {
                continue;
            }
            let v: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| rewards[i]).sum();
            best = best.max(v);
        }
        best
    }

    #[test]
    fn interception_matches_exhaustive_enumeration() {
        let mut rng = crate::rng::rng(12);
        for _ in 0..50 {
            let n = rng.gen_range(1..=12);
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r: f64 = rng.gen_range(0.0..1.0);
            let plan = solve_interception(&rewards, r).unwrap();
            let value: f64 = rewards
                .iter()
                .zip(&plan.decisions)
                .filter(|(_, &z)| z == 1)
                .map(|(&e, _)| e)
                .sum();
            assert_abs_diff_eq!(
                value,
                oracle_best(&rewards, plan.n_passed()),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn plan_rate_accounting_within_rounding() {
        let mut rng = crate::rng::rng(13);
        for _ in 0..50 {
            let n = rng.gen_range(1..=40);
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r: f64 = rng.gen_range(0.0..1.0);
            let plan = solve_interception(&rewards, r).unwrap();
            let realized = (n - plan.n_passed()) as f64 / n as f64;
            assert!((realized - r).abs() <= 1.0 / n as f64 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pass_set_invariant_under_positive_scaling(
            rewards in proptest::collection::vec(0.0..10.0f64, 1..20),
            scale in 0.01..100.0f64,
            r in 0.0..1.0f64,
        ) {
            let a = solve_interception(&rewards, r).unwrap();
            let scaled: Vec<f64> = rewards.iter().map(|e| e * scale).collect();
            let b = solve_interception(&scaled, r).unwrap();
            prop_assert_eq!(a.decisions, b.decisions);
        }
    }
}
