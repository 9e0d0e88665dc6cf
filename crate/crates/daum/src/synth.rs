//! Synthetic hierarchical-funnel traffic generator.
//!
//! Features are standard normal; each funnel stage gets a random unit
//! direction scaled to `score_scale`, and the stage offset is calibrated by
//! bisection so the realized marginal positive rates hit the configured
//! targets. Labels are drawn stage-conditionally, so a later-stage positive
//! implies all earlier stages positive. Ground-truth marginal stage
//! probabilities ride along in a `truth` field, and ambiguous users
//! (duplicated features, independently redrawn labels) can be injected.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::sigmoid;
use crate::error::{Error, Result};
use crate::ple::TASK_NAMES;

/// One traffic instance with funnel labels (click, online, cart, deal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub labels: [u8; 4],
    /// Ground-truth marginal probability of each stage for this feature
    /// vector; monotone non-increasing down the funnel.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<[f64; 4]>,
    /// Ambiguity group this example belongs to, if any.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunnelConfig {
    pub feature_dim: usize,
    pub n_samples: usize,
    /// Marginal positive rates per stage; must be strictly decreasing.
    pub target_rates: [f64; 4],
    /// Standard deviation of each stage's logit score.
    pub score_scale: f64,
    /// Correlation of the deep-funnel stage directions (online, cart, deal)
    /// through a shared "purchase intent" axis. 0 gives independent stages,
    /// values near 1 make deep conversion concentrate on a
    /// confidently-identified high-intent subpopulation.
    pub stage_correlation: f64,
    /// Correlation of the click direction with the same intent axis; may be
    /// negative (high-intent comparison shoppers click less predictably),
    /// which concentrates hidden deep-funnel conversions among
    /// click-uncertain traffic.
    pub click_correlation: f64,
    pub ambiguity_fraction: f64,
    pub ambiguity_group_size: usize,
    pub seed: u64,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            n_samples: 100_000,
            target_rates: [0.40, 0.25, 0.03, 0.01],
            score_scale: 16.0,
            stage_correlation: 0.999,
            click_correlation: -0.3,
            ambiguity_fraction: 0.06,
            ambiguity_group_size: 30,
            seed: 0,
        }
    }
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.n_samples == 0 {
            return Err(Error::config("feature_dim and n_samples must be >= 1".to_string()));
        }
        for w in self.target_rates.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::config(format!(
                    "target_rates must be strictly decreasing down the funnel, got {:?}",
                    self.target_rates
                )));
            }
        }
        if !(self.target_rates[0] < 1.0 && self.target_rates[3] > 0.0) {
            return Err(Error::config("target_rates must lie strictly in (0,1)".to_string()));
        }
        if !(self.score_scale > 0.0) {
            return Err(Error::config("score_scale must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.stage_correlation) {
            return Err(Error::config("stage_correlation must lie in [0,1)".to_string()));
        }
        if !(-1.0..1.0).contains(&self.click_correlation) {
            return Err(Error::config("click_correlation must lie in (-1,1)".to_string()));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_fraction) {
            return Err(Error::config("ambiguity_fraction must lie in [0,1]".to_string()));
        }
        if self.ambiguity_group_size < 2 {
            return Err(Error::config("ambiguity_group_size must be >= 2".to_string()));
        }
        Ok(())
    }
}

// rng sub-streams
const STREAM_FEATURES: u64 = 0x01;
const STREAM_DIRECTIONS: u64 = 0x02;
const STREAM_LABELS: u64 = 0x03;
const STREAM_AMBIGUITY: u64 = 0x04;

/// Generate the funnel dataset (without ambiguity injection).
pub fn generate(config: &FunnelConfig) -> Result<Vec<Example>> {
    config.validate()?;
    let n = config.n_samples;
    let d = config.feature_dim;

    let mut frng = crate::rng::rng_for(config.seed, STREAM_FEATURES);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut frng)).collect())
        .collect();

    let mut drng = crate::rng::rng_for(config.seed, STREAM_DIRECTIONS);
    // shared "funnel intent" axis mixed into every stage direction
    let intent: Vec<f64> = {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut drng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        v
    };
    let directions: Vec<Vec<f64>> = (0..4)
        .map(|stage| {
            let rho =
                if stage == 0 { config.click_correlation } else { config.stage_correlation };
            let mut v: Vec<f64> =
                (0..d).map(|_| StandardNormal.sample(&mut drng)).collect();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (x, s) in v.iter_mut().zip(&intent) {
                *x = rho * s + (1.0 - rho * rho).sqrt() * *x / norm;
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x *= config.score_scale / norm;
            }
            v
        })
        .collect();

    // Per-stage conditional probabilities sigma(dir.x + offset); offsets are
    // bisected so the mean marginal (product of conditionals so far) hits the
    // stage target.
    let mut conds: Vec<Vec<f64>> = Vec::with_capacity(4);
    let mut marginal = vec![1.0; n];
    for stage in 0..4 {
        let scores: Vec<f64> = features
            .iter()
            .map(|x| x.iter().zip(&directions[stage]).map(|(a, b)| a * b).sum())
            .collect();
        let target = config.target_rates[stage];
        let mean_at = |b: f64| -> f64 {
            marginal
                .iter()
                .zip(&scores)
                .map(|(m, s)| m * sigmoid(s + b))
                .sum::<f64>()
                / n as f64
        };
        let (mut lo, mut hi) = (-40.0, 40.0);
        if mean_at(hi) < target {
            return Err(Error::config(format!(
                "stage {} target rate {target} unreachable given earlier stages",
                TASK_NAMES[stage]
            )));
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let offset = 0.5 * (lo + hi);
        let cond: Vec<f64> = scores.iter().map(|s| sigmoid(s + offset)).collect();
        for (m, c) in marginal.iter_mut().zip(&cond) {
            *m *= c;
        }
        conds.push(cond);
    }

    let mut lrng = crate::rng::rng_for(config.seed, STREAM_LABELS);
    let mut out = Vec::with_capacity(n);
    for (i, x) in features.into_iter().enumerate() {
        let mut labels = [0u8; 4];
        let mut alive = true;
        let mut truth = [0.0; 4];
        let mut m = 1.0;
        for stage in 0..4 {
            let c = conds[stage][i];
            m *= c;
            truth[stage] = m;
            // draw unconditionally to keep the rng stream independent of labels
            let hit = lrng.gen_bool(c);
            if alive && hit {
                labels[stage] = 1;
            } else {
                alive = false;
            }
        }
        out.push(Example { id: i as u64, features: x, labels, truth: Some(truth), group_id: None });
    }
    Ok(out)
}

/// Overwrite the features of selected groups with one shared vector per group
/// and redraw each member's labels from the shared ground truth.
///
/// Each cohort is anchored by a click-hesitant user: anchors are drawn by
/// weighted sampling without replacement (rank by `u^(1/w)`) with
/// `w_anchor = g^8 / (1 + (t4/0.02)^2)`, `g = 4 t1 (1 - t1)` — click near
/// the coin-flip point while clearly off the deep-funnel cliff, so the
/// anchor's features look confidently deal-negative. The cohort's shared
/// ground truth is then pinned to the comparison-shopper profile
/// `[0.5, 0.25, 0.12, 0.06]`: a coin-flip click with a deal rate several
/// times base that the features do not advertise. Cohort partners (the
/// remaining members, whose features and truth the anchor overwrites) are
/// drawn from a second weight
/// `w_partner = 10 s/(1+s) sigma((0.75-t4)/0.025) + 1.5 g^8` with
/// `s = (t4/0.04)^2`, absorbing the deep-funnel transition region (any
/// mid-range deal probability) and surplus click-boundary traffic into the
/// cohorts, and are assigned round-robin across groups. Ambiguous traffic
/// therefore carries conflicting click labels while hiding
/// disproportionately many sparse positives that the deal head cannot
/// confidently classify.
pub fn inject_ambiguity(mut dataset: Vec<Example>, config: &FunnelConfig) -> Result<Vec<Example>> {
    config.validate()?;
    if config.ambiguity_fraction == 0.0 {
        return Ok(dataset);
    }
    let n = dataset.len();
    let n_members = (config.ambiguity_fraction * n as f64).round() as usize;
    if n_members < config.ambiguity_group_size {
        return Err(Error::config(format!(
            "ambiguity_fraction {} of {} examples is below one group of {}",
            config.ambiguity_fraction, n, config.ambiguity_group_size
        )));
    }
    let n_groups = n_members / config.ambiguity_group_size;

    let mut rng = crate::rng::rng_for(config.seed, STREAM_AMBIGUITY);
    // weighted sampling without replacement: rank by u^(1/w), u uniform,
    // drawn in index order so the stream is stable
    let mut anchor_keys: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut partner_w: Vec<f64> = Vec::with_capacity(n);
    for (i, ex) in dataset.iter().enumerate() {
        let u: f64 = rng.gen_range(0.0f64..1.0).max(f64::MIN_POSITIVE);
        let t = ex
            .truth
            .ok_or_else(|| Error::data("ambiguity injection needs ground truth".to_string()))?;
        let g = 4.0 * t[0] * (1.0 - t[0]);
        let wa = g.powi(8) / (1.0 + (t[3] / 0.02).powi(2));
        let key = if wa > 0.0 { u.powf(1.0 / wa) } else { 0.0 };
        anchor_keys.push((i, key));
        let sat = (t[3] / 0.04).powi(2);
        let band = sat / (1.0 + sat) * sigmoid((0.75 - t[3]) / 0.025);
        partner_w.push(10.0 * band + 1.5 * g.powi(8));
    }
    anchor_keys.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let anchors: Vec<usize> = anchor_keys.iter().take(n_groups).map(|&(i, _)| i).collect();
    let is_anchor: Vec<bool> = {
        let mut v = vec![false; n];
        for &a in &anchors {
            v[a] = true;
        }
        v
    };
    let mut partner_keys: Vec<(usize, f64)> = Vec::with_capacity(n - n_groups);
    for (i, &w) in partner_w.iter().enumerate() {
        let u: f64 = rng.gen_range(0.0f64..1.0).max(f64::MIN_POSITIVE);
        if is_anchor[i] {
            continue;
        }
        let key = if w > 0.0 { u.powf(1.0 / w) } else { 0.0 };
        partner_keys.push((i, key));
    }
    partner_keys.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let partners: Vec<usize> =
        partner_keys.iter().take(n_groups * (config.ambiguity_group_size - 1)).map(|&(i, _)| i).collect();

    for g in 0..n_groups {
        // partners cycle round-robin so every cohort spans the partner tiers
        let mut members = vec![anchors[g]];
        for j in 0..config.ambiguity_group_size - 1 {
            members.push(partners[j * n_groups + g]);
        }
        let anchor = members[0];
        let shared = dataset[anchor].features.clone();
        dataset[anchor]
            .truth
            .ok_or_else(|| Error::data("ambiguity injection needs ground truth".to_string()))?;
        // pinned comparison-shopper profile: coin-flip click, hidden deep
        // funnel several times base rate (the anchor's features deliberately
        // do not advertise it)
        let truth = [0.5, 0.25, 0.12, 0.06];
        for &m in &members {
            let ex = &mut dataset[m];
            ex.features = shared.clone();
            ex.truth = Some(truth);
            ex.group_id = Some(g as u64);
            // stage-conditional redraw from the shared truth
            let mut labels = [0u8; 4];
            let mut alive = true;
            let mut prev = 1.0;
            for stage in 0..4 {
                let cond = truth[stage] / prev;
                prev = truth[stage];
                let hit = rng.gen_bool(cond.clamp(0.0, 1.0));
                if alive && hit {
                    labels[stage] = 1;
                } else {
                    alive = false;
                }
            }
            ex.labels = labels;
        }
    }
    Ok(dataset)
}

/// Seed-deterministic split keeping ambiguity groups whole.
pub fn split(
    dataset: &[Example],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::argument(format!(
            "train_fraction must lie strictly in (0,1), got {train_fraction}"
        )));
    }
    // units: one per singleton, one per ambiguity group
    let mut group_units: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    let mut units: Vec<Vec<usize>> = Vec::new();
    for (i, ex) in dataset.iter().enumerate() {
        match ex.group_id {
            Some(g) => group_units.entry(g).or_default().push(i),
            None => units.push(vec![i]),
        }
    }
    units.extend(group_units.into_values());

    let mut rng = crate::rng::rng_for(seed, 0x5711);
    for i in (1..units.len()).rev() {
        let j = rng.gen_range(0..=i);
        units.swap(i, j);
    }

    let target = (train_fraction * dataset.len() as f64).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for unit in units {
        let side = if train.len() < target { &mut train } else { &mut test };
        for i in unit {
            side.push(dataset[i].clone());
        }
    }
    Ok((train, test))
}

/// Feature matrix (n x d) in dataset order.
pub fn features_matrix(dataset: &[Example]) -> ndarray::Array2<f64> {
    let n = dataset.len();
    let d = dataset.first().map_or(0, |e| e.features.len());
    let mut m = ndarray::Array2::zeros((n, d));
    for (i, ex) in dataset.iter().enumerate() {
        for (j, v) in ex.features.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    m
}

/// Label matrix (n x 4) in dataset order.
pub fn labels_matrix(dataset: &[Example]) -> ndarray::Array2<f64> {
    let n = dataset.len();
    let mut m = ndarray::Array2::zeros((n, 4));
    for (i, ex) in dataset.iter().enumerate() {
        for (j, v) in ex.labels.iter().enumerate() {
            m[[i, j]] = f64::from(*v);
        }
    }
    m
}

/// Write the dataset as NDJSON, one example per line.
pub fn write_ndjson<W: Write>(dataset: &[Example], mut w: W) -> Result<()> {
    for ex in dataset {
        serde_json::to_writer(&mut w, ex).map_err(|e| Error::format(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

/// Read a dataset written by [`write_ndjson`].
pub fn read_ndjson<R: BufRead>(r: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

/// CSV export without the ground-truth column, for external tools.
pub fn write_csv<W: Write>(dataset: &[Example], mut w: W) -> Result<()> {
    let d = dataset.first().map_or(0, |e| e.features.len());
    let mut header = String::from("id");
    for j in 0..d {
        header.push_str(&format!(",f{j}"));
    }
    for t in TASK_NAMES {
        header.push_str(&format!(",{t}"));
    }
    header.push_str(",group_id");
    writeln!(w, "{header}")?;
    for ex in dataset {
        let mut row = ex.id.to_string();
        for v in &ex.features {
            row.push_str(&format!(",{v}"));
        }
        for l in ex.labels {
            row.push_str(&format!(",{l}"));
        }
        match ex.group_id {
            Some(g) => row.push_str(&format!(",{g}")),
            None => row.push(','),
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize, seed: u64) -> FunnelConfig {
        FunnelConfig { n_samples: n, feature_dim: 16, seed, ..FunnelConfig::default() }
    }

    #[test]
    fn rejects_non_decreasing_rates() {
        let config = FunnelConfig {
            target_rates: [0.4, 0.4, 0.03, 0.01],
            ..FunnelConfig::default()
        };
        assert!(config.validate().is_err());
        assert!(generate(&config).is_err());
    }

    #[test]
    fn funnel_monotonicity_holds_everywhere() {
        let data = generate(&small_config(2000, 1)).unwrap();
        for ex in &data {
            for w in ex.labels.windows(2) {
                assert!(w[1] <= w[0], "labels {:?}", ex.labels);
            }
            let t = ex.truth.unwrap();
            for w in t.windows(2) {
                assert!(w[1] <= w[0], "truth {t:?}");
            }
        }
        // click=0 forces the rest to 0 (restatement of monotonicity at stage 0)
        assert!(data
            .iter()
            .filter(|e| e.labels[0] == 0)
            .all(|e| e.labels == [0, 0, 0, 0]));
    }

    #[test]
    fn default_rates_realized_within_ten_percent() {
        let config = FunnelConfig { seed: 3, ..FunnelConfig::default() };
        let data = generate(&config).unwrap();
        let n = data.len() as f64;
        for stage in 0..4 {
            let rate =
                data.iter().map(|e| f64::from(e.labels[stage])).sum::<f64>() / n;
            let target = config.target_rates[stage];
            assert!(
                (rate - target).abs() / target < 0.10,
                "stage {stage}: rate {rate} vs target {target}"
            );
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate(&small_config(500, 9)).unwrap();
        let b = generate(&small_config(500, 9)).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_ndjson(&a, &mut buf_a).unwrap();
        write_ndjson(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        assert_ne!(a, generate(&small_config(500, 10)).unwrap());
    }

    #[test]
    fn truth_means_form_a_monotone_funnel() {
        let data = generate(&small_config(5000, 2)).unwrap();
        let n = data.len() as f64;
        let mut means = [0.0; 4];
        for ex in &data {
            for (m, t) in means.iter_mut().zip(ex.truth.unwrap()) {
                *m += t / n;
            }
        }
        for w in means.windows(2) {
            assert!(w[1] <= w[0], "{means:?}");
        }
    }

    #[test]
    fn ndjson_round_trip_is_lossless() {
        let config = small_config(600, 4);
        let data = inject_ambiguity(generate(&config).unwrap(), &config).unwrap();
        let mut buf = Vec::new();
        write_ndjson(&data, &mut buf).unwrap();
        let back = read_ndjson(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(data.len(), back.len());
        // bit-level, not approximate
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.group_id, b.group_id, "id {}", a.id);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert_eq!(x.to_bits(), y.to_bits(), "id {}", a.id);
            }
            for (x, y) in a.truth.unwrap().iter().zip(&b.truth.unwrap()) {
                assert_eq!(x.to_bits(), y.to_bits(), "id {} truth", a.id);
            }
        }
    }

    #[test]
    fn ambiguity_groups_share_features() {
        let config = FunnelConfig {
            ambiguity_fraction: 0.3,
            ambiguity_group_size: 4,
            ..small_config(400, 5)
        };
        let data = inject_ambiguity(generate(&config).unwrap(), &config).unwrap();
        let mut by_group: std::collections::BTreeMap<u64, Vec<&Example>> = Default::default();
        for ex in &data {
            if let Some(g) = ex.group_id {
                by_group.entry(g).or_default().push(ex);
            }
        }
        assert_eq!(by_group.len(), (0.3 * 400.0) as usize / 4);
        for members in by_group.values() {
            assert_eq!(members.len(), 4);
            for m in members {
                assert_eq!(m.features, members[0].features);
                assert_eq!(m.truth, members[0].truth);
            }
        }
    }

    #[test]
    fn ambiguity_zero_fraction_is_identity() {
        let config = FunnelConfig { ambiguity_fraction: 0.0, ..small_config(200, 6) };
        let data = generate(&config).unwrap();
        assert_eq!(inject_ambiguity(data.clone(), &config).unwrap(), data);
    }

    #[test]
    fn ambiguity_fraction_below_one_group_errors() {
        let config = FunnelConfig {
            ambiguity_fraction: 0.001,
            ambiguity_group_size: 5,
            ..small_config(100, 6)
        };
        let data = generate(&FunnelConfig { ambiguity_fraction: 0.0, ..config.clone() }).unwrap();
        assert!(inject_ambiguity(data, &config).is_err());
    }

    #[test]
    fn within_group_click_rate_tracks_truth() {
        // many large groups; the empirical within-group click rate should sit
        // near the shared ground truth up to binomial noise
        let config = FunnelConfig {
            ambiguity_fraction: 1.0,
            ambiguity_group_size: 100,
            ..small_config(5000, 7)
        };
        let data = inject_ambiguity(generate(&config).unwrap(), &config).unwrap();
        let mut by_group: std::collections::BTreeMap<u64, Vec<&Example>> = Default::default();
        for ex in &data {
            by_group.entry(ex.group_id.unwrap()).or_default().push(ex);
        }
        let mut max_sigma = 0.0_f64;
        for members in by_group.values() {
            let q = members[0].truth.unwrap()[0];
            let rate = members.iter().map(|e| f64::from(e.labels[0])).sum::<f64>()
                / members.len() as f64;
            let se = (q * (1.0 - q) / members.len() as f64).sqrt().max(1e-9);
            max_sigma = max_sigma.max((rate - q).abs() / se);
        }
        assert!(max_sigma < 5.0, "worst group deviates {max_sigma} standard errors");
    }

    #[test]
    fn split_is_exhaustive_disjoint_and_deterministic() {
        let config = FunnelConfig {
            ambiguity_fraction: 0.2,
            ambiguity_group_size: 4,
            ..small_config(1000, 8)
        };
        let data = inject_ambiguity(generate(&config).unwrap(), &config).unwrap();
        let (train, test) = split(&data, 0.8, 42).unwrap();
        assert_eq!(train.len() + test.len(), data.len());
        let mut ids: Vec<u64> =
            train.iter().chain(&test).map(|e| e.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), data.len());
        // groups kept whole
        let train_groups: std::collections::BTreeSet<u64> =
            train.iter().filter_map(|e| e.group_id).collect();
        let test_groups: std::collections::BTreeSet<u64> =
            test.iter().filter_map(|e| e.group_id).collect();
        assert!(train_groups.is_disjoint(&test_groups));
        // train side within one unit of the requested fraction of singletons
        assert!((train.len() as f64 - 800.0).abs() <= config.ambiguity_group_size as f64);
        let again = split(&data, 0.8, 42).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, test);
        assert_ne!(split(&data, 0.8, 43).unwrap().0, train);
    }

    #[test]
    fn split_rejects_degenerate_fraction() {
        let data = generate(&small_config(10, 1)).unwrap();
        assert!(split(&data, 0.0, 1).is_err());
        assert!(split(&data, 1.0, 1).is_err());
    }

    #[test]
    fn csv_has_header_and_no_truth() {
        let data = generate(&small_config(5, 1)).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("id,f0,"));
        assert!(lines[0].ends_with("c2s_click,online,add_to_cart,deal,group_id"));
        assert!(!text.contains("truth"));
    }

    #[test]
    fn matrices_match_dataset_order() {
        let data = generate(&small_config(50, 2)).unwrap();
        let x = features_matrix(&data);
        let y = labels_matrix(&data);
        assert_eq!(x.dim(), (50, 16));
        assert_eq!(y.dim(), (50, 4));
        assert_eq!(x[[7, 3]], data[7].features[3]);
        assert_eq!(y[[7, 0]], f64::from(data[7].labels[0]));
    }
}
