//! Metrics, passing experiments, uncertainty-distribution comparison, and the
//! teacher/student latency benchmark.
//!
//! AUC-ROC counts tied pairs as one half; AUC-PR is average precision with
//! descending-score, ascending-index ordering. The passing experiments remove
//! the top uncertainty quantile of a source task and score what remains.

use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::distill::StudentNet;
use crate::error::{Error, Result};
use crate::inference::{predict_batch_with_uncertainty, select_passed, UncertaintyReport};
use crate::ple::PleNetwork;
use crate::swag::SwagPosterior;
use crate::synth::Example;

/// Index of the deal task, the downstream objective of every passing
/// experiment.
pub const DEAL_TASK: usize = 3;

/// Probability a random positive outranks a random negative; ties count 1/2.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scores and labels differ in length".to_string()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain(
            "AUC-ROC undefined: both classes must be present".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    // rank sum of positives with average ranks over tie groups; numerator
    // stays an exact multiple of 1/2, matching the pairwise oracle bit for bit
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        for &k in &order[i..j] {
            if labels[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let num = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(num / (n_pos as f64 * n_neg as f64))
}

/// Average precision: mean of precision at each positive's rank, descending
/// scores with ties broken by index.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scores and labels differ in length".to_string()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(Error::domain("AUC-PR undefined without positives".to_string()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank0, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            tp += 1;
            sum += tp as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// One row of a passing experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassingRow {
    pub ratio: f64,
    /// Residual-metric cells are `None` when the remainder is single-class.
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub directly_passed_positives: usize,
    pub residual_classified_positives: usize,
    pub total_downstream_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassingCurve {
    pub pass_task: usize,
    pub eval_task: usize,
    pub rows: Vec<PassingRow>,
}

fn check_coverage(test: &[Example], reports: &[UncertaintyReport]) -> Result<()> {
    if test.len() != reports.len() {
        return Err(Error::data(format!(
            "{} reports do not cover {} test examples",
            reports.len(),
            test.len()
        )));
    }
    for (ex, r) in test.iter().zip(reports) {
        if ex.id != r.id {
            return Err(Error::data(format!(
                "report id {} does not match example id {}",
                r.id, ex.id
            )));
        }
    }
    Ok(())
}

fn passing_row(
    test: &[Example],
    reports: &[UncertaintyReport],
    pass_task: usize,
    eval_task: usize,
    ratio: f64,
) -> Result<PassingRow> {
    let passed = select_passed(reports, pass_task, ratio)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut direct = 0usize;
    let mut residual_classified = 0usize;
    for ((ex, r), &p) in test.iter().zip(reports).zip(&passed) {
        if p {
            if ex.labels[DEAL_TASK] == 1 {
                direct += 1;
            }
        } else {
            scores.push(r.mean[eval_task]);
            labels.push(ex.labels[eval_task]);
            if ex.labels[DEAL_TASK] == 1 && r.mean[DEAL_TASK] > 0.5 {
                residual_classified += 1;
            }
        }
    }
    let (roc, pr) = match (auc_roc(&scores, &labels), auc_pr(&scores, &labels)) {
        (Ok(a), Ok(b)) => (Some(a), Some(b)),
        _ => (None, None),
    };
    Ok(PassingRow {
        ratio,
        auc_roc: roc,
        auc_pr: pr,
        directly_passed_positives: direct,
        residual_classified_positives: residual_classified,
        total_downstream_positives: direct + residual_classified,
    })
}

/// Pass the top-`ratio` quantile by the source task's predictive variance and
/// score the remainder's predictions on `eval_task`.
pub fn residual_passing_experiment(
    test: &[Example],
    reports: &[UncertaintyReport],
    pass_task: usize,
    eval_task: usize,
    ratios: &[f64],
) -> Result<PassingCurve> {
    check_coverage(test, reports)?;
    let mut sorted = ratios.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rows = sorted
        .iter()
        .map(|&r| passing_row(test, reports, pass_task, eval_task, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(PassingCurve { pass_task, eval_task, rows })
}

/// Count deal positives passed directly plus those the remainder still
/// classifies (predicted deal probability above one half).
pub fn downstream_positive_experiment(
    test: &[Example],
    reports: &[UncertaintyReport],
    pass_task: usize,
    ratios: &[f64],
) -> Result<PassingCurve> {
    residual_passing_experiment(test, reports, pass_task, DEAL_TASK, ratios)
}

/// One strategy/budget cell of the fixed-passed-positives comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBudgetRow {
    pub pass_task: usize,
    pub budget: usize,
    /// Smallest pass ratio whose directly passed deal positives hit the
    /// budget; `None` when the budget is unreachable.
    pub ratio: Option<f64>,
    pub total_downstream_positives: Option<usize>,
}

/// For each passing strategy (ranking task), find the smallest pass count at
/// which exactly `budget` deal positives are passed directly, then report the
/// downstream total at that operating point.
pub fn fixed_passed_positives_experiment(
    test: &[Example],
    reports: &[UncertaintyReport],
    pass_tasks: &[usize],
    budgets: &[usize],
) -> Result<Vec<FixedBudgetRow>> {
    check_coverage(test, reports)?;
    let n = test.len();
    let mut rows = Vec::new();
    for &task in pass_tasks {
        // pass order: variance descending, ties by index (the same order a
        // ratio quantile uses)
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            reports[b].var[task]
                .partial_cmp(&reports[a].var[task])
                .unwrap()
                .then(a.cmp(&b))
        });
        // direct positives after passing k instances; unit steps, so every
        // reachable budget has a unique smallest k
        let mut direct_at = vec![0usize; n + 1];
        for k in 1..=n {
            direct_at[k] =
                direct_at[k - 1] + usize::from(test[order[k - 1]].labels[DEAL_TASK] == 1);
        }
        for &budget in budgets {
            let k = (0..=n).find(|&k| direct_at[k] == budget);
            match k {
                None => rows.push(FixedBudgetRow {
                    pass_task: task,
                    budget,
                    ratio: None,
                    total_downstream_positives: None,
                }),
                Some(k) => {
                    let mut residual_classified = 0usize;
                    for &i in &order[k..] {
                        if test[i].labels[DEAL_TASK] == 1 && reports[i].mean[DEAL_TASK] > 0.5 {
                            residual_classified += 1;
                        }
                    }
                    rows.push(FixedBudgetRow {
                        pass_task: task,
                        budget,
                        ratio: Some(k as f64 / n as f64),
                        total_downstream_positives: Some(budget + residual_classified),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks over ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("inputs differ in length".to_string()));
    }
    if a.len() < 2 {
        return Err(Error::argument("need at least two observations".to_string()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[x].partial_cmp(&v[y]).unwrap().then(x.cmp(&y)));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::domain(
            "correlation undefined for constant input".to_string(),
        ));
    }
    Ok(num / (va * vb).sqrt())
}

/// Equal-width histograms of teacher and student uncertainties over their
/// pooled range, plus the Spearman correlation (flagged when undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCompare {
    pub bin_left: Vec<f64>,
    pub bin_width: f64,
    pub teacher_counts: Vec<usize>,
    pub student_counts: Vec<usize>,
    pub spearman: Option<f64>,
    pub constant_input: bool,
}

pub fn uncertainty_histogram_compare(
    teacher: &[f64],
    student: &[f64],
    n_bins: usize,
) -> Result<HistogramCompare> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::shape(
            "teacher and student must cover the same non-empty instance set".to_string(),
        ));
    }
    if n_bins == 0 {
        return Err(Error::argument("n_bins must be >= 1".to_string()));
    }
    let pooled = teacher.iter().chain(student);
    let lo = pooled.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = pooled.cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let bin_of = |v: f64| -> usize {
        (((v - lo) / width) as usize).min(n_bins - 1)
    };
    let mut teacher_counts = vec![0usize; n_bins];
    let mut student_counts = vec![0usize; n_bins];
    for &v in teacher {
        teacher_counts[bin_of(v)] += 1;
    }
    for &v in student {
        student_counts[bin_of(v)] += 1;
    }
    let (rho, constant) = match spearman(teacher, student) {
        Ok(r) => (Some(r), false),
        Err(Error::Domain(_)) => (None, true),
        Err(e) => return Err(e),
    };
    Ok(HistogramCompare {
        bin_left: (0..n_bins).map(|i| lo + i as f64 * width).collect(),
        bin_width: width,
        teacher_counts,
        student_counts,
        spearman: rho,
        constant_input: constant,
    })
}

/// Median wall-clock per batch for M-sample teacher inference vs the
/// single-pass student. Run without concurrent load; timings are inherently
/// non-deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub teacher_ms_per_batch: f64,
    pub student_ms_per_batch: f64,
    pub batch_size: usize,
    pub m_samples: usize,
    pub speedup: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn latency_bench(
    teacher: &PleNetwork,
    posterior: &SwagPosterior,
    student: &StudentNet,
    x: ArrayView2<f64>,
    m_samples: usize,
    repetitions: usize,
    warmups: usize,
) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::argument("repetitions must be >= 1".to_string()));
    }
    let ids: Vec<u64> = (0..x.nrows() as u64).collect();
    let mut teacher_ms = Vec::with_capacity(repetitions);
    let mut student_ms = Vec::with_capacity(repetitions);
    for rep in 0..warmups + repetitions {
        let t0 = Instant::now();
        let reports = predict_batch_with_uncertainty(teacher, posterior, x, &ids, m_samples, 1)?;
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(&reports);
        if rep >= warmups {
            teacher_ms.push(dt);
        }
    }
    for rep in 0..warmups + repetitions {
        let t0 = Instant::now();
        let out = student.student_infer_batch(x)?;
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(&out);
        if rep >= warmups {
            student_ms.push(dt);
        }
    }
    let teacher_ms_per_batch = median(teacher_ms);
    let student_ms_per_batch = median(student_ms);
    Ok(LatencyReport {
        teacher_ms_per_batch,
        student_ms_per_batch,
        batch_size: x.nrows(),
        m_samples,
        speedup: teacher_ms_per_batch / student_ms_per_batch,
    })
}

/// Coefficient of determination of the least-squares line through (x, y).
pub fn linear_r2(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::argument(
            "need at least three matched points for a fit".to_string(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::domain("degenerate fit".to_string()));
    }
    Ok((sxy * sxy) / (sxx * syy))
}
