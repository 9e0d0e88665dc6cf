//! Command-line pipeline driver: data generation, training, posterior
//! fitting, sampled inference, interception, distillation, closed-form
//! verification, evaluation, and benchmarking.
//!
//! All stages read one TOML config (every field defaulted, unknown keys
//! rejected), write their artifacts into the output directory, and echo the
//! effective config there. Output files carry the config hash and seed that
//! produced them; no subcommand mutates its inputs. Exit codes: 0 success,
//! 1 usage/config error, 2 missing upstream artifact, 3 runtime failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array2;

use daum::checkpoint::{self, Checkpoint};
use daum::config::{PassRule, RunConfig};
use daum::distill::train_student;
use daum::error::{Error, Result};
use daum::evalbench::{
    self, latency_bench, linear_r2, residual_passing_experiment, uncertainty_histogram_compare,
    DEAL_TASK,
};
use daum::inference::{predict_batch_with_uncertainty, select_passed, UncertaintyReport};
use daum::intercept::{combine_score_uncertainty, expected_reward, rank_by_keys, MetricScore};
use daum::ple::PleNetwork;
use daum::swag::{fit_posterior, SnapshotBuffer};
use daum::synth::{self, Example};
use daum::theory;
use daum::train::{mean_multitask_bce, train_ple};

#[derive(Parser)]
#[command(name = "daum", version, about = "Uncertainty-aware funnel-model pipeline")]
struct Cli {
    /// Run configuration TOML; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config overrides, e.g. --set train.epochs=8 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic funnel dataset and its train/test split.
    GenData,
    /// Train the multi-task teacher; keeps late-epoch weight snapshots.
    Train,
    /// Fit the weight posterior from the training snapshots.
    SwagFit,
    /// Sampled inference with per-task predictive means and variances.
    Infer,
    /// Budgeted pass/intercept decisions from the inference reports.
    Intercept,
    /// Train the single-pass student on labels plus teacher variances.
    Distill,
    /// Verify the closed-form variance and neighbor-influence formulas.
    Theory,
    /// Passing experiments and teacher/student uncertainty comparison.
    Eval,
    /// Latency benchmark (timings are inherently non-deterministic).
    Bench,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version paths are successes, not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => 1,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::State(msg) if msg.starts_with("missing artifact") => 2,
        _ => 3,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let hash = config.sha256()?;
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("effective-config.toml"), config.to_toml()?)?;
    match cli.cmd {
        Cmd::GenData => gen_data(&config, &cli.out, &hash),
        Cmd::Train => cmd_train(&config, &cli.out, &hash),
        Cmd::SwagFit => cmd_swag_fit(&config, &cli.out, &hash),
        Cmd::Infer => cmd_infer(&config, &cli.out, &hash),
        Cmd::Intercept => cmd_intercept(&config, &cli.out, &hash),
        Cmd::Distill => cmd_distill(&config, &cli.out, &hash),
        Cmd::Theory => cmd_theory(&config, &cli.out, &hash),
        Cmd::Eval => cmd_eval(&config, &cli.out, &hash),
        Cmd::Bench => cmd_bench(&config, &cli.out, &hash),
    }
}

// ---------------------------------------------------------------------------
// config loading with overrides

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::config(format!("config file not found: {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?,
        None => String::new(),
    };
    let mut value: toml::Value = toml::from_str(&text)
        .map_err(|e| Error::config(format!("config parse: {e}")))?;
    for spec in &cli.overrides {
        apply_override(&mut value, spec)?;
    }
    let config: RunConfig = value
        .try_into()
        .map_err(|e| Error::config(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{spec}` is not KEY=VALUE")))?;
    // parse the value as a TOML literal; fall back to a bare string
    let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
        .ok()
        .and_then(|t: toml::Table| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key `{key}` crosses a non-table")))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::config(format!("empty override key in `{spec}`")))
}

// ---------------------------------------------------------------------------
// shared artifact plumbing

fn meta_line(artifact: &str, hash: &str, seed: u64) -> String {
    format!("{{\"_meta\":{{\"artifact\":\"{artifact}\",\"config_sha256\":\"{hash}\",\"seed\":{seed}}}}}\n")
}

fn csv_meta(hash: &str, seed: u64) -> String {
    format!("# config_sha256={hash} seed={seed}\n")
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::state(format!(
            "missing artifact {}; run `daum {hint}` first",
            path.display()
        )));
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with("{\"_meta\""))
        .map(|l| format!("{l}\n"))
        .collect();
    synth::read_ndjson(Cursor::new(body))
}

fn read_reports(path: &Path) -> Result<Vec<UncertaintyReport>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("{\"_meta\""))
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(format!("report line: {e}")))
        })
        .collect()
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path, hash: &str, seed: u64) -> Result<()> {
    let mut text = checkpoint::to_string(ckpt)?;
    // provenance trailer; ignored by the parser, demanded of every output file
    write!(text, "#config_sha256 {hash}\n#seed {seed}\n").unwrap();
    fs::write(path, text)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("summary render: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn matrices(dataset: &[Example]) -> (Array2<f64>, Array2<f64>, Vec<u64>) {
    let x = synth::features_matrix(dataset);
    let y = synth::labels_matrix(dataset);
    let ids = dataset.iter().map(|e| e.id).collect();
    (x, y, ids)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// subcommands

fn gen_data(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let seed = config.data.seed;
    let dataset = synth::inject_ambiguity(synth::generate(&config.data)?, &config.data)?;
    let (train, test) = synth::split(&dataset, config.split.train_fraction, config.split.seed)?;
    for (name, part) in [("dataset", &dataset), ("train", &train), ("test", &test)] {
        let mut buf = Vec::new();
        synth::write_ndjson(part, &mut buf)?;
        let mut text = meta_line(name, hash, seed);
        text.push_str(&String::from_utf8_lossy(&buf));
        fs::write(out.join(format!("{name}.ndjson")), text)?;
    }
    let mut csv = Vec::new();
    synth::write_csv(&dataset, &mut csv)?;
    fs::write(
        out.join("dataset.csv"),
        csv_meta(hash, seed) + &String::from_utf8_lossy(&csv),
    )?;
    let n = dataset.len() as f64;
    let rates: Vec<f64> = (0..4)
        .map(|t| dataset.iter().filter(|e| e.labels[t] == 1).count() as f64 / n)
        .collect();
    write_json(
        &out.join("gen_data_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": seed,
            "n_total": dataset.len(),
            "n_train": train.len(),
            "n_test": test.len(),
            "realized_rates": rates,
            "target_rates": config.data.target_rates,
        }),
    )
}

fn cmd_train(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let train_path = out.join("train.ndjson");
    require(&train_path, "gen-data")?;
    let dataset = read_dataset(&train_path)?;
    let (x, y, _) = matrices(&dataset);
    let mut net = PleNetwork::init(config.model.clone(), config.train.seed)?;
    let first_snapshot = config.train.epochs - config.swag.k_small;
    let mut snapshots = Vec::new();
    train_ple(&mut net, x.view(), y.view(), &config.train, |epoch, net| {
        if epoch >= first_snapshot {
            snapshots.push(net.params.clone());
        }
    })?;
    let snap_dir = out.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    for (i, params) in snapshots.iter().enumerate() {
        save_checkpoint(
            &Checkpoint::Ple { config: config.model.clone(), params: params.clone() },
            &snap_dir.join(format!("snap_{i}.ckpt")),
            hash,
            config.train.seed,
        )?;
    }
    save_checkpoint(
        &Checkpoint::Ple { config: config.model.clone(), params: net.params.clone() },
        &out.join("teacher.ckpt"),
        hash,
        config.train.seed,
    )?;
    let final_loss = mean_multitask_bce(&net, x.view(), y.view())?;
    write_json(
        &out.join("train_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": config.train.seed,
            "epochs": config.train.epochs,
            "n_train": dataset.len(),
            "n_snapshots": snapshots.len(),
            "final_train_bce": final_loss,
        }),
    )
}

fn cmd_swag_fit(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let snap_dir = out.join("snapshots");
    require(&snap_dir.join("snap_0.ckpt"), "train")?;
    let mut buffer = SnapshotBuffer::new(config.swag.k_small)?;
    for i in 0..config.swag.k_small {
        let path = snap_dir.join(format!("snap_{i}.ckpt"));
        require(&path, "train")?;
        let net = checkpoint::load_ple(&path)?;
        buffer.collect_snapshot(&net.params)?;
    }
    let posterior = fit_posterior(&buffer, config.swag.rank, config.swag.scope)?;
    save_checkpoint(
        &Checkpoint::Swag(posterior),
        &out.join("posterior.ckpt"),
        hash,
        config.train.seed,
    )?;
    write_json(
        &out.join("swag_fit_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": config.train.seed,
            "k_small": config.swag.k_small,
            "rank": config.swag.rank,
            "scope": format!("{:?}", config.swag.scope),
        }),
    )
}

fn cmd_infer(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let test_path = out.join("test.ndjson");
    require(&test_path, "gen-data")?;
    require(&out.join("teacher.ckpt"), "train")?;
    require(&out.join("posterior.ckpt"), "swag-fit")?;
    let net = checkpoint::load_ple(out.join("teacher.ckpt"))?;
    let posterior = checkpoint::load_swag(out.join("posterior.ckpt"))?;
    let dataset = read_dataset(&test_path)?;
    let (x, _, ids) = matrices(&dataset);
    let reports = predict_batch_with_uncertainty(
        &net,
        &posterior,
        x.view(),
        &ids,
        config.inference.m_samples,
        config.inference.seed,
    )?;
    let mut text = meta_line("reports", hash, config.inference.seed);
    for r in &reports {
        text.push_str(
            &serde_json::to_string(r).map_err(|e| Error::format(format!("report: {e}")))?,
        );
        text.push('\n');
    }
    fs::write(out.join("reports.ndjson"), text)?;
    Ok(())
}

fn cmd_intercept(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let reports_path = out.join("reports.ndjson");
    require(&reports_path, "infer")?;
    let reports = read_reports(&reports_path)?;
    if reports.iter().any(|r| r.mean.len() != 4) {
        return Err(Error::data(
            "interception expects four funnel tasks per report".to_string(),
        ));
    }
    let weight_sum: f64 = config.intercept.reward.weights.iter().sum();
    let mut rewards = Vec::with_capacity(reports.len());
    let mut scores = Vec::with_capacity(reports.len());
    for r in &reports {
        let t = [r.mean[0], r.mean[1], r.mean[2], r.mean[3]];
        let reward = expected_reward(&t, &config.intercept.reward)?;
        rewards.push(reward);
        scores.push(MetricScore::new(
            reward / weight_sum,
            r.var[config.inference.pass_task],
        )?);
    }
    let keys = combine_score_uncertainty(
        &scores,
        config.intercept.reward.uncertainty_pass_fraction,
    )?;
    let ranked = rank_by_keys(&keys);
    let n = reports.len();
    let rate = config.intercept.rate;
    let n_pass = if rate == 1.0 { 0 } else { ((1.0 - rate) * n as f64).ceil() as usize };
    let mut decisions = vec![0u8; n];
    for &i in ranked.iter().take(n_pass) {
        decisions[i] = 1;
    }
    let mut text = meta_line("intercept", hash, config.inference.seed);
    for (i, r) in reports.iter().enumerate() {
        text.push_str(&format!(
            "{{\"id\":{},\"decision\":{},\"reward\":{},\"tier\":{}}}\n",
            r.id, decisions[i], rewards[i], keys[i].tier
        ));
    }
    fs::write(out.join("intercept_decisions.ndjson"), text)?;
    write_json(
        &out.join("intercept_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": config.inference.seed,
            "rate": rate,
            "n_total": n,
            "n_passed": n_pass,
            "n_intercepted": n - n_pass,
            "n_uncertainty_tier": keys.iter().filter(|k| k.tier == 1).count(),
        }),
    )
}

fn cmd_distill(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let train_path = out.join("train.ndjson");
    require(&train_path, "gen-data")?;
    require(&out.join("teacher.ckpt"), "train")?;
    require(&out.join("posterior.ckpt"), "swag-fit")?;
    let net = checkpoint::load_ple(out.join("teacher.ckpt"))?;
    let posterior = checkpoint::load_swag(out.join("posterior.ckpt"))?;
    let dataset = read_dataset(&train_path)?;
    let (x, y, ids) = matrices(&dataset);
    let teacher_reports = predict_batch_with_uncertainty(
        &net,
        &posterior,
        x.view(),
        &ids,
        config.inference.m_samples,
        config.inference.seed,
    )?;
    let n_tasks = config.model.n_tasks;
    let teacher_var = Array2::from_shape_fn((dataset.len(), n_tasks), |(i, t)| {
        teacher_reports[i].var[t]
    });
    let (student, targets) = train_student(
        x.view(),
        y.view(),
        teacher_var.view(),
        &config.distill.student,
        &config.distill.train,
    )?;
    save_checkpoint(
        &Checkpoint::Student {
            config: config.distill.student.clone(),
            params: student.params.clone(),
        },
        &out.join("student.ckpt"),
        hash,
        config.distill.train.seed,
    )?;
    let final_loss = {
        let cache = student.forward_batch(x.view())?;
        student.joint_loss(&cache, y.view(), targets.u_prime.view())
    };
    write_json(
        &out.join("distill_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": config.distill.train.seed,
            "n_train": dataset.len(),
            "m_samples": config.inference.m_samples,
            "gamma": targets.gamma,
            "final_joint_loss": final_loss,
        }),
    )
}

fn cmd_theory(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let seed = config.theory.seed;
    let rows = theory::stationary_variance_sweep(config.theory.steps, seed)?;
    let mut csv = csv_meta(hash, seed);
    csv.push_str("eta,c,q,predicted_var,empirical_var,relative_error\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.eta, r.c, r.q, r.predicted_var, r.empirical_var, r.relative_error
        ));
    }
    fs::write(out.join("theory_sweep.csv"), csv)?;

    // neighbor-influence trials: unit-norm phi1 with a nearby phi2 (the
    // regime the first-order formula describes), target rates bounded away
    // from one half and from each other
    use rand::Rng;
    let mut rng = daum::rng::rng_for(seed, 0x4e18);
    let n_trials = 1000;
    let mut sign_agree = 0usize;
    let mut rel_gaps = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let dim = 8;
        let phi1 = theory::feature_with_norm_sq(1.0, dim, rng.gen());
        let phi2: Vec<f64> =
            phi1.iter().map(|v| v + rng.gen_range(-0.02..0.02)).collect();
        let q1 = if rng.gen_bool(0.5) {
            rng.gen_range(0.15..0.45)
        } else {
            rng.gen_range(0.55..0.85)
        };
        let mut q2: f64 = rng.gen_range(0.15..0.85);
        while (q2 - q1).abs() < 0.05 {
            q2 = rng.gen_range(0.15..0.85);
        }
        let eta = 1e-3;
        let w0 = theory::weights_matching(&phi1, q1)?;
        let predicted = theory::neighbor_influence_predicted(&phi1, &phi2, q1, q2, eta)?;
        let measured = theory::neighbor_influence_measured(&phi1, &phi2, q1, q2, eta, &w0)?;
        if predicted == 0.0 || measured == 0.0 || predicted.signum() == measured.signum() {
            sign_agree += 1;
        }
        if measured != 0.0 {
            rel_gaps.push(((predicted - measured) / measured).abs());
        }
    }
    rel_gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_sweep_err = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    write_json(
        &out.join("theory_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": seed,
            "steps": config.theory.steps,
            "sweep_cells": rows.len(),
            "sweep_max_relative_error": max_sweep_err,
            "neighbor_trials": n_trials,
            "neighbor_sign_agreement": sign_agree as f64 / n_trials as f64,
            "neighbor_median_first_order_gap": rel_gaps[rel_gaps.len() / 2],
        }),
    )
}

fn cmd_eval(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let test_path = out.join("test.ndjson");
    let reports_path = out.join("reports.ndjson");
    require(&test_path, "gen-data")?;
    require(&reports_path, "infer")?;
    let test = read_dataset(&test_path)?;
    let reports = read_reports(&reports_path)?;
    let seed = config.inference.seed;
    let pass_task = config.eval.pass_task;
    let eval_task = config.eval.eval_task;

    let residual =
        residual_passing_experiment(&test, &reports, pass_task, eval_task, &config.eval.ratios)?;
    let mut csv = csv_meta(hash, seed);
    csv.push_str(
        "ratio,auc_roc,auc_pr,directly_passed_positives,residual_classified_positives,total_downstream_positives\n",
    );
    for r in &residual.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.ratio,
            fmt_opt_f64(r.auc_roc),
            fmt_opt_f64(r.auc_pr),
            r.directly_passed_positives,
            r.residual_classified_positives,
            r.total_downstream_positives
        ));
    }
    fs::write(out.join("eval_residual.csv"), csv)?;

    // downstream totals: direct self-passing on the deal task vs indirect
    // passing driven by the configured source task
    let strategies = [("deal_self", DEAL_TASK), ("indirect", pass_task)];
    let mut csv = csv_meta(hash, seed);
    csv.push_str("strategy,ratio,directly_passed_positives,residual_classified_positives,total_downstream_positives\n");
    let mut downstream = Vec::new();
    for (name, task) in strategies {
        let curve = evalbench::downstream_positive_experiment(
            &test,
            &reports,
            task,
            &config.eval.ratios,
        )?;
        for r in &curve.rows {
            csv.push_str(&format!(
                "{name},{},{},{},{}\n",
                r.ratio,
                r.directly_passed_positives,
                r.residual_classified_positives,
                r.total_downstream_positives
            ));
        }
        downstream.push((name, curve));
    }
    fs::write(out.join("eval_downstream.csv"), csv)?;

    // equal-budget comparison: budgets realized by deal self-passing
    let mut budgets: Vec<usize> = downstream[0]
        .1
        .rows
        .iter()
        .map(|r| r.directly_passed_positives)
        .collect();
    budgets.sort_unstable();
    budgets.dedup();
    let rows = evalbench::fixed_passed_positives_experiment(
        &test,
        &reports,
        &[DEAL_TASK, pass_task],
        &budgets,
    )?;
    let mut csv = csv_meta(hash, seed);
    csv.push_str("pass_task,budget,ratio,total_downstream_positives\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.pass_task,
            r.budget,
            fmt_opt_f64(r.ratio),
            fmt_opt_usize(r.total_downstream_positives)
        ));
    }
    fs::write(out.join("eval_fixed_budget.csv"), csv)?;

    // teacher/student uncertainty comparison, when a student exists
    let student_path = out.join("student.ckpt");
    let mut student_summary = serde_json::json!({ "present": false });
    if student_path.exists() {
        let student = checkpoint::load_student(&student_path)?;
        let x = synth::features_matrix(&test);
        let (_, unc) = student.student_infer_batch(x.view())?;
        let teacher_u: Vec<f64> = reports.iter().map(|r| r.var[pass_task]).collect();
        let student_u: Vec<f64> = unc.column(pass_task).to_vec();
        let hist = uncertainty_histogram_compare(&teacher_u, &student_u, config.eval.n_bins)?;
        let mut csv = csv_meta(hash, seed);
        csv.push_str("bin_left,teacher_count,student_count\n");
        for i in 0..hist.bin_left.len() {
            csv.push_str(&format!(
                "{},{},{}\n",
                hist.bin_left[i], hist.teacher_counts[i], hist.student_counts[i]
            ));
        }
        fs::write(out.join("eval_histogram.csv"), csv)?;
        let ratio = match config.inference.pass_rule() {
            PassRule::Ratio(r) => r,
            PassRule::Threshold(_) => 0.1,
        };
        let teacher_pass = select_passed(&reports, pass_task, ratio)?;
        let n_pass = teacher_pass.iter().filter(|&&p| p).count();
        let mut order: Vec<usize> = (0..student_u.len()).collect();
        order.sort_by(|&a, &b| {
            student_u[b].partial_cmp(&student_u[a]).unwrap().then(a.cmp(&b))
        });
        let mut student_pass = vec![false; student_u.len()];
        for &i in order.iter().take(n_pass) {
            student_pass[i] = true;
        }
        let both = teacher_pass
            .iter()
            .zip(&student_pass)
            .filter(|(&a, &b)| a && b)
            .count();
        let either = teacher_pass
            .iter()
            .zip(&student_pass)
            .filter(|(&a, &b)| a || b)
            .count();
        let jaccard = if either == 0 { 1.0 } else { both as f64 / either as f64 };
        student_summary = serde_json::json!({
            "present": true,
            "spearman": hist.spearman,
            "constant_input": hist.constant_input,
            "pass_ratio": ratio,
            "pass_set_jaccard": jaccard,
        });
    }

    write_json(
        &out.join("eval_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": seed,
            "pass_task": pass_task,
            "eval_task": eval_task,
            "ratios": config.eval.ratios,
            "residual": residual.rows,
            "student": student_summary,
        }),
    )
}

fn cmd_bench(config: &RunConfig, out: &Path, hash: &str) -> Result<()> {
    let test_path = out.join("test.ndjson");
    require(&test_path, "gen-data")?;
    require(&out.join("teacher.ckpt"), "train")?;
    require(&out.join("posterior.ckpt"), "swag-fit")?;
    require(&out.join("student.ckpt"), "distill")?;
    let net = checkpoint::load_ple(out.join("teacher.ckpt"))?;
    let posterior = checkpoint::load_swag(out.join("posterior.ckpt"))?;
    let student = checkpoint::load_student(out.join("student.ckpt"))?;
    let test = read_dataset(&test_path)?;
    if test.is_empty() {
        return Err(Error::data("empty test set".to_string()));
    }
    let features = synth::features_matrix(&test);
    // tile rows until the requested batch size is reached
    let b = config.bench.batch_size;
    let x = Array2::from_shape_fn((b, features.ncols()), |(i, j)| {
        features[(i % features.nrows(), j)]
    });
    let headline = latency_bench(
        &net,
        &posterior,
        &student,
        x.view(),
        config.bench.m_samples,
        config.bench.repetitions,
        config.bench.warmups,
    )?;
    let mut teacher_ms = Vec::new();
    for &m in &config.bench.m_grid {
        let m = m.max(2); // sampled inference needs at least two draws
        let r = latency_bench(
            &net,
            &posterior,
            &student,
            x.view(),
            m,
            config.bench.repetitions,
            config.bench.warmups,
        )?;
        teacher_ms.push(r.teacher_ms_per_batch);
    }
    let ms: Vec<f64> = config.bench.m_grid.iter().map(|&m| m.max(2) as f64).collect();
    let r2 = linear_r2(&ms, &teacher_ms)?;
    let mut csv = csv_meta(hash, config.inference.seed);
    csv.push_str("m_samples,teacher_ms_per_batch\n");
    for (m, t) in ms.iter().zip(&teacher_ms) {
        csv.push_str(&format!("{m},{t}\n"));
    }
    fs::write(out.join("bench_m_scaling.csv"), csv)?;
    write_json(
        &out.join("bench_summary.json"),
        &serde_json::json!({
            "config_sha256": hash,
            "seed": config.inference.seed,
            "note": "wall-clock timings; not byte-reproducible across runs",
            "batch_size": headline.batch_size,
            "m_samples": headline.m_samples,
            "teacher_ms_per_batch": headline.teacher_ms_per_batch,
            "student_ms_per_batch": headline.student_ms_per_batch,
            "speedup": headline.speedup,
            "m_grid": ms,
            "m_grid_teacher_ms": teacher_ms,
            "m_scaling_r2": r2,
        }),
    )
}
