//! Experiment families and their embedded acceptance checks.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use dyweight::coeffs::{classic_ab_rational, general_ab, quadrature_oracle};
use dyweight::solver::SolverError;
use dyweight::synthlab::{run_grid, GridReport, GridSpec, OptimizeSpec, Variant};
use dyweight::toydiff::{GaussianMixture, MixtureField};
use dyweight::trainer::{
    evaluate_ipndm, evaluate_params, generate_holdout, generate_pairs, terminal_loss, train_on,
    Calibration, EndpointStats, LossKind, TrainConfig, TrainError, TrainState, WeightInit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Command, ExperimentConfig, ToyConfig};
use crate::report::{num, opt, Chart, Check, RunReport, Series, Table};

/// Runs `config.command` on a worker pool sized by `config.workers`.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers())
        .build()
        .context("building worker pool")?;
    let start = Instant::now();
    let mut report = pool.install(|| match config.command.expect("validated") {
        Command::VerifyCoeffs => verify_coeffs(config),
        Command::SynthGrid => synth_grid(config),
        Command::TrainToy => train_toy(config),
        Command::AblateCalibration => ablate_calibration(config),
        Command::AblateOrder => ablate_order(config),
        Command::AblateInit => ablate_init(config),
        Command::CompareSupervision => compare_supervision(config),
    })?;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
// coefficient verification

fn uniform_taus(order: usize, h: f64) -> Vec<f64> {
    (1..order).map(|i| i as f64 * h).collect()
}

/// Normwise relative distance `max|a-b| / max|b|`.
fn rel_dist(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    num / den
}

pub fn verify_coeffs(config: &ExperimentConfig) -> Result<RunReport> {
    let c = &config.coeffs;
    let mut table = Table::new(&["check", "order", "cases", "max_error", "tol", "pass"]);
    let mut checks = Vec::new();

    for order in 2..=4 {
        let (nums, den) = classic_ab_rational(order)?;
        let exact: Vec<f64> = nums.iter().map(|&n| n as f64 / den as f64).collect();
        let mut worst: f64 = 0.0;
        for h in [1.0, 0.37, 2.5, -0.8] {
            let g = general_ab(order, h, &uniform_taus(order, h))?;
            for (a, b) in g.betas.iter().zip(&exact) {
                worst = worst.max((a - b).abs());
            }
        }
        let pass = worst <= c.classic_abs_tol;
        table.push(vec![
            "classic_recovery".into(),
            order.to_string(),
            "4".into(),
            num(worst),
            num(c.classic_abs_tol),
            pass.to_string(),
        ]);
        checks.push(Check::new(
            format!("classic recovery, order {order}"),
            pass,
            format!("max abs error {worst:.3e} (tol {:.0e})", c.classic_abs_tol),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for order in 2..=4 {
        let mut worst: f64 = 0.0;
        for _ in 0..c.draws {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let h = sign * rng.gen_range(0.05..1.0);
            let mut acc = 0.0;
            let taus: Vec<f64> = (1..order)
                .map(|_| {
                    acc += rng.gen_range(0.05..1.0);
                    sign * acc
                })
                .collect();
            let a = general_ab(order, h, &taus)?;
            let b = quadrature_oracle(order, h, &taus)?;
            worst = worst.max(rel_dist(&a.betas, &b.betas));
        }
        let pass = worst <= c.oracle_rel_tol;
        table.push(vec![
            "oracle_agreement".into(),
            order.to_string(),
            c.draws.to_string(),
            num(worst),
            num(c.oracle_rel_tol),
            pass.to_string(),
        ]);
        checks.push(Check::new(
            format!("quadrature oracle, order {order}"),
            pass,
            format!(
                "max relative error {worst:.3e} over {} draws (tol {:.0e})",
                c.draws, c.oracle_rel_tol
            ),
        ));
    }

    Ok(RunReport {
        report: table,
        checks,
        ..RunReport::default()
    })
}

// ---------------------------------------------------------------------------
// synthetic grid

/// Runs the configured grid plus the optional high-step AB-4 reference.
pub fn synth_report(config: &ExperimentConfig) -> GridReport {
    let s = &config.synth;
    let spec = GridSpec {
        dim: s.dim,
        k_values: s.k_values.clone(),
        s_values: s.s_values.clone(),
        orders: s.orders.clone(),
        runs: s.runs,
        base_seed: config.seed,
        optimize: s.optimize.then_some(OptimizeSpec {
            iterations: s.iterations,
            lr: s.lr,
        }),
        coupling: s.coupling,
    };
    let mut report = run_grid(&spec);
    if let Some(t) = s.teacher_steps {
        let teacher = run_grid(&GridSpec {
            s_values: vec![t],
            orders: vec![4],
            optimize: None,
            ..spec
        });
        report.rows.extend(teacher.rows);
        report.means.extend(teacher.means);
    }
    report
}

fn synth_checks(config: &ExperimentConfig, g: &GridReport) -> Vec<Check> {
    let s = &config.synth;
    let (k, sc) = (s.check_k, s.check_s);
    let mut checks = Vec::new();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3e}"))
            .collect::<Vec<_>>()
            .join(" > ")
    };
    let hierarchy = |k: usize, s_: usize| -> Option<Vec<f64>> {
        (1..=4).map(|o| g.mean(k, s_, o, Variant::Standard)).collect()
    };
    let strictly_down = |v: &[f64]| v.windows(2).all(|w| w[0] > w[1]);

    if let Some(v) = hierarchy(k, sc) {
        checks.push(Check::new(
            format!("order hierarchy at K={k}, S={sc}"),
            strictly_down(&v),
            format!("mean error AB-1..AB-4: {}", fmt(&v)),
        ));
    }
    let sweep: Vec<(usize, Vec<f64>)> = s
        .k_values
        .iter()
        .filter_map(|&kk| hierarchy(kk, sc).map(|v| (kk, v)))
        .collect();
    if !sweep.is_empty() {
        let bad: Vec<usize> = sweep
            .iter()
            .filter(|(_, v)| !strictly_down(v))
            .map(|(kk, _)| *kk)
            .collect();
        checks.push(Check::new(
            format!("order hierarchy at S={sc} for every K"),
            bad.is_empty(),
            if bad.is_empty() {
                format!("{} K values", sweep.len())
            } else {
                format!("violated at K={bad:?}")
            },
        ));
    }

    let s_min = s.s_values.iter().copied().min();
    let s_max = s.s_values.iter().copied().max();
    if let (Some(lo), Some(hi)) = (s_min, s_max) {
        if let (true, Some(a), Some(b)) = (
            lo < hi,
            g.mean(k, lo, 4, Variant::Standard),
            g.mean(k, hi, 4, Variant::Standard),
        ) {
            checks.push(Check::new(
                format!("AB-4 error falls with steps at K={k}"),
                a >= s.min_step_gap * b,
                format!("S={lo}: {a:.3e}, S={hi}: {b:.3e}, ratio {:.2} (need >= {})", a / b, s.min_step_gap),
            ));
        }
    }

    if s.optimize {
        for &o in &s.orders {
            if let (Some(std), Some(optd)) = (
                g.mean(k, sc, o, Variant::Standard),
                g.mean(k, sc, o, Variant::Optimized),
            ) {
                checks.push(Check::new(
                    format!("optimized beats standard, AB-{o} at K={k}, S={sc}"),
                    optd < std,
                    format!("optimized {optd:.3e} vs standard {std:.3e}"),
                ));
            }
        }
    }

    if let Some(t) = s.teacher_steps {
        for &kk in &s.k_values {
            let Some(teacher) = g.mean(kk, t, 4, Variant::Standard) else {
                continue;
            };
            let few = g
                .means
                .iter()
                .filter(|m| m.k == kk && m.s <= 20 && m.s != t)
                .map(|m| m.mean_rel_l2_error)
                .fold(f64::INFINITY, f64::min);
            checks.push(Check::new(
                format!("AB-4 at S={t} below {:.0e} and every S<=20 cell, K={kk}", s.teacher_tol),
                teacher < s.teacher_tol && teacher < few,
                format!("reference {teacher:.3e}, best few-step {few:.3e}"),
            ));
        }
    }
    checks
}

pub fn synth_grid(config: &ExperimentConfig) -> Result<RunReport> {
    let g = synth_report(config);
    let mut report = Table::new(&["K", "S", "order", "variant", "run_seed", "rel_l2_error", "failure"]);
    for r in &g.rows {
        report.push(vec![
            r.k.to_string(),
            r.s.to_string(),
            r.order.to_string(),
            r.variant.as_str().into(),
            r.run_seed.to_string(),
            num(r.rel_l2_error),
            r.failure.clone().unwrap_or_default(),
        ]);
    }
    let mut means = Table::new(&["K", "S", "order", "variant", "runs", "mean_rel_l2_error"]);
    for m in &g.means {
        means.push(vec![
            m.k.to_string(),
            m.s.to_string(),
            m.order.to_string(),
            m.variant.as_str().into(),
            m.runs.to_string(),
            num(m.mean_rel_l2_error),
        ]);
    }

    let s = &config.synth;
    let mut by_k = Chart {
        file: "error_vs_k.svg".into(),
        title: format!("mean relative error at S={}", s.check_s),
        x_label: "K".into(),
        y_label: "relative L2 error".into(),
        log_y: true,
        series: Vec::new(),
    };
    let mut by_s = Chart {
        file: "error_vs_s.svg".into(),
        title: format!("mean relative error at K={}", s.check_k),
        x_label: "S".into(),
        y_label: "relative L2 error".into(),
        log_y: true,
        series: Vec::new(),
    };
    for variant in [Variant::Standard, Variant::Optimized] {
        for &o in &s.orders {
            let label = format!("AB-{o} {}", variant.as_str());
            let pk: Vec<(f64, f64)> = s
                .k_values
                .iter()
                .filter_map(|&k| g.mean(k, s.check_s, o, variant).map(|m| (k as f64, m)))
                .collect();
            let ps: Vec<(f64, f64)> = s
                .s_values
                .iter()
                .filter_map(|&st| g.mean(s.check_k, st, o, variant).map(|m| (st as f64, m)))
                .collect();
            if !pk.is_empty() {
                by_k.series.push(Series {
                    label: label.clone(),
                    points: pk,
                });
            }
            if !ps.is_empty() {
                by_s.series.push(Series { label, points: ps });
            }
        }
    }

    Ok(RunReport {
        report,
        means: Some(means),
        checks: synth_checks(config, &g),
        charts: vec![by_k, by_s],
        ..RunReport::default()
    })
}

// ---------------------------------------------------------------------------
// toy distillation

pub fn load_mixture(toy: &ToyConfig) -> Result<GaussianMixture> {
    match &toy.mixture {
        None => Ok(GaussianMixture::two_modes()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading mixture {}", path.display()))?;
            GaussianMixture::from_json(&text).map_err(|e| anyhow!("mixture {}: {e}", path.display()))
        }
    }
}

/// One labelled training configuration of a toy experiment.
#[derive(Debug, Clone)]
pub struct ToySpec {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub label: String,
    /// Config actually used (learning rate after any retries).
    pub config: TrainConfig,
    pub attempts: usize,
    pub state: Option<TrainState>,
    pub terminal_loss: Option<f64>,
    pub holdout: Option<EndpointStats>,
    pub ipndm: Option<EndpointStats>,
    pub failure: Option<String>,
}

impl ToyRun {
    pub fn best_loss(&self) -> Option<f64> {
        self.state.as_ref().map(|s| s.best_loss)
    }

    pub fn final_dispersion(&self) -> Option<f64> {
        self.state.as_ref().and_then(|s| s.dispersion_history.last().copied())
    }
}

fn is_time_floor(e: &TrainError) -> bool {
    matches!(e, TrainError::Solver(SolverError::TimeFloor { .. }))
}

/// Trains one configuration. A run that diverges, or whose best parameters only work
/// with clamped query times, is retried with the learning rate halved (at most
/// `max_retries` times); the last outcome is recorded either way.
pub fn run_toy(field: &MixtureField<'_>, spec: &ToySpec, max_retries: usize) -> ToyRun {
    let mut out = ToyRun {
        label: spec.label.clone(),
        config: spec.config.clone(),
        attempts: 0,
        state: None,
        terminal_loss: None,
        holdout: None,
        ipndm: None,
        failure: None,
    };
    let prepared = (|| -> Result<_, TrainError> {
        spec.config.validate()?;
        let pairs = generate_pairs(field, &spec.config)?;
        let holdout = generate_holdout(field, &spec.config)?;
        let ipndm = evaluate_ipndm(field, &spec.config, &holdout)?;
        Ok((pairs, holdout, ipndm))
    })();
    let (pairs, holdout, ipndm) = match prepared {
        Ok(p) => p,
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    out.ipndm = Some(ipndm);

    let lr0 = spec.config.lr();
    for attempt in 0..=max_retries {
        let mut cfg = spec.config.clone();
        cfg.lr_base = Some(lr0 / 2f64.powi(attempt as i32));
        out.attempts = attempt + 1;
        out.config = cfg.clone();
        let last = attempt == max_retries;
        let state = match train_on(field, &cfg, &pairs) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}: attempt {} failed: {e}", spec.label, attempt + 1);
                if last {
                    out.state = None;
                    out.failure = Some(e.to_string());
                    return out;
                }
                continue;
            }
        };
        let eval = evaluate_params(field, &cfg, &state.best_params, &holdout);
        out.terminal_loss = terminal_loss(field, &cfg, &state.best_params, &pairs).ok();
        out.state = Some(state);
        match eval {
            Ok(stats) => {
                out.holdout = Some(stats);
                out.failure = None;
                return out;
            }
            Err(e) if is_time_floor(&e) && !last => {
                log::warn!("{}: attempt {} unevaluable: {e}", spec.label, attempt + 1);
            }
            Err(e) => {
                out.failure = Some(e.to_string());
                return out;
            }
        }
    }
    out
}

/// Runs every spec for each configured seed, in parallel, preserving order.
pub fn run_toy_specs(config: &ExperimentConfig, specs: &[ToySpec]) -> Result<Vec<ToyRun>> {
    let mixture = load_mixture(&config.toy)?;
    let field = mixture.drift_field();
    let jobs: Vec<ToySpec> = (0..config.toy.runs as u64)
        .flat_map(|r| {
            specs.iter().map(move |s| {
                let mut s = s.clone();
                s.config.seed = config.seed.wrapping_add(r);
                s
            })
        })
        .collect();
    Ok(jobs
        .par_iter()
        .map(|s| run_toy(&field, s, config.toy.max_lr_retries))
        .collect())
}

const TOY_HEADER: [&str; 22] = [
    "experiment",
    "label",
    "seed",
    "nfe",
    "order",
    "weight_init",
    "schedule_init",
    "loss_kind",
    "shifting",
    "scaling",
    "lr",
    "attempts",
    "initial_loss",
    "best_loss",
    "terminal_loss",
    "final_dispersion",
    "clamped_queries",
    "holdout_mse",
    "holdout_mean_l2",
    "ipndm_holdout_mse",
    "ipndm_holdout_mean_l2",
    "failure",
];

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

#[derive(Serialize)]
struct ParamsEntry<'a> {
    label: &'a str,
    seed: u64,
    lr: f64,
    best_params: &'a dyweight::SolverParams,
    final_params: &'a dyweight::SolverParams,
}

/// Per-label means over seeds (successful runs only).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToyMean {
    pub runs: usize,
    pub best_loss: f64,
    pub terminal_loss: f64,
    pub final_dispersion: f64,
    pub holdout_mse: f64,
    pub holdout_mean_l2: f64,
    pub ipndm_mean_l2: f64,
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = vals.collect::<Option<Vec<f64>>>().unwrap_or_default();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn toy_means(runs: &[ToyRun]) -> BTreeMap<String, ToyMean> {
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|l| {
            let rs: Vec<&ToyRun> = runs.iter().filter(|r| r.label == l).collect();
            // a failed run poisons the label's mean (NaN), so checks on it fail
            let m = ToyMean {
                runs: rs.len(),
                best_loss: mean_of(rs.iter().map(|r| r.failure.is_none().then(|| r.best_loss()).flatten())),
                terminal_loss: mean_of(rs.iter().map(|r| r.terminal_loss)),
                final_dispersion: mean_of(rs.iter().map(|r| r.final_dispersion())),
                holdout_mse: mean_of(rs.iter().map(|r| r.holdout.map(|h| h.mse))),
                holdout_mean_l2: mean_of(rs.iter().map(|r| r.holdout.map(|h| h.mean_l2))),
                ipndm_mean_l2: mean_of(rs.iter().map(|r| r.ipndm.map(|h| h.mean_l2))),
            };
            (l.to_string(), m)
        })
        .collect()
}

/// Builds the common toy report from finished runs; `checks` are appended by the caller.
pub fn toy_report(command: Command, runs: &[ToyRun]) -> Result<RunReport> {
    let mut report = Table::new(&TOY_HEADER);
    let mut curve = Table::new(&["label", "seed", "iteration", "lr", "loss", "best_loss"]);
    let mut params = Vec::new();
    let mut chart = Chart {
        file: "loss_curve.svg".into(),
        title: format!("{} training loss", command.as_str()),
        x_label: "iteration".into(),
        y_label: "loss".into(),
        log_y: true,
        series: Vec::new(),
    };
    for r in runs {
        let c = &r.config;
        let s = r.state.as_ref();
        report.push(vec![
            command.as_str().into(),
            r.label.clone(),
            c.seed.to_string(),
            c.student_steps.to_string(),
            c.order.to_string(),
            enum_name(&c.weight_init),
            enum_name(&c.schedule_init),
            enum_name(&c.loss_kind),
            c.calibration.shifting.to_string(),
            c.calibration.scaling.to_string(),
            num(c.lr()),
            r.attempts.to_string(),
            opt(s.map(|s| s.initial_loss)),
            opt(r.best_loss()),
            opt(r.terminal_loss),
            opt(r.final_dispersion()),
            s.map(|s| s.clamped_queries.to_string()).unwrap_or_default(),
            opt(r.holdout.map(|h| h.mse)),
            opt(r.holdout.map(|h| h.mean_l2)),
            opt(r.ipndm.map(|h| h.mse)),
            opt(r.ipndm.map(|h| h.mean_l2)),
            r.failure.clone().unwrap_or_default(),
        ]);
        if let Some(s) = s {
            let mut best = f64::INFINITY;
            let mut pts = Vec::with_capacity(s.loss_history.len());
            for (i, (&loss, &lr)) in s.loss_history.iter().zip(&s.lr_history).enumerate() {
                best = best.min(loss);
                curve.push(vec![
                    r.label.clone(),
                    c.seed.to_string(),
                    i.to_string(),
                    num(lr),
                    num(loss),
                    num(best),
                ]);
                pts.push((i as f64, loss));
            }
            chart.series.push(Series {
                label: format!("{} (seed {})", r.label, c.seed),
                points: pts,
            });
            params.push(ParamsEntry {
                label: &r.label,
                seed: c.seed,
                lr: c.lr(),
                best_params: &s.best_params,
                final_params: &s.params,
            });
        }
    }
    let mut means = Table::new(&[
        "label",
        "runs",
        "best_loss",
        "terminal_loss",
        "final_dispersion",
        "holdout_mse",
        "holdout_mean_l2",
        "ipndm_holdout_mean_l2",
    ]);
    for (label, m) in toy_means(runs) {
        means.push(vec![
            label,
            m.runs.to_string(),
            num(m.best_loss),
            num(m.terminal_loss),
            num(m.final_dispersion),
            num(m.holdout_mse),
            num(m.holdout_mean_l2),
            num(m.ipndm_mean_l2),
        ]);
    }
    Ok(RunReport {
        report,
        means: Some(means),
        loss_curve: Some(curve),
        params: Some(serde_json::to_value(&params)?),
        charts: vec![chart],
        ..RunReport::default()
    })
}

fn base_train(config: &ExperimentConfig, nfe: usize) -> TrainConfig {
    TrainConfig {
        student_steps: nfe,
        seed: config.seed,
        ..config.train.clone()
    }
}

fn get<'a>(means: &'a BTreeMap<String, ToyMean>, label: &str) -> Result<&'a ToyMean> {
    means.get(label).ok_or_else(|| anyhow!("missing run `{label}`"))
}

pub fn train_toy_checks(config: &ExperimentConfig, means: &BTreeMap<String, ToyMean>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for &nfe in &config.toy.nfes {
        let m = get(means, &format!("nfe{nfe}"))?;
        let gain = 1.0 - m.holdout_mean_l2 / m.ipndm_mean_l2;
        checks.push(Check::new(
            format!("learned solver beats iPNDM at NFE={nfe}"),
            m.holdout_mean_l2 < m.ipndm_mean_l2,
            format!(
                "mean endpoint L2 {:.4e} vs {:.4e} ({:.1}% lower)",
                m.holdout_mean_l2,
                m.ipndm_mean_l2,
                100.0 * gain
            ),
        ));
        if nfe == config.toy.improvement_nfe {
            checks.push(Check::new(
                format!("improvement at NFE={nfe} >= {:.0}%", 100.0 * config.toy.min_improvement),
                gain >= config.toy.min_improvement,
                format!("{:.1}%", 100.0 * gain),
            ));
        }
    }
    Ok(checks)
}

pub fn train_toy(config: &ExperimentConfig) -> Result<RunReport> {
    let specs: Vec<ToySpec> = config
        .toy
        .nfes
        .iter()
        .map(|&n| ToySpec {
            label: format!("nfe{n}"),
            config: base_train(config, n),
        })
        .collect();
    let runs = run_toy_specs(config, &specs)?;
    let mut report = toy_report(Command::TrainToy, &runs)?;
    report.checks = train_toy_checks(config, &toy_means(&runs))?;
    Ok(report)
}

pub const CALIBRATION_LABELS: [(&str, bool, bool); 4] = [
    ("full", true, true),
    ("shift-only", true, false),
    ("scale-only", false, true),
    ("none", false, false),
];

pub fn calibration_checks(means: &BTreeMap<String, ToyMean>) -> Result<Vec<Check>> {
    let l = |k: &str| get(means, k).map(|m| m.best_loss);
    let (full, shift, scale, none) = (l("full")?, l("shift-only")?, l("scale-only")?, l("none")?);
    let d_on = get(means, "full")?.final_dispersion;
    let d_off = get(means, "scale-only")?.final_dispersion;
    Ok(vec![
        Check::new(
            "full <= shift-only <= none",
            full <= shift && shift <= none,
            format!("{full:.4e}, {shift:.4e}, {none:.4e}"),
        ),
        Check::new(
            "full <= scale-only <= none",
            full <= scale && scale <= none,
            format!("{full:.4e}, {scale:.4e}, {none:.4e}"),
        ),
        Check::new(
            "dispersion with shifting <= without",
            d_on <= d_off,
            format!("terminal-iteration dispersion {d_on:.4} (full) vs {d_off:.4} (scale-only)"),
        ),
    ])
}

pub fn ablate_calibration(config: &ExperimentConfig) -> Result<RunReport> {
    let specs: Vec<ToySpec> = CALIBRATION_LABELS
        .iter()
        .map(|&(label, shifting, scaling)| ToySpec {
            label: label.into(),
            config: TrainConfig {
                calibration: Calibration { shifting, scaling },
                ..base_train(config, config.toy.calibration_nfe)
            },
        })
        .collect();
    let runs = run_toy_specs(config, &specs)?;
    let mut report = toy_report(Command::AblateCalibration, &runs)?;
    report.checks = calibration_checks(&toy_means(&runs))?;
    Ok(report)
}

/// Orders of the order ablation: the configured list plus K = N.
pub fn ablation_orders(toy: &ToyConfig) -> Vec<usize> {
    let mut ks = toy.orders.clone();
    if !ks.contains(&toy.order_nfe) {
        ks.push(toy.order_nfe);
    }
    ks
}

pub fn order_checks(toy: &ToyConfig, means: &BTreeMap<String, ToyMean>) -> Result<Vec<Check>> {
    let ks = ablation_orders(toy);
    let losses: Vec<(usize, f64)> = ks
        .iter()
        .map(|&k| get(means, &format!("K{k}")).map(|m| (k, m.best_loss)))
        .collect::<Result<_>>()?;
    let (best_k, best) = losses
        .iter()
        .copied()
        .fold((0, f64::INFINITY), |acc, (k, l)| if l < acc.1 { (k, l) } else { acc });
    let listing = losses
        .iter()
        .map(|(k, l)| format!("K={k}: {l:.4e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let n = toy.order_nfe;
    let k3 = get(means, "K3")?.best_loss;
    let kn = get(means, &format!("K{n}"))?.best_loss;
    Ok(vec![
        Check::new(
            "best order is 3 or 4",
            best.is_finite() && (best_k == 3 || best_k == 4),
            format!("best K={best_k}; {listing}"),
        ),
        Check::new(
            format!("K=N={n} worse than K=3"),
            kn > k3,
            format!("{kn:.4e} vs {k3:.4e}"),
        ),
    ])
}

pub fn ablate_order(config: &ExperimentConfig) -> Result<RunReport> {
    let specs: Vec<ToySpec> = ablation_orders(&config.toy)
        .into_iter()
        .map(|k| ToySpec {
            label: format!("K{k}"),
            config: TrainConfig {
                order: k,
                ..base_train(config, config.toy.order_nfe)
            },
        })
        .collect();
    let runs = run_toy_specs(config, &specs)?;
    let mut report = toy_report(Command::AblateOrder, &runs)?;
    report.checks = order_checks(&config.toy, &toy_means(&runs))?;
    Ok(report)
}

pub const INIT_LABELS: [(&str, WeightInit); 3] = [
    ("adams-bashforth", WeightInit::AdamsBashforth),
    ("euler", WeightInit::Euler),
    ("uniform", WeightInit::Uniform),
];

pub fn init_checks(means: &BTreeMap<String, ToyMean>) -> Result<Vec<Check>> {
    let ab = get(means, "adams-bashforth")?.best_loss;
    let eu = get(means, "euler")?.best_loss;
    let un = get(means, "uniform")?.best_loss;
    Ok(vec![Check::new(
        "AB init <= Euler init <= Uniform init",
        ab <= eu && eu <= un,
        format!("{ab:.4e}, {eu:.4e}, {un:.4e}"),
    )])
}

pub fn ablate_init(config: &ExperimentConfig) -> Result<RunReport> {
    let specs: Vec<ToySpec> = INIT_LABELS
        .iter()
        .map(|&(label, w)| ToySpec {
            label: label.into(),
            config: TrainConfig {
                weight_init: w,
                ..base_train(config, config.toy.init_nfe)
            },
        })
        .collect();
    let runs = run_toy_specs(config, &specs)?;
    let mut report = toy_report(Command::AblateInit, &runs)?;
    report.checks = init_checks(&toy_means(&runs))?;
    Ok(report)
}

pub fn supervision_checks(means: &BTreeMap<String, ToyMean>) -> Result<Vec<Check>> {
    let e = get(means, "endpoint")?.terminal_loss;
    let p = get(means, "path")?.terminal_loss;
    Ok(vec![Check::new(
        "endpoint-trained terminal loss < path-trained",
        e < p,
        format!("{e:.4e} vs {p:.4e}"),
    )])
}

pub fn compare_supervision(config: &ExperimentConfig) -> Result<RunReport> {
    let specs: Vec<ToySpec> = [("endpoint", LossKind::Endpoint), ("path", LossKind::Path)]
        .iter()
        .map(|&(label, loss_kind)| ToySpec {
            label: label.into(),
            config: TrainConfig {
                loss_kind,
                ..base_train(config, config.toy.supervision_nfe)
            },
        })
        .collect();
    let runs = run_toy_specs(config, &specs)?;
    let mut report = toy_report(Command::CompareSupervision, &runs)?;
    report.checks = supervision_checks(&toy_means(&runs))?;
    Ok(report)
}

/// Fails fast on an unknown command name (for callers outside clap).
pub fn parse_command(name: &str) -> Result<Command> {
    use clap::ValueEnum;
    match Command::from_str(name, false) {
        Ok(c) => Ok(c),
        Err(_) => bail!("unknown command `{name}`"),
    }
}
