//! Teacher-student distillation of solver coefficients.
//!
//! A fixed set of noise draws is pushed through a high-step iPNDM teacher once; the
//! student coefficients are then fitted to the teacher endpoints (or to the teacher path)
//! with Adam under a linear-warmup + cosine learning-rate schedule. Gradients are central
//! finite differences over the active parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::classic_ab;
use crate::schedule::{
    build_schedule, ScheduleError, ScheduleKind, TimeSchedule, DEFAULT_RHO, DEFAULT_SIGMA_MAX,
    DEFAULT_SIGMA_MIN,
};
use crate::solver::{
    ab_sample, active_weights, dyweight_sample_with, DriftField, SampleOptions, SolverError,
    SolverParams, Start, TimeGuard,
};

/// Training aborts once the loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

const STREAM_TRAIN: u64 = 1;
const STREAM_HOLDOUT: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("iteration {iteration} outside 0..{iterations}")]
    IterationOutOfRange { iteration: usize, iterations: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("finite-difference probe {index} produced a non-finite loss")]
    NonFiniteProbe { index: usize },
    #[error("training diverged at iteration {iteration}: loss {loss} (initial {initial})")]
    Diverged { iteration: usize, loss: f64, initial: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Endpoint,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    AdamsBashforth,
    Euler,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub shifting: bool,
    pub scaling: bool,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            shifting: true,
            scaling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub teacher_steps: usize,
    pub teacher_order: usize,
    pub student_steps: usize,
    pub order: usize,
    pub pairs: usize,
    pub holdout_pairs: usize,
    pub iterations: usize,
    pub batch: usize,
    /// `None` picks [`default_lr`] for the student step count.
    pub lr_base: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_ratio: f64,
    pub warmup_start_factor: f64,
    pub cosine_min_ratio: f64,
    pub loss_kind: LossKind,
    pub path_substeps: usize,
    pub weight_init: WeightInit,
    pub schedule_init: ScheduleKind,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub calibration: Calibration,
    pub fd_rel_step: f64,
    /// Step whose drift dispersion is monitored; `None` uses the middle step.
    pub monitor_step: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            teacher_steps: 35,
            teacher_order: 4,
            student_steps: 5,
            order: 3,
            pairs: 256,
            holdout_pairs: 256,
            iterations: 2000,
            batch: 256,
            lr_base: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_ratio: 0.1,
            warmup_start_factor: 0.1,
            cosine_min_ratio: 0.01,
            loss_kind: LossKind::Endpoint,
            path_substeps: 5,
            weight_init: WeightInit::AdamsBashforth,
            schedule_init: ScheduleKind::PolynomialRho,
            rho: DEFAULT_RHO,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            calibration: Calibration::default(),
            fd_rel_step: 1e-6,
            monitor_step: None,
            seed: 0,
        }
    }
}

/// Base learning rate by student step count: fewer steps tolerate larger rates.
pub fn default_lr(student_steps: usize) -> f64 {
    match student_steps {
        0..=5 => 5e-2,
        6..=9 => 1e-2,
        _ => 1e-3,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.student_steps < 2 {
            return fail(format!("student_steps must be >= 2, got {}", self.student_steps));
        }
        if self.teacher_steps < 2 * self.student_steps {
            return fail(format!(
                "teacher_steps ({}) must be at least twice student_steps ({})",
                self.teacher_steps, self.student_steps
            ));
        }
        if self.order == 0 {
            return fail("order must be positive".into());
        }
        if !(1..=4).contains(&self.teacher_order) || self.teacher_order > self.teacher_steps {
            return fail(format!("teacher_order {} is not usable", self.teacher_order));
        }
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if self.batch == 0 || self.pairs < self.batch {
            return fail(format!(
                "need 1 <= batch <= pairs (batch {}, pairs {})",
                self.batch, self.pairs
            ));
        }
        if self.path_substeps == 0 {
            return fail("path_substeps must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return fail(format!("warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        if self.fd_rel_step.is_nan() || self.fd_rel_step <= 0.0 {
            return fail("fd_rel_step must be positive".into());
        }
        if let Some(m) = self.monitor_step {
            if m >= self.student_steps {
                return fail(format!("monitor_step {m} is past the last step"));
            }
        }
        if self.lr() < 0.0 {
            return fail("lr_base must be non-negative".into());
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        self.lr_base.unwrap_or_else(|| default_lr(self.student_steps))
    }

    pub fn monitor(&self) -> usize {
        self.monitor_step.unwrap_or(self.student_steps / 2)
    }

    pub fn student_schedule(&self) -> Result<TimeSchedule, ScheduleError> {
        build_schedule(
            self.schedule_init,
            self.student_steps,
            self.sigma_min,
            self.sigma_max,
            self.rho,
        )
    }

    pub fn teacher_schedule(&self) -> Result<TimeSchedule, ScheduleError> {
        build_schedule(
            ScheduleKind::PolynomialRho,
            self.teacher_steps,
            self.sigma_min,
            self.sigma_max,
            DEFAULT_RHO,
        )
    }

    fn sample_options(&self, guard: TimeGuard) -> SampleOptions {
        SampleOptions {
            shifting: self.calibration.shifting,
            scaling: self.calibration.scaling,
            guard,
        }
    }
}

/// Learning rate at `iteration`: linear ramp from `warmup_start_factor * lr` to `lr` over
/// the warmup fraction, then cosine decay to `cosine_min_ratio * lr` at the last iteration.
pub fn lr_at(config: &TrainConfig, iteration: usize) -> Result<f64, TrainError> {
    let total = config.iterations;
    if iteration >= total {
        return Err(TrainError::IterationOutOfRange {
            iteration,
            iterations: total,
        });
    }
    let base = config.lr();
    let warmup = (config.warmup_ratio * total as f64).floor() as usize;
    if iteration < warmup {
        let frac = iteration as f64 / warmup as f64;
        let factor = config.warmup_start_factor + (1.0 - config.warmup_start_factor) * frac;
        return Ok(base * factor);
    }
    let span = total - 1 - warmup;
    let progress = if span == 0 {
        1.0
    } else {
        (iteration - warmup) as f64 / span as f64
    };
    let min = base * config.cosine_min_ratio;
    Ok(min + (base - min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam::with_betas(n, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Initial coefficients for a fresh (single-state) start: `weight_init` fills the
/// active entries of every row and all scales are 1.
pub fn init_params(config: &TrainConfig) -> SolverParams {
    let (n, k) = (config.student_steps, config.order);
    let mut p = SolverParams::zeros(n, k);
    for j in 0..n {
        let active = active_weights(j, 1, k);
        let row = &mut p.row_mut(j)[..active];
        match config.weight_init {
            WeightInit::AdamsBashforth => {
                // classic AB stops at order 4; longer rows keep the AB-4 head
                let c = classic_ab(active.min(4)).expect("order in range");
                row[..c.betas.len()].copy_from_slice(&c.betas);
            }
            WeightInit::Euler => row[0] = 1.0,
            WeightInit::Uniform => row.fill(1.0 / active as f64),
        }
    }
    p
}

/// Maps between [`SolverParams`] and the flat vector of trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    steps: usize,
    order: usize,
    scaling: bool,
}

impl ParamLayout {
    pub fn new(config: &TrainConfig) -> Self {
        ParamLayout {
            steps: config.student_steps,
            order: config.order,
            scaling: config.calibration.scaling,
        }
    }

    pub fn len(&self) -> usize {
        let w: usize = (0..self.steps).map(|j| active_weights(j, 1, self.order)).sum();
        w + if self.scaling { self.steps } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, p: &SolverParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.steps {
            out.extend_from_slice(&p.row(j)[..active_weights(j, 1, self.order)]);
        }
        if self.scaling {
            out.extend_from_slice(p.scales());
        }
        out
    }

    /// Writes `theta` into `p`; entries outside the layout are left untouched.
    pub fn unflatten_into(&self, theta: &[f64], p: &mut SolverParams) {
        let mut at = 0;
        for j in 0..self.steps {
            let a = active_weights(j, 1, self.order);
            p.row_mut(j)[..a].copy_from_slice(&theta[at..at + a]);
            at += a;
        }
        if self.scaling {
            p.scales_mut().copy_from_slice(&theta[at..at + self.steps]);
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared L2 distance between a student and a teacher endpoint.
pub fn endpoint_loss(student: &[f64], teacher: &[f64]) -> Result<f64, TrainError> {
    if student.len() != teacher.len() {
        return Err(TrainError::DimMismatch(student.len(), teacher.len()));
    }
    Ok(sq_dist(student, teacher))
}

/// Sum of squared L2 distances between the student states after each step and the
/// teacher targets at the same schedule positions; the last entry is the endpoint.
pub fn path_loss(student: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64, TrainError> {
    if student.len() != targets.len() {
        return Err(TrainError::LengthMismatch(student.len(), targets.len()));
    }
    student
        .iter()
        .zip(targets)
        .map(|(s, t)| endpoint_loss(s, t))
        .sum()
}

/// Central finite-difference gradient with per-entry step `rel_step * max(|theta_i|, 1)`.
/// Probes run in parallel; the result is deterministic.
pub fn grad_fd<F>(loss: F, theta: &[f64], rel_step: f64) -> Result<Vec<f64>, TrainError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if rel_step.is_nan() || rel_step <= 0.0 {
        return Err(TrainError::Config("rel_step must be positive".into()));
    }
    (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let h = rel_step * theta[i].abs().max(1.0);
            let mut probe = theta.to_vec();
            probe[i] = theta[i] + h;
            let up = loss(&probe);
            probe[i] = theta[i] - h;
            let dn = loss(&probe);
            if !(up.is_finite() && dn.is_finite()) {
                return Err(TrainError::NonFiniteProbe { index: i });
            }
            Ok((up - dn) / (2.0 * h))
        })
        .collect()
}

/// Noise draws with their teacher endpoints (and path targets when requested).
#[derive(Debug, Clone)]
pub struct PairSet {
    pub noise: Vec<Vec<f64>>,
    pub teacher: Vec<Vec<f64>>,
    /// Per pair, one target after every student step (last = teacher endpoint).
    pub path_targets: Option<Vec<Vec<Vec<f64>>>>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }
}

fn draw_noise(dim: usize, count: usize, sigma: f64, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect()
        })
        .collect()
}

fn build_pairs(
    field: &impl DriftField,
    config: &TrainConfig,
    count: usize,
    stream: u64,
    with_path: bool,
) -> Result<PairSet, TrainError> {
    let teacher_schedule = config.teacher_schedule()?;
    let noise = draw_noise(field.dim(), count, config.sigma_max, config.seed, stream);
    let teacher = noise
        .par_iter()
        .map(|x| {
            ab_sample(field, Start::Fresh(x), &teacher_schedule, config.teacher_order)
                .map(|r| r.final_state)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let path_targets = if with_path {
        let fine = config.student_schedule()?.refine(config.path_substeps);
        let order = config.teacher_order.min(fine.steps());
        let sub = config.path_substeps;
        let n = config.student_steps;
        let targets = noise
            .par_iter()
            .zip(&teacher)
            .map(|(x, end)| {
                let r = ab_sample(field, Start::Fresh(x), &fine, order)?;
                let mut t: Vec<Vec<f64>> =
                    (1..n).map(|j| r.trajectory[j * sub].1.clone()).collect();
                t.push(end.clone());
                Ok(t)
            })
            .collect::<Result<Vec<_>, SolverError>>()?;
        Some(targets)
    } else {
        None
    };
    Ok(PairSet {
        noise,
        teacher,
        path_targets,
    })
}

/// Training pairs from stream 1 of the config seed.
pub fn generate_pairs(field: &impl DriftField, config: &TrainConfig) -> Result<PairSet, TrainError> {
    build_pairs(
        field,
        config,
        config.pairs,
        STREAM_TRAIN,
        config.loss_kind == LossKind::Path,
    )
}

/// Held-out pairs from stream 2 of the config seed (endpoints only).
pub fn generate_holdout(field: &impl DriftField, config: &TrainConfig) -> Result<PairSet, TrainError> {
    build_pairs(field, config, config.holdout_pairs, STREAM_HOLDOUT, false)
}

/// Batch loss plus the monitored drift-dispersion statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// Across-sample standard deviation of `|eps| / mean |eps|` at the monitored step.
    pub dispersion: f64,
    pub clamped: usize,
}

/// The differentiable objective: maps trainable parameters to a batch loss.
pub struct Objective<'a, F: DriftField> {
    field: &'a F,
    config: &'a TrainConfig,
    schedule: TimeSchedule,
    pairs: &'a PairSet,
    layout: ParamLayout,
    template: SolverParams,
}

impl<'a, F: DriftField> Objective<'a, F> {
    pub fn new(
        field: &'a F,
        config: &'a TrainConfig,
        pairs: &'a PairSet,
        template: SolverParams,
    ) -> Result<Self, TrainError> {
        if config.loss_kind == LossKind::Path && pairs.path_targets.is_none() {
            return Err(TrainError::Config("path loss needs path targets".into()));
        }
        Ok(Objective {
            field,
            config,
            schedule: config.student_schedule()?,
            pairs,
            layout: ParamLayout::new(config),
            template,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self, theta: &[f64]) -> SolverParams {
        let mut p = self.template.clone();
        self.layout.unflatten_into(theta, &mut p);
        p
    }

    /// Loss over `indices` of the pair set (clamped time guard).
    pub fn evaluate(&self, theta: &[f64], indices: &[usize]) -> LossEval {
        let params = self.params(theta);
        let opts = self.config.sample_options(TimeGuard::Clamp);
        let monitor = self.config.monitor();
        let mut total = 0.0;
        let mut clamped = 0;
        let mut norms = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = match dyweight_sample_with(
                self.field,
                Start::Fresh(&self.pairs.noise[i]),
                &params,
                &self.schedule,
                opts,
            ) {
                Ok(r) => r,
                Err(_) => {
                    return LossEval {
                        loss: f64::NAN,
                        dispersion: f64::NAN,
                        clamped,
                    }
                }
            };
            clamped += r.clamped;
            norms.push(r.drift_norms[monitor]);
            total += match self.config.loss_kind {
                LossKind::Endpoint => sq_dist(&r.final_state, &self.pairs.teacher[i]),
                LossKind::Path => {
                    let targets = &self.pairs.path_targets.as_ref().expect("checked in new")[i];
                    r.trajectory[1..]
                        .iter()
                        .zip(targets)
                        .map(|((_, s), t)| sq_dist(s, t))
                        .sum()
                }
            };
        }
        LossEval {
            loss: total / indices.len() as f64,
            dispersion: dispersion(&norms),
            clamped,
        }
    }
}

/// Standard deviation of `values / mean(values)`.
pub fn dispersion(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v / mean - 1.0).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: SolverParams,
    pub adam: Adam,
    pub iteration: usize,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub best_params: SolverParams,
    pub loss_history: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub dispersion_history: Vec<f64>,
    pub clamped_queries: usize,
}

/// Runs the distillation loop on a freshly generated pair set.
pub fn train(field: &impl DriftField, config: &TrainConfig) -> Result<TrainState, TrainError> {
    config.validate()?;
    let pairs = generate_pairs(field, config)?;
    train_on(field, config, &pairs)
}

/// Runs the distillation loop on a given pair set.
pub fn train_on(
    field: &impl DriftField,
    config: &TrainConfig,
    pairs: &PairSet,
) -> Result<TrainState, TrainError> {
    config.validate()?;
    if pairs.len() != config.pairs {
        return Err(TrainError::Config(format!(
            "pair set holds {} pairs, config expects {}",
            pairs.len(),
            config.pairs
        )));
    }
    let template = init_params(config);
    let objective = Objective::new(field, config, pairs, template.clone())?;
    let layout = objective.layout().clone();
    let mut theta = layout.flatten(&template);
    let mut adam = Adam::with_betas(theta.len(), config.adam_beta1, config.adam_beta2, config.adam_eps);

    let order: Vec<usize> = batch_order(config);
    let full: Vec<usize> = (0..config.pairs).collect();
    let initial = objective.evaluate(&theta, &full);
    if !initial.loss.is_finite() {
        return Err(TrainError::Diverged {
            iteration: 0,
            loss: initial.loss,
            initial: initial.loss,
        });
    }

    let mut state = TrainState {
        params: template.clone(),
        adam: adam.clone(),
        iteration: 0,
        initial_loss: initial.loss,
        best_loss: f64::INFINITY,
        best_params: template,
        loss_history: Vec::with_capacity(config.iterations),
        lr_history: Vec::with_capacity(config.iterations),
        dispersion_history: Vec::with_capacity(config.iterations),
        clamped_queries: 0,
    };
    let mut warned = false;

    for it in 0..config.iterations {
        let batch: &[usize] = if config.batch == config.pairs {
            &full
        } else {
            let start = (it * config.batch) % config.pairs;
            let end = start + config.batch;
            if end <= config.pairs {
                &order[start..end]
            } else {
                // wrap around by rotating; rare and only for non-dividing batch sizes
                &order[config.pairs - config.batch..]
            }
        };
        let eval = objective.evaluate(&theta, batch);
        if !eval.loss.is_finite() || eval.loss > DIVERGENCE_FACTOR * state.initial_loss {
            return Err(TrainError::Diverged {
                iteration: it,
                loss: eval.loss,
                initial: state.initial_loss,
            });
        }
        if eval.clamped > 0 && !warned {
            log::warn!("iteration {it}: drift queries clamped to the time floor");
            warned = true;
        }
        state.clamped_queries += eval.clamped;
        state.loss_history.push(eval.loss);
        state.dispersion_history.push(eval.dispersion);
        if eval.loss < state.best_loss {
            state.best_loss = eval.loss;
            state.best_params = objective.params(&theta);
        }

        let lr = lr_at(config, it)?;
        state.lr_history.push(lr);
        let grad = grad_fd(|p| objective.evaluate(p, batch).loss, &theta, config.fd_rel_step)?;
        adam.step(&mut theta, &grad, lr);
        state.iteration = it + 1;
    }

    state.params = objective.params(&theta);
    state.adam = adam;
    Ok(state)
}

fn batch_order(config: &TrainConfig) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..config.pairs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    order.shuffle(&mut rng);
    order
}

/// Endpoint statistics of a solver against teacher endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointStats {
    /// Mean squared L2 distance (the training metric).
    pub mse: f64,
    /// Mean L2 distance.
    pub mean_l2: f64,
}

fn endpoint_stats(finals: &[Vec<f64>], teacher: &[Vec<f64>]) -> EndpointStats {
    let n = finals.len() as f64;
    let d: Vec<f64> = finals.iter().zip(teacher).map(|(a, b)| sq_dist(a, b)).collect();
    EndpointStats {
        mse: d.iter().sum::<f64>() / n,
        mean_l2: d.iter().map(|v| v.sqrt()).sum::<f64>() / n,
    }
}

/// Mean squared endpoint distance to the teacher under the training (clamping) guard;
/// for a path-trained student this isolates the terminal term.
pub fn terminal_loss(
    field: &impl DriftField,
    config: &TrainConfig,
    params: &SolverParams,
    pairs: &PairSet,
) -> Result<f64, TrainError> {
    let schedule = config.student_schedule()?;
    let opts = config.sample_options(TimeGuard::Clamp);
    let finals = pairs
        .noise
        .iter()
        .map(|x| dyweight_sample_with(field, Start::Fresh(x), params, &schedule, opts).map(|r| r.final_state))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(endpoint_stats(&finals, &pairs.teacher).mse)
}

/// Evaluates learned coefficients with a strict time floor.
pub fn evaluate_params(
    field: &impl DriftField,
    config: &TrainConfig,
    params: &SolverParams,
    pairs: &PairSet,
) -> Result<EndpointStats, TrainError> {
    let schedule = config.student_schedule()?;
    let opts = config.sample_options(TimeGuard::Strict);
    let finals = pairs
        .noise
        .iter()
        .map(|x| dyweight_sample_with(field, Start::Fresh(x), params, &schedule, opts).map(|r| r.final_state))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(endpoint_stats(&finals, &pairs.teacher))
}

/// Evaluates the iPNDM baseline (classic AB with order ramp, up to order 4) at the
/// student step count.
pub fn evaluate_ipndm(
    field: &impl DriftField,
    config: &TrainConfig,
    pairs: &PairSet,
) -> Result<EndpointStats, TrainError> {
    let schedule = config.student_schedule()?;
    let order = 4.min(schedule.steps());
    let finals = pairs
        .noise
        .iter()
        .map(|x| ab_sample(field, Start::Fresh(x), &schedule, order).map(|r| r.final_state))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(endpoint_stats(&finals, &pairs.teacher))
}
