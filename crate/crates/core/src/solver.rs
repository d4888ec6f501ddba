//! Stepping engines: Euler, Adams-Bashforth (with the iPNDM order ramp) and the
//! learnable-weight sampler with time shifting and time scaling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::{classic_ab, CoeffError};
use crate::schedule::TimeSchedule;

/// Smallest drift-query time accepted by noise-level fields.
pub const T_FLOOR: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("step {step}: drift queried at time {time} (must exceed {floor})")]
    TimeFloor { step: usize, time: f64, floor: f64 },
    #[error("multistep update needs at least one buffered drift")]
    EmptyBuffer,
    #[error("{weights} weights given but only {available} drifts are buffered")]
    WeightCount { weights: usize, available: usize },
    #[error("parameter shape mismatch: {0}")]
    ParamShape(String),
    #[error("order {order} is not usable with {steps} steps")]
    BadOrder { order: usize, steps: usize },
    #[error("history must hold between 1 and {max} states, got {got}")]
    BadHistory { got: usize, max: usize },
    #[error(transparent)]
    Coeff(#[from] CoeffError),
}

/// An evaluatable drift `eps(x, t)` of a first-order ODE `dx/dt = eps(x, t)`.
pub trait DriftField: Sync {
    fn dim(&self) -> usize;

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, t, &mut out);
        out
    }

    /// Noise-level parameterized fields divide by `t` and are undefined at `t <= 0`.
    fn requires_positive_time(&self) -> bool {
        false
    }
}

impl<F: DriftField + ?Sized> DriftField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval_into(x, t, out)
    }
    fn requires_positive_time(&self) -> bool {
        (**self).requires_positive_time()
    }
}

/// Bounded FIFO of recent drift evaluations; index 0 is the newest.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl GradientBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        GradientBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, drift: Vec<f64>) {
        self.entries.push_front(drift);
        if self.entries.len() > self.capacity {
            self.entries.pop_back();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Vec<f64>> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }
}

/// Learnable solver coefficients: an `steps x order` weight matrix (rows in execution
/// order) and one time-scaling factor per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    steps: usize,
    order: usize,
    weights: Vec<f64>,
    scales: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    steps: usize,
    order: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    s: Vec<f64>,
}

impl Serialize for SolverParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ParamsJson {
            steps: self.steps,
            order: self.order,
            w: (0..self.steps).map(|j| self.row(j).to_vec()).collect(),
            s: self.scales.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SolverParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = ParamsJson::deserialize(deserializer)?;
        if raw.steps != raw.w.len() {
            return Err(serde::de::Error::custom(format!(
                "steps = {} but W has {} rows",
                raw.steps,
                raw.w.len()
            )));
        }
        SolverParams::from_rows(raw.order, raw.w, raw.s).map_err(serde::de::Error::custom)
    }
}

impl SolverParams {
    /// All-zero weights and unit scales.
    pub fn zeros(steps: usize, order: usize) -> Self {
        SolverParams {
            steps,
            order,
            weights: vec![0.0; steps * order],
            scales: vec![1.0; steps],
        }
    }

    pub fn from_rows(order: usize, rows: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self, SolverError> {
        let steps = rows.len();
        if order == 0 {
            return Err(SolverError::ParamShape("order must be positive".into()));
        }
        if scales.len() != steps {
            return Err(SolverError::ParamShape(format!(
                "{} scales for {} steps",
                scales.len(),
                steps
            )));
        }
        let mut weights = Vec::with_capacity(steps * order);
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != order {
                return Err(SolverError::ParamShape(format!(
                    "row {j} has {} entries, expected {order}",
                    row.len()
                )));
            }
            weights.extend(row);
        }
        Ok(SolverParams {
            steps,
            order,
            weights,
            scales,
        })
    }

    /// Rows filled with classic AB coefficients of the order the buffer supports at each step.
    pub fn adams_bashforth(steps: usize, order: usize, history: usize) -> Result<Self, SolverError> {
        let mut p = SolverParams::zeros(steps, order);
        for j in 0..steps {
            let active = active_weights(j, history, order);
            let c = classic_ab(active)?;
            p.row_mut(j)[..active].copy_from_slice(&c.betas);
        }
        Ok(p)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.weights[step * self.order..(step + 1) * self.order]
    }

    pub fn row_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.weights[step * self.order..(step + 1) * self.order]
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn scales_mut(&mut self) -> &mut [f64] {
        &mut self.scales
    }
}

/// Number of buffered drifts available at execution step `step` when the sampler
/// starts from `history` known states.
pub fn active_weights(step: usize, history: usize, order: usize) -> usize {
    (step + history).min(order)
}

/// What to do when a noise-level field would be queried at or below [`T_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeGuard {
    /// Fail with [`SolverError::TimeFloor`].
    #[default]
    Strict,
    /// Clamp to the floor and count the event (used while training).
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub shifting: bool,
    pub scaling: bool,
    pub guard: TimeGuard,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            shifting: true,
            scaling: true,
            guard: TimeGuard::Strict,
        }
    }
}

/// Starting condition for a sampler run.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    /// Single initial state at `times[0]`; multistep samplers ramp their order up.
    Fresh(&'a [f64]),
    /// Known states at `times[0..len]`; their drifts seed the buffer.
    History(&'a [Vec<f64>]),
}

impl Start<'_> {
    fn states(&self) -> Vec<&[f64]> {
        match self {
            Start::Fresh(x) => vec![*x],
            Start::History(h) => h.iter().map(|v| v.as_slice()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Start::Fresh(_) => 1,
            Start::History(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub final_state: Vec<f64>,
    /// `(time, state)` for every schedule point; computed states carry the (possibly
    /// shifted) time the sampler assigned to them.
    pub trajectory: Vec<(f64, Vec<f64>)>,
    /// One entry per executed step.
    pub shifted_times: Vec<f64>,
    /// One entry per drift evaluation.
    pub drift_query_times: Vec<f64>,
    /// Euclidean norm of each drift pushed during the executed steps.
    pub drift_norms: Vec<f64>,
    /// Number of queries clamped to the time floor.
    pub clamped: usize,
}

fn check_dim(field: &impl DriftField, x: &[f64]) -> Result<(), SolverError> {
    if x.len() != field.dim() {
        return Err(SolverError::DimMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// One explicit Euler step from `t_from` to `t_to`.
pub fn euler_step(
    field: &impl DriftField,
    x: &[f64],
    t_from: f64,
    t_to: f64,
) -> Result<Vec<f64>, SolverError> {
    check_dim(field, x)?;
    if field.requires_positive_time() && t_from <= 0.0 {
        return Err(SolverError::TimeFloor {
            step: 0,
            time: t_from,
            floor: 0.0,
        });
    }
    let eps = field.eval(x, t_from);
    let h = t_to - t_from;
    Ok(x.iter().zip(&eps).map(|(a, e)| a + h * e).collect())
}

/// `x + h * sum_i weights[i] * buffer[i]`.
pub fn multistep_step(
    x: &[f64],
    buffer: &GradientBuffer,
    weights: &[f64],
    h: f64,
) -> Result<Vec<f64>, SolverError> {
    if buffer.is_empty() || weights.is_empty() {
        return Err(SolverError::EmptyBuffer);
    }
    if weights.len() > buffer.len() {
        return Err(SolverError::WeightCount {
            weights: weights.len(),
            available: buffer.len(),
        });
    }
    let mut out = x.to_vec();
    for (w, g) in weights.iter().zip(buffer.iter()) {
        if g.len() != out.len() {
            return Err(SolverError::DimMismatch {
                expected: out.len(),
                got: g.len(),
            });
        }
        let scale = h * w;
        for (o, gi) in out.iter_mut().zip(g) {
            *o += scale * gi;
        }
    }
    Ok(out)
}

fn validate_start(
    field: &impl DriftField,
    start: &Start<'_>,
    schedule: &TimeSchedule,
) -> Result<(), SolverError> {
    let n = schedule.steps();
    if start.is_empty() || start.len() > n {
        return Err(SolverError::BadHistory {
            got: start.len(),
            max: n,
        });
    }
    for x in start.states() {
        check_dim(field, x)?;
    }
    Ok(())
}

/// Classic Adams-Bashforth sampling.
///
/// With [`Start::Fresh`] the order ramps 1, 2, ... until the buffer holds `order` drifts
/// (iPNDM warm-up); with [`Start::History`] the supplied states pre-fill the buffer.
/// Coefficients are the uniform-step ones regardless of the schedule spacing.
pub fn ab_sample(
    field: &impl DriftField,
    start: Start<'_>,
    schedule: &TimeSchedule,
    order: usize,
) -> Result<SampleResult, SolverError> {
    validate_start(field, &start, schedule)?;
    let times = schedule.times();
    let n = schedule.steps();
    if order == 0 || order > 4 || order > n {
        return Err(SolverError::BadOrder { order, steps: n });
    }
    let coeffs: Vec<Vec<f64>> = (1..=order)
        .map(|k| classic_ab(k).map(|c| c.betas))
        .collect::<Result<_, _>>()?;
    let positive = field.requires_positive_time();
    let states = start.states();
    let first = states.len() - 1;

    let mut buffer = GradientBuffer::new(order);
    let mut result = SampleResult {
        final_state: Vec::new(),
        trajectory: Vec::with_capacity(n + 1),
        shifted_times: Vec::with_capacity(n - first),
        drift_query_times: Vec::with_capacity(n),
        drift_norms: Vec::with_capacity(n - first),
        clamped: 0,
    };

    for (j, x) in states[..first].iter().enumerate() {
        buffer.push(field.eval(x, times[j]));
        result.drift_query_times.push(times[j]);
        result.trajectory.push((times[j], x.to_vec()));
    }

    let mut x = states[first].to_vec();
    result.trajectory.push((times[first], x.clone()));
    for j in first..n {
        let t = times[j];
        if positive && t <= 0.0 {
            return Err(SolverError::TimeFloor {
                step: j,
                time: t,
                floor: 0.0,
            });
        }
        let eps = field.eval(&x, t);
        result.drift_query_times.push(t);
        result.drift_norms.push(norm(&eps));
        buffer.push(eps);
        let p = buffer.len().min(order);
        x = multistep_step(&x, &buffer, &coeffs[p - 1], times[j + 1] - t)?;
        result.shifted_times.push(times[j + 1]);
        result.trajectory.push((times[j + 1], x.clone()));
    }
    result.final_state = x;
    Ok(result)
}

/// Learnable-weight sampling with default options (shifting and scaling on, strict floor).
pub fn dyweight_sample(
    field: &impl DriftField,
    x0: &[f64],
    params: &SolverParams,
    schedule: &TimeSchedule,
) -> Result<SampleResult, SolverError> {
    dyweight_sample_with(field, Start::Fresh(x0), params, schedule, SampleOptions::default())
}

/// Learnable-weight sampling.
///
/// At each executed step `j` (parameter row `j`):
/// 1. push `eps = (x - D(x, s_j * t)) / t` where `t` is the current time; for a drift field
///    this is `(s_j t / t) * eps(x, s_j t)`;
/// 2. combine the first `p = min(buffered, order)` weights of the row with the buffer;
/// 3. advance `x` across the interval from the current time to the next base time;
/// 4. when shifting, move the current time to `t + (sum w) * (t_next_base - t)`.
pub fn dyweight_sample_with(
    field: &impl DriftField,
    start: Start<'_>,
    params: &SolverParams,
    schedule: &TimeSchedule,
    opts: SampleOptions,
) -> Result<SampleResult, SolverError> {
    validate_start(field, &start, schedule)?;
    let times = schedule.times();
    let n = schedule.steps();
    let states = start.states();
    let first = states.len() - 1;
    if params.steps() != n - first {
        return Err(SolverError::ParamShape(format!(
            "{} parameter rows for {} executed steps",
            params.steps(),
            n - first
        )));
    }
    let order = params.order();
    let positive = field.requires_positive_time();
    let dim = field.dim();

    let mut buffer = GradientBuffer::new(order);
    let mut result = SampleResult {
        final_state: Vec::new(),
        trajectory: Vec::with_capacity(n + 1),
        shifted_times: Vec::with_capacity(n - first),
        drift_query_times: Vec::with_capacity(n),
        drift_norms: Vec::with_capacity(n - first),
        clamped: 0,
    };

    for (j, x) in states[..first].iter().enumerate() {
        buffer.push(field.eval(x, times[j]));
        result.drift_query_times.push(times[j]);
        result.trajectory.push((times[j], x.to_vec()));
    }

    let mut x = states[first].to_vec();
    let mut t = times[first];
    result.trajectory.push((t, x.clone()));
    for j in first..n {
        let row = j - first;
        let scale = if opts.scaling { params.scales()[row] } else { 1.0 };
        let mut t_div = t;
        let mut query = scale * t;
        if positive {
            if t_div <= T_FLOOR {
                match opts.guard {
                    TimeGuard::Strict => {
                        return Err(SolverError::TimeFloor {
                            step: row,
                            time: t_div,
                            floor: T_FLOOR,
                        })
                    }
                    TimeGuard::Clamp => {
                        t_div = T_FLOOR;
                        result.clamped += 1;
                    }
                }
                query = scale * t_div;
            }
            if query <= T_FLOOR {
                match opts.guard {
                    TimeGuard::Strict => {
                        return Err(SolverError::TimeFloor {
                            step: row,
                            time: query,
                            floor: T_FLOOR,
                        })
                    }
                    TimeGuard::Clamp => {
                        query = T_FLOOR;
                        result.clamped += 1;
                    }
                }
            }
        }
        let mut eps = vec![0.0; dim];
        field.eval_into(&x, query, &mut eps);
        if query != t_div {
            let ratio = query / t_div;
            eps.iter_mut().for_each(|e| *e *= ratio);
        }
        result.drift_query_times.push(query);
        result.drift_norms.push(norm(&eps));
        buffer.push(eps);

        let p = buffer.len().min(order);
        let w = &params.row(row)[..p];
        let h = times[j + 1] - t;
        x = multistep_step(&x, &buffer, w, h)?;

        let next = if opts.shifting {
            let total: f64 = w.iter().sum();
            t + total * h
        } else {
            times[j + 1]
        };
        result.shifted_times.push(next);
        result.trajectory.push((next, x.clone()));
        t = next;
    }
    result.final_state = x;
    Ok(result)
}
