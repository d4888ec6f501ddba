//! White-box ODE testbed with a known polynomial solution and a random coupling term.
//!
//! The ground truth is `y_gt(t) = C [1, t, ..., t^K]^T` and the drift is
//! `f(t, y) = y_gt'(t) + A (y - y_gt(t))`, so `y_gt` solves the ODE exactly and any
//! deviation evolves under the coupling matrix `A = G - 0.5 I`.
//!
//! Random draws use ChaCha8 seeded from the problem seed; the coefficient matrix `C`
//! comes from stream [`STREAM_COEFFS`] and `G` from stream [`STREAM_COUPLING`], both
//! filled row-major with standard normals scaled to the target deviation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::classic_ab;
use crate::schedule::{ScheduleError, TimeSchedule};
use crate::solver::{
    ab_sample, dyweight_sample_with, DriftField, SampleOptions, SolverError, SolverParams, Start,
    TimeGuard,
};
use crate::trainer::Adam;

pub const STREAM_COEFFS: u64 = 1;
pub const STREAM_COUPLING: u64 = 2;

/// Standard deviation of the entries of `C` (variance 4).
pub const COEFF_STD: f64 = 2.0;
pub const COUPLING_SHIFT: f64 = -0.5;
pub const DEFAULT_DIM: usize = 50;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("ground truth has zero norm")]
    ZeroNorm,
    #[error("{order} history states do not fit in {steps} steps")]
    BadConfig { order: usize, steps: usize },
    #[error("non-finite loss {0} during optimization")]
    NonFinite(f64),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// How the `0.1 / sqrt(D)` parameter of the coupling noise is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingScale {
    #[default]
    StdDev,
    Variance,
}

impl CouplingScale {
    pub fn std_dev(self, dim: usize) -> f64 {
        let p = 0.1 / (dim as f64).sqrt();
        match self {
            CouplingScale::StdDev => p,
            CouplingScale::Variance => p.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    dim: usize,
    degree: usize,
    seed: u64,
    coupling_scale: CouplingScale,
    /// `dim x (degree + 1)`, row-major.
    coeffs: Vec<f64>,
    /// `dim x dim`, row-major.
    coupling: Vec<f64>,
}

fn normals(seed: u64, stream: u64, n: usize, std: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect()
}

impl SyntheticProblem {
    pub fn generate(dim: usize, degree: usize, seed: u64, coupling_scale: CouplingScale) -> Self {
        let coeffs = normals(seed, STREAM_COEFFS, dim * (degree + 1), COEFF_STD);
        let mut coupling = normals(seed, STREAM_COUPLING, dim * dim, coupling_scale.std_dev(dim));
        for i in 0..dim {
            coupling[i * dim + i] += COUPLING_SHIFT;
        }
        SyntheticProblem {
            dim,
            degree,
            seed,
            coupling_scale,
            coeffs,
            coupling,
        }
    }

    /// A problem with explicit matrices, mostly for tests.
    pub fn from_parts(degree: usize, coeffs: Vec<f64>, coupling: Vec<f64>) -> Result<Self, SynthError> {
        let dim = coeffs.len() / (degree + 1);
        if coeffs.len() != dim * (degree + 1) || coupling.len() != dim * dim {
            return Err(SynthError::DimMismatch {
                expected: dim * dim,
                got: coupling.len(),
            });
        }
        Ok(SyntheticProblem {
            dim,
            degree,
            seed: 0,
            coupling_scale: CouplingScale::StdDev,
            coeffs,
            coupling,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coupling_scale(&self) -> CouplingScale {
        self.coupling_scale
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    fn coeff_row(&self, d: usize) -> &[f64] {
        let w = self.degree + 1;
        &self.coeffs[d * w..(d + 1) * w]
    }

    /// `y_gt(t)` by Horner's rule.
    pub fn gt_state(&self, t: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|d| self.coeff_row(d).iter().rev().fold(0.0, |acc, c| acc * t + c))
            .collect()
    }

    /// `y_gt'(t)` by Horner's rule on the differentiated coefficients.
    pub fn gt_deriv(&self, t: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|d| {
                self.coeff_row(d)
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c)
            })
            .collect()
    }

    /// `out = A v`.
    fn coupling_mul(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.coupling[i * d..(i + 1) * d];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// `out += A^T v`.
    fn coupling_mul_t_add(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, vi) in v.iter().enumerate() {
            let row = &self.coupling[i * d..(i + 1) * d];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }

    pub fn drift(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, SynthError> {
        if y.len() != self.dim {
            return Err(SynthError::DimMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(y, t, &mut out);
        Ok(out)
    }
}

impl DriftField for SyntheticProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let gt = self.gt_state(t);
        let dev: Vec<f64> = y.iter().zip(&gt).map(|(a, b)| a - b).collect();
        self.coupling_mul(&dev, out);
        for (o, g) in out.iter_mut().zip(self.gt_deriv(t)) {
            *o += g;
        }
    }
}

/// `||pred - gt|| / ||gt||`.
pub fn rel_l2_error(pred: &[f64], gt: &[f64]) -> Result<f64, SynthError> {
    if pred.len() != gt.len() {
        return Err(SynthError::DimMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let denom = gt.iter().map(|g| g * g).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(SynthError::ZeroNorm);
    }
    let num = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Ground-truth states at the first `order` grid points.
pub fn exact_history(problem: &SyntheticProblem, schedule: &TimeSchedule, order: usize) -> Vec<Vec<f64>> {
    schedule.times()[..order].iter().map(|&t| problem.gt_state(t)).collect()
}

fn check_config(steps: usize, order: usize) -> Result<(), SynthError> {
    if order == 0 || order > 4 || order > steps {
        return Err(SynthError::BadConfig { order, steps });
    }
    Ok(())
}

/// Relative endpoint error of classic AB-`order` over `[0, 1]` in `steps` uniform steps,
/// started from exact history.
pub fn standard_error(problem: &SyntheticProblem, steps: usize, order: usize) -> Result<f64, SynthError> {
    check_config(steps, order)?;
    let schedule = TimeSchedule::ascending_grid(0.0, 1.0, steps)?;
    let history = exact_history(problem, &schedule, order);
    let r = ab_sample(problem, Start::History(&history), &schedule, order)?;
    rel_l2_error(&r.final_state, &problem.gt_state(1.0))
}

/// Unrolled multistep integration on a uniform grid with per-step weights and an exact
/// reverse-mode gradient of the endpoint MSE with respect to every weight.
///
/// Only the weights are learned; there is no time shifting or scaling on this testbed.
pub struct WeightedIntegrator<'a> {
    problem: &'a SyntheticProblem,
    order: usize,
    steps: usize,
    h: f64,
    gt: Vec<Vec<f64>>,
    gt_deriv: Vec<Vec<f64>>,
}

impl<'a> WeightedIntegrator<'a> {
    pub fn new(problem: &'a SyntheticProblem, steps: usize, order: usize) -> Result<Self, SynthError> {
        check_config(steps, order)?;
        let schedule = TimeSchedule::ascending_grid(0.0, 1.0, steps)?;
        let times = schedule.times();
        Ok(WeightedIntegrator {
            problem,
            order,
            steps,
            h: 1.0 / steps as f64,
            gt: times.iter().map(|&t| problem.gt_state(t)).collect(),
            gt_deriv: times.iter().map(|&t| problem.gt_deriv(t)).collect(),
        })
    }

    /// Number of learnable rows, `steps - order + 1`.
    pub fn rows(&self) -> usize {
        self.steps - self.order + 1
    }

    pub fn initial_params(&self) -> SolverParams {
        let c = classic_ab(self.order).expect("order checked");
        SolverParams::from_rows(self.order, vec![c.betas; self.rows()], vec![1.0; self.rows()])
            .expect("shape is consistent")
    }

    fn drift_at(&self, j: usize, y: &[f64], out: &mut [f64]) {
        let dev: Vec<f64> = y.iter().zip(&self.gt[j]).map(|(a, b)| a - b).collect();
        self.problem.coupling_mul(&dev, out);
        for (o, g) in out.iter_mut().zip(&self.gt_deriv[j]) {
            *o += g;
        }
    }

    /// Returns all states and drifts along the grid.
    fn forward(&self, params: &SolverParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (d, o) = (self.problem.dim, self.order);
        let mut ys = Vec::with_capacity(self.steps + 1);
        let mut fs = Vec::with_capacity(self.steps);
        for j in 0..o {
            ys.push(self.gt[j].clone());
            fs.push(self.gt_deriv[j].clone());
        }
        for r in 0..self.rows() {
            let j = o - 1 + r;
            if j >= o {
                let mut f = vec![0.0; d];
                self.drift_at(j, &ys[j], &mut f);
                fs.push(f);
            }
            let mut y = ys[j].clone();
            for (i, w) in params.row(r).iter().enumerate() {
                let scale = self.h * w;
                for (yi, fi) in y.iter_mut().zip(&fs[j - i]) {
                    *yi += scale * fi;
                }
            }
            ys.push(y);
        }
        (ys, fs)
    }

    pub fn endpoint(&self, params: &SolverParams) -> Vec<f64> {
        self.forward(params).0.pop().expect("non-empty trajectory")
    }

    /// Endpoint mean squared error against the ground truth at `t = 1`.
    pub fn loss(&self, params: &SolverParams) -> f64 {
        let end = self.endpoint(params);
        mse(&end, &self.gt[self.steps])
    }

    /// Loss and its gradient with respect to the weight matrix (row-major, `rows x order`).
    pub fn loss_and_grad(&self, params: &SolverParams) -> (f64, Vec<f64>) {
        let (d, o, s) = (self.problem.dim, self.order, self.steps);
        let (ys, fs) = self.forward(params);
        let target = &self.gt[s];
        let loss = mse(&ys[s], target);

        let mut grad = vec![0.0; self.rows() * o];
        // adjoints of states and drifts
        let mut lam: Vec<Vec<f64>> = vec![vec![0.0; d]; s + 1];
        let mut mu: Vec<Vec<f64>> = vec![vec![0.0; d]; s];
        for (l, (y, g)) in lam[s].iter_mut().zip(ys[s].iter().zip(target)) {
            *l = 2.0 * (y - g) / d as f64;
        }
        for r in (0..self.rows()).rev() {
            let j = o - 1 + r;
            // finish the adjoint of y_{j+1}: its drift feeds only steps already processed
            if j + 1 < s {
                self.problem.coupling_mul_t_add(&mu[j + 1], &mut lam[j + 1]);
            }
            let next = lam[j + 1].clone();
            for (i, w) in params.row(r).iter().enumerate() {
                let f = &fs[j - i];
                grad[r * o + i] = self.h * next.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
                let scale = self.h * w;
                for (m, l) in mu[j - i].iter_mut().zip(&next) {
                    *m += scale * l;
                }
            }
            for (a, b) in lam[j].iter_mut().zip(&next) {
                *a += b;
            }
        }
        (loss, grad)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSpec {
    pub iterations: usize,
    pub lr: f64,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        OptimizeSpec {
            iterations: 2000,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizedRun {
    pub params: SolverParams,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub rel_l2_error: f64,
}

/// Learns per-step weights with Adam (constant learning rate) from classic AB
/// initialization and evaluates the best-loss weights through the generic sampler.
pub fn optimize_weights(
    problem: &SyntheticProblem,
    steps: usize,
    order: usize,
    spec: OptimizeSpec,
) -> Result<OptimizedRun, SynthError> {
    let integrator = WeightedIntegrator::new(problem, steps, order)?;
    let mut params = integrator.initial_params();
    let n = integrator.rows() * order;
    let mut adam = Adam::new(n);
    let mut theta: Vec<f64> = (0..integrator.rows()).flat_map(|r| params.row(r).to_vec()).collect();

    let initial_loss = integrator.loss(&params);
    let mut best_loss = f64::INFINITY;
    let mut best = params.clone();
    for _ in 0..spec.iterations {
        let (loss, grad) = integrator.loss_and_grad(&params);
        if !loss.is_finite() {
            return Err(SynthError::NonFinite(loss));
        }
        if loss < best_loss {
            best_loss = loss;
            best = params.clone();
        }
        adam.step(&mut theta, &grad, spec.lr);
        for r in 0..integrator.rows() {
            params.row_mut(r).copy_from_slice(&theta[r * order..(r + 1) * order]);
        }
    }
    let final_loss = integrator.loss(&params);
    if final_loss.is_finite() && final_loss < best_loss {
        best_loss = final_loss;
        best = params.clone();
    }

    let schedule = TimeSchedule::ascending_grid(0.0, 1.0, steps)?;
    let history = exact_history(problem, &schedule, order);
    let opts = SampleOptions {
        shifting: false,
        scaling: false,
        guard: TimeGuard::Strict,
    };
    let r = dyweight_sample_with(problem, Start::History(&history), &best, &schedule, opts)?;
    let rel_l2_error = rel_l2_error(&r.final_state, &problem.gt_state(1.0))?;
    Ok(OptimizedRun {
        params: best,
        initial_loss,
        best_loss,
        rel_l2_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Standard,
    Optimized,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Optimized => "optimized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub k_values: Vec<usize>,
    pub s_values: Vec<usize>,
    pub orders: Vec<usize>,
    pub runs: usize,
    pub base_seed: u64,
    pub optimize: Option<OptimizeSpec>,
    pub coupling: CouplingScale,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            dim: DEFAULT_DIM,
            k_values: (1..=8).map(|i| 5 * i).collect(),
            s_values: (3..=10).map(|i| 2 * i).collect(),
            orders: vec![1, 2, 3, 4],
            runs: 50,
            base_seed: 0,
            optimize: None,
            coupling: CouplingScale::StdDev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub k: usize,
    pub s: usize,
    pub order: usize,
    pub variant: Variant,
    pub run_seed: u64,
    /// NaN when the cell failed.
    pub rel_l2_error: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMean {
    pub k: usize,
    pub s: usize,
    pub order: usize,
    pub variant: Variant,
    /// Successful runs in the mean.
    pub runs: usize,
    pub mean_rel_l2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub means: Vec<GridMean>,
}

impl GridReport {
    pub fn mean(&self, k: usize, s: usize, order: usize, variant: Variant) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.k == k && m.s == s && m.order == order && m.variant == variant)
            .map(|m| m.mean_rel_l2_error)
    }
}

/// Seed of run `run` within a grid; the same problem is shared by every `(S, order)` cell.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add(run as u64)
}

/// Runs every `(K, S, order, run)` cell (in parallel on the current rayon pool) and
/// aggregates means per `(K, S, order, variant)`. Failed cells are recorded, not fatal.
pub fn run_grid(spec: &GridSpec) -> GridReport {
    let mut cells = Vec::new();
    for &k in &spec.k_values {
        for &s in &spec.s_values {
            for &order in &spec.orders {
                for run in 0..spec.runs {
                    cells.push((k, s, order, run_seed(spec.base_seed, run)));
                }
            }
        }
    }
    let rows: Vec<Vec<GridRow>> = cells
        .par_iter()
        .map(|&(k, s, order, seed)| {
            let problem = SyntheticProblem::generate(spec.dim, k, seed, spec.coupling);
            let row = |variant, res: Result<f64, SynthError>| match res {
                Ok(e) => GridRow {
                    k,
                    s,
                    order,
                    variant,
                    run_seed: seed,
                    rel_l2_error: e,
                    failure: None,
                },
                Err(err) => GridRow {
                    k,
                    s,
                    order,
                    variant,
                    run_seed: seed,
                    rel_l2_error: f64::NAN,
                    failure: Some(err.to_string()),
                },
            };
            let mut out = vec![row(Variant::Standard, standard_error(&problem, s, order))];
            if let Some(opt) = spec.optimize {
                let res = optimize_weights(&problem, s, order, opt).map(|r| r.rel_l2_error);
                out.push(row(Variant::Optimized, res));
            }
            out
        })
        .collect();
    let rows: Vec<GridRow> = rows.into_iter().flatten().collect();
    let means = aggregate(&rows);
    GridReport { rows, means }
}

fn aggregate(rows: &[GridRow]) -> Vec<GridMean> {
    let mut keys: Vec<(usize, usize, usize, Variant)> = Vec::new();
    for r in rows {
        let key = (r.k, r.s, r.order, r.variant);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(k, s, order, variant)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.k == k && r.s == s && r.order == order && r.variant == variant)
                .filter(|r| r.failure.is_none())
                .map(|r| r.rel_l2_error)
                .collect();
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            GridMean {
                k,
                s,
                order,
                variant,
                runs: vals.len(),
                mean_rel_l2_error: mean,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_state(p: &SyntheticProblem, t: f64) -> Vec<f64> {
        (0..p.dim())
            .map(|d| {
                (0..=p.degree())
                    .map(|k| p.coeffs()[d * (p.degree() + 1) + k] * t.powi(k as i32))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn regeneration_is_bitwise() {
        let a = SyntheticProblem::generate(8, 5, 42, CouplingScale::StdDev);
        let b = SyntheticProblem::generate(8, 5, 42, CouplingScale::StdDev);
        assert_eq!(a, b);
        let c = SyntheticProblem::generate(8, 5, 43, CouplingScale::StdDev);
        assert_ne!(a.coeffs(), c.coeffs());
        // the coupling stream is independent of the polynomial degree
        let d = SyntheticProblem::generate(8, 9, 42, CouplingScale::StdDev);
        assert_eq!(a.coupling(), d.coupling());
    }

    #[test]
    fn sampled_moments_are_plausible() {
        let p = SyntheticProblem::generate(50, 40, 3, CouplingScale::StdDev);
        let c = p.coeffs();
        let var = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
        assert!((var - 4.0).abs() < 0.4, "coefficient variance {var}");
        let g: Vec<f64> = (0..50 * 50)
            .map(|i| p.coupling()[i] - if i % 51 == 0 { COUPLING_SHIFT } else { 0.0 })
            .collect();
        let sd = (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
        let expected = 0.1 / 50f64.sqrt();
        assert!((sd / expected - 1.0).abs() < 0.1, "coupling sd {sd}");
    }

    #[test]
    fn gt_state_examples() {
        let p = SyntheticProblem::generate(4, 0, 1, CouplingScale::StdDev);
        assert_eq!(p.gt_state(0.3), p.coeffs().to_vec());
        assert_eq!(p.gt_deriv(0.7), vec![0.0; 4]);

        let q = SyntheticProblem::generate(4, 1, 1, CouplingScale::StdDev);
        let slope: Vec<f64> = (0..4).map(|d| q.coeffs()[2 * d + 1]).collect();
        assert_eq!(q.gt_deriv(0.2), slope);
        assert_eq!(q.gt_deriv(0.9), slope);

        let r = SyntheticProblem::generate(6, 12, 9, CouplingScale::StdDev);
        let at0: Vec<f64> = (0..6).map(|d| r.coeffs()[13 * d]).collect();
        assert_eq!(r.gt_state(0.0), at0);
        for (a, b) in r.gt_state(0.37).iter().zip(naive_state(&r, 0.37)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let p = SyntheticProblem::generate(10, 20, 5, CouplingScale::StdDev);
        let h = 1e-6;
        let (up, dn) = (p.gt_state(0.5 + h), p.gt_state(0.5 - h));
        for (d, (a, b)) in p.gt_deriv(0.5).iter().zip(up.iter().zip(&dn)) {
            let fd = (a - b) / (2.0 * h);
            assert!((d - fd).abs() <= 1e-6 * d.abs().max(1.0), "{d} vs {fd}");
        }
    }

    #[test]
    fn drift_examples() {
        let p = SyntheticProblem::generate(7, 6, 11, CouplingScale::StdDev);
        let t = 0.45;
        let on = p.drift(t, &p.gt_state(t)).unwrap();
        for (a, b) in on.iter().zip(p.gt_deriv(t)) {
            assert!((a - b).abs() < 1e-12);
        }

        let no_coupling = SyntheticProblem::from_parts(6, p.coeffs().to_vec(), vec![0.0; 49]).unwrap();
        assert_eq!(no_coupling.drift(t, &[3.0; 7]).unwrap(), p.gt_deriv(t));

        let y: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
        let gt = p.gt_state(t);
        let gd = p.gt_deriv(t);
        let expected: Vec<f64> = (0..7)
            .map(|i| gd[i] + (0..7).map(|j| p.coupling()[i * 7 + j] * (y[j] - gt[j])).sum::<f64>())
            .collect();
        for (a, b) in p.drift(t, &y).unwrap().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(p.drift(t, &[1.0]), Err(SynthError::DimMismatch { .. })));
    }

    #[test]
    fn rel_error_examples() {
        let gt = [0.0, 4.0];
        assert_eq!(rel_l2_error(&gt, &gt).unwrap(), 0.0);
        assert_eq!(rel_l2_error(&[0.0, 8.0], &gt).unwrap(), 1.0);
        assert_eq!(rel_l2_error(&[1.0, 4.0], &gt).unwrap(), 0.25);
        assert!(matches!(rel_l2_error(&[1.0], &[0.0]), Err(SynthError::ZeroNorm)));
    }

    #[test]
    fn integrator_forward_matches_generic_sampler() {
        let p = SyntheticProblem::generate(12, 10, 2, CouplingScale::StdDev);
        for order in 1..=4 {
            let integ = WeightedIntegrator::new(&p, 9, order).unwrap();
            let mut params = integ.initial_params();
            params.row_mut(1)[0] += 0.3;
            let schedule = TimeSchedule::ascending_grid(0.0, 1.0, 9).unwrap();
            let history = exact_history(&p, &schedule, order);
            let opts = SampleOptions {
                shifting: false,
                scaling: false,
                guard: TimeGuard::Strict,
            };
            let r = dyweight_sample_with(&p, Start::History(&history), &params, &schedule, opts).unwrap();
            for (a, b) in integ.endpoint(&params).iter().zip(&r.final_state) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let p = SyntheticProblem::generate(10, 15, 4, CouplingScale::StdDev);
        for order in 1..=4 {
            let integ = WeightedIntegrator::new(&p, 8, order).unwrap();
            let mut params = integ.initial_params();
            for r in 0..integ.rows() {
                params.row_mut(r)[0] += 0.05 * r as f64;
            }
            let (_, grad) = integ.loss_and_grad(&params);
            for r in 0..integ.rows() {
                for i in 0..order {
                    let eps = 1e-6;
                    let mut up = params.clone();
                    up.row_mut(r)[i] += eps;
                    let mut dn = params.clone();
                    dn.row_mut(r)[i] -= eps;
                    let fd = (integ.loss(&up) - integ.loss(&dn)) / (2.0 * eps);
                    let g = grad[r * order + i];
                    assert!(
                        (g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1e-3),
                        "order {order} row {r} col {i}: {g} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn optimization_reduces_error() {
        let p = SyntheticProblem::generate(20, 20, 0, CouplingScale::StdDev);
        let std = standard_error(&p, 10, 3).unwrap();
        let opt = optimize_weights(&p, 10, 3, OptimizeSpec { iterations: 300, lr: 1e-3 }).unwrap();
        assert!(opt.best_loss < opt.initial_loss);
        assert!(opt.rel_l2_error < std);
    }

    #[test]
    fn grid_is_deterministic_and_complete() {
        let spec = GridSpec {
            dim: 6,
            k_values: vec![5, 10],
            s_values: vec![6, 8],
            orders: vec![1, 4],
            runs: 3,
            base_seed: 17,
            optimize: Some(OptimizeSpec { iterations: 5, lr: 1e-3 }),
            coupling: CouplingScale::StdDev,
        };
        let a = run_grid(&spec);
        let b = run_grid(&spec);
        assert_eq!(a.rows.len(), 2 * 2 * 2 * 3 * 2);
        assert_eq!(a.means.len(), 2 * 2 * 2 * 2);
        assert_eq!(
            format!("{:?}", a.rows),
            format!("{:?}", b.rows),
            "repeated grids must agree bitwise"
        );
    }

    #[test]
    fn failed_cells_are_marked() {
        let spec = GridSpec {
            dim: 4,
            k_values: vec![5],
            s_values: vec![3],
            orders: vec![4],
            runs: 2,
            base_seed: 0,
            optimize: None,
            coupling: CouplingScale::StdDev,
        };
        let report = run_grid(&spec);
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows.iter().all(|r| r.failure.is_some() && r.rel_l2_error.is_nan()));
        assert_eq!(report.means[0].runs, 0);
    }
}
