//! Exact denoiser of an isotropic Gaussian mixture under `x_t = x_0 + t * noise`.
//!
//! For component `k` with weight `pi_k`, mean `mu_k` and scale `s_k`, the noisy marginal is
//! `N(mu_k, (s_k^2 + t^2) I)` and the component posterior mean is
//! `(s_k^2 x + t^2 mu_k) / (s_k^2 + t^2)`. The denoiser blends these with the component
//! responsibilities, computed in log space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::DriftField;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("a mixture needs at least one component")]
    Empty,
    #[error("component weights must be positive and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("component {0} has a non-positive scale")]
    BadScale(usize),
    #[error("component {index} has dimension {got}, expected {expected}")]
    DimMismatch { index: usize, expected: usize, got: usize },
    #[error("closed-form solution needs exactly one component, got {0}")]
    NotSingle(usize),
    #[error("invalid mixture JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianMixture {
    components: Vec<Component>,
    #[serde(skip)]
    dim: usize,
}

#[derive(Deserialize)]
struct RawMixture {
    components: Vec<Component>,
}

impl<'de> Deserialize<'de> for GaussianMixture {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawMixture::deserialize(deserializer)?;
        GaussianMixture::new(raw.components).map_err(serde::de::Error::custom)
    }
}

const WEIGHT_TOL: f64 = 1e-9;

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self, MixtureError> {
        let first = components.first().ok_or(MixtureError::Empty)?;
        let dim = first.mean.len();
        let mut total = 0.0;
        for (index, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(MixtureError::DimMismatch {
                    index,
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) {
                return Err(MixtureError::BadScale(index));
            }
            if c.weight.is_nan() || c.weight <= 0.0 {
                return Err(MixtureError::BadWeights(f64::NAN));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MixtureError::BadWeights(total));
        }
        Ok(GaussianMixture { components, dim })
    }

    pub fn single(mean: Vec<f64>, scale: f64) -> Result<Self, MixtureError> {
        GaussianMixture::new(vec![Component {
            weight: 1.0,
            mean,
            scale,
        }])
    }

    /// The default two-mode fixture: means `(1, 1)` and `(-1, -1)`, scale 0.05, equal weights.
    pub fn two_modes() -> Self {
        GaussianMixture::new(vec![
            Component {
                weight: 0.5,
                mean: vec![1.0, 1.0],
                scale: 0.05,
            },
            Component {
                weight: 0.5,
                mean: vec![-1.0, -1.0],
                scale: 0.05,
            },
        ])
        .expect("fixture is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, MixtureError> {
        serde_json::from_str(text).map_err(|e| MixtureError::Json(e.to_string()))
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unnormalized log posterior weight of `c` given `x` at noise level `t`.
    fn log_weight(&self, c: &Component, x: &[f64], t: f64) -> f64 {
        let var = c.scale * c.scale + t * t;
        let dist2: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        c.weight.ln() - 0.5 * dist2 / var - 0.5 * self.dim as f64 * var.ln()
    }

    /// Posterior probabilities of each component given `x` at noise level `t`.
    pub fn responsibilities(&self, x: &[f64], t: f64) -> Vec<f64> {
        let logits: Vec<f64> = self.components.iter().map(|c| self.log_weight(c, x, t)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= z);
        r
    }

    /// Posterior mean `E[x_0 | x_t = x]`.
    pub fn denoise(&self, x: &[f64], t: f64) -> Vec<f64> {
        if t == 0.0 {
            return x.to_vec();
        }
        let r = self.responsibilities(x, t);
        let mut out = vec![0.0; self.dim];
        for (c, rk) in self.components.iter().zip(r) {
            let s2 = c.scale * c.scale;
            let t2 = t * t;
            let inv = 1.0 / (s2 + t2);
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o += rk * (s2 * xi + t2 * mi) * inv;
            }
        }
        out
    }

    pub fn drift_field(&self) -> MixtureField<'_> {
        MixtureField { mixture: self }
    }

    /// Exact probability-flow state at time `t` starting from `x_t_start` at `t_start`.
    ///
    /// Only defined for a single component, where the flow is
    /// `x(t) = mu + (x(T) - mu) * sqrt((s^2 + t^2) / (s^2 + T^2))`.
    pub fn exact_solution(&self, x_start: &[f64], t_start: f64, t: f64) -> Result<Vec<f64>, MixtureError> {
        if self.components.len() != 1 {
            return Err(MixtureError::NotSingle(self.components.len()));
        }
        let c = &self.components[0];
        let s2 = c.scale * c.scale;
        let ratio = ((s2 + t * t) / (s2 + t_start * t_start)).sqrt();
        Ok(x_start
            .iter()
            .zip(&c.mean)
            .map(|(x, m)| m + (x - m) * ratio)
            .collect())
    }
}

/// Probability-flow drift `(x - D(x, t)) / t` of a mixture.
#[derive(Debug, Clone, Copy)]
pub struct MixtureField<'a> {
    mixture: &'a GaussianMixture,
}

impl DriftField for MixtureField<'_> {
    fn dim(&self) -> usize {
        self.mixture.dim
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        // (x - D) / t = t * sum_k r_k (x - mu_k) / (s_k^2 + t^2), which avoids cancellation.
        // Two passes over the components keep this allocation-free.
        let mix = self.mixture;
        let max = mix
            .components
            .iter()
            .map(|c| mix.log_weight(c, x, t))
            .fold(f64::NEG_INFINITY, f64::max);
        out.fill(0.0);
        let mut z = 0.0;
        for c in &mix.components {
            let rk = (mix.log_weight(c, x, t) - max).exp();
            z += rk;
            let f = rk * t / (c.scale * c.scale + t * t);
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o += f * (xi - mi);
            }
        }
        out.iter_mut().for_each(|o| *o /= z);
    }

    fn requires_positive_time(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{euler_step, DriftField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> GaussianMixture {
        GaussianMixture::single(vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn denoise_examples() {
        assert_eq!(unit().denoise(&[2.0], 1.0), vec![1.0]);
        let m = GaussianMixture::two_modes();
        assert_eq!(m.denoise(&[0.3, -0.7], 0.0), vec![0.3, -0.7]);

        let sym = GaussianMixture::new(vec![
            Component { weight: 0.5, mean: vec![1.0], scale: 1e-6 },
            Component { weight: 0.5, mean: vec![-1.0], scale: 1e-6 },
        ])
        .unwrap();
        assert!(sym.denoise(&[0.0], 100.0)[0].abs() < 1e-15);
    }

    #[test]
    fn drift_examples() {
        let m = unit();
        let f = m.drift_field();
        assert!((f.eval(&[2.0], 1.0)[0] - 1.0).abs() < 1e-15);
        // x t / (1 + t^2) for a handful of points
        for &(x, t) in &[(0.5, 0.1), (-3.0, 7.0), (10.0, 80.0)] {
            let expected = x * t / (1.0 + t * t);
            assert!((f.eval(&[x], t)[0] - expected).abs() <= 1e-14 * expected.abs().max(1.0));
        }
        assert_eq!(f.eval(&[0.0], 3.0), vec![0.0]);
        let two = GaussianMixture::two_modes();
        assert_eq!(two.drift_field().eval(&[0.1, 0.2], 0.5).len(), 2);
        assert!(two.drift_field().requires_positive_time());
    }

    #[test]
    fn exact_solution_examples() {
        let m = unit();
        assert_eq!(m.exact_solution(&[4.0], 80.0, 80.0).unwrap(), vec![4.0]);
        let x0 = m.exact_solution(&[4.0], 80.0, 0.0).unwrap()[0];
        assert!((x0 - 4.0 / 6401f64.sqrt()).abs() < 1e-15);
        assert!((x0 - 0.0499961).abs() < 1e-7);
        let a = m.exact_solution(&[3.0], 10.0, 0.5).unwrap()[0];
        let b = m.exact_solution(&[6.0], 10.0, 0.5).unwrap()[0];
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert_eq!(
            GaussianMixture::two_modes().exact_solution(&[0.0, 0.0], 1.0, 0.0),
            Err(MixtureError::NotSingle(2))
        );
    }

    #[test]
    fn exact_solution_matches_fine_euler() {
        let m = unit();
        let f = m.drift_field();
        let steps = 100_000;
        // geometric grid from 80 down to 1e-6, then a last hop to 0
        let mut times: Vec<f64> = (0..steps)
            .map(|i| 80.0 * (1e-6f64 / 80.0).powf(i as f64 / (steps - 1) as f64))
            .collect();
        times.push(0.0);
        let mut x = vec![4.0];
        for w in times.windows(2) {
            x = euler_step(&f, &x, w[0], w[1]).unwrap();
        }
        let exact = m.exact_solution(&[4.0], 80.0, 0.0).unwrap()[0];
        assert!((x[0] - exact).abs() / exact < 1e-3, "{} vs {}", x[0], exact);
    }

    #[test]
    fn shifted_single_gaussian_closed_form() {
        let m = GaussianMixture::single(vec![2.0, -1.0], 0.5).unwrap();
        let x = m.exact_solution(&[30.0, 12.0], 20.0, 3.0).unwrap();
        let ratio = ((0.25 + 9.0) / (0.25 + 400.0f64)).sqrt();
        assert!((x[0] - (2.0 + 28.0 * ratio)).abs() < 1e-13);
        assert!((x[1] - (-1.0 + 13.0 * ratio)).abs() < 1e-13);
    }

    #[test]
    fn denoiser_consistency_and_convexity() {
        let m = GaussianMixture::two_modes();
        let f = m.drift_field();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let t: f64 = 10f64.powf(rng.gen_range(-3.0..2.0));
            let d = m.denoise(&x, t);
            let eps = f.eval(&x, t);
            for i in 0..2 {
                let rebuilt = x[i] - t * eps[i];
                assert!((d[i] - rebuilt).abs() <= 1e-12 * d[i].abs().max(x[i].abs()).max(1.0));
            }
            let r = m.responsibilities(&x, t);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn far_points_do_not_underflow() {
        let m = GaussianMixture::two_modes();
        let d = m.denoise(&[1e4, -1e4], 1e-3);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn json_fixture_loading() {
        let text = r#"{"components": [
            {"weight": 0.25, "mean": [0.0, 1.0], "scale": 0.1},
            {"weight": 0.75, "mean": [2.0, 0.0], "scale": 0.3}
        ]}"#;
        let m = GaussianMixture::from_json(text).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.components().len(), 2);

        let bad = r#"{"components": [{"weight": 0.5, "mean": [0.0], "scale": 1.0}]}"#;
        assert!(matches!(GaussianMixture::from_json(bad), Err(MixtureError::Json(_))));
        let ragged = r#"{"components": [
            {"weight": 0.5, "mean": [0.0], "scale": 1.0},
            {"weight": 0.5, "mean": [0.0, 1.0], "scale": 1.0}
        ]}"#;
        assert!(GaussianMixture::from_json(ragged).is_err());
        assert_eq!(GaussianMixture::new(vec![]), Err(MixtureError::Empty));
    }
}
