//! Adams-Bashforth coefficients for uniform and non-uniform step histories.
//!
//! Coefficients are normalized by the step size: an update is
//! `x_next = x + h * sum_i betas[i] * eps[i]` where `eps[0]` is the current drift and
//! `eps[i]` the drift `i` steps back. Histories are described by
//! `taus[i-1] = t_n - t_{n+i}`, the signed offset from the current time to the history
//! point (same sign as `h`).

use thiserror::Error;

/// Largest |h| or |tau| accepted by the closed forms.
pub const MAX_SPAN: f64 = 1e6;

/// Panels used by the Simpson oracle.
pub const ORACLE_PANELS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum CoeffError {
    #[error("order {0} is outside the supported range {1}..=4")]
    UnsupportedOrder(usize, usize),
    #[error("expected {expected} history offsets, got {got}")]
    WrongTauCount { expected: usize, got: usize },
    #[error("step size must be finite and non-zero")]
    ZeroStep,
    #[error("history offsets must be non-zero, share the sign of h and grow strictly in magnitude: {0:?}")]
    BadTaus(Vec<f64>),
    #[error("step or history span exceeds {MAX_SPAN}")]
    SpanTooLarge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbCoeffs {
    pub order: usize,
    pub betas: Vec<f64>,
}

impl AbCoeffs {
    pub fn sum(&self) -> f64 {
        self.betas.iter().sum()
    }
}

/// Exact classic AB numerators over a common denominator, indexed by order.
const CLASSIC: [(&[i64], i64); 4] = [
    (&[1], 1),
    (&[3, -1], 2),
    (&[23, -16, 5], 12),
    (&[55, -59, 37, -9], 24),
];

/// Classic coefficients as `(numerators, denominator)`.
pub fn classic_ab_rational(order: usize) -> Result<(&'static [i64], i64), CoeffError> {
    if !(1..=4).contains(&order) {
        return Err(CoeffError::UnsupportedOrder(order, 1));
    }
    Ok(CLASSIC[order - 1])
}

/// Uniform-step Adams-Bashforth coefficients; order 1 is Euler.
pub fn classic_ab(order: usize) -> Result<AbCoeffs, CoeffError> {
    let (nums, den) = classic_ab_rational(order)?;
    Ok(AbCoeffs {
        order,
        betas: nums.iter().map(|&n| n as f64 / den as f64).collect(),
    })
}

fn check_history(order: usize, h: f64, taus: &[f64]) -> Result<(), CoeffError> {
    if !(1..=4).contains(&order) {
        return Err(CoeffError::UnsupportedOrder(order, 1));
    }
    if taus.len() != order - 1 {
        return Err(CoeffError::WrongTauCount {
            expected: order - 1,
            got: taus.len(),
        });
    }
    if !(h.is_finite() && h != 0.0) {
        return Err(CoeffError::ZeroStep);
    }
    if h.abs() > MAX_SPAN || taus.iter().any(|t| t.abs() > MAX_SPAN) {
        return Err(CoeffError::SpanTooLarge);
    }
    let sign = h.signum();
    let mut prev = 0.0;
    for &tau in taus {
        if !(tau.is_finite() && tau.signum() == sign && tau.abs() > prev) {
            return Err(CoeffError::BadTaus(taus.to_vec()));
        }
        prev = tau.abs();
    }
    Ok(())
}

/// Closed-form coefficients from integrating the Lagrange interpolant of the
/// drift history over `[0, h]` (in the shifted variable `u = t - t_n`).
pub fn general_ab(order: usize, h: f64, taus: &[f64]) -> Result<AbCoeffs, CoeffError> {
    check_history(order, h, taus)?;
    let betas = match order {
        1 => vec![1.0],
        2 => {
            let t1 = taus[0];
            vec![1.0 + h / (2.0 * t1), -h / (2.0 * t1)]
        }
        3 => {
            let (t1, t2) = (taus[0], taus[1]);
            let b0 = 1.0 + h / 2.0 * (t1 + t2) / (t1 * t2) + h * h / (3.0 * t1 * t2);
            let hist = |ti: f64, other: f64| {
                (h * h / 3.0 + h * other / 2.0) / (ti * (ti - other))
            };
            vec![b0, hist(t1, t2), hist(t2, t1)]
        }
        4 => {
            let sum_inv: f64 = taus.iter().map(|t| 1.0 / t).sum();
            let pair_inv = 1.0 / (taus[0] * taus[1])
                + 1.0 / (taus[0] * taus[2])
                + 1.0 / (taus[1] * taus[2]);
            let prod: f64 = taus.iter().product();
            let b0 = 1.0
                + h / 2.0 * sum_inv
                + h * h / 3.0 * pair_inv
                + h * h * h / (4.0 * prod);
            let mut betas = vec![b0];
            for i in 0..3 {
                let ti = taus[i];
                let others: Vec<f64> = (0..3).filter(|&j| j != i).map(|j| taus[j]).collect();
                let s1 = others[0] + others[1];
                let s2 = others[0] * others[1];
                // The product runs over tau_0 = 0 as well, contributing the factor -tau_i.
                let denom = -ti * (others[0] - ti) * (others[1] - ti);
                betas.push((h * h * h / 4.0 + h * h / 3.0 * s1 + h / 2.0 * s2) / denom);
            }
            betas
        }
        _ => unreachable!(),
    };
    Ok(AbCoeffs { order, betas })
}

/// Same coefficients computed by composite Simpson quadrature of each Lagrange basis
/// polynomial, used to cross-check [`general_ab`].
pub fn quadrature_oracle(order: usize, h: f64, taus: &[f64]) -> Result<AbCoeffs, CoeffError> {
    check_history(order, h, taus)?;
    let nodes: Vec<f64> = std::iter::once(0.0).chain(taus.iter().map(|t| -t)).collect();
    let basis = |i: usize, u: f64| -> f64 {
        nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &uj)| (u - uj) / (nodes[i] - uj))
            .product()
    };
    let panels = ORACLE_PANELS;
    let du = h / panels as f64;
    let betas = (0..order)
        .map(|i| {
            let mut acc = basis(i, 0.0) + basis(i, h);
            for k in 1..panels {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * basis(i, k as f64 * du);
            }
            acc * du / 3.0 / h
        })
        .collect();
    Ok(AbCoeffs { order, betas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn classic_table() {
        assert_eq!(classic_ab(1).unwrap().betas, vec![1.0]);
        assert_eq!(classic_ab(2).unwrap().betas, vec![1.5, -0.5]);
        assert_eq!(
            classic_ab(3).unwrap().betas,
            vec![23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0]
        );
        assert_eq!(
            classic_ab(4).unwrap().betas,
            vec![55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0]
        );
        for order in 1..=4 {
            let (nums, den) = classic_ab_rational(order).unwrap();
            assert_eq!(nums.iter().sum::<i64>(), den);
        }
        assert_eq!(classic_ab(0), Err(CoeffError::UnsupportedOrder(0, 1)));
        assert_eq!(classic_ab(5), Err(CoeffError::UnsupportedOrder(5, 1)));
    }

    #[test]
    fn general_recovers_classic_on_unit_steps() {
        assert_close(&general_ab(2, 1.0, &[1.0]).unwrap().betas, &[1.5, -0.5], 1e-15);
        assert_close(&general_ab(2, 1.0, &[2.0]).unwrap().betas, &[1.25, -0.25], 1e-15);
        assert_close(
            &general_ab(3, 1.0, &[1.0, 2.0]).unwrap().betas,
            &classic_ab(3).unwrap().betas,
            1e-15,
        );
        assert_close(
            &general_ab(4, 1.0, &[1.0, 2.0, 3.0]).unwrap().betas,
            &classic_ab(4).unwrap().betas,
            1e-14,
        );
    }

    #[test]
    fn negative_direction_matches_positive() {
        // Flipping the direction of time flips h and every tau; the ratios are unchanged.
        let pos = general_ab(4, 0.3, &[0.5, 0.9, 1.6]).unwrap();
        let neg = general_ab(4, -0.3, &[-0.5, -0.9, -1.6]).unwrap();
        assert_close(&pos.betas, &neg.betas, 1e-14);
    }

    #[test]
    fn oracle_examples() {
        assert_close(&quadrature_oracle(2, 1.0, &[1.0]).unwrap().betas, &[1.5, -0.5], 1e-9);
        let a = general_ab(3, 0.7, &[0.3, 1.1]).unwrap();
        let b = quadrature_oracle(3, 0.7, &[0.3, 1.1]).unwrap();
        assert_close(&a.betas, &b.betas, 1e-9);
        let a = general_ab(4, 0.2, &[0.5, 0.9, 1.6]).unwrap();
        let b = quadrature_oracle(4, 0.2, &[0.5, 0.9, 1.6]).unwrap();
        assert_close(&a.betas, &b.betas, 1e-9);
    }

    #[test]
    fn rejects_degenerate_histories() {
        assert_eq!(
            general_ab(3, 1.0, &[1.0, 1.0]),
            Err(CoeffError::BadTaus(vec![1.0, 1.0]))
        );
        assert_eq!(
            general_ab(3, 1.0, &[1.0]),
            Err(CoeffError::WrongTauCount { expected: 2, got: 1 })
        );
        assert_eq!(general_ab(2, 0.0, &[1.0]), Err(CoeffError::ZeroStep));
        assert_eq!(general_ab(2, 1.0, &[-1.0]), Err(CoeffError::BadTaus(vec![-1.0])));
        assert_eq!(general_ab(2, 2e6, &[1.0]), Err(CoeffError::SpanTooLarge));
        assert_eq!(
            quadrature_oracle(4, 1.0, &[1.0, 3.0, 2.0]),
            Err(CoeffError::BadTaus(vec![1.0, 3.0, 2.0]))
        );
    }

    proptest! {
        #[test]
        fn uniform_history_is_classic(order in 2usize..=4, h in 1e-6f64..=10.0) {
            let taus: Vec<f64> = (1..order).map(|i| i as f64 * h).collect();
            let g = general_ab(order, h, &taus).unwrap();
            let c = classic_ab(order).unwrap();
            for (a, b) in g.betas.iter().zip(&c.betas) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            prop_assert!((g.sum() - 1.0).abs() <= 1e-12);
        }
    }
}
