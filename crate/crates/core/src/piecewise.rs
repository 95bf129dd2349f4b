//! Least-squares fit of a constrained piecewise-linear inverse rank map.
//!
//! The model is
//! `m(x) = x + z0 (x-k0)+ + z1 (x-k1)+ + z2 (x-k2)+ - (z0+z1+z2) (x-k3)+`,
//! fitted to the empirical transport `F2^{-1} o F1` on a uniform grid of `[k0, k3]`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::transport::{DiscreteDist, Extrapolation, Transport};

pub const DEFAULT_KNOTS: [f64; 4] = [12.0, 15.2, 23.4, 26.8];

/// Number of grid cells used when no step is given.
const DEFAULT_CELLS: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseQFit {
    pub knots: [f64; 4],
    pub zeta: [f64; 3],
    /// Riemann approximation of the integrated squared residual.
    pub fit_error: f64,
}

impl PiecewiseQFit {
    /// Coefficient of `(x - k3)+`.
    pub fn implied_last(&self) -> f64 {
        -(self.zeta[0] + self.zeta[1] + self.zeta[2])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        let mut v = x;
        for (z, kj) in self.zeta.iter().zip(k) {
            v += z * (x - kj).max(0.0);
        }
        v + self.implied_last() * (x - k[3]).max(0.0)
    }

    /// `m(x) - x` for `x >= k3`; the map has unit slope there but keeps this offset.
    pub fn upper_offset(&self) -> f64 {
        (0..3).map(|j| self.zeta[j] * (self.knots[3] - self.knots[j])).sum()
    }
}

fn basis(x: f64, knots: &[f64; 4]) -> Vector3<f64> {
    Vector3::new(
        (x - knots[0]).max(0.0),
        (x - knots[1]).max(0.0),
        (x - knots[2]).max(0.0),
    )
}

/// Fits the map carrying the `s1` treatment distribution onto the `s2` one.
pub fn fit_piecewise_q(
    s1: &[f64],
    s2: &[f64],
    knots: [f64; 4],
    grid_step: Option<f64>,
) -> Result<PiecewiseQFit> {
    if knots.iter().any(|k| !k.is_finite()) || !knots.windows(2).all(|w| w[0] < w[1]) {
        return invalid(format!("knots must be strictly ascending, got {knots:?}"));
    }
    let step = grid_step.unwrap_or((knots[3] - knots[0]) / DEFAULT_CELLS);
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("grid step must be positive, got {step}"));
    }
    let mut a = s1.to_vec();
    let mut b = s2.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    for j in 0..3 {
        let lo = a.partition_point(|&v| v < knots[j]);
        let hi = a.partition_point(|&v| v < knots[j + 1]);
        if hi == lo {
            return Err(Error::Singular(format!(
                "no sample mass in [{}, {})",
                knots[j],
                knots[j + 1]
            )));
        }
    }
    let target = Transport::new(
        DiscreteDist::from_sorted_unit(&a)?,
        DiscreteDist::from_sorted_unit(&b)?,
        Extrapolation::Shift,
    );

    let cells = ((knots[3] - knots[0]) / step).round().max(1.0) as usize;
    let h = (knots[3] - knots[0]) / cells as f64;
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    let mut rows = Vec::with_capacity(cells);
    for i in 0..cells {
        let x = knots[0] + (i as f64 + 0.5) * h;
        let z = basis(x, &knots);
        let r = target.eval(x) - x;
        xtx += z * z.transpose();
        xty += z * r;
        rows.push((z, r));
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    let zeta = chol.solve(&xty);
    let fit_error = rows
        .iter()
        .map(|(z, r)| (z.dot(&zeta) - r).powi(2))
        .sum::<f64>()
        * h;
    Ok(PiecewiseQFit {
        knots,
        zeta: [zeta[0], zeta[1], zeta[2]],
        fit_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut g = crate::rng::stream(seed, 0);
        (0..n).map(|_| 5.0 + 35.0 * g.random::<f64>()).collect()
    }

    #[test]
    fn identical_samples_give_zero() {
        let x = sample(5000, 1);
        let f = fit_piecewise_q(&x, &x, DEFAULT_KNOTS, None).unwrap();
        for z in f.zeta {
            assert!(z.abs() < 1e-8);
        }
        assert!(f.fit_error < 1e-16);
    }

    #[test]
    fn recovers_generating_map() {
        let truth = PiecewiseQFit {
            knots: DEFAULT_KNOTS,
            zeta: [0.10, -0.05, -0.05],
            fit_error: 0.0,
        };
        // period-2 treatments are the period-1 draws pushed through the map
        let x1 = sample(20_000, 2);
        let x2: Vec<f64> = x1.iter().map(|&v| truth.eval(v)).collect();
        let f = fit_piecewise_q(&x1, &x2, DEFAULT_KNOTS, None).unwrap();
        for j in 0..3 {
            assert!((f.zeta[j] - truth.zeta[j]).abs() < 0.02, "{:?}", f.zeta);
        }
    }

    #[test]
    fn map_shape() {
        let f = PiecewiseQFit {
            knots: DEFAULT_KNOTS,
            zeta: [0.2, 0.1, -0.4],
            fit_error: 0.0,
        };
        assert_eq!(f.eval(3.0), 3.0);
        assert_eq!(f.eval(12.0), 12.0);
        let (a, b) = (f.eval(30.0), f.eval(40.0));
        assert!((b - a - 10.0).abs() < 1e-12);
        assert!((a - 30.0 - f.upper_offset()).abs() < 1e-12);
        // continuity at the knots
        for k in DEFAULT_KNOTS {
            assert!((f.eval(k + 1e-9) - f.eval(k - 1e-9)).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_segment_is_singular() {
        let x: Vec<f64> = (0..100).map(|i| 16.0 + i as f64 * 0.05).collect();
        assert!(matches!(
            fit_piecewise_q(&x, &x, DEFAULT_KNOTS, None),
            Err(Error::Singular(_))
        ));
        assert!(fit_piecewise_q(&x, &x, [1.0, 0.0, 2.0, 3.0], None).is_err());
    }

    #[test]
    fn json_keys() {
        let f = PiecewiseQFit {
            knots: DEFAULT_KNOTS,
            zeta: [0.0; 3],
            fit_error: 0.0,
        };
        let v = serde_json::to_value(&f).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["fit_error", "knots", "zeta"]);
    }
}
