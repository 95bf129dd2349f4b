//! Synthetic repeated cross-sections with known structure, and brute-force
//! oracles for the quantities the estimators target.
//!
//! Every design is written as a period-T structural outcome `Y_T(x)` driven by a
//! rank `V` and a latent error, plus a strictly increasing trend `g_t` so that
//! `Y_t = g_t(Y_T(X_t))`. Treatments are increasing functions of the rank, so the
//! population rank map and crossing points are available in closed form or by
//! bisection on known CDFs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::effects::{neighbors, secant_bounds, BoundsResult};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, HYPER_STREAM, ORACLE_STREAM, SIM_STREAM};

/// Draw count below which oracles refuse to run.
pub const MIN_ORACLE_DRAWS: usize = 10_000;

const BISECT_TOL: f64 = 1e-10;

fn std_normal() -> Normal {
    Normal::standard()
}

fn phi(z: f64) -> f64 {
    std_normal().cdf(z)
}

fn phi_inv(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

fn default_bounds_mu() -> f64 {
    2.5
}

fn default_one() -> f64 {
    1.0
}

fn default_half() -> f64 {
    0.5
}

/// A design before hyper-parameters are drawn and lengths are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Dgp {
    /// `Y_t = alpha_t + beta X_t + U`, `X_t = gamma_t + delta_t eta`, `corr(U, eta) = rho`.
    LinearSystem {
        alpha: Vec<f64>,
        beta: f64,
        gamma: Vec<f64>,
        delta: Vec<f64>,
        rho: f64,
    },
    /// `Y_t = f_t(a0 + a1 U + X_t (b0 + b1 Phi(U)))` with affine
    /// `f_t(y) = f_shift_t + f_scale_t y` and log-normal treatments
    /// `X_t = exp(gamma_t + delta_t eta)`, `corr(U, eta) = rho`.
    QuantileRc {
        f_shift: Vec<f64>,
        f_scale: Vec<f64>,
        alpha: [f64; 2],
        beta: [f64; 2],
        gamma: Vec<f64>,
        delta: Vec<f64>,
        rho: f64,
    },
    /// `Y_t = 1 - exp(-0.5 (delta_t + X_t + U))`, `X_t = mu_t + sigma_t Phi^{-1}(V)`,
    /// `U | V ~ N(V, 1)`. Parameters of the comparison periods left out are drawn
    /// once from `mu ~ N(mu_ref, 1)`, `sigma ~ chi2(1)`, `delta ~ N(0, 1)`.
    BoundsExample {
        #[serde(default)]
        mu: Option<Vec<f64>>,
        #[serde(default)]
        sigma: Option<Vec<f64>>,
        #[serde(default)]
        delta: Option<Vec<f64>>,
        #[serde(default = "default_bounds_mu")]
        mu_ref: f64,
        #[serde(default = "default_one")]
        sigma_ref: f64,
        #[serde(default)]
        delta_ref: f64,
    },
    /// `Y_t = delta_t + U0 + X_t U1` with `U1 = slope_base + slope_rank V`,
    /// `U0 = V + noise_sd * e`, `X_t = mu_t + sigma_t Phi^{-1}(V)`.
    RcLinear {
        delta: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        #[serde(default = "default_half")]
        slope_base: f64,
        #[serde(default = "default_one")]
        slope_rank: f64,
        #[serde(default = "default_one")]
        noise_sd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Number of periods; the last one is the reference period.
    #[serde(default)]
    pub periods: Option<usize>,
    /// Seed for hyper-parameter draws. Data draws take their own seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub dgp: Dgp,
}

impl DgpSpec {
    /// The two-period linear system with `g(y) = y + 1`, `beta = 2` and a crossing at 2.
    pub fn linear_default() -> Self {
        Self {
            periods: Some(2),
            seed: 0,
            dgp: Dgp::LinearSystem {
                alpha: vec![1.0, 0.0],
                beta: 2.0,
                gamma: vec![0.0, 1.0],
                delta: vec![2.0, 1.0],
                rho: 0.5,
            },
        }
    }

    /// Bounds design with `periods` periods and hyper-parameters drawn from `seed`.
    pub fn bounds_default(periods: usize, seed: u64) -> Self {
        Self {
            periods: Some(periods),
            seed,
            dgp: Dgp::BoundsExample {
                mu: None,
                sigma: None,
                delta: None,
                mu_ref: 2.5,
                sigma_ref: 1.0,
                delta_ref: 0.0,
            },
        }
    }

    /// Three-period random-coefficient design with crossings at -1 and 1.
    pub fn rc_linear_default() -> Self {
        Self {
            periods: Some(3),
            seed: 0,
            dgp: Dgp::RcLinear {
                delta: vec![0.5, -0.5, 0.0],
                mu: vec![1.0, 0.5, 0.0],
                sigma: vec![2.0, 0.5, 1.0],
                slope_base: 0.5,
                slope_rank: 1.0,
                noise_sd: 1.0,
            },
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validates the design and fixes every per-period parameter.
    pub fn resolve(&self) -> Result<Population> {
        let check_len = |name: &str, v: &[f64], want: usize| -> Result<()> {
            if v.len() != want {
                return invalid(format!("{name} has {} entries, expected {want}", v.len()));
            }
            Ok(())
        };
        let periods_from = |len: usize| -> Result<usize> {
            match self.periods {
                Some(p) if p != len => invalid(format!("periods = {p} but parameters cover {len} periods")),
                _ => Ok(len),
            }
        };
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if let Some(bad) = v.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                return invalid(format!("{name} must be positive and finite, got {bad}"));
            }
            Ok(())
        };
        let rho_ok = |rho: f64| -> Result<()> {
            if !(rho.abs() < 1.0) {
                return invalid(format!("rho must lie in (-1, 1), got {rho}"));
            }
            Ok(())
        };
        let model = match &self.dgp {
            Dgp::LinearSystem { alpha, beta, gamma, delta, rho } => {
                let t = periods_from(alpha.len())?;
                check_len("gamma", gamma, t)?;
                check_len("delta", delta, t)?;
                positive("delta", delta)?;
                rho_ok(*rho)?;
                distinct_scales("delta", delta)?;
                Structure::Linear {
                    alpha: alpha.clone(),
                    beta: *beta,
                    gamma: gamma.clone(),
                    delta: delta.clone(),
                    rho: *rho,
                }
            }
            Dgp::QuantileRc { f_shift, f_scale, alpha, beta, gamma, delta, rho } => {
                let t = periods_from(f_shift.len())?;
                check_len("f_scale", f_scale, t)?;
                check_len("gamma", gamma, t)?;
                check_len("delta", delta, t)?;
                positive("f_scale", f_scale)?;
                positive("delta", delta)?;
                rho_ok(*rho)?;
                if !(alpha[1] > 0.0) || beta[1] < 0.0 {
                    return invalid("quantile design needs alpha[1] > 0 and beta[1] >= 0");
                }
                distinct_scales("delta", delta)?;
                Structure::QuantileRc {
                    f_shift: f_shift.clone(),
                    f_scale: f_scale.clone(),
                    alpha: *alpha,
                    beta: *beta,
                    gamma: gamma.clone(),
                    delta: delta.clone(),
                    rho: *rho,
                }
            }
            Dgp::BoundsExample { mu, sigma, delta, mu_ref, sigma_ref, delta_ref } => {
                let given = [mu, sigma, delta].iter().filter_map(|v| v.as_ref().map(Vec::len)).max();
                let t = match (self.periods, given) {
                    (Some(p), _) => p,
                    (None, Some(g)) => g + 1,
                    (None, None) => return invalid("bounds design needs periods or explicit parameters"),
                };
                if t < 2 {
                    return invalid("a design needs at least 2 periods");
                }
                let mut g = rng::stream(self.seed, HYPER_STREAM);
                let mut draws = Vec::with_capacity(t - 1);
                for _ in 1..t {
                    let a: f64 = StandardNormal.sample(&mut g);
                    let b: f64 = StandardNormal.sample(&mut g);
                    let c: f64 = StandardNormal.sample(&mut g);
                    draws.push((mu_ref + a, b * b, c));
                }
                let pick = |given: &Option<Vec<f64>>, name: &str, k: usize| -> Result<Vec<f64>> {
                    match given {
                        Some(v) => {
                            check_len(name, v, t - 1)?;
                            Ok(v.clone())
                        }
                        None => Ok(draws.iter().map(|d| [d.0, d.1, d.2][k]).collect()),
                    }
                };
                let mut m = pick(mu, "mu", 0)?;
                let mut s = pick(sigma, "sigma", 1)?;
                let mut d = pick(delta, "delta", 2)?;
                m.push(*mu_ref);
                s.push(*sigma_ref);
                d.push(*delta_ref);
                positive("sigma", &s)?;
                distinct_scales("sigma", &s)?;
                Structure::Bounds { mu: m, sigma: s, delta: d }
            }
            Dgp::RcLinear { delta, mu, sigma, slope_base, slope_rank, noise_sd } => {
                let t = periods_from(delta.len())?;
                check_len("mu", mu, t)?;
                check_len("sigma", sigma, t)?;
                positive("sigma", sigma)?;
                if !(*noise_sd >= 0.0) {
                    return invalid("noise_sd must be nonnegative");
                }
                Structure::RcLinear {
                    delta: delta.clone(),
                    mu: mu.clone(),
                    sigma: sigma.clone(),
                    slope: (*slope_base, *slope_rank),
                    noise_sd: *noise_sd,
                }
            }
        };
        let pop = Population { model };
        if pop.periods() < 2 {
            return invalid("a design needs at least 2 periods");
        }
        Ok(pop)
    }
}

/// Scales of comparison periods must differ from the reference scale, or the
/// treatment CDFs never cross.
fn distinct_scales(name: &str, v: &[f64]) -> Result<()> {
    let r = v[v.len() - 1];
    if let Some(t) = v[..v.len() - 1].iter().position(|&s| s == r) {
        return invalid(format!("{name}_{} equals the reference value {r}; the treatment CDFs would not cross", t + 1));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Structure {
    Linear {
        alpha: Vec<f64>,
        beta: f64,
        gamma: Vec<f64>,
        delta: Vec<f64>,
        rho: f64,
    },
    QuantileRc {
        f_shift: Vec<f64>,
        f_scale: Vec<f64>,
        alpha: [f64; 2],
        beta: [f64; 2],
        gamma: Vec<f64>,
        delta: Vec<f64>,
        rho: f64,
    },
    Bounds {
        mu: Vec<f64>,
        sigma: Vec<f64>,
        delta: Vec<f64>,
    },
    RcLinear {
        delta: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        slope: (f64, f64),
        noise_sd: f64,
    },
}

/// Latent state of one unit: rank `v` and outcome error `u`.
#[derive(Debug, Clone, Copy)]
struct Latent {
    v: f64,
    u: f64,
}

/// Monte Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub mc_se: f64,
    pub draws: usize,
}

/// A fully specified design.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    model: Structure,
}

impl Population {
    pub fn periods(&self) -> usize {
        match &self.model {
            Structure::Linear { alpha, .. } => alpha.len(),
            Structure::QuantileRc { f_shift, .. } => f_shift.len(),
            Structure::Bounds { mu, .. } => mu.len(),
            Structure::RcLinear { delta, .. } => delta.len(),
        }
    }

    fn reference(&self) -> usize {
        self.periods()
    }

    fn check_period(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.periods() {
            return invalid(format!("period {t} outside 1..{}", self.periods()));
        }
        Ok(t - 1)
    }

    /// `(mu_t, sigma_t)` of the period-`t` parameters for the two designs with
    /// Gaussian treatments, and `(gamma_t, delta_t)` for the others.
    pub fn treatment_params(&self, t: usize) -> Result<(f64, f64)> {
        let i = self.check_period(t)?;
        Ok(match &self.model {
            Structure::Linear { gamma, delta, .. } | Structure::QuantileRc { gamma, delta, .. } => (gamma[i], delta[i]),
            Structure::Bounds { mu, sigma, .. } | Structure::RcLinear { mu, sigma, .. } => (mu[i], sigma[i]),
        })
    }

    /// Treatment as a function of the normal score of the rank.
    fn treatment_of(&self, i: usize, eta: f64) -> f64 {
        match &self.model {
            Structure::Linear { gamma, delta, .. } => gamma[i] + delta[i] * eta,
            Structure::QuantileRc { gamma, delta, .. } => (gamma[i] + delta[i] * eta).exp(),
            Structure::Bounds { mu, sigma, .. } | Structure::RcLinear { mu, sigma, .. } => mu[i] + sigma[i] * eta,
        }
    }

    /// Normal score of the rank of treatment `x` in period index `i`.
    fn score_of(&self, i: usize, x: f64) -> f64 {
        match &self.model {
            Structure::Linear { gamma, delta, .. } => (x - gamma[i]) / delta[i],
            Structure::QuantileRc { gamma, delta, .. } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (x.ln() - gamma[i]) / delta[i]
                }
            }
            Structure::Bounds { mu, sigma, .. } | Structure::RcLinear { mu, sigma, .. } => (x - mu[i]) / sigma[i],
        }
    }

    pub fn treatment_cdf(&self, t: usize, x: f64) -> Result<f64> {
        let i = self.check_period(t)?;
        Ok(phi(self.score_of(i, x)))
    }

    pub fn treatment_quantile(&self, t: usize, p: f64) -> Result<f64> {
        let i = self.check_period(t)?;
        if !(p > 0.0 && p < 1.0) {
            return invalid(format!("quantile level must lie in (0, 1), got {p}"));
        }
        Ok(self.treatment_of(i, phi_inv(p)))
    }

    /// Population `q_t(x) = F_t^{-1}(F_T(x))`.
    pub fn rank_map(&self, t: usize, x: f64) -> Result<f64> {
        let i = self.check_period(t)?;
        let eta = self.score_of(self.reference() - 1, x);
        if !eta.is_finite() {
            return Err(Error::OutsideSupport(x));
        }
        Ok(self.treatment_of(i, eta))
    }

    /// Population crossing of the period-`t` and reference treatment CDFs.
    pub fn crossing(&self, t: usize) -> Result<f64> {
        let i = self.check_period(t)?;
        let r = self.reference() - 1;
        if i == r {
            return invalid("the reference period has no crossing with itself");
        }
        if let Structure::Linear { gamma, delta, .. } = &self.model {
            if delta[i] == delta[r] {
                return Err(Error::NoCrossing(format!("period {t} is a pure location shift")));
            }
            return Ok((gamma[i] * delta[r] - gamma[r] * delta[i]) / (delta[r] - delta[i]));
        }
        self.crossing_bisect(t)
    }

    /// Crossing by bisection on `F_t - F_T` over the reference quantile range.
    pub fn crossing_bisect(&self, t: usize) -> Result<f64> {
        let diff = |x: f64| -> Result<f64> { Ok(self.treatment_cdf(t, x)? - self.treatment_cdf(self.reference(), x)?) };
        let grid: Vec<f64> = (1..1000)
            .map(|k| self.treatment_quantile(self.reference(), k as f64 / 1000.0))
            .collect::<Result<_>>()?;
        let mut prev = (grid[0], diff(grid[0])?);
        for &x in &grid[1..] {
            let d = diff(x)?;
            if prev.1 == 0.0 {
                return Ok(prev.0);
            }
            if d == 0.0 || (d > 0.0) != (prev.1 > 0.0) {
                let (mut lo, mut hi) = (prev.0, x);
                let lo_sign = prev.1 > 0.0;
                while hi - lo > BISECT_TOL {
                    let mid = 0.5 * (lo + hi);
                    let dm = diff(mid)?;
                    if dm == 0.0 {
                        return Ok(mid);
                    }
                    if (dm > 0.0) == lo_sign {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Ok(0.5 * (lo + hi));
            }
            prev = (x, d);
        }
        Err(Error::NoCrossing(format!("treatment CDFs of periods {t} and {} do not cross", self.reference())))
    }

    /// Population trend `g_t` carrying reference outcomes to period `t`.
    pub fn trend(&self, t: usize, y: f64) -> Result<f64> {
        let i = self.check_period(t)?;
        let r = self.reference() - 1;
        Ok(match &self.model {
            Structure::Linear { alpha, .. } => alpha[i] - alpha[r] + y,
            Structure::QuantileRc { f_shift, f_scale, .. } => f_shift[i] + f_scale[i] * (y - f_shift[r]) / f_scale[r],
            Structure::Bounds { delta, .. } => 1.0 - (-0.5 * (delta[i] - delta[r])).exp() * (1.0 - y),
            Structure::RcLinear { delta, .. } => delta[i] - delta[r] + y,
        })
    }

    fn latent<R: Rng>(&self, eta: f64, v: f64, g: &mut R) -> Latent {
        let z: f64 = StandardNormal.sample(g);
        let u = match &self.model {
            Structure::Linear { rho, .. } | Structure::QuantileRc { rho, .. } => rho * eta + (1.0 - rho * rho).sqrt() * z,
            Structure::Bounds { .. } => v + z,
            Structure::RcLinear { noise_sd, .. } => v + noise_sd * z,
        };
        Latent { v, u }
    }

    /// Reference-period potential outcome `Y_T(x)`.
    fn outcome_ref(&self, x: f64, l: &Latent) -> f64 {
        let r = self.reference() - 1;
        match &self.model {
            Structure::Linear { alpha, beta, .. } => alpha[r] + beta * x + l.u,
            Structure::QuantileRc { f_shift, f_scale, alpha, beta, .. } => {
                f_shift[r] + f_scale[r] * (alpha[0] + alpha[1] * l.u + x * (beta[0] + beta[1] * phi(l.u)))
            }
            Structure::Bounds { delta, .. } => 1.0 - (-0.5 * (delta[r] + x + l.u)).exp(),
            Structure::RcLinear { delta, slope, .. } => delta[r] + l.u + x * (slope.0 + slope.1 * l.v),
        }
    }

    /// `d Y_T(x) / dx`.
    fn derivative_ref(&self, x: f64, l: &Latent) -> f64 {
        let r = self.reference() - 1;
        match &self.model {
            Structure::Linear { beta, .. } => *beta,
            Structure::QuantileRc { f_scale, beta, .. } => f_scale[r] * (beta[0] + beta[1] * phi(l.u)),
            Structure::Bounds { delta, .. } => 0.5 * (-0.5 * (delta[r] + x + l.u)).exp(),
            Structure::RcLinear { slope, .. } => slope.0 + slope.1 * l.v,
        }
    }

    /// `n` units per period; period `t` uses its own random stream.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return invalid("n must be at least 1");
        }
        let periods: Vec<(Vec<f64>, Vec<f64>)> = (1..=self.periods())
            .into_par_iter()
            .map(|t| {
                let mut g = rng::stream(seed, SIM_STREAM + t as u64);
                let mut ys = Vec::with_capacity(n);
                let mut xs = Vec::with_capacity(n);
                for _ in 0..n {
                    let eta: f64 = StandardNormal.sample(&mut g);
                    let l = self.latent(eta, phi(eta), &mut g);
                    let x = self.treatment_of(t - 1, eta);
                    let y = self.trend(t, self.outcome_ref(x, &l)).expect("period in range");
                    ys.push(y);
                    xs.push(x);
                }
                (ys, xs)
            })
            .collect();
        Dataset::from_vectors(periods)
    }

    /// Common latent draws for units at reference treatment `x`.
    fn conditional_draws(&self, x: f64, draws: usize, seed: u64) -> Result<Vec<Latent>> {
        if draws < MIN_ORACLE_DRAWS {
            return invalid(format!("oracles need at least {MIN_ORACLE_DRAWS} draws, got {draws}"));
        }
        let eta = self.score_of(self.reference() - 1, x);
        let v = phi(eta);
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::OutsideSupport(x));
        }
        let mut g = rng::stream(seed, ORACLE_STREAM);
        Ok((0..draws).map(|_| self.latent(eta, v, &mut g)).collect())
    }

    /// `E[Y_T(x') - Y_T(x) | X_T = x]` by simulation.
    pub fn oracle_att_between(&self, x: f64, x_prime: f64, draws: usize, seed: u64) -> Result<OracleValue> {
        let l = self.conditional_draws(x, draws, seed)?;
        let d: Vec<f64> = l.iter().map(|l| self.outcome_ref(x_prime, l) - self.outcome_ref(x, l)).collect();
        Ok(mean_se(&d))
    }

    /// Simulated ATT between `x` and the population `q_t(x)`.
    pub fn oracle_att(&self, t: usize, x: f64, draws: usize, seed: u64) -> Result<OracleValue> {
        let q = self.rank_map(t, x)?;
        self.oracle_att_between(x, q, draws, seed)
    }

    /// Simulated `E[dY_T(x)/dx | X_T = x]`.
    pub fn oracle_ame(&self, x: f64, draws: usize, seed: u64) -> Result<OracleValue> {
        let l = self.conditional_draws(x, draws, seed)?;
        let d: Vec<f64> = l.iter().map(|l| self.derivative_ref(x, l)).collect();
        Ok(mean_se(&d))
    }

    /// Simulated difference of conditional `p`-quantiles of `Y_T(q_t(x))` and `Y_T(x)`.
    /// The standard error comes from 20 batches.
    pub fn oracle_qtt(&self, t: usize, p: f64, x: f64, draws: usize, seed: u64) -> Result<OracleValue> {
        if !(p > 0.0 && p < 1.0) {
            return invalid(format!("quantile level must lie in (0, 1), got {p}"));
        }
        let q = self.rank_map(t, x)?;
        let l = self.conditional_draws(x, draws, seed)?;
        let qtt_of = |l: &[Latent]| {
            let a: Vec<f64> = l.iter().map(|l| self.outcome_ref(q, l)).collect();
            let b: Vec<f64> = l.iter().map(|l| self.outcome_ref(x, l)).collect();
            sample_quantile(a, p) - sample_quantile(b, p)
        };
        let value = qtt_of(&l);
        let k = 20;
        let size = l.len() / k;
        let batches: Vec<f64> = l.chunks_exact(size).take(k).map(qtt_of).collect();
        let m = batches.iter().sum::<f64>() / k as f64;
        let var = batches.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (k - 1) as f64;
        Ok(OracleValue {
            value,
            mc_se: (var / k as f64).sqrt(),
            draws,
        })
    }

    /// Closed-form `E[Y_T(x') - Y_T(x) | X_T = x]`.
    pub fn closed_att_between(&self, x: f64, x_prime: f64) -> Result<f64> {
        let r = self.reference() - 1;
        let eta = self.score_of(r, x);
        if !eta.is_finite() {
            return Err(Error::OutsideSupport(x));
        }
        let v = phi(eta);
        Ok(match &self.model {
            Structure::Linear { beta, .. } => beta * (x_prime - x),
            Structure::QuantileRc { f_scale, beta, rho, .. } => {
                f_scale[r] * (x_prime - x) * (beta[0] + beta[1] * phi(rho * eta / (2.0 - rho * rho).sqrt()))
            }
            Structure::Bounds { delta, .. } => {
                (-0.5 * delta[r]).exp() * (-0.5 * v + 0.125).exp() * ((-0.5 * x).exp() - (-0.5 * x_prime).exp())
            }
            Structure::RcLinear { slope, .. } => (x_prime - x) * (slope.0 + slope.1 * v),
        })
    }

    pub fn closed_att(&self, t: usize, x: f64) -> Result<f64> {
        let q = self.rank_map(t, x)?;
        self.closed_att_between(x, q)
    }

    /// Closed-form `E[dY_T(x)/dx | X_T = x]`.
    pub fn closed_ame(&self, x: f64) -> Result<f64> {
        let r = self.reference() - 1;
        let eta = self.score_of(r, x);
        if !eta.is_finite() {
            return Err(Error::OutsideSupport(x));
        }
        let v = phi(eta);
        Ok(match &self.model {
            Structure::Linear { beta, .. } => *beta,
            Structure::QuantileRc { f_scale, beta, rho, .. } => {
                f_scale[r] * (beta[0] + beta[1] * phi(rho * eta / (2.0 - rho * rho).sqrt()))
            }
            Structure::Bounds { delta, .. } => 0.5 * (-0.5 * (delta[r] + x)).exp() * (-0.5 * v + 0.125).exp(),
            Structure::RcLinear { slope, .. } => slope.0 + slope.1 * v,
        })
    }

    /// Bounds on the marginal effect at `x` built from simulated population
    /// secants of every comparison period; at a crossing (`|q_s(x) - x| <= tol`)
    /// both bounds equal the simulated marginal effect.
    pub fn population_ame_bounds(&self, x: f64, draws: usize, seed: u64, tol: f64) -> Result<BoundsResult> {
        let mut matched = Vec::new();
        for t in 1..self.reference() {
            matched.push((t, self.rank_map(t, x)?));
        }
        if let Some(&(s, q)) = matched
            .iter()
            .filter(|m| (m.1 - x).abs() <= tol)
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        {
            let v = self.oracle_ame(x, draws, seed)?.value;
            return Ok(BoundsResult {
                eval_x: x,
                counterfactual_x: q,
                lower: v,
                upper: v,
                neighbors: (q, q),
                periods_used: vec![s],
                point_identified: Some(s),
            });
        }
        let qs: Vec<f64> = matched.iter().map(|m| m.1).collect();
        let n = neighbors(x, x, &qs);
        let find = |v: f64| matched.iter().find(|m| v.is_finite() && m.1 == v).map(|m| m.0);
        let (tl, th) = (find(n.0), find(n.1));
        let slope = |q: Option<f64>| -> Result<Option<f64>> {
            match q {
                Some(q) => Ok(Some(self.oracle_att_between(x, q, draws, seed)?.value / (q - x))),
                None => Ok(None),
            }
        };
        let (lower, upper) = secant_bounds(1.0, slope(tl.map(|_| n.0))?, slope(th.map(|_| n.1))?);
        Ok(BoundsResult {
            eval_x: x,
            counterfactual_x: x,
            lower,
            upper,
            neighbors: n,
            periods_used: [tl, th].into_iter().flatten().collect(),
            point_identified: None,
        })
    }
}

fn mean_se(d: &[f64]) -> OracleValue {
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    OracleValue {
        value: m,
        mc_se: (var / n).sqrt(),
        draws: d.len(),
    }
}

/// Generalized-inverse sample quantile.
fn sample_quantile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Resolves `spec` and draws `n` units per period.
pub fn simulate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.resolve()?.simulate(n, seed)
}

pub fn population_crossing(spec: &DgpSpec, t: usize) -> Result<f64> {
    spec.resolve()?.crossing(t)
}

pub fn population_rank_map(spec: &DgpSpec, t: usize, x: f64) -> Result<f64> {
    spec.resolve()?.rank_map(t, x)
}

pub fn oracle_att(spec: &DgpSpec, t: usize, x: f64, draws: usize, seed: u64) -> Result<OracleValue> {
    spec.resolve()?.oracle_att(t, x, draws, seed)
}

pub fn oracle_ame(spec: &DgpSpec, x: f64, draws: usize, seed: u64) -> Result<OracleValue> {
    spec.resolve()?.oracle_ame(x, draws, seed)
}

pub fn oracle_qtt(spec: &DgpSpec, t: usize, p: f64, x: f64, draws: usize, seed: u64) -> Result<OracleValue> {
    spec.resolve()?.oracle_qtt(t, p, x, draws, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantile_rc() -> DgpSpec {
        DgpSpec {
            periods: None,
            seed: 0,
            dgp: Dgp::QuantileRc {
                f_shift: vec![0.3, 0.0],
                f_scale: vec![1.5, 1.0],
                alpha: [0.0, 1.0],
                beta: [0.5, 1.0],
                gamma: vec![0.2, 0.0],
                delta: vec![0.5, 0.8],
                rho: 0.4,
            },
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let a = simulate(&DgpSpec::linear_default(), 5, 7).unwrap();
        let b = simulate(&DgpSpec::linear_default(), 5, 7).unwrap();
        let c = simulate(&DgpSpec::linear_default(), 5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.num_periods(), 2);
    }

    #[test]
    fn linear_crossing_matches_bisection() {
        let p = DgpSpec::linear_default().resolve().unwrap();
        let x = p.crossing(1).unwrap();
        assert_eq!(x, 2.0);
        assert!((p.crossing_bisect(1).unwrap() - 2.0).abs() < 1e-9);
        assert!((p.rank_map(1, x).unwrap() - x).abs() < 1e-12);
        let q = p.rank_map(1, 0.5).unwrap();
        assert!((q - (0.0 + 2.0 * (0.5 - 1.0))).abs() < 1e-12);
    }

    #[test]
    fn location_shift_has_no_crossing() {
        let mut s = DgpSpec::linear_default();
        if let Dgp::LinearSystem { delta, .. } = &mut s.dgp {
            *delta = vec![1.0, 1.0];
        }
        assert!(s.resolve().is_err());
        let mut r = DgpSpec::rc_linear_default();
        if let Dgp::RcLinear { sigma, mu, .. } = &mut r.dgp {
            *sigma = vec![1.0, 1.0, 1.0];
            *mu = vec![1.0, 0.5, 0.0];
        }
        let p = r.resolve().unwrap();
        assert!(matches!(p.crossing(1), Err(Error::NoCrossing(_))));
    }

    #[test]
    fn bounds_defaults_and_crossing() {
        let p = DgpSpec::bounds_default(4, 1).resolve().unwrap();
        let (mu, sigma) = p.treatment_params(4).unwrap();
        assert_eq!((mu, sigma), (2.5, 1.0));
        for t in 1..4 {
            let (m, s) = p.treatment_params(t).unwrap();
            let closed = (m - 2.5 * s) / (1.0 - s);
            let x = p.crossing(t).unwrap();
            let f = p.treatment_cdf(4, closed).unwrap();
            if f > 0.001 && f < 0.999 {
                assert!((x - closed).abs() < 1e-8, "{x} vs {closed}");
            }
        }
        // hyper draws are nested across period counts
        let q = DgpSpec::bounds_default(6, 1).resolve().unwrap();
        for t in 1..4 {
            assert_eq!(p.treatment_params(t).unwrap(), q.treatment_params(t).unwrap());
        }
    }

    #[test]
    fn bounds_with_zero_trend_is_identity() {
        let s = DgpSpec {
            periods: Some(3),
            seed: 0,
            dgp: Dgp::BoundsExample {
                mu: None,
                sigma: None,
                delta: Some(vec![0.0, 0.0]),
                mu_ref: 2.5,
                sigma_ref: 1.0,
                delta_ref: 0.0,
            },
        };
        let p = s.resolve().unwrap();
        for y in [-3.0, 0.0, 0.4, 0.99] {
            assert_eq!(p.trend(1, y).unwrap(), y);
        }
    }

    #[test]
    fn specs_parse_from_json_and_toml() {
        let t = r#"
            variant = "linear_system"
            alpha = [1.0, 0.0]
            beta = 2.0
            gamma = [0.0, 1.0]
            delta = [2.0, 1.0]
            rho = 0.5
        "#;
        let s = DgpSpec::from_toml(t).unwrap();
        assert_eq!(s.resolve().unwrap(), DgpSpec::linear_default().resolve().unwrap());
        let j = serde_json::to_string(&DgpSpec::bounds_default(3, 9)).unwrap();
        assert_eq!(DgpSpec::from_json(&j).unwrap(), DgpSpec::bounds_default(3, 9));
        assert!(DgpSpec::from_json(r#"{"variant":"bounds_example"}"#).unwrap().resolve().is_err());
    }

    fn within(o: OracleValue, truth: f64, k: f64) {
        assert!((o.value - truth).abs() <= k * o.mc_se.max(1e-12), "{o:?} vs {truth}");
    }

    #[test]
    fn oracles_agree_with_closed_forms() {
        let specs = [
            DgpSpec::linear_default(),
            quantile_rc(),
            DgpSpec::bounds_default(3, 1),
            DgpSpec::rc_linear_default(),
        ];
        for s in &specs {
            let p = s.resolve().unwrap();
            let xs = [0.25, 0.5, 0.75].map(|u| p.treatment_quantile(p.periods(), u).unwrap());
            for &x in &xs {
                let q = p.rank_map(1, x).unwrap();
                within(p.oracle_att(1, x, 40_000, 3).unwrap(), p.closed_att(1, x).unwrap(), 4.0);
                within(p.oracle_ame(x, 40_000, 3).unwrap(), p.closed_ame(x).unwrap(), 4.0);
                assert_eq!(p.oracle_att_between(x, x, 10_000, 1).unwrap().value, 0.0);
                let _ = q;
            }
        }
    }

    #[test]
    fn linear_qtt_is_constant() {
        let p = DgpSpec::linear_default().resolve().unwrap();
        for prob in [0.1, 0.5, 0.9] {
            let o = p.oracle_qtt(1, prob, 0.5, 20_000, 2).unwrap();
            let q = p.rank_map(1, 0.5).unwrap();
            assert!((o.value - 2.0 * (q - 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn bounds_ame_by_finite_difference() {
        let p = DgpSpec::bounds_default(3, 1).resolve().unwrap();
        let x = 2.5;
        let e = 1e-4;
        let fd = p.oracle_att_between(x, x + e, 100_000, 5).unwrap();
        let ame = p.oracle_ame(x, 100_000, 5).unwrap();
        assert!((fd.value / e - ame.value).abs() < 3.0 * ame.mc_se + 1e-3);
    }

    #[test]
    fn oracle_preconditions() {
        let p = DgpSpec::linear_default().resolve().unwrap();
        assert!(p.oracle_ame(0.0, 100, 1).is_err());
        let q = quantile_rc().resolve().unwrap();
        assert!(matches!(q.oracle_ame(-1.0, 10_000, 1), Err(Error::OutsideSupport(_))));
    }

    #[test]
    fn population_bounds_bracket_the_effect() {
        let p = DgpSpec::bounds_default(5, 1).resolve().unwrap();
        let mut finite = 0;
        for k in 0..40 {
            let x = 1.0 + k as f64 * 0.07;
            let b = p.population_ame_bounds(x, 20_000, 4, 1e-9).unwrap();
            if b.is_finite() {
                finite += 1;
                let truth = p.closed_ame(x).unwrap();
                assert!(b.lower <= truth + 1e-3 && truth <= b.upper + 1e-3, "{b:?} {truth}");
            }
        }
        assert!(finite > 0);
    }
}
