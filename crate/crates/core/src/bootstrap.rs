//! Percentile bootstrap over the whole pipeline.
//!
//! Each replicate resamples every period independently with replacement and
//! re-estimates bandwidths, rank maps, crossings and trends before evaluating
//! the estimand. Replicate `r` draws from stream `r` of the user seed, so the
//! result does not depend on how replicates are scheduled.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects;
use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::rng;

pub const MIN_REPLICATES: usize = 199;

/// Share of failed replicates above which a result is flagged unreliable.
pub const UNRELIABLE_SHARE: f64 = 0.2;

/// A scalar produced by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimand", rename_all = "snake_case")]
pub enum Estimand {
    Crossing { period: usize },
    /// `g_t(y)`.
    Trend { period: usize, y: f64 },
    Att { period: usize, x: f64 },
    Qtt { period: usize, p: f64, x: f64 },
    AmeApp { period: usize, x: f64 },
    AmeAvg { period: usize, c: f64 },
    RcAme { period: usize, x: f64 },
    AmeBoundLower { x: f64 },
    AmeBoundUpper { x: f64 },
    AttBoundLower { x: f64, x_prime: f64 },
    AttBoundUpper { x: f64, x_prime: f64 },
}

impl Estimand {
    pub fn evaluate(&self, model: &Model) -> Result<f64> {
        use Estimand::*;
        let v = match *self {
            Crossing { period } => model.crossing(period)?.location,
            Trend { period, y } => model.fit(period)?.trend.g(y),
            Att { period, x } => effects::att(model, period, x, &model.fit(period)?.trend)?.value,
            Qtt { period, p, x } => effects::qtt(model, period, p, x, &model.fit(period)?.trend)?.value,
            AmeApp { period, x } => effects::ame_app(model, period, x, &model.fit(period)?.trend, None)?.value,
            AmeAvg { period, c } => effects::ame_avg(model, period, c, &model.fit(period)?.trend)?.value,
            RcAme { period, x } => effects::rc_ame(model, period, x, &model.fit(period)?.trend, None)?.value,
            AmeBoundLower { x } | AmeBoundUpper { x } => {
                let b = effects::ame_bounds(model, x, &trends(model)?, None)?;
                if matches!(self, AmeBoundLower { .. }) {
                    b.lower
                } else {
                    b.upper
                }
            }
            AttBoundLower { x, x_prime } | AttBoundUpper { x, x_prime } => {
                let b = effects::att_bounds(model, x, x_prime, &trends(model)?)?;
                if matches!(self, AttBoundLower { .. }) {
                    b.lower
                } else {
                    b.upper
                }
            }
        };
        Ok(v)
    }
}

fn trends(model: &Model) -> Result<Vec<crate::trend::TrendMap>> {
    Ok(model.fit_all()?.into_iter().map(|f| f.trend).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    #[serde(rename = "B")]
    pub replications: usize,
    pub level: f64,
    pub seed: u64,
    /// Hold crossings at their full-sample estimates instead of re-estimating them.
    pub freeze_crossing: bool,
    /// Run replicates on the rayon pool; results are identical either way.
    #[serde(skip, default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replications: 499,
            level: 0.9,
            seed: 0,
            freeze_crossing: false,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    #[serde(rename = "B")]
    pub replications: usize,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    pub seed: u64,
    pub freeze_crossing: bool,
    /// Failures reached the unreliable share of replicates.
    pub unreliable: bool,
    /// Successful replicate values in replicate order.
    pub replicates: Vec<f64>,
}

impl BootstrapResult {
    pub fn ci(&self) -> [f64; 2] {
        [self.ci_lo, self.ci_hi]
    }

    /// Standard deviation of the successful replicates.
    pub fn std_error(&self) -> f64 {
        let n = self.replicates.len() as f64;
        let m = self.replicates.iter().sum::<f64>() / n;
        (self.replicates.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

/// Generalized-inverse quantile of sorted values.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

fn check_options(o: &BootstrapOptions) -> Result<()> {
    if o.replications < MIN_REPLICATES {
        return invalid(format!("bootstrap needs B >= {MIN_REPLICATES}, got {}", o.replications));
    }
    if !(o.level > 0.5 && o.level < 1.0) {
        return invalid(format!("confidence level must lie in (0.5, 1), got {}", o.level));
    }
    Ok(())
}

/// Percentile bootstrap of an arbitrary statistic of the fitted model.
pub fn bootstrap_with<F>(model: &Model, opts: &BootstrapOptions, stat: F) -> Result<BootstrapResult>
where
    F: Fn(&Model) -> Result<f64> + Sync,
{
    let mut r = bootstrap_many(model, opts, |m| stat(m).map(|v| vec![v]))?;
    Ok(r.remove(0))
}

/// Joint bootstrap of several statistics: a replicate fails as a whole when any
/// component fails, so every result is computed from the same resamples.
pub fn bootstrap_many<F>(model: &Model, opts: &BootstrapOptions, stat: F) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&Model) -> Result<Vec<f64>> + Sync,
{
    check_options(opts)?;
    let point = stat(model)?;
    let base = if opts.freeze_crossing {
        model.with_frozen_crossings()?
    } else {
        model.clone()
    };
    let one = |r: usize| -> std::result::Result<Vec<f64>, &'static str> {
        let mut g = rng::stream(opts.seed, r as u64);
        let m = base.resample(&mut g).map_err(|e| e.reason())?;
        let v = stat(&m).map_err(|e| e.reason())?;
        if v.len() != point.len() {
            return Err("validation");
        }
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err("non_finite")
        }
    };
    let outcomes: Vec<_> = if opts.parallel {
        (0..opts.replications).into_par_iter().map(one).collect()
    } else {
        (0..opts.replications).map(one).collect()
    };
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut reasons = BTreeMap::new();
    for o in outcomes {
        match o {
            Ok(v) => rows.push(v),
            Err(r) => *reasons.entry(r.to_string()).or_insert(0) += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::BootstrapFailed(opts.replications));
    }
    let failures = opts.replications - rows.len();
    let alpha = 1.0 - opts.level;
    Ok(point
        .iter()
        .enumerate()
        .map(|(k, &pt)| {
            let replicates: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let mut sorted = replicates.clone();
            sorted.sort_by(f64::total_cmp);
            BootstrapResult {
                point: pt,
                ci_lo: sorted_quantile(&sorted, alpha / 2.0),
                ci_hi: sorted_quantile(&sorted, 1.0 - alpha / 2.0),
                level: opts.level,
                replications: opts.replications,
                failures,
                failure_reasons: reasons.clone(),
                seed: opts.seed,
                freeze_crossing: opts.freeze_crossing,
                unreliable: failures as f64 >= UNRELIABLE_SHARE * opts.replications as f64,
                replicates,
            }
        })
        .collect())
}

pub fn bootstrap(estimand: &Estimand, model: &Model, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    bootstrap_with(model, opts, |m| estimand.evaluate(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::model::PipelineConfig;
    use crate::sim::DgpSpec;

    fn linear(n: usize, seed: u64) -> Model {
        let d = crate::sim::simulate(&DgpSpec::linear_default(), n, seed).unwrap();
        Model::new(&d, PipelineConfig::default()).unwrap()
    }

    fn opts(b: usize, level: f64, seed: u64) -> BootstrapOptions {
        BootstrapOptions {
            replications: b,
            level,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn duplicated_sample_ci_covers_zero() {
        let d = crate::sim::simulate(&DgpSpec::linear_default(), 1500, 2).unwrap();
        let p = d.period(2).unwrap();
        let (y, x) = (p.outcomes().to_vec(), p.treatments().to_vec());
        let x0 = x[7];
        let dup = Dataset::from_vectors(vec![(y.clone(), x.clone()), (y, x)]).unwrap();
        let m = Model::new(&dup, PipelineConfig::default()).unwrap();
        let e = Estimand::Att { period: 1, x: x0 };
        let r = bootstrap(&e, &m, &opts(199, 0.9, 4)).unwrap();
        assert_eq!(r.point, 0.0);
        assert_eq!(r.failures, 0);
        assert!(r.replicates.iter().all(|v| v.is_finite()));
        assert!(r.ci_lo <= 0.0 && 0.0 <= r.ci_hi, "{:?}", r.ci());
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let m = linear(800, 1);
        let e = Estimand::Att { period: 1, x: 1.0 };
        let a = bootstrap(&e, &m, &opts(199, 0.9, 11)).unwrap();
        let b = bootstrap(&e, &m, &opts(199, 0.9, 11)).unwrap();
        let serial = bootstrap(
            &e,
            &m,
            &BootstrapOptions {
                parallel: false,
                ..opts(199, 0.9, 11)
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, serial);
    }

    #[test]
    fn wider_level_gives_wider_interval() {
        let m = linear(800, 3);
        let e = Estimand::Trend { period: 1, y: 1.0 };
        let narrow = bootstrap(&e, &m, &opts(199, 0.8, 5)).unwrap();
        let wide = bootstrap(&e, &m, &opts(199, 0.95, 5)).unwrap();
        assert!(wide.ci_lo <= narrow.ci_lo && narrow.ci_hi <= wide.ci_hi);
    }

    #[test]
    fn preconditions() {
        let m = linear(300, 1);
        let e = Estimand::Crossing { period: 1 };
        assert!(bootstrap(&e, &m, &opts(100, 0.9, 1)).is_err());
        assert!(bootstrap(&e, &m, &opts(199, 0.5, 1)).is_err());
        assert!(bootstrap(&e, &m, &opts(199, 1.0, 1)).is_err());
    }

    #[test]
    fn frozen_crossing_has_no_spread() {
        let m = linear(500, 2);
        let e = Estimand::Crossing { period: 1 };
        let o = BootstrapOptions {
            freeze_crossing: true,
            ..opts(199, 0.9, 1)
        };
        let r = bootstrap(&e, &m, &o).unwrap();
        assert_eq!(r.ci_lo, r.point);
        assert_eq!(r.ci_hi, r.point);
    }

    #[test]
    fn failures_are_tallied() {
        let m = linear(300, 6);
        // about a third of resamples miss the smallest unit
        let lowest = m.sample(1).treatments()[0];
        let r = bootstrap_with(&m, &opts(199, 0.9, 1), |mm| {
            if mm.sample(1).treatments()[0] > lowest {
                Err(Error::EmptySet("tail".into()))
            } else {
                Ok(1.0)
            }
        });
        let r = r.unwrap();
        assert_eq!(r.failures, r.failure_reasons.get("empty_set").copied().unwrap_or(0));
        assert_eq!(r.failures + r.replicates.len(), 199);
        assert!(r.failures > 40 && r.unreliable);
    }

    #[test]
    fn joint_matches_marginal() {
        let m = linear(600, 8);
        let o = opts(199, 0.9, 2);
        let e1 = Estimand::Att { period: 1, x: 1.0 };
        let e2 = Estimand::Trend { period: 1, y: 0.5 };
        let joint = bootstrap_many(&m, &o, |mm| Ok(vec![e1.evaluate(mm)?, e2.evaluate(mm)?])).unwrap();
        let a = bootstrap(&e1, &m, &o).unwrap();
        if a.failures == 0 {
            assert_eq!(joint[0], a);
        }
        assert_eq!(joint[1].replicates.len(), joint[0].replicates.len());
    }

    #[test]
    fn json_keys() {
        let m = linear(300, 7);
        let r = bootstrap(&Estimand::Crossing { period: 1 }, &m, &opts(199, 0.9, 1)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["point", "ci_lo", "ci_hi", "level", "B", "failures", "seed"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }
}
