//! A dataset prepared for estimation: per-period samples sorted by treatment,
//! resolved bandwidths, rank maps, and the configuration that drives crossing
//! and trend estimation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::empirical::{crossing_sorted, CrossingPoint, RankMap, DEFAULT_TRIM};
use crate::error::{invalid, Result};
use crate::kernel::{KernelFamily, KernelSpec, SortedSample};
use crate::rng;
use crate::trend::{interval_trend_sorted, point_trend_sorted, ControlSet, TrendMap, TrendOptions};

/// Degeneracy tolerance of AME ratios, in units of the reference-period bandwidth.
pub const DEFAULT_TOL_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlGroup {
    /// Units at the estimated crossing point, weighted by the kernel.
    #[default]
    Crossing,
    /// Units whose treatment lies in a fixed set, unweighted.
    Interval { set: ControlSet },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub kernel: KernelSpec,
    pub trim_lower: f64,
    pub trim_upper: f64,
    pub trend: TrendOptions,
    pub control: ControlGroup,
    /// Crossing locations for periods `1..T-1`, used instead of estimating them.
    pub frozen_crossings: Option<Vec<f64>>,
    pub tol_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            trim_lower: DEFAULT_TRIM.0,
            trim_upper: DEFAULT_TRIM.1,
            trend: TrendOptions::default(),
            control: ControlGroup::Crossing,
            frozen_crossings: None,
            tol_factor: DEFAULT_TOL_FACTOR,
        }
    }
}

/// Crossing (when used) and trend for one comparison period.
#[derive(Debug, Clone)]
pub struct PeriodFit {
    pub crossing: Option<CrossingPoint>,
    pub trend: TrendMap,
}

#[derive(Debug, Clone)]
pub struct Model {
    periods: Vec<SortedSample>,
    bandwidths: Vec<f64>,
    ranks: Vec<RankMap>,
    config: PipelineConfig,
}

impl Model {
    pub fn new(dataset: &Dataset, config: PipelineConfig) -> Result<Self> {
        let periods = dataset.periods().iter().map(SortedSample::from_section).collect();
        Self::from_sorted(periods, config)
    }

    pub(crate) fn from_sorted(periods: Vec<SortedSample>, config: PipelineConfig) -> Result<Self> {
        if periods.len() < 2 {
            return invalid("a model needs at least 2 periods");
        }
        if let Some(f) = &config.frozen_crossings {
            if f.len() != periods.len() - 1 {
                return invalid(format!(
                    "{} frozen crossings given for {} comparison periods",
                    f.len(),
                    periods.len() - 1
                ));
            }
        }
        let bandwidths = periods
            .iter()
            .map(|p| config.kernel.resolve(p.treatments()))
            .collect::<Result<Vec<_>>>()?;
        let reference = periods.len();
        let target = periods[reference - 1].treatments().to_vec();
        let ranks = (1..reference)
            .map(|t| RankMap::from_sorted(t, reference, periods[t - 1].treatments().to_vec(), target.clone()))
            .collect();
        Ok(Self {
            periods,
            bandwidths,
            ranks,
            config,
        })
    }

    /// Same configuration on an iid resample of every period.
    pub fn resample<R: Rng>(&self, rng: &mut R) -> Result<Self> {
        let periods = self
            .periods
            .iter()
            .map(|p| p.resampled(&rng::resample_counts(p.len(), p.len(), rng)))
            .collect();
        Self::from_sorted(periods, self.config.clone())
    }

    /// The same model with every crossing fixed at its current estimate.
    pub fn with_frozen_crossings(&self) -> Result<Self> {
        let locs = self
            .comparison_periods()
            .map(|t| self.crossing(t).map(|c| c.location))
            .collect::<Result<Vec<_>>>()?;
        let mut m = self.clone();
        m.config.frozen_crossings = Some(locs);
        Ok(m)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn family(&self) -> KernelFamily {
        self.config.kernel.family
    }

    pub fn num_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn reference_period(&self) -> usize {
        self.periods.len()
    }

    pub fn comparison_periods(&self) -> std::ops::Range<usize> {
        1..self.periods.len()
    }

    fn check_comparison(&self, t: usize) -> Result<()> {
        if t == 0 || t >= self.reference_period() {
            return invalid(format!(
                "period {t} is not a comparison period (expected 1..{})",
                self.reference_period() - 1
            ));
        }
        Ok(())
    }

    /// Sample of period `t` (1-based) sorted by treatment.
    pub fn sample(&self, t: usize) -> &SortedSample {
        &self.periods[t - 1]
    }

    pub fn reference(&self) -> &SortedSample {
        &self.periods[self.periods.len() - 1]
    }

    pub fn bandwidth(&self, t: usize) -> f64 {
        self.bandwidths[t - 1]
    }

    pub fn reference_bandwidth(&self) -> f64 {
        self.bandwidths[self.bandwidths.len() - 1]
    }

    /// Default degeneracy tolerance for `|q_t(x) - x|`.
    pub fn tol_q(&self) -> f64 {
        self.config.tol_factor * self.reference_bandwidth()
    }

    pub fn rank_map(&self, t: usize) -> Result<&RankMap> {
        self.check_comparison(t)?;
        Ok(&self.ranks[t - 1])
    }

    pub fn crossing(&self, t: usize) -> Result<CrossingPoint> {
        self.check_comparison(t)?;
        if let Some(f) = &self.config.frozen_crossings {
            return Ok(CrossingPoint::fixed(f[t - 1]));
        }
        crossing_sorted(
            self.sample(t).treatments(),
            self.reference().treatments(),
            self.config.trim_lower,
            self.config.trim_upper,
        )
    }

    pub fn trend_at(&self, t: usize, location: f64) -> Result<TrendMap> {
        self.check_comparison(t)?;
        point_trend_sorted(
            t,
            self.reference_period(),
            self.sample(t),
            self.reference(),
            location,
            self.bandwidth(t),
            self.reference_bandwidth(),
            self.family(),
            &self.config.trend,
        )
    }

    pub fn trend_on(&self, t: usize, set: &ControlSet) -> Result<TrendMap> {
        self.check_comparison(t)?;
        interval_trend_sorted(
            t,
            self.reference_period(),
            self.sample(t),
            self.reference(),
            set,
            &self.config.trend,
        )
    }

    /// Crossing and trend for period `t` as configured.
    pub fn fit(&self, t: usize) -> Result<PeriodFit> {
        match &self.config.control {
            ControlGroup::Crossing => {
                let c = self.crossing(t)?;
                let trend = self.trend_at(t, c.location)?;
                Ok(PeriodFit {
                    crossing: Some(c),
                    trend,
                })
            }
            ControlGroup::Interval { set } => Ok(PeriodFit {
                crossing: None,
                trend: self.trend_on(t, set)?,
            }),
        }
    }

    /// Trends for every comparison period.
    pub fn fit_all(&self) -> Result<Vec<PeriodFit>> {
        self.comparison_periods().map(|t| self.fit(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Dataset {
        let x1: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let x2: Vec<f64> = (0..60).map(|i| i as f64 * 0.09 + 0.2).collect();
        Dataset::from_vectors(vec![(x1.clone(), x1), (x2.clone(), x2)]).unwrap()
    }

    #[test]
    fn frozen_crossing_is_used() {
        let cfg = PipelineConfig {
            frozen_crossings: Some(vec![2.0]),
            ..Default::default()
        };
        let m = Model::new(&data(), cfg).unwrap();
        assert_eq!(m.crossing(1).unwrap().location, 2.0);
        assert!(m.crossing(2).is_err());
        let bad = PipelineConfig {
            frozen_crossings: Some(vec![1.0, 2.0]),
            ..Default::default()
        };
        assert!(Model::new(&data(), bad).is_err());
    }

    #[test]
    fn resample_keeps_sizes_and_order() {
        let m = Model::new(&data(), PipelineConfig::default()).unwrap();
        let r = m.resample(&mut rng::stream(3, 0)).unwrap();
        assert_eq!(r.sample(1).len(), 50);
        assert_eq!(r.sample(2).len(), 60);
        assert!(r.sample(2).treatments().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig {
            control: ControlGroup::Interval {
                set: "1,2;3,4".parse().unwrap(),
            },
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}
