//! Time-trend recovery by quantile-quantile transport.
//!
//! `g_t` carries reference-period outcomes onto the period-t scale. It is read
//! off from units that sit at a crossing point (or in a control set) of the two
//! treatment distributions, where the treatment ranks are the same in both
//! periods so that any outcome change is due to the trend alone.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CrossSection, Dataset};
use crate::empirical::{CrossingPoint, EmpiricalCdf};
use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelFamily, KernelSpec, SortedSample};
use crate::rng;
use crate::transport::{isotonic_increasing, DiscreteDist, Extrapolation, Position, Transport};

pub const DEFAULT_GRID: usize = 512;

/// Mass excluded on each side when building the common grid of the overidentification test.
const OVERID_TAIL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendOptions {
    pub grid_size: usize,
    pub extrapolation: Extrapolation,
}

impl Default for TrendOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID,
            extrapolation: Extrapolation::Shift,
        }
    }
}

/// A union of closed intervals, written `a,b;c,d` or `[a,b]∪[c,d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    intervals: Vec<(f64, f64)>,
}

impl ControlSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return invalid("control set has no intervals");
        }
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return invalid(format!("invalid control interval [{a}, {b}]"));
            }
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| x >= a && x <= b)
    }
}

impl FromStr for ControlSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut out = Vec::new();
        for piece in cleaned.split([';', '∪']).filter(|p| !p.is_empty()) {
            let inner = piece.trim_matches(|c| matches!(c, '[' | ']' | '(' | ')'));
            let parts: Vec<&str> = inner.split(',').collect();
            let parsed: std::result::Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 2 => out.push((v[0], v[1])),
                _ => return invalid(format!("cannot parse control interval `{piece}`")),
            }
        }
        ControlSet::new(out)
    }
}

impl fmt::Display for ControlSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.intervals.iter().map(|(a, b)| format!("{a},{b}")).collect();
        f.write_str(&parts.join(";"))
    }
}

impl Serialize for ControlSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ControlSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Two-sample Kolmogorov-Smirnov check that the control set is a crossing set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalDiagnostic {
    pub ks_statistic: f64,
    /// Asymptotic 5% critical value.
    pub critical_value: f64,
    pub warning: bool,
    pub n_t: usize,
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrendSource {
    Point {
        location: f64,
        bandwidth_t: f64,
        bandwidth_ref: f64,
        kernel: KernelFamily,
    },
    Interval {
        set: ControlSet,
        diagnostic: IntervalDiagnostic,
    },
}

/// Estimated `g_t` together with its inverse.
#[derive(Debug, Clone)]
pub struct TrendMap {
    period: usize,
    reference_period: usize,
    source: TrendSource,
    grid: Vec<f64>,
    g_values: Vec<f64>,
    forward: Transport,
    inverse: Transport,
    t_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendMetadata<'a> {
    pub period: usize,
    pub reference_period: usize,
    pub source: &'a TrendSource,
    pub grid_size: usize,
    pub extrapolation: Extrapolation,
    pub y_grid_min: f64,
    pub y_grid_max: f64,
}

impl TrendMap {
    #[allow(clippy::too_many_arguments)]
    fn build(
        period: usize,
        reference_period: usize,
        source: TrendSource,
        dist_t: DiscreteDist,
        dist_ref: DiscreteDist,
        ref_range: (f64, f64),
        t_range: (f64, f64),
        opts: &TrendOptions,
    ) -> Result<Self> {
        if opts.grid_size < 2 {
            return invalid(format!("trend grid needs at least 2 points, got {}", opts.grid_size));
        }
        let forward = Transport::new(dist_ref, dist_t, opts.extrapolation);
        let inverse = forward.reversed();
        let (lo, hi) = ref_range;
        let m = opts.grid_size;
        let grid: Vec<f64> = (0..m)
            .map(|i| {
                if i == m - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (m - 1) as f64
                }
            })
            .collect();
        let raw: Vec<f64> = grid
            .iter()
            .map(|&y| forward.eval(y).clamp(t_range.0, t_range.1))
            .collect();
        let g_values = isotonic_increasing(&raw);
        Ok(Self {
            period,
            reference_period,
            source,
            grid,
            g_values,
            forward,
            inverse,
            t_range,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn reference_period(&self) -> usize {
        self.reference_period
    }

    pub fn source(&self) -> &TrendSource {
        &self.source
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    /// `g_t(y)`: reference-period outcome to the period-t scale.
    pub fn g(&self, y: f64) -> f64 {
        self.forward.eval(y).clamp(self.t_range.0, self.t_range.1)
    }

    /// `g_t(y)` with the position of `y` relative to the conditional support the
    /// map was estimated from.
    pub fn g_at(&self, y: f64) -> (f64, Position) {
        let (v, pos) = self.forward.apply(y);
        (v.clamp(self.t_range.0, self.t_range.1), pos)
    }

    /// `g_t^{-1}(y)`: period-t outcome onto the reference scale, with its position
    /// relative to the conditional support it was estimated from.
    pub fn tau(&self, y: f64) -> (f64, Position) {
        self.inverse.apply(y)
    }

    pub fn tau_value(&self, y: f64) -> f64 {
        self.inverse.eval(y)
    }

    pub fn is_identity_on(&self, ys: &[f64]) -> bool {
        ys.iter().all(|&y| self.g(y) == y && self.tau_value(y) == y)
    }

    pub fn metadata(&self) -> TrendMetadata<'_> {
        TrendMetadata {
            period: self.period,
            reference_period: self.reference_period,
            source: &self.source,
            grid_size: self.grid.len(),
            extrapolation: self.forward.extrapolation(),
            y_grid_min: self.grid[0],
            y_grid_max: self.grid[self.grid.len() - 1],
        }
    }

    /// Writes `y_grid,g_value` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "y_grid,g_value")?;
        for (y, g) in self.grid.iter().zip(&self.g_values) {
            writeln!(out, "{y:?},{g:?}")?;
        }
        Ok(())
    }
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn point_trend_sorted(
    period: usize,
    reference_period: usize,
    st: &SortedSample,
    sr: &SortedSample,
    location: f64,
    bandwidth_t: f64,
    bandwidth_ref: f64,
    family: KernelFamily,
    opts: &TrendOptions,
) -> Result<TrendMap> {
    let dist_t = st.conditional_dist(location, bandwidth_t, family)?;
    let dist_ref = sr.conditional_dist(location, bandwidth_ref, family)?;
    TrendMap::build(
        period,
        reference_period,
        TrendSource::Point {
            location,
            bandwidth_t,
            bandwidth_ref,
            kernel: family,
        },
        dist_t,
        dist_ref,
        range(sr.outcomes()),
        range(st.outcomes()),
        opts,
    )
}

/// `g_t(y) = F_{Y_t|X_t=x*}^{-1}(F_{Y_T|X_T=x*}(y))` with kernel conditional distributions.
pub fn estimate_trend_point(
    dataset: &Dataset,
    t: usize,
    crossing: &CrossingPoint,
    spec: &KernelSpec,
    opts: &TrendOptions,
) -> Result<TrendMap> {
    let (st, sr) = period_pair(dataset, t)?;
    let ht = spec.resolve(st.treatments())?;
    let hr = spec.resolve(sr.treatments())?;
    point_trend_sorted(
        t,
        dataset.reference_period(),
        &SortedSample::from_section(st),
        &SortedSample::from_section(sr),
        crossing.location,
        ht,
        hr,
        spec.family,
        opts,
    )
}

fn period_pair(dataset: &Dataset, t: usize) -> Result<(&CrossSection, &CrossSection)> {
    if t == 0 || t >= dataset.reference_period() {
        return invalid(format!(
            "period {t} is not a comparison period (expected 1..{})",
            dataset.reference_period() - 1
        ));
    }
    Ok((dataset.period(t)?, dataset.reference()))
}

fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub(crate) fn interval_trend_sorted(
    period: usize,
    reference_period: usize,
    st: &SortedSample,
    sr: &SortedSample,
    set: &ControlSet,
    opts: &TrendOptions,
) -> Result<TrendMap> {
    let pick = |s: &SortedSample| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (&xi, &yi) in s.treatments().iter().zip(s.outcomes()) {
            if set.contains(xi) {
                x.push(xi);
                y.push(yi);
            }
        }
        y.sort_by(f64::total_cmp);
        (x, y)
    };
    let (xt, yt) = pick(st);
    let (xr, yr) = pick(sr);
    if xt.is_empty() || xr.is_empty() {
        return invalid(format!(
            "control set {set} leaves an empty subsample (period {period}: {}, reference: {})",
            xt.len(),
            xr.len()
        ));
    }
    let ks = ks_two_sample(&xt, &xr);
    let (n, m) = (xt.len() as f64, xr.len() as f64);
    let critical_value = 1.358 * ((n + m) / (n * m)).sqrt();
    let diagnostic = IntervalDiagnostic {
        ks_statistic: ks,
        critical_value,
        warning: ks > critical_value,
        n_t: xt.len(),
        n_ref: xr.len(),
    };
    TrendMap::build(
        period,
        reference_period,
        TrendSource::Interval {
            set: set.clone(),
            diagnostic,
        },
        DiscreteDist::from_sorted_unit(&yt)?,
        DiscreteDist::from_sorted_unit(&yr)?,
        range(sr.outcomes()),
        range(st.outcomes()),
        opts,
    )
}

/// Trend from the plain empirical outcome distributions of units with treatment in `set`.
pub fn estimate_trend_interval(
    dataset: &Dataset,
    t: usize,
    set: &ControlSet,
    opts: &TrendOptions,
) -> Result<TrendMap> {
    let (st, sr) = period_pair(dataset, t)?;
    interval_trend_sorted(
        t,
        dataset.reference_period(),
        &SortedSample::from_section(st),
        &SortedSample::from_section(sr),
        set,
        opts,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedOutcomes {
    pub values: Vec<f64>,
    /// Indices whose outcome fell outside the estimated support and was extrapolated.
    pub extrapolated: Vec<usize>,
}

/// Maps period-t outcomes onto the reference-period scale.
pub fn adjust_outcomes(section: &CrossSection, trend: &TrendMap) -> AdjustedOutcomes {
    let mut extrapolated = Vec::new();
    let values = section
        .outcomes()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let (v, pos) = trend.tau(y);
            if pos != Position::Inside {
                extrapolated.push(i);
            }
            v
        })
        .collect();
    AdjustedOutcomes { values, extrapolated }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OveridResult {
    /// `sup_y |g_a(y) - g_b(y)|` over the common grid.
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub locations: [f64; 2],
    pub grid_range: [f64; 2],
    pub grid_size: usize,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OveridOptions {
    pub trend: TrendOptions,
    /// Bootstrap replications and seed; `None` skips the p-value.
    pub bootstrap: Option<(usize, u64)>,
}

struct OveridCore {
    grid: Vec<f64>,
    diffs: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn overid_core(
    t: usize,
    reference: usize,
    st: &SortedSample,
    sr: &SortedSample,
    locs: [f64; 2],
    spec: &KernelSpec,
    opts: &TrendOptions,
    grid: Option<&[f64]>,
    grid_size: usize,
) -> Result<OveridCore> {
    let ht = spec.resolve(st.treatments())?;
    let hr = spec.resolve(sr.treatments())?;
    let maps = [
        point_trend_sorted(t, reference, st, sr, locs[0], ht, hr, spec.family, opts)?,
        point_trend_sorted(t, reference, st, sr, locs[1], ht, hr, spec.family, opts)?,
    ];
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => {
            let ra = sr.conditional_dist(locs[0], hr, spec.family)?;
            let rb = sr.conditional_dist(locs[1], hr, spec.family)?;
            let lo = ra.quantile(OVERID_TAIL).max(rb.quantile(OVERID_TAIL));
            let hi = ra.quantile(1.0 - OVERID_TAIL).min(rb.quantile(1.0 - OVERID_TAIL));
            if !(lo < hi) {
                return invalid(
                    "reference outcome distributions at the two crossings do not overlap",
                );
            }
            (0..grid_size)
                .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
                .collect()
        }
    };
    let diffs = grid.iter().map(|&y| maps[0].g(y) - maps[1].g(y)).collect();
    Ok(OveridCore { grid, diffs })
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, d| m.max(d.abs()))
}

/// Compares the trends recovered at two crossing points; they agree in population
/// when outcome ranks are stationary.
pub fn overid_diagnostic(
    dataset: &Dataset,
    t: usize,
    crossings: [&CrossingPoint; 2],
    spec: &KernelSpec,
    opts: &OveridOptions,
) -> Result<OveridResult> {
    let (a, b) = period_pair(dataset, t)?;
    overid_sorted(
        t,
        dataset.reference_period(),
        &SortedSample::from_section(a),
        &SortedSample::from_section(b),
        [crossings[0].location, crossings[1].location],
        spec,
        opts,
    )
}

pub(crate) fn overid_sorted(
    t: usize,
    reference: usize,
    st: &SortedSample,
    sr: &SortedSample,
    locs: [f64; 2],
    spec: &KernelSpec,
    opts: &OveridOptions,
) -> Result<OveridResult> {
    let ht = spec.resolve(st.treatments())?;
    let hr = spec.resolve(sr.treatments())?;
    let sep = ht.max(hr);
    if (locs[0] - locs[1]).abs() < sep {
        return invalid(format!(
            "crossings {} and {} are closer than one bandwidth ({sep})",
            locs[0], locs[1]
        ));
    }
    let grid_size = opts.trend.grid_size.max(2);
    let base = overid_core(t, reference, st, sr, locs, spec, &opts.trend, None, grid_size)?;
    let statistic = sup_abs(&base.diffs);
    let mut result = OveridResult {
        statistic,
        p_value: None,
        locations: locs,
        grid_range: [base.grid[0], base.grid[base.grid.len() - 1]],
        grid_size,
        replications: 0,
        failures: 0,
    };
    if let Some((b, seed)) = opts.bootstrap {
        if b < 99 {
            return invalid(format!("overidentification bootstrap needs at least 99 replications, got {b}"));
        }
        let outcomes: Vec<Option<bool>> = (0..b)
            .into_par_iter()
            .map(|r| {
                let mut g = rng::stream(seed, r as u64);
                let rt = st.resampled(&rng::resample_counts(st.len(), st.len(), &mut g));
                let rr = sr.resampled(&rng::resample_counts(sr.len(), sr.len(), &mut g));
                let rep = overid_core(t, reference, &rt, &rr, locs, spec, &opts.trend, Some(&base.grid), grid_size).ok()?;
                let centered: Vec<f64> = rep.diffs.iter().zip(&base.diffs).map(|(x, y)| x - y).collect();
                Some(sup_abs(&centered) >= statistic)
            })
            .collect();
        let ok: Vec<bool> = outcomes.iter().flatten().copied().collect();
        if ok.is_empty() {
            return Err(Error::BootstrapFailed(b));
        }
        let exceed = ok.iter().filter(|&&e| e).count();
        result.p_value = Some((1 + exceed) as f64 / (ok.len() + 1) as f64);
        result.replications = ok.len();
        result.failures = b - ok.len();
    }
    Ok(result)
}

/// Period-T treatment distribution restricted to a control set, for reporting.
pub fn control_mass(dataset: &Dataset, set: &ControlSet) -> Result<f64> {
    let e = EmpiricalCdf::new(dataset.reference().treatments())?;
    let inside = e.sorted_values().iter().filter(|&&x| set.contains(x)).count();
    Ok(inside as f64 / e.len() as f64)
}
