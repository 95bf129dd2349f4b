//! Treatment effects on the treated, marginal effects, curvature bounds and
//! random-coefficient extrapolation.
//!
//! All estimators compare period-t outcomes, moved onto the reference scale by
//! the trend, at the rank-matched treatment `q_t(x)` with reference-period
//! outcomes at `x`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::rng;
use crate::transport::DiscreteDist;
use crate::trend::TrendMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectKind {
    #[serde(rename = "ATT")]
    Att,
    #[serde(rename = "QTT")]
    Qtt,
    #[serde(rename = "AME_app")]
    AmeApp,
    #[serde(rename = "AME_avg")]
    AmeAvg,
    #[serde(rename = "AME_rc")]
    AmeRc,
    #[serde(rename = "bound_lower")]
    BoundLower,
    #[serde(rename = "bound_upper")]
    BoundUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub period_t: usize,
    /// Evaluation point; absent for averages over the treatment distribution.
    pub eval_x: Option<f64>,
    /// `q_t(eval_x)`.
    pub counterfactual_x: Option<f64>,
    pub quantile_p: Option<f64>,
    pub value: f64,
    pub ci: Option<[f64; 2]>,
    /// Share of reference-period units kept by an average.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retained_fraction: Option<f64>,
}

impl EffectEstimate {
    fn at(kind: EffectKind, t: usize, x: f64, q: f64, value: f64) -> Self {
        Self {
            kind,
            period_t: t,
            eval_x: Some(x),
            counterfactual_x: Some(q),
            quantile_p: None,
            value,
            ci: None,
            retained_fraction: None,
        }
    }
}

fn check_trend(model: &Model, t: usize, trend: &TrendMap) -> Result<()> {
    if trend.period() != t || trend.reference_period() != model.reference_period() {
        return invalid(format!(
            "trend estimated for periods ({}, {}) used for ({t}, {})",
            trend.period(),
            trend.reference_period(),
            model.reference_period()
        ));
    }
    Ok(())
}

/// `q_t(x)`, failing outside the reference treatment support.
pub fn counterfactual(model: &Model, t: usize, x: f64) -> Result<f64> {
    model.rank_map(t)?.eval_strict(x)
}

/// ATT between `x` and an arbitrary matched point `q` that came from period `t`.
pub(crate) fn att_value(model: &Model, t: usize, x: f64, q: f64, trend: &TrendMap) -> Result<f64> {
    let fam = model.family();
    let adjusted = model
        .sample(t)
        .nw_mean_with(q, model.bandwidth(t), fam, |y| trend.tau_value(y))?;
    let reference = model.reference().nw_mean(x, model.reference_bandwidth(), fam)?;
    Ok(adjusted - reference)
}

/// `E[Y_T(q_t(x)) - Y_T(x) | X_T = x]`.
pub fn att(model: &Model, t: usize, x: f64, trend: &TrendMap) -> Result<EffectEstimate> {
    check_trend(model, t, trend)?;
    let q = counterfactual(model, t, x)?;
    let v = att_value(model, t, x, q, trend)?;
    Ok(EffectEstimate::at(EffectKind::Att, t, x, q, v))
}

/// The two conditional quantiles whose difference is the QTT: adjusted period-t
/// outcomes at `q_t(x)` and reference outcomes at `x`.
pub fn qtt_components(model: &Model, t: usize, p: f64, x: f64, trend: &TrendMap) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("quantile level must lie in (0, 1), got {p}"));
    }
    check_trend(model, t, trend)?;
    let q = counterfactual(model, t, x)?;
    let fam = model.family();
    let st = model.sample(t);
    let (r, w) = st.weights(q, model.bandwidth(t), fam)?;
    let pairs = st.outcomes()[r]
        .iter()
        .zip(w)
        .map(|(&y, wi)| (trend.tau_value(y), wi))
        .collect();
    let adjusted = DiscreteDist::from_weighted(pairs)?.quantile(p);
    let reference = model
        .reference()
        .conditional_dist(x, model.reference_bandwidth(), fam)?
        .quantile(p);
    Ok((adjusted, reference))
}

pub fn qtt(model: &Model, t: usize, p: f64, x: f64, trend: &TrendMap) -> Result<EffectEstimate> {
    let (a, b) = qtt_components(model, t, p, x, trend)?;
    let q = counterfactual(model, t, x)?;
    let mut e = EffectEstimate::at(EffectKind::Qtt, t, x, q, a - b);
    e.quantile_p = Some(p);
    Ok(e)
}

/// `ATT / (q_t(x) - x)`; `tol` defaults to the model's degeneracy tolerance.
pub fn ame_app(model: &Model, t: usize, x: f64, trend: &TrendMap, tol: Option<f64>) -> Result<EffectEstimate> {
    let tol = tol.unwrap_or_else(|| model.tol_q());
    let a = att(model, t, x, trend)?;
    let q = a.counterfactual_x.unwrap();
    let gap = q - x;
    if gap.abs() <= tol {
        return Err(Error::Degenerate { gap, tol });
    }
    Ok(EffectEstimate::at(EffectKind::AmeApp, t, x, q, a.value / gap))
}

/// Average of `ATT / (q_t(x) - x)` over reference-period units with `|q_t(x) - x| > c`.
pub fn ame_avg(model: &Model, t: usize, c: f64, trend: &TrendMap) -> Result<EffectEstimate> {
    if !(c >= 0.0) {
        return invalid(format!("threshold c must be nonnegative, got {c}"));
    }
    check_trend(model, t, trend)?;
    let rank = model.rank_map(t)?;
    let st = model.sample(t);
    let fam = model.family();
    let (ht, hr) = (model.bandwidth(t), model.reference_bandwidth());
    let adjusted: Vec<f64> = st.outcomes().iter().map(|&y| trend.tau_value(y)).collect();
    let xs = model.reference().treatments();
    let ratios: Vec<Option<f64>> = xs
        .par_iter()
        .map(|&x| {
            let q = rank.eval(x).value;
            let gap = q - x;
            if gap.abs() <= c {
                return None;
            }
            let a = st.nw_mean_of(&adjusted, q, ht, fam).ok()?;
            let b = model.reference().nw_mean(x, hr, fam).ok()?;
            Some((a - b) / gap)
        })
        .collect();
    let kept: Vec<f64> = ratios.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::EmptySet(format!(
            "no reference unit has |q_{t}(x) - x| > {c}"
        )));
    }
    Ok(EffectEstimate {
        kind: EffectKind::AmeAvg,
        period_t: t,
        eval_x: None,
        counterfactual_x: None,
        quantile_p: None,
        value: kept.iter().sum::<f64>() / kept.len() as f64,
        ci: None,
        retained_fraction: Some(kept.len() as f64 / xs.len() as f64),
    })
}

/// Nearest rank-matched points strictly below and above `x_prime`, ignoring
/// periods where `q_t(x) = x`; `-inf`/`+inf` when there is none.
pub fn neighbors(x: f64, x_prime: f64, qs: &[f64]) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &q in qs {
        if q == x || q.is_nan() {
            continue;
        }
        if q < x_prime {
            lo = lo.max(q);
        } else if q > x_prime {
            hi = hi.min(q);
        }
    }
    (lo, hi)
}

mod extended {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Tag(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }

    pub mod pair {
        use serde::ser::SerializeTuple;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
            struct W(f64);
            impl serde::Serialize for W {
                fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                    super::serialize(&self.0, s)
                }
            }
            let mut t = s.serialize_tuple(2)?;
            t.serialize_element(&W(v.0))?;
            t.serialize_element(&W(v.1))?;
            t.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] f64);
            let (a, b) = <(W, W)>::deserialize(d)?;
            Ok((a.0, b.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub eval_x: f64,
    pub counterfactual_x: f64,
    #[serde(with = "extended")]
    pub lower: f64,
    #[serde(with = "extended")]
    pub upper: f64,
    #[serde(with = "extended::pair")]
    pub neighbors: (f64, f64),
    /// Periods whose rank-matched points are the neighbors.
    pub periods_used: Vec<usize>,
    /// Period whose crossing makes the marginal effect point identified at `eval_x`.
    pub point_identified: Option<usize>,
}

impl BoundsResult {
    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Secant bounds from the two neighbors; infinite when either neighbor is missing.
pub(crate) fn secant_bounds(scale: f64, s_lo: Option<f64>, s_hi: Option<f64>) -> (f64, f64) {
    match (s_lo, s_hi) {
        (Some(a), Some(b)) => {
            let (u, v) = (scale * a, scale * b);
            (u.min(v), u.max(v))
        }
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

fn check_trends(model: &Model, trends: &[TrendMap]) -> Result<()> {
    if trends.len() != model.reference_period() - 1 {
        return invalid(format!(
            "{} trends given for {} comparison periods",
            trends.len(),
            model.reference_period() - 1
        ));
    }
    for (i, tr) in trends.iter().enumerate() {
        check_trend(model, i + 1, tr)?;
    }
    Ok(())
}

/// `(period, q_t(x))` for every period with an unclamped rank match.
fn matched_points(model: &Model, x: f64) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for t in model.comparison_periods() {
        if let Ok(q) = model.rank_map(t)?.eval_strict(x) {
            out.push((t, q));
        }
    }
    if out.is_empty() {
        return Err(Error::OutsideSupport(x));
    }
    Ok(out)
}

fn neighbor_periods(matched: &[(usize, f64)], n: (f64, f64)) -> (Option<usize>, Option<usize>) {
    let find = |v: f64| {
        if v.is_finite() {
            matched.iter().find(|m| m.1 == v).map(|m| m.0)
        } else {
            None
        }
    };
    (find(n.0), find(n.1))
}

fn secant(model: &Model, trends: &[TrendMap], t: Option<usize>, x: f64, q: f64) -> Result<Option<f64>> {
    match t {
        Some(t) => Ok(Some(att_value(model, t, x, q, &trends[t - 1])? / (q - x))),
        None => Ok(None),
    }
}

/// Bounds on `ATT(x, x')` under local concavity or convexity of the outcome map.
pub fn att_bounds(model: &Model, x: f64, x_prime: f64, trends: &[TrendMap]) -> Result<BoundsResult> {
    check_trends(model, trends)?;
    let matched = matched_points(model, x)?;
    let qs: Vec<f64> = matched.iter().map(|m| m.1).collect();
    let n = neighbors(x, x_prime, &qs);
    let (tl, th) = neighbor_periods(&matched, n);
    let s_lo = secant(model, trends, tl, x, n.0)?;
    let s_hi = secant(model, trends, th, x, n.1)?;
    let (lower, upper) = secant_bounds(x_prime - x, s_lo, s_hi);
    Ok(BoundsResult {
        eval_x: x,
        counterfactual_x: x_prime,
        lower,
        upper,
        neighbors: n,
        periods_used: [tl, th].into_iter().flatten().collect(),
        point_identified: None,
    })
}

/// Bounds on the average marginal effect at `x`. At a crossing of some period
/// (`|q_s(x) - x| <= tol`) the effect is point identified and both bounds equal
/// the local secant slope of that period.
pub fn ame_bounds(model: &Model, x: f64, trends: &[TrendMap], tol: Option<f64>) -> Result<BoundsResult> {
    check_trends(model, trends)?;
    let tol = tol.unwrap_or_else(|| model.tol_q());
    let matched = matched_points(model, x)?;
    if let Some(&(s, q)) = matched
        .iter()
        .filter(|m| (m.1 - x).abs() <= tol)
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
    {
        let v = local_slope(model, s, x, &trends[s - 1], tol)?;
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
    let (tl, th) = neighbor_periods(&matched, n);
    let s_lo = secant(model, trends, tl, x, n.0)?;
    let s_hi = secant(model, trends, th, x, n.1)?;
    let (lower, upper) = secant_bounds(1.0, s_lo, s_hi);
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

/// Average of the secant slopes of period `s` just left and right of `x`,
/// moving out by multiples of the reference bandwidth until the rank-matched
/// point separates from the evaluation point.
fn local_slope(model: &Model, s: usize, x: f64, trend: &TrendMap, tol: f64) -> Result<f64> {
    let h = model.reference_bandwidth();
    for k in [1.0, 2.0, 4.0] {
        let vals: Vec<f64> = [x - k * h, x + k * h]
            .iter()
            .filter_map(|&z| ame_app(model, s, z, trend, Some(tol)).ok())
            .map(|e| e.value)
            .collect();
        if !vals.is_empty() {
            return Ok(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Err(Error::Degenerate { gap: 0.0, tol })
}

/// Marginal effect under the linear random-coefficient model; the same number
/// as [`ame_app`].
pub fn rc_ame(model: &Model, t: usize, x: f64, trend: &TrendMap, tol: Option<f64>) -> Result<EffectEstimate> {
    let mut e = ame_app(model, t, x, trend, tol)?;
    e.kind = EffectKind::AmeRc;
    Ok(e)
}

/// Average of [`rc_ame`] over reference-period units with `|q_t(x) - x| > c`.
pub fn rc_ame_overall(model: &Model, t: usize, c: f64, trend: &TrendMap) -> Result<EffectEstimate> {
    let mut e = ame_avg(model, t, c, trend)?;
    e.kind = EffectKind::AmeRc;
    Ok(e)
}

/// Location of `g_t(y) - y`: mean over the central 80% of its values on the trend grid.
pub fn rc_time_shift(trend: &TrendMap) -> f64 {
    let mut d: Vec<f64> = trend
        .grid()
        .iter()
        .zip(trend.g_values())
        .map(|(y, g)| g - y)
        .collect();
    d.sort_by(f64::total_cmp);
    let cut = d.len() / 10;
    let core = &d[cut..d.len() - cut];
    core.iter().sum::<f64>() / core.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityTest {
    pub eval_x: f64,
    /// `max_{s,t} |r_s(x) - r_t(x)|` over the secant slopes `r_t`.
    pub statistic: f64,
    pub p_value: f64,
    pub periods: Vec<usize>,
    pub ratios: Vec<f64>,
    pub replications: usize,
    pub failures: usize,
    pub seed: u64,
}

fn ratios_at(model: &Model, x: f64, periods: &[usize]) -> Result<Vec<f64>> {
    periods
        .iter()
        .map(|&t| {
            let fit = model.fit(t)?;
            let q = counterfactual(model, t, x)?;
            Ok(att_value(model, t, x, q, &fit.trend)? / (q - x))
        })
        .collect()
}

fn max_pair_gap(r: &[f64]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..r.len() {
        for j in i + 1..r.len() {
            m = m.max((r[i] - r[j]).abs());
        }
    }
    m
}

/// Checks that the secant slopes of all periods agree at `x`, as they must when
/// outcomes are linear in the treatment; bootstrap p-value from the recentred
/// statistic with the whole pipeline re-estimated per replicate.
pub fn rc_linearity_test(model: &Model, x: f64, b: usize, seed: u64) -> Result<LinearityTest> {
    if model.num_periods() < 3 {
        return invalid("the linearity test needs at least 3 periods");
    }
    if b < 99 {
        return invalid(format!("the linearity test needs at least 99 replications, got {b}"));
    }
    let tol = model.tol_q();
    let mut periods = Vec::new();
    for t in model.comparison_periods() {
        if let Ok(q) = counterfactual(model, t, x) {
            if (q - x).abs() > tol {
                periods.push(t);
            }
        }
    }
    if periods.len() < 2 {
        return Err(Error::EmptySet(format!(
            "fewer than two periods with q_t({x}) away from {x}"
        )));
    }
    let ratios = ratios_at(model, x, &periods)?;
    let statistic = max_pair_gap(&ratios);
    let reps: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let m = model.resample(&mut g).ok()?;
            let rr = ratios_at(&m, x, &periods).ok()?;
            let centered: Vec<f64> = rr.iter().zip(&ratios).map(|(a, b)| a - b).collect();
            Some(max_pair_gap(&centered))
        })
        .collect();
    let ok: Vec<f64> = reps.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::BootstrapFailed(b));
    }
    let exceed = ok.iter().filter(|&&s| s >= statistic).count();
    Ok(LinearityTest {
        eval_x: x,
        statistic,
        p_value: (1 + exceed) as f64 / (ok.len() + 1) as f64,
        periods,
        ratios,
        replications: ok.len(),
        failures: b - ok.len(),
        seed,
    })
}
