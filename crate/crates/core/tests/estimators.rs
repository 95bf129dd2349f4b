//! Estimators against population oracles of the simulation designs.
//!
//! Tolerances are about three standard errors at the stated sample sizes.

use contdid::effects::{ame_avg, att, qtt, rc_ame};
use contdid::sim::simulate;
use contdid::trend::{estimate_trend_interval, estimate_trend_point};
use contdid::{ControlSet, DgpSpec, KernelSpec, Model, PipelineConfig, TrendOptions};

fn model(spec: &DgpSpec, n: usize, seed: u64) -> Model {
    let d = simulate(spec, n, seed).unwrap();
    Model::new(&d, PipelineConfig::default()).unwrap()
}

#[test]
fn linear_average_marginal_effect_is_the_slope() {
    let m = model(&DgpSpec::linear_default(), 20_000, 31);
    let fit = m.fit(1).unwrap();
    let e = ame_avg(&m, 1, m.reference_bandwidth(), &fit.trend).unwrap();
    assert!((e.value - 2.0).abs() < 0.1, "{e:?}");
    assert!(e.retained_fraction.unwrap() > 0.9);
}

#[test]
fn linear_design_is_a_degenerate_random_coefficient_model() {
    let m = model(&DgpSpec::linear_default(), 20_000, 32);
    let fit = m.fit(1).unwrap();
    // quartile and median of X_T = 1 + N(0, 1); q(x) - x = x - 2
    for x in [0.3255, 1.0] {
        let e = rc_ame(&m, 1, x, &fit.trend, None).unwrap();
        assert!((e.value - 2.0).abs() < 0.15, "x = {x}: {e:?}");
    }
}

fn concave_pair() -> DgpSpec {
    DgpSpec::from_toml(
        r#"
        variant = "bounds_example"
        periods = 2
        mu = [2.0]
        sigma = [0.5]
        delta = [0.4]
        "#,
    )
    .unwrap()
}

#[test]
fn concave_design_att_matches_oracle() {
    let spec = concave_pair();
    let pop = spec.resolve().unwrap();
    let m = model(&spec, 40_000, 33);
    let fit = m.fit(1).unwrap();
    for x in [2.0, 2.5, 3.0] {
        let est = att(&m, 1, x, &fit.trend).unwrap().value;
        let oracle = pop.oracle_att(1, x, 1_000_000, 5).unwrap();
        assert!((est - oracle.value).abs() < 0.04, "x = {x}: {est} vs {oracle:?}");
    }
}

#[test]
fn concave_design_trend_matches_closed_form() {
    let spec = concave_pair();
    let pop = spec.resolve().unwrap();
    let m = model(&spec, 40_000, 34);
    let fit = m.fit(1).unwrap();
    let x = fit.crossing.unwrap().location;
    let local = m
        .reference()
        .conditional_dist(x, m.reference_bandwidth(), m.family())
        .unwrap();
    for p in [0.25, 0.5, 0.75] {
        let y = local.quantile(p);
        let truth = pop.trend(1, y).unwrap();
        assert!((fit.trend.g(y) - truth).abs() < 0.05, "y = {y}: {} vs {truth}", fit.trend.g(y));
    }
}

#[test]
fn quantile_rc_qtt_matches_oracle() {
    let spec = DgpSpec::from_toml(
        r#"
        variant = "quantile_rc"
        f_shift = [0.5, 0.0]
        f_scale = [1.2, 1.0]
        alpha = [0.0, 1.0]
        beta = [1.0, 1.0]
        gamma = [0.2, 0.0]
        delta = [0.4, 0.6]
        rho = 0.3
        "#,
    )
    .unwrap();
    let pop = spec.resolve().unwrap();
    let m = model(&spec, 40_000, 35);
    let fit = m.fit(1).unwrap();
    // median of X_T; the crossing is at exp(0.6)
    let x = 1.0;
    for p in [0.25, 0.5, 0.75] {
        let est = qtt(&m, 1, p, x, &fit.trend).unwrap().value;
        let oracle = pop.oracle_qtt(1, p, x, 200_000, 6).unwrap();
        assert!((est - oracle.value).abs() < 0.15, "p = {p}: {est} vs {oracle:?}");
    }
}

// Pooling a whole window of treatments around the crossing uses more units than
// the kernel-weighted point version and should be less variable.
#[test]
fn interval_trend_is_less_variable_than_point_trend() {
    let spec = DgpSpec::linear_default();
    let set = ControlSet::new(vec![(1.5, 2.5)]).unwrap();
    let opts = TrendOptions::default();
    let (mut point, mut interval) = (Vec::new(), Vec::new());
    for seed in 0..40 {
        let d = simulate(&spec, 2000, 900 + seed).unwrap();
        let m = Model::new(&d, PipelineConfig::default()).unwrap();
        let c = m.crossing(1).unwrap();
        let gp = estimate_trend_point(&d, 1, &c, &KernelSpec::default(), &opts).unwrap();
        let gi = estimate_trend_interval(&d, 1, &set, &opts).unwrap();
        // median reference outcome at the crossing: 2·2 + E[U | η = 1] = 4.5
        point.push(gp.g(4.5));
        interval.push(gi.g(4.5));
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    assert!(var(&interval) < var(&point), "{} vs {}", var(&interval), var(&point));
}
