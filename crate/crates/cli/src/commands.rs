use std::fmt::Write as _;
use std::path::Path;

use contdid::bootstrap::bootstrap;
use contdid::effects::{self, EffectEstimate};
use contdid::empirical::dominance_test;
use contdid::{
    bootstrap_with, ecdf, fit_piecewise_q, load_csv, load_csv_periods, BootstrapOptions, ControlGroup, CsvSchema,
    Dataset, DgpSpec, Estimand, KernelSpec, Model, PipelineConfig, TrendMap, TrendOptions,
};
use serde::Serialize;

use crate::args::*;
use crate::output::{csv_num, json, CliError, Output};

type Res<T> = Result<T, CliError>;

pub fn run(cmd: &Command) -> Res<Output> {
    match cmd {
        Command::Summarize(a) => summarize(a),
        Command::Crossing(a) => crossing(a),
        Command::Trend(a) => trend(a),
        Command::Att(a) => att(a),
        Command::Qtt(a) => qtt(a),
        Command::Ame(a) => ame(a),
        Command::Bounds(a) => bounds(a),
        Command::Rc(a) => rc(a),
        Command::FitQ(a) => fit_q(a),
        Command::Dominance(a) => dominance(a),
        Command::Simulate(a) => simulate(a),
        Command::Bootstrap(a) => bootstrap_cmd(a),
    }
}

fn load(d: &DataArgs) -> Res<Dataset> {
    let schema = CsvSchema {
        period: d.period_col.clone(),
        y: d.y_col.clone(),
        x: d.x_col.clone(),
    };
    let ds = match (&d.data, &d.data_t, &d.data_ref) {
        (Some(p), _, _) => load_csv(p, &schema)?,
        (None, Some(t), Some(r)) => load_csv_periods(&[t, r], &schema)?,
        _ => return Err(CliError::usage("give --data, or both --data-t and --data-T")),
    };
    Ok(ds)
}

fn config(f: &FitArgs, grid: Option<usize>) -> PipelineConfig {
    let defaults = TrendOptions::default();
    PipelineConfig {
        kernel: KernelSpec::new(f.kernel, f.bandwidth),
        trim_lower: f.trim_lo,
        trim_upper: f.trim_hi,
        trend: TrendOptions {
            grid_size: grid.unwrap_or(defaults.grid_size),
            extrapolation: f.extrapolation.into(),
        },
        control: match &f.interval {
            Some(set) => ControlGroup::Interval { set: set.clone() },
            None => ControlGroup::Crossing,
        },
        frozen_crossings: None,
        tol_factor: f.tol_factor,
    }
}

fn model(d: &DataArgs, f: &FitArgs, grid: Option<usize>) -> Res<Model> {
    let ds = load(d)?;
    Ok(Model::new(&ds, config(f, grid))?)
}

fn boot_opts(i: &InferenceArgs, b: usize) -> BootstrapOptions {
    BootstrapOptions {
        replications: b,
        level: i.level,
        seed: i.seed,
        freeze_crossing: i.freeze_crossing,
        ..Default::default()
    }
}

fn warn_unreliable(r: &contdid::BootstrapResult) {
    if r.unreliable {
        eprintln!(
            "contdid: warning: {} of {} bootstrap replicates failed {:?}",
            r.failures, r.replications, r.failure_reasons
        );
    }
}

/// Evenly spaced points between the trimming quantiles of the reference treatments.
fn x_grid(m: &Model, f: &FitArgs, n: usize) -> Res<Vec<f64>> {
    if n < 2 {
        return Err(CliError::usage("--grid needs at least 2 points"));
    }
    let cdf = ecdf(m.reference().treatments())?;
    let (lo, hi) = (cdf.quantile(f.trim_lo)?, cdf.quantile(f.trim_hi)?);
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn trend_of(m: &Model, t: usize) -> contdid::Result<TrendMap> {
    Ok(m.fit(t)?.trend)
}

/// A point estimate, with a percentile interval when `--bootstrap` is set.
fn estimate<F>(m: &Model, inf: &InferenceArgs, eval: F) -> contdid::Result<EffectEstimate>
where
    F: Fn(&Model) -> contdid::Result<EffectEstimate> + Sync,
{
    let mut e = eval(m)?;
    if let Some(b) = inf.bootstrap {
        let r = bootstrap_with(m, &boot_opts(inf, b), |rm| eval(rm).map(|v| v.value))?;
        warn_unreliable(&r);
        e.ci = Some(r.ci());
    }
    Ok(e)
}

#[derive(Serialize)]
struct CurveRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    x: f64,
    q_x: Option<f64>,
    value: Option<f64>,
    ci: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl CurveRow {
    fn from(x: f64, p: Option<f64>, r: contdid::Result<EffectEstimate>) -> Self {
        match r {
            Ok(e) => Self {
                p,
                x,
                q_x: e.counterfactual_x,
                value: Some(e.value),
                ci: e.ci,
                error: None,
            },
            Err(err) => Self {
                p,
                x,
                q_x: None,
                value: None,
                ci: None,
                error: Some(err.to_string()),
            },
        }
    }
}

fn curve_output(rows: &[CurveRow], format: Format, by_p: bool) -> Res<Output> {
    match format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut s = String::from(if by_p { "p,x,q_x,value,ci_lo,ci_hi\n" } else { "x,q_x,value,ci_lo,ci_hi\n" });
            for r in rows {
                if let Some(p) = r.p {
                    let _ = write!(s, "{},", csv_num(p));
                }
                let [lo, hi] = r.ci.unwrap_or([f64::NAN; 2]);
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    csv_num(r.x),
                    csv_num(r.q_x.unwrap_or(f64::NAN)),
                    csv_num(r.value.unwrap_or(f64::NAN)),
                    csv_num(lo),
                    csv_num(hi)
                );
            }
            Ok(Output::text(s))
        }
    }
}

fn single_output(e: EffectEstimate, format: Format) -> Res<Output> {
    match format {
        Format::Json => json(&e),
        Format::Csv => {
            let row = CurveRow {
                p: e.quantile_p,
                x: e.eval_x.unwrap_or(f64::NAN),
                q_x: e.counterfactual_x,
                value: Some(e.value),
                ci: e.ci,
                error: None,
            };
            let by_p = row.p.is_some();
            curve_output(&[row], format, by_p)
        }
    }
}

fn json_only(format: Format, what: &str) -> Res<()> {
    if format == Format::Csv {
        return Err(CliError::usage(format!("{what} output is JSON only")));
    }
    Ok(())
}

fn summarize(a: &SummarizeArgs) -> Res<Output> {
    let rows = load(&a.data)?.summarize()?;
    match a.out.format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut s = String::from("period,n,y_mean,y_sd,x_mean,x_sd,y_min,y_max,x_min,x_max\n");
            for r in &rows {
                let nums = [r.y_mean, r.y_sd, r.x_mean, r.x_sd, r.y_min, r.y_max, r.x_min, r.x_max];
                let cells: Vec<String> = nums.iter().map(|&v| csv_num(v)).collect();
                let _ = writeln!(s, "{},{},{}", r.period, r.n, cells.join(","));
            }
            Ok(Output::text(s))
        }
    }
}

fn crossing(a: &CrossingArgs) -> Res<Output> {
    json_only(a.out.format, "crossing")?;
    let m = model(&a.data, &a.fit, None)?;
    json(&m.crossing(a.fit.period)?)
}

fn trend(a: &TrendArgs) -> Res<Output> {
    if a.grid < 2 {
        return Err(CliError::usage("--grid needs at least 2 points"));
    }
    let m = model(&a.data, &a.fit, Some(a.grid))?;
    let tr = trend_of(&m, a.fit.period)?;
    match a.out.format {
        Format::Csv => {
            let mut buf = Vec::new();
            tr.write_csv(&mut buf).map_err(|e| CliError::new("io", e.to_string()))?;
            Ok(Output::text(String::from_utf8(buf).expect("csv is utf-8")))
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                metadata: contdid::trend::TrendMetadata<'a>,
                y_grid: &'a [f64],
                g_value: &'a [f64],
            }
            json(&Doc {
                metadata: tr.metadata(),
                y_grid: tr.grid(),
                g_value: tr.g_values(),
            })
        }
    }
}

fn att(a: &AttArgs) -> Res<Output> {
    let m = model(&a.data, &a.fit, None)?;
    let t = a.fit.period;
    let eval = |x: f64| move |rm: &Model| effects::att(rm, t, x, &trend_of(rm, t)?);
    if let Some(x) = a.x {
        return single_output(estimate(&m, &a.inference, eval(x))?, a.out.format);
    }
    let tr = trend_of(&m, t)?;
    let rows: Vec<CurveRow> = x_grid(&m, &a.fit, a.grid)?
        .into_iter()
        .map(|x| {
            let r = if a.inference.bootstrap.is_some() {
                estimate(&m, &a.inference, eval(x))
            } else {
                effects::att(&m, t, x, &tr)
            };
            CurveRow::from(x, None, r)
        })
        .collect();
    curve_output(&rows, a.out.format, false)
}

fn qtt(a: &QttArgs) -> Res<Output> {
    let m = model(&a.data, &a.fit, None)?;
    let (t, x) = (a.fit.period, a.x);
    let eval = |p: f64| move |rm: &Model| effects::qtt(rm, t, p, x, &trend_of(rm, t)?);
    if let Some(p) = a.p {
        return single_output(estimate(&m, &a.inference, eval(p))?, a.out.format);
    }
    if a.grid < 1 {
        return Err(CliError::usage("--grid needs at least 1 level"));
    }
    let rows: Vec<CurveRow> = (1..=a.grid)
        .map(|i| {
            let p = i as f64 / (a.grid + 1) as f64;
            CurveRow::from(x, Some(p), estimate(&m, &a.inference, eval(p)))
        })
        .collect();
    curve_output(&rows, a.out.format, true)
}

fn ame(a: &AmeArgs) -> Res<Output> {
    let m = model(&a.data, &a.fit, None)?;
    let (t, tol) = (a.fit.period, a.tol);
    if let Some(c) = a.c {
        let e = estimate(&m, &a.inference, |rm| effects::ame_avg(rm, t, c, &trend_of(rm, t)?))?;
        return single_output(e, a.out.format);
    }
    let eval = |x: f64| move |rm: &Model| effects::ame_app(rm, t, x, &trend_of(rm, t)?, tol);
    if let Some(x) = a.x {
        return single_output(estimate(&m, &a.inference, eval(x))?, a.out.format);
    }
    let rows: Vec<CurveRow> = x_grid(&m, &a.fit, a.grid)?
        .into_iter()
        .map(|x| CurveRow::from(x, None, estimate(&m, &a.inference, eval(x))))
        .collect();
    curve_output(&rows, a.out.format, false)
}

fn bounds(a: &BoundsArgs) -> Res<Output> {
    let m = model(&a.data, &a.fit, None)?;
    let trends: Vec<TrendMap> = m.fit_all()?.into_iter().map(|f| f.trend).collect();
    match (a.x, a.x_prime) {
        (Some(x), Some(xp)) => {
            json_only(a.out.format, "single-point bounds")?;
            json(&effects::att_bounds(&m, x, xp, &trends)?)
        }
        (Some(x), None) => {
            json_only(a.out.format, "single-point bounds")?;
            json(&effects::ame_bounds(&m, x, &trends, a.tol)?)
        }
        _ => {
            let xs = x_grid(&m, &a.fit, a.grid)?;
            let results: Vec<_> = xs.iter().map(|&x| effects::ame_bounds(&m, x, &trends, a.tol)).collect();
            match a.out.format {
                Format::Csv => {
                    let mut s = String::from("x,lower,upper\n");
                    for (x, r) in xs.iter().zip(&results) {
                        let (lo, hi) = r.as_ref().map(|b| (b.lower, b.upper)).unwrap_or((f64::NAN, f64::NAN));
                        let _ = writeln!(s, "{},{},{}", csv_num(*x), csv_num(lo), csv_num(hi));
                    }
                    Ok(Output::text(s))
                }
                Format::Json => {
                    let ok: Vec<_> = results.into_iter().filter_map(|r| r.ok()).collect();
                    json(&ok)
                }
            }
        }
    }
}

fn rc(a: &RcArgs) -> Res<Output> {
    let m = model(&a.data, &a.fit, None)?;
    let (t, tol) = (a.fit.period, a.tol);
    if a.linearity_test {
        json_only(a.out.format, "linearity test")?;
        let x = a.x.expect("clap enforces --x");
        let b = a.inference.bootstrap.unwrap_or(199);
        return json(&effects::rc_linearity_test(&m, x, b, a.inference.seed)?);
    }
    if let Some(c) = a.c {
        let e = estimate(&m, &a.inference, |rm| effects::rc_ame_overall(rm, t, c, &trend_of(rm, t)?))?;
        return single_output(e, a.out.format);
    }
    let eval = |x: f64| move |rm: &Model| effects::rc_ame(rm, t, x, &trend_of(rm, t)?, tol);
    if let Some(x) = a.x {
        return single_output(estimate(&m, &a.inference, eval(x))?, a.out.format);
    }
    let rows: Vec<CurveRow> = x_grid(&m, &a.fit, a.grid)?
        .into_iter()
        .map(|x| CurveRow::from(x, None, estimate(&m, &a.inference, eval(x))))
        .collect();
    curve_output(&rows, a.out.format, false)
}

fn parse_list(s: &str, n: usize, flag: &str) -> Res<Vec<f64>> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(CliError::usage(format!("{flag} expects {n} comma-separated numbers, got `{s}`"))),
    }
}

/// Treatments of comparison period `t` and of the reference period.
fn treatment_pair(d: &DataArgs, t: usize) -> Res<(Vec<f64>, Vec<f64>)> {
    let ds = load(d)?;
    if t == 0 || t >= ds.reference_period() {
        return Err(CliError::usage(format!(
            "--period {t} is not a comparison period (expected 1..{})",
            ds.reference_period() - 1
        )));
    }
    Ok((ds.period(t)?.treatments().to_vec(), ds.reference().treatments().to_vec()))
}

fn fit_q(a: &FitQArgs) -> Res<Output> {
    json_only(a.out.format, "fit-q")?;
    let k = parse_list(&a.knots, 4, "--knots")?;
    let (s1, s2) = treatment_pair(&a.data, a.period)?;
    json(&fit_piecewise_q(&s1, &s2, [k[0], k[1], k[2], k[3]], a.step)?)
}

fn dominance(a: &DominanceArgs) -> Res<Output> {
    json_only(a.out.format, "dominance")?;
    let iv = parse_list(&a.interval, 2, "--interval")?;
    let (s1, s2) = treatment_pair(&a.data, a.period)?;
    json(&dominance_test(&s1, &s2, (iv[0], iv[1]), a.bootstrap, a.seed)?)
}

fn read_spec(path: &Path) -> Res<DgpSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("cannot read {}: {e}", path.display())))?;
    let spec = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => DgpSpec::from_json(&text)?,
        Some("toml") => DgpSpec::from_toml(&text)?,
        _ => return Err(CliError::usage(format!("{}: design files must end in .json or .toml", path.display()))),
    };
    Ok(spec)
}

fn simulate(a: &SimulateArgs) -> Res<Output> {
    let ds = contdid::sim::simulate(&read_spec(&a.dgp)?, a.n, a.seed)?;
    let mut buf = Vec::new();
    contdid::data::write_csv(&ds, &mut buf, &CsvSchema::default()).map_err(|e| CliError::new("io", e.to_string()))?;
    Ok(Output::text(String::from_utf8(buf).expect("csv is utf-8")))
}

fn bootstrap_cmd(a: &BootstrapArgs) -> Res<Output> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| CliError::usage(format!("--estimand {:?} needs {flag}", a.estimand).to_lowercase()))
    };
    let period = a.fit.period;
    let est = match a.estimand {
        EstimandArg::Crossing => Estimand::Crossing { period },
        EstimandArg::Trend => Estimand::Trend { period, y: need(a.y, "--y")? },
        EstimandArg::Att => Estimand::Att { period, x: need(a.x, "--x")? },
        EstimandArg::Qtt => Estimand::Qtt { period, p: need(a.p, "--p")?, x: need(a.x, "--x")? },
        EstimandArg::Ame => Estimand::AmeApp { period, x: need(a.x, "--x")? },
        EstimandArg::AmeAvg => Estimand::AmeAvg { period, c: need(a.c, "--c")? },
        EstimandArg::Rc => Estimand::RcAme { period, x: need(a.x, "--x")? },
        EstimandArg::AmeLower => Estimand::AmeBoundLower { x: need(a.x, "--x")? },
        EstimandArg::AmeUpper => Estimand::AmeBoundUpper { x: need(a.x, "--x")? },
        EstimandArg::AttLower => Estimand::AttBoundLower { x: need(a.x, "--x")?, x_prime: need(a.x_prime, "--x-prime")? },
        EstimandArg::AttUpper => Estimand::AttBoundUpper { x: need(a.x, "--x")?, x_prime: need(a.x_prime, "--x-prime")? },
    };
    let m = model(&a.data, &a.fit, None)?;
    let opts = BootstrapOptions {
        replications: a.replications,
        level: a.level,
        seed: a.seed,
        freeze_crossing: a.freeze_crossing,
        ..Default::default()
    };
    let r = bootstrap(&est, &m, &opts)?;
    warn_unreliable(&r);
    let mut v = serde_json::to_value(&r).map_err(|e| CliError::new("io", e.to_string()))?;
    if !a.keep_replicates {
        if let Some(o) = v.as_object_mut() {
            o.remove("replicates");
        }
    }
    json(&v)
}
