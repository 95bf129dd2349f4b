//! Repeated cross-section data: one `(outcome, treatment)` sample per period.
//!
//! Periods are relabeled to `1..=T` in the order of their original labels;
//! the last period is the reference period.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One period's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    period: usize,
    outcomes: Vec<f64>,
    treatments: Vec<f64>,
}

impl CrossSection {
    pub fn new(period: usize, outcomes: Vec<f64>, treatments: Vec<f64>) -> Result<Self> {
        if outcomes.len() != treatments.len() {
            return invalid(format!(
                "period {period}: {} outcomes but {} treatments",
                outcomes.len(),
                treatments.len()
            ));
        }
        if outcomes.is_empty() {
            return invalid(format!("period {period} has no observations"));
        }
        if let Some(i) = outcomes
            .iter()
            .zip(&treatments)
            .position(|(y, x)| !y.is_finite() || !x.is_finite())
        {
            return invalid(format!("period {period}: non-finite value at observation {i}"));
        }
        Ok(Self {
            period,
            outcomes,
            treatments,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[f64] {
        &self.treatments
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Number of treatment values that repeat an earlier value.
    pub fn treatment_ties(&self) -> usize {
        let mut xs = self.treatments.clone();
        xs.sort_by(f64::total_cmp);
        xs.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub(crate) fn with_period(mut self, period: usize) -> Self {
        self.period = period;
        self
    }
}

/// An ordered collection of cross-sections; the last one is the reference period `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    periods: Vec<CrossSection>,
    labels: Vec<i64>,
}

impl Dataset {
    /// Builds a dataset from `(original label, section)` pairs. Sections are
    /// sorted by label and relabeled `1..=T`.
    pub fn new(mut sections: Vec<(i64, CrossSection)>) -> Result<Self> {
        sections.sort_by_key(|(label, _)| *label);
        if sections.windows(2).any(|w| w[0].0 == w[1].0) {
            return invalid("duplicate period labels");
        }
        if sections.len() < 2 {
            return invalid(format!(
                "need at least 2 periods, found {}",
                sections.len()
            ));
        }
        let labels = sections.iter().map(|(l, _)| *l).collect();
        let periods = sections
            .into_iter()
            .enumerate()
            .map(|(i, (_, s))| s.with_period(i + 1))
            .collect();
        Ok(Self { periods, labels })
    }

    /// Convenience constructor labelling the given `(outcomes, treatments)` pairs `1..=T`.
    pub fn from_vectors(periods: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let sections = periods
            .into_iter()
            .enumerate()
            .map(|(i, (y, x))| CrossSection::new(i + 1, y, x).map(|s| (i as i64 + 1, s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sections)
    }

    /// Number of periods `T`.
    pub fn num_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[CrossSection] {
        &self.periods
    }

    /// Period `t` in `1..=T`.
    pub fn period(&self, t: usize) -> Result<&CrossSection> {
        if t == 0 || t > self.periods.len() {
            return invalid(format!(
                "period {t} not in 1..={}",
                self.periods.len()
            ));
        }
        Ok(&self.periods[t - 1])
    }

    pub fn reference(&self) -> &CrossSection {
        self.periods.last().expect("dataset has at least two periods")
    }

    pub fn reference_period(&self) -> usize {
        self.periods.len()
    }

    /// Original labels, in period order.
    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Keeps the listed periods (internal labels) and the reference period.
    pub fn subset(&self, keep: &[usize]) -> Result<Dataset> {
        let mut out = Vec::new();
        for &t in keep {
            if t == self.reference_period() {
                continue;
            }
            out.push((self.labels[t - 1], self.period(t)?.clone()));
        }
        out.push((*self.labels.last().unwrap(), self.reference().clone()));
        Dataset::new(out)
    }

    /// Periods whose treatment vector contains ties, with the tie count.
    pub fn treatment_ties(&self) -> Vec<(usize, usize)> {
        self.periods
            .iter()
            .map(|s| (s.period, s.treatment_ties()))
            .filter(|(_, n)| *n > 0)
            .collect()
    }

    pub fn summarize(&self) -> Result<Vec<PeriodSummary>> {
        summarize(&self.periods)
    }
}

/// Column names used when reading and writing CSV files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub period: String,
    pub y: String,
    pub x: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            period: "period".into(),
            y: "y".into(),
            x: "x".into(),
        }
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Row {
        path: path.to_path_buf(),
        row: 1,
        reason: format!("missing column `{name}`"),
    })
}

fn cell<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<T> {
    let raw = record.get(idx).unwrap_or("");
    let row_err = |reason: String| Error::Row {
        path: path.to_path_buf(),
        row: line,
        reason,
    };
    if raw.is_empty() {
        return Err(row_err(format!("missing value in column `{name}`")));
    }
    raw.parse::<T>()
        .map_err(|_| row_err(format!("non-numeric value `{raw}` in column `{name}`")))
}

fn finite(v: f64, name: &str, path: &Path, line: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Row {
            path: path.to_path_buf(),
            row: line,
            reason: format!("non-finite value in column `{name}`"),
        })
    }
}

/// Reads `(y, x)` rows, optionally with a period column. Row numbers in
/// errors are file line numbers (the header is line 1).
fn read_rows(
    path: &Path,
    schema: &CsvSchema,
    with_period: bool,
) -> Result<Vec<(Option<i64>, f64, f64)>> {
    let mut reader = open(path)?;
    let headers = reader.headers()?.clone();
    let pi = if with_period {
        Some(column(&headers, &schema.period, path)?)
    } else {
        None
    };
    let yi = column(&headers, &schema.y, path)?;
    let xi = column(&headers, &schema.x, path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let period = match pi {
            Some(pi) => Some(cell::<i64>(&record, pi, &schema.period, path, line)?),
            None => None,
        };
        let y = finite(cell(&record, yi, &schema.y, path, line)?, &schema.y, path, line)?;
        let x = finite(cell(&record, xi, &schema.x, path, line)?, &schema.x, path, line)?;
        rows.push((period, y, x));
    }
    Ok(rows)
}

/// Loads a single long-format CSV with a period column.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let rows = read_rows(path, schema, true)?;
    let mut groups: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (p, y, x) in rows {
        let g = groups.entry(p.expect("period column read")).or_default();
        g.0.push(y);
        g.1.push(x);
    }
    if groups.len() < 2 {
        return invalid(format!(
            "{}: need at least 2 distinct periods, found {}",
            path.display(),
            groups.len()
        ));
    }
    let sections = groups
        .into_iter()
        .map(|(label, (y, x))| CrossSection::new(0, y, x).map(|s| (label, s)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sections)
}

/// Loads one file per period; files are assigned labels `1..=k` in the given order.
/// A period column, if present, is ignored.
pub fn load_csv_periods<P: AsRef<Path>>(paths: &[P], schema: &CsvSchema) -> Result<Dataset> {
    let mut sections = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let path = path.as_ref();
        let rows = read_rows(path, schema, false)?;
        if rows.is_empty() {
            return invalid(format!("{}: empty period", path.display()));
        }
        let (y, x) = rows.into_iter().map(|(_, y, x)| (y, x)).unzip();
        sections.push((i as i64 + 1, CrossSection::new(0, y, x)?));
    }
    Dataset::new(sections)
}

/// Writes the dataset in long format using the original period labels.
/// Values are written in shortest round-trip form.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    write_csv(dataset, &mut out, schema).map_err(io)?;
    out.flush().map_err(io)
}

pub fn write_csv<W: Write>(dataset: &Dataset, out: &mut W, schema: &CsvSchema) -> std::io::Result<()> {
    writeln!(out, "{},{},{}", schema.period, schema.y, schema.x)?;
    for (label, s) in dataset.labels.iter().zip(&dataset.periods) {
        for (y, x) in s.outcomes.iter().zip(&s.treatments) {
            writeln!(out, "{label},{y:?},{x:?}")?;
        }
    }
    Ok(())
}

/// Per-period descriptive statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub period: usize,
    pub n: usize,
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_mean: f64,
    pub x_sd: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub fn summarize(periods: &[CrossSection]) -> Result<Vec<PeriodSummary>> {
    if periods.is_empty() {
        return invalid("cannot summarize an empty dataset");
    }
    Ok(periods
        .iter()
        .map(|s| {
            let (y_mean, y_sd) = mean_sd(&s.outcomes);
            let (x_mean, x_sd) = mean_sd(&s.treatments);
            let (y_min, y_max) = min_max(&s.outcomes);
            let (x_min, x_max) = min_max(&s.treatments);
            PeriodSummary {
                period: s.period,
                n: s.len(),
                y_mean,
                y_sd,
                x_mean,
                x_sd,
                y_min,
                y_max,
                x_min,
                x_max,
            }
        })
        .collect())
}
