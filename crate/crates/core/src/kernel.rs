//! Kernels, the bandwidth rule and Nadaraya-Watson conditional estimators.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{mean_sd, CrossSection};
use crate::error::{invalid, Error, Result};
use crate::transport::DiscreteDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Biweight,
    Epanechnikov,
    Triangular,
}

impl KernelFamily {
    /// Kernel density at `u`; zero outside `(-1, 1)`.
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            Self::Biweight => {
                let s = 1.0 - u * u;
                15.0 / 16.0 * s * s
            }
            Self::Epanechnikov => 0.75 * (1.0 - u * u),
            Self::Triangular => 1.0 - a,
        }
    }
}

impl FromStr for KernelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "biweight" => Ok(Self::Biweight),
            "epanechnikov" => Ok(Self::Epanechnikov),
            "triangular" => Ok(Self::Triangular),
            other => Err(format!(
                "unknown kernel `{other}` (expected biweight|epanechnikov|triangular)"
            )),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Biweight => "biweight",
            Self::Epanechnikov => "epanechnikov",
            Self::Triangular => "triangular",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// Rule of thumb `1.06 * sd * n^(-1/4)`, computed per period.
    #[default]
    Auto,
    Fixed(f64),
}

impl FromStr for Bandwidth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(h) if h.is_finite() && h > 0.0 => Ok(Self::Fixed(h)),
            _ => Err(format!("bandwidth must be `auto` or a positive number, got `{s}`")),
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) if h.is_finite() && h > 0.0 => Ok(Self::Fixed(h)),
            Raw::Num(h) => Err(serde::de::Error::custom(format!("invalid bandwidth {h}"))),
            Raw::Tag(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: Bandwidth) -> Self {
        Self { family, bandwidth }
    }

    /// Concrete bandwidth for a sample with the given treatments.
    pub fn resolve(&self, treatments: &[f64]) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Auto => default_bandwidth(treatments),
            Bandwidth::Fixed(h) if h.is_finite() && h > 0.0 => Ok(h),
            Bandwidth::Fixed(h) => invalid(format!("bandwidth must be positive, got {h}")),
        }
    }
}

/// `1.06 * sd * n^(-1/4)` with the `n - 1` standard deviation.
pub fn default_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return invalid("bandwidth rule needs at least 2 observations");
    }
    let (_, sd) = mean_sd(values);
    if !(sd > 0.0) {
        return invalid("bandwidth rule undefined for a constant treatment vector");
    }
    Ok(1.06 * sd * (values.len() as f64).powf(-0.25))
}

/// One period's observations ordered by treatment (ties by outcome).
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SortedSample {
    pub fn new(outcomes: &[f64], treatments: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..treatments.len()).collect();
        idx.sort_by(|&a, &b| {
            treatments[a]
                .total_cmp(&treatments[b])
                .then(outcomes[a].total_cmp(&outcomes[b]))
        });
        Self {
            x: idx.iter().map(|&i| treatments[i]).collect(),
            y: idx.iter().map(|&i| outcomes[i]).collect(),
        }
    }

    pub fn from_section(s: &CrossSection) -> Self {
        Self::new(s.outcomes(), s.treatments())
    }

    pub fn treatments(&self) -> &[f64] {
        &self.x
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Resample with replacement given how often each index was drawn; the result stays sorted.
    pub(crate) fn resampled(&self, counts: &[u32]) -> Self {
        let n: usize = counts.iter().map(|&c| c as usize).sum();
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                x.push(self.x[i]);
                y.push(self.y[i]);
            }
        }
        Self { x, y }
    }

    /// Index range of observations with `|x_i - x0| <= h`.
    pub fn window(&self, x0: f64, h: f64) -> Range<usize> {
        let lo = self.x.partition_point(|&v| v < x0 - h);
        let hi = self.x.partition_point(|&v| v <= x0 + h);
        lo..hi.max(lo)
    }

    /// Kernel weights over the window at `x0`; errors when all are zero.
    pub fn weights(&self, x0: f64, h: f64, family: KernelFamily) -> Result<(Range<usize>, Vec<f64>)> {
        let r = self.window(x0, h);
        let w: Vec<f64> = self.x[r.clone()]
            .iter()
            .map(|&xi| family.weight((x0 - xi) / h))
            .collect();
        if !w.iter().any(|&v| v > 0.0) {
            return Err(Error::EmptyWindow { x: x0, bandwidth: h });
        }
        Ok((r, w))
    }

    /// Weighted distribution of `values[i]` (aligned with this ordering) at `x0`.
    pub fn conditional_dist_of(
        &self,
        values: &[f64],
        x0: f64,
        h: f64,
        family: KernelFamily,
    ) -> Result<DiscreteDist> {
        let (r, w) = self.weights(x0, h, family)?;
        let pairs = values[r].iter().copied().zip(w).collect();
        DiscreteDist::from_weighted(pairs)
    }

    pub fn conditional_dist(&self, x0: f64, h: f64, family: KernelFamily) -> Result<DiscreteDist> {
        self.conditional_dist_of(&self.y, x0, h, family)
    }

    /// Nadaraya-Watson mean of `f(y_i)` at `x0`.
    pub fn nw_mean_with(
        &self,
        x0: f64,
        h: f64,
        family: KernelFamily,
        f: impl Fn(f64) -> f64,
    ) -> Result<f64> {
        let (r, w) = self.weights(x0, h, family)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (yi, wi) in self.y[r].iter().zip(&w) {
            if *wi > 0.0 {
                num += wi * f(*yi);
                den += wi;
            }
        }
        Ok(num / den)
    }

    /// Nadaraya-Watson mean of `values` (aligned with this ordering) at `x0`.
    pub fn nw_mean_of(&self, values: &[f64], x0: f64, h: f64, family: KernelFamily) -> Result<f64> {
        let (r, w) = self.weights(x0, h, family)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (vi, wi) in values[r].iter().zip(&w) {
            if *wi > 0.0 {
                num += wi * vi;
                den += wi;
            }
        }
        Ok(num / den)
    }

    pub fn nw_mean(&self, x0: f64, h: f64, family: KernelFamily) -> Result<f64> {
        self.nw_mean_with(x0, h, family, |y| y)
    }
}

/// Kernel estimate of `P(Y <= y | X = x)`.
pub fn cond_cdf(y: f64, x: f64, sample: &CrossSection, spec: &KernelSpec) -> Result<f64> {
    let h = spec.resolve(sample.treatments())?;
    let s = SortedSample::from_section(sample);
    Ok(s.conditional_dist(x, h, spec.family)?.cdf(y))
}

/// Generalized inverse of [`cond_cdf`] in `y`.
pub fn cond_quantile(p: f64, x: f64, sample: &CrossSection, spec: &KernelSpec) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("probability must lie in (0, 1], got {p}"));
    }
    let h = spec.resolve(sample.treatments())?;
    let s = SortedSample::from_section(sample);
    Ok(s.conditional_dist(x, h, spec.family)?.quantile(p))
}

/// Nadaraya-Watson mean of `values` (paired with `treatments`) at `x`.
pub fn cond_mean(x: f64, values: &[f64], treatments: &[f64], spec: &KernelSpec) -> Result<f64> {
    if values.len() != treatments.len() {
        return invalid("values and treatments differ in length");
    }
    if values.is_empty() {
        return invalid("empty sample");
    }
    let h = spec.resolve(treatments)?;
    SortedSample::new(values, treatments).nw_mean(x, h, spec.family)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section(y: &[f64], x: &[f64]) -> CrossSection {
        CrossSection::new(1, y.to_vec(), x.to_vec()).unwrap()
    }

    fn spec(h: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::Biweight, Bandwidth::Fixed(h))
    }

    #[test]
    fn kernels_integrate_to_one() {
        for k in [KernelFamily::Biweight, KernelFamily::Epanechnikov, KernelFamily::Triangular] {
            let m = 200_000;
            let du = 2.0 / m as f64;
            let (mut mass, mut first) = (0.0, 0.0);
            for i in 0..m {
                let u = -1.0 + (i as f64 + 0.5) * du;
                mass += k.weight(u) * du;
                first += u * k.weight(u) * du;
            }
            assert!((mass - 1.0).abs() < 1e-8, "{k}");
            assert!(first.abs() < 1e-12);
            assert_eq!(k.weight(1.0), 0.0);
            assert_eq!(k.weight(-1.5), 0.0);
        }
    }

    #[test]
    fn bandwidth_rule() {
        // sd exactly 1 with n = 10000: alternate +-1 adjusted to the n-1 denominator
        let n = 10_000usize;
        let a = ((n - 1) as f64 / n as f64).sqrt();
        let v: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        assert!((default_bandwidth(&v).unwrap() - 0.106).abs() < 1e-12);
        let n = 625usize;
        let mut w: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let (m, sd) = mean_sd(&w);
        for x in &mut w {
            *x = (*x - m) / sd * 2.0;
        }
        assert!((default_bandwidth(&w).unwrap() - 0.424).abs() < 1e-12);
        assert!(default_bandwidth(&[3.0; 5]).is_err());
        assert!(default_bandwidth(&[1.0]).is_err());
    }

    #[test]
    fn parse_flags() {
        assert_eq!("triangular".parse::<KernelFamily>().unwrap(), KernelFamily::Triangular);
        assert!("gauss".parse::<KernelFamily>().is_err());
        assert_eq!("auto".parse::<Bandwidth>().unwrap(), Bandwidth::Auto);
        assert_eq!("0.5".parse::<Bandwidth>().unwrap(), Bandwidth::Fixed(0.5));
        assert!("-1".parse::<Bandwidth>().is_err());
        let s: KernelSpec = serde_json::from_str(r#"{"family":"epanechnikov","bandwidth":"auto"}"#).unwrap();
        assert_eq!(s.family, KernelFamily::Epanechnikov);
    }

    #[test]
    fn constant_window() {
        let s = section(&[4.0, 4.0, 4.0, 9.0], &[0.0, 0.2, -0.3, 5.0]);
        assert_eq!(cond_cdf(4.0, 0.0, &s, &spec(1.0)).unwrap(), 1.0);
        assert_eq!(cond_cdf(3.9, 0.0, &s, &spec(1.0)).unwrap(), 0.0);
        let m = cond_mean(0.0, s.outcomes(), s.treatments(), &spec(1.0)).unwrap();
        assert!((m - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_observation_window() {
        let s = section(&[2.0, 7.0], &[0.0, 10.0]);
        assert_eq!(cond_cdf(1.9, 0.1, &s, &spec(1.0)).unwrap(), 0.0);
        assert_eq!(cond_cdf(2.0, 0.1, &s, &spec(1.0)).unwrap(), 1.0);
        assert!(matches!(
            cond_cdf(2.0, 5.0, &s, &spec(1.0)),
            Err(Error::EmptyWindow { .. })
        ));
    }

    fn hand() -> (CrossSection, [f64; 5]) {
        let x = [0.0, 0.5, 1.0, 1.5, 3.0];
        let y = [3.0, 1.0, 4.0, 2.0, 10.0];
        let k = |u: f64| if u.abs() < 1.0 { 15.0 / 16.0 * (1.0 - u * u).powi(2) } else { 0.0 };
        let w = x.map(|xi| k(0.8 - xi));
        (section(&y, &x), w)
    }

    #[test]
    fn hand_dataset() {
        let (s, w) = hand();
        let y = s.outcomes();
        let den: f64 = w.iter().sum();
        let cdf_num: f64 = (0..5).filter(|&i| y[i] <= 3.0).map(|i| w[i]).sum();
        let got = cond_cdf(3.0, 0.8, &s, &spec(1.0)).unwrap();
        assert!((got - cdf_num / den).abs() < 1e-14);

        let mean: f64 = (0..5).map(|i| w[i] * y[i]).sum::<f64>() / den;
        let got = cond_mean(0.8, y, s.treatments(), &spec(1.0)).unwrap();
        assert!((got - mean).abs() < 1e-14);

        // walk the weighted steps explicitly
        let mut order: Vec<usize> = (0..5).filter(|&i| w[i] > 0.0).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let mut acc = 0.0;
        let mut want = f64::NAN;
        for i in order {
            acc += w[i] / den;
            if acc >= 0.6 {
                want = y[i];
                break;
            }
        }
        assert_eq!(cond_quantile(0.6, 0.8, &s, &spec(1.0)).unwrap(), want);
    }

    #[test]
    fn quantile_cases() {
        let s = section(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        assert_eq!(cond_quantile(0.5, 0.0, &s, &spec(1.0)).unwrap(), 2.0);
        assert_eq!(cond_quantile(1.0, 0.0, &s, &spec(1.0)).unwrap(), 3.0);
        assert!(cond_quantile(0.0, 0.0, &s, &spec(1.0)).is_err());
    }

    #[test]
    fn symmetric_design_linear_values() {
        let x: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = x.iter().map(|xi| 3.0 * xi + 1.0).collect();
        let m = cond_mean(0.0, &v, &x, &spec(0.55)).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn cdf_is_valid_and_mean_bounded(
            pts in proptest::collection::vec((-5.0f64..5.0, -3.0f64..3.0), 2..40),
            x0 in -2.0f64..2.0,
        ) {
            let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let s = section(&y, &x);
            let sp = spec(1.5);
            let Ok(d) = SortedSample::from_section(&s).conditional_dist(x0, 1.5, sp.family) else {
                return Ok(());
            };
            let mut prev = 0.0;
            for i in 0..=60 {
                let g = -6.0 + i as f64 * 0.2;
                let c = cond_cdf(g, x0, &s, &sp).unwrap();
                proptest::prop_assert!((0.0..=1.0).contains(&c) && c >= prev);
                prev = c;
            }
            proptest::prop_assert_eq!(cond_cdf(d.max(), x0, &s, &sp).unwrap(), 1.0);
            let m = cond_mean(x0, &y, &x, &sp).unwrap();
            proptest::prop_assert!(m >= d.min() - 1e-12 && m <= d.max() + 1e-12);
        }

        #[test]
        fn quantile_equivariance(
            pts in proptest::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 2..30),
            p in 0.01f64..1.0,
        ) {
            let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let ey: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            let sp = spec(2.5);
            let a = cond_quantile(p, 0.0, &section(&y, &x), &sp).unwrap();
            let b = cond_quantile(p, 0.0, &section(&ey, &x), &sp).unwrap();
            proptest::prop_assert_eq!(a.exp(), b);
        }
    }
}
