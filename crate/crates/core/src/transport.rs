//! Weighted discrete distributions and the quantile-quantile transport between two of them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Probability mass bounds of the "core" of a distribution, used to summarize
/// the transport when extrapolating beyond the observed support.
const CORE_LO: f64 = 0.1;
const CORE_HI: f64 = 0.9;

/// A finite distribution on distinct ascending support points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    values: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

impl DiscreteDist {
    /// Builds a distribution from `(value, weight)` pairs. Zero weights are dropped,
    /// tied values merged.
    pub fn from_weighted(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.retain(|&(_, w)| w > 0.0);
        if pairs.is_empty() {
            return invalid("distribution has no positive mass");
        }
        if pairs.iter().any(|(v, w)| !v.is_finite() || !w.is_finite()) {
            return invalid("non-finite value or weight");
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values = Vec::with_capacity(pairs.len());
        let mut mass: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, w) in pairs {
            match values.last() {
                Some(&last) if last == v => *mass.last_mut().unwrap() += w,
                _ => {
                    values.push(v);
                    mass.push(w);
                }
            }
        }
        Ok(Self::from_masses(values, &mass))
    }

    /// Equal-weight distribution from values sorted ascending.
    pub fn from_sorted_unit(sorted: &[f64]) -> Result<Self> {
        if sorted.is_empty() {
            return invalid("distribution has no observations");
        }
        let mut values = Vec::with_capacity(sorted.len());
        let mut mass: Vec<f64> = Vec::with_capacity(sorted.len());
        for &v in sorted {
            match values.last() {
                Some(&last) if last == v => *mass.last_mut().unwrap() += 1.0,
                _ => {
                    values.push(v);
                    mass.push(1.0);
                }
            }
        }
        Ok(Self::from_masses(values, &mass))
    }

    fn from_masses(values: Vec<f64>, mass: &[f64]) -> Self {
        let mut running = 0.0;
        let raw: Vec<f64> = mass
            .iter()
            .map(|m| {
                running += m;
                running
            })
            .collect();
        let total = running;
        let cum = raw.iter().map(|c| c / total).collect();
        Self { values, cum, total }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cumulative probabilities at each support point; the last entry is exactly 1.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= y);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// Index of `inf{y : F(y) >= p}`; `p <= 0` maps to the minimum.
    pub fn quantile_index(&self, p: f64) -> usize {
        self.cum.partition_point(|&c| c < p).min(self.values.len() - 1)
    }

    /// Generalized inverse `inf{y : F(y) >= p}`.
    pub fn quantile(&self, p: f64) -> f64 {
        self.values[self.quantile_index(p)]
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (v, c) in self.values.iter().zip(&self.cum) {
            acc += v * (c - prev);
            prev = *c;
        }
        acc
    }
}

/// How the transport is continued outside the support of its source distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    /// Constant displacement equal to the mass-weighted mean displacement over the
    /// central 80% of the source distribution.
    #[default]
    Shift,
    /// Affine continuation with the slope of the transport between the 10% and 90%
    /// source quantiles, anchored at those quantiles.
    Affine,
}

impl std::str::FromStr for Extrapolation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "shift" => Ok(Self::Shift),
            "affine" => Ok(Self::Affine),
            other => Err(format!("unknown extrapolation `{other}` (expected shift|affine)")),
        }
    }
}

/// Where an evaluation point fell relative to the source support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Below,
    Inside,
    Above,
}

/// Monotone map `F_to^{-1} ∘ F_from`, exact at the support points of `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    from: DiscreteDist,
    to: DiscreteDist,
    mapped: Vec<f64>,
    extrapolation: Extrapolation,
    core_shift: f64,
    core_lo: usize,
    core_hi: usize,
    core_slope: f64,
}

impl Transport {
    pub fn new(from: DiscreteDist, to: DiscreteDist, extrapolation: Extrapolation) -> Self {
        let mapped: Vec<f64> = from.cum.iter().map(|&p| to.quantile(p)).collect();

        let core_lo = from.quantile_index(CORE_LO);
        let core_hi = from.quantile_index(CORE_HI);
        let mut mass = 0.0;
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (k, &c) in from.cum.iter().enumerate() {
            let m = c - prev;
            prev = c;
            if k >= core_lo && k <= core_hi {
                mass += m;
                acc += m * (mapped[k] - from.values[k]);
            }
        }
        let core_shift = acc / mass;
        let dv = from.values[core_hi] - from.values[core_lo];
        let core_slope = if dv > 0.0 {
            ((mapped[core_hi] - mapped[core_lo]) / dv).max(0.0)
        } else {
            1.0
        };
        Self {
            from,
            to,
            mapped,
            extrapolation,
            core_shift,
            core_lo,
            core_hi,
            core_slope,
        }
    }

    pub fn from_dist(&self) -> &DiscreteDist {
        &self.from
    }

    pub fn to_dist(&self) -> &DiscreteDist {
        &self.to
    }

    pub fn extrapolation(&self) -> Extrapolation {
        self.extrapolation
    }

    /// Mean displacement over the central mass of the source distribution.
    pub fn core_shift(&self) -> f64 {
        self.core_shift
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.apply(y).0
    }

    pub fn apply(&self, y: f64) -> (f64, Position) {
        let values = &self.from.values;
        let last = values.len() - 1;
        if y < values[0] {
            let v = self.extrapolate(y, 0).min(self.mapped[0]);
            return (v, Position::Below);
        }
        if y > values[last] {
            let v = self.extrapolate(y, last).max(self.mapped[last]);
            return (v, Position::Above);
        }
        let k = values.partition_point(|&v| v <= y) - 1;
        if values[k] == y {
            return (self.mapped[k], Position::Inside);
        }
        // Between two support points the map stays between their images and is
        // the identity where that is possible. Only order comparisons are used, so
        // the map commutes with any strictly increasing change of outcome scale.
        (y.clamp(self.mapped[k], self.mapped[k + 1]), Position::Inside)
    }

    fn extrapolate(&self, y: f64, edge: usize) -> f64 {
        match self.extrapolation {
            Extrapolation::Shift => y + self.core_shift,
            Extrapolation::Affine => {
                let anchor = if edge == 0 { self.core_lo } else { self.core_hi };
                let a = self.from.values[anchor];
                if self.core_slope == 1.0 {
                    y + (self.mapped[anchor] - a)
                } else {
                    // this form rounds monotonically in y
                    self.mapped[anchor] + self.core_slope * (y - a)
                }
            }
        }
    }

    /// The transport in the opposite direction.
    pub fn reversed(&self) -> Transport {
        Transport::new(self.to.clone(), self.from.clone(), self.extrapolation)
    }
}

/// Pool-adjacent-violators projection onto nondecreasing sequences (unit weights).
pub fn isotonic_increasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (s1, c1) = blocks[n - 2];
            let (s2, c2) = blocks[n - 1];
            if s1 / c1 as f64 <= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            blocks[n - 2] = (s1 + s2, c1 + c2);
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, c) in blocks {
        out.extend(std::iter::repeat_n(s / c as f64, c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> DiscreteDist {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        DiscreteDist::from_sorted_unit(&s).unwrap()
    }

    #[test]
    fn cdf_and_quantile() {
        let d = unit(&[3.0, 1.0, 2.0]);
        assert_eq!(d.cdf(2.0), 2.0 / 3.0);
        assert_eq!(d.cdf(0.5), 0.0);
        assert_eq!(d.cdf(3.0), 1.0);
        assert_eq!(d.quantile(0.5), 2.0);
        assert_eq!(d.quantile(1.0), 3.0);
        assert_eq!(d.quantile(1.0 / 3.0), 1.0);
        assert_eq!(d.mean(), 2.0);
    }

    #[test]
    fn ties_merge() {
        let d = DiscreteDist::from_weighted(vec![(1.0, 1.0), (1.0, 1.0), (2.0, 1.0), (5.0, 0.0)]).unwrap();
        assert_eq!(d.values(), &[1.0, 2.0]);
        assert_eq!(d.cdf(1.0), 2.0 / 3.0);
        assert!(DiscreteDist::from_weighted(vec![(1.0, 0.0)]).is_err());
    }

    #[test]
    fn identical_transport_is_identity_everywhere() {
        let d = unit(&[0.3, 1.7, 2.2, 5.0, 9.1]);
        for ext in [Extrapolation::Shift, Extrapolation::Affine] {
            let t = Transport::new(d.clone(), d.clone(), ext);
            for y in [-4.0, 0.3, 0.31, 1.0, 2.2, 4.4, 9.1, 12.0] {
                assert_eq!(t.eval(y), y, "{ext:?} at {y}");
            }
        }
    }

    #[test]
    fn location_shift_recovered() {
        let a = unit(&[0.0, 1.0, 2.5, 4.0]);
        let b = unit(&[3.0, 4.0, 5.5, 7.0]);
        let t = Transport::new(a, b, Extrapolation::Shift);
        assert_eq!(t.eval(1.0), 4.0);
        // between support points the map stays between the two images
        let v = t.eval(1.5);
        assert!((4.0..=5.5).contains(&v));
        assert!((t.eval(-2.0) - 1.0).abs() < 1e-12);
        assert!((t.eval(10.0) - 13.0).abs() < 1e-12);
        let back = t.reversed();
        for y in [0.0, 1.0, 2.5, 4.0] {
            assert_eq!(back.eval(t.eval(y)), y);
        }
    }

    #[test]
    fn affine_extrapolation_uses_core_slope() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        let t = Transport::new(unit(&a), unit(&b), Extrapolation::Affine);
        assert!((t.eval(150.0) - 301.0).abs() < 1e-9);
        assert!((t.eval(-10.0) + 19.0).abs() < 1e-9);
    }

    #[test]
    fn pava() {
        assert_eq!(isotonic_increasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_increasing(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        let v = [0.0, 1.0, 2.0];
        assert_eq!(isotonic_increasing(&v), v.to_vec());
    }

    proptest::proptest! {
        #[test]
        fn exp_commutes_inside_support(
            a in proptest::collection::vec(-300i32..300, 1..40),
            b in proptest::collection::vec(-300i32..300, 1..40),
            probes in proptest::collection::vec(-300i32..300, 1..30),
        ) {
            let f = |v: &[i32]| v.iter().map(|&i| i as f64 / 100.0).collect::<Vec<f64>>();
            let e = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<f64>>();
            let (a, b) = (f(&a), f(&b));
            let t = Transport::new(unit(&a), unit(&b), Extrapolation::Shift);
            let te = Transport::new(unit(&e(&a)), unit(&e(&b)), Extrapolation::Shift);
            for y in f(&probes) {
                let (v, pos) = t.apply(y);
                if pos == Position::Inside {
                    proptest::prop_assert_eq!(te.apply(y.exp()), (v.exp(), Position::Inside));
                }
            }
        }

        #[test]
        fn transport_is_monotone(
            a in proptest::collection::vec(-50.0f64..50.0, 1..40),
            b in proptest::collection::vec(-50.0f64..50.0, 1..40),
            probes in proptest::collection::vec(-80.0f64..80.0, 2..30),
        ) {
            for ext in [Extrapolation::Shift, Extrapolation::Affine] {
                let t = Transport::new(unit(&a), unit(&b), ext);
                let mut p = probes.clone();
                p.sort_by(f64::total_cmp);
                let out: Vec<f64> = p.iter().map(|&y| t.eval(y)).collect();
                proptest::prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
