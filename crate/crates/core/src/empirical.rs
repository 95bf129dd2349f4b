//! Empirical distribution functions, crossing points, rank maps and the dominance test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CrossSection, Dataset};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Default trimming of the crossing search in the period-t quantile scale.
pub const DEFAULT_TRIM: (f64, f64) = (0.05, 0.95);

/// Near-minimizers of the crossing objective within this distance form the flat set.
const FLAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

pub fn ecdf(values: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(values)
}

pub fn quantile(cdf: &EmpiricalCdf, p: f64) -> Result<f64> {
    cdf.quantile(p)
}

impl EmpiricalCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return invalid("empirical cdf of an empty sample");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("empirical cdf of non-finite values");
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub(crate) fn from_sorted(sorted: Vec<f64>) -> Self {
        debug_assert!(!sorted.is_empty());
        Self { sorted }
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.len() as f64
    }

    /// `inf{x : F(x) >= p}` for `p` in `(0, 1]`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p <= 1.0) {
            return invalid(format!("quantile level must lie in (0, 1], got {p}"));
        }
        Ok(self.sorted[self.rank_for(p) - 1])
    }

    /// Smallest `k >= 1` with `k / n >= p`.
    fn rank_for(&self, p: f64) -> usize {
        let n = self.len();
        let nf = n as f64;
        let mut k = ((p * nf).ceil() as usize).clamp(1, n);
        while k > 1 && (k - 1) as f64 / nf >= p {
            k -= 1;
        }
        while k < n && (k as f64 / nf) < p {
            k += 1;
        }
        k
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingPoint {
    pub location: f64,
    /// `|F_T - F_t|` at `location`.
    pub objective: f64,
    pub trim_lower: f64,
    pub trim_upper: f64,
    #[serde(skip)]
    pub search_interval: [f64; 2],
    /// Span of the points whose objective is within 1e-12 of the minimum.
    pub flat_set_width: f64,
}

impl CrossingPoint {
    /// A crossing placed by hand, e.g. one held fixed across bootstrap replicates.
    pub fn fixed(location: f64) -> Self {
        Self {
            location,
            objective: f64::NAN,
            trim_lower: DEFAULT_TRIM.0,
            trim_upper: DEFAULT_TRIM.1,
            search_interval: [location, location],
            flat_set_width: 0.0,
        }
    }
}

fn check_trim(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return invalid(format!(
            "trimming must satisfy 0 < lower < upper < 1, got ({lo}, {hi})"
        ));
    }
    Ok(())
}

/// Estimated treatment value at which the two treatment distributions cross.
///
/// `s1` is the earlier period and defines the trimmed search interval; `s2` is
/// the reference period.
pub fn estimate_crossing(
    s1: &CrossSection,
    s2: &CrossSection,
    trim_lower: f64,
    trim_upper: f64,
) -> Result<CrossingPoint> {
    let a = EmpiricalCdf::new(s1.treatments())?;
    let b = EmpiricalCdf::new(s2.treatments())?;
    crossing_sorted(a.sorted_values(), b.sorted_values(), trim_lower, trim_upper)
}

pub(crate) fn crossing_sorted(x1: &[f64], x2: &[f64], lo_p: f64, hi_p: f64) -> Result<CrossingPoint> {
    check_trim(lo_p, hi_p)?;
    if x1.is_empty() || x2.is_empty() {
        return invalid("crossing needs two nonempty samples");
    }
    let e1 = EmpiricalCdf::from_sorted(x1.to_vec());
    let lo = e1.quantile(lo_p)?;
    let hi = e1.quantile(hi_p)?;
    let (n1, n2) = (x1.len() as u128, x2.len() as u128);

    // enumerate distinct pooled points in [lo, hi] with running counts
    let mut i = x1.partition_point(|&v| v < lo);
    let mut j = x2.partition_point(|&v| v < lo);
    let mut pts: Vec<(f64, u128)> = Vec::new();
    loop {
        let next = match (x1.get(i), x2.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        if next > hi {
            break;
        }
        while i < x1.len() && x1[i] <= next {
            i += 1;
        }
        while j < x2.len() && x2[j] <= next {
            j += 1;
        }
        let d = (j as u128 * n1).abs_diff(i as u128 * n2);
        pts.push((next, d));
    }
    if pts.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let scale = (n1 * n2) as f64;
    let dmin = pts.iter().map(|p| p.1).min().unwrap();
    let location = pts.iter().find(|p| p.1 == dmin).unwrap().0;
    let objective = dmin as f64 / scale;
    let near: Vec<f64> = pts
        .iter()
        .filter(|p| p.1 as f64 / scale <= objective + FLAT_TOL)
        .map(|p| p.0)
        .collect();
    let flat_set_width = near.last().unwrap() - near[0];
    Ok(CrossingPoint {
        location,
        objective,
        trim_lower: lo_p,
        trim_upper: hi_p,
        search_interval: [lo, hi],
        flat_set_width,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    None,
    /// The evaluation point lies below the reference sample; mapped to the source minimum.
    Below,
    /// Above the reference sample; mapped to the source maximum.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankValue {
    pub value: f64,
    pub clamp: Clamp,
}

/// `q(x) = F_source^{-1}(F_target(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMap {
    pub source_period: usize,
    pub target_period: usize,
    source: Vec<f64>,
    target: Vec<f64>,
}

impl RankMap {
    pub(crate) fn from_sorted(
        source_period: usize,
        target_period: usize,
        source: Vec<f64>,
        target: Vec<f64>,
    ) -> Self {
        Self {
            source_period,
            target_period,
            source,
            target,
        }
    }

    pub fn eval(&self, x: f64) -> RankValue {
        let c = self.target.partition_point(|&v| v <= x);
        if c == 0 {
            return RankValue {
                value: self.source[0],
                clamp: Clamp::Below,
            };
        }
        let (ns, nt) = (self.source.len(), self.target.len());
        // smallest k with k/ns >= c/nt, in integers
        let k = (c * ns).div_ceil(nt);
        let clamp = if x > self.target[nt - 1] {
            Clamp::Above
        } else {
            Clamp::None
        };
        RankValue {
            value: self.source[k - 1],
            clamp,
        }
    }

    /// The rank map value, failing if the point had to be clamped.
    pub fn eval_strict(&self, x: f64) -> Result<f64> {
        let r = self.eval(x);
        match r.clamp {
            Clamp::None => Ok(r.value),
            _ => Err(Error::OutsideSupport(x)),
        }
    }
}

pub fn rank_map(dataset: &Dataset, source: usize, target: usize) -> Result<RankMap> {
    let s = EmpiricalCdf::new(dataset.period(source)?.treatments())?;
    let t = EmpiricalCdf::new(dataset.period(target)?.treatments())?;
    Ok(RankMap::from_sorted(source, target, s.sorted, t.sorted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceTest {
    /// `sup_{x in [a, b]} F1(x) - F2(x)`.
    pub statistic: f64,
    pub p_value: f64,
    pub replications: usize,
    pub seed: u64,
}

fn sup_difference(a: &[f64], b: &[f64], lo: f64, hi: f64) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = a.partition_point(|&v| v <= lo);
    let mut j = b.partition_point(|&v| v <= lo);
    let mut best = i as f64 / na - j as f64 / nb;
    loop {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        if next > hi {
            break;
        }
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        best = best.max(i as f64 / na - j as f64 / nb);
    }
    best
}

/// One-sided test of `F1 <= F2` on `[a, b]`, bootstrapped from the pooled sample.
pub fn dominance_test(
    s1: &[f64],
    s2: &[f64],
    interval: (f64, f64),
    b: usize,
    seed: u64,
) -> Result<DominanceTest> {
    let (lo, hi) = interval;
    if !(lo < hi) {
        return invalid(format!("dominance interval needs a < b, got [{lo}, {hi}]"));
    }
    if b < 99 {
        return invalid(format!("dominance test needs at least 99 replications, got {b}"));
    }
    let a = EmpiricalCdf::new(s1)?;
    let c = EmpiricalCdf::new(s2)?;
    let mut pooled: Vec<f64> = a.sorted.iter().chain(&c.sorted).copied().collect();
    pooled.sort_by(f64::total_cmp);
    if hi < pooled[0] || lo > pooled[pooled.len() - 1] {
        return invalid(format!(
            "interval [{lo}, {hi}] lies outside the pooled support [{}, {}]",
            pooled[0],
            pooled[pooled.len() - 1]
        ));
    }
    let stat = sup_difference(&a.sorted, &c.sorted, lo, hi);
    let draw = |counts: Vec<u32>| -> Vec<f64> {
        let mut v = Vec::with_capacity(counts.iter().sum::<u32>() as usize);
        for (k, &m) in counts.iter().enumerate() {
            v.extend(std::iter::repeat_n(pooled[k], m as usize));
        }
        v
    };
    let exceed: usize = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let r1 = draw(rng::resample_counts(pooled.len(), a.len(), &mut g));
            let r2 = draw(rng::resample_counts(pooled.len(), c.len(), &mut g));
            usize::from(sup_difference(&r1, &r2, lo, hi) >= stat)
        })
        .sum();
    Ok(DominanceTest {
        statistic: stat,
        p_value: (1 + exceed) as f64 / (b + 1) as f64,
        replications: b,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, mu: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut g = rng::stream(seed, 0);
        (0..n)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut g); mu + sd * z })
            .collect()
    }

    fn section(x: &[f64]) -> CrossSection {
        CrossSection::new(1, vec![0.0; x.len()], x.to_vec()).unwrap()
    }

    #[test]
    fn ecdf_examples() {
        let e = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.eval(2.0), 2.0 / 3.0);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(3.0), 1.0);
        assert_eq!(ecdf(&[1.0, 1.0, 2.0]).unwrap().eval(1.0), 2.0 / 3.0);
        assert!(ecdf(&[]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let e = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(quantile(&e, 0.5).unwrap(), 2.0);
        assert_eq!(quantile(&e, 1.0).unwrap(), 3.0);
        assert_eq!(quantile(&e, 1.0 / 3.0).unwrap(), 1.0);
        assert!(quantile(&e, 0.0).is_err());
        assert!(quantile(&e, -0.2).is_err());
    }

    #[test]
    fn crossing_of_identical_samples_is_left_end() {
        let x = normal(500, 0.0, 1.0, 3);
        let c = estimate_crossing(&section(&x), &section(&x), 0.05, 0.95).unwrap();
        let e = ecdf(&x).unwrap();
        let lo = e.quantile(0.05).unwrap();
        let hi = e.quantile(0.95).unwrap();
        assert_eq!(c.location, lo);
        assert_eq!(c.objective, 0.0);
        assert_eq!(c.flat_set_width, hi - lo);
        assert_eq!(c.search_interval, [lo, hi]);
    }

    #[test]
    fn crossing_rejects_bad_trim() {
        let x = [1.0, 2.0];
        assert!(estimate_crossing(&section(&x), &section(&x), 0.5, 0.5).is_err());
        assert!(estimate_crossing(&section(&x), &section(&x), 0.0, 0.5).is_err());
    }

    #[test]
    fn gaussian_crossing() {
        // Phi(x) = Phi((x - 0.5) / 2) at x = -0.5
        let a = normal(40_000, 0.0, 1.0, 11);
        let b = normal(40_000, 0.5, 2.0, 12);
        let c = estimate_crossing(&section(&a), &section(&b), 0.05, 0.95).unwrap();
        assert!((c.location + 0.5).abs() < 0.1, "{}", c.location);
    }

    #[test]
    fn crossing_json_keys() {
        let c = CrossingPoint::fixed(1.0);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(
            keys,
            ["flat_set_width", "location", "objective", "trim_lower", "trim_upper"]
        );
    }

    fn two(a: &[f64], b: &[f64]) -> Dataset {
        Dataset::from_vectors(vec![
            (vec![0.0; a.len()], a.to_vec()),
            (vec![0.0; b.len()], b.to_vec()),
        ])
        .unwrap()
    }

    #[test]
    fn rank_map_cases() {
        let x = normal(200, 0.0, 1.0, 5);
        let q = rank_map(&two(&x, &x), 1, 2).unwrap();
        for &v in &x {
            assert_eq!(q.eval(v).value, v);
        }
        let shifted: Vec<f64> = x.iter().map(|v| v + 3.0).collect();
        let q = rank_map(&two(&shifted, &x), 1, 2).unwrap();
        for &v in &x {
            assert_eq!(q.eval(v).value, v + 3.0);
        }
        let lo = q.eval(-100.0);
        assert_eq!(lo.clamp, Clamp::Below);
        assert_eq!(lo.value, shifted.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(q.eval(100.0).clamp, Clamp::Above);
        assert!(q.eval_strict(-100.0).is_err());
    }

    #[test]
    fn rank_map_uneven_sizes() {
        let s = [10.0, 20.0, 30.0];
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let q = rank_map(&two(&s, &t), 1, 2).unwrap();
        let got: Vec<f64> = t.iter().map(|&x| q.eval(x).value).collect();
        assert_eq!(got, [10.0, 10.0, 20.0, 20.0, 30.0, 30.0]);
    }

    #[test]
    fn dominance_identical() {
        let x = normal(300, 0.0, 1.0, 1);
        let d = dominance_test(&x, &x, (-1.0, 1.0), 199, 4).unwrap();
        assert_eq!(d.statistic, 0.0);
        assert!(d.p_value > 0.5);
        assert_eq!(d, dominance_test(&x, &x, (-1.0, 1.0), 199, 4).unwrap());
    }

    #[test]
    fn dominance_rejects_with_gap() {
        // F1 - F2 is about 0.2 on [0.3, 0.7]
        let mut g = rng::stream(9, 0);
        let s1: Vec<f64> = (0..5000).map(|_| g.random::<f64>()).collect();
        let s2: Vec<f64> = (0..5000).map(|_| (g.random::<f64>() * 1.25 - 0.05).min(1.0)).collect();
        let d = dominance_test(&s1, &s2, (0.3, 0.7), 199, 2).unwrap();
        assert!(d.statistic > 0.1);
        assert!(d.p_value < 0.05);
    }

    #[test]
    fn dominance_shift_gap_matches_order_statistics() {
        let s1 = normal(1000, 0.0, 1.0, 21);
        let s2: Vec<f64> = s1.iter().map(|v| v + 1.0).collect();
        let d = dominance_test(&s1, &s2, (0.0, 0.5), 99, 1).unwrap();
        let e1 = ecdf(&s1).unwrap();
        let e2 = ecdf(&s2).unwrap();
        let mut pts: Vec<f64> = s1.iter().chain(&s2).copied().filter(|v| *v > 0.0 && *v <= 0.5).collect();
        pts.push(0.0);
        let want = pts.iter().map(|&x| e1.eval(x) - e2.eval(x)).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(d.statistic, want);
        assert!(d.statistic > 0.3);
    }

    #[test]
    fn dominance_preconditions() {
        let x = [1.0, 2.0, 3.0];
        assert!(dominance_test(&x, &x, (2.0, 1.0), 199, 0).is_err());
        assert!(dominance_test(&x, &x, (1.0, 2.0), 50, 0).is_err());
        assert!(dominance_test(&x, &x, (10.0, 20.0), 199, 0).is_err());
    }

    fn untied() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::btree_set(-1000i32..1000, 1..60)
            .prop_map(|s| s.into_iter().map(|v| v as f64 / 8.0).collect())
    }

    proptest! {
        #[test]
        fn quantile_inverts_ecdf(v in untied()) {
            let e = ecdf(&v).unwrap();
            for &x in &v {
                prop_assert_eq!(e.quantile(e.eval(x)).unwrap(), x);
            }
        }

        #[test]
        fn crossing_is_a_minimizer(a in untied(), b in untied()) {
            let c = estimate_crossing(&section(&a), &section(&b), 0.1, 0.9).unwrap();
            let (ea, eb) = (ecdf(&a).unwrap(), ecdf(&b).unwrap());
            let [lo, hi] = c.search_interval;
            prop_assert!(c.location >= lo && c.location <= hi);
            for &x in a.iter().chain(&b).filter(|&&x| x >= lo && x <= hi) {
                prop_assert!(c.objective <= (eb.eval(x) - ea.eval(x)).abs() + 1e-15);
            }
        }

        #[test]
        fn crossing_affine_equivariance(a in untied(), b in untied(), k in 1u32..5, s in -20i32..20) {
            // scale by a power of two and shift by a small integer: exact in floating point
            let f = |v: &f64| v * f64::from(1u32 << k) + f64::from(s);
            let c = estimate_crossing(&section(&a), &section(&b), 0.05, 0.95).unwrap();
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            let d = estimate_crossing(&section(&fa), &section(&fb), 0.05, 0.95).unwrap();
            prop_assert_eq!(d.location, f(&c.location));
            prop_assert_eq!(d.objective, c.objective);
        }

        #[test]
        fn rank_map_monotone_and_equivariant(a in untied(), b in untied()) {
            let q = rank_map(&two(&a, &b), 1, 2).unwrap();
            let psi = |v: f64| v.exp();
            let ea: Vec<f64> = a.iter().map(|v| psi(*v / 100.0)).collect();
            let eb: Vec<f64> = b.iter().map(|v| psi(*v / 100.0)).collect();
            let qa: Vec<f64> = a.iter().map(|v| v / 100.0).collect();
            let qb: Vec<f64> = b.iter().map(|v| v / 100.0).collect();
            let base = rank_map(&two(&qa, &qb), 1, 2).unwrap();
            let mapped = rank_map(&two(&ea, &eb), 1, 2).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for (&x, &x0) in b.iter().zip(&qb) {
                let v = q.eval(x).value;
                prop_assert!(v >= prev);
                prev = v;
                prop_assert_eq!(mapped.eval(psi(x0)).value, psi(base.eval(x0).value));
            }
        }
    }
}
