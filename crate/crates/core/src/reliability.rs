//! Scalar probability kernels: normal quantiles, exact binomial tails, and
//! the conversions between reliability targets and replica counts.
//!
//! Sign convention for quantiles: `normal_quantile(r)` returns `z` with
//! `Phi(-z) = r`, so `z > 0` whenever `r < 1/2`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Complementary error function, accurate to a few ulps relative for
/// `x >= 2` and to ~1e-16 absolute elsewhere.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        return 1.0 - erf_series(x);
    }
    erfc_continued_fraction(x)
}

// erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (1*3*...*(2n+1)); all terms positive.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
}

// Modified Lentz on erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))).
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() * FRAC_1_SQRT_PI / f
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Returns `z` with `Phi(-z) = tail`.
pub fn normal_quantile(tail: f64) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs tail in (0,1), got {tail}")));
    }
    if tail == 0.5 {
        return Ok(0.0);
    }
    if tail > 0.5 {
        // 1 - tail is exact on [0.5, 1].
        return Ok(-upper_quantile(1.0 - tail));
    }
    Ok(upper_quantile(tail))
}

// Safeguarded Newton on ln Phi(-z) = ln tail, for tail < 1/2 (so z > 0).
fn upper_quantile(tail: f64) -> f64 {
    let target = tail.ln();
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    let mut z = (-2.0 * target).sqrt().min(39.0);
    for _ in 0..200 {
        let upper = normal_cdf(-z);
        if upper == 0.0 {
            hi = z;
            z = 0.5 * (lo + hi);
            continue;
        }
        let g = upper.ln() - target;
        if g > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let slope = -normal_pdf(z) / upper;
        let mut next = z - g / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - z).abs();
        z = next;
        if step <= 1e-15 * z.max(1.0) {
            break;
        }
    }
    z
}

/// `Bin(trials, success_prob)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSpec {
    pub trials: u64,
    pub success_prob: f64,
}

impl BinomialSpec {
    pub fn new(trials: u64, success_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&success_prob) {
            return Err(Error::Domain(format!(
                "success probability must lie in [0,1], got {success_prob}"
            )));
        }
        Ok(BinomialSpec { trials, success_prob })
    }

    pub fn pmf(&self, k: u64) -> f64 {
        binomial_pmf(k, self.trials, self.success_prob)
    }

    pub fn ln_pmf(&self, k: u64) -> f64 {
        binomial_ln_pmf(k, self.trials, self.success_prob)
    }

    pub fn cdf(&self, k: i64) -> f64 {
        binomial_cdf(k, self)
    }
}

// Stirling-series remainder ln(n!) - [(n+1/2) ln n - n + ln sqrt(2 pi)].
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        if n == 0.0 {
            return 0.0;
        }
        // n! is exact in f64 up to 22!.
        let fact: f64 = (1..=n as u64).map(|i| i as f64).product();
        return fact.ln() - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * PI).ln();
    }
    let nn = n * n;
    if n > 500.0 {
        return (S0 - S1 / nn) / n;
    }
    if n > 80.0 {
        return (S0 - (S1 - S2 / nn) / nn) / n;
    }
    if n > 35.0 {
        return (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n;
    }
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
}

// Deviance term x ln(x/np) + np - x, computed without cancellation near x = np.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        return s;
    }
    x * (x / np).ln() + np - x
}

/// Natural log of the binomial PMF via the saddle-point expansion; relative
/// accuracy stays near machine precision for very large `n`.
pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let (x, nf) = (k as f64, n as f64);
    if k == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * q.ln() };
    }
    if k == n {
        return if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
    }
    let lc = stirlerr(nf) - stirlerr(x) - stirlerr(nf - x) - bd0(x, nf * p) - bd0(nf - x, nf * q);
    let lf = (2.0 * PI).ln() + x.ln() + (-x / nf).ln_1p();
    lc - 0.5 * lf
}

pub fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    binomial_ln_pmf(k, n, p).exp()
}

/// `P(X <= k)` for `X ~ spec`.
///
/// Sums the smaller tail, starting from the term nearest the bulk and walking
/// outward with the exact term ratio; terms are added smallest first.
pub fn binomial_cdf(k: i64, spec: &BinomialSpec) -> f64 {
    let n = spec.trials;
    let p = spec.success_prob;
    if k < 0 {
        return 0.0;
    }
    let k = k as u64;
    if k >= n {
        return 1.0;
    }
    if p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    let mean = n as f64 * p;
    if (k as f64) < mean {
        lower_tail(k, n, p, q)
    } else {
        1.0 - upper_tail(k + 1, n, p, q)
    }
}

fn lower_tail(k: u64, n: u64, p: f64, q: f64) -> f64 {
    let ratio = q / p;
    let mut term = binomial_pmf(k, n, p);
    let mut terms = Vec::with_capacity(64);
    let mut running = 0.0;
    let mut j = k;
    loop {
        terms.push(term);
        running += term;
        if j == 0 || term <= running * 1e-18 {
            break;
        }
        term *= j as f64 / (n - j + 1) as f64 * ratio;
        j -= 1;
    }
    terms.iter().rev().sum()
}

fn upper_tail(k: u64, n: u64, p: f64, q: f64) -> f64 {
    let ratio = p / q;
    let mode = ((n + 1) as f64 * p).floor() as u64;
    let mut term = binomial_pmf(k, n, p);
    let mut terms = Vec::with_capacity(64);
    let mut running = 0.0;
    let mut j = k;
    loop {
        terms.push(term);
        running += term;
        if j == n || (j >= mode && term <= running * 1e-18) {
            break;
        }
        term *= (n - j) as f64 / (j + 1) as f64 * ratio;
        j += 1;
    }
    let mut sorted = terms;
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.iter().sum()
}

/// `B = z_r * sqrt(f / (1 - f))`.
pub fn derive_penalty(reliability: f64, failure_prob: f64) -> Result<f64> {
    check_failure_prob(failure_prob)?;
    let z = normal_quantile(reliability)?;
    Ok(z * (failure_prob / (1.0 - failure_prob)).sqrt())
}

/// `K = d / (1 - f)`.
pub fn derive_scaled_demand(demand: f64, failure_prob: f64) -> Result<f64> {
    check_failure_prob(failure_prob)?;
    if !(demand > 0.0) {
        return Err(Error::Domain(format!("demand must be positive, got {demand}")));
    }
    Ok(demand / (1.0 - failure_prob))
}

fn check_failure_prob(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Domain(format!("failure probability must lie in (0,1), got {f}")));
    }
    Ok(())
}

/// Alive CPU within this relative distance below the demand still meets it,
/// so that decimal inputs such as `3 * 0.3` against `0.9` land on the boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// Demand level below which alive CPU counts as failure.
pub fn failure_level(demand: f64) -> f64 {
    demand * (1.0 - BOUNDARY_TOLERANCE)
}

/// Largest alive count `k` with `k * slice < demand`, or `-1` if none.
///
/// A service exactly at its demand (`k * slice == demand`) counts as alive.
pub fn max_failing_alive(slice: f64, demand: f64) -> i64 {
    if !(demand > 0.0) {
        return -1;
    }
    let level = failure_level(demand);
    let mut t = (demand / slice).ceil() as i64 - 1;
    while t >= 0 && (t as f64) * slice >= level {
        t -= 1;
    }
    while ((t + 1) as f64) * slice < level {
        t += 1;
    }
    t
}

/// Exact `P(slice * Bin(replicas, 1-f) < demand)`.
pub fn homogeneous_failure_prob(replicas: u64, slice: f64, demand: f64, failure_prob: f64) -> f64 {
    let spec = BinomialSpec {
        trials: replicas,
        success_prob: 1.0 - failure_prob,
    };
    binomial_cdf(max_failing_alive(slice, demand), &spec)
}

/// Smallest replica count `n` with `P(slice * Bin(n, 1-f) < demand) < reliability`.
pub fn min_replicas_binomial(slice: f64, demand: f64, reliability: f64, failure_prob: f64) -> Result<u64> {
    check_failure_prob(failure_prob)?;
    if !(slice > 0.0) {
        return Err(Error::Domain(format!("slice must be positive, got {slice}")));
    }
    if !(reliability > 0.0 && reliability < 1.0) {
        return Err(Error::Domain(format!("reliability must lie in (0,1), got {reliability}")));
    }
    let fails = |n: u64| homogeneous_failure_prob(n, slice, demand, failure_prob) >= reliability;
    let t = max_failing_alive(slice, demand);
    if t < 0 {
        return Ok(0);
    }
    // Any n <= t fails with probability one.
    let mut lo = t as u64;
    let mut hi = 2 * (lo + 1);
    while fails(hi) {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::Internal(format!("replica search overflow for slice {slice}, demand {demand}"))
        })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fails(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Penalty making `n A - B A sqrt(n) >= K` tight at the given `(n, A)`.
pub fn refine_penalty(replicas: u64, slice: f64, scaled_demand: f64) -> Result<f64> {
    if replicas == 0 || !(slice > 0.0) {
        return Err(Error::Domain(format!(
            "refine_penalty needs positive replicas and slice, got n={replicas}, A={slice}"
        )));
    }
    let n = replicas as f64;
    let total = n * slice;
    if total < scaled_demand * (1.0 - 1e-12) {
        return Err(Error::Infeasible(format!(
            "{replicas} replicas of slice {slice} give {total} < scaled demand {scaled_demand}"
        )));
    }
    Ok(((total - scaled_demand) / (slice * n.sqrt())).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        // Phi(-2).
        let phi_m2 = 0.022_750_131_948_179_21;
        assert_relative_eq!(normal_quantile(phi_m2).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(normal_quantile(1e-2).unwrap(), 2.326_347_874_040_840_8, epsilon = 1e-12);
        assert_relative_eq!(normal_quantile(1e-8).unwrap(), 5.612_001_244_174_789, epsilon = 1e-11);
    }

    #[test]
    fn quantile_domain() {
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(normal_quantile(bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantile_is_symmetric() {
        for r in [1e-9, 1e-4, 0.01, 0.2, 0.4999] {
            // Compare against the tail that 1 - r actually represents.
            let upper = 1.0 - r;
            let a = normal_quantile(1.0 - upper).unwrap();
            let b = normal_quantile(upper).unwrap();
            assert_relative_eq!(a, -b, epsilon = 1e-9);
        }
    }

    #[test]
    fn erfc_reference_values() {
        // From high-precision tables.
        assert_relative_eq!(erfc(0.5), 0.479_500_122_186_953_5, max_relative = 1e-14);
        assert_relative_eq!(erfc(1.0), 0.157_299_207_050_285_13, max_relative = 1e-14);
        assert_relative_eq!(erfc(3.0), 2.209_049_699_858_544e-5, max_relative = 1e-13);
        assert_relative_eq!(erfc(6.0), 2.151_973_671_249_891_3e-17, max_relative = 1e-13);
        assert_relative_eq!(erfc(-1.0), 1.842_700_792_949_715, max_relative = 1e-14);
    }

    #[test]
    fn cdf_examples() {
        let spec = |n| BinomialSpec::new(n, 0.99).unwrap();
        assert_eq!(binomial_cdf(-1, &spec(3)), 0.0);
        assert_relative_eq!(binomial_cdf(0, &spec(3)), 1e-6, max_relative = 1e-12);
        let exact = 1e-10 + 5.0 * 0.99 * 1e-8;
        assert_relative_eq!(binomial_cdf(1, &spec(5)), exact, max_relative = 1e-12);
        assert_eq!(binomial_cdf(5, &spec(5)), 1.0);
    }

    #[test]
    fn cdf_degenerate_probabilities() {
        let zero = BinomialSpec::new(4, 0.0).unwrap();
        assert_eq!(binomial_cdf(0, &zero), 1.0);
        let one = BinomialSpec::new(4, 1.0).unwrap();
        assert_eq!(binomial_cdf(3, &one), 0.0);
        assert_eq!(binomial_cdf(4, &one), 1.0);
        assert!(BinomialSpec::new(4, 1.5).is_err());
    }

    #[test]
    fn cdf_large_n_tails() {
        // Poisson-like lower tail for a big n at p close to 1.
        let spec = BinomialSpec::new(1_000_000, 0.999_999).unwrap();
        let p0 = binomial_cdf(999_990, &spec);
        assert!(p0 > 0.0 && p0 < 1e-5, "{p0}");
        let p1 = binomial_cdf(999_989, &spec);
        assert!(p1 < p0);
    }

    #[test]
    fn penalty_and_scaled_demand() {
        assert_eq!(derive_penalty(0.5, 0.01).unwrap(), 0.0);
        let b = derive_penalty(0.022_750_131_948_179_21, 0.01).unwrap();
        assert_relative_eq!(b, 2.0 * (0.01f64 / 0.99).sqrt(), max_relative = 1e-10);
        assert_relative_eq!(b, 0.201_007_563_051_842_9, max_relative = 1e-10);
        assert_relative_eq!(derive_penalty(1e-2, 0.5).unwrap(), 2.326_347_874_040_840_8, max_relative = 1e-12);

        assert_relative_eq!(derive_scaled_demand(99.0, 0.01).unwrap(), 100.0, max_relative = 1e-15);
        assert_eq!(derive_scaled_demand(1.0, 0.5).unwrap(), 2.0);
        assert_relative_eq!(derive_scaled_demand(7.3, 0.01).unwrap(), 7.3 / 0.99, max_relative = 1e-15);
        assert!(derive_scaled_demand(1.0, 1.0).is_err());
    }

    #[test]
    fn min_replicas_examples() {
        assert_eq!(min_replicas_binomial(1.0, 2.0, 1e-6, 0.01).unwrap(), 5);
        assert_eq!(min_replicas_binomial(1.0, 1.0, 1e-6, 0.01).unwrap(), 4);
        assert_eq!(min_replicas_binomial(10.0, 1.0, 0.5, 0.01).unwrap(), 1);
    }

    #[test]
    fn boundary_alive_count_is_success() {
        assert_eq!(max_failing_alive(1.0, 2.0), 1);
        assert_eq!(max_failing_alive(0.5, 1.0), 1);
        assert_eq!(max_failing_alive(0.3, 0.9), 2);
        assert_eq!(max_failing_alive(2.0, 1.0), 0);
        assert_eq!(max_failing_alive(1.0, 0.0), -1);
    }

    #[test]
    fn refine_penalty_examples() {
        assert_relative_eq!(refine_penalty(5, 1.0, 2.0).unwrap(), 3.0 / 5f64.sqrt(), max_relative = 1e-15);
        assert_eq!(refine_penalty(4, 0.5, 2.0).unwrap(), 0.0);
        assert_relative_eq!(refine_penalty(4, 0.5, 1.0).unwrap(), 1.0, max_relative = 1e-15);
        assert!(matches!(refine_penalty(2, 0.5, 1.5), Err(Error::Infeasible(_))));
    }
}
