use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use relalloc::reliability::{
    binomial_cdf, homogeneous_failure_prob, max_failing_alive, min_replicas_binomial, normal_cdf, normal_quantile,
    refine_penalty, BinomialSpec,
};

fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn choose(n: u64, k: u64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

/// Exact `P(Bin(n, p) <= k)` in rational arithmetic.
fn exact_cdf(k: i64, n: u64, p: &BigRational) -> BigRational {
    if k < 0 {
        return BigRational::zero();
    }
    let q = BigRational::one() - p;
    (0..=(k as u64).min(n)).fold(BigRational::zero(), |acc, j| {
        acc + BigRational::from_integer(choose(n, j)) * num_traits::pow(p.clone(), j as usize)
            * num_traits::pow(q.clone(), (n - j) as usize)
    })
}

#[test]
fn cdf_matches_rational_oracle() {
    for (num, den) in [(1, 2), (9, 10), (99, 100)] {
        let p = rational(num, den);
        let pf = num as f64 / den as f64;
        for n in 0..=30u64 {
            let spec = BinomialSpec::new(n, pf).unwrap();
            for k in -1..=(n as i64 + 1) {
                let exact = exact_cdf(k, n, &p).to_f64().unwrap();
                let got = binomial_cdf(k, &spec);
                let tol = 1e-12 * exact.max(1e-300);
                assert!(
                    (got - exact).abs() <= tol.max(1e-300),
                    "n={n} p={pf} k={k}: got {got:e}, exact {exact:e}"
                );
            }
        }
    }
}

#[test]
fn homogeneous_failure_examples() {
    // All three replicas must fail.
    assert!((homogeneous_failure_prob(3, 1.0, 1.0, 0.01) - 1e-6).abs() < 1e-18);
    // At most one of five alive: 0.01^5 + 5 * 0.99 * 0.01^4.
    let exact = 1e-10 + 5.0 * 0.99 * 1e-8;
    assert!((homogeneous_failure_prob(5, 1.0, 2.0, 0.01) - exact).abs() < 1e-20);
}

proptest! {
    #[test]
    fn quantile_is_decreasing(a in 1e-15f64..0.999, b in 1e-15f64..0.999) {
        prop_assume!(a < b);
        prop_assert!(normal_quantile(a).unwrap() >= normal_quantile(b).unwrap());
    }

    #[test]
    fn quantile_inverts_tail(r in 1e-300f64..0.5) {
        let z = normal_quantile(r).unwrap();
        let back = normal_cdf(-z);
        prop_assert!((back - r).abs() <= 1e-12 * r, "r={r:e} z={z} back={back:e}");
    }

    #[test]
    fn min_replicas_is_argmin(
        slice in 0.05f64..1.0,
        demand in 0.1f64..30.0,
        exp in 1.0f64..10.0,
        f in 0.001f64..0.2,
    ) {
        let r = 10f64.powf(-exp);
        let n = min_replicas_binomial(slice, demand, r, f).unwrap();
        prop_assert!(homogeneous_failure_prob(n, slice, demand, f) < r);
        prop_assert!(n == 0 || homogeneous_failure_prob(n - 1, slice, demand, f) >= r);
    }

    #[test]
    fn refined_penalty_is_tight(n in 1u64..500, slice in 0.01f64..1.0, frac in 0.0f64..1.0) {
        let k = frac * n as f64 * slice;
        let b = refine_penalty(n, slice, k).unwrap();
        prop_assert!(b >= 0.0);
        let residual = n as f64 * slice - b * slice * (n as f64).sqrt() - k;
        prop_assert!(residual.abs() <= 1e-9 * (n as f64 * slice));
    }

    #[test]
    fn failing_alive_count_is_strict(slice in 0.01f64..2.0, demand in 0.01f64..50.0) {
        let t = max_failing_alive(slice, demand);
        prop_assert!(t >= -1);
        if t >= 0 {
            prop_assert!((t as f64) * slice < demand);
        }
        prop_assert!(((t + 1) as f64) * slice >= demand * (1.0 - 1e-12));
    }
}
