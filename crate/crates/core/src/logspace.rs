//! Log-domain accumulation helpers.
//!
//! Every sum of probabilities in the oracle and the solvers goes through
//! these functions. Reductions use a fixed pairwise tree so results do not
//! depend on how work was partitioned.

use crate::scalar::Scalar;

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted `log Σ exp(x_i)`; `-inf` for an empty slice or all `-inf`.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    if max == S::infinity() {
        return max;
    }
    let shifted: Vec<S> = xs.iter().map(|&x| (x - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// `log((1/n) Σ exp(x_i))`.
pub fn log_mean_exp<S: Scalar>(xs: &[S]) -> S {
    log_sum_exp(xs) - S::of_usize(xs.len()).ln()
}

/// Deterministic pairwise-tree summation.
pub fn pairwise_sum<S: Scalar>(xs: &[S]) -> S {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().fold(S::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `x * ln(x)` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx<S: Scalar>(x: S) -> S {
    if x == S::zero() {
        S::zero()
    } else {
        x * x.ln()
    }
}

/// KL(p ‖ q) over aligned probability vectors, in nats.
///
/// Terms with `p_i = 0` contribute nothing; `p_i > 0` with `q_i = 0` yields `+inf`.
pub fn kl_divergence<S: Scalar>(p: &[S], q: &[S]) -> S {
    debug_assert_eq!(p.len(), q.len());
    let terms: Vec<S> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == S::zero() {
                S::zero()
            } else if qi == S::zero() {
                S::infinity()
            } else {
                pi * (pi.ln() - qi.ln())
            }
        })
        .collect();
    pairwise_sum(&terms)
}
