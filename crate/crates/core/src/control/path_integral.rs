//! Monte Carlo path-integral values `−log E[exp(−Σ_t h_t)]` from seeded rollouts.

use serde::{Deserialize, Serialize};

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, pairwise_sum};
use crate::model::CompleteState;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate<S> {
    pub estimate: S,
    pub stderr: S,
    pub rollouts: usize,
}

/// `−(log Σ_i exp(w_i) − log n)` with `w_i = −Σ_t (cost_t − rate)` over `n` rollouts;
/// the standard error is the delta-method error of the log of the mean weight.
pub fn mc_path_integral_value<S: Scalar>(
    chain: &Chain<S>,
    x0: CompleteState,
    steps: usize,
    rate: S,
    rollouts: usize,
    seed: u64,
) -> Result<McEstimate<S>> {
    if rollouts < 2 {
        return Err(Error::InvalidArgument("at least two rollouts are needed".into()));
    }
    chain.spec().check_state(&x0)?;
    let offset = S::of_usize(steps) * rate;
    let log_w: Vec<S> = chain
        .rollout_totals(x0, steps, rollouts, seed)
        .into_iter()
        .map(|c| -(c - offset))
        .collect();
    log_weights_estimate(&log_w)
}

/// Path-integral estimate and delta-method error from per-rollout log weights.
pub fn log_weights_estimate<S: Scalar>(log_w: &[S]) -> Result<McEstimate<S>> {
    let n = log_w.len();
    if n < 2 {
        return Err(Error::InvalidArgument("at least two rollouts are needed".into()));
    }
    let lse = log_sum_exp(log_w);
    if lse == S::neg_infinity() || lse.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    let nn = S::of_usize(n);
    let estimate = -(lse - nn.ln());
    let max = log_w.iter().copied().fold(S::neg_infinity(), S::max);
    let w: Vec<S> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let mean = pairwise_sum(&w) / nn;
    let dev: Vec<S> = w.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let sd = (pairwise_sum(&dev) / S::of_usize(n - 1)).sqrt();
    Ok(McEstimate {
        estimate,
        stderr: sd / (nn.sqrt() * mean),
        rollouts: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn cycle() -> Chain<f64> {
        let spec = ModelSpec::new(1, 2, 1, 1, 1, 1).unwrap().with_tick_period(1).unwrap();
        Chain::from_parts(spec, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_advantage_gives_exact_zero() {
        let w = vec![0.0f64; 10];
        let e = log_weights_estimate(&w).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn deterministic_chain_gives_the_path_cost() {
        let chain = cycle();
        for n in [2, 7, 100] {
            let e = mc_path_integral_value(&chain, CompleteState::default(), 5, 0.25, n, 3).unwrap();
            // Costs 1, 0, 1, 0, 1 minus the rate on each of five steps.
            assert!((e.estimate - (3.0 - 1.25)).abs() < 1e-12);
            assert!(e.stderr.abs() < 1e-12);
        }
    }

    #[test]
    fn bad_inputs() {
        let chain = cycle();
        assert!(mc_path_integral_value(&chain, CompleteState::default(), 3, 0.0, 1, 0).is_err());
        assert!(matches!(log_weights_estimate(&[f64::NEG_INFINITY; 4]), Err(Error::DegenerateWeights)));
    }
}
