//! The differential free energy `E[Σ_t h_t]`, an upper bound on the
//! path-integral value of the same rollout distribution.

use crate::chain::Chain;
use crate::control::path_integral::McEstimate;
use crate::error::{Error, Result};
use crate::logspace::pairwise_sum;
use crate::model::CompleteState;
use crate::objectives::Estimator;
use crate::scalar::Scalar;

/// Exact (forward propagation of the state distribution) or Monte Carlo
/// expectation of the summed advantage `Σ_t (cost_t − rate)`.
pub fn differential_free_energy<S: Scalar>(
    chain: &Chain<S>,
    x0: CompleteState,
    steps: usize,
    rate: S,
    estimator: Estimator,
) -> Result<McEstimate<S>> {
    chain.spec().check_state(&x0)?;
    if steps == 0 {
        return Err(Error::Empty("horizon"));
    }
    let offset = S::of_usize(steps) * rate;
    match estimator {
        Estimator::Exact => {
            let mut dist = vec![S::zero(); chain.n_states()];
            dist[chain.spec().index(&x0)] = S::one();
            let mut costs = Vec::with_capacity(steps);
            for t in 1..=steps {
                let (next, c) = chain.propagate(t, &dist);
                costs.push(c);
                dist = next;
            }
            Ok(McEstimate {
                estimate: pairwise_sum(&costs) - offset,
                stderr: S::zero(),
                rollouts: 0,
            })
        }
        Estimator::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidArgument("at least two rollouts are needed".into()));
            }
            let totals: Vec<S> = chain
                .rollout_totals(x0, steps, samples, seed)
                .into_iter()
                .map(|c| c - offset)
                .collect();
            let n = S::of_usize(samples);
            let mean = pairwise_sum(&totals) / n;
            let dev: Vec<S> = totals.iter().map(|&x| (x - mean) * (x - mean)).collect();
            let sd = (pairwise_sum(&dev) / S::of_usize(samples - 1)).sqrt();
            Ok(McEstimate {
                estimate: mean,
                stderr: sd / n.sqrt(),
                rollouts: samples,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GenerativeModel, ModelSpec, RecognitionModel, ReferenceModel};
    use crate::oracle::{exact_path_integral_value, EnumerationBudget};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_holds_and_monte_carlo_agrees() {
        let spec = ModelSpec::binary();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gen = GenerativeModel::<f64>::random(spec, &mut rng, true);
        let rec = RecognitionModel::random(spec, &mut rng, true);
        let reference = ReferenceModel::random(&spec, &mut rng, true);
        let budget = EnumerationBudget::default();
        let chain = Chain::feedback(&gen, &rec, &reference, &budget).unwrap();
        let x0 = spec.state(12);
        let exact = differential_free_energy(&chain, x0, 3, 1.5, Estimator::Exact).unwrap();
        let pi = exact_path_integral_value(&chain, x0, 3, 1.5, &budget).unwrap();
        assert!(exact.estimate >= pi - 1e-8);
        let mc = differential_free_energy(&chain, x0, 3, 1.5, Estimator::MonteCarlo { samples: 20_000, seed: 1 }).unwrap();
        assert!((mc.estimate - exact.estimate).abs() < 4.0 * mc.stderr);
    }
}
