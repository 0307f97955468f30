//! Scalar objectives of one time step and of an episode, all in nats.
//!
//! Expectations over latents are exhaustive sums over every latent tuple;
//! a Monte Carlo estimator exists only where an [`Estimator`] is taken.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::pairwise_sum;
use crate::model::recognition::{context_index, Context, RecognitionModel};
use crate::model::table::sample_index;
use crate::model::{CompleteState, GenerativeModel, ModelSpec, ReferenceModel};
use crate::oracle::EnumerationBudget;
use crate::scalar::Scalar;

/// The three terms of the per-step objective and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepObjective<S> {
    /// Expected reference surprisal.
    pub j: S,
    /// Expected likelihood surprisal.
    pub l: S,
    /// Divergence of the recognition belief from the latent prior.
    pub kl: S,
    pub total: S,
}

impl<S: Scalar> StepObjective<S> {
    pub fn new(j: S, l: S, kl: S) -> Self {
        StepObjective { j, l, kl, total: j + l + kl }
    }
}

/// Mean of per-step totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate<S> {
    pub mean_rate: S,
    pub steps: usize,
    pub per_step: Vec<S>,
}

/// Variational free energy with both of its forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy<S> {
    /// `E_q[-log p(o|a¹,s¹)] + KL(q ‖ p(latents | x_{t-1}))`.
    pub vfe: S,
    pub expected_nll: S,
    pub kl_prior: S,
    /// `KL(q ‖ p(o_t, latents | x_{t-1}))` against the unnormalized joint.
    pub single_divergence: S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// A recognition belief over latents at a step with observation `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief<S> {
    pub o: usize,
    pub probs: Vec<S>,
}

/// `-log R(o | a¹) - log R(s¹ | a²)`.
pub fn reference_surprisal<S: Scalar>(spec: &ModelSpec, reference: &ReferenceModel<S>, x: &CompleteState) -> Result<S> {
    spec.check_state(x)?;
    let j = reference.surprisal(x.o, x.s1, x.a1, x.a2);
    if j.is_infinite() {
        return Err(Error::InfiniteSurprisal("reference"));
    }
    Ok(j)
}

/// `-log p(o | a¹, s¹)`.
pub fn likelihood_surprisal<S: Scalar>(gen: &GenerativeModel<S>, x: &CompleteState) -> Result<S> {
    gen.spec().check_state(x)?;
    let l = -gen.lik.prob(&[x.a1, x.s1], x.o).ln();
    if l.is_infinite() {
        return Err(Error::InfiniteSurprisal("likelihood"));
    }
    Ok(l)
}

pub fn variational_free_energy<S: Scalar>(
    gen: &GenerativeModel<S>,
    rec: &RecognitionModel<S>,
    ctx: &Context,
    budget: &EnumerationBudget,
) -> Result<FreeEnergy<S>> {
    check_pair(gen, rec)?;
    budget.check_states(gen.spec())?;
    rec.check_context(ctx)?;
    let spec = gen.spec();
    let q = rec.belief(ctx);
    let prev = CompleteState {
        s1: ctx.carry.s1,
        s2: ctx.carry.s2,
        a: ctx.carry.a,
        ..CompleteState::default()
    };
    let a_t = ctx.action.unwrap_or(0);
    let mut nll = Vec::with_capacity(q.len());
    let mut kl = Vec::with_capacity(q.len());
    let mut single = Vec::with_capacity(q.len());
    for (i, &qi) in q.iter().enumerate() {
        if qi == S::zero() {
            continue;
        }
        let l = spec.latent(i);
        let log_q = qi.ln();
        let log_lik = gen.lik.prob(&[l.a1, l.s1], ctx.o).ln();
        let log_prior = gen.latent_prior(&ctx.carry, &l, ctx.t).ln();
        // The joint over (o_t, latents) is the full transition with the motor
        // factor divided out: a_t is an input of the belief, not a latent.
        let x = CompleteState::assemble(ctx.o, a_t, &l);
        let log_joint = gen.transition_prob(&prev, &x, ctx.t).ln() - gen.pol0.prob(&[ctx.o, l.a1], a_t).ln();
        nll.push(-qi * log_lik);
        kl.push(qi * (log_q - log_prior));
        single.push(qi * (log_q - log_joint));
    }
    let expected_nll = pairwise_sum(&nll);
    let kl_prior = pairwise_sum(&kl);
    Ok(FreeEnergy {
        vfe: expected_nll + kl_prior,
        expected_nll,
        kl_prior,
        single_divergence: pairwise_sum(&single),
    })
}

/// Per-step objective `E_q[J] + E_q[L] + KL(q ‖ prior)` for the belief at `ctx`.
pub fn step_objective<S: Scalar>(
    gen: &GenerativeModel<S>,
    rec: &RecognitionModel<S>,
    reference: &ReferenceModel<S>,
    ctx: &Context,
    budget: &EnumerationBudget,
) -> Result<StepObjective<S>> {
    check_pair(gen, rec)?;
    budget.check_states(gen.spec())?;
    rec.check_context(ctx)?;
    Ok(step_objective_unchecked(gen, rec, reference, ctx))
}

pub(crate) fn step_objective_unchecked<S: Scalar>(
    gen: &GenerativeModel<S>,
    rec: &RecognitionModel<S>,
    reference: &ReferenceModel<S>,
    ctx: &Context,
) -> StepObjective<S> {
    let spec = gen.spec();
    let ci = context_index(spec, ctx);
    let mut j = S::zero();
    let mut l = S::zero();
    let mut kl = S::zero();
    for i in 0..spec.n_latents() {
        let lat = spec.latent(i);
        let f = rec.factors(ctx, ci, &lat);
        let q = f[0] * f[1] * f[2] * f[3];
        if q == S::zero() {
            continue;
        }
        j = j + q * reference.surprisal(ctx.o, lat.s1, lat.a1, lat.a2);
        l = l - q * gen.lik.prob(&[lat.a1, lat.s1], ctx.o).ln();
        kl = kl + q * (q.ln() - gen.latent_prior(&ctx.carry, &lat, ctx.t).ln());
    }
    StepObjective::new(j, l, kl)
}

/// `(1/T) Σ_t E_q[-log R(x_t)]` over a window of beliefs.
pub fn reference_cross_entropy_rate<S: Scalar>(
    spec: &ModelSpec,
    reference: &ReferenceModel<S>,
    beliefs: &[Belief<S>],
    estimator: Estimator,
) -> Result<S> {
    if beliefs.is_empty() {
        return Err(Error::Empty("belief window"));
    }
    let mut per_step = Vec::with_capacity(beliefs.len());
    for (k, b) in beliefs.iter().enumerate() {
        if b.probs.len() != spec.n_latents() {
            return Err(Error::Dimension {
                what: "belief length".into(),
                expected: spec.n_latents(),
                got: b.probs.len(),
            });
        }
        if b.o >= spec.card_o {
            return Err(Error::Dimension {
                what: "belief observation".into(),
                expected: spec.card_o,
                got: b.o + 1,
            });
        }
        let cost = |i: usize| {
            let l = spec.latent(i);
            reference.surprisal(b.o, l.s1, l.a1, l.a2)
        };
        let value = match estimator {
            Estimator::Exact => {
                let terms: Vec<S> = b
                    .probs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > S::zero())
                    .map(|(i, &p)| p * cost(i))
                    .collect();
                pairwise_sum(&terms)
            }
            Estimator::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::InvalidArgument("Monte Carlo needs at least one sample".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let draws: Vec<S> = (0..samples).map(|_| cost(sample_index(&b.probs, &mut rng))).collect();
                pairwise_sum(&draws) / S::of_usize(samples)
            }
        };
        per_step.push(value);
    }
    Ok(pairwise_sum(&per_step) / S::of_usize(per_step.len()))
}

/// Global surprise rate: the mean of per-step totals.
pub fn global_rate<S: Scalar>(steps: &[StepObjective<S>]) -> Result<RateEstimate<S>> {
    if steps.is_empty() {
        return Err(Error::Empty("step objectives"));
    }
    let per_step: Vec<S> = steps.iter().map(|s| s.total).collect();
    Ok(RateEstimate {
        mean_rate: pairwise_sum(&per_step) / S::of_usize(per_step.len()),
        steps: per_step.len(),
        per_step,
    })
}

/// Mean-centred step surprise `total - rate`.
#[inline]
pub fn advantage<S: Scalar>(step: &StepObjective<S>, rate: S) -> S {
    step.total - rate
}

fn check_pair<S: Scalar>(gen: &GenerativeModel<S>, rec: &RecognitionModel<S>) -> Result<()> {
    if gen.spec() != rec.spec() {
        return Err(Error::SpecMismatch("generative and recognition models disagree".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Carry;
    use rand::SeedableRng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn surprisal_primitives() {
        let spec = ModelSpec::binary();
        let reference = ReferenceModel::<f64>::uniform(&spec);
        let x = CompleteState::new(1, 0, 1, 0, 1, 0);
        assert!((reference_surprisal(&spec, &reference, &x).unwrap() - 2.0 * LN2).abs() < 1e-15);
        let gen = GenerativeModel::<f64>::uniform(spec);
        assert!((likelihood_surprisal(&gen, &x).unwrap() - LN2).abs() < 1e-15);
    }

    #[test]
    fn one_hot_reference_matching_state_costs_nothing() {
        let spec = ModelSpec::binary();
        let reference = ReferenceModel::<f64>::peaked(&spec, 1.0).unwrap();
        let x = CompleteState::new(1, 0, 1, 0, 1, 0);
        assert_eq!(reference_surprisal(&spec, &reference, &x).unwrap(), 0.0);
        let miss = CompleteState { o: 0, ..x };
        assert!(matches!(reference_surprisal(&spec, &reference, &miss), Err(Error::InfiniteSurprisal(_))));
        let floored = reference.with_floor();
        let j = reference_surprisal(&spec, &floored, &miss).unwrap();
        assert!((j + crate::model::FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn random_reference_is_a_table_lookup() {
        let spec = ModelSpec::new(3, 2, 2, 2, 3, 2).unwrap();
        let reference = ReferenceModel::<f64>::random(&spec, &mut ChaCha8Rng::seed_from_u64(1), false);
        for x in spec.states() {
            let want = -(reference.ref_o().prob(&[x.a1], x.o).ln() + reference.ref_s1().prob(&[x.a2], x.s1).ln());
            assert_eq!(reference_surprisal(&spec, &reference, &x).unwrap(), want);
        }
    }

    #[test]
    fn mismatched_deterministic_likelihood_with_floor() {
        let spec = ModelSpec::binary();
        let gen = GenerativeModel::<f64>::uniform(spec);
        let (p, c) = crate::model::GenTable::Lik.shape(&spec);
        let lik = crate::model::ConditionalTable::from_fn(p, c, |_, o| if o == 0 { 1.0 } else { 0.0 }).unwrap();
        let gen = gen.with_table(crate::model::GenTable::Lik, lik.with_floor()).unwrap();
        let x = CompleteState::new(1, 0, 0, 0, 0, 0);
        let l = likelihood_surprisal(&gen, &x).unwrap();
        assert!((l + crate::model::FLOOR.ln()).abs() < 1e-9);
        assert!(likelihood_surprisal(&gen, &CompleteState { o: 0, ..x }).unwrap() < 1e-11);
    }

    #[test]
    fn uniform_step_objective_is_three_ln2() {
        let spec = ModelSpec::binary();
        let gen = GenerativeModel::<f64>::uniform(spec);
        let rec = RecognitionModel::<f64>::uniform(spec, false);
        let reference = ReferenceModel::uniform(&spec);
        let ctx = Context::filtering(1, 0, Carry::default());
        let s = step_objective(&gen, &rec, &reference, &ctx, &EnumerationBudget::default()).unwrap();
        assert!((s.j - 2.0 * LN2).abs() < 1e-14);
        assert!((s.l - LN2).abs() < 1e-14);
        assert!(s.kl.abs() < 1e-14);
        assert!((s.total - 3.0 * LN2).abs() < 1e-14);
    }

    #[test]
    fn rate_and_advantage() {
        let steps = [StepObjective::new(1.0, 0.0, 0.0), StepObjective::new(3.0, 0.0, 0.0)];
        let r = global_rate(&steps).unwrap();
        assert_eq!(r.mean_rate, 2.0);
        assert_eq!(r.steps, 2);
        assert_eq!(advantage(&steps[1], 2.0), 1.0);
        assert_eq!(advantage(&StepObjective::new(2.0, 0.0, 0.0), 2.0), 0.0);
        assert!(global_rate::<f64>(&[]).is_err());
        let c = vec![StepObjective::new(0.7f64, 0.0, 0.0); 5];
        assert!((global_rate(&c).unwrap().mean_rate - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_edge_cases() {
        let spec = ModelSpec::binary();
        let uniform = ReferenceModel::<f64>::uniform(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beliefs: Vec<Belief<f64>> = (0..3)
            .map(|k| {
                let w: Vec<f64> = (0..16).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
                let z: f64 = w.iter().sum();
                Belief { o: k % 2, probs: w.iter().map(|x| x / z).collect() }
            })
            .collect();
        let h = reference_cross_entropy_rate(&spec, &uniform, &beliefs, Estimator::Exact).unwrap();
        assert!((h - 2.0 * LN2).abs() < 1e-14);
        assert!(reference_cross_entropy_rate::<f64>(&spec, &uniform, &[], Estimator::Exact).is_err());

        let peaked = ReferenceModel::<f64>::peaked(&spec, 1.0).unwrap();
        let l = crate::model::Latents { s1: 1, s2: 0, a1: 1, a2: 1 };
        let mut probs = vec![0.0; 16];
        probs[spec.latent_index(&l)] = 1.0;
        let h = reference_cross_entropy_rate(&spec, &peaked, &[Belief { o: 1, probs }], Estimator::Exact).unwrap();
        assert_eq!(h, 0.0);
    }
}
