//! The agent-environment loop.
//!
//! The environment holds the true `(s¹, s²)` and emits `o_t` from its own
//! likelihood; the agent sees only `o_t`, draws its latents from the
//! filtering recognition belief and its motor action from `π(a | o, a¹)`.
//! Step objectives are logged once the next observation is in (lag-1
//! smoothing); the final step uses the terminal belief.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::env::Environment;
use super::trace::{StepRecord, Trace};
use crate::error::{Error, Result};
use crate::logspace::pairwise_sum;
use crate::model::{CompleteState, Context, GenerativeModel, RecognitionModel, ReferenceModel};
use crate::objectives::{step_objective_unchecked, StepObjective};
use crate::scalar::Scalar;

/// The models an agent acts and learns with.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent<S> {
    pub gen: GenerativeModel<S>,
    pub rec: RecognitionModel<S>,
    pub reference: ReferenceModel<S>,
}

impl<S: Scalar> Agent<S> {
    pub fn new(gen: GenerativeModel<S>, rec: RecognitionModel<S>, reference: ReferenceModel<S>) -> Result<Self> {
        if gen.spec() != rec.spec() {
            return Err(Error::SpecMismatch("generative and recognition models disagree".into()));
        }
        Ok(Agent { gen, rec, reference })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation<S> {
    /// Mean over episodes of the per-episode global rate.
    pub mean_rate: S,
    pub stderr: S,
    pub per_episode: Vec<S>,
    /// Mean over episodes of the per-episode mean reference surprisal.
    pub mean_reference_surprisal: S,
    pub reference_stderr: S,
    pub per_episode_reference: Vec<S>,
}

/// Runs one episode of `steps` steps from `x0` with a ChaCha generator seeded by `seed`.
pub fn run_episode<S: Scalar>(
    agent: &Agent<S>,
    env: &Environment<S>,
    x0: CompleteState,
    steps: usize,
    seed: u64,
) -> Result<Trace<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = episode_with(agent, env, x0, steps, &mut rng)?;
    trace.seed = seed;
    Ok(trace)
}

fn episode_with<S: Scalar, R: Rng>(
    agent: &Agent<S>,
    env: &Environment<S>,
    x0: CompleteState,
    steps: usize,
    rng: &mut R,
) -> Result<Trace<S>> {
    let spec = *agent.gen.spec();
    if env.spec != spec {
        return Err(Error::SpecMismatch("agent and environment disagree".into()));
    }
    spec.check_state(&x0)?;
    if steps == 0 {
        return Err(Error::Empty("episode steps"));
    }
    let (mut s1, mut s2) = (x0.s1, x0.s2);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0);
    for t in 1..=steps {
        let prev = states[t - 1];
        if spec.slow_ticks(t) {
            s2 = env.dyn2.sample(&[s2, prev.a], rng);
        }
        s1 = env.dyn1.sample(&[s1, s2, prev.a], rng);
        let o = env.lik.sample(&[prev.a1, s1], rng);
        let l = agent.rec.sample(&Context::filtering(t, o, prev.carry()), rng);
        let a = agent.gen.pol0.sample(&[o, l.a1], rng);
        states.push(CompleteState::assemble(o, a, &l));
    }
    let mut records = Vec::with_capacity(steps);
    let mut running = S::zero();
    for t in 1..=steps {
        let x = states[t];
        let carry = states[t - 1].carry();
        let ctx = if t < steps {
            Context::smoothing(t, x.o, x.a, carry, states[t + 1].o)
        } else {
            Context::terminal(t, x.o, x.a, carry)
        };
        let objective: StepObjective<S> = step_objective_unchecked(&agent.gen, &agent.rec, &agent.reference, &ctx);
        if !objective.total.is_finite() {
            return Err(Error::NonFinite {
                what: "step objective",
                iteration: t,
            });
        }
        running = running + objective.total;
        let running_rate = running / S::of_usize(t);
        records.push(StepRecord {
            t,
            state: x,
            objective,
            running_rate,
            advantage: objective.total - running_rate,
        });
    }
    Ok(Trace {
        episode: 0,
        seed: 0,
        config_digest: String::new(),
        records,
    })
}

fn mean_and_stderr<S: Scalar>(xs: &[S]) -> (S, S) {
    let n = S::of_usize(xs.len());
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, S::zero());
    }
    let dev: Vec<S> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - S::one()) / n).sqrt())
}

/// Runs `episodes` independent episodes; episode `i` draws from stream `i`
/// of a ChaCha generator seeded with `seed`, so two agents evaluated with the
/// same seed see paired randomness.
pub fn evaluate<S: Scalar>(
    agent: &Agent<S>,
    env: &Environment<S>,
    x0: CompleteState,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<Evaluation<S>> {
    if episodes == 0 {
        return Err(Error::Empty("episodes"));
    }
    let traces: Vec<Trace<S>> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut trace = episode_with(agent, env, x0, steps, &mut rng)?;
            trace.episode = i;
            trace.seed = seed;
            Ok(trace)
        })
        .collect::<Result<_>>()?;
    let per_episode: Vec<S> = traces.iter().map(|t| t.rate().expect("non-empty")).collect();
    let per_episode_reference: Vec<S> = traces
        .iter()
        .map(|t| t.mean_reference_surprisal().expect("non-empty"))
        .collect();
    let (mean_rate, stderr) = mean_and_stderr(&per_episode);
    let (mean_reference_surprisal, reference_stderr) = mean_and_stderr(&per_episode_reference);
    Ok(Evaluation {
        mean_rate,
        stderr,
        per_episode,
        mean_reference_surprisal,
        reference_stderr,
        per_episode_reference,
    })
}
