//! Rollout chains: a transition density over complete states together with
//! a per-transition step cost, tabulated once per tick phase.
//!
//! Both densities read the previous state only through its carry
//! `(s¹, s², a)`, so rows are stored per `(phase, carry)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::recognition::{Context, RecognitionModel};
use crate::model::table::sample_index;
use crate::model::{CompleteState, GenerativeModel, ModelSpec, ReferenceModel};
use crate::objectives::step_objective_unchecked;
use crate::oracle::EnumerationBudget;
use crate::scalar::Scalar;

/// Which transition density drives a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    /// The generative model with its embedded policies, `p(x_t | x_{t-1})`.
    Feedforward,
    /// Observation from the model predictive, latents from the filtering
    /// recognition belief, motor action from `π(a | o, a¹)`.
    Feedback,
}

/// Which step cost is charged on a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    /// `J(x_t) + L(x_t)`: reference plus likelihood surprisal of the sampled state.
    Surprisal,
    /// The full step objective of the filtering belief at `(o_t, x_{t-1})`.
    Objective,
}

impl Density {
    /// The cost paired with each density in the path-integral values.
    pub fn default_cost(self) -> CostKind {
        match self {
            Density::Feedforward => CostKind::Surprisal,
            Density::Feedback => CostKind::Objective,
        }
    }
}

/// A tabulated, phase-periodic Markov chain over complete states.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain<S> {
    spec: ModelSpec,
    phases: usize,
    kernel: Vec<S>,
    cost: Vec<S>,
}

impl<S: Scalar> Chain<S> {
    /// Builds a chain from explicit `(phase, carry, state)` tables.
    ///
    /// `kernel` and `cost` are laid out as `[(phase·n_carries + carry)·n_states + x]`.
    pub fn from_parts(spec: ModelSpec, phases: usize, kernel: Vec<S>, cost: Vec<S>) -> Result<Self> {
        let n = phases * spec.n_carries() * spec.n_states();
        if phases == 0 {
            return Err(Error::InvalidArgument("a chain needs at least one phase".into()));
        }
        for (what, v) in [("chain kernel", &kernel), ("chain cost", &cost)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    what: what.into(),
                    expected: n,
                    got: v.len(),
                });
            }
        }
        let chain = Chain {
            spec,
            phases,
            kernel,
            cost,
        };
        for k in 0..phases {
            for c in 0..spec.n_carries() {
                let row = chain.row_at(k, c);
                let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
                if row.iter().any(|p| *p < S::zero()) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidTable {
                        name: "chain kernel".into(),
                        reason: format!("row (phase {k}, carry {c}) sums to {sum}"),
                    });
                }
            }
        }
        Ok(chain)
    }

    pub fn build(
        density: Density,
        cost: CostKind,
        gen: &GenerativeModel<S>,
        rec: Option<&RecognitionModel<S>>,
        reference: &ReferenceModel<S>,
        budget: &EnumerationBudget,
    ) -> Result<Self> {
        let spec = *gen.spec();
        budget.check_states(&spec)?;
        if let Some(rec) = rec {
            if rec.spec() != &spec {
                return Err(Error::SpecMismatch("generative and recognition models disagree".into()));
            }
        }
        let need_rec = || rec.ok_or_else(|| Error::InvalidArgument("this chain needs a recognition model".into()));
        if density == Density::Feedback || cost == CostKind::Objective {
            need_rec()?;
        }
        let (n, nc, phases) = (spec.n_states(), spec.n_carries(), spec.tick_period_level2);
        let mut kernel = vec![S::zero(); phases * nc * n];
        let mut costs = vec![S::zero(); phases * nc * n];
        for k in 0..phases {
            let t = k + 1;
            for ci in 0..nc {
                let carry = spec.carry(ci);
                let base = (k * nc + ci) * n;
                let row = &mut kernel[base..base + n];
                match density {
                    Density::Feedforward => {
                        let prev = CompleteState {
                            s1: carry.s1,
                            s2: carry.s2,
                            a: carry.a,
                            ..CompleteState::default()
                        };
                        gen.transition_row(&prev, t, row);
                    }
                    Density::Feedback => feedback_row(gen, need_rec()?, &carry, t, row),
                }
                let crow = &mut costs[base..base + n];
                match cost {
                    CostKind::Surprisal => {
                        for (i, c) in crow.iter_mut().enumerate() {
                            let x = spec.state(i);
                            *c = reference.surprisal(x.o, x.s1, x.a1, x.a2) - gen.lik.prob(&[x.a1, x.s1], x.o).ln();
                        }
                    }
                    CostKind::Objective => {
                        let rec = need_rec()?;
                        let per_o: Vec<S> = (0..spec.card_o)
                            .map(|o| step_objective_unchecked(gen, rec, reference, &Context::filtering(t, o, carry)).total)
                            .collect();
                        for (i, c) in crow.iter_mut().enumerate() {
                            *c = per_o[spec.state(i).o];
                        }
                    }
                }
            }
        }
        Ok(Chain {
            spec,
            phases,
            kernel,
            cost: costs,
        })
    }

    pub fn feedforward(gen: &GenerativeModel<S>, reference: &ReferenceModel<S>, budget: &EnumerationBudget) -> Result<Self> {
        Self::build(Density::Feedforward, CostKind::Surprisal, gen, None, reference, budget)
    }

    pub fn feedback(
        gen: &GenerativeModel<S>,
        rec: &RecognitionModel<S>,
        reference: &ReferenceModel<S>,
        budget: &EnumerationBudget,
    ) -> Result<Self> {
        Self::build(Density::Feedback, CostKind::Objective, gen, Some(rec), reference, budget)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    /// Number of distinct phases; the chain at step `t` uses phase `(t-1) mod phases`.
    pub fn phases(&self) -> usize {
        self.phases
    }

    #[inline]
    pub fn phase(&self, t: usize) -> usize {
        (t - 1) % self.phases
    }

    #[inline]
    pub fn row_at(&self, phase: usize, carry: usize) -> &[S] {
        let n = self.spec.n_states();
        let base = (phase * self.spec.n_carries() + carry) * n;
        &self.kernel[base..base + n]
    }

    #[inline]
    pub fn cost_row_at(&self, phase: usize, carry: usize) -> &[S] {
        let n = self.spec.n_states();
        let base = (phase * self.spec.n_carries() + carry) * n;
        &self.cost[base..base + n]
    }

    /// Transition probabilities out of `prev` at step `t`.
    #[inline]
    pub fn row(&self, t: usize, prev: &CompleteState) -> &[S] {
        self.row_at(self.phase(t), self.spec.carry_index(&prev.carry()))
    }

    /// Step costs of every transition out of `prev` at step `t`.
    #[inline]
    pub fn cost_row(&self, t: usize, prev: &CompleteState) -> &[S] {
        self.cost_row_at(self.phase(t), self.spec.carry_index(&prev.carry()))
    }

    pub fn prob(&self, t: usize, prev: &CompleteState, x: &CompleteState) -> S {
        self.row(t, prev)[self.spec.index(x)]
    }

    pub fn cost(&self, t: usize, prev: &CompleteState, x: &CompleteState) -> S {
        self.cost_row(t, prev)[self.spec.index(x)]
    }

    pub fn sample<R: Rng>(&self, t: usize, prev: &CompleteState, rng: &mut R) -> CompleteState {
        self.spec.state(sample_index(self.row(t, prev), rng))
    }

    /// Marginal over carries of a distribution over complete states.
    pub fn carry_marginal(&self, dist: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.spec.n_carries()];
        for (i, &p) in dist.iter().enumerate() {
            if p > S::zero() {
                let c = self.spec.carry_index(&self.spec.state(i).carry());
                out[c] = out[c] + p;
            }
        }
        out
    }

    /// One step of forward propagation; returns the next distribution and the expected step cost.
    pub fn propagate(&self, t: usize, dist: &[S]) -> (Vec<S>, S) {
        let k = self.phase(t);
        let mu = self.carry_marginal(dist);
        let mut next = vec![S::zero(); self.n_states()];
        let mut cost = S::zero();
        for (c, &m) in mu.iter().enumerate() {
            if m == S::zero() {
                continue;
            }
            let (row, crow) = (self.row_at(k, c), self.cost_row_at(k, c));
            let mut local = S::zero();
            for ((n, &p), &h) in next.iter_mut().zip(row).zip(crow) {
                if p > S::zero() {
                    *n = *n + m * p;
                    local = local + p * h;
                }
            }
            cost = cost + m * local;
        }
        (next, cost)
    }

    /// Total raw cost `Σ_t cost_t` of one sampled trajectory of `steps` transitions.
    pub fn rollout<R: Rng>(&self, x0: CompleteState, steps: usize, rng: &mut R) -> (Vec<CompleteState>, S) {
        let mut path = Vec::with_capacity(steps);
        let mut prev = x0;
        let mut total = S::zero();
        for t in 1..=steps {
            let x = self.sample(t, &prev, rng);
            total = total + self.cost(t, &prev, &x);
            path.push(x);
            prev = x;
        }
        (path, total)
    }

    /// Total costs of `n` independent rollouts; rollout `i` draws from
    /// stream `i` of a ChaCha generator seeded with `seed`, so the result does
    /// not depend on the thread count.
    pub fn rollout_totals(&self, x0: CompleteState, steps: usize, n: usize, seed: u64) -> Vec<S> {
        use rand::SeedableRng;
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                self.rollout(x0, steps, &mut rng).1
            })
            .collect()
    }
}

/// `P(o | carry)·q(latents | o, carry)·π(a | o, a¹)` for every successor state.
pub(crate) fn feedback_row<S: Scalar>(
    gen: &GenerativeModel<S>,
    rec: &RecognitionModel<S>,
    carry: &crate::model::Carry,
    t: usize,
    out: &mut [S],
) {
    let spec = gen.spec();
    out.iter_mut().for_each(|p| *p = S::zero());
    let pred = gen.obs_predictive(carry, t);
    for (o, &po) in pred.iter().enumerate() {
        if po == S::zero() {
            continue;
        }
        let q = rec.belief(&Context::filtering(t, o, *carry));
        for (li, &ql) in q.iter().enumerate() {
            if ql == S::zero() {
                continue;
            }
            let l = spec.latent(li);
            for a in 0..spec.card_a {
                let x = CompleteState::assemble(o, a, &l);
                out[spec.index(&x)] = po * ql * gen.pol0.prob(&[o, l.a1], a);
            }
        }
    }
}
