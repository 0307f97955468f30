//! Brute-force ground truth on tiny instances.
//!
//! Everything here enumerates: trajectories, latent completions, or the
//! full state distribution. Work is refused up front when it would exceed
//! the [`EnumerationBudget`].

use rayon::prelude::*;

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, pairwise_sum};
use crate::model::{Carry, CompleteState, GenerativeModel, ModelSpec, Trajectory};
use crate::scalar::Scalar;

/// Environment variable overriding the budget: `N` (states) or `N,M` (states, trajectories).
pub const BUDGET_ENV: &str = "ASC_ENUM_BUDGET";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_states: usize,
    pub max_trajectories: u128,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_states: 4096,
            max_trajectories: 10_000_000,
        }
    }
}

impl EnumerationBudget {
    /// The default budget, overridden by `ASC_ENUM_BUDGET` when set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(BUDGET_ENV) {
            Ok(v) => Self::parse(&v),
            Err(_) => Ok(Self::default()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse {BUDGET_ENV}={text:?}"));
        let mut budget = Self::default();
        let mut parts = text.split(',').map(str::trim);
        budget.max_states = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if let Some(m) = parts.next() {
            budget.max_trajectories = m.parse().map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(budget)
    }

    pub fn check_states(&self, spec: &ModelSpec) -> Result<()> {
        let n = spec.n_states();
        if n > self.max_states {
            return Err(Error::BudgetExceeded {
                what: "complete states",
                needed: n as u128,
                limit: self.max_states as u128,
            });
        }
        Ok(())
    }

    /// Checks `branching^steps` against the trajectory limit.
    pub fn check_trajectories(&self, branching: usize, steps: usize) -> Result<()> {
        let mut needed: u128 = 1;
        for _ in 0..steps {
            needed = needed.saturating_mul(branching as u128);
        }
        if needed > self.max_trajectories {
            return Err(Error::BudgetExceeded {
                what: "trajectories",
                needed,
                limit: self.max_trajectories,
            });
        }
        Ok(())
    }
}

/// Fills its output with `(next, log p, cost)` for each successor of `(t, prev)`.
type Successors<'a, S> = dyn Fn(usize, &CompleteState, &mut Vec<(CompleteState, S, S)>) + Sync + 'a;

/// Depth-first walk over every positive-probability path of length `steps`.
///
/// `successors(t, prev, out)` fills `out` with `(next, log p, cost)`;
/// `visit(path, log p, total cost)` is called once per complete path.
fn walk<S: Scalar>(
    x0: CompleteState,
    steps: usize,
    successors: &Successors<'_, S>,
    visit: &mut dyn FnMut(&[CompleteState], S, S),
) {
    fn rec<S: Scalar>(
        t: usize,
        steps: usize,
        path: &mut Vec<CompleteState>,
        logp: S,
        cost: S,
        successors: &Successors<'_, S>,
        visit: &mut dyn FnMut(&[CompleteState], S, S),
    ) {
        if t > steps {
            visit(&path[1..], logp, cost);
            return;
        }
        let mut next = Vec::new();
        successors(t, path.last().expect("path starts at x0"), &mut next);
        for (x, lp, c) in next {
            path.push(x);
            rec(t + 1, steps, path, logp + lp, cost + c, successors, visit);
            path.pop();
        }
    }
    let mut path = vec![x0];
    rec(1, steps, &mut path, S::zero(), S::zero(), successors, visit);
}

fn model_successors<S: Scalar>(gen: &GenerativeModel<S>) -> impl Fn(usize, &CompleteState, &mut Vec<(CompleteState, S, S)>) + Sync + '_ {
    move |t, prev, out| {
        let spec = gen.spec();
        let mut row = vec![S::zero(); spec.n_states()];
        gen.transition_row(prev, t, &mut row);
        out.extend(
            row.iter()
                .enumerate()
                .filter(|(_, p)| **p > S::zero())
                .map(|(i, p)| (spec.state(i), p.ln(), S::zero())),
        );
    }
}

fn chain_successors<S: Scalar>(chain: &Chain<S>) -> impl Fn(usize, &CompleteState, &mut Vec<(CompleteState, S, S)>) + Sync + '_ {
    move |t, prev, out| {
        let (row, cost) = (chain.row(t, prev), chain.cost_row(t, prev));
        out.extend(
            row.iter()
                .zip(cost)
                .enumerate()
                .filter(|(_, (p, _))| **p > S::zero())
                .map(|(i, (p, c))| (chain.spec().state(i), p.ln(), *c)),
        );
    }
}

/// Calls `visit(steps, log p)` for every trajectory of positive probability.
pub fn for_each_trajectory<S: Scalar>(
    gen: &GenerativeModel<S>,
    x0: CompleteState,
    steps: usize,
    budget: &EnumerationBudget,
    mut visit: impl FnMut(&[CompleteState], S),
) -> Result<()> {
    gen.spec().check_state(&x0)?;
    budget.check_states(gen.spec())?;
    budget.check_trajectories(gen.spec().n_states(), steps)?;
    walk(x0, steps, &model_successors(gen), &mut |path, lp, _| visit(path, lp));
    Ok(())
}

/// Every trajectory of positive probability with its log-probability.
pub fn enumerate_trajectories<S: Scalar>(
    gen: &GenerativeModel<S>,
    x0: CompleteState,
    steps: usize,
    budget: &EnumerationBudget,
) -> Result<Vec<(Trajectory, S)>> {
    let mut out = Vec::new();
    for_each_trajectory(gen, x0, steps, budget, |path, lp| out.push((Trajectory::new(x0, path.to_vec()), lp)))?;
    Ok(out)
}

fn check_observations(spec: &ModelSpec, obs: &[usize]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::Empty("observation sequence"));
    }
    if let Some(&o) = obs.iter().find(|&&o| o >= spec.card_o) {
        return Err(Error::Dimension {
            what: format!("observation {o}"),
            expected: spec.card_o,
            got: o + 1,
        });
    }
    Ok(())
}

/// Walks all completions `(s¹, s², a, a¹, a²)_{1:T}` consistent with `obs`.
fn for_each_completion<S: Scalar>(
    gen: &GenerativeModel<S>,
    x0: CompleteState,
    obs: &[usize],
    budget: &EnumerationBudget,
    visit: &mut dyn FnMut(&[CompleteState], S),
) -> Result<()> {
    let spec = gen.spec();
    spec.check_state(&x0)?;
    budget.check_states(spec)?;
    check_observations(spec, obs)?;
    budget.check_trajectories(spec.n_states() / spec.card_o, obs.len())?;
    let successors = |t: usize, prev: &CompleteState, out: &mut Vec<(CompleteState, S, S)>| {
        let o = obs[t - 1];
        for li in 0..spec.n_latents() {
            let l = spec.latent(li);
            for a in 0..spec.card_a {
                let x = CompleteState::assemble(o, a, &l);
                let p = gen.transition_prob(prev, &x, t);
                if p > S::zero() {
                    out.push((x, p.ln(), S::zero()));
                }
            }
        }
    };
    walk(x0, obs.len(), &successors, &mut |path, lp, _| visit(path, lp));
    Ok(())
}

/// `log p(o_{1:T} | x_0)`, summing the joint over every latent and action completion.
pub fn exact_marginal_likelihood<S: Scalar>(
    gen: &GenerativeModel<S>,
    x0: CompleteState,
    obs: &[usize],
    budget: &EnumerationBudget,
) -> Result<S> {
    let mut logs = Vec::new();
    for_each_completion(gen, x0, obs, budget, &mut |_, lp| logs.push(lp))?;
    Ok(log_sum_exp(&logs))
}

/// Posterior over completed trajectories given the observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<S> {
    pub log_marginal: S,
    /// Completed trajectories with their joint log-probability and posterior probability.
    pub paths: Vec<(Trajectory, S, S)>,
}

pub fn exact_posterior<S: Scalar>(
    gen: &GenerativeModel<S>,
    x0: CompleteState,
    obs: &[usize],
    budget: &EnumerationBudget,
) -> Result<Posterior<S>> {
    let mut paths = Vec::new();
    for_each_completion(gen, x0, obs, budget, &mut |path, lp| {
        paths.push((Trajectory::new(x0, path.to_vec()), lp, S::zero()))
    })?;
    let logs: Vec<S> = paths.iter().map(|p| p.1).collect();
    let log_marginal = log_sum_exp(&logs);
    if log_marginal == S::neg_infinity() {
        return Err(Error::ImpossibleObservations);
    }
    for p in &mut paths {
        p.2 = (p.1 - log_marginal).exp();
    }
    Ok(Posterior { log_marginal, paths })
}

/// `log p(o_t | x_{t-1})` and the posterior over latents `p(latents | o_t, x_{t-1})`.
///
/// The motor action `a_t` is summed out.
pub fn exact_step_posterior<S: Scalar>(gen: &GenerativeModel<S>, prev: &Carry, o: usize, t: usize) -> Result<(S, Vec<S>)> {
    let spec = gen.spec();
    check_observations(spec, &[o])?;
    if t == 0 {
        return Err(Error::InvalidArgument("time indices start at 1".into()));
    }
    let prev_state = CompleteState {
        s1: prev.s1,
        s2: prev.s2,
        a: prev.a,
        ..CompleteState::default()
    };
    let mut joint = vec![S::neg_infinity(); spec.n_latents()];
    for (li, j) in joint.iter_mut().enumerate() {
        let l = spec.latent(li);
        let logs: Vec<S> = (0..spec.card_a)
            .map(|a| gen.transition_prob(&prev_state, &CompleteState::assemble(o, a, &l), t).ln())
            .collect();
        *j = log_sum_exp(&logs);
    }
    let log_marginal = log_sum_exp(&joint);
    if log_marginal == S::neg_infinity() {
        return Err(Error::ImpossibleObservations);
    }
    Ok((log_marginal, joint.iter().map(|&j| (j - log_marginal).exp()).collect()))
}

/// Expected mean step cost over steps `T_burn+1 ..= T_burn+T_eval`, by exact forward
/// propagation of the state distribution from `x0`.
pub fn exact_average_rate<S: Scalar>(chain: &Chain<S>, x0: CompleteState, t_burn: usize, t_eval: usize) -> Result<S> {
    if t_eval == 0 {
        return Err(Error::Empty("evaluation window"));
    }
    chain.spec().check_state(&x0)?;
    let mut dist = vec![S::zero(); chain.n_states()];
    dist[chain.spec().index(&x0)] = S::one();
    let mut costs = Vec::with_capacity(t_eval);
    for t in 1..=t_burn + t_eval {
        let (next, c) = chain.propagate(t, &dist);
        if t > t_burn {
            costs.push(c);
        }
        dist = next;
    }
    Ok(pairwise_sum(&costs) / S::of_usize(t_eval))
}

/// Stationary distribution at phase 0 and the long-run mean step cost of a
/// phase-periodic chain, by damped power iteration of the one-period map.
pub fn stationary_rate<S: Scalar>(chain: &Chain<S>, tol: f64, max_iter: usize) -> Result<(Vec<S>, S)> {
    let n = chain.n_states();
    let period = chain.phases();
    let mut dist = vec![S::one() / S::of_usize(n); n];
    let half = S::of(0.5);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut d = dist.clone();
        for t in 1..=period {
            d = chain.propagate(t, &d).0;
        }
        residual = 0.0;
        for (x, y) in dist.iter_mut().zip(&d) {
            let new = half * *x + half * *y;
            residual += (new - *x).abs().as_f64();
            *x = new;
        }
        if residual < tol {
            let mut d = dist.clone();
            let mut costs = Vec::with_capacity(period);
            for t in 1..=period {
                let (next, c) = chain.propagate(t, &d);
                costs.push(c);
                d = next;
            }
            return Ok((dist, pairwise_sum(&costs) / S::of_usize(period)));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Backward soft-Bellman values `V_t(x_{t-1})` for t = 1..=T+1.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftValue<S> {
    /// `values[t-1][carry]` is `V_t` for any previous state with that carry; `values[T]` is zero.
    pub values: Vec<Vec<S>>,
    /// `V_1(x_0)`: the differential surprise-to-go from the context state.
    pub root: S,
}

impl<S: Scalar> SoftValue<S> {
    pub fn value(&self, spec: &ModelSpec, t: usize, prev: &CompleteState) -> S {
        self.values[t - 1][spec.carry_index(&prev.carry())]
    }
}

/// `V_t(x_{t-1}) = -log Σ_x K_t(x | x_{t-1}) exp(-h_t(x_{t-1}, x) - V_{t+1}(x))`,
/// `V_{T+1} = 0`, with advantage `h = cost - rate`.
pub fn exact_soft_value<S: Scalar>(chain: &Chain<S>, x0: CompleteState, steps: usize, rate: S) -> Result<SoftValue<S>> {
    let spec = *chain.spec();
    spec.check_state(&x0)?;
    if steps == 0 {
        return Err(Error::Empty("horizon"));
    }
    let nc = spec.n_carries();
    let carry_of: Vec<usize> = spec.states().map(|x| spec.carry_index(&x.carry())).collect();
    let mut values = vec![vec![S::zero(); nc]; steps + 1];
    for t in (1..=steps).rev() {
        let k = chain.phase(t);
        let (head, tail) = values.split_at_mut(t);
        let next = &tail[0];
        for (c, v) in head[t - 1].iter_mut().enumerate() {
            let terms: Vec<S> = chain
                .row_at(k, c)
                .iter()
                .zip(chain.cost_row_at(k, c))
                .zip(&carry_of)
                .filter(|((p, _), _)| **p > S::zero())
                .map(|((p, h), &cx)| p.ln() - (*h - rate) - next[cx])
                .collect();
            *v = -log_sum_exp(&terms);
        }
    }
    let root = values[0][spec.carry_index(&x0.carry())];
    Ok(SoftValue { values, root })
}

/// `-log Σ_traj p(traj) exp(-Σ_t h_t)` by exhaustive trajectory enumeration.
///
/// Enumeration is split by first successor across worker threads; the
/// partial log-sums are combined in a fixed order.
pub fn exact_path_integral_value<S: Scalar>(
    chain: &Chain<S>,
    x0: CompleteState,
    steps: usize,
    rate: S,
    budget: &EnumerationBudget,
) -> Result<S> {
    let spec = chain.spec();
    spec.check_state(&x0)?;
    budget.check_states(spec)?;
    if steps == 0 {
        return Err(Error::Empty("horizon"));
    }
    budget.check_trajectories(spec.n_states(), steps)?;
    let successors = chain_successors(chain);
    let mut first = Vec::new();
    successors(1, &x0, &mut first);
    let partial: Vec<S> = first
        .par_iter()
        .map(|&(x1, lp1, c1)| {
            let mut logs = Vec::new();
            walk(x1, steps - 1, &|t, prev, out| successors(t + 1, prev, out), &mut |_, lp, c| {
                logs.push(lp1 + lp - (c1 + c - S::of_usize(steps) * rate));
            });
            log_sum_exp(&logs)
        })
        .collect();
    Ok(-log_sum_exp(&partial))
}
