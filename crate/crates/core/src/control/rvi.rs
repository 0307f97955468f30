//! Hard relative value iteration for the average-cost problem.
//!
//! The decision at each step is the joint action tuple `(a, a¹, a²)` of the
//! next state; the environment then draws `(s², s¹, o)` from the model's
//! dynamics and likelihood. Because the next step depends on the current
//! state only through its carry `(s¹, s², a)` and the tick phase, the
//! iteration runs on `(phase, carry)` pairs and the bias over complete states
//! is read off from the carry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, CostKind};
use crate::error::{Error, Result};
use crate::model::recognition::Context;
use crate::model::{CompleteState, GenerativeModel, ModelSpec, RecognitionModel, ReferenceModel};
use crate::objectives::step_objective_unchecked;
use crate::oracle::EnumerationBudget;
use crate::scalar::Scalar;

/// Gain and bias of the differential Bellman equation.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialValue<S> {
    /// Optimal long-run mean step cost, nats per step.
    pub gain: S,
    /// `bias[k][x]`: differential cost-to-go from state `x` when the next step has phase `k`.
    pub bias: Vec<Vec<S>>,
    /// State whose phase-0 bias is pinned to zero.
    pub anchor: CompleteState,
    pub period: usize,
}

#[derive(Serialize, Deserialize)]
struct ValueFile {
    version: u32,
    gain: f64,
    bias: Vec<Vec<f64>>,
    anchor: CompleteState,
    period: usize,
}

impl<S: Scalar> DifferentialValue<S> {
    /// Bias over the successors of a transition taken at step `t`.
    pub fn successor_bias(&self, t: usize) -> &[S] {
        &self.bias[t % self.period]
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.gain.is_finite() || self.bias.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("only finite values can be written".into()));
        }
        let file = ValueFile {
            version: crate::model::io::VERSION,
            gain: self.gain.as_f64(),
            bias: self.bias.iter().map(|r| r.iter().map(|b| b.as_f64()).collect()).collect(),
            anchor: self.anchor,
            period: self.period,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ValueFile = serde_json::from_str(text)?;
        if file.version != crate::model::io::VERSION {
            return Err(Error::Version(file.version));
        }
        if file.period == 0 || file.bias.len() != file.period {
            return Err(Error::InvalidArgument("bias table does not match the period".into()));
        }
        Ok(DifferentialValue {
            gain: S::of(file.gain),
            bias: file.bias.iter().map(|r| r.iter().map(|&b| S::of(b)).collect()).collect(),
            anchor: file.anchor,
            period: file.period,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RviConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Self-loop weight of the aperiodicity transform `T_τ = τ·T + (1 − τ)·I`.
    pub tau: f64,
}

impl Default for RviConfig {
    fn default() -> Self {
        RviConfig {
            tol: 1e-8,
            max_iter: 200_000,
            tau: 0.5,
        }
    }
}

/// One outcome of a decision: successor state index, probability, step cost.
type Outcome<S> = (usize, S, S);

/// The controlled transition structure tabulated per `(phase, carry, action)`.
#[derive(Clone, Debug)]
pub struct DecisionProblem<S> {
    spec: ModelSpec,
    period: usize,
    outcomes: Vec<Vec<Outcome<S>>>,
}

impl<S: Scalar> DecisionProblem<S> {
    /// `cost` selects `J + L` of the successor or the filtering step objective
    /// (the latter needs `rec`).
    pub fn build(
        gen: &GenerativeModel<S>,
        rec: Option<&RecognitionModel<S>>,
        reference: &ReferenceModel<S>,
        cost: CostKind,
        budget: &EnumerationBudget,
    ) -> Result<Self> {
        let spec = *gen.spec();
        budget.check_states(&spec)?;
        let rec = match (cost, rec) {
            (CostKind::Objective, None) => {
                return Err(Error::InvalidArgument("the step-objective cost needs a recognition model".into()))
            }
            (_, Some(r)) if r.spec() != &spec => {
                return Err(Error::SpecMismatch("generative and recognition models disagree".into()))
            }
            (_, r) => r,
        };
        let (period, nc, nu) = (spec.tick_period_level2, spec.n_carries(), spec.n_actions());
        let mut outcomes = Vec::with_capacity(period * nc * nu);
        for k in 0..period {
            let t = k + 1;
            for ci in 0..nc {
                let carry = spec.carry(ci);
                let objective: Vec<S> = match (cost, rec) {
                    (CostKind::Objective, Some(rec)) => (0..spec.card_o)
                        .map(|o| step_objective_unchecked(gen, rec, reference, &Context::filtering(t, o, carry)).total)
                        .collect(),
                    _ => Vec::new(),
                };
                for u in 0..nu {
                    let (a, a1, a2) = spec.action(u);
                    let mut out = Vec::new();
                    for s2 in 0..spec.card_s2 {
                        let p2 = gen.slow_prob(&carry, s2, t);
                        if p2 == S::zero() {
                            continue;
                        }
                        for s1 in 0..spec.card_s1 {
                            let p1 = p2 * gen.dyn1.prob(&[carry.s1, s2, carry.a], s1);
                            if p1 == S::zero() {
                                continue;
                            }
                            for o in 0..spec.card_o {
                                let lik = gen.lik.prob(&[a1, s1], o);
                                let p = p1 * lik;
                                if p == S::zero() {
                                    continue;
                                }
                                let c = match cost {
                                    CostKind::Surprisal => reference.surprisal(o, s1, a1, a2) - lik.ln(),
                                    CostKind::Objective => objective[o],
                                };
                                let x = CompleteState { o, s1, s2, a, a1, a2 };
                                out.push((spec.index(&x), p, c));
                            }
                        }
                    }
                    outcomes.push(out);
                }
            }
        }
        Ok(DecisionProblem { spec, period, outcomes })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn period(&self) -> usize {
        self.period
    }

    fn outcomes(&self, k: usize, c: usize, u: usize) -> &[Outcome<S>] {
        &self.outcomes[(k * self.spec.n_carries() + c) * self.spec.n_actions() + u]
    }

    /// `Σ P(x' | c, u)·(cost + w(k+1, carry(x')))` for one action.
    fn q_value(&self, w: &[Vec<S>], carry_of: &[usize], k: usize, c: usize, u: usize) -> S {
        let next = &w[(k + 1) % self.period];
        self.outcomes(k, c, u)
            .iter()
            .fold(S::zero(), |acc, &(x, p, cost)| acc + p * (cost + next[carry_of[x]]))
    }

    /// Bellman operator on a `(phase, carry)` table; returns minima and argmins
    /// (lowest action index among ties).
    fn bellman(&self, w: &[Vec<S>], carry_of: &[usize]) -> (Vec<Vec<S>>, Vec<Vec<usize>>) {
        let (nc, nu) = (self.spec.n_carries(), self.spec.n_actions());
        let mut tw = vec![vec![S::zero(); nc]; self.period];
        let mut arg = vec![vec![0usize; nc]; self.period];
        for k in 0..self.period {
            for c in 0..nc {
                let mut best = S::infinity();
                let mut best_u = 0;
                for u in 0..nu {
                    let q = self.q_value(w, carry_of, k, c, u);
                    if q < best {
                        best = q;
                        best_u = u;
                    }
                }
                tw[k][c] = best;
                arg[k][c] = best_u;
            }
        }
        (tw, arg)
    }

    fn carry_of(&self) -> Vec<usize> {
        self.spec.states().map(|x| self.spec.carry_index(&x.carry())).collect()
    }

    /// Relative value iteration from a zero bias.
    pub fn solve(&self, config: &RviConfig) -> Result<DifferentialValue<S>> {
        self.solve_from(None, config)
    }

    /// Relative value iteration from an optional initial `(phase, carry)` bias.
    pub fn solve_from(&self, init: Option<Vec<Vec<S>>>, config: &RviConfig) -> Result<DifferentialValue<S>> {
        if config.tol.is_nan() || config.tol <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if !(config.tau > 0.0 && config.tau <= 1.0) {
            return Err(Error::InvalidArgument("tau must lie in (0, 1]".into()));
        }
        let nc = self.spec.n_carries();
        let carry_of = self.carry_of();
        let anchor = self.spec.state(0);
        let a = carry_of[0];
        let mut w = init.unwrap_or_else(|| vec![vec![S::zero(); nc]; self.period]);
        if w.len() != self.period || w.iter().any(|r| r.len() != nc) {
            return Err(Error::Dimension {
                what: "initial bias".into(),
                expected: self.period * nc,
                got: w.iter().map(Vec::len).sum(),
            });
        }
        let shift = w[0][a];
        w.iter_mut().flatten().for_each(|v| *v = *v - shift);
        let tau = S::of(config.tau);
        let mut residual = f64::INFINITY;
        for _ in 0..config.max_iter {
            let (tw, _) = self.bellman(&w, &carry_of);
            let gain = tw[0][a];
            let (mut lo, mut hi) = (S::infinity(), S::neg_infinity());
            for (tr, wr) in tw.iter().zip(&w) {
                for (&t, &v) in tr.iter().zip(wr) {
                    lo = lo.min(t - v);
                    hi = hi.max(t - v);
                }
            }
            residual = (hi - lo).as_f64();
            if !residual.is_finite() {
                return Err(Error::NonFinite {
                    what: "relative value iteration residual",
                    iteration: 0,
                });
            }
            // Span stopping rule; the optimal gain lies in [lo, hi].
            if residual <= config.tol {
                let bias = w
                    .iter()
                    .map(|row| carry_of.iter().map(|&c| row[c]).collect())
                    .collect();
                return Ok(DifferentialValue {
                    gain: (lo + hi) * S::of(0.5),
                    bias,
                    anchor,
                    period: self.period,
                });
            }
            for (tr, wr) in tw.iter().zip(w.iter_mut()) {
                for (&t, v) in tr.iter().zip(wr.iter_mut()) {
                    *v = tau * (t - gain) + (S::one() - tau) * *v;
                }
            }
        }
        Err(Error::NotConverged {
            iterations: config.max_iter,
            residual,
        })
    }

    /// Sup-norm residual `max |T(b) − b − g|` of a value on the `(phase, carry)` grid.
    pub fn residual(&self, value: &DifferentialValue<S>) -> S {
        let w = self.carry_table(value);
        let (tw, _) = self.bellman(&w, &self.carry_of());
        let mut r = S::zero();
        for (tr, wr) in tw.iter().zip(&w) {
            for (&t, &v) in tr.iter().zip(wr) {
                r = r.max((t - v - value.gain).abs());
            }
        }
        r
    }

    fn carry_table(&self, value: &DifferentialValue<S>) -> Vec<Vec<S>> {
        let nc = self.spec.n_carries();
        value
            .bias
            .iter()
            .map(|row| {
                let mut w = vec![S::zero(); nc];
                for (x, &b) in row.iter().enumerate() {
                    w[self.spec.carry_index(&self.spec.state(x).carry())] = b;
                }
                w
            })
            .collect()
    }

    /// Greedy action index per `(phase, carry)`.
    pub fn greedy_actions(&self, value: &DifferentialValue<S>) -> Vec<Vec<usize>> {
        self.bellman(&self.carry_table(value), &self.carry_of()).1
    }

    /// The closed-loop chain under the greedy policy of `value`.
    pub fn greedy_chain(&self, value: &DifferentialValue<S>) -> Result<Chain<S>> {
        let actions = self.greedy_actions(value);
        let (n, nc) = (self.spec.n_states(), self.spec.n_carries());
        let mut kernel = vec![S::zero(); self.period * nc * n];
        let mut cost = vec![S::zero(); self.period * nc * n];
        for k in 0..self.period {
            for c in 0..nc {
                let base = (k * nc + c) * n;
                for &(x, p, h) in self.outcomes(k, c, actions[k][c]) {
                    kernel[base + x] = kernel[base + x] + p;
                    cost[base + x] = h;
                }
            }
        }
        Chain::from_parts(self.spec, self.period, kernel, cost)
    }
}

/// Builds the decision problem and runs relative value iteration.
pub fn relative_value_iteration<S: Scalar>(
    gen: &GenerativeModel<S>,
    rec: Option<&RecognitionModel<S>>,
    reference: &ReferenceModel<S>,
    cost: CostKind,
    config: &RviConfig,
    budget: &EnumerationBudget,
) -> Result<DifferentialValue<S>> {
    DecisionProblem::build(gen, rec, reference, cost, budget)?.solve(config)
}
