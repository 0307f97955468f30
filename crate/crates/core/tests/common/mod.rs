//! Naive reference implementations for integration tests.
//!
//! Everything here is built from single-entry table lookups and nested loops
//! over raw indices, without the crate's composite evaluators.

#![allow(dead_code, clippy::needless_range_loop)]

use asc::model::{Carry, CompleteState, Context, GenTable, Latents, ModelSpec, RecTable};
use asc::{GenerativeModel, RecognitionModel, ReferenceModel};

pub type Gen = GenerativeModel<f64>;
pub type Rec = RecognitionModel<f64>;
pub type Ref = ReferenceModel<f64>;

pub fn ticks(spec: &ModelSpec, t: usize) -> bool {
    (t - 1).is_multiple_of(spec.tick_period_level2)
}

pub fn all_states(spec: &ModelSpec) -> Vec<CompleteState> {
    let mut out = Vec::new();
    for o in 0..spec.card_o {
        for s1 in 0..spec.card_s1 {
            for s2 in 0..spec.card_s2 {
                for a in 0..spec.card_a {
                    for a1 in 0..spec.card_a1 {
                        for a2 in 0..spec.card_a2 {
                            out.push(CompleteState { o, s1, s2, a, a1, a2 });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn all_latents(spec: &ModelSpec) -> Vec<Latents> {
    let mut out = Vec::new();
    for s2 in 0..spec.card_s2 {
        for a2 in 0..spec.card_a2 {
            for s1 in 0..spec.card_s1 {
                for a1 in 0..spec.card_a1 {
                    out.push(Latents { s1, s2, a1, a2 });
                }
            }
        }
    }
    out
}

fn p(gen: &Gen, which: GenTable, parents: &[usize], child: usize) -> f64 {
    gen.table(which).prob(parents, child)
}

/// Product of the six factors, with the slow hold on non-tick steps.
pub fn transition(gen: &Gen, prev: &CompleteState, x: &CompleteState, t: usize) -> f64 {
    let spec = gen.spec();
    let slow = if ticks(spec, t) {
        p(gen, GenTable::Dyn2, &[prev.s2, prev.a], x.s2)
    } else if x.s2 == prev.s2 {
        1.0
    } else {
        0.0
    };
    slow * p(gen, GenTable::Pol2, &[x.s2], x.a2)
        * p(gen, GenTable::Dyn1, &[prev.s1, x.s2, prev.a], x.s1)
        * p(gen, GenTable::Pol1, &[x.s1, x.a2], x.a1)
        * p(gen, GenTable::Lik, &[x.a1, x.s1], x.o)
        * p(gen, GenTable::Pol0, &[x.o, x.a1], x.a)
}

/// Prior over latents given the previous state: the transition summed over `o` and `a`.
pub fn latent_prior(gen: &Gen, carry: &Carry, l: &Latents, t: usize) -> f64 {
    let spec = gen.spec();
    let prev = CompleteState {
        s1: carry.s1,
        s2: carry.s2,
        a: carry.a,
        ..Default::default()
    };
    let mut total = 0.0;
    for o in 0..spec.card_o {
        for a in 0..spec.card_a {
            total += transition(gen, &prev, &CompleteState::assemble(o, a, l), t);
        }
    }
    total
}

/// Joint of `o` and latents given the previous state, motor action summed out.
pub fn obs_latent_joint(gen: &Gen, carry: &Carry, o: usize, l: &Latents, t: usize) -> f64 {
    let prev = CompleteState {
        s1: carry.s1,
        s2: carry.s2,
        a: carry.a,
        ..Default::default()
    };
    (0..gen.spec().card_a)
        .map(|a| transition(gen, &prev, &CompleteState::assemble(o, a, l), t))
        .sum()
}

pub fn rec_prob(rec: &Rec, l: &Latents, ctx: &Context) -> f64 {
    let spec = rec.spec();
    let mut parents = vec![
        ctx.o,
        ctx.action.unwrap_or(spec.card_a),
        ctx.carry.s1,
        ctx.carry.s2,
        ctx.carry.a,
        ctx.next_obs.unwrap_or(spec.card_o),
    ];
    let f_s2 = if ticks(spec, ctx.t) {
        rec.table(RecTable::S2).table().prob(&parents, l.s2)
    } else if l.s2 == ctx.carry.s2 {
        1.0
    } else {
        0.0
    };
    parents.push(l.s2);
    let f_a2 = rec.table(RecTable::A2).table().prob(&parents, l.a2);
    parents.push(l.a2);
    let f_s1 = rec.table(RecTable::S1).table().prob(&parents, l.s1);
    parents.push(l.s1);
    let f_a1 = rec.table(RecTable::A1).table().prob(&parents, l.a1);
    f_s2 * f_a2 * f_s1 * f_a1
}

pub fn reference_surprisal(reference: &Ref, x: &CompleteState) -> f64 {
    -reference.ref_o().prob(&[x.a1], x.o).ln() - reference.ref_s1().prob(&[x.a2], x.s1).ln()
}

pub fn likelihood_surprisal(gen: &Gen, x: &CompleteState) -> f64 {
    -p(gen, GenTable::Lik, &[x.a1, x.s1], x.o).ln()
}

pub struct NaiveFreeEnergy {
    pub vfe: f64,
    pub log_marginal: f64,
    pub kl_posterior: f64,
}

pub fn free_energy(gen: &Gen, rec: &Rec, ctx: &Context) -> NaiveFreeEnergy {
    let spec = gen.spec();
    let lats = all_latents(spec);
    let joint: Vec<f64> = lats.iter().map(|l| obs_latent_joint(gen, &ctx.carry, ctx.o, l, ctx.t)).collect();
    let marginal: f64 = joint.iter().sum();
    let mut vfe = 0.0;
    let mut kl = 0.0;
    for (l, &j) in lats.iter().zip(&joint) {
        let q = rec_prob(rec, l, ctx);
        if q == 0.0 {
            continue;
        }
        let lik = p(gen, GenTable::Lik, &[l.a1, l.s1], ctx.o);
        let prior = latent_prior(gen, &ctx.carry, l, ctx.t);
        vfe += q * (-lik.ln() + q.ln() - prior.ln());
        kl += q * (q.ln() - (j / marginal).ln());
    }
    NaiveFreeEnergy {
        vfe,
        log_marginal: marginal.ln(),
        kl_posterior: kl,
    }
}

/// `E_q[J] + E_q[L] + KL(q ‖ prior)` for the belief at `ctx`.
pub fn step_total(gen: &Gen, rec: &Rec, reference: &Ref, ctx: &Context) -> f64 {
    let spec = gen.spec();
    let mut total = 0.0;
    for l in all_latents(spec) {
        let q = rec_prob(rec, &l, ctx);
        if q == 0.0 {
            continue;
        }
        let x = CompleteState::assemble(ctx.o, 0, &l);
        let prior = latent_prior(gen, &ctx.carry, &l, ctx.t);
        total += q * (reference_surprisal(reference, &x) + likelihood_surprisal(gen, &x) + q.ln() - prior.ln());
    }
    total
}

/// A dense time-periodic chain: `prob[k][i][j]` and `cost[k][i][j]` for a
/// transition from state `i` to state `j` at a step of phase `k`.
pub struct DenseChain {
    pub states: Vec<CompleteState>,
    pub prob: Vec<Vec<Vec<f64>>>,
    pub cost: Vec<Vec<Vec<f64>>>,
}

impl DenseChain {
    pub fn phases(&self) -> usize {
        self.prob.len()
    }

    pub fn index(&self, x: &CompleteState) -> usize {
        self.states.iter().position(|s| s == x).expect("state is in range")
    }

    pub fn from_fn(spec: &ModelSpec, mut f: impl FnMut(usize, &CompleteState, &CompleteState) -> (f64, f64)) -> Self {
        let states = all_states(spec);
        let phases = spec.tick_period_level2;
        let mut prob = vec![vec![vec![0.0; states.len()]; states.len()]; phases];
        let mut cost = prob.clone();
        for k in 0..phases {
            for (i, prev) in states.iter().enumerate() {
                for (j, x) in states.iter().enumerate() {
                    let (pr, c) = f(k + 1, prev, x);
                    prob[k][i][j] = pr;
                    cost[k][i][j] = c;
                }
            }
        }
        DenseChain { states, prob, cost }
    }

    /// The generative model with `J + L` of the successor as cost.
    pub fn feedforward(gen: &Gen, reference: &Ref) -> Self {
        Self::from_fn(gen.spec(), |t, prev, x| {
            (transition(gen, prev, x, t), reference_surprisal(reference, x) + likelihood_surprisal(gen, x))
        })
    }

    /// Predictive observation, filtering belief, motor policy; cost is the
    /// filtering step objective.
    pub fn feedback(gen: &Gen, rec: &Rec, reference: &Ref) -> Self {
        let spec = *gen.spec();
        let lats = all_latents(&spec);
        let mut cache = std::collections::HashMap::new();
        Self::from_fn(&spec, |t, prev, x| {
            let carry = prev.carry();
            let (pred, total) = *cache.entry((t, carry, x.o)).or_insert_with(|| {
                let pred: f64 = lats.iter().map(|l| obs_latent_joint(gen, &carry, x.o, l, t)).sum();
                (pred, step_total(gen, rec, reference, &Context::filtering(t, x.o, carry)))
            });
            let q = rec_prob(rec, &x.latents(), &Context::filtering(t, x.o, carry));
            let pi = gen.table(GenTable::Pol0).prob(&[x.o, x.a1], x.a);
            (pred * q * pi, total)
        })
    }

    /// Visits every trajectory of `steps` transitions from `x0` with
    /// nonzero probability, passing its probability and total cost.
    pub fn for_each_path(&self, x0: &CompleteState, steps: usize, mut f: impl FnMut(f64, f64)) {
        fn go(c: &DenseChain, i: usize, t: usize, left: usize, pr: f64, cost: f64, f: &mut dyn FnMut(f64, f64)) {
            if left == 0 {
                f(pr, cost);
                return;
            }
            let k = (t - 1) % c.phases();
            for j in 0..c.states.len() {
                let p = c.prob[k][i][j];
                if p > 0.0 {
                    go(c, j, t + 1, left - 1, pr * p, cost + c.cost[k][i][j], f);
                }
            }
        }
        go(self, self.index(x0), 1, steps, 1.0, 0.0, &mut f);
    }

    /// `−log E[exp(−Σ (cost − rate))]` by enumeration, with a max shift.
    pub fn path_integral(&self, x0: &CompleteState, steps: usize, rate: f64) -> f64 {
        let mut paths = Vec::new();
        self.for_each_path(x0, steps, |pr, c| paths.push((pr, c - steps as f64 * rate)));
        let shift = paths.iter().map(|&(_, h)| -h).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = paths.iter().map(|&(pr, h)| pr * (-h - shift).exp()).sum();
        -(sum.ln() + shift)
    }

    /// `E[Σ (cost − rate)]` by enumeration.
    pub fn expected_advantage(&self, x0: &CompleteState, steps: usize, rate: f64) -> f64 {
        let mut total = 0.0;
        self.for_each_path(x0, steps, |pr, c| total += pr * (c - steps as f64 * rate));
        total
    }

    /// Long-run mean cost of the chain, from the stationary distribution of
    /// the lazy one-period map.
    pub fn stationary_mean_cost(&self) -> f64 {
        let n = self.states.len();
        let step = |d: &[f64], k: usize| -> (Vec<f64>, f64) {
            let mut next = vec![0.0; n];
            let mut c = 0.0;
            for i in 0..n {
                if d[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[j] += d[i] * self.prob[k][i][j];
                    c += d[i] * self.prob[k][i][j] * self.cost[k][i][j];
                }
            }
            (next, c)
        };
        let mut d = vec![1.0 / n as f64; n];
        for _ in 0..1_000_000 {
            let mut e = d.clone();
            for k in 0..self.phases() {
                e = step(&e, k).0;
            }
            let lazy: Vec<f64> = d.iter().zip(&e).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
            let delta: f64 = lazy.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum();
            d = lazy;
            if delta < 1e-15 {
                break;
            }
        }
        let mut total = 0.0;
        for k in 0..self.phases() {
            let (next, c) = step(&d, k);
            total += c;
            d = next;
        }
        total / self.phases() as f64
    }
}
