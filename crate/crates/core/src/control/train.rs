//! Gradient descent on the differential free energy of the feedback chain.
//!
//! The objective is `F = E[Σ_{t=1}^T (𝒥(o_t, x_{t-1}) − rate)]` under the
//! chain that draws `o_t` from the model predictive, latents from the
//! filtering recognition belief and `a_t` from `π(a | o, a¹)`. Exact
//! gradients come from one backward sweep of carry values and one forward
//! sweep of carry marginals; a score-function estimator is available for
//! Monte Carlo training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::model::recognition::{context_at, context_index, n_contexts, Context, RecTable, RecognitionModel};
use crate::model::table::sample_index;
use crate::model::{Carry, CompleteState, GenTable, GenerativeModel, Latents, ParamTable, ReferenceModel};
use crate::objectives::Estimator;
use crate::oracle::{stationary_rate, EnumerationBudget};
use crate::scalar::Scalar;

/// Which parameter groups receive gradient steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrainTargets {
    /// The four recognition tables.
    pub recognition: bool,
    /// The motor policy `π(a | o, a¹)`.
    pub motor: bool,
    /// The reference policies `π(a¹ | s¹, a²)` and `π(a² | s²)`.
    pub references: bool,
    /// Likelihood and latent dynamics.
    pub dynamics: bool,
}

impl Default for TrainTargets {
    fn default() -> Self {
        TrainTargets {
            recognition: true,
            motor: true,
            references: true,
            dynamics: false,
        }
    }
}

impl TrainTargets {
    fn gen_tables(&self) -> Vec<GenTable> {
        GenTable::ALL
            .into_iter()
            .filter(|&w| match w {
                GenTable::Pol0 => self.motor,
                GenTable::Pol1 | GenTable::Pol2 => self.references,
                _ => self.dynamics,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Horizon `T` of the objective.
    pub steps: usize,
    pub iters: usize,
    pub lr: f64,
    /// Re-estimate the rate every this many iterations; `None` keeps the initial rate.
    pub rate_every: Option<usize>,
    /// Initial rate; estimated from the initial chain when absent.
    pub rate: Option<f64>,
    /// Halve the step until the objective does not increase.
    pub step_halving: bool,
    /// Also descend the smoothed and terminal recognition rows.
    pub retrospective: bool,
    pub floor: bool,
    pub targets: TrainTargets,
    pub estimator: Estimator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10,
            iters: 100,
            lr: 0.05,
            rate_every: Some(10),
            rate: None,
            step_halving: false,
            retrospective: true,
            floor: true,
            targets: TrainTargets::default(),
            estimator: Estimator::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport<S> {
    pub iterations: usize,
    /// Differential free energy at the start of each iteration.
    pub objective_trace: Vec<S>,
    /// Euclidean norm of the logit gradient at the start of each iteration.
    pub grad_norm_trace: Vec<S>,
    /// Rate in force at each iteration.
    pub rate_trace: Vec<S>,
    /// Long-run mean step objective of the final feedback chain.
    pub final_rate: S,
}

/// Gradients with respect to table entries.
struct ProbGrads<S> {
    rec: [Vec<S>; 4],
    gen: [Vec<S>; 6],
}

impl<S: Scalar> ProbGrads<S> {
    fn zeros(gen: &GenerativeModel<S>, rec: &RecognitionModel<S>) -> Self {
        ProbGrads {
            rec: RecTable::ALL.map(|w| vec![S::zero(); rec.table(w).table().probs().len()]),
            gen: GenTable::ALL.map(|w| vec![S::zero(); gen.table(w).probs().len()]),
        }
    }

    fn add(&mut self, other: &ProbGrads<S>) {
        for (a, b) in self.rec.iter_mut().zip(&other.rec).chain(self.gen.iter_mut().zip(&other.gen)) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        }
    }

    fn scale(&mut self, s: S) {
        for v in self.rec.iter_mut().chain(self.gen.iter_mut()) {
            v.iter_mut().for_each(|x| *x = *x * s);
        }
    }
}

fn gen_slot(which: GenTable) -> usize {
    GenTable::ALL.iter().position(|&w| w == which).expect("listed")
}

/// Per-(phase, carry) quantities shared by the sweeps.
struct Local<S> {
    prior: Vec<S>,
    pred: Vec<S>,
    /// `q[o * n_latents + l]`, filtering belief.
    q: Vec<S>,
    /// `J + L + ln q − ln prior`, zero where `q = 0`.
    cost: Vec<S>,
    /// `𝒥(o, carry)`.
    obj: Vec<S>,
}

struct Sweep<S> {
    objective: S,
    /// `values[t][carry]` for t = 1..=T+1 at index t-1.
    values: Vec<Vec<S>>,
    /// `marginals[t][carry]`: carry distribution of `x_t`, t = 0..T-1.
    marginals: Vec<Vec<S>>,
}

/// Models under training together with the logits of the trained generative tables.
#[derive(Clone, Debug)]
pub struct Learner<S> {
    gen: GenerativeModel<S>,
    rec: RecognitionModel<S>,
    reference: ReferenceModel<S>,
    params: Vec<(GenTable, ParamTable<S>)>,
    targets: TrainTargets,
    x0: CompleteState,
    steps: usize,
    budget: EnumerationBudget,
}

impl<S: Scalar> Learner<S> {
    /// Trained generative tables are re-expressed as softmax logits `ln p`
    /// (with the floor applied when `floor` is set).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gen: GenerativeModel<S>,
        rec: RecognitionModel<S>,
        reference: ReferenceModel<S>,
        x0: CompleteState,
        steps: usize,
        targets: TrainTargets,
        floor: bool,
        budget: EnumerationBudget,
    ) -> Result<Self> {
        let spec = *gen.spec();
        if rec.spec() != &spec {
            return Err(Error::SpecMismatch("generative and recognition models disagree".into()));
        }
        budget.check_states(&spec)?;
        spec.check_state(&x0)?;
        if steps == 0 {
            return Err(Error::Empty("horizon"));
        }
        let mut gen = gen;
        let mut params = Vec::new();
        for which in targets.gen_tables() {
            let p = ParamTable::from_table(gen.table(which), floor);
            gen.set_table(which, p.table().clone())?;
            params.push((which, p));
        }
        Ok(Learner {
            gen,
            rec,
            reference,
            params,
            targets,
            x0,
            steps,
            budget,
        })
    }

    pub fn gen(&self) -> &GenerativeModel<S> {
        &self.gen
    }

    pub fn rec(&self) -> &RecognitionModel<S> {
        &self.rec
    }

    pub fn reference(&self) -> &ReferenceModel<S> {
        &self.reference
    }

    pub fn into_parts(self) -> (GenerativeModel<S>, RecognitionModel<S>) {
        (self.gen, self.rec)
    }

    fn rec_tables(&self) -> &'static [RecTable] {
        if self.targets.recognition {
            &RecTable::ALL
        } else {
            &[]
        }
    }

    /// Number of trainable logits.
    pub fn n_params(&self) -> usize {
        let rec: usize = self.rec_tables().iter().map(|&w| self.rec.table(w).logits().len()).sum();
        rec + self.params.iter().map(|(_, p)| p.logits().len()).sum::<usize>()
    }

    fn locate(&self, mut index: usize) -> (Option<RecTable>, usize, usize) {
        for &w in self.rec_tables() {
            let n = self.rec.table(w).logits().len();
            if index < n {
                return (Some(w), 0, index);
            }
            index -= n;
        }
        for (slot, (_, p)) in self.params.iter().enumerate() {
            let n = p.logits().len();
            if index < n {
                return (None, slot, index);
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    /// Adds `delta` to one logit (flat order: recognition tables, then
    /// generative tables) and refreshes the models.
    pub fn nudge(&mut self, index: usize, delta: S) {
        match self.locate(index) {
            (Some(w), _, i) => self.rec.table_mut(w).nudge(i, delta),
            (None, slot, i) => {
                let (which, p) = &mut self.params[slot];
                p.nudge(i, delta);
                self.gen.set_table(*which, p.table().clone()).expect("shape is unchanged");
            }
        }
    }

    /// `θ ← θ − lr·grad` over the flat logit vector.
    pub fn descend(&mut self, grad: &[S], lr: S) {
        let mut offset = 0;
        for &w in self.rec_tables() {
            let n = self.rec.table(w).logits().len();
            self.rec.table_mut(w).descend(&grad[offset..offset + n], lr);
            offset += n;
        }
        for (which, p) in self.params.iter_mut() {
            let n = p.logits().len();
            p.descend(&grad[offset..offset + n], lr);
            offset += n;
            self.gen.set_table(*which, p.table().clone()).expect("shape is unchanged");
        }
    }

    /// The rollout chain whose differential free energy is minimized.
    pub fn chain(&self) -> Result<Chain<S>> {
        Chain::feedback(&self.gen, &self.rec, &self.reference, &self.budget)
    }

    /// Long-run mean step objective of the current feedback chain.
    pub fn estimate_rate(&self) -> Result<S> {
        Ok(stationary_rate(&self.chain()?, 1e-12, 200_000)?.1)
    }

    fn locals(&self) -> Vec<Vec<Local<S>>> {
        let spec = self.gen.spec();
        (0..spec.tick_period_level2)
            .map(|k| (0..spec.n_carries()).map(|c| self.local(k + 1, &spec.carry(c))).collect())
            .collect()
    }

    fn local(&self, t: usize, carry: &Carry) -> Local<S> {
        let spec = self.gen.spec();
        let (no, nl) = (spec.card_o, spec.n_latents());
        let prior = self.gen.latent_prior_row(carry, t);
        let mut pred = vec![S::zero(); no];
        for (i, &p) in prior.iter().enumerate() {
            if p > S::zero() {
                let l = spec.latent(i);
                for (o, po) in pred.iter_mut().enumerate() {
                    *po = *po + p * self.gen.lik.prob(&[l.a1, l.s1], o);
                }
            }
        }
        let mut q = vec![S::zero(); no * nl];
        let mut cost = vec![S::zero(); no * nl];
        let mut obj = vec![S::zero(); no];
        for o in 0..no {
            let ctx = Context::filtering(t, o, *carry);
            let belief = self.rec.belief(&ctx);
            for (i, &qi) in belief.iter().enumerate() {
                q[o * nl + i] = qi;
                if qi == S::zero() {
                    continue;
                }
                let l = spec.latent(i);
                let c = self.reference.surprisal(o, l.s1, l.a1, l.a2) - self.gen.lik.prob(&[l.a1, l.s1], o).ln() + qi.ln()
                    - prior[i].ln();
                cost[o * nl + i] = c;
                obj[o] = obj[o] + qi * c;
            }
        }
        Local { prior, pred, q, cost, obj }
    }

    fn successor(&self, l: &Latents, a: usize) -> usize {
        self.gen.spec().carry_index(&Carry { s1: l.s1, s2: l.s2, a })
    }

    /// `Σ_a π(a | o, a¹)·V(s¹, s², a)`.
    fn continuation(&self, o: usize, l: &Latents, next: &[S]) -> S {
        let row = self.gen.pol0.row(&[o, l.a1]);
        row.iter().enumerate().fold(S::zero(), |acc, (a, &p)| acc + p * next[self.successor(l, a)])
    }

    fn sweep(&self, rate: S, locals: &[Vec<Local<S>>]) -> Sweep<S> {
        let spec = *self.gen.spec();
        let (nc, nl, steps) = (spec.n_carries(), spec.n_latents(), self.steps);
        let mut values = vec![vec![S::zero(); nc]; steps + 1];
        for t in (1..=steps).rev() {
            let k = spec.phase(t);
            let (head, tail) = values.split_at_mut(t);
            let next = &tail[0];
            for (c, v) in head[t - 1].iter_mut().enumerate() {
                let loc = &locals[k][c];
                let mut total = S::zero();
                for (o, &po) in loc.pred.iter().enumerate() {
                    if po == S::zero() {
                        continue;
                    }
                    let mut b = loc.obj[o] - rate;
                    for i in 0..nl {
                        let qi = loc.q[o * nl + i];
                        if qi > S::zero() {
                            b = b + qi * self.continuation(o, &spec.latent(i), next);
                        }
                    }
                    total = total + po * b;
                }
                *v = total;
            }
        }
        let mut marginals = Vec::with_capacity(steps);
        let mut mu = vec![S::zero(); nc];
        mu[spec.carry_index(&self.x0.carry())] = S::one();
        for t in 1..=steps {
            let k = spec.phase(t);
            let mut next = vec![S::zero(); nc];
            for (c, &m) in mu.iter().enumerate() {
                if m == S::zero() {
                    continue;
                }
                let loc = &locals[k][c];
                for (o, &po) in loc.pred.iter().enumerate() {
                    for i in 0..nl {
                        let w = m * po * loc.q[o * nl + i];
                        if w == S::zero() {
                            continue;
                        }
                        let l = spec.latent(i);
                        for (a, &pa) in self.gen.pol0.row(&[o, l.a1]).iter().enumerate() {
                            let s = self.successor(&l, a);
                            next[s] = next[s] + w * pa;
                        }
                    }
                }
            }
            marginals.push(std::mem::replace(&mut mu, next));
        }
        let objective = values[0][spec.carry_index(&self.x0.carry())];
        Sweep {
            objective,
            values,
            marginals,
        }
    }

    /// Exact differential free energy at the given rate.
    pub fn objective(&self, rate: S) -> S {
        self.sweep(rate, &self.locals()).objective
    }

    fn add_q(&self, g: &mut ProbGrads<S>, ctx: &Context, ci: usize, l: &Latents, coef: S) {
        let spec = self.gen.spec();
        let f = self.rec.factors(ctx, ci, l);
        let rows = self.rec.rows(ci, l);
        let vals = [l.s2, l.a2, l.s1, l.a1];
        let dims = [spec.card_s2, spec.card_a2, spec.card_s1, spec.card_a1];
        let first = if spec.slow_ticks(ctx.t) { 0 } else { 1 };
        for j in first..4 {
            let other = (0..4).filter(|&i| i != j).fold(S::one(), |acc, i| acc * f[i]);
            let idx = rows[j] * dims[j] + vals[j];
            g.rec[j][idx] = g.rec[j][idx] + coef * other;
        }
    }

    fn add_prior(&self, g: &mut ProbGrads<S>, carry: &Carry, l: &Latents, t: usize, coef: S) {
        let gen = &self.gen;
        let tick = gen.spec().slow_ticks(t);
        let slow = gen.slow_prob(carry, l.s2, t);
        let entries = [
            (GenTable::Pol2, gen.pol2.row_index(&[l.s2]) * gen.pol2.child_dim() + l.a2),
            (GenTable::Dyn1, gen.dyn1.row_index(&[carry.s1, l.s2, carry.a]) * gen.dyn1.child_dim() + l.s1),
            (GenTable::Pol1, gen.pol1.row_index(&[l.s1, l.a2]) * gen.pol1.child_dim() + l.a1),
        ];
        let f = entries.map(|(w, i)| gen.table(w).probs()[i]);
        if tick {
            let idx = gen.dyn2.row_index(&[carry.s2, carry.a]) * gen.dyn2.child_dim() + l.s2;
            let slot = gen_slot(GenTable::Dyn2);
            g.gen[slot][idx] = g.gen[slot][idx] + coef * f[0] * f[1] * f[2];
        }
        for j in 0..3 {
            let other = (0..3).filter(|&i| i != j).fold(slow, |acc, i| acc * f[i]);
            let (w, idx) = entries[j];
            let slot = gen_slot(w);
            g.gen[slot][idx] = g.gen[slot][idx] + coef * other;
        }
    }

    fn add_entry(&self, g: &mut ProbGrads<S>, which: GenTable, parents: &[usize], child: usize, coef: S) {
        let t = self.gen.table(which);
        let idx = t.row_index(parents) * t.child_dim() + child;
        let slot = gen_slot(which);
        g.gen[slot][idx] = g.gen[slot][idx] + coef;
    }

    /// Derivative of `𝒥(o, carry)` at fixed `o`, scaled by `coef`; `extra[l]` is
    /// added to the `q(l)` coefficient and `dprior` accumulates prior derivatives.
    #[allow(clippy::too_many_arguments)]
    fn add_step_objective(
        &self,
        g: &mut ProbGrads<S>,
        loc: &Local<S>,
        t: usize,
        o: usize,
        carry: &Carry,
        coef: S,
        extra: impl Fn(usize, &Latents) -> S,
        dprior: &mut [S],
    ) {
        let spec = *self.gen.spec();
        let nl = spec.n_latents();
        let ctx = Context::filtering(t, o, *carry);
        let ci = context_index(&spec, &ctx);
        for i in 0..nl {
            let qi = loc.q[o * nl + i];
            if qi == S::zero() {
                continue;
            }
            let l = spec.latent(i);
            self.add_q(g, &ctx, ci, &l, coef * (loc.cost[o * nl + i] + S::one() + extra(i, &l)));
            dprior[i] = dprior[i] - coef * qi / loc.prior[i];
            let lik = self.gen.lik.prob(&[l.a1, l.s1], o);
            self.add_entry(g, GenTable::Lik, &[l.a1, l.s1], o, -coef * qi / lik);
        }
    }

    /// Derivative of `P(o | carry)` scaled by `coef`.
    fn add_predictive(&self, g: &mut ProbGrads<S>, loc: &Local<S>, o: usize, coef: S, dprior: &mut [S]) {
        let spec = self.gen.spec();
        for (i, d) in dprior.iter_mut().enumerate() {
            let l = spec.latent(i);
            *d = *d + coef * self.gen.lik.prob(&[l.a1, l.s1], o);
            self.add_entry(g, GenTable::Lik, &[l.a1, l.s1], o, coef * loc.prior[i]);
        }
    }

    fn flush_prior(&self, g: &mut ProbGrads<S>, carry: &Carry, t: usize, dprior: &mut [S]) {
        let spec = *self.gen.spec();
        for (i, d) in dprior.iter_mut().enumerate() {
            if *d != S::zero() {
                self.add_prior(g, carry, &spec.latent(i), t, *d);
                *d = S::zero();
            }
        }
    }

    fn exact_prob_grads(&self, rate: S) -> (S, ProbGrads<S>) {
        let spec = *self.gen.spec();
        let nl = spec.n_latents();
        let locals = self.locals();
        let sweep = self.sweep(rate, &locals);
        let mut g = ProbGrads::zeros(&self.gen, &self.rec);
        let mut dprior = vec![S::zero(); nl];
        for t in 1..=self.steps {
            let k = spec.phase(t);
            let next = &sweep.values[t];
            for (c, &w) in sweep.marginals[t - 1].iter().enumerate() {
                if w == S::zero() {
                    continue;
                }
                let carry = spec.carry(c);
                let loc = &locals[k][c];
                for (o, &po) in loc.pred.iter().enumerate() {
                    if po == S::zero() {
                        continue;
                    }
                    let mut cont = vec![S::zero(); nl];
                    let mut b = loc.obj[o] - rate;
                    for (i, ci) in cont.iter_mut().enumerate() {
                        let qi = loc.q[o * nl + i];
                        if qi > S::zero() {
                            *ci = self.continuation(o, &spec.latent(i), next);
                            b = b + qi * *ci;
                        }
                    }
                    self.add_predictive(&mut g, loc, o, w * b, &mut dprior);
                    self.add_step_objective(&mut g, loc, t, o, &carry, w * po, |i, _| cont[i], &mut dprior);
                    for i in 0..nl {
                        let qi = loc.q[o * nl + i];
                        if qi == S::zero() {
                            continue;
                        }
                        let l = spec.latent(i);
                        for a in 0..spec.card_a {
                            let v = next[self.successor(&l, a)];
                            self.add_entry(&mut g, GenTable::Pol0, &[o, l.a1], a, w * po * qi * v);
                        }
                    }
                }
                self.flush_prior(&mut g, &carry, t, &mut dprior);
            }
        }
        (sweep.objective, g)
    }

    /// Score-function estimate over `samples` rollouts with the centred
    /// returns `Σ_{t'>t} h_{t'}` as weights, plus the pathwise derivative of
    /// each sampled step objective.
    fn mc_prob_grads(&self, rate: S, samples: usize, seed: u64) -> Result<(S, ProbGrads<S>)> {
        if samples < 2 {
            return Err(Error::InvalidArgument("at least two rollouts are needed".into()));
        }
        const CHUNKS: usize = 64;
        let locals = self.locals();
        let per_chunk = samples.div_ceil(CHUNKS);
        let parts: Vec<(S, ProbGrads<S>)> = (0..samples.div_ceil(per_chunk))
            .into_par_iter()
            .map(|chunk| {
                let mut g = ProbGrads::zeros(&self.gen, &self.rec);
                let mut total = S::zero();
                for i in chunk * per_chunk..((chunk + 1) * per_chunk).min(samples) {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    total = total + self.mc_rollout(rate, &locals, &mut rng, &mut g);
                }
                (total, g)
            })
            .collect();
        let mut g = ProbGrads::zeros(&self.gen, &self.rec);
        let mut total = S::zero();
        for (t, p) in &parts {
            total = total + *t;
            g.add(p);
        }
        let inv = S::one() / S::of_usize(samples);
        g.scale(inv);
        Ok((total * inv, g))
    }

    fn mc_rollout(&self, rate: S, locals: &[Vec<Local<S>>], rng: &mut ChaCha8Rng, g: &mut ProbGrads<S>) -> S {
        let spec = *self.gen.spec();
        let nl = spec.n_latents();
        let mut path = Vec::with_capacity(self.steps);
        let mut carry = self.x0.carry();
        for t in 1..=self.steps {
            let loc = &locals[spec.phase(t)][spec.carry_index(&carry)];
            let o = sample_index(&loc.pred, rng);
            let i = sample_index(&loc.q[o * nl..(o + 1) * nl], rng);
            let l = spec.latent(i);
            let a = self.gen.pol0.sample(&[o, l.a1], rng);
            path.push((t, carry, o, i, a, loc.obj[o] - rate));
            carry = Carry { s1: l.s1, s2: l.s2, a };
        }
        let mut dprior = vec![S::zero(); nl];
        let mut to_go = S::zero();
        let total = path.iter().fold(S::zero(), |acc, p| acc + p.5);
        for &(t, carry, o, i, a, h) in path.iter().rev() {
            let loc = &locals[spec.phase(t)][spec.carry_index(&carry)];
            let l = spec.latent(i);
            let qi = loc.q[o * nl + i];
            let ctx = Context::filtering(t, o, carry);
            self.add_predictive(g, loc, o, (h + to_go) / loc.pred[o], &mut dprior);
            self.add_q(g, &ctx, context_index(&spec, &ctx), &l, to_go / qi);
            let pa = self.gen.pol0.prob(&[o, l.a1], a);
            self.add_entry(g, GenTable::Pol0, &[o, l.a1], a, to_go / pa);
            self.add_step_objective(g, loc, t, o, &carry, S::one(), |_, _| S::zero(), &mut dprior);
            self.flush_prior(g, &carry, t, &mut dprior);
            to_go = to_go + h;
        }
        total
    }

    fn flatten(&self, g: &ProbGrads<S>, rec_only: bool) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for &w in self.rec_tables() {
            let slot = RecTable::ALL.iter().position(|&x| x == w).expect("listed");
            out.extend(self.rec.table(w).backward(&g.rec[slot]));
        }
        for (which, p) in &self.params {
            if rec_only {
                out.extend(std::iter::repeat_n(S::zero(), p.logits().len()));
            } else {
                out.extend(p.backward(&g.gen[gen_slot(*which)]));
            }
        }
        out
    }

    /// Exact differential free energy and its gradient over the flat logits.
    pub fn gradient(&self, rate: S) -> (S, Vec<S>) {
        let (f, g) = self.exact_prob_grads(rate);
        (f, self.flatten(&g, false))
    }

    /// Monte Carlo estimate of the objective and the score-function gradient.
    pub fn mc_gradient(&self, rate: S, samples: usize, seed: u64) -> Result<(S, Vec<S>)> {
        let (f, g) = self.mc_prob_grads(rate, samples, seed)?;
        Ok((f, self.flatten(&g, false)))
    }

    /// Sum over every smoothed and terminal recognition row and every phase of
    /// `E_q[J + L − ln π(a | o, a¹) − ln P(o_next | s¹, s², a) + ln q − ln prior]`,
    /// with its gradient over the flat logits.
    pub fn retrospective(&self) -> (S, Vec<S>) {
        let spec = *self.gen.spec();
        let period = spec.tick_period_level2;
        let nl = spec.n_latents();
        let mut g = ProbGrads::zeros(&self.gen, &self.rec);
        let preds: Vec<Vec<Vec<S>>> = (0..period)
            .map(|k| {
                (0..spec.n_carries())
                    .map(|c| self.gen.obs_predictive(&spec.carry(c), k + 2))
                    .collect()
            })
            .collect();
        let mut total = S::zero();
        for ci in 0..n_contexts(&spec) {
            let base = context_at(&spec, ci);
            let Some(a) = base.action else { continue };
            for k in 0..period {
                let ctx = Context { t: k + 1, ..base };
                for i in 0..nl {
                    let l = spec.latent(i);
                    let f = self.rec.factors(&ctx, ci, &l);
                    let qi = f[0] * f[1] * f[2] * f[3];
                    if qi == S::zero() {
                        continue;
                    }
                    let mut c = self.reference.surprisal(ctx.o, l.s1, l.a1, l.a2)
                        - self.gen.lik.prob(&[l.a1, l.s1], ctx.o).ln()
                        - self.gen.pol0.prob(&[ctx.o, l.a1], a).ln()
                        + qi.ln()
                        - self.gen.latent_prior(&ctx.carry, &l, ctx.t).ln();
                    if let Some(next) = ctx.next_obs {
                        c = c - preds[k][self.successor(&l, a)][next].ln();
                    }
                    total = total + qi * c;
                    self.add_q(&mut g, &ctx, ci, &l, c + S::one());
                }
            }
        }
        (total, self.flatten(&g, true))
    }
}

fn norm<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt()
}

fn finite<S: Scalar>(v: &[S]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Iterative descent on the differential free energy.
///
/// Each iteration evaluates the objective and its gradient at the current
/// rate, takes one step and, when enabled, one step on the retrospective
/// rows. The rate is re-estimated before iterations `0, K, 2K, …`.
pub fn train<S: Scalar>(learner: &mut Learner<S>, config: &TrainConfig) -> Result<TrainReport<S>> {
    if config.iters == 0 {
        return Err(Error::InvalidArgument("at least one iteration is needed".into()));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", config.lr)));
    }
    if config.rate_every == Some(0) {
        return Err(Error::InvalidArgument("rate_every must be at least 1".into()));
    }
    if config.steps != learner.steps {
        return Err(Error::InvalidArgument("learner horizon differs from the configured horizon".into()));
    }
    let mut rate = match config.rate {
        Some(r) => S::of(r),
        None => learner.estimate_rate()?,
    };
    let mut lr = S::of(config.lr);
    let mut report = TrainReport {
        iterations: config.iters,
        objective_trace: Vec::with_capacity(config.iters),
        grad_norm_trace: Vec::with_capacity(config.iters),
        rate_trace: Vec::with_capacity(config.iters),
        final_rate: S::zero(),
    };
    for it in 0..config.iters {
        if it > 0 && config.rate_every.is_some_and(|k| it % k == 0) {
            rate = learner.estimate_rate()?;
        }
        if !rate.is_finite() {
            return Err(Error::NonFinite { what: "rate", iteration: it });
        }
        let (f, grad) = match config.estimator {
            Estimator::Exact => learner.gradient(rate),
            Estimator::MonteCarlo { samples, seed } => learner.mc_gradient(rate, samples, seed.wrapping_add(it as u64))?,
        };
        if !f.is_finite() {
            return Err(Error::NonFinite { what: "objective", iteration: it });
        }
        if !finite(&grad) {
            return Err(Error::NonFinite { what: "gradient", iteration: it });
        }
        report.objective_trace.push(f);
        report.grad_norm_trace.push(norm(&grad));
        report.rate_trace.push(rate);
        if config.step_halving && config.estimator == Estimator::Exact {
            let before = learner.clone();
            loop {
                learner.descend(&grad, lr);
                let next = learner.objective(rate);
                if next <= f || lr < S::of(1e-12) {
                    break;
                }
                *learner = before.clone();
                lr = lr * S::of(0.5);
            }
        } else {
            learner.descend(&grad, lr);
        }
        if config.retrospective && learner.targets.recognition {
            let (r, grad) = learner.retrospective();
            if !r.is_finite() || !finite(&grad) {
                return Err(Error::NonFinite {
                    what: "retrospective objective",
                    iteration: it,
                });
            }
            learner.descend(&grad, S::of(config.lr));
        }
    }
    report.final_rate = learner.estimate_rate()?;
    Ok(report)
}
