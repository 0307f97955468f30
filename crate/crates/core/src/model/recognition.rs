use rand::Rng;

use super::generative::{check_shape, GenerativeModel};
use super::spec::{Carry, Latents, ModelSpec};
use super::table::{ConditionalTable, ParamTable};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// What the recognition model conditions on at step `t`: the observation,
/// the motor action (if already emitted), the carried part of `x_{t-1}` and
/// the next observation (absent for filtering beliefs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Context {
    pub t: usize,
    pub o: usize,
    pub action: Option<usize>,
    pub carry: Carry,
    pub next_obs: Option<usize>,
}

impl Context {
    /// Online belief before the action and the next observation exist.
    pub fn filtering(t: usize, o: usize, carry: Carry) -> Self {
        Context {
            t,
            o,
            action: None,
            carry,
            next_obs: None,
        }
    }

    /// Lag-1 smoothed belief.
    pub fn smoothing(t: usize, o: usize, action: usize, carry: Carry, next_obs: usize) -> Self {
        Context {
            t,
            o,
            action: Some(action),
            carry,
            next_obs: Some(next_obs),
        }
    }

    /// Final-step belief: action known, no future.
    pub fn terminal(t: usize, o: usize, action: usize, carry: Carry) -> Self {
        Context {
            t,
            o,
            action: Some(action),
            carry,
            next_obs: None,
        }
    }
}

/// The four recognition factors, in sampling order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecTable {
    S2,
    A2,
    S1,
    A1,
}

impl RecTable {
    pub const ALL: [RecTable; 4] = [RecTable::S2, RecTable::A2, RecTable::S1, RecTable::A1];

    pub fn name(self) -> &'static str {
        match self {
            RecTable::S2 => "q_s2",
            RecTable::A2 => "q_a2",
            RecTable::S1 => "q_s1",
            RecTable::A1 => "q_a1",
        }
    }

    pub fn shape(self, spec: &ModelSpec) -> (Vec<usize>, usize) {
        let mut parents = context_dims(spec).to_vec();
        let child = match self {
            RecTable::S2 => spec.card_s2,
            RecTable::A2 => {
                parents.push(spec.card_s2);
                spec.card_a2
            }
            RecTable::S1 => {
                parents.extend([spec.card_s2, spec.card_a2]);
                spec.card_s1
            }
            RecTable::A1 => {
                parents.extend([spec.card_s2, spec.card_a2, spec.card_s1]);
                spec.card_a1
            }
        };
        (parents, child)
    }
}

/// `[o, a or none, s¹_prev, s²_prev, a_prev, o_next or none]`.
pub fn context_dims(spec: &ModelSpec) -> [usize; 6] {
    [
        spec.card_o,
        spec.card_a + 1,
        spec.card_s1,
        spec.card_s2,
        spec.card_a,
        spec.card_o + 1,
    ]
}

pub fn n_contexts(spec: &ModelSpec) -> usize {
    context_dims(spec).iter().product()
}

/// Flat index of a context (sentinels map to the last slot of their dimension).
#[inline]
pub fn context_index(spec: &ModelSpec, ctx: &Context) -> usize {
    let a = ctx.action.unwrap_or(spec.card_a);
    let next = ctx.next_obs.unwrap_or(spec.card_o);
    ((((ctx.o * (spec.card_a + 1) + a) * spec.card_s1 + ctx.carry.s1) * spec.card_s2 + ctx.carry.s2) * spec.card_a
        + ctx.carry.a)
        * (spec.card_o + 1)
        + next
}

/// Inverse of [`context_index`]; the returned context has `t = 1`.
pub fn context_at(spec: &ModelSpec, mut index: usize) -> Context {
    let next = index % (spec.card_o + 1);
    index /= spec.card_o + 1;
    let a_prev = index % spec.card_a;
    index /= spec.card_a;
    let s2 = index % spec.card_s2;
    index /= spec.card_s2;
    let s1 = index % spec.card_s1;
    index /= spec.card_s1;
    let a = index % (spec.card_a + 1);
    let o = index / (spec.card_a + 1);
    Context {
        t: 1,
        o,
        action: (a < spec.card_a).then_some(a),
        carry: Carry { s1, s2, a: a_prev },
        next_obs: (next < spec.card_o).then_some(next),
    }
}

/// Factored recognition density
/// `q(s² | c)·q(a² | c, s²)·q(s¹ | c, s², a²)·q(a¹ | c, s², a², s¹)`
/// over the latents of step `t`, each factor a softmax of free logits.
///
/// On steps where the slow level does not tick, the `s²` factor is replaced
/// by the same deterministic hold the generative model uses.
#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionModel<S> {
    spec: ModelSpec,
    q_s2: ParamTable<S>,
    q_a2: ParamTable<S>,
    q_s1: ParamTable<S>,
    q_a1: ParamTable<S>,
}

impl<S: Scalar> RecognitionModel<S> {
    pub fn new(spec: ModelSpec, q_s2: ParamTable<S>, q_a2: ParamTable<S>, q_s1: ParamTable<S>, q_a1: ParamTable<S>) -> Result<Self> {
        let rec = RecognitionModel {
            spec,
            q_s2,
            q_a2,
            q_s1,
            q_a1,
        };
        for which in RecTable::ALL {
            check_shape(which.name(), rec.table(which).table(), which.shape(&spec))?;
        }
        Ok(rec)
    }

    /// Standard-normal logits.
    pub fn random<R: Rng>(spec: ModelSpec, rng: &mut R, floor: bool) -> Self {
        let mut make = |which: RecTable| {
            let (p, c) = which.shape(&spec);
            ParamTable::random(p, c, rng, floor)
        };
        RecognitionModel {
            spec,
            q_s2: make(RecTable::S2),
            q_a2: make(RecTable::A2),
            q_s1: make(RecTable::S1),
            q_a1: make(RecTable::A1),
        }
    }

    /// All-zero logits.
    pub fn uniform(spec: ModelSpec, floor: bool) -> Self {
        let make = |which: RecTable| {
            let (p, c) = which.shape(&spec);
            let n = p.iter().product::<usize>() * c;
            ParamTable::from_logits(p, c, vec![S::zero(); n], floor).expect("shape is consistent")
        };
        RecognitionModel {
            spec,
            q_s2: make(RecTable::S2),
            q_a2: make(RecTable::A2),
            q_s1: make(RecTable::S1),
            q_a1: make(RecTable::A1),
        }
    }

    /// Every row set to the exact one-step posterior `p(latents | o_t, x_{t-1})`
    /// of `gen` (the action and next-observation slots are ignored).
    pub fn from_posterior(gen: &GenerativeModel<S>, floor: bool) -> Self {
        let spec = *gen.spec();
        let nctx = n_contexts(&spec);
        let (s2n, a2n, s1n, a1n) = (spec.card_s2, spec.card_a2, spec.card_s1, spec.card_a1);
        let mut p_s2 = vec![S::zero(); nctx * s2n];
        let mut p_a2 = vec![S::zero(); nctx * s2n * a2n];
        let mut p_s1 = vec![S::zero(); nctx * s2n * a2n * s1n];
        let mut p_a1 = vec![S::zero(); nctx * s2n * a2n * s1n * a1n];
        for ci in 0..nctx {
            let ctx = context_at(&spec, ci);
            let c = ctx.carry;
            // w[s2][a2][s1][a1] ∝ π(a²|s²)·p(s¹|s¹₋,s²,a₋)·π(a¹|s¹,a²)·p(o|a¹,s¹)
            let mut z_s2 = vec![S::zero(); s2n];
            for s2 in 0..s2n {
                let mut z_a2 = vec![S::zero(); a2n];
                for a2 in 0..a2n {
                    let mut z_s1 = vec![S::zero(); s1n];
                    for s1 in 0..s1n {
                        let row = ((ci * s2n + s2) * a2n + a2) * s1n + s1;
                        let w: Vec<S> = (0..a1n)
                            .map(|a1| gen.pol1.prob(&[s1, a2], a1) * gen.lik.prob(&[a1, s1], ctx.o))
                            .collect();
                        let z = normalize_into(&w, &mut p_a1[row * a1n..(row + 1) * a1n]);
                        z_s1[s1] = gen.dyn1.prob(&[c.s1, s2, c.a], s1) * z;
                    }
                    let row = (ci * s2n + s2) * a2n + a2;
                    let z = normalize_into(&z_s1, &mut p_s1[row * s1n..(row + 1) * s1n]);
                    z_a2[a2] = gen.pol2.prob(&[s2], a2) * z;
                }
                let row = ci * s2n + s2;
                let z = normalize_into(&z_a2, &mut p_a2[row * a2n..(row + 1) * a2n]);
                z_s2[s2] = gen.dyn2.prob(&[c.s2, c.a], s2) * z;
            }
            normalize_into(&z_s2, &mut p_s2[ci * s2n..(ci + 1) * s2n]);
        }
        let make = |which: RecTable, probs: Vec<S>| {
            let (p, c) = which.shape(&spec);
            let table = ConditionalTable::from_probs(p, c, probs).expect("posterior rows are normalized");
            let table = if floor { table.with_floor() } else { table };
            ParamTable::from_table(&table, floor)
        };
        RecognitionModel {
            spec,
            q_s2: make(RecTable::S2, p_s2),
            q_a2: make(RecTable::A2, p_a2),
            q_s1: make(RecTable::S1, p_s1),
            q_a1: make(RecTable::A1, p_a1),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn table(&self, which: RecTable) -> &ParamTable<S> {
        match which {
            RecTable::S2 => &self.q_s2,
            RecTable::A2 => &self.q_a2,
            RecTable::S1 => &self.q_s1,
            RecTable::A1 => &self.q_a1,
        }
    }

    pub fn table_mut(&mut self, which: RecTable) -> &mut ParamTable<S> {
        match which {
            RecTable::S2 => &mut self.q_s2,
            RecTable::A2 => &mut self.q_a2,
            RecTable::S1 => &mut self.q_s1,
            RecTable::A1 => &mut self.q_a1,
        }
    }

    /// Row indices of the four factors for one latent tuple.
    #[inline]
    pub fn rows(&self, ctx_index: usize, l: &Latents) -> [usize; 4] {
        let s = &self.spec;
        let r_s2 = ctx_index;
        let r_a2 = r_s2 * s.card_s2 + l.s2;
        let r_s1 = r_a2 * s.card_a2 + l.a2;
        let r_a1 = r_s1 * s.card_s1 + l.s1;
        [r_s2, r_a2, r_s1, r_a1]
    }

    /// The four factor probabilities of `l`, with the hold applied to `s²`.
    #[inline]
    pub fn factors(&self, ctx: &Context, ctx_index: usize, l: &Latents) -> [S; 4] {
        let [r_s2, r_a2, r_s1, r_a1] = self.rows(ctx_index, l);
        let f_s2 = if self.spec.slow_ticks(ctx.t) {
            self.q_s2.table().row_at(r_s2)[l.s2]
        } else if l.s2 == ctx.carry.s2 {
            S::one()
        } else {
            S::zero()
        };
        [
            f_s2,
            self.q_a2.table().row_at(r_a2)[l.a2],
            self.q_s1.table().row_at(r_s1)[l.s1],
            self.q_a1.table().row_at(r_a1)[l.a1],
        ]
    }

    #[inline]
    pub fn prob(&self, l: &Latents, ctx: &Context) -> S {
        let f = self.factors(ctx, context_index(&self.spec, ctx), l);
        f[0] * f[1] * f[2] * f[3]
    }

    /// `log q(latents | context)`.
    pub fn logprob(&self, l: &Latents, ctx: &Context) -> Result<S> {
        self.check_context(ctx)?;
        self.spec.check_latents(l)?;
        let f = self.factors(ctx, context_index(&self.spec, ctx), l);
        Ok(f.iter().map(|p| p.ln()).fold(S::zero(), |a, b| a + b))
    }

    /// Dense belief over all latent tuples.
    pub fn belief(&self, ctx: &Context) -> Vec<S> {
        let ci = context_index(&self.spec, ctx);
        (0..self.spec.n_latents())
            .map(|i| {
                let f = self.factors(ctx, ci, &self.spec.latent(i));
                f[0] * f[1] * f[2] * f[3]
            })
            .collect()
    }

    pub fn sample<R: Rng>(&self, ctx: &Context, rng: &mut R) -> Latents {
        use super::table::sample_index;
        let ci = context_index(&self.spec, ctx);
        let s2 = if self.spec.slow_ticks(ctx.t) {
            sample_index(self.q_s2.table().row_at(ci), rng)
        } else {
            ctx.carry.s2
        };
        let mut l = Latents { s2, ..Latents::default() };
        let [_, r_a2, ..] = self.rows(ci, &l);
        l.a2 = sample_index(self.q_a2.table().row_at(r_a2), rng);
        let [_, _, r_s1, _] = self.rows(ci, &l);
        l.s1 = sample_index(self.q_s1.table().row_at(r_s1), rng);
        let [.., r_a1] = self.rows(ci, &l);
        l.a1 = sample_index(self.q_a1.table().row_at(r_a1), rng);
        l
    }

    pub fn check_context(&self, ctx: &Context) -> Result<()> {
        let s = &self.spec;
        let bad = |what: &str, v: usize, card: usize| Error::Dimension {
            what: format!("context {what}={v}"),
            expected: card,
            got: v + 1,
        };
        if ctx.t == 0 {
            return Err(Error::InvalidArgument("time indices start at 1".into()));
        }
        if ctx.o >= s.card_o {
            return Err(bad("o", ctx.o, s.card_o));
        }
        if let Some(a) = ctx.action.filter(|&a| a >= s.card_a) {
            return Err(bad("action", a, s.card_a));
        }
        if let Some(o) = ctx.next_obs.filter(|&o| o >= s.card_o) {
            return Err(bad("next_obs", o, s.card_o));
        }
        if ctx.carry.s1 >= s.card_s1 {
            return Err(bad("carry.s1", ctx.carry.s1, s.card_s1));
        }
        if ctx.carry.s2 >= s.card_s2 {
            return Err(bad("carry.s2", ctx.carry.s2, s.card_s2));
        }
        if ctx.carry.a >= s.card_a {
            return Err(bad("carry.a", ctx.carry.a, s.card_a));
        }
        Ok(())
    }

    pub fn map<T: Scalar>(&self) -> RecognitionModel<T> {
        let conv = |p: &ParamTable<S>| {
            let t = p.table();
            ParamTable::from_logits(
                t.parent_dims().to_vec(),
                t.child_dim(),
                p.logits().iter().map(|l| T::of(l.as_f64())).collect(),
                p.floor(),
            )
            .expect("shape is consistent")
        };
        RecognitionModel {
            spec: self.spec,
            q_s2: conv(&self.q_s2),
            q_a2: conv(&self.q_a2),
            q_s1: conv(&self.q_s1),
            q_a1: conv(&self.q_a1),
        }
    }
}

/// Writes `w / Σw` into `out` (uniform when the mass is zero) and returns `Σw`.
fn normalize_into<S: Scalar>(w: &[S], out: &mut [S]) -> S {
    let z: S = w.iter().copied().sum();
    if z > S::zero() {
        out.iter_mut().zip(w).for_each(|(o, &wi)| *o = wi / z);
    } else {
        let u = S::one() / S::of_usize(out.len());
        out.iter_mut().for_each(|o| *o = u);
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn context_indices_round_trip() {
        let spec = ModelSpec::new(3, 2, 2, 3, 2, 2).unwrap();
        for i in 0..n_contexts(&spec) {
            assert_eq!(context_index(&spec, &context_at(&spec, i)), i);
        }
    }

    #[test]
    fn uniform_recognition_logprob() {
        let spec = ModelSpec::binary();
        let rec = RecognitionModel::<f64>::uniform(spec, false);
        let ctx = Context::smoothing(1, 1, 0, Carry { s1: 1, s2: 0, a: 1 }, 0);
        let l = Latents { s1: 1, s2: 1, a1: 0, a2: 1 };
        assert!((rec.logprob(&l, &ctx).unwrap() - (1.0f64 / 16.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hot_recognition_logprob() {
        let spec = ModelSpec::binary();
        let target = Latents { s1: 1, s2: 0, a1: 1, a2: 0 };
        let one_hot = |which: RecTable| {
            let (p, c) = which.shape(&spec);
            let child = match which {
                RecTable::S2 => target.s2,
                RecTable::A2 => target.a2,
                RecTable::S1 => target.s1,
                RecTable::A1 => target.a1,
            };
            let n: usize = p.iter().product();
            let logits = (0..n * c)
                .map(|i| if i % c == child { 0.0 } else { f64::NEG_INFINITY })
                .collect();
            ParamTable::from_logits(p, c, logits, false).unwrap()
        };
        let rec = RecognitionModel::new(
            spec,
            one_hot(RecTable::S2),
            one_hot(RecTable::A2),
            one_hot(RecTable::S1),
            one_hot(RecTable::A1),
        )
        .unwrap();
        let ctx = Context::filtering(1, 0, Carry::default());
        for i in 0..spec.n_latents() {
            let l = spec.latent(i);
            let lp = rec.logprob(&l, &ctx).unwrap();
            if l == target {
                assert_eq!(lp, 0.0);
            } else {
                assert_eq!(lp, f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn beliefs_are_normalized_on_tick_and_hold_steps() {
        let spec = ModelSpec::new(2, 3, 2, 2, 2, 3).unwrap();
        let rec = RecognitionModel::<f64>::random(spec, &mut ChaCha8Rng::seed_from_u64(9), false);
        for ci in 0..n_contexts(&spec) {
            for t in [1, 2] {
                let ctx = Context { t, ..context_at(&spec, ci) };
                let total: f64 = rec.belief(&ctx).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_determine_tables() {
        let spec = ModelSpec::binary();
        let a = RecognitionModel::<f64>::random(spec, &mut ChaCha8Rng::seed_from_u64(4), true);
        let b = RecognitionModel::<f64>::random(spec, &mut ChaCha8Rng::seed_from_u64(4), true);
        assert_eq!(a, b);
    }

    #[test]
    fn bad_context_is_rejected() {
        let spec = ModelSpec::binary();
        let rec = RecognitionModel::<f64>::uniform(spec, false);
        let ctx = Context::filtering(1, 2, Carry::default());
        assert!(rec.logprob(&Latents::default(), &ctx).is_err());
        let l = Latents { s1: 5, ..Latents::default() };
        assert!(rec.logprob(&l, &Context::filtering(1, 0, Carry::default())).is_err());
    }
}
