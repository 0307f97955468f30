use rand::Rng;

use super::spec::{Carry, CompleteState, Latents, ModelSpec, Trajectory};
use super::table::ConditionalTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The six conditional tables of the generative model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GenTable {
    /// `p(o | a¹, s¹)`
    Lik,
    /// `p(s¹ | s¹_prev, s², a_prev)`
    Dyn1,
    /// `p(s² | s²_prev, a_prev)`
    Dyn2,
    /// `π(a | o, a¹)`
    Pol0,
    /// `π(a¹ | s¹, a²)`
    Pol1,
    /// `π(a² | s²)`
    Pol2,
}

impl GenTable {
    pub const ALL: [GenTable; 6] = [
        GenTable::Lik,
        GenTable::Dyn1,
        GenTable::Dyn2,
        GenTable::Pol0,
        GenTable::Pol1,
        GenTable::Pol2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenTable::Lik => "lik",
            GenTable::Dyn1 => "dyn1",
            GenTable::Dyn2 => "dyn2",
            GenTable::Pol0 => "pol0",
            GenTable::Pol1 => "pol1",
            GenTable::Pol2 => "pol2",
        }
    }

    pub fn is_policy(self) -> bool {
        matches!(self, GenTable::Pol0 | GenTable::Pol1 | GenTable::Pol2)
    }

    /// `(parent dims, child dim)` dictated by the factorization.
    pub fn shape(self, spec: &ModelSpec) -> (Vec<usize>, usize) {
        match self {
            GenTable::Lik => (vec![spec.card_a1, spec.card_s1], spec.card_o),
            GenTable::Dyn1 => (vec![spec.card_s1, spec.card_s2, spec.card_a], spec.card_s1),
            GenTable::Dyn2 => (vec![spec.card_s2, spec.card_a], spec.card_s2),
            GenTable::Pol0 => (vec![spec.card_o, spec.card_a1], spec.card_a),
            GenTable::Pol1 => (vec![spec.card_s1, spec.card_a2], spec.card_a1),
            GenTable::Pol2 => (vec![spec.card_s2], spec.card_a2),
        }
    }
}

/// Three-level hierarchical generative model with its embedded policies.
///
/// One transition factorizes as
/// `p(s²|s²₋,a₋)·π(a²|s²)·p(s¹|s¹₋,s²,a₋)·π(a¹|s¹,a²)·p(o|a¹,s¹)·π(a|o,a¹)`,
/// with the `s²` factor replaced by a deterministic hold on steps where the
/// slow level does not tick.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeModel<S> {
    spec: ModelSpec,
    pub(crate) lik: ConditionalTable<S>,
    pub(crate) dyn1: ConditionalTable<S>,
    pub(crate) dyn2: ConditionalTable<S>,
    pub(crate) pol0: ConditionalTable<S>,
    pub(crate) pol1: ConditionalTable<S>,
    pub(crate) pol2: ConditionalTable<S>,
}

impl<S: Scalar> GenerativeModel<S> {
    pub fn new(
        spec: ModelSpec,
        lik: ConditionalTable<S>,
        dyn1: ConditionalTable<S>,
        dyn2: ConditionalTable<S>,
        pol0: ConditionalTable<S>,
        pol1: ConditionalTable<S>,
        pol2: ConditionalTable<S>,
    ) -> Result<Self> {
        spec.validate()?;
        let model = GenerativeModel {
            spec,
            lik,
            dyn1,
            dyn2,
            pol0,
            pol1,
            pol2,
        };
        for which in GenTable::ALL {
            check_shape(which.name(), model.table(which), which.shape(&spec))?;
        }
        Ok(model)
    }

    pub fn uniform(spec: ModelSpec) -> Self {
        Self::from_fn(spec, |which| {
            let (p, c) = which.shape(&spec);
            ConditionalTable::uniform(p, c)
        })
    }

    /// Every row drawn as softmax of standard-normal logits.
    pub fn random<R: Rng>(spec: ModelSpec, rng: &mut R, floor: bool) -> Self {
        Self::from_fn(spec, |which| {
            let (p, c) = which.shape(&spec);
            ConditionalTable::random(p, c, rng, floor)
        })
    }

    fn from_fn(spec: ModelSpec, mut f: impl FnMut(GenTable) -> ConditionalTable<S>) -> Self {
        GenerativeModel {
            spec,
            lik: f(GenTable::Lik),
            dyn1: f(GenTable::Dyn1),
            dyn2: f(GenTable::Dyn2),
            pol0: f(GenTable::Pol0),
            pol1: f(GenTable::Pol1),
            pol2: f(GenTable::Pol2),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn table(&self, which: GenTable) -> &ConditionalTable<S> {
        match which {
            GenTable::Lik => &self.lik,
            GenTable::Dyn1 => &self.dyn1,
            GenTable::Dyn2 => &self.dyn2,
            GenTable::Pol0 => &self.pol0,
            GenTable::Pol1 => &self.pol1,
            GenTable::Pol2 => &self.pol2,
        }
    }

    /// Replaces one table after checking its shape.
    pub fn set_table(&mut self, which: GenTable, table: ConditionalTable<S>) -> Result<()> {
        check_shape(which.name(), &table, which.shape(&self.spec))?;
        match which {
            GenTable::Lik => self.lik = table,
            GenTable::Dyn1 => self.dyn1 = table,
            GenTable::Dyn2 => self.dyn2 = table,
            GenTable::Pol0 => self.pol0 = table,
            GenTable::Pol1 => self.pol1 = table,
            GenTable::Pol2 => self.pol2 = table,
        }
        Ok(())
    }

    pub fn with_table(mut self, which: GenTable, table: ConditionalTable<S>) -> Result<Self> {
        self.set_table(which, table)?;
        Ok(self)
    }

    /// Applies the positivity floor to every table.
    pub fn with_floor(self) -> Self {
        let spec = self.spec;
        let mut tables = [self.lik, self.dyn1, self.dyn2, self.pol0, self.pol1, self.pol2].into_iter();
        Self::from_fn(spec, |_| tables.next().expect("six tables").with_floor())
    }

    /// `p(s²_t | s²_{t-1}, a_{t-1})`, or the hold indicator on non-tick steps.
    #[inline]
    pub fn slow_prob(&self, prev: &Carry, s2: usize, t: usize) -> S {
        if self.spec.slow_ticks(t) {
            self.dyn2.prob(&[prev.s2, prev.a], s2)
        } else if s2 == prev.s2 {
            S::one()
        } else {
            S::zero()
        }
    }

    /// Prior over latents `p(s², a², s¹, a¹ | x_{t-1})`.
    #[inline]
    pub fn latent_prior(&self, prev: &Carry, l: &Latents, t: usize) -> S {
        let slow = self.slow_prob(prev, l.s2, t);
        if slow == S::zero() {
            return S::zero();
        }
        slow * self.pol2.prob(&[l.s2], l.a2)
            * self.dyn1.prob(&[prev.s1, l.s2, prev.a], l.s1)
            * self.pol1.prob(&[l.s1, l.a2], l.a1)
    }

    /// Dense prior over every latent tuple (indexed by [`ModelSpec::latent_index`]).
    pub fn latent_prior_row(&self, prev: &Carry, t: usize) -> Vec<S> {
        (0..self.spec.n_latents())
            .map(|i| self.latent_prior(prev, &self.spec.latent(i), t))
            .collect()
    }

    /// Predictive `p(o_t | x_{t-1})` for every observation.
    pub fn obs_predictive(&self, prev: &Carry, t: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.spec.card_o];
        for i in 0..self.spec.n_latents() {
            let l = self.spec.latent(i);
            let w = self.latent_prior(prev, &l, t);
            if w == S::zero() {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.lik.row(&[l.a1, l.s1])) {
                *o = *o + w * *p;
            }
        }
        out
    }

    /// `p(x_t | x_{t-1})` without validation.
    #[inline]
    pub fn transition_prob(&self, prev: &CompleteState, x: &CompleteState, t: usize) -> S {
        let prior = self.latent_prior(&prev.carry(), &x.latents(), t);
        if prior == S::zero() {
            return S::zero();
        }
        prior * self.lik.prob(&[x.a1, x.s1], x.o) * self.pol0.prob(&[x.o, x.a1], x.a)
    }

    /// `log p(x_t | x_{t-1})`; `-inf` when `x` breaks the slow-level hold.
    pub fn transition_logprob(&self, prev: &CompleteState, x: &CompleteState, t: usize) -> Result<S> {
        self.spec.check_state(prev)?;
        self.spec.check_state(x)?;
        if t == 0 {
            return Err(Error::InvalidArgument("time indices start at 1".into()));
        }
        Ok(self.transition_prob(prev, x, t).ln())
    }

    /// Dense row `p(· | x_{t-1})` over all complete states.
    pub fn transition_row(&self, prev: &CompleteState, t: usize, out: &mut [S]) {
        let spec = &self.spec;
        let carry = prev.carry();
        out.iter_mut().for_each(|p| *p = S::zero());
        for li in 0..spec.n_latents() {
            let l = spec.latent(li);
            let prior = self.latent_prior(&carry, &l, t);
            if prior == S::zero() {
                continue;
            }
            for o in 0..spec.card_o {
                let po = prior * self.lik.prob(&[l.a1, l.s1], o);
                for a in 0..spec.card_a {
                    let x = CompleteState::assemble(o, a, &l);
                    out[spec.index(&x)] = po * self.pol0.prob(&[o, l.a1], a);
                }
            }
        }
    }

    /// `log p(x_{1:T} | x_0)`.
    pub fn trajectory_logprob(&self, traj: &Trajectory) -> Result<S> {
        if traj.is_empty() {
            return Err(Error::Empty("trajectory steps"));
        }
        let mut total = S::zero();
        for (t, prev, x) in traj.transitions() {
            total = total + self.transition_logprob(prev, x, t)?;
        }
        Ok(total)
    }

    /// Ancestral draw in factor order: s², a², s¹, a¹, o, a.
    pub fn sample_transition<R: Rng>(&self, prev: &CompleteState, t: usize, rng: &mut R) -> CompleteState {
        let s2 = if self.spec.slow_ticks(t) {
            self.dyn2.sample(&[prev.s2, prev.a], rng)
        } else {
            prev.s2
        };
        let a2 = self.pol2.sample(&[s2], rng);
        let s1 = self.dyn1.sample(&[prev.s1, s2, prev.a], rng);
        let a1 = self.pol1.sample(&[s1, a2], rng);
        let o = self.lik.sample(&[a1, s1], rng);
        let a = self.pol0.sample(&[o, a1], rng);
        CompleteState { o, s1, s2, a, a1, a2 }
    }

    pub fn sample_trajectory<R: Rng>(&self, x0: CompleteState, steps: usize, rng: &mut R) -> Trajectory {
        let mut out = Vec::with_capacity(steps);
        let mut prev = x0;
        for t in 1..=steps {
            prev = self.sample_transition(&prev, t, rng);
            out.push(prev);
        }
        Trajectory::new(x0, out)
    }

    pub fn map<T: Scalar>(&self) -> GenerativeModel<T> {
        GenerativeModel {
            spec: self.spec,
            lik: self.lik.map(),
            dyn1: self.dyn1.map(),
            dyn2: self.dyn2.map(),
            pol0: self.pol0.map(),
            pol1: self.pol1.map(),
            pol2: self.pol2.map(),
        }
    }
}

pub(crate) fn check_shape<S: Scalar>(name: &str, table: &ConditionalTable<S>, (parents, child): (Vec<usize>, usize)) -> Result<()> {
    if table.parent_dims() != parents.as_slice() || table.child_dim() != child {
        return Err(Error::InvalidTable {
            name: name.to_string(),
            reason: format!(
                "shape {:?}->{} does not match {:?}->{}",
                table.parent_dims(),
                table.child_dim(),
                parents,
                child
            ),
        });
    }
    Ok(())
}
