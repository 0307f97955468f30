use rand::Rng;

use super::generative::check_shape;
use super::spec::{CompleteState, ModelSpec};
use super::table::ConditionalTable;
use crate::error::Result;
use crate::scalar::Scalar;

/// Reference densities `R(o | a¹)` and `R(s¹ | a²)`; their surprisal is the control cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceModel<S> {
    pub(crate) ref_o: ConditionalTable<S>,
    pub(crate) ref_s1: ConditionalTable<S>,
}

impl<S: Scalar> ReferenceModel<S> {
    pub fn new(spec: &ModelSpec, ref_o: ConditionalTable<S>, ref_s1: ConditionalTable<S>) -> Result<Self> {
        check_shape("ref_o", &ref_o, Self::shape_o(spec))?;
        check_shape("ref_s1", &ref_s1, Self::shape_s1(spec))?;
        Ok(ReferenceModel { ref_o, ref_s1 })
    }

    pub fn shape_o(spec: &ModelSpec) -> (Vec<usize>, usize) {
        (vec![spec.card_a1], spec.card_o)
    }

    pub fn shape_s1(spec: &ModelSpec) -> (Vec<usize>, usize) {
        (vec![spec.card_a2], spec.card_s1)
    }

    pub fn uniform(spec: &ModelSpec) -> Self {
        let (po, co) = Self::shape_o(spec);
        let (ps, cs) = Self::shape_s1(spec);
        ReferenceModel {
            ref_o: ConditionalTable::uniform(po, co),
            ref_s1: ConditionalTable::uniform(ps, cs),
        }
    }

    pub fn random<R: Rng>(spec: &ModelSpec, rng: &mut R, floor: bool) -> Self {
        let (po, co) = Self::shape_o(spec);
        let (ps, cs) = Self::shape_s1(spec);
        ReferenceModel {
            ref_o: ConditionalTable::random(po, co, rng, floor),
            ref_s1: ConditionalTable::random(ps, cs, rng, floor),
        }
    }

    /// Set-point references: `R(o | a¹)` puts `peak` on `o = a¹ mod card_o`
    /// and spreads the rest evenly; likewise `R(s¹ | a²)`.
    pub fn peaked(spec: &ModelSpec, peak: S) -> Result<Self> {
        let table = |parents: Vec<usize>, child: usize| {
            ConditionalTable::from_fn(parents, child, |p, c| {
                if child == 1 {
                    S::one()
                } else if c == p[0] % child {
                    peak
                } else {
                    (S::one() - peak) / S::of_usize(child - 1)
                }
            })
        };
        let (po, co) = Self::shape_o(spec);
        let (ps, cs) = Self::shape_s1(spec);
        Self::new(spec, table(po, co)?, table(ps, cs)?)
    }

    pub fn ref_o(&self) -> &ConditionalTable<S> {
        &self.ref_o
    }

    pub fn ref_s1(&self) -> &ConditionalTable<S> {
        &self.ref_s1
    }

    /// `R(x) = R(o | a¹)·R(s¹ | a²)`.
    #[inline]
    pub fn prob(&self, x: &CompleteState) -> S {
        self.ref_o.prob(&[x.a1], x.o) * self.ref_s1.prob(&[x.a2], x.s1)
    }

    /// Unchecked reference surprisal `-log R(x)`; `+inf` on zero entries.
    #[inline]
    pub fn surprisal(&self, o: usize, s1: usize, a1: usize, a2: usize) -> S {
        -(self.ref_o.prob(&[a1], o).ln() + self.ref_s1.prob(&[a2], s1).ln())
    }

    pub fn with_floor(self) -> Self {
        ReferenceModel {
            ref_o: self.ref_o.with_floor(),
            ref_s1: self.ref_s1.with_floor(),
        }
    }

    pub fn map<T: Scalar>(&self) -> ReferenceModel<T> {
        ReferenceModel {
            ref_o: self.ref_o.map(),
            ref_s1: self.ref_s1.map(),
        }
    }
}
