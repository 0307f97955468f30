use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain cardinalities of the six variables of a complete state, plus the
/// tick period of the slow (level-2) variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub card_o: usize,
    pub card_s1: usize,
    pub card_s2: usize,
    pub card_a: usize,
    pub card_a1: usize,
    pub card_a2: usize,
    #[serde(default = "default_tick_period")]
    pub tick_period_level2: usize,
}

fn default_tick_period() -> usize {
    2
}

impl ModelSpec {
    pub fn new(
        card_o: usize,
        card_s1: usize,
        card_s2: usize,
        card_a: usize,
        card_a1: usize,
        card_a2: usize,
    ) -> Result<Self> {
        let spec = ModelSpec {
            card_o,
            card_s1,
            card_s2,
            card_a,
            card_a1,
            card_a2,
            tick_period_level2: default_tick_period(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every variable binary, tick period 2.
    pub fn binary() -> Self {
        ModelSpec::new(2, 2, 2, 2, 2, 2).expect("binary spec is valid")
    }

    pub fn with_tick_period(mut self, period: usize) -> Result<Self> {
        self.tick_period_level2 = period;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let cards = [
            ("card_o", self.card_o),
            ("card_s1", self.card_s1),
            ("card_s2", self.card_s2),
            ("card_a", self.card_a),
            ("card_a1", self.card_a1),
            ("card_a2", self.card_a2),
            ("tick_period_level2", self.tick_period_level2),
        ];
        for (name, c) in cards {
            if c == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Number of complete states (product of all six cardinalities).
    pub fn n_states(&self) -> usize {
        self.card_o * self.card_s1 * self.card_s2 * self.card_a * self.card_a1 * self.card_a2
    }

    /// Number of latent tuples `(s², a², s¹, a¹)`.
    pub fn n_latents(&self) -> usize {
        self.card_s2 * self.card_a2 * self.card_s1 * self.card_a1
    }

    /// Number of carried summaries `(s¹, s², a)` of a previous state.
    pub fn n_carries(&self) -> usize {
        self.card_s1 * self.card_s2 * self.card_a
    }

    /// Number of joint action tuples `(a, a¹, a²)`.
    pub fn n_actions(&self) -> usize {
        self.card_a * self.card_a1 * self.card_a2
    }

    /// Whether the slow level transitions at step `t` (t ≥ 1).
    ///
    /// Level 2 ticks at t = 1, 1 + period, 1 + 2·period, ... and holds otherwise.
    #[inline]
    pub fn slow_ticks(&self, t: usize) -> bool {
        assert!(t >= 1, "time indices start at 1");
        (t - 1).is_multiple_of(self.tick_period_level2)
    }

    /// Levels that transition at step `t`; level 1 always does.
    pub fn tick_levels(&self, t: usize) -> &'static [u8] {
        if self.slow_ticks(t) {
            &[1, 2]
        } else {
            &[1]
        }
    }

    /// Phase of step `t` within the tick period; phase 0 is a slow tick.
    #[inline]
    pub fn phase(&self, t: usize) -> usize {
        (t - 1) % self.tick_period_level2
    }

    pub fn state(&self, index: usize) -> CompleteState {
        let mut r = index;
        let a2 = r % self.card_a2;
        r /= self.card_a2;
        let a1 = r % self.card_a1;
        r /= self.card_a1;
        let a = r % self.card_a;
        r /= self.card_a;
        let s2 = r % self.card_s2;
        r /= self.card_s2;
        let s1 = r % self.card_s1;
        r /= self.card_s1;
        CompleteState {
            o: r,
            s1,
            s2,
            a,
            a1,
            a2,
        }
    }

    /// Row-major flat index over `(o, s¹, s², a, a¹, a²)`, `a²` fastest.
    #[inline]
    pub fn index(&self, x: &CompleteState) -> usize {
        ((((x.o * self.card_s1 + x.s1) * self.card_s2 + x.s2) * self.card_a + x.a) * self.card_a1 + x.a1)
            * self.card_a2
            + x.a2
    }

    pub fn states(&self) -> impl Iterator<Item = CompleteState> + '_ {
        (0..self.n_states()).map(move |i| self.state(i))
    }

    #[inline]
    pub fn latent_index(&self, l: &Latents) -> usize {
        ((l.s2 * self.card_a2 + l.a2) * self.card_s1 + l.s1) * self.card_a1 + l.a1
    }

    pub fn latent(&self, index: usize) -> Latents {
        let mut r = index;
        let a1 = r % self.card_a1;
        r /= self.card_a1;
        let s1 = r % self.card_s1;
        r /= self.card_s1;
        let a2 = r % self.card_a2;
        r /= self.card_a2;
        Latents { s1, s2: r, a1, a2 }
    }

    #[inline]
    pub fn carry_index(&self, c: &Carry) -> usize {
        (c.s1 * self.card_s2 + c.s2) * self.card_a + c.a
    }

    pub fn carry(&self, index: usize) -> Carry {
        let a = index % self.card_a;
        let r = index / self.card_a;
        Carry {
            s1: r / self.card_s2,
            s2: r % self.card_s2,
            a,
        }
    }

    /// Flat index of an action tuple `(a, a¹, a²)`, `a²` fastest.
    #[inline]
    pub fn action_index(&self, a: usize, a1: usize, a2: usize) -> usize {
        (a * self.card_a1 + a1) * self.card_a2 + a2
    }

    pub fn action(&self, index: usize) -> (usize, usize, usize) {
        let a2 = index % self.card_a2;
        let r = index / self.card_a2;
        (r / self.card_a1, r % self.card_a1, a2)
    }

    pub fn check_state(&self, x: &CompleteState) -> Result<()> {
        let fields = [
            ("o", x.o, self.card_o),
            ("s1", x.s1, self.card_s1),
            ("s2", x.s2, self.card_s2),
            ("a", x.a, self.card_a),
            ("a1", x.a1, self.card_a1),
            ("a2", x.a2, self.card_a2),
        ];
        for (name, v, card) in fields {
            if v >= card {
                return Err(Error::Dimension {
                    what: format!("state component {name}={v}"),
                    expected: card,
                    got: v + 1,
                });
            }
        }
        Ok(())
    }

    pub fn check_latents(&self, l: &Latents) -> Result<()> {
        let fields = [
            ("s1", l.s1, self.card_s1),
            ("s2", l.s2, self.card_s2),
            ("a1", l.a1, self.card_a1),
            ("a2", l.a2, self.card_a2),
        ];
        for (name, v, card) in fields {
            if v >= card {
                return Err(Error::Dimension {
                    what: format!("latent component {name}={v}"),
                    expected: card,
                    got: v + 1,
                });
            }
        }
        Ok(())
    }
}

/// One time-slice `(o, s¹, s², a, a¹, a²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompleteState {
    pub o: usize,
    pub s1: usize,
    pub s2: usize,
    pub a: usize,
    pub a1: usize,
    pub a2: usize,
}

impl CompleteState {
    pub fn new(o: usize, s1: usize, s2: usize, a: usize, a1: usize, a2: usize) -> Self {
        CompleteState { o, s1, s2, a, a1, a2 }
    }

    pub fn latents(&self) -> Latents {
        Latents {
            s1: self.s1,
            s2: self.s2,
            a1: self.a1,
            a2: self.a2,
        }
    }

    /// The part of this state the next transition depends on.
    pub fn carry(&self) -> Carry {
        Carry {
            s1: self.s1,
            s2: self.s2,
            a: self.a,
        }
    }

    pub fn assemble(o: usize, a: usize, l: &Latents) -> Self {
        CompleteState {
            o,
            s1: l.s1,
            s2: l.s2,
            a,
            a1: l.a1,
            a2: l.a2,
        }
    }
}

/// Unobserved components of a complete state: latent states and references.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Latents {
    pub s1: usize,
    pub s2: usize,
    pub a1: usize,
    pub a2: usize,
}

/// `(s¹, s², a)` of the previous state: the only components the next
/// transition of the generative model reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Carry {
    pub s1: usize,
    pub s2: usize,
    pub a: usize,
}

/// A context state `x0` followed by the states for t = 1..T.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: CompleteState,
    pub steps: Vec<CompleteState>,
}

impl Trajectory {
    pub fn new(x0: CompleteState, steps: Vec<CompleteState>) -> Self {
        Trajectory { x0, steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(t, previous, current)` for t = 1..T.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, &CompleteState, &CompleteState)> {
        std::iter::once(&self.x0)
            .chain(self.steps.iter())
            .zip(self.steps.iter())
            .enumerate()
            .map(|(i, (p, x))| (i + 1, p, x))
    }

    /// True when `s²` is unchanged on every step where level 2 does not tick.
    pub fn respects_hold(&self, spec: &ModelSpec) -> bool {
        self.transitions()
            .all(|(t, prev, x)| spec.slow_ticks(t) || prev.s2 == x.s2)
    }
}
