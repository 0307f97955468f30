use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Entries of strictly-positive tables never drop below this.
pub const FLOOR: f64 = 1e-12;

/// Row-sum tolerance of the table invariant.
pub const ROW_TOL: f64 = 1e-12;

/// A categorical distribution over `child_dim` outcomes for every
/// configuration of the parents, stored row-major (last parent fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTable<S> {
    parent_dims: Vec<usize>,
    child_dim: usize,
    probs: Vec<S>,
}

impl<S: Scalar> ConditionalTable<S> {
    /// Validates shape, non-negativity and row sums (within [`ROW_TOL`]).
    pub fn from_probs(parent_dims: Vec<usize>, child_dim: usize, probs: Vec<S>) -> Result<Self> {
        let table = ConditionalTable {
            parent_dims,
            child_dim,
            probs,
        };
        table.validate(S::of(ROW_TOL))?;
        Ok(table)
    }

    pub fn uniform(parent_dims: Vec<usize>, child_dim: usize) -> Self {
        let rows: usize = parent_dims.iter().product();
        let p = S::one() / S::of_usize(child_dim);
        ConditionalTable {
            parent_dims,
            child_dim,
            probs: vec![p; rows * child_dim],
        }
    }

    /// Builds a table from `f(parents, child)`; rows are normalized afterwards.
    pub fn from_fn(parent_dims: Vec<usize>, child_dim: usize, mut f: impl FnMut(&[usize], usize) -> S) -> Result<Self> {
        let rows: usize = parent_dims.iter().product();
        let mut probs = Vec::with_capacity(rows * child_dim);
        let mut parents = vec![0; parent_dims.len()];
        for r in 0..rows {
            unflatten(r, &parent_dims, &mut parents);
            let start = probs.len();
            for c in 0..child_dim {
                probs.push(f(&parents, c));
            }
            let row = &mut probs[start..];
            let sum: S = row.iter().copied().sum();
            if sum <= S::zero() || !sum.is_finite() {
                return Err(Error::InvalidTable {
                    name: "from_fn".into(),
                    reason: format!("row {r} has non-positive mass"),
                });
            }
            row.iter_mut().for_each(|p| *p = *p / sum);
        }
        Self::from_probs(parent_dims, child_dim, probs)
    }

    /// Softmax of each row of `logits`, optionally floored.
    pub fn from_logits(parent_dims: Vec<usize>, child_dim: usize, logits: &[S], floor: bool) -> Result<Self> {
        let rows: usize = parent_dims.iter().product();
        if logits.len() != rows * child_dim {
            return Err(Error::Dimension {
                what: "logit table".into(),
                expected: rows * child_dim,
                got: logits.len(),
            });
        }
        let mut probs = vec![S::zero(); logits.len()];
        for (l, p) in logits.chunks(child_dim).zip(probs.chunks_mut(child_dim)) {
            softmax_into(l, p, floor);
        }
        Ok(ConditionalTable {
            parent_dims,
            child_dim,
            probs,
        })
    }

    /// Rows drawn as softmax of standard-normal logits.
    pub fn random<R: Rng>(parent_dims: Vec<usize>, child_dim: usize, rng: &mut R, floor: bool) -> Self {
        let logits = random_logits(parent_dims.iter().product::<usize>() * child_dim, rng);
        Self::from_logits(parent_dims, child_dim, &logits, floor).expect("shape is consistent")
    }

    pub fn validate(&self, tol: S) -> Result<()> {
        let rows: usize = self.parent_dims.iter().product();
        let bad = |reason: String| Error::InvalidTable {
            name: format!("{:?}->{}", self.parent_dims, self.child_dim),
            reason,
        };
        if self.child_dim == 0 || self.parent_dims.contains(&0) {
            return Err(bad("zero-sized dimension".into()));
        }
        if self.probs.len() != rows * self.child_dim {
            return Err(Error::Dimension {
                what: "table entries".into(),
                expected: rows * self.child_dim,
                got: self.probs.len(),
            });
        }
        for (r, row) in self.probs.chunks(self.child_dim).enumerate() {
            if row.iter().any(|p| *p < S::zero() || !p.is_finite()) {
                return Err(bad(format!("row {r} has a negative or non-finite entry")));
            }
            let sum: S = row.iter().copied().sum();
            if (sum - S::one()).abs() > tol {
                return Err(bad(format!("row {r} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Applies `p ← (1 − kε)·p + ε` to every row that has an entry below `ε`.
    pub fn with_floor(mut self) -> Self {
        let eps = S::of(FLOOR);
        let k = S::of_usize(self.child_dim);
        for row in self.probs.chunks_mut(self.child_dim) {
            if row.iter().any(|&p| p < eps) {
                row.iter_mut().for_each(|p| *p = (S::one() - k * eps) * *p + eps);
            }
        }
        self
    }

    /// True when every entry is at least the floor.
    pub fn is_strictly_positive(&self) -> bool {
        let eps = S::of(FLOOR) * S::of(1.0 - 1e-9);
        self.probs.iter().all(|&p| p >= eps)
    }

    pub fn parent_dims(&self) -> &[usize] {
        &self.parent_dims
    }

    pub fn child_dim(&self) -> usize {
        self.child_dim
    }

    pub fn n_rows(&self) -> usize {
        self.parent_dims.iter().product()
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    /// Flat row index of a parent configuration; panics in debug builds on
    /// out-of-range parents.
    #[inline]
    pub fn row_index(&self, parents: &[usize]) -> usize {
        debug_assert_eq!(parents.len(), self.parent_dims.len());
        parents.iter().zip(&self.parent_dims).fold(0, |acc, (&p, &d)| {
            debug_assert!(p < d);
            acc * d + p
        })
    }

    #[inline]
    pub fn row_at(&self, row: usize) -> &[S] {
        &self.probs[row * self.child_dim..(row + 1) * self.child_dim]
    }

    #[inline]
    pub fn row(&self, parents: &[usize]) -> &[S] {
        self.row_at(self.row_index(parents))
    }

    #[inline]
    pub fn prob(&self, parents: &[usize], child: usize) -> S {
        self.row(parents)[child]
    }

    #[inline]
    pub fn log_prob(&self, parents: &[usize], child: usize) -> S {
        self.prob(parents, child).ln()
    }

    /// Checked variant of [`prob`](Self::prob).
    pub fn checked_prob(&self, parents: &[usize], child: usize) -> Result<S> {
        if parents.len() != self.parent_dims.len() {
            return Err(Error::Dimension {
                what: "parent configuration length".into(),
                expected: self.parent_dims.len(),
                got: parents.len(),
            });
        }
        for (&p, &d) in parents.iter().zip(&self.parent_dims) {
            if p >= d {
                return Err(Error::Dimension {
                    what: "parent index".into(),
                    expected: d,
                    got: p + 1,
                });
            }
        }
        if child >= self.child_dim {
            return Err(Error::Dimension {
                what: "child index".into(),
                expected: self.child_dim,
                got: child + 1,
            });
        }
        Ok(self.prob(parents, child))
    }

    /// Draws a child index from the row with inverse-CDF sampling.
    pub fn sample<R: Rng>(&self, parents: &[usize], rng: &mut R) -> usize {
        sample_index(self.row(parents), rng)
    }

    pub fn map<T: Scalar>(&self) -> ConditionalTable<T> {
        ConditionalTable {
            parent_dims: self.parent_dims.clone(),
            child_dim: self.child_dim,
            probs: self.probs.iter().map(|p| T::of(p.as_f64())).collect(),
        }
    }
}

/// A table parameterized by unconstrained logits, one softmax per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable<S> {
    logits: Vec<S>,
    floor: bool,
    table: ConditionalTable<S>,
}

impl<S: Scalar> ParamTable<S> {
    pub fn from_logits(parent_dims: Vec<usize>, child_dim: usize, logits: Vec<S>, floor: bool) -> Result<Self> {
        let table = ConditionalTable::from_logits(parent_dims, child_dim, &logits, floor)?;
        Ok(ParamTable { logits, floor, table })
    }

    /// Logits `ln p`; the resulting softmax reproduces `table` up to rounding
    /// (exactly for rows whose entries are powers of two, e.g. uniform or one-hot).
    pub fn from_table(table: &ConditionalTable<S>, floor: bool) -> Self {
        let logits: Vec<S> = table.probs().iter().map(|p| p.ln()).collect();
        Self::from_logits(table.parent_dims().to_vec(), table.child_dim(), logits, floor)
            .expect("shape is consistent")
    }

    pub fn random<R: Rng>(parent_dims: Vec<usize>, child_dim: usize, rng: &mut R, floor: bool) -> Self {
        let logits = random_logits(parent_dims.iter().product::<usize>() * child_dim, rng);
        Self::from_logits(parent_dims, child_dim, logits, floor).expect("shape is consistent")
    }

    pub fn table(&self) -> &ConditionalTable<S> {
        &self.table
    }

    pub fn logits(&self) -> &[S] {
        &self.logits
    }

    pub fn floor(&self) -> bool {
        self.floor
    }

    pub fn set_logits(&mut self, logits: Vec<S>) -> Result<()> {
        *self = Self::from_logits(self.table.parent_dims.clone(), self.table.child_dim, logits, self.floor)?;
        Ok(())
    }

    /// Adds `delta` to one logit and refreshes the affected row.
    pub fn nudge(&mut self, index: usize, delta: S) {
        self.logits[index] = self.logits[index] + delta;
        let k = self.table.child_dim;
        let row = index / k;
        let (l, p) = (&self.logits[row * k..(row + 1) * k], &mut self.table.probs[row * k..(row + 1) * k]);
        softmax_into(l, p, self.floor);
    }

    /// `θ ← θ − step·grad`.
    pub fn descend(&mut self, grad: &[S], step: S) {
        let logits: Vec<S> = self.logits.iter().zip(grad).map(|(&l, &g)| l - step * g).collect();
        self.set_logits(logits).expect("shape is consistent");
    }

    /// Pulls a gradient with respect to probability entries back to the logits.
    ///
    /// For a row with unfloored softmax `s` and `p = (1 − kε)s + ε`,
    /// `∂F/∂θ_j = (1 − kε)·s_j·(g_j − Σ_i s_i g_i)` with `g = ∂F/∂p`. Entries
    /// with `s_j = 0` (one-hot rows built from `-inf` logits) get zero.
    pub fn backward(&self, grad_probs: &[S]) -> Vec<S> {
        let k = self.table.child_dim;
        let scale = if self.floor {
            S::one() - S::of_usize(k) * S::of(FLOOR)
        } else {
            S::one()
        };
        let mut out = vec![S::zero(); self.logits.len()];
        let mut s = vec![S::zero(); k];
        for ((l, g), o) in self.logits.chunks(k).zip(grad_probs.chunks(k)).zip(out.chunks_mut(k)) {
            softmax_into(l, &mut s, false);
            let mean = s
                .iter()
                .zip(g)
                .filter(|(si, _)| **si > S::zero())
                .fold(S::zero(), |acc, (&si, &gi)| acc + si * gi);
            for j in 0..k {
                if s[j] > S::zero() {
                    o[j] = scale * s[j] * (g[j] - mean);
                }
            }
        }
        out
    }
}

/// Max-shifted softmax; `-inf` logits give exact zeros.
pub fn softmax_into<S: Scalar>(logits: &[S], out: &mut [S], floor: bool) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = if l == S::neg_infinity() { S::zero() } else { (l - max).exp() };
        sum = sum + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / sum);
    if floor {
        let eps = S::of(FLOOR);
        let k = S::of_usize(out.len());
        out.iter_mut().for_each(|o| *o = (S::one() - k * eps) * *o + eps);
    }
}

pub fn random_logits<S: Scalar, R: Rng>(n: usize, rng: &mut R) -> Vec<S> {
    (0..n)
        .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<S: Scalar, R: Rng>(probs: &[S], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

fn unflatten(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for (o, &d) in out.iter_mut().zip(dims).rev() {
        *o = index % d;
        index /= d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_must_sum_to_one() {
        assert!(ConditionalTable::from_probs(vec![2], 2, vec![0.5f64, 0.5, 0.3, 0.3]).is_err());
        assert!(ConditionalTable::from_probs(vec![2], 2, vec![0.5f64, 0.5, 0.3, 0.7]).is_ok());
        assert!(ConditionalTable::from_probs(vec![1], 2, vec![1.5f64, -0.5]).is_err());
    }

    #[test]
    fn row_major_lookup() {
        let t = ConditionalTable::from_fn(vec![2, 3], 2, |p, c| if c == 0 { (p[0] * 3 + p[1] + 1) as f64 } else { 1.0 })
            .unwrap();
        assert_eq!(t.row_index(&[1, 2]), 5);
        assert!((t.prob(&[1, 2], 0) - 6.0 / 7.0).abs() < 1e-15);
        assert!(t.checked_prob(&[2, 0], 0).is_err());
        assert!(t.checked_prob(&[0, 0], 2).is_err());
    }

    #[test]
    fn floor_keeps_rows_normalized_and_positive() {
        let t = ConditionalTable::from_probs(vec![1], 3, vec![1.0f64, 0.0, 0.0]).unwrap().with_floor();
        assert!(t.is_strictly_positive());
        assert!(t.validate(1e-12).is_ok());
        assert!((t.prob(&[0], 1) - FLOOR).abs() < 1e-24);
    }

    #[test]
    fn one_hot_logits_give_exact_zeros() {
        let t = ParamTable::from_logits(vec![1], 3, vec![0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY], false).unwrap();
        assert_eq!(t.table().probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.backward(&[1.0, 2.0, 3.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let t = ConditionalTable::<f64>::uniform(vec![1], 5);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| t.sample(&[0], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for floor in [false, true] {
            let p = ParamTable::<f64>::random(vec![2], 4, &mut rng, floor);
            let w: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
            let f = |t: &ParamTable<f64>| -> f64 {
                t.table().probs().iter().zip(&w).map(|(p, w)| w * p + p * p.ln()).sum()
            };
            let grad_p: Vec<f64> = p.table().probs().iter().zip(&w).map(|(p, w)| w + p.ln() + 1.0).collect();
            let g = p.backward(&grad_p);
            for i in 0..8 {
                let mut up = p.clone();
                up.nudge(i, 1e-6);
                let mut down = p.clone();
                down.nudge(i, -1e-6);
                let fd = (f(&up) - f(&down)) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_are_normalized(logits in prop::collection::vec(-30.0f64..30.0, 1..12), floor: bool) {
            let mut out = vec![0.0; logits.len()];
            softmax_into(&logits, &mut out, floor);
            let sum: f64 = out.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            if floor {
                prop_assert!(out.iter().all(|&p| p >= FLOOR * (1.0 - 1e-9)));
            }
        }
    }
}
