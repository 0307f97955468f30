//! The optimal transition density: the model's transition row reweighted by
//! the exponentiated negative differential surprise-to-go of each successor.

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, pairwise_sum};
use crate::model::{CompleteState, GenerativeModel};
use crate::scalar::Scalar;

/// Both sides of the KL identity for the optimal transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlIdentity<S> {
    /// `KL(q* ‖ p)` computed from the normalized densities.
    pub lhs: S,
    /// `−E_{q*}[b] − log E_p[exp(−b)]`.
    pub rhs: S,
}

struct Weighted<S> {
    p: Vec<S>,
    log_w: Vec<S>,
    log_z: S,
}

fn weigh<S: Scalar>(gen: &GenerativeModel<S>, bias: &[S], prev: &CompleteState, t: usize) -> Result<Weighted<S>> {
    let spec = gen.spec();
    spec.check_state(prev)?;
    if t == 0 {
        return Err(Error::InvalidArgument("time indices start at 1".into()));
    }
    if bias.len() != spec.n_states() {
        return Err(Error::Dimension {
            what: "successor bias".into(),
            expected: spec.n_states(),
            got: bias.len(),
        });
    }
    if bias.iter().any(|b| b.is_nan() || *b == S::neg_infinity()) {
        return Err(Error::InvalidArgument("bias entries must be finite or +inf".into()));
    }
    let mut p = vec![S::zero(); spec.n_states()];
    gen.transition_row(prev, t, &mut p);
    let log_w: Vec<S> = p
        .iter()
        .zip(bias)
        .map(|(&pi, &b)| if pi == S::zero() { S::neg_infinity() } else { pi.ln() - b })
        .collect();
    let log_z = log_sum_exp(&log_w);
    if log_z == S::neg_infinity() {
        return Err(Error::NoSupport);
    }
    Ok(Weighted { p, log_w, log_z })
}

/// `q*(x | x_prev) ∝ exp(−b(x))·p(x | x_prev)` over every successor `x`.
///
/// `bias` is indexed by successor complete state; `+inf` entries get zero mass.
pub fn optimal_transition<S: Scalar>(gen: &GenerativeModel<S>, bias: &[S], prev: &CompleteState, t: usize) -> Result<Vec<S>> {
    let w = weigh(gen, bias, prev, t)?;
    Ok(w.log_w.iter().map(|&l| (l - w.log_z).exp()).collect())
}

pub fn kl_qstar_identity<S: Scalar>(gen: &GenerativeModel<S>, bias: &[S], prev: &CompleteState, t: usize) -> Result<KlIdentity<S>> {
    let w = weigh(gen, bias, prev, t)?;
    let q: Vec<S> = w.log_w.iter().map(|&l| (l - w.log_z).exp()).collect();
    let mut kl = Vec::new();
    let mut expected_bias = Vec::new();
    for ((&qi, &pi), &b) in q.iter().zip(&w.p).zip(bias) {
        if qi > S::zero() {
            kl.push(qi * (qi.ln() - pi.ln()));
            expected_bias.push(qi * b);
        }
    }
    Ok(KlIdentity {
        lhs: pairwise_sum(&kl),
        rhs: -pairwise_sum(&expected_bias) - w.log_z,
    })
}
