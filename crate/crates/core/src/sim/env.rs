//! Example environments. The thermostat is a bounded random walk over
//! temperature levels driven by cool/hold/heat actions, with a set-point
//! schedule that the slow level of the agent steps through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompleteState, ConditionalTable, GenTable, GenerativeModel, ModelSpec, ReferenceModel};
use crate::scalar::Scalar;

pub const COOL: usize = 0;
pub const HOLD: usize = 1;
pub const HEAT: usize = 2;

/// Ground-truth emission and latent dynamics, owned by the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment<S> {
    pub spec: ModelSpec,
    /// `p(o | a¹, s¹)`
    pub lik: ConditionalTable<S>,
    /// `p(s¹ | s¹_prev, s², a_prev)`
    pub dyn1: ConditionalTable<S>,
    /// `p(s² | s²_prev, a_prev)`
    pub dyn2: ConditionalTable<S>,
    pub label: String,
}

impl<S: Scalar> Environment<S> {
    pub fn new(
        spec: ModelSpec,
        lik: ConditionalTable<S>,
        dyn1: ConditionalTable<S>,
        dyn2: ConditionalTable<S>,
        label: impl Into<String>,
    ) -> Result<Self> {
        use crate::model::generative::check_shape;
        check_shape("lik", &lik, GenTable::Lik.shape(&spec))?;
        check_shape("dyn1", &dyn1, GenTable::Dyn1.shape(&spec))?;
        check_shape("dyn2", &dyn2, GenTable::Dyn2.shape(&spec))?;
        Ok(Environment {
            spec,
            lik,
            dyn1,
            dyn2,
            label: label.into(),
        })
    }

    /// The environment's own dynamics wrapped as a generative model with the given policies.
    pub fn with_policies(&self, pol0: ConditionalTable<S>, pol1: ConditionalTable<S>, pol2: ConditionalTable<S>) -> Result<GenerativeModel<S>> {
        GenerativeModel::new(self.spec, self.lik.clone(), self.dyn1.clone(), self.dyn2.clone(), pol0, pol1, pol2)
    }
}

fn default_success() -> f64 {
    0.9
}
fn default_drift() -> f64 {
    0.2
}
fn default_noise() -> f64 {
    0.05
}
fn default_policy_peak() -> f64 {
    0.9
}
fn default_reference_peak() -> f64 {
    0.8
}
fn default_period() -> usize {
    2
}

/// Parameters of the thermostat task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermostatConfig {
    pub levels: usize,
    /// Set point (a temperature level) for each slow-level slot, visited cyclically.
    pub schedule: Vec<usize>,
    /// Probability that heat (cool) moves the temperature one level up (down).
    #[serde(default = "default_success")]
    pub success: f64,
    /// Probability that holding lets the temperature wander one level either way.
    #[serde(default = "default_drift")]
    pub drift: f64,
    /// Probability that the sensor reports a wrong level, spread evenly over the others.
    #[serde(default = "default_noise")]
    pub obs_noise: f64,
    /// Mass the slow and intermediate policies put on the scheduled set point.
    #[serde(default = "default_policy_peak")]
    pub policy_peak: f64,
    /// Mass the reference puts on the set point.
    #[serde(default = "default_reference_peak")]
    pub reference_peak: f64,
    #[serde(default = "default_period")]
    pub tick_period: usize,
}

impl ThermostatConfig {
    pub fn new(levels: usize, schedule: Vec<usize>) -> Result<Self> {
        let config = ThermostatConfig {
            levels,
            schedule,
            success: default_success(),
            drift: default_drift(),
            obs_noise: default_noise(),
            policy_peak: default_policy_peak(),
            reference_peak: default_reference_peak(),
            tick_period: default_period(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument("a thermostat needs at least two temperature levels".into()));
        }
        if self.schedule.is_empty() {
            return Err(Error::Empty("set-point schedule"));
        }
        if let Some(&bad) = self.schedule.iter().find(|&&s| s >= self.levels) {
            return Err(Error::InvalidArgument(format!(
                "schedule entry {bad} is not a level below {}",
                self.levels
            )));
        }
        for (name, p) in [
            ("success", self.success),
            ("drift", self.drift),
            ("obs_noise", self.obs_noise),
            ("policy_peak", self.policy_peak),
            ("reference_peak", self.reference_peak),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must be a probability, got {p}")));
            }
        }
        if self.tick_period == 0 {
            return Err(Error::InvalidArgument("tick period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            card_o: self.levels,
            card_s1: self.levels,
            card_s2: self.schedule.len(),
            card_a: 3,
            card_a1: self.levels,
            card_a2: self.levels,
            tick_period_level2: self.tick_period,
        }
    }

    /// Mid-range temperature, holding, with the schedule counter on its last
    /// slot so that the first tick enters slot 0.
    pub fn initial_state(&self) -> CompleteState {
        let mid = self.levels / 2;
        let last = self.schedule.len() - 1;
        CompleteState {
            o: mid,
            s1: mid,
            s2: last,
            a: HOLD,
            a1: self.schedule[last],
            a2: self.schedule[last],
        }
    }

    /// `π(a² | s²)` concentrated on the scheduled set point.
    pub fn slow_policy<S: Scalar>(&self) -> ConditionalTable<S> {
        let n = self.levels;
        peaked(vec![self.schedule.len()], n, self.policy_peak, |p| self.schedule[p[0]])
    }

    /// `π(a¹ | s¹, a²)` concentrated on `a¹ = a²`.
    pub fn mid_policy<S: Scalar>(&self) -> ConditionalTable<S> {
        let n = self.levels;
        peaked(vec![n, n], n, self.policy_peak, |p| p[1])
    }
}

fn peaked<S: Scalar>(parents: Vec<usize>, child: usize, peak: f64, target: impl Fn(&[usize]) -> usize) -> ConditionalTable<S> {
    let off = (1.0 - peak) / (child - 1) as f64;
    ConditionalTable::from_fn(parents, child, |p, c| S::of(if c == target(p) { peak } else { off }))
        .expect("peaked rows are normalized")
}

/// The thermostat environment and its set-point reference.
pub fn thermostat_env<S: Scalar>(config: &ThermostatConfig) -> Result<(Environment<S>, ReferenceModel<S>)> {
    config.validate()?;
    let spec = config.spec();
    let n = config.levels;
    let m = config.schedule.len();
    let lik = peaked(vec![n, n], n, 1.0 - config.obs_noise, |p| p[1]);
    let dyn1 = ConditionalTable::from_fn(vec![n, m, 3], n, |p, next| {
        let (s, a) = (p[0], p[2]);
        let up = (s + 1).min(n - 1);
        let down = s.saturating_sub(1);
        let mut mass = 0.0f64;
        let mut put = |to: usize, w: f64| {
            if to == next {
                mass += w;
            }
        };
        match a {
            HEAT => {
                put(up, config.success);
                put(s, 1.0 - config.success);
            }
            COOL => {
                put(down, config.success);
                put(s, 1.0 - config.success);
            }
            _ => {
                put(up, config.drift / 2.0);
                put(down, config.drift / 2.0);
                put(s, 1.0 - config.drift);
            }
        }
        S::of(mass)
    })?;
    let dyn2 = ConditionalTable::from_fn(vec![m, 3], m, |p, next| if next == (p[0] + 1) % m { S::one() } else { S::zero() })?;
    let env = Environment::new(spec, lik, dyn1, dyn2, "thermostat")?;
    let reference = ReferenceModel::peaked(&spec, S::of(config.reference_peak))?;
    Ok((env, reference))
}

/// Agent generative model for the thermostat: the environment's dynamics,
/// the schedule policies and the given motor policy, with the positivity floor applied.
pub fn thermostat_agent<S: Scalar>(config: &ThermostatConfig, env: &Environment<S>, pol0: ConditionalTable<S>) -> Result<GenerativeModel<S>> {
    Ok(env.with_policies(pol0, config.mid_policy(), config.slow_policy())?.with_floor())
}
