//! Solvers and estimators for the average-cost problem.

pub mod free_energy;
pub mod path_integral;
pub mod qstar;
pub mod rvi;
pub mod train;

pub use free_energy::differential_free_energy;
pub use path_integral::{mc_path_integral_value, McEstimate};
pub use qstar::{kl_qstar_identity, optimal_transition, KlIdentity};
pub use rvi::{relative_value_iteration, DecisionProblem, DifferentialValue, RviConfig};
pub use train::{train, Learner, TrainConfig, TrainReport, TrainTargets};
