//! Tabular densities: the hierarchical generative model with its embedded
//! policies, the reference model and the recognition model.

pub mod generative;
pub mod io;
pub mod recognition;
pub mod reference;
pub mod spec;
pub mod table;

pub use generative::{GenTable, GenerativeModel};
pub use io::ModelBundle;
pub use recognition::{Context, RecTable, RecognitionModel};
pub use reference::ReferenceModel;
pub use spec::{Carry, CompleteState, Latents, ModelSpec, Trajectory};
pub use table::{ConditionalTable, ParamTable, FLOOR, ROW_TOL};
