//! Model container, backend contract, and the cone cutting-plane driver.

mod backend;
mod cuts;
mod lp_format;
mod model;

#[cfg(feature = "highs")]
pub use backend::HighsBackend;
pub use backend::{solve_milp, MilpBackend, SolveError, SolveOptions, SolveResult, SolveStatus};
pub use cuts::{add_gradient_cut, is_violated, solve_with_cuts, CutOptions};
pub use lp_format::to_lp_string;
pub use model::{
    LinearConstraint, MilpModel, ObjSense, Objective, Sense, SocAtom, VarDef, VarId, VarKind, VarRef, Variable,
    Violation,
};

/// The backend shipped with the crate.
#[cfg(feature = "highs")]
pub fn default_backend() -> HighsBackend {
    HighsBackend
}
