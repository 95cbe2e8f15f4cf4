use super::model::MilpModel;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Iteration, node or time limit hit; `values` holds the best point if any.
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective at `values`, including the model's constant term.
    pub objective: f64,
    pub values: Vec<f64>,
    /// Best proven bound in the optimization direction.
    pub bound: f64,
    /// Cutting-plane rounds (1 for a plain MILP solve).
    pub rounds: usize,
    pub cuts_added: usize,
    /// Objective of every MILP solved in the cutting-plane loop.
    pub objective_trace: Vec<f64>,
}

impl SolveResult {
    pub fn infeasible() -> Self {
        Self {
            status: SolveStatus::Infeasible,
            objective: f64::INFINITY,
            values: Vec::new(),
            bound: f64::INFINITY,
            rounds: 1,
            cuts_added: 0,
            objective_trace: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("{backend}: {message}")]
    Backend { backend: String, message: String },
    #[error("model is unbounded")]
    Unbounded,
    #[error("model holds {0} cone atoms; use the cutting-plane driver")]
    ConicModel(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Relative MIP gap at which the backend may stop.
    pub rel_gap: f64,
    pub time_limit: Option<f64>,
    pub threads: u32,
    /// Solve the continuous relaxation instead.
    pub relax_integrality: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            rel_gap: 1e-3,
            time_limit: None,
            threads: 1,
            relax_integrality: false,
        }
    }
}

/// A MILP engine. Implementations translate a [`MilpModel`] (its rows and
/// accumulated cuts; cone atoms are ignored) and report the solution.
pub trait MilpBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Whether `solve` may run concurrently from several threads.
    fn is_reentrant(&self) -> bool;

    fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<SolveResult, SolveError>;
}

/// Solves a purely linear model.
pub fn solve_milp(
    model: &MilpModel,
    backend: &dyn MilpBackend,
    options: &SolveOptions,
) -> Result<SolveResult, SolveError> {
    if !model.soc_atoms.is_empty() {
        return Err(SolveError::ConicModel(model.soc_atoms.len()));
    }
    backend.solve(model, options)
}

#[cfg(feature = "highs")]
pub use highs_impl::HighsBackend;

#[cfg(feature = "highs")]
mod highs_impl {
    use super::*;
    use crate::milp::model::{ObjSense, Sense, VarKind};
    use highs::{HighsModelStatus, RowProblem};
    use std::num::NonZeroU32;

    /// Reference adapter over the HiGHS MIP solver.
    #[derive(Debug, Clone, Default)]
    pub struct HighsBackend;

    fn fail(message: impl Into<String>) -> SolveError {
        SolveError::Backend {
            backend: "highs".into(),
            message: message.into(),
        }
    }

    impl MilpBackend for HighsBackend {
        fn name(&self) -> &str {
            "highs"
        }

        fn is_reentrant(&self) -> bool {
            true
        }

        fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<SolveResult, SolveError> {
            let mut pb = RowProblem::default();
            let obj: Vec<f64> = {
                let mut c = vec![0.0; model.num_vars()];
                for (v, w) in &model.objective.terms {
                    c[v.0] += w;
                }
                c
            };
            let mut has_int = false;
            let cols: Vec<_> = model
                .variables
                .iter()
                .zip(&obj)
                .map(|(v, &c)| {
                    let int = v.kind == VarKind::Integer && !options.relax_integrality;
                    has_int |= int;
                    pb.add_column_with_integrality(c, v.lower..=v.upper, int)
                })
                .collect();
            for row in model.constraints.iter().chain(&model.cuts) {
                let coefs: Vec<_> = row.coefficients.iter().map(|(v, c)| (cols[v.0], *c)).collect();
                match row.sense {
                    Sense::Le => pb.add_row(..=row.rhs, &coefs),
                    Sense::Ge => pb.add_row(row.rhs.., &coefs),
                    Sense::Eq => pb.add_row(row.rhs..=row.rhs, &coefs),
                }
            }
            let sense = match model.objective.sense {
                ObjSense::Minimize => highs::Sense::Minimise,
                ObjSense::Maximize => highs::Sense::Maximise,
            };
            let mut m = pb.try_optimise(sense).map_err(|e| fail(format!("{e:?}")))?;
            m.make_quiet();
            m.set_threads(NonZeroU32::new(options.threads.max(1)).unwrap());
            m.set_option("mip_rel_gap", options.rel_gap);
            m.set_option("mip_feasibility_tolerance", 1e-7);
            m.set_option("random_seed", 0);
            if let Some(t) = options.time_limit {
                m.set_option("time_limit", t);
            }
            let solved = m.try_solve().map_err(|e| fail(format!("{e:?}")))?;
            let constant = model.objective.constant;
            let status = match solved.status() {
                HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
                HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => {
                    return Ok(SolveResult::infeasible())
                }
                HighsModelStatus::Unbounded => return Err(SolveError::Unbounded),
                HighsModelStatus::ReachedTimeLimit
                | HighsModelStatus::ReachedIterationLimit
                | HighsModelStatus::ReachedSolutionLimit
                | HighsModelStatus::ReachedInterrupt
                | HighsModelStatus::ReachedMemoryLimit => SolveStatus::Limit,
                other => return Err(fail(format!("model status {other:?}"))),
            };
            let values = solved.get_solution().columns().to_vec();
            let objective = model.objective.value(&values);
            let bound = if has_int {
                solved
                    .double_info_value(c"mip_dual_bound")
                    .map(|b| b + constant)
                    .unwrap_or(objective)
            } else {
                objective
            };
            if status == SolveStatus::Limit && values.len() != model.num_vars() {
                return Ok(SolveResult {
                    status,
                    objective: f64::NAN,
                    values: Vec::new(),
                    bound,
                    rounds: 1,
                    cuts_added: 0,
                    objective_trace: Vec::new(),
                });
            }
            Ok(SolveResult {
                status,
                objective,
                values,
                bound,
                rounds: 1,
                cuts_added: 0,
                objective_trace: vec![objective],
            })
        }
    }
}
