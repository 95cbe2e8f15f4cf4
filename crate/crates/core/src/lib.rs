//! Resilient transmission-grid upgrade design.
//!
//! The crate builds the two-stage design problem over damage scenarios, under
//! either a QC relaxation or a DC approximation of AC power flow, solves it by
//! scenario-based decomposition with cutting planes for the cone constraints,
//! and checks designs against the nonconvex AC equations.

pub mod acfeas;
pub mod dc;
pub mod design;
pub mod envelopes;
pub mod milp;
pub mod netmodel;
pub mod qc;
pub mod report;
pub mod sbd;
pub mod scenario;
pub mod study;
pub mod testkit;
