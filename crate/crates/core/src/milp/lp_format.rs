//! Plain-text dump of a model for debugging, close to the CPLEX LP format:
//!
//! ```text
//! Minimize
//!  obj: 3 x1 + 2 x2 + 5
//! Subject To
//!  r0: x1 + x2 >= 1
//!  cut0: 2 x1 - x2 - x3 <= 0
//! Bounds
//!  0 <= x1 <= 10
//! Generals
//!  x1
//! \ soc0: x1^2 <= x2 * x3
//! End
//! ```
//!
//! Constant objective terms are written as a bare number. Cone atoms appear as
//! comments. Names are sanitized to `[A-Za-z0-9_.]`. The layout is meant for
//! reading and diffing; it is not a stable interchange format.

use super::model::{MilpModel, ObjSense, VarKind};
use std::fmt::Write;

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn term_list(out: &mut String, model: &MilpModel, terms: &[(super::model::VarId, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
    }
    for (k, (v, c)) in terms.iter().enumerate() {
        let name = sanitize(model.name(*v));
        match (k, *c < 0.0) {
            (0, false) => write!(out, " {c} {name}"),
            (0, true) => write!(out, " - {} {name}", -c),
            (_, false) => write!(out, " + {c} {name}"),
            (_, true) => write!(out, " - {} {name}", -c),
        }
        .unwrap();
    }
}

pub fn to_lp_string(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str(match model.objective.sense {
        ObjSense::Minimize => "Minimize\n obj:",
        ObjSense::Maximize => "Maximize\n obj:",
    });
    term_list(&mut out, model, &model.objective.terms);
    if model.objective.constant != 0.0 {
        write!(out, " + {}", model.objective.constant).unwrap();
    }
    out.push_str("\nSubject To\n");
    for (k, c) in model.constraints.iter().enumerate() {
        write!(out, " r{k}:").unwrap();
        term_list(&mut out, model, &c.coefficients);
        writeln!(out, " {} {}", c.sense, c.rhs).unwrap();
    }
    for (k, c) in model.cuts.iter().enumerate() {
        write!(out, " cut{k}:").unwrap();
        term_list(&mut out, model, &c.coefficients);
        writeln!(out, " {} {}", c.sense, c.rhs).unwrap();
    }
    out.push_str("Bounds\n");
    for v in &model.variables {
        let name = sanitize(&v.name);
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) => writeln!(out, " {} <= {name} <= {}", v.lower, v.upper),
            (true, false) => writeln!(out, " {name} >= {}", v.lower),
            (false, true) => writeln!(out, " -inf <= {name} <= {}", v.upper),
            (false, false) => writeln!(out, " {name} free"),
        }
        .unwrap();
    }
    let ints: Vec<_> = model
        .variables
        .iter()
        .filter(|v| v.kind == VarKind::Integer)
        .map(|v| sanitize(&v.name))
        .collect();
    if !ints.is_empty() {
        out.push_str("Generals\n");
        for n in ints {
            writeln!(out, " {n}").unwrap();
        }
    }
    for (k, a) in model.soc_atoms.iter().enumerate() {
        let xs: Vec<_> = a.x.iter().map(|v| format!("{}^2", sanitize(model.name(*v)))).collect();
        writeln!(
            out,
            "\\ soc{k}: {} <= {} * {}",
            xs.join(" + "),
            sanitize(model.name(a.y)),
            sanitize(model.name(a.z))
        )
        .unwrap();
    }
    out.push_str("End\n");
    out
}
