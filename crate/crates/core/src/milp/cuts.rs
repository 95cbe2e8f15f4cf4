//! Outer approximation of rotated second-order cones by gradient cuts.
//!
//! Each atom `xᵀx ≤ y·z` is enforced as `f(x, y) ≤ z` with the convex
//! `f(x, y) = xᵀx / y`. Whenever a MILP solution lies outside a cone, the
//! first-order expansion of `f` at that point is added as a linear row; it
//! under-estimates `f`, so it never removes a point of the cone.

use super::backend::{MilpBackend, SolveError, SolveOptions, SolveResult, SolveStatus};
use super::model::{LinearConstraint, MilpModel, ObjSense, SocAtom, VarKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CutOptions {
    pub milp: SolveOptions,
    /// A point is accepted when `xᵀx ≤ y·z + tol · max(1, |y·z|)`.
    pub tol: f64,
    /// Floor applied to `y` before linearizing.
    pub y_floor: f64,
    /// Cap on MILP re-solves in one call.
    pub max_rounds: usize,
    /// Rounds of cuts separated on the continuous relaxation before the
    /// integer loop starts. These cuts are just as valid and far cheaper.
    /// The same cap bounds the polish loop run with the integers fixed.
    pub lp_rounds: usize,
}

impl Default for CutOptions {
    fn default() -> Self {
        Self {
            milp: SolveOptions::default(),
            tol: 1e-6,
            y_floor: 1e-6,
            max_rounds: 500,
            lp_rounds: 100,
        }
    }
}

/// `true` when `values` lie outside `atom` by more than the tolerance.
pub fn is_violated(atom: &SocAtom, values: &[f64], tol: f64) -> bool {
    let yz = values[atom.y.0] * values[atom.z.0];
    atom.excess(values) > tol * yz.abs().max(1.0)
}

/// Gradient cut of `xᵀx / y ≤ z` at `point`, with `y` clamped to `y_floor`.
///
/// Returns `Σ (2x̂ᵢ/ŷ) xᵢ − (f̂/ŷ) y − z ≤ 0`; the constant terms of the
/// expansion cancel because `f` is positively homogeneous of degree one.
pub fn add_gradient_cut(atom: &SocAtom, point: &[f64], y_floor: f64) -> LinearConstraint {
    let y_hat = point[atom.y.0].max(y_floor);
    let f_hat: f64 = atom.x.iter().map(|v| point[v.0] * point[v.0]).sum::<f64>() / y_hat;
    let mut coefficients: Vec<_> = atom
        .x
        .iter()
        .map(|v| (*v, 2.0 * point[v.0] / y_hat))
        .collect();
    coefficients.push((atom.y, -f_hat / y_hat));
    coefficients.push((atom.z, -1.0));
    LinearConstraint::le(coefficients, 0.0).normalized()
}

fn separate(model: &MilpModel, values: &[f64], options: &CutOptions) -> Vec<LinearConstraint> {
    model
        .soc_atoms
        .iter()
        .filter(|a| is_violated(a, values, options.tol))
        .map(|a| add_gradient_cut(a, values, options.y_floor))
        .filter(|c| !c.coefficients.is_empty())
        .collect()
}

fn improves(sense: ObjSense, new: f64, old: f64) -> bool {
    match sense {
        ObjSense::Minimize => new > old,
        ObjSense::Maximize => new < old,
    }
}

/// At most `rounds` cut rounds on a continuous model. Returns the last solve
/// and whether it satisfied every atom; new cuts land in `model.cuts`. With
/// `rounds == 0` nothing is solved and the returned result is a placeholder.
fn lp_cut_loop(
    model: &mut MilpModel,
    backend: &dyn MilpBackend,
    options: &CutOptions,
    rounds: usize,
    cuts_added: &mut usize,
) -> Result<(SolveResult, bool), SolveError> {
    let lp = SolveOptions {
        relax_integrality: true,
        ..options.milp.clone()
    };
    let mut last = SolveResult::infeasible();
    for _ in 0..rounds {
        last = backend.solve(model, &lp)?;
        if last.status != SolveStatus::Optimal {
            return Ok((last, false));
        }
        let new = separate(model, &last.values, options);
        if new.is_empty() {
            return Ok((last, true));
        }
        *cuts_added += new.len();
        model.cuts.extend(new);
    }
    Ok((last, false))
}

/// Fixes the integers at `values` and cuts the continuous remainder. Every
/// cut found is also valid for `model`, so all of them are copied back.
fn polish(
    model: &mut MilpModel,
    values: &[f64],
    backend: &dyn MilpBackend,
    options: &CutOptions,
    cuts_added: &mut usize,
) -> Result<Option<SolveResult>, SolveError> {
    let mut fixed = model.clone();
    for (k, v) in fixed.variables.iter_mut().enumerate() {
        if v.kind == VarKind::Integer {
            let r = values[k].round();
            v.lower = r;
            v.upper = r;
        }
    }
    let before = fixed.cuts.len();
    let (res, ok) = lp_cut_loop(&mut fixed, backend, options, options.lp_rounds, cuts_added)?;
    model.cuts.extend(fixed.cuts.drain(before..));
    Ok(ok.then_some(res))
}

fn within_gap(objective: f64, bound: f64, rel_gap: f64) -> bool {
    (objective - bound).abs() <= rel_gap * objective.abs().max(1.0) + 1e-9
}

/// Solves a MILP with cone atoms by iterated outer approximation.
///
/// Cuts are stored in `model.cuts` and survive the call, so later solves of
/// the same (or a grown) model start from them. After each integer round
/// that leaves atoms violated, the integers are fixed and the continuous part
/// is cut to convergence; if that point is within the gap of the best bound
/// it is returned, which saves the integer rounds that would otherwise only
/// move zero-cost continuous variables around.
pub fn solve_with_cuts(
    model: &mut MilpModel,
    backend: &dyn MilpBackend,
    options: &CutOptions,
) -> Result<SolveResult, SolveError> {
    if model.soc_atoms.is_empty() {
        return backend.solve(model, &options.milp);
    }
    let sense = model.objective.sense;
    let mut cuts_added = 0;

    let has_integers = model.variables.iter().any(|v| v.kind == VarKind::Integer);
    if !has_integers || options.milp.relax_integrality {
        let (mut res, ok) = lp_cut_loop(model, backend, options, options.max_rounds, &mut cuts_added)?;
        if res.status == SolveStatus::Optimal && !ok {
            res.status = SolveStatus::Limit;
        }
        res.cuts_added = cuts_added;
        res.objective_trace = vec![res.objective];
        return Ok(res);
    }
    let (res, _) = lp_cut_loop(model, backend, options, options.lp_rounds, &mut cuts_added)?;
    if options.lp_rounds > 0 && res.status == SolveStatus::Infeasible {
        return Ok(SolveResult::infeasible());
    }

    let mut trace = Vec::new();
    let mut best_bound = match sense {
        ObjSense::Minimize => f64::NEG_INFINITY,
        ObjSense::Maximize => f64::INFINITY,
    };
    for round in 1..=options.max_rounds {
        let mut res = backend.solve(model, &options.milp)?;
        if res.status != SolveStatus::Optimal {
            res.rounds = round;
            res.cuts_added = cuts_added;
            res.objective_trace = trace;
            return Ok(res);
        }
        trace.push(res.objective);
        if improves(sense, res.bound, best_bound) {
            best_bound = res.bound;
        }
        let new = separate(model, &res.values, options);
        let finish = |mut res: SolveResult, status, cuts_added, trace| {
            res.status = status;
            res.bound = best_bound;
            res.rounds = round;
            res.cuts_added = cuts_added;
            res.objective_trace = trace;
            Ok(res)
        };
        if new.is_empty() {
            return finish(res, SolveStatus::Optimal, cuts_added, trace);
        }
        cuts_added += new.len();
        model.cuts.extend(new);
        if let Some(p) = polish(model, &res.values, backend, options, &mut cuts_added)? {
            if within_gap(p.objective, best_bound, options.milp.rel_gap) {
                return finish(p, SolveStatus::Optimal, cuts_added, trace);
            }
        }
        if round == options.max_rounds {
            return finish(res, SolveStatus::Limit, cuts_added, trace);
        }
    }
    unreachable!("max_rounds >= 1 returns inside the loop")
}
