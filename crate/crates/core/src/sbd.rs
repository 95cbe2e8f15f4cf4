//! Scenario-based decomposition.
//!
//! The master is solved on a growing scenario subset `𝒮′`. After each solve
//! every scenario outside `𝒮′` is priced under the fixed design; the worst
//! one joins `𝒮′` unless all prices are (numerically) zero. Because the
//! second stage carries no cost, a master design that prices to zero on all
//! scenarios is optimal for the full problem.

use crate::design::{
    DesignDecision, ExtractOptions, Master, ModelError, ModelOptions, Resilience, ScenarioOperation,
};
use crate::milp::{CutOptions, MilpBackend, ObjSense, SolveError, SolveStatus};
use crate::netmodel::Network;
use crate::scenario::{Scenario, ScenarioSet};
use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbdError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("resilience targets (lp_cr, lq_cr, lp_ncr, lq_ncr) are unattainable for scenarios {}", .0.join(", "))]
    MasterInfeasible(Vec<String>),
    #[error("solver stopped at a limit without a solution while {0}")]
    Limit(String),
    #[error("scenario set is empty")]
    NoScenarios,
    #[error("initial scenario \"{0}\" is not in the set")]
    UnknownInitial(String),
    #[error("pricing scenario {0} found no feasible point")]
    PricingInfeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbdOptions {
    pub cuts: CutOptions,
    /// Concurrent pricing subproblems; 1 prices sequentially.
    pub workers: usize,
    /// First scenario of `𝒮′`; by default the one with the most damaged
    /// lines (lowest id on ties).
    pub initial: Option<String>,
    /// A price at most `feasibility_tol · total real demand` counts as zero.
    pub feasibility_tol: f64,
    pub extract: ExtractOptions,
}

impl Default for SbdOptions {
    fn default() -> Self {
        Self {
            cuts: CutOptions::default(),
            workers: 1,
            initial: None,
            feasibility_tol: 1e-6,
            extract: ExtractOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbdIteration {
    pub iteration: usize,
    pub active_set_size: usize,
    pub incumbent_cost: f64,
    /// `None` when nothing was left to price.
    pub worst_price: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbdState {
    pub active_set: Vec<String>,
    pub incumbent: DesignDecision,
    pub incumbent_cost: f64,
    pub iteration: usize,
    /// Prices of the scenarios outside `𝒮′`, one map per iteration.
    pub price_log: Vec<BTreeMap<String, f64>>,
    pub trace: Vec<SbdIteration>,
}

/// Outcome of pricing one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceResult {
    /// `λp_cr + λq_cr + λp_ncr + λq_ncr` in MW / MVAr.
    pub price: f64,
    pub slacks: [f64; 4],
    pub operation: ScenarioOperation,
}

/// Infeasibility measure of `s` under a fixed design: the least total
/// resilience shortfall over the scenario's relaxed (or DC) operating region.
pub fn price_scenario_detailed(
    design: &DesignDecision,
    net: &Network,
    s: &Scenario,
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
) -> Result<PriceResult, SbdError> {
    let mut master = Master::new(net, options.clone())?;
    master.fix_design(design)?;
    master.add_scenario(s, Resilience::Slack)?;
    let slacks = master.blocks[0].slacks.expect("slack block");
    let base = master.network().params.base_mva;
    master
        .model
        .set_objective(ObjSense::Minimize, slacks.iter().map(|v| (v.id, base)).collect(), 0.0);
    let res = master.solve(backend, cuts)?;
    match res.status {
        SolveStatus::Infeasible => return Err(SbdError::PricingInfeasible(s.id.clone())),
        SolveStatus::Limit if res.values.is_empty() => {
            return Err(SbdError::Limit(format!("pricing scenario {}", s.id)))
        }
        _ => {}
    }
    let slack_values = slacks.map(|v| (res.values[v.id.0] * base).max(0.0));
    let operation = master.extract_operation(&res.values, &s.id, ExtractOptions::default())?;
    Ok(PriceResult {
        price: slack_values.iter().sum(),
        slacks: slack_values,
        operation,
    })
}

pub fn price_scenario(
    design: &DesignDecision,
    net: &Network,
    s: &Scenario,
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
) -> Result<f64, SbdError> {
    price_scenario_detailed(design, net, s, options, backend, cuts).map(|r| r.price)
}

/// Prices `scenarios` on up to `workers` threads; results keep input order.
pub fn price_all(
    design: &DesignDecision,
    net: &Network,
    scenarios: &[&Scenario],
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
    workers: usize,
) -> Vec<Result<PriceResult, SbdError>> {
    let workers = if backend.is_reentrant() { workers } else { 1 };
    parallel_map(scenarios, workers, |s| price_scenario_detailed(design, net, s, options, backend, cuts))
}

/// Maps `f` over `items` on up to `workers` threads; results keep input
/// order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

/// Default first scenario: most damaged lines, lowest id on ties.
pub fn default_initial(set: &ScenarioSet) -> Option<&Scenario> {
    set.scenarios
        .iter()
        .max_by(|a, b| {
            a.damaged_lines
                .len()
                .cmp(&b.damaged_lines.len())
                .then_with(|| b.id.cmp(&a.id))
        })
}

fn solve_master(master: &mut Master, cuts: &CutOptions, backend: &dyn MilpBackend) -> Result<Vec<f64>, SbdError> {
    let res = master.solve(backend, cuts)?;
    match res.status {
        SolveStatus::Infeasible => Err(SbdError::MasterInfeasible(
            master.scenario_ids().iter().map(|s| s.to_string()).collect(),
        )),
        SolveStatus::Limit if res.values.is_empty() => Err(SbdError::Limit("solving the master".into())),
        _ => Ok(res.values),
    }
}

/// Runs the decomposition to completion.
pub fn run_sbd(
    net: &Network,
    set: &ScenarioSet,
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    sbd: &SbdOptions,
) -> Result<(DesignDecision, SbdState), SbdError> {
    let start = Instant::now();
    let initial = match &sbd.initial {
        Some(id) => set.get(id).ok_or_else(|| SbdError::UnknownInitial(id.clone()))?,
        None => default_initial(set).ok_or(SbdError::NoScenarios)?,
    };
    let threshold = sbd.feasibility_tol * net.effective().total_demand().0;
    let mut master = Master::new(net, options.clone())?;
    master.add_scenario(initial, Resilience::Hard)?;
    let mut state = SbdState {
        active_set: vec![initial.id.clone()],
        incumbent: DesignDecision::default(),
        incumbent_cost: f64::NEG_INFINITY,
        iteration: 0,
        price_log: Vec::new(),
        trace: Vec::new(),
    };
    loop {
        state.iteration += 1;
        if state.iteration > 1 {
            // The previous optimum bounds the grown master from below.
            master.set_cost_lower_bound(state.incumbent_cost);
        }
        let values = solve_master(&mut master, &sbd.cuts, backend)?;
        let cost = master.model.objective.value(&values);
        state.incumbent = master.extract_design(&values, sbd.extract)?;
        state.incumbent_cost = cost.max(state.incumbent_cost);

        let rest: Vec<&Scenario> = set
            .scenarios
            .iter()
            .filter(|s| !state.active_set.contains(&s.id))
            .collect();
        let mut prices = BTreeMap::new();
        for (s, r) in rest.iter().zip(price_all(
            &state.incumbent,
            net,
            &rest,
            options,
            backend,
            &sbd.cuts,
            sbd.workers,
        )) {
            prices.insert(s.id.clone(), r?.price);
        }
        // BTreeMap iteration is by id, so the first maximum is the lowest id.
        let worst = prices
            .iter()
            .fold(None::<(&String, f64)>, |acc, (id, &p)| match acc {
                Some((_, q)) if q >= p => acc,
                _ => Some((id, p)),
            })
            .map(|(id, p)| (id.clone(), p));
        log::info!(
            "sbd iteration {}: |S'| = {}, cost = {cost}, worst = {worst:?}",
            state.iteration,
            state.active_set.len()
        );
        state.trace.push(SbdIteration {
            iteration: state.iteration,
            active_set_size: state.active_set.len(),
            incumbent_cost: state.incumbent_cost,
            worst_price: worst.as_ref().map(|w| w.1),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        state.price_log.push(prices);
        match worst {
            Some((id, p)) if p > threshold => {
                let s = set.get(&id).expect("priced scenarios come from the set");
                master.add_scenario(s, Resilience::Hard)?;
                state.active_set.push(id);
            }
            _ => return Ok((state.incumbent.clone(), state)),
        }
    }
}

/// Solves the master with every scenario at once.
pub fn solve_full(
    net: &Network,
    set: &ScenarioSet,
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
) -> Result<(DesignDecision, f64), SbdError> {
    let refs: Vec<&Scenario> = set.scenarios.iter().collect();
    let mut master = crate::design::build_master(net, &refs, options.clone())?;
    let values = solve_master(&mut master, cuts, backend)?;
    let cost = master.model.objective.value(&values);
    Ok((master.extract_design(&values, ExtractOptions::default())?, cost))
}

/// Per-iteration trace. Wall times are written only with `timing`, so that
/// traces of repeated runs compare equal byte for byte.
pub fn trace_csv(state: &SbdState, timing: bool) -> String {
    let mut out = String::from("iteration,active_set_size,incumbent_cost,worst_price,wall_time_s\n");
    for it in &state.trace {
        let worst = it.worst_price.map(|p| format!("{p:.6}")).unwrap_or_default();
        let wall = if timing {
            format!("{:.3}", it.wall_time_s)
        } else {
            String::new()
        };
        writeln!(
            out,
            "{},{},{:.2},{worst},{wall}",
            it.iteration, it.active_set_size, it.incumbent_cost
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scen(id: &str, damaged: &[&str]) -> Scenario {
        Scenario {
            id: id.into(),
            damaged_lines: damaged.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn initial_prefers_damage_then_low_id() {
        let set = ScenarioSet {
            seed: 0,
            damage_percentile: 0.5,
            sigma: 1.0,
            rng: "chacha8".into(),
            scenarios: vec![scen("s03", &["a", "b"]), scen("s01", &["a"]), scen("s02", &["b", "c"])],
        };
        assert_eq!(default_initial(&set).unwrap().id, "s02");
    }

    #[test]
    fn trace_without_timing_has_empty_wall_column() {
        let state = SbdState {
            active_set: vec!["s01".into()],
            incumbent: DesignDecision::default(),
            incumbent_cost: 5.0,
            iteration: 1,
            price_log: vec![BTreeMap::new()],
            trace: vec![SbdIteration {
                iteration: 1,
                active_set_size: 1,
                incumbent_cost: 5.0,
                worst_price: None,
                wall_time_s: 0.25,
            }],
        };
        assert_eq!(
            trace_csv(&state, false),
            "iteration,active_set_size,incumbent_cost,worst_price,wall_time_s\n1,1,5.00,,\n"
        );
        assert!(trace_csv(&state, true).ends_with("1,1,5.00,,0.250\n"));
    }
}
