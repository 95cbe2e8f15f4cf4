use orgdt::design::{build_master, DesignDecision, ExtractOptions, Master, Mode, ModelOptions, ScenarioOperation};
use orgdt::milp::{default_backend, CutOptions, SolveStatus};
use orgdt::netmodel::Network;
use orgdt::scenario::{Scenario, ScenarioSet};
use orgdt::testkit::{random_instance, InstanceShape};
use proptest::prelude::*;

fn instance(seed: u64) -> (Network, ScenarioSet) {
    random_instance(
        seed,
        InstanceShape {
            buses: 4,
            extra_lines: 1,
            candidates: 1,
            scenarios: 3,
            new_generator: true,
        },
    )
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Qc), Just(Mode::Dc)]
}

struct Solved {
    master: Master,
    cost: f64,
    design: DesignDecision,
    ops: Vec<ScenarioOperation>,
}

fn solve(net: &Network, scenarios: &[&Scenario], mode: Mode) -> Solved {
    let mut master = build_master(net, scenarios, ModelOptions::new(mode).with_devices(true)).unwrap();
    let res = master.solve(&default_backend(), &CutOptions::default()).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    let design = master.extract_design(&res.values, ExtractOptions::default()).unwrap();
    let ops = scenarios
        .iter()
        .map(|s| master.extract_operation(&res.values, &s.id, ExtractOptions::default()).unwrap())
        .collect();
    Solved {
        cost: master.model.objective.value(&res.values),
        master,
        design,
        ops,
    }
}

/// Served share of a demand class, against the required fraction.
fn class_shortfall(net: &Network, op: &ScenarioOperation, critical: bool, reactive: bool, frac: f64) -> f64 {
    let (mut served, mut total) = (0.0, 0.0);
    for (b, o) in net.buses.iter().zip(&op.buses) {
        if b.is_critical == critical {
            let d = if reactive { b.demand_q } else { b.demand_p };
            served += d * if reactive { o.yq } else { o.yp };
            total += d;
        }
    }
    frac * total - served
}

#[test]
fn only_the_relaxation_carries_cones() {
    let (net, set) = instance(3);
    let all: Vec<&Scenario> = set.scenarios.iter().collect();
    let dc = build_master(&net, &all, ModelOptions::new(Mode::Dc).with_devices(true)).unwrap();
    let qc = build_master(&net, &all, ModelOptions::new(Mode::Qc).with_devices(true)).unwrap();
    assert!(dc.model.soc_atoms.is_empty());
    assert!(!qc.model.soc_atoms.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn more_scenarios_never_cost_less(seed in 0u64..1000, mode in mode()) {
        let (net, set) = instance(seed);
        let mut last = f64::NEG_INFINITY;
        for k in 1..=set.scenarios.len() {
            let some: Vec<&Scenario> = set.scenarios[..k].iter().collect();
            let cost = solve(&net, &some, mode).cost;
            prop_assert!(cost >= last - 1e-4 * last.abs().max(1.0), "{k}: {cost} < {last}");
            last = cost;
        }
    }

    #[test]
    fn solutions_respect_the_design_rules(seed in 0u64..1000, mode in mode()) {
        let (net, set) = instance(seed);
        let all: Vec<&Scenario> = set.scenarios.iter().collect();
        let Solved { master, cost, design, ops } = solve(&net, &all, mode);
        let g = &net.params;
        prop_assert!((design.cost(&net) - cost).abs() <= 1e-6 * cost.abs().max(1.0));
        prop_assert!(design.validate(&net, 1e-6).is_ok(), "{:?}", design.validate(&net, 1e-6));
        for b in &net.buses {
            if !design.build_gen.contains(&b.id) {
                prop_assert_eq!(design.capacity_p(&b.id), 0.0);
                prop_assert_eq!(design.capacity_q(&b.id), 0.0);
            }
        }
        for (s, op) in all.iter().zip(&ops) {
            let mut classes = vec![(true, false, g.lp_cr), (false, false, g.lp_ncr)];
            if mode == Mode::Qc {
                classes.extend([(true, true, g.lq_cr), (false, true, g.lq_ncr)]);
            }
            for (crit, reactive, frac) in classes {
                let short = class_shortfall(&net, op, crit, reactive, frac);
                prop_assert!(short <= 1e-6 * g.base_mva, "{} crit={crit} q={reactive}: short {short}", s.id);
            }
            for (l, lo) in master.network().lines.iter().zip(&op.lines) {
                if s.damaged_lines.contains(&l.id) && !design.harden.contains(&l.id) {
                    prop_assert!(!lo.on(), "{} carries damaged line {}", s.id, l.id);
                }
                if lo.on() {
                    prop_assert!(lo.theta.abs() <= g.theta_u + 1e-7, "{}: θ = {}", l.id, lo.theta);
                } else {
                    prop_assert!(lo.p_ij.abs() <= 1e-6 * g.base_mva, "{}: open line flows {}", l.id, lo.p_ij);
                }
            }
            for (b, bo) in net.buses.iter().zip(&op.buses) {
                prop_assert!(bo.zp <= design.capacity_p(&b.id) + 1e-6 * g.base_mva);
            }
        }
    }
}

#[test]
fn budget_cap_binds_only_below_the_optimum() {
    let (net, set) = instance(642);
    let all: Vec<&Scenario> = set.scenarios.iter().collect();
    let free = solve(&net, &all, Mode::Dc).cost;
    assert!(free > 0.0);
    for (cap, feasible) in [(free, true), (2.0 * free, true), (0.5 * free, false)] {
        let options = ModelOptions {
            budget: Some(cap),
            ..ModelOptions::new(Mode::Dc).with_devices(true)
        };
        let mut master = build_master(&net, &all, options).unwrap();
        let res = master.solve(&default_backend(), &CutOptions::default()).unwrap();
        if feasible {
            assert_eq!(res.status, SolveStatus::Optimal, "cap {cap}");
            assert!((res.objective - free).abs() <= 1e-6 * free, "cap {cap}: {}", res.objective);
        } else {
            assert_eq!(res.status, SolveStatus::Infeasible, "cap {cap}");
        }
    }
}
