use num_complex::Complex64;
use orgdt::acfeas::{
    apparent_load_shed_mu, certify_design, grid_search_recovery, recover_ac, LineState, RecoveryOptions, RecoveryResult,
};
use orgdt::design::{DesignDecision, Mode, ModelOptions, ScenarioOperation};
use orgdt::milp::{default_backend, CutOptions};
use orgdt::netmodel::{admittance_of, parse_network, Network};
use orgdt::sbd::{run_sbd, SbdOptions};
use orgdt::testkit::{desk6, desk6_scenarios, random_instance, InstanceShape};
use proptest::prelude::*;
use serde_json::json;

fn bus(id: &str, x: f64, dp: f64, dq: f64, critical: bool, gen: f64) -> serde_json::Value {
    json!({
        "id": id, "location": [x, 0.0], "demand_p": dp, "demand_q": dq, "is_critical": critical,
        "v_min": 0.94, "v_max": 1.06,
        "existing_gen_p_max": gen, "existing_gen_q_min": -gen, "existing_gen_q_max": gen,
    })
}

fn line(id: &str, from: &str, to: &str) -> serde_json::Value {
    json!({
        "id": id, "from": from, "to": to, "exists": true, "resistance": 0.01, "reactance": 0.1,
        "thermal_limit": 200.0, "cost_harden": 1e5, "cost_switch": 1e4, "cost_facts": 1e5, "cost_pst": 1e5,
    })
}

fn network(buses: Vec<serde_json::Value>, lines: Vec<serde_json::Value>) -> Network {
    let doc = json!({
        "buses": buses,
        "lines": lines,
        "params": { "theta_u": 0.26, "phi_u": 1.0, "lp_cr": 0.99, "lq_cr": 0.99, "lp_ncr": 0.8, "lq_ncr": 0.8 },
    });
    parse_network(&doc.to_string()).unwrap()
}

fn all_on(net: &Network) -> Vec<LineState> {
    vec![
        LineState {
            on: true,
            facts: false,
            pst: false,
        };
        net.lines.len()
    ]
}

/// Largest violation of the AC constraints by `op`, recomputed from bus
/// voltages with complex arithmetic: flows, balances, limits and the
/// resilience targets.
fn ac_violation(net: &Network, design: &DesignDecision, op: &ScenarioOperation) -> f64 {
    let base = net.params.base_mva;
    let idx = |id: &str| net.bus_index(id).unwrap();
    let volt = |i: usize| Complex64::from_polar(op.buses[i].v, op.buses[i].theta);
    let mut inj = vec![Complex64::new(0.0, 0.0); net.buses.len()];
    let mut worst: f64 = 0.0;
    for (l, lo) in net.lines.iter().zip(&op.lines) {
        if !lo.x {
            continue;
        }
        let (g, b) = admittance_of(l, lo.delta).unwrap();
        let y = Complex64::new(g, b);
        let (i, j) = (idx(&l.from), idx(&l.to));
        let shift = Complex64::from_polar(1.0, -lo.phi);
        let (vi, vj) = (volt(i), volt(j) * shift);
        let s_ij = vi * (y * (vi - vj)).conj();
        let s_ji = vj * (y * (vj - vi)).conj();
        inj[i] += s_ij;
        inj[j] += s_ji;
        for (got, want) in [(lo.p_ij, s_ij.re), (lo.q_ij, s_ij.im), (lo.p_ji, s_ji.re), (lo.q_ji, s_ji.im)] {
            worst = worst.max((got / base - want).abs());
        }
        let t = l.thermal_limit / base;
        worst = worst.max(s_ij.norm() - t).max(s_ji.norm() - t);
        let angle = op.buses[i].theta - op.buses[j].theta + lo.phi;
        worst = worst.max(angle.abs() - net.params.theta_u);
    }
    let (mut served, mut demand) = ([0.0; 4], [0.0; 4]);
    for (k, (b, bo)) in net.buses.iter().zip(&op.buses).enumerate() {
        let net_p = bo.gp - b.demand_p * bo.yp;
        let net_q = bo.gq - b.demand_q * bo.yq;
        worst = worst.max((net_p / base - inj[k].re).abs()).max((net_q / base - inj[k].im).abs());
        worst = worst.max(b.v_min - bo.v).max(bo.v - b.v_max);
        let (zp, zq) = (design.capacity_p(&b.id), design.capacity_q(&b.id));
        worst = worst.max(-bo.gp / base).max((bo.gp - b.existing_gen_p_max - zp) / base);
        worst = worst.max((b.existing_gen_q_min - zq - bo.gq) / base).max((bo.gq - b.existing_gen_q_max - zq) / base);
        let c = if b.is_critical { 0 } else { 2 };
        served[c] += b.demand_p * bo.yp;
        served[c + 1] += b.demand_q * bo.yq;
        demand[c] += b.demand_p;
        demand[c + 1] += b.demand_q;
    }
    let g = &net.params;
    for (k, frac) in [g.lp_cr, g.lq_cr, g.lp_ncr, g.lq_ncr].into_iter().enumerate() {
        worst = worst.max((frac * demand[k] - served[k]) / base);
    }
    worst
}

#[test]
fn light_two_bus_load_needs_no_shedding() {
    let net = network(vec![bus("a", 0.0, 0.0, 0.0, false, 100.0), bus("b", 1.0, 10.0, 3.0, true, 0.0)], vec![line("l", "a", "b")]);
    let design = DesignDecision::default();
    let r = recover_ac(&net, &design, &all_on(&net), "s", None, &RecoveryOptions::default());
    assert!(r.converged, "residual {}", r.kkt_residual);
    assert!(r.slacks.iter().all(|s| s.abs() <= 1e-6), "{:?}", r.slacks);
    assert_eq!(apparent_load_shed_mu(&r, &net), (0.0, 0.0));
    assert!(ac_violation(&net, &design, &r.operation) <= 1e-6);
}

#[test]
fn islanded_critical_bus_misses_its_whole_target() {
    let net = network(
        vec![bus("g", 0.0, 0.0, 0.0, false, 200.0), bus("c", 1.0, 40.0, 10.0, true, 0.0), bus("n", 2.0, 20.0, 5.0, false, 0.0)],
        vec![line("l1", "g", "c"), line("l2", "g", "n")],
    );
    let mut states = all_on(&net);
    states[0].on = false;
    let r = recover_ac(&net, &DesignDecision::default(), &states, "s", None, &RecoveryOptions::default());
    assert!(r.converged);
    assert!((r.slacks[0] - 0.99 * 40.0).abs() <= 1e-6, "{:?}", r.slacks);
    assert!((r.slacks[1] - 0.99 * 10.0).abs() <= 1e-6, "{:?}", r.slacks);
    assert!(r.slacks[2].abs() <= 1e-6 && r.slacks[3].abs() <= 1e-6);
}

/// Three-bus cases whose optimum sheds real power: thin lines cap the
/// deliverable power, and reactive support at every bus keeps the reactive
/// balance from pinning the grid to isolated points. The critical weight is
/// 1 so that grid resolution is not amplified.
fn stressed_three_bus(seed: u64) -> Network {
    let (mut net, _) = random_instance(
        400 + seed,
        InstanceShape {
            buses: 3,
            extra_lines: 0,
            candidates: 0,
            scenarios: 1,
            new_generator: false,
        },
    );
    net.params.theta_u = 0.1;
    net.params.m_crit = 1.0;
    let total: f64 = net.buses.iter().map(|b| b.demand_p).sum();
    for b in net.buses.iter_mut() {
        b.v_min = 0.97;
        b.v_max = 1.03;
        b.existing_gen_q_min = b.existing_gen_q_min.min(-50.0);
        b.existing_gen_q_max = b.existing_gen_q_max.max(50.0);
    }
    for l in net.lines.iter_mut() {
        l.resistance *= 10.0;
        l.reactance *= 10.0;
        l.thermal_limit = 0.35 * total;
    }
    net
}

#[test]
fn recovery_matches_grid_search_on_three_buses() {
    for seed in 0..6 {
        let net = stressed_three_bus(seed);
        let states = all_on(&net);
        let design = DesignDecision::default();
        let grid = grid_search_recovery(&net, &design, &states, "s", 0.01, 0);
        let r = recover_ac(&net, &design, &states, "s", None, &RecoveryOptions::default());
        assert!(r.converged, "seed {seed}");
        let base = net.params.base_mva;
        // Per-unit objectives.
        let (got, oracle) = (r.objective / base, grid.best_objective / base);
        assert!((got - oracle).abs() <= 1e-2, "seed {seed}: recovery {got} grid {oracle}");
    }
}

#[test]
fn larger_weight_never_raises_critical_shedding() {
    let mut net = desk6();
    net.params.load_scale = 1.25;
    let set = desk6_scenarios();
    let options = SbdOptions {
        workers: 4,
        ..Default::default()
    };
    let (design, _) = run_sbd(&net, &set, &ModelOptions::new(Mode::Dc), &default_backend(), &options).unwrap();
    let critical = |m: f64| -> Vec<f64> {
        let opts = RecoveryOptions {
            weight: Some(m),
            ..Default::default()
        };
        certify_design(&net, &design, Mode::Dc, &set.scenarios, &default_backend(), &CutOptions::default(), &opts, 4)
            .unwrap()
            .iter()
            .map(|r| r.slacks[0] + r.slacks[1])
            .collect()
    };
    let mut previous = critical(1.0);
    for m in [10.0, 100.0, 1000.0] {
        let next = critical(m);
        for (k, (a, b)) in previous.iter().zip(&next).enumerate() {
            assert!(b <= &(a + 1e-6), "scenario {k}: M={m} gives {b} > {a}");
        }
        previous = next;
    }
}

#[test]
fn zero_slack_results_are_ac_feasible() {
    let mut certified = 0;
    for seed in 0..12 {
        let (net, set) = random_instance(
            500 + seed,
            InstanceShape {
                buses: 4,
                extra_lines: 1,
                candidates: 0,
                scenarios: 1,
                new_generator: false,
            },
        );
        let s = &set.scenarios[0];
        let states: Vec<LineState> = net
            .lines
            .iter()
            .map(|l| LineState {
                on: !s.damaged_lines.contains(&l.id),
                facts: false,
                pst: false,
            })
            .collect();
        let design = DesignDecision::default();
        let r = recover_ac(&net, &design, &states, &s.id, None, &RecoveryOptions::default());
        if r.converged && r.slacks.iter().all(|&x| x == 0.0) {
            certified += 1;
            let v = ac_violation(&net, &design, &r.operation);
            assert!(v <= 1e-6, "seed {seed}: violation {v}");
        }
    }
    assert!(certified >= 3, "only {certified} zero-slack results");
}

fn empty_result(slacks: [f64; 4]) -> RecoveryResult {
    RecoveryResult {
        scenario: "s".into(),
        slacks,
        objective: 0.0,
        operation: ScenarioOperation {
            scenario: "s".into(),
            lines: vec![],
            buses: vec![],
        },
        converged: true,
        kkt_residual: 0.0,
    }
}

#[test]
fn mu_of_the_worked_example() {
    let net = network(vec![bus("a", 0.0, 30.0, 40.0, true, 100.0), bus("b", 1.0, 0.0, 0.0, false, 0.0)], vec![line("l", "a", "b")]);
    let (crit, ncr) = apparent_load_shed_mu(&empty_result([3.0, 4.0, 0.0, 0.0]), &net);
    assert!((crit - 10.0).abs() < 1e-12);
    // The non-critical class has no demand.
    assert_eq!(ncr, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mu_matches_the_formula(
        slacks in prop::array::uniform4(0.0f64..50.0),
        scale in 0.5f64..2.0,
    ) {
        let mut net = desk6();
        net.params.load_scale = scale;
        let (crit, ncr) = apparent_load_shed_mu(&empty_result(slacks), &net);
        let (mut pc, mut qc, mut pn, mut qn) = (0.0, 0.0, 0.0, 0.0);
        for b in &net.buses {
            if b.is_critical {
                pc += b.demand_p * scale;
                qc += b.demand_q * scale;
            } else {
                pn += b.demand_p * scale;
                qn += b.demand_q * scale;
            }
        }
        let want_c = 100.0 * slacks[0].hypot(slacks[1]) / pc.hypot(qc);
        let want_n = 100.0 * slacks[2].hypot(slacks[3]) / pn.hypot(qn);
        prop_assert!((crit - want_c).abs() <= 1e-9 * want_c.max(1.0));
        prop_assert!((ncr - want_n).abs() <= 1e-9 * want_n.max(1.0));
    }
}
