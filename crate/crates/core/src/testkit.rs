//! Seeded small instances, the shipped desk fixture, and exhaustive oracles
//! used by the test suites.

use crate::design::{DesignDecision, Master, ModelError, ModelOptions, Resilience};
use crate::milp::{CutOptions, MilpBackend, SolveStatus};
use crate::netmodel::{parse_network, Network};
use crate::scenario::{load_scenarios, Scenario, ScenarioSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::BTreeSet;

pub const DESK6_NETWORK: &str = include_str!("../fixtures/desk6.json");
pub const DESK6_SCENARIOS: &str = include_str!("../fixtures/desk6_scenarios.json");

/// The shipped 6-bus desk network.
pub fn desk6() -> Network {
    parse_network(DESK6_NETWORK).expect("shipped fixture parses")
}

/// The shipped scenarios of the desk network.
pub fn desk6_scenarios() -> ScenarioSet {
    load_scenarios(DESK6_SCENARIOS, &desk6()).expect("shipped fixture parses")
}

/// Shape of a generated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub buses: usize,
    pub extra_lines: usize,
    pub candidates: usize,
    pub scenarios: usize,
    /// Offer a new generator at the last bus.
    pub new_generator: bool,
}

/// A connected random network with its damage scenarios.
///
/// Bus 0 carries enough existing generation for the whole load, every line
/// is rated above total demand, and every scenario damages one or two
/// existing lines, so hardening everything is always a feasible design.
pub fn random_instance(seed: u64, shape: InstanceShape) -> (Network, ScenarioSet) {
    assert!(shape.buses >= 2, "an instance needs at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.buses;
    let mut total = 0.0;
    let mut buses = Vec::new();
    for i in 0..n {
        let (dp, crit) = if i == 0 { (0.0, false) } else { ((rng.gen_range(20..=60) as f64), i == 1) };
        total += dp;
        buses.push(json!({
            "id": format!("b{}", i + 1),
            "location": [rng.gen_range(0..100), rng.gen_range(0..100)],
            "demand_p": dp,
            "demand_q": (dp * 0.3).round(),
            "is_critical": crit,
            "v_min": 0.94,
            "v_max": 1.06,
        }));
    }
    buses[0]["existing_gen_p_max"] = json!((total * 1.6).ceil());
    buses[0]["existing_gen_q_min"] = json!(-(total).ceil());
    buses[0]["existing_gen_q_max"] = json!((total * 1.2).ceil());
    if shape.new_generator {
        let last = &mut buses[n - 1];
        last["new_gen_p_cap"] = json!(60.0);
        last["new_gen_q_cap"] = json!(40.0);
        last["cost_gen_facility"] = json!(rng.gen_range(8..=20) as f64 * 1e5);
        last["cost_gen_capacity"] = json!(10000.0);
    }

    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    let mut others: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|p| !pairs.contains(p))
        .collect();
    others.shuffle(&mut rng);
    pairs.extend(others.iter().take(shape.extra_lines));
    let rating = (total * 1.2).ceil();
    let line = |id: String, (a, b): (usize, usize), exists: bool, rng: &mut ChaCha8Rng| {
        json!({
            "id": id,
            "from": format!("b{}", a + 1),
            "to": format!("b{}", b + 1),
            "exists": exists,
            "resistance": rng.gen_range(5..=15) as f64 / 1000.0,
            "reactance": rng.gen_range(5..=10) as f64 / 100.0,
            "thermal_limit": rating,
            "cost_build": if exists { 0.0 } else { rng.gen_range(15..=30) as f64 * 1e5 },
            "cost_harden": rng.gen_range(3..=12) as f64 * 1e5,
            "cost_switch": rng.gen_range(1..=5) as f64 * 1e4,
            "cost_facts": rng.gen_range(4..=8) as f64 * 1e5,
            "cost_pst": rng.gen_range(5..=9) as f64 * 1e5,
        })
    };
    let mut lines: Vec<Value> = pairs
        .iter()
        .enumerate()
        .map(|(k, &p)| line(format!("l{}", k + 1), p, true, &mut rng))
        .collect();
    let cand: Vec<(usize, usize)> = (0..shape.candidates)
        .map(|_| {
            let a = rng.gen_range(0..n);
            let b = (a + rng.gen_range(1..n)) % n;
            (a.min(b), a.max(b))
        })
        .collect();
    for (k, &p) in cand.iter().enumerate() {
        lines.push(line(format!("c{}", k + 1), p, false, &mut rng));
    }
    let doc = json!({
        "buses": buses,
        "lines": lines,
        "params": {
            "theta_u": 0.2617993877991494,
            "phi_u": 1.0471975511965976,
            "lp_cr": 0.99, "lq_cr": 0.99, "lp_ncr": 0.6, "lq_ncr": 0.6,
        },
    });
    let net = parse_network(&doc.to_string()).expect("generated network is valid");

    let existing: Vec<String> = pairs.iter().enumerate().map(|(k, _)| format!("l{}", k + 1)).collect();
    let scenarios = (0..shape.scenarios)
        .map(|k| {
            let hits = rng.gen_range(1..=2.min(existing.len()));
            let damaged: BTreeSet<String> = existing.choose_multiple(&mut rng, hits).cloned().collect();
            Scenario {
                id: format!("s{}", k + 1),
                damaged_lines: damaged,
            }
        })
        .collect();
    let set = ScenarioSet {
        seed,
        damage_percentile: 0.0,
        sigma: 0.0,
        rng: crate::scenario::RNG_ALGORITHM.to_string(),
        scenarios,
    };
    (net, set)
}

/// Every design over the binary options the model allows, in ascending cost
/// (ties broken by enumeration order). New generators are not enumerated.
pub fn enumerate_designs(net: &Network, options: &ModelOptions) -> Vec<(DesignDecision, f64)> {
    #[derive(Clone, Copy)]
    enum Opt {
        Build(usize),
        Harden(usize),
        Switch(usize),
        Facts(usize),
        Pst(usize),
    }
    let mut opts = Vec::new();
    for (k, l) in net.lines.iter().enumerate() {
        if !l.exists {
            opts.push(Opt::Build(k));
        } else {
            opts.push(Opt::Harden(k));
        }
        if options.switches {
            opts.push(Opt::Switch(k));
        }
        if options.devices {
            opts.push(Opt::Facts(k));
            opts.push(Opt::Pst(k));
        }
    }
    assert!(opts.len() <= 16, "enumeration is meant for tiny instances");
    let mut out: Vec<(DesignDecision, f64)> = (0u32..1 << opts.len())
        .filter_map(|mask| {
            let mut d = DesignDecision::default();
            for (bit, o) in opts.iter().enumerate() {
                if mask >> bit & 1 == 0 {
                    continue;
                }
                let id = |k: usize| net.lines[k].id.clone();
                match *o {
                    Opt::Build(k) => d.build_line.insert(id(k)),
                    Opt::Harden(k) => d.harden.insert(id(k)),
                    Opt::Switch(k) => d.add_switch.insert(id(k)),
                    Opt::Facts(k) => d.facts.insert(id(k)),
                    Opt::Pst(k) => d.pst.insert(id(k)),
                };
            }
            // Devices and switches on a line that is never built are dead weight.
            let unbuilt = |k: usize| !net.lines[k].exists && !d.build_line.contains(&net.lines[k].id);
            let wasted = opts.iter().any(|o| match *o {
                Opt::Switch(k) | Opt::Facts(k) | Opt::Pst(k) => {
                    unbuilt(k)
                        && (d.add_switch.contains(&net.lines[k].id)
                            || d.facts.contains(&net.lines[k].id)
                            || d.pst.contains(&net.lines[k].id))
                }
                _ => false,
            });
            (!wasted).then(|| {
                let c = d.cost(net);
                (d, c)
            })
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// `true` when `design` admits an operating point in every scenario.
pub fn design_is_feasible(
    net: &Network,
    design: &DesignDecision,
    scenarios: &[Scenario],
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
) -> Result<bool, ModelError> {
    let mut m = Master::new(net, options.clone())?;
    m.fix_design(design)?;
    for s in scenarios {
        m.add_scenario(s, Resilience::Hard)?;
    }
    let r = m.solve(backend, cuts).expect("backend runs");
    Ok(r.status == SolveStatus::Optimal)
}

/// Least-cost feasible design by exhaustive enumeration.
pub fn enumeration_optimum(
    net: &Network,
    scenarios: &[Scenario],
    options: &ModelOptions,
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
) -> Result<Option<(DesignDecision, f64)>, ModelError> {
    for (d, c) in enumerate_designs(net, options) {
        if design_is_feasible(net, &d, scenarios, options, backend, cuts)? {
            return Ok(Some((d, c)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> InstanceShape {
        InstanceShape {
            buses: 5,
            extra_lines: 2,
            candidates: 2,
            scenarios: 4,
            new_generator: true,
        }
    }

    #[test]
    fn generation_is_seeded_and_valid() {
        let (a, sa) = random_instance(3, shape());
        let (b, sb) = random_instance(3, shape());
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        sa.validate(&a).unwrap();
        assert_ne!(random_instance(4, shape()).0, a);
        assert_eq!(a.lines.iter().filter(|l| !l.exists).count(), 2);
    }

    #[test]
    fn enumeration_is_sorted_and_complete() {
        let (net, _) = random_instance(
            1,
            InstanceShape {
                buses: 3,
                extra_lines: 0,
                candidates: 1,
                scenarios: 1,
                new_generator: false,
            },
        );
        let designs = enumerate_designs(&net, &ModelOptions::new(crate::design::Mode::Dc));
        // 2 hardening + 1 build + 3 switches, minus the 4 masks that switch
        // an unbuilt candidate.
        assert_eq!(designs.len(), 64 - 16);
        assert!(designs.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(designs[0].1, 0.0);
    }

    #[test]
    fn desk_fixture_loads() {
        let net = desk6();
        assert_eq!(net.buses.len(), 6);
        assert_eq!(desk6_scenarios().scenarios.len(), 4);
    }
}
