//! DC-approximation scenario block: lossless real-power flow with on/off
//! big-M Ohm's law and an exact linearization of the FACTS product `δ·θ`.

use crate::design::{
    add_generation, add_resilience, add_topology, angle_difference_row, balance_row, check_scenario, BusBlock,
    DesignDecision, LineBlock, Master, ModelError, Resilience, ScenarioBlock,
};
use crate::envelopes::{mccormick, product_bounds};
use crate::milp::{LinearConstraint, VarDef};
use crate::scenario::Scenario;

/// Appends the `Q^DC(s)` block for `s` to the master.
///
/// Ohm's law reads `p = −B̃ θ ± M (1 − x̃)` with `B̃ θ = B θ + (B̄ − B) δθ`.
/// The big-M is `max(|B|, |B̄|) θ_M`, which bounds `|B̃ θ|` in both device
/// states.
pub fn add_dc_scenario_block(master: &mut Master, s: &Scenario, resilience: Resilience) -> Result<(), ModelError> {
    check_scenario(master, s)?;
    let net = master.net.clone();
    let data = master.data.clone();
    let tm = net.params.theta_m;
    let base = net.params.base_mva;
    let sid = s.id.clone();

    let mut buses = Vec::with_capacity(net.buses.len());
    for (i, b) in net.buses.iter().enumerate() {
        let theta = master
            .model
            .continuous(format!("{sid}:va[{}]", b.id), f64::NEG_INFINITY, f64::INFINITY);
        let (zp, gp, _) = add_generation(master, &sid, i, false);
        let yp = master.model.continuous(format!("{sid}:yp[{}]", b.id), 0.0, 1.0);
        buses.push(BusBlock {
            theta,
            v: None,
            gp,
            gq: None,
            yp,
            yq: None,
            zp,
            zq: None,
        });
    }

    let mut lines = Vec::with_capacity(net.lines.len());
    let mut flows_at = vec![Vec::new(); net.buses.len()];
    let mut inflows_at = vec![Vec::new(); net.buses.len()];
    for (k, (line, d)) in net.lines.iter().zip(&data).enumerate() {
        let topo = add_topology(master, s, k);
        let m = &mut master.model;
        let lid = &line.id;
        m.add_constraint(angle_difference_row(topo.theta, buses[d.from].theta, buses[d.to].theta, topo.phi));
        let p = m.continuous(format!("{sid}:p[{lid}]"), -d.t, d.t);
        m.add_constraint(LinearConstraint::le(vec![(p.id, 1.0), (topo.on.id, -d.t)], 0.0));
        m.add_constraint(LinearConstraint::ge(vec![(p.id, 1.0), (topo.on.id, d.t)], 0.0));

        let dtheta = m.continuous(
            format!("{sid}:dtheta[{lid}]"),
            product_bounds((0.0, 1.0), (-tm, tm)).0,
            product_bounds((0.0, 1.0), (-tm, tm)).1,
        );
        m.define(dtheta.id, VarDef::Product(topo.delta.id, topo.theta.id));
        m.add_constraints(mccormick(dtheta, topo.delta, topo.theta)?);

        let big_m = d.b.abs().max(d.b_bar.abs()) * tm;
        let db = d.b_bar - d.b;
        // p + Bθ + ΔB δθ + M x̃ ≤ M  and  p + Bθ + ΔB δθ − M x̃ ≥ −M
        let ohm = |sign: f64| {
            vec![
                (p.id, 1.0),
                (topo.theta.id, d.b),
                (dtheta.id, db),
                (topo.on.id, sign * big_m),
            ]
        };
        m.add_constraint(LinearConstraint::le(ohm(1.0), big_m).normalized());
        m.add_constraint(LinearConstraint::ge(ohm(-1.0), -big_m).normalized());

        flows_at[d.from].push(p);
        inflows_at[d.to].push(p);
        lines.push(LineBlock {
            x: topo.x,
            tau: topo.tau,
            t: topo.t,
            delta: topo.delta,
            gamma: topo.gamma,
            on: topo.on,
            theta: topo.theta,
            phi: topo.phi,
            p_ij: p,
            q_ij: None,
            p_ji: None,
            q_ji: None,
            l: None,
        });
    }

    let m = &mut master.model;
    for (i, b) in net.buses.iter().enumerate() {
        let mut row = balance_row(buses[i].gp, buses[i].yp, b.demand_p / base, &flows_at[i]);
        row.coefficients.extend(inflows_at[i].iter().map(|f| (f.id, 1.0)));
        m.add_constraint(row.normalized());
    }
    let yp: Vec<_> = buses.iter().map(|b| b.yp).collect();
    let slacks = add_resilience(m, &sid, &net, &yp, None, resilience);
    master.blocks.push(ScenarioBlock {
        scenario: s.clone(),
        lines,
        buses,
        slacks,
    });
    Ok(())
}

/// Gives every built generator reactive capability of half its real
/// capacity, `zq = zp / 2`, for checking a DC design against AC equations.
pub fn dc_reactive_capacity_fill(design: &DesignDecision) -> DesignDecision {
    let mut out = design.clone();
    out.gen_capacity_q = design
        .gen_capacity_p
        .iter()
        .map(|(bus, zp)| (bus.clone(), zp / 2.0))
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactive_fill_is_half_and_idempotent() {
        let mut d = DesignDecision::default();
        d.build_gen.insert("b1".into());
        d.gen_capacity_p.insert("b1".into(), 100.0);
        d.gen_capacity_p.insert("b2".into(), 0.0);
        let f = dc_reactive_capacity_fill(&d);
        assert_eq!(f.capacity_q("b1"), 50.0);
        assert_eq!(f.capacity_q("b2"), 0.0);
        assert_eq!(dc_reactive_capacity_fill(&f), f);
    }
}
