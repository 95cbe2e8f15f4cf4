//! QC-relaxed scenario block.
//!
//! Per line, with `x̃` the post-switching state and `δ` the FACTS state:
//!
//! ```text
//! p_ij = G x̂v_i + ΔG δx̂v_i − G ŵc − ΔG δŵc − B ŵs − ΔB δŵs
//! q_ij = −B x̂v_i − ΔB δx̂v_i + B ŵc + ΔB δŵc − G ŵs − ΔG δŵs
//! p_ji = G x̂v_j + ΔG δx̂v_j − G ŵc − ΔG δŵc + B ŵs + ΔB δŵs
//! q_ji = −B x̂v_j − ΔB δx̂v_j + B ŵc + ΔB δŵc + G ŵs + ΔG δŵs
//! ```
//!
//! where `ΔG = Ḡ − G`, `ΔB = B̄ − B`, `x̂v_i ≈ x̃ v_i²`, `ŵc ≈ v_i v_j x̃ cos θ`
//! and `ŵs ≈ v_i v_j x̃ sin θ`. At a binary `(x̃, δ)` and exact auxiliaries
//! these are the on/off AC flow equations.
//!
//! Losses: `p_ij + p_ji = R l` and `q_ij + q_ji = X l + (X̄ − X) δl`, where
//! `l` is the squared current and `δl ≈ δ·l`. The reactive identity uses the
//! compensated reactance because that is the reactance the flows see.

use crate::design::{
    add_generation, add_resilience, add_topology, angle_difference_row, balance_row, check_scenario, BusBlock,
    LineBlock, Master, ModelError, Resilience, ScenarioBlock,
};
use crate::envelopes::{cos_envelope, mccormick, mccormick_q, product_bounds, relax_product_chain, sin_envelope, square_bounds};
use crate::milp::{LinearConstraint, MilpModel, SocAtom, VarDef, VarId, VarRef};
use crate::scenario::Scenario;

fn aux(m: &mut MilpModel, name: String, bounds: (f64, f64), def: VarDef) -> VarRef {
    let v = m.continuous(name, bounds.0, bounds.1);
    m.define(v.id, def);
    v
}

fn product(m: &mut MilpModel, name: String, a: VarRef, b: VarRef) -> Result<VarRef, ModelError> {
    let t = aux(
        m,
        name.clone(),
        product_bounds((a.lower, a.upper), (b.lower, b.upper)),
        VarDef::Product(a.id, b.id),
    );
    let chain = relax_product_chain(m, &name, &[a, b], t)?;
    m.add_constraints(chain.rows);
    Ok(t)
}

fn flow_row(target: VarRef, terms: &[(VarRef, f64)]) -> LinearConstraint {
    let mut coefficients: Vec<(VarId, f64)> = vec![(target.id, 1.0)];
    coefficients.extend(terms.iter().map(|(v, c)| (v.id, -c)));
    LinearConstraint::eq(coefficients, 0.0).normalized()
}

/// Appends the relaxed `Q^AC(s)` block for `s` to the master.
pub fn add_qc_scenario_block(master: &mut Master, s: &Scenario, resilience: Resilience) -> Result<(), ModelError> {
    check_scenario(master, s)?;
    let net = master.net.clone();
    let data = master.data.clone();
    let (tu, tm) = (net.params.theta_u, net.params.theta_m);
    let base = net.params.base_mva;
    let sid = s.id.clone();
    let one = master.model.one();

    let mut buses = Vec::with_capacity(net.buses.len());
    let mut vhat = Vec::with_capacity(net.buses.len());
    for (i, b) in net.buses.iter().enumerate() {
        let m = &mut master.model;
        let theta = m.continuous(format!("{sid}:va[{}]", b.id), f64::NEG_INFINITY, f64::INFINITY);
        let v = m.continuous(format!("{sid}:v[{}]", b.id), b.v_min, b.v_max);
        let vh = aux(m, format!("{sid}:vhat[{}]", b.id), square_bounds((b.v_min, b.v_max)), VarDef::Square(v.id));
        let (atom, secant) = mccormick_q(vh, v, one)?;
        m.add_soc(atom);
        m.add_constraint(secant);
        vhat.push(vh);
        let (zp, gp, reactive) = add_generation(master, &sid, i, true);
        let (zq, gq) = reactive.expect("reactive generation requested");
        let m = &mut master.model;
        let yp = m.continuous(format!("{sid}:yp[{}]", b.id), 0.0, 1.0);
        let yq = m.continuous(format!("{sid}:yq[{}]", b.id), 0.0, 1.0);
        buses.push(BusBlock {
            theta,
            v: Some(v),
            gp,
            gq: Some(gq),
            yp,
            yq: Some(yq),
            zp,
            zq: Some(zq),
        });
    }

    let mut lines = Vec::with_capacity(net.lines.len());
    let mut p_at: Vec<Vec<VarRef>> = vec![Vec::new(); net.buses.len()];
    let mut q_at: Vec<Vec<VarRef>> = vec![Vec::new(); net.buses.len()];
    for (k, (line, d)) in net.lines.iter().zip(&data).enumerate() {
        let topo = add_topology(master, s, k);
        let m = &mut master.model;
        let lid = &line.id;
        let n = |what: &str| format!("{sid}:{what}[{lid}]");
        let (bi, bj) = (&buses[d.from], &buses[d.to]);
        let (vi, vj) = (bi.v.unwrap(), bj.v.unwrap());
        m.add_constraint(angle_difference_row(topo.theta, bi.theta, bj.theta, topo.phi));

        let tsq = aux(m, n("theta_sq"), (0.0, tm * tm), VarDef::Square(topo.theta.id));
        let cs = aux(
            m,
            n("cs"),
            (0.0, 1.0),
            VarDef::OnOffCos {
                on: topo.on.id,
                angle: topo.theta.id,
            },
        );
        let sn = aux(
            m,
            n("sn"),
            (-tu.sin(), tu.sin()),
            VarDef::OnOffSin {
                on: topo.on.id,
                angle: topo.theta.id,
            },
        );
        let cos = cos_envelope(cs, topo.theta, topo.on, tsq, one, tu, tm)?;
        m.add_constraints(cos.rows);
        m.add_soc(cos.atom);
        m.add_constraints(sin_envelope(sn, topo.theta, topo.on, tu, tm)?);

        let w = aux(
            m,
            n("w"),
            product_bounds((vi.lower, vi.upper), (vj.lower, vj.upper)),
            VarDef::Product(vi.id, vj.id),
        );
        m.add_constraints(mccormick(w, vi, vj)?);
        let xv_i = product(m, n("xv_i"), topo.on, vhat[d.from])?;
        let xv_j = product(m, n("xv_j"), topo.on, vhat[d.to])?;
        let wc = product(m, n("wc"), w, cs)?;
        let ws = product(m, n("ws"), w, sn)?;
        let dxv_i = product(m, n("dxv_i"), topo.delta, xv_i)?;
        let dxv_j = product(m, n("dxv_j"), topo.delta, xv_j)?;
        let dwc = product(m, n("dwc"), topo.delta, wc)?;
        let dws = product(m, n("dws"), topo.delta, ws)?;

        let t = d.t;
        let p_ij = m.continuous(n("p_ij"), -t, t);
        let q_ij = m.continuous(n("q_ij"), -t, t);
        let p_ji = m.continuous(n("p_ji"), -t, t);
        let q_ji = m.continuous(n("q_ji"), -t, t);
        let vmin = net.buses[d.from].v_min;
        let l = m.continuous(n("l"), 0.0, t * t / (vmin * vmin));
        let dl = product(m, n("dl"), topo.delta, l)?;

        let (g, b) = (d.g, d.b);
        let (dg, db) = (d.g_bar - d.g, d.b_bar - d.b);
        m.add_constraint(flow_row(
            p_ij,
            &[(xv_i, g), (dxv_i, dg), (wc, -g), (dwc, -dg), (ws, -b), (dws, -db)],
        ));
        m.add_constraint(flow_row(
            q_ij,
            &[(xv_i, -b), (dxv_i, -db), (wc, b), (dwc, db), (ws, -g), (dws, -dg)],
        ));
        m.add_constraint(flow_row(
            p_ji,
            &[(xv_j, g), (dxv_j, dg), (wc, -g), (dwc, -dg), (ws, b), (dws, db)],
        ));
        m.add_constraint(flow_row(
            q_ji,
            &[(xv_j, -b), (dxv_j, -db), (wc, b), (dwc, db), (ws, g), (dws, dg)],
        ));

        m.add_constraint(LinearConstraint::eq(vec![(p_ij.id, 1.0), (p_ji.id, 1.0), (l.id, -d.r)], 0.0).normalized());
        m.add_constraint(
            LinearConstraint::eq(
                vec![(q_ij.id, 1.0), (q_ji.id, 1.0), (l.id, -d.x), (dl.id, d.x - d.x_bar)],
                0.0,
            )
            .normalized(),
        );
        m.add_soc(SocAtom {
            x: vec![p_ij.id, q_ij.id],
            y: vhat[d.from].id,
            z: l.id,
        });

        // p² + q² ≤ x̃ T² on both ends, plus the implied boxes |p|, |q| ≤ x̃ T.
        let th = aux(m, n("thermal"), (0.0, t * t), VarDef::Affine(vec![(topo.on.id, t * t)], 0.0));
        m.add_constraint(LinearConstraint::eq(vec![(th.id, 1.0), (topo.on.id, -t * t)], 0.0));
        for (pf, qf) in [(p_ij, q_ij), (p_ji, q_ji)] {
            m.add_soc(SocAtom {
                x: vec![pf.id, qf.id],
                y: one.id,
                z: th.id,
            });
            for f in [pf, qf] {
                m.add_constraint(LinearConstraint::le(vec![(f.id, 1.0), (topo.on.id, -t)], 0.0));
                m.add_constraint(LinearConstraint::ge(vec![(f.id, 1.0), (topo.on.id, t)], 0.0));
            }
        }

        p_at[d.from].push(p_ij);
        q_at[d.from].push(q_ij);
        p_at[d.to].push(p_ji);
        q_at[d.to].push(q_ji);
        lines.push(LineBlock {
            x: topo.x,
            tau: topo.tau,
            t: topo.t,
            delta: topo.delta,
            gamma: topo.gamma,
            on: topo.on,
            theta: topo.theta,
            phi: topo.phi,
            p_ij,
            q_ij: Some(q_ij),
            p_ji: Some(p_ji),
            q_ji: Some(q_ji),
            l: Some(l),
        });
    }

    let m = &mut master.model;
    for (i, b) in net.buses.iter().enumerate() {
        let bb = &buses[i];
        m.add_constraint(balance_row(bb.gp, bb.yp, b.demand_p / base, &p_at[i]));
        m.add_constraint(balance_row(bb.gq.unwrap(), bb.yq.unwrap(), b.demand_q / base, &q_at[i]));
    }
    let yp: Vec<_> = buses.iter().map(|b| b.yp).collect();
    let yq: Vec<_> = buses.iter().map(|b| b.yq.unwrap()).collect();
    let slacks = add_resilience(m, &sid, &net, &yp, Some(&yq), resilience);
    master.blocks.push(ScenarioBlock {
        scenario: s.clone(),
        lines,
        buses,
        slacks,
    });
    Ok(())
}
