//! First-stage upgrade decisions shared by the QC and DC models, the master
//! model container, and extraction of designs and operating states.

use crate::envelopes::EnvelopeError;
use crate::milp::{
    solve_with_cuts, CutOptions, LinearConstraint, MilpBackend, MilpModel, ObjSense, SolveError, SolveResult,
    VarDef, VarRef,
};
use crate::netmodel::{admittance_of, Network, NetworkError};
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Qc,
    Dc,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Qc => "qc",
            Mode::Dc => "dc",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qc" => Ok(Mode::Qc),
            "dc" => Ok(Mode::Dc),
            other => Err(format!("unknown mode \"{other}\" (expected qc or dc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub mode: Mode,
    /// Offer FACTS and PST installation.
    pub devices: bool,
    /// Offer switch installation.
    pub switches: bool,
    /// Optional cap on total upgrade cost in $.
    pub budget: Option<f64>,
}

impl ModelOptions {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            devices: false,
            switches: true,
            budget: None,
        }
    }

    pub fn with_devices(mut self, devices: bool) -> Self {
        self.devices = devices;
        self
    }
}

/// How the resilience requirements enter a scenario block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resilience {
    /// Served fractions must meet the targets.
    Hard,
    /// Shortfalls are absorbed by nonnegative slacks `λ`.
    Slack,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error("scenario {scenario} references unknown line \"{line}\"")]
    UnknownLine { scenario: String, line: String },
    #[error("scenario {scenario} damages candidate line \"{line}\"")]
    CandidateDamaged { scenario: String, line: String },
    #[error("scenario {0} is already in the model")]
    DuplicateScenario(String),
    #[error("no scenario given")]
    NoScenarios,
    #[error("variable {name} = {value} is not integral (tolerance {tol})")]
    Integrality { name: String, value: f64, tol: f64 },
    #[error("design references unknown {kind} \"{id}\"")]
    UnknownDesignEntry { kind: &'static str, id: String },
    #[error("scenario {0} is not in the model")]
    MissingScenario(String),
}

/// First-stage decision σ. Existing lines are always built and are not
/// listed in `build_line`. Capacities are in MW / MVAr.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignDecision {
    pub build_line: BTreeSet<String>,
    pub add_switch: BTreeSet<String>,
    pub harden: BTreeSet<String>,
    pub facts: BTreeSet<String>,
    pub pst: BTreeSet<String>,
    pub build_gen: BTreeSet<String>,
    pub gen_capacity_p: BTreeMap<String, f64>,
    pub gen_capacity_q: BTreeMap<String, f64>,
}

impl DesignDecision {
    pub fn capacity_p(&self, bus: &str) -> f64 {
        self.gen_capacity_p.get(bus).copied().unwrap_or(0.0)
    }

    pub fn capacity_q(&self, bus: &str) -> f64 {
        self.gen_capacity_q.get(bus).copied().unwrap_or(0.0)
    }

    pub fn is_built(&self, net: &Network, line: usize) -> bool {
        let l = &net.lines[line];
        l.exists || self.build_line.contains(&l.id)
    }

    /// Upgrade cost in $ under the costs of `net`.
    pub fn cost(&self, net: &Network) -> f64 {
        let mut c = 0.0;
        for l in &net.lines {
            if !l.exists && self.build_line.contains(&l.id) {
                c += l.cost_build;
            }
            for (set, cost) in [
                (&self.add_switch, l.cost_switch),
                (&self.harden, l.cost_harden),
                (&self.facts, l.cost_facts),
                (&self.pst, l.cost_pst),
            ] {
                if set.contains(&l.id) {
                    c += cost;
                }
            }
        }
        for b in &net.buses {
            if self.build_gen.contains(&b.id) {
                c += b.cost_gen_facility;
            }
            c += b.cost_gen_capacity * self.capacity_p(&b.id);
        }
        c
    }

    /// Checks ids against `net` and the generator-capacity rules, with
    /// `tol` MW of slack on the capacity inequalities.
    pub fn validate(&self, net: &Network, tol: f64) -> Result<(), String> {
        let line_ids: BTreeSet<&str> = net.lines.iter().map(|l| l.id.as_str()).collect();
        for (kind, set) in [
            ("build_line", &self.build_line),
            ("add_switch", &self.add_switch),
            ("harden", &self.harden),
            ("facts", &self.facts),
            ("pst", &self.pst),
        ] {
            if let Some(id) = set.iter().find(|id| !line_ids.contains(id.as_str())) {
                return Err(format!("{kind} lists unknown line \"{id}\""));
            }
        }
        for l in &net.lines {
            if l.exists && self.build_line.contains(&l.id) {
                return Err(format!("build_line lists existing line \"{}\"", l.id));
            }
        }
        for b in &net.buses {
            let (zp, zq) = (self.capacity_p(&b.id), self.capacity_q(&b.id));
            let u = self.build_gen.contains(&b.id);
            if zp < -tol || zq < -tol {
                return Err(format!("negative capacity at bus \"{}\"", b.id));
            }
            if (!u && (zp > tol || zq > tol)) || zp > b.new_gen_p_cap + tol || zq > b.new_gen_q_cap + tol {
                return Err(format!("capacity at bus \"{}\" exceeds its facility limit", b.id));
            }
            if zp + tol < 2.0 * zq {
                return Err(format!("bus \"{}\" has zp < 2 zq", b.id));
            }
        }
        let bus_ids: BTreeSet<&str> = net.buses.iter().map(|b| b.id.as_str()).collect();
        for id in self
            .build_gen
            .iter()
            .chain(self.gen_capacity_p.keys())
            .chain(self.gen_capacity_q.keys())
        {
            if !bus_ids.contains(id.as_str()) {
                return Err(format!("design lists unknown bus \"{id}\""));
            }
        }
        Ok(())
    }
}

/// Fixed admittance data of a line, per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineData {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub g_bar: f64,
    pub b_bar: f64,
    pub r: f64,
    pub x: f64,
    pub x_bar: f64,
    /// Thermal limit in per unit.
    pub t: f64,
}

pub(crate) fn line_data(net: &Network) -> Result<Vec<LineData>, NetworkError> {
    let base = net.params.base_mva;
    net.lines
        .iter()
        .zip(net.endpoints())
        .map(|(l, (from, to))| {
            let (g, b) = admittance_of(l, false)?;
            let (g_bar, b_bar) = admittance_of(l, true)?;
            Ok(LineData {
                from,
                to,
                g,
                b,
                g_bar,
                b_bar,
                r: l.resistance,
                x: l.reactance,
                x_bar: l.reduced_reactance,
                t: l.thermal_limit / base,
            })
        })
        .collect()
}

/// Handles of the first-stage variables. Options that are not offered are
/// still present but fixed to 0; existing lines have `x` fixed to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVars {
    pub x: Vec<VarRef>,
    pub tau: Vec<VarRef>,
    pub t: Vec<VarRef>,
    pub delta: Vec<VarRef>,
    pub gamma: Vec<VarRef>,
    pub u: Vec<VarRef>,
    /// Per unit.
    pub zp: Vec<VarRef>,
    /// Per unit, nonnegative magnitude.
    pub zq: Vec<VarRef>,
    /// `(var, $ per unit of var)` terms of the upgrade cost.
    pub cost_terms: Vec<(crate::milp::VarId, f64)>,
}

/// Per-line handles of a scenario block. QC-only entries are `None` in DC
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LineBlock {
    pub x: VarRef,
    pub tau: VarRef,
    pub t: VarRef,
    pub delta: VarRef,
    pub gamma: VarRef,
    /// `x̃ = x − τ`.
    pub on: VarRef,
    /// `θ_i − θ_j + φ`.
    pub theta: VarRef,
    pub phi: VarRef,
    pub p_ij: VarRef,
    pub q_ij: Option<VarRef>,
    pub p_ji: Option<VarRef>,
    pub q_ji: Option<VarRef>,
    /// Squared current magnitude.
    pub l: Option<VarRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusBlock {
    pub theta: VarRef,
    pub v: Option<VarRef>,
    pub gp: VarRef,
    pub gq: Option<VarRef>,
    pub yp: VarRef,
    pub yq: Option<VarRef>,
    pub zp: VarRef,
    pub zq: Option<VarRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBlock {
    pub scenario: Scenario,
    pub lines: Vec<LineBlock>,
    pub buses: Vec<BusBlock>,
    /// `[λp_cr, λq_cr, λp_ncr, λq_ncr]` in per unit, when built with slacks.
    pub slacks: Option<[VarRef; 4]>,
}

/// Second-stage state of one scenario, in MW / MVAr / per unit / radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOperation {
    pub scenario: String,
    pub lines: Vec<LineOperation>,
    pub buses: Vec<BusOperation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineOperation {
    pub id: String,
    pub x: bool,
    pub tau: bool,
    pub t: bool,
    pub delta: bool,
    pub gamma: bool,
    pub theta: f64,
    pub phi: f64,
    pub p_ij: f64,
    pub q_ij: f64,
    pub p_ji: f64,
    pub q_ji: f64,
    pub l: f64,
}

impl LineOperation {
    /// `x̃ = x − τ`.
    pub fn on(&self) -> bool {
        self.x && !self.tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusOperation {
    pub id: String,
    pub theta: f64,
    pub v: f64,
    pub gp: f64,
    pub gq: f64,
    pub zp: f64,
    pub zq: f64,
    pub yp: f64,
    pub yq: f64,
}

/// Tolerance for reading binaries out of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub integrality_tol: f64,
    /// Reject values farther than the tolerance from an integer instead of
    /// rounding them at 0.5 with a warning.
    pub strict: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            integrality_tol: 1e-6,
            strict: false,
        }
    }
}

/// Rounds a binary at 0.5.
pub fn round_binary(name: &str, value: f64, opts: ExtractOptions) -> Result<bool, ModelError> {
    let on = value >= 0.5;
    let gap = (value - if on { 1.0 } else { 0.0 }).abs();
    if gap > opts.integrality_tol {
        if opts.strict {
            return Err(ModelError::Integrality {
                name: name.to_string(),
                value,
                tol: opts.integrality_tol,
            });
        }
        log::warn!("{name} = {value} rounded to {}", on as u8);
    }
    Ok(on)
}

/// The master problem `P0(𝒮′)`: first stage, one block per scenario, and
/// the accumulated cone cuts.
#[derive(Debug, Clone)]
pub struct Master {
    pub model: MilpModel,
    pub design: DesignVars,
    pub blocks: Vec<ScenarioBlock>,
    pub options: ModelOptions,
    pub(crate) net: Network,
    pub(crate) data: Vec<LineData>,
    lower_bound_row: Option<usize>,
}

impl Master {
    /// First-stage variables, costs and generator-capacity rules only.
    pub fn new(net: &Network, options: ModelOptions) -> Result<Self, ModelError> {
        let net = net.effective();
        let data = line_data(&net)?;
        let base = net.params.base_mva;
        let mut m = MilpModel::new();
        let mut cost_terms = Vec::new();
        fn lv(
            m: &mut MilpModel,
            cost_terms: &mut Vec<(crate::milp::VarId, f64)>,
            name: &str,
            id: &str,
            allowed: bool,
            cost: f64,
        ) -> VarRef {
            let v = m.binary(format!("{name}[{id}]"));
            if allowed {
                cost_terms.push((v.id, cost));
                v
            } else {
                m.fix(v.id, 0.0);
                m.var_ref(v.id)
            }
        }
        let mut x = Vec::new();
        let mut tau = Vec::new();
        let mut t = Vec::new();
        let mut delta = Vec::new();
        let mut gamma = Vec::new();
        for l in &net.lines {
            let xv = if l.exists {
                m.continuous(format!("x[{}]", l.id), 1.0, 1.0)
            } else {
                lv(&mut m, &mut cost_terms, "x", &l.id, true, l.cost_build)
            };
            x.push(xv);
            tau.push(lv(&mut m, &mut cost_terms, "tau", &l.id, options.switches, l.cost_switch));
            t.push(lv(&mut m, &mut cost_terms, "t", &l.id, l.exists, l.cost_harden));
            delta.push(lv(&mut m, &mut cost_terms, "delta", &l.id, options.devices, l.cost_facts));
            gamma.push(lv(&mut m, &mut cost_terms, "gamma", &l.id, options.devices, l.cost_pst));
        }
        let mut u = Vec::new();
        let mut zp = Vec::new();
        let mut zq = Vec::new();
        for b in &net.buses {
            let can = b.new_gen_p_cap > 0.0;
            let uv = lv(&mut m, &mut cost_terms, "u", &b.id, can, b.cost_gen_facility);
            let (pcap, qcap) = (b.new_gen_p_cap / base, b.new_gen_q_cap / base);
            let zpv = m.continuous(format!("zp[{}]", b.id), 0.0, if can { pcap } else { 0.0 });
            let zqv = m.continuous(format!("zq[{}]", b.id), 0.0, if can { qcap } else { 0.0 });
            cost_terms.push((zpv.id, b.cost_gen_capacity * base));
            m.add_constraint(LinearConstraint::le(vec![(zpv.id, 1.0), (uv.id, -pcap)], 0.0));
            m.add_constraint(LinearConstraint::le(vec![(zqv.id, 1.0), (uv.id, -qcap)], 0.0));
            m.add_constraint(LinearConstraint::ge(vec![(zpv.id, 1.0), (zqv.id, -2.0)], 0.0));
            u.push(uv);
            zp.push(zpv);
            zq.push(zqv);
        }
        cost_terms.retain(|(_, c)| *c != 0.0);
        m.set_objective(ObjSense::Minimize, cost_terms.clone(), 0.0);
        if let Some(cap) = options.budget {
            m.add_constraint(LinearConstraint::le(cost_terms.clone(), cap));
        }
        if options.mode == Mode::Dc {
            for v in &zq {
                m.fix(v.id, 0.0);
            }
        }
        Ok(Self {
            model: m,
            design: DesignVars {
                x,
                tau,
                t,
                delta,
                gamma,
                u,
                zp,
                zq,
                cost_terms,
            },
            blocks: Vec::new(),
            options,
            net,
            data,
            lower_bound_row: None,
        })
    }

    /// The network the model was built from (load scale applied).
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn scenario_ids(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.scenario.id.as_str()).collect()
    }

    pub fn block(&self, scenario: &str) -> Option<&ScenarioBlock> {
        self.blocks.iter().find(|b| b.scenario.id == scenario)
    }

    /// Adds a block in the configured mode.
    pub fn add_scenario(&mut self, s: &Scenario, resilience: Resilience) -> Result<(), ModelError> {
        match self.options.mode {
            Mode::Qc => crate::qc::add_qc_scenario_block(self, s, resilience),
            Mode::Dc => crate::dc::add_dc_scenario_block(self, s, resilience),
        }
    }

    /// Requires the upgrade cost to be at least `bound`, replacing any
    /// earlier such bound.
    pub fn set_cost_lower_bound(&mut self, bound: f64) {
        let row = LinearConstraint::ge(self.design.cost_terms.clone(), bound);
        match self.lower_bound_row {
            Some(k) => self.model.constraints[k] = row,
            None => self.lower_bound_row = Some(self.model.add_constraint(row)),
        }
    }

    /// Binds every first-stage variable to `design`.
    pub fn fix_design(&mut self, design: &DesignDecision) -> Result<(), ModelError> {
        let vals = self.design_values(design)?;
        for (id, v) in vals {
            self.model.fix(id, v);
        }
        Ok(())
    }

    fn design_values(&self, d: &DesignDecision) -> Result<Vec<(crate::milp::VarId, f64)>, ModelError> {
        let net = &self.net;
        let base = net.params.base_mva;
        let known_line = |id: &String| net.line_index(id).is_some();
        let known_bus = |id: &String| net.bus_index(id).is_some();
        for set in [&d.build_line, &d.add_switch, &d.harden, &d.facts, &d.pst] {
            if let Some(id) = set.iter().find(|id| !known_line(id)) {
                return Err(ModelError::UnknownDesignEntry { kind: "line", id: id.clone() });
            }
        }
        for id in d.build_gen.iter().chain(d.gen_capacity_p.keys()).chain(d.gen_capacity_q.keys()) {
            if !known_bus(id) {
                return Err(ModelError::UnknownDesignEntry { kind: "bus", id: id.clone() });
            }
        }
        let mut out = Vec::new();
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let dv = &self.design;
        for (k, l) in net.lines.iter().enumerate() {
            out.push((dv.x[k].id, flag(l.exists || d.build_line.contains(&l.id))));
            out.push((dv.tau[k].id, flag(d.add_switch.contains(&l.id))));
            out.push((dv.t[k].id, flag(d.harden.contains(&l.id))));
            out.push((dv.delta[k].id, flag(d.facts.contains(&l.id))));
            out.push((dv.gamma[k].id, flag(d.pst.contains(&l.id))));
        }
        for (k, b) in net.buses.iter().enumerate() {
            out.push((dv.u[k].id, flag(d.build_gen.contains(&b.id))));
            out.push((dv.zp[k].id, d.capacity_p(&b.id) / base));
            let zq = if self.options.mode == Mode::Dc { 0.0 } else { d.capacity_q(&b.id) / base };
            out.push((dv.zq[k].id, zq));
        }
        Ok(out)
    }

    /// Solves by outer approximation; cuts persist in the model.
    pub fn solve(&mut self, backend: &dyn MilpBackend, options: &CutOptions) -> Result<SolveResult, SolveError> {
        solve_with_cuts(&mut self.model, backend, options)
    }

    /// Reads the first-stage decision out of a solution. Switches, hardening
    /// and devices that no scenario block uses are dropped.
    pub fn extract_design(&self, values: &[f64], opts: ExtractOptions) -> Result<DesignDecision, ModelError> {
        let net = &self.net;
        let base = net.params.base_mva;
        let dv = &self.design;
        let bin = |v: &VarRef| round_binary(self.model.name(v.id), values[v.id.0], opts);
        let mut d = DesignDecision::default();
        for (k, l) in net.lines.iter().enumerate() {
            if !l.exists && bin(&dv.x[k])? {
                d.build_line.insert(l.id.clone());
            }
            for (set, v) in [
                (&mut d.add_switch, &dv.tau[k]),
                (&mut d.harden, &dv.t[k]),
                (&mut d.facts, &dv.delta[k]),
                (&mut d.pst, &dv.gamma[k]),
            ] {
                if bin(v)? {
                    set.insert(l.id.clone());
                }
            }
        }
        // An option that no scenario uses can be dropped at no extra cost.
        for (k, l) in net.lines.iter().enumerate() {
            let used = |pick: fn(&LineBlock) -> VarRef| {
                self.blocks.iter().any(|b| values[pick(&b.lines[k]).id.0] >= 0.5)
            };
            if !used(|b| b.tau) {
                d.add_switch.remove(&l.id);
            }
            if !used(|b| b.t) {
                d.harden.remove(&l.id);
            }
            if !used(|b| b.delta) {
                d.facts.remove(&l.id);
            }
            if !used(|b| b.gamma) {
                d.pst.remove(&l.id);
            }
        }
        for (k, b) in net.buses.iter().enumerate() {
            if bin(&dv.u[k])? {
                d.build_gen.insert(b.id.clone());
                let zp = clean(values[dv.zp[k].id.0] * base).clamp(0.0, b.new_gen_p_cap);
                let zq = clean(values[dv.zq[k].id.0] * base).clamp(0.0, b.new_gen_q_cap.min(zp / 2.0));
                d.gen_capacity_p.insert(b.id.clone(), zp);
                d.gen_capacity_q.insert(b.id.clone(), zq);
            }
        }
        Ok(d)
    }

    /// Reads the second-stage state of `scenario` out of a solution.
    pub fn extract_operation(
        &self,
        values: &[f64],
        scenario: &str,
        opts: ExtractOptions,
    ) -> Result<ScenarioOperation, ModelError> {
        let block = self
            .block(scenario)
            .ok_or_else(|| ModelError::MissingScenario(scenario.to_string()))?;
        let base = self.net.params.base_mva;
        let val = |v: &VarRef| values[v.id.0];
        let opt = |v: &Option<VarRef>, scale: f64| v.map_or(0.0, |v| values[v.id.0] * scale);
        let bin = |v: &VarRef| round_binary(self.model.name(v.id), values[v.id.0], opts);
        let mut lines = Vec::new();
        for (l, lb) in self.net.lines.iter().zip(&block.lines) {
            let p_ij = val(&lb.p_ij) * base;
            lines.push(LineOperation {
                id: l.id.clone(),
                x: bin(&lb.x)?,
                tau: bin(&lb.tau)?,
                t: bin(&lb.t)?,
                delta: bin(&lb.delta)?,
                gamma: bin(&lb.gamma)?,
                theta: val(&lb.theta),
                phi: val(&lb.phi),
                p_ij,
                q_ij: opt(&lb.q_ij, base),
                p_ji: lb.p_ji.map_or(-p_ij, |v| values[v.id.0] * base),
                q_ji: opt(&lb.q_ji, base),
                l: opt(&lb.l, 1.0),
            });
        }
        let buses = self
            .net
            .buses
            .iter()
            .zip(&block.buses)
            .map(|(b, bb)| BusOperation {
                id: b.id.clone(),
                theta: val(&bb.theta),
                v: bb.v.map_or(1.0, |v| values[v.id.0]),
                gp: val(&bb.gp) * base,
                gq: opt(&bb.gq, base),
                zp: val(&bb.zp) * base,
                zq: opt(&bb.zq, base),
                yp: val(&bb.yp),
                yq: bb.yq.map_or(val(&bb.yp), |v| values[v.id.0]),
            })
            .collect();
        Ok(ScenarioOperation {
            scenario: scenario.to_string(),
            lines,
            buses,
        })
    }

    /// Maps a design and per-scenario operating states into the model's
    /// variable space and fills every auxiliary from its definition
    /// (`v̂ = v²`, `ŵ = v_i v_j`, `ĉs = x̃ cos θ`, ...).
    pub fn lift(&self, design: &DesignDecision, ops: &[ScenarioOperation]) -> Result<Vec<f64>, ModelError> {
        let mut values = vec![0.0; self.model.num_vars()];
        for (id, v) in self.design_values(design)? {
            values[id.0] = v;
        }
        let base = self.net.params.base_mva;
        for op in ops {
            let block = self
                .block(&op.scenario)
                .ok_or_else(|| ModelError::MissingScenario(op.scenario.clone()))?;
            let mut set = |v: &VarRef, x: f64| values[v.id.0] = x;
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            for (lb, lo) in block.lines.iter().zip(&op.lines) {
                set(&lb.x, flag(lo.x));
                set(&lb.tau, flag(lo.tau));
                set(&lb.t, flag(lo.t));
                set(&lb.delta, flag(lo.delta));
                set(&lb.gamma, flag(lo.gamma));
                set(&lb.theta, lo.theta);
                set(&lb.phi, lo.phi);
                set(&lb.p_ij, lo.p_ij / base);
                for (v, x) in [(&lb.q_ij, lo.q_ij / base), (&lb.p_ji, lo.p_ji / base), (&lb.q_ji, lo.q_ji / base), (&lb.l, lo.l)] {
                    if let Some(v) = v {
                        set(v, x);
                    }
                }
            }
            for (bb, bo) in block.buses.iter().zip(&op.buses) {
                set(&bb.theta, bo.theta);
                set(&bb.gp, bo.gp / base);
                set(&bb.yp, bo.yp);
                set(&bb.zp, bo.zp / base);
                for (v, x) in [(&bb.v, bo.v), (&bb.gq, bo.gq / base), (&bb.yq, bo.yq), (&bb.zq, bo.zq / base)] {
                    if let Some(v) = v {
                        set(v, x);
                    }
                }
            }
        }
        self.model.complete_assignment(&mut values);
        Ok(values)
    }
}

/// Drops solver noise below 1e-9 in magnitude.
fn clean(x: f64) -> f64 {
    if x.abs() < 1e-9 {
        0.0
    } else {
        x
    }
}

/// Per-line topology and device variables of one scenario.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Topology {
    pub x: VarRef,
    pub tau: VarRef,
    pub t: VarRef,
    pub delta: VarRef,
    pub gamma: VarRef,
    pub on: VarRef,
    pub theta: VarRef,
    pub phi: VarRef,
}

/// Creates the per-line topology and device variables shared by both block
/// kinds, with linking rows to the first stage, the damage logic, the PST
/// range and the on/off angle-difference limit.
pub(crate) fn add_topology(master: &mut Master, s: &Scenario, k: usize) -> Topology {
    let sid = &s.id;
    let lid = master.net.lines[k].id.clone();
    let damaged = s.damaged_lines.contains(&lid);
    let (tm, tu, pu) = (master.net.params.theta_m, master.net.params.theta_u, master.net.params.phi_u);
    let dv = &master.design;
    let first = [dv.x[k], dv.tau[k], dv.t[k], dv.delta[k], dv.gamma[k]];
    let m = &mut master.model;
    let x = m.binary(format!("{sid}:x[{lid}]"));
    let tau = m.binary(format!("{sid}:tau[{lid}]"));
    let t = m.binary(format!("{sid}:t[{lid}]"));
    let delta = m.binary(format!("{sid}:delta[{lid}]"));
    let gamma = m.binary(format!("{sid}:gamma[{lid}]"));
    if damaged {
        m.add_constraint(LinearConstraint::le(vec![(x.id, 1.0), (first[0].id, -1.0)], 0.0));
        m.add_constraint(LinearConstraint::eq(vec![(x.id, 1.0), (t.id, -1.0)], 0.0));
    } else {
        m.add_constraint(LinearConstraint::eq(vec![(x.id, 1.0), (first[0].id, -1.0)], 0.0));
        m.fix(t.id, 0.0);
    }
    for (sv, fv) in [(tau, first[1]), (t, first[2]), (delta, first[3]), (gamma, first[4])] {
        m.add_constraint(LinearConstraint::le(vec![(sv.id, 1.0), (fv.id, -1.0)], 0.0));
    }
    let on = m.continuous(format!("{sid}:on[{lid}]"), 0.0, 1.0);
    m.define(on.id, VarDef::Affine(vec![(x.id, 1.0), (tau.id, -1.0)], 0.0));
    m.add_constraint(LinearConstraint::eq(vec![(on.id, 1.0), (x.id, -1.0), (tau.id, 1.0)], 0.0));
    for dev in [delta, gamma] {
        m.add_constraint(LinearConstraint::le(vec![(dev.id, 1.0), (on.id, -1.0)], 0.0));
    }
    let theta = m.continuous(format!("{sid}:theta[{lid}]"), -tm, tm);
    let phi = m.continuous(format!("{sid}:phi[{lid}]"), -pu, pu);
    m.add_constraint(LinearConstraint::le(vec![(phi.id, 1.0), (gamma.id, -pu)], 0.0));
    m.add_constraint(LinearConstraint::ge(vec![(phi.id, 1.0), (gamma.id, pu)], 0.0));
    // |θ_ij| ≤ x̃ θ_u + (1 − x̃) θ_M
    m.add_constraint(LinearConstraint::le(vec![(theta.id, 1.0), (on.id, tm - tu)], tm));
    m.add_constraint(LinearConstraint::le(vec![(theta.id, -1.0), (on.id, tm - tu)], tm));
    Topology {
        x,
        tau,
        t,
        delta,
        gamma,
        on,
        theta,
        phi,
    }
}

/// `θ_ij = θ_i − θ_j + φ_ij`.
pub(crate) fn angle_difference_row(theta: VarRef, from: VarRef, to: VarRef, phi: VarRef) -> LinearConstraint {
    LinearConstraint::eq(
        vec![(theta.id, 1.0), (from.id, -1.0), (to.id, 1.0), (phi.id, -1.0)],
        0.0,
    )
}

/// Resilience rows (or slack definitions) over served fractions `y`.
pub(crate) fn add_resilience(
    m: &mut MilpModel,
    sid: &str,
    net: &Network,
    yp: &[VarRef],
    yq: Option<&[VarRef]>,
    resilience: Resilience,
) -> Option<[VarRef; 4]> {
    let base = net.params.base_mva;
    let g = &net.params;
    let classes = [
        (true, false, g.lp_cr, yp),
        (true, true, g.lq_cr, yq.unwrap_or(&[])),
        (false, false, g.lp_ncr, yp),
        (false, true, g.lq_ncr, yq.unwrap_or(&[])),
    ];
    let mut slacks = Vec::new();
    for (k, (critical, reactive, frac, ys)) in classes.into_iter().enumerate() {
        let names = ["lp_cr", "lq_cr", "lp_ncr", "lq_ncr"];
        let lam = match resilience {
            Resilience::Slack => Some(m.continuous(format!("{sid}:lambda_{}", names[k]), 0.0, f64::INFINITY)),
            Resilience::Hard => None,
        };
        if let Some(l) = lam {
            slacks.push(l);
        }
        if ys.is_empty() {
            continue;
        }
        let mut terms = Vec::new();
        let mut total = 0.0;
        for (b, y) in net.buses.iter().zip(ys) {
            if b.is_critical != critical {
                continue;
            }
            let d = if reactive { b.demand_q } else { b.demand_p } / base;
            total += d;
            if d != 0.0 {
                terms.push((y.id, d));
            }
        }
        if total == 0.0 {
            continue;
        }
        if let Some(l) = lam {
            terms.push((l.id, 1.0));
        }
        m.add_constraint(LinearConstraint::ge(terms, frac * total).normalized());
    }
    slacks.try_into().ok()
}

/// Rows of a KCL balance `g − d·y = Σ flows` at one bus.
pub(crate) fn balance_row(g: VarRef, y: VarRef, demand: f64, flows: &[VarRef]) -> LinearConstraint {
    let mut terms = vec![(g.id, 1.0), (y.id, -demand)];
    terms.extend(flows.iter().map(|f| (f.id, -1.0)));
    LinearConstraint::eq(terms, 0.0).normalized()
}

/// `build_master` in one call: first stage plus a hard block per scenario.
pub fn build_master(net: &Network, scenarios: &[&Scenario], options: ModelOptions) -> Result<Master, ModelError> {
    if scenarios.is_empty() {
        return Err(ModelError::NoScenarios);
    }
    let mut master = Master::new(net, options)?;
    for s in scenarios {
        master.add_scenario(s, Resilience::Hard)?;
    }
    Ok(master)
}

pub(crate) fn check_scenario(master: &Master, s: &Scenario) -> Result<(), ModelError> {
    if master.block(&s.id).is_some() {
        return Err(ModelError::DuplicateScenario(s.id.clone()));
    }
    for id in &s.damaged_lines {
        match master.net.line_index(id) {
            None => {
                return Err(ModelError::UnknownLine {
                    scenario: s.id.clone(),
                    line: id.clone(),
                })
            }
            Some(k) if !master.net.lines[k].exists => {
                return Err(ModelError::CandidateDamaged {
                    scenario: s.id.clone(),
                    line: id.clone(),
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Generator variables of one bus: `zp^s ≤ zp`, `zq^s ≤ zq`, `zp^s ≥ 2 zq^s`,
/// `0 ≤ gp ≤ gp^u + zp^s`.
pub(crate) fn add_generation(
    master: &mut Master,
    sid: &str,
    i: usize,
    reactive: bool,
) -> (VarRef, VarRef, Option<(VarRef, VarRef)>) {
    let b = master.net.buses[i].clone();
    let base = master.net.params.base_mva;
    let (zp_first, zq_first) = (master.design.zp[i], master.design.zq[i]);
    let m = &mut master.model;
    let zp = m.continuous(format!("{sid}:zp[{}]", b.id), 0.0, zp_first.upper);
    m.add_constraint(LinearConstraint::le(vec![(zp.id, 1.0), (zp_first.id, -1.0)], 0.0));
    let gp_u = b.existing_gen_p_max / base;
    let gp = m.continuous(format!("{sid}:gp[{}]", b.id), 0.0, gp_u + zp.upper);
    m.add_constraint(LinearConstraint::le(vec![(gp.id, 1.0), (zp.id, -1.0)], gp_u));
    if !reactive {
        return (zp, gp, None);
    }
    let zq = m.continuous(format!("{sid}:zq[{}]", b.id), 0.0, zq_first.upper);
    m.add_constraint(LinearConstraint::le(vec![(zq.id, 1.0), (zq_first.id, -1.0)], 0.0));
    m.add_constraint(LinearConstraint::ge(vec![(zp.id, 1.0), (zq.id, -2.0)], 0.0));
    let (ql, qu) = (b.existing_gen_q_min / base, b.existing_gen_q_max / base);
    let gq = m.continuous(format!("{sid}:gq[{}]", b.id), ql - zq.upper, qu + zq.upper);
    m.add_constraint(LinearConstraint::ge(vec![(gq.id, 1.0), (zq.id, 1.0)], ql));
    m.add_constraint(LinearConstraint::le(vec![(gq.id, 1.0), (zq.id, -1.0)], qu));
    (zp, gp, Some((zq, gq)))
}
