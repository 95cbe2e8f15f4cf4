//! Grid description: buses, lines, study parameters, and the JSON network file.
//!
//! Power quantities in the file are in MW / MVAr; impedances are per unit on
//! `params.base_mva`. The canonical serialized form writes every field, so
//! `parse_network(&to_json(&net))` reproduces `net` exactly.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Semantic { path: String, message: String },
    #[error("degenerate impedance on line {0}: R = X = 0")]
    DegenerateImpedance(String),
}

fn semantic(path: impl Into<String>, message: impl Into<String>) -> NetworkError {
    NetworkError::Semantic {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    /// Planar position in miles.
    pub location: (f64, f64),
    pub demand_p: f64,
    pub demand_q: f64,
    #[serde(default)]
    pub is_critical: bool,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub existing_gen_p_max: f64,
    #[serde(default)]
    pub existing_gen_q_min: f64,
    #[serde(default)]
    pub existing_gen_q_max: f64,
    #[serde(default)]
    pub new_gen_p_cap: f64,
    #[serde(default)]
    pub new_gen_q_cap: f64,
    #[serde(default)]
    pub cost_gen_facility: f64,
    /// $ per MW of new real-power capacity.
    #[serde(default)]
    pub cost_gen_capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    pub exists: bool,
    /// Miles. Euclidean distance between the endpoints when the file omits it.
    pub length: f64,
    pub resistance: f64,
    pub reactance: f64,
    /// Reactance with a series compensator engaged.
    pub reduced_reactance: f64,
    /// MVA.
    pub thermal_limit: f64,
    pub cost_build: f64,
    pub cost_switch: f64,
    pub cost_harden: f64,
    pub cost_facts: f64,
    pub cost_pst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalParams {
    /// Angle-difference limit on energized lines (rad).
    pub theta_u: f64,
    /// Big-M angle bound on open lines (rad).
    #[serde(default = "default_theta_m", alias = "theta_M")]
    pub theta_m: f64,
    /// Phase-shift limit of a PST (rad).
    pub phi_u: f64,
    pub lp_cr: f64,
    pub lq_cr: f64,
    pub lp_ncr: f64,
    pub lq_ncr: f64,
    #[serde(default = "one")]
    pub load_scale: f64,
    #[serde(default = "default_facts_factor")]
    pub facts_reduction_factor: f64,
    /// Weight on critical-load violations in AC recovery.
    #[serde(default = "default_m_crit", alias = "M_crit")]
    pub m_crit: f64,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
}

fn default_theta_m() -> f64 {
    PI
}
fn one() -> f64 {
    1.0
}
fn default_facts_factor() -> f64 {
    0.5
}
fn default_m_crit() -> f64 {
    100.0
}
fn default_base_mva() -> f64 {
    100.0
}

impl Default for GlobalParams {
    fn default() -> Self {
        Self {
            theta_u: 15f64.to_radians(),
            theta_m: PI,
            phi_u: 60f64.to_radians(),
            lp_cr: 0.99,
            lq_cr: 0.99,
            lp_ncr: 0.8,
            lq_ncr: 0.8,
            load_scale: 1.0,
            facts_reduction_factor: 0.5,
            m_crit: 100.0,
            base_mva: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub params: GlobalParams,
}

// File-side line record: length and reduced reactance are optional there.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    id: String,
    from: String,
    to: String,
    #[serde(default = "yes")]
    exists: bool,
    #[serde(default)]
    length: Option<f64>,
    resistance: f64,
    reactance: f64,
    #[serde(default)]
    reduced_reactance: Option<f64>,
    thermal_limit: f64,
    #[serde(default)]
    cost_build: f64,
    #[serde(default)]
    cost_switch: f64,
    #[serde(default)]
    cost_harden: f64,
    #[serde(default)]
    cost_facts: f64,
    #[serde(default)]
    cost_pst: f64,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    buses: Vec<Bus>,
    lines: Vec<RawLine>,
    params: GlobalParams,
}

/// Parses and validates a network description.
pub fn parse_network(text: &str) -> Result<Network, NetworkError> {
    let raw: RawNetwork = serde_json::from_str(text).map_err(|e| NetworkError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let positions: HashMap<&str, (f64, f64)> = raw
        .buses
        .iter()
        .map(|b| (b.id.as_str(), b.location))
        .collect();
    let mut lines = Vec::with_capacity(raw.lines.len());
    for (k, l) in raw.lines.iter().enumerate() {
        let endpoint = |id: &str, field: &str| {
            positions
                .get(id)
                .copied()
                .ok_or_else(|| semantic(format!("lines[{k}].{field}"), format!("unknown bus \"{id}\"")))
        };
        let a = endpoint(&l.from, "from")?;
        let b = endpoint(&l.to, "to")?;
        let length = l
            .length
            .unwrap_or_else(|| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        let reduced = l
            .reduced_reactance
            .unwrap_or(l.reactance * raw.params.facts_reduction_factor);
        lines.push(Line {
            id: l.id.clone(),
            from: l.from.clone(),
            to: l.to.clone(),
            exists: l.exists,
            length,
            resistance: l.resistance,
            reactance: l.reactance,
            reduced_reactance: reduced,
            thermal_limit: l.thermal_limit,
            cost_build: l.cost_build,
            cost_switch: l.cost_switch,
            cost_harden: l.cost_harden,
            cost_facts: l.cost_facts,
            cost_pst: l.cost_pst,
        });
    }
    let net = Network {
        buses: raw.buses,
        lines,
        params: raw.params,
    };
    net.validate()?;
    Ok(net)
}

/// Canonical JSON form of a network.
pub fn to_json(net: &Network) -> String {
    serde_json::to_string_pretty(net).expect("network serializes")
}

/// Series admittance `(G, B)` of a line, with `B < 0` for inductive lines.
///
/// With `facts_active` the reduced reactance replaces `X`.
pub fn admittance_of(line: &Line, facts_active: bool) -> Result<(f64, f64), NetworkError> {
    let z = if facts_active {
        line.reduced_reactance
    } else {
        line.reactance
    };
    let den = line.resistance * line.resistance + z * z;
    if den == 0.0 {
        return Err(NetworkError::DegenerateImpedance(line.id.clone()));
    }
    Ok((line.resistance / den, -z / den))
}

/// Returns a copy with every bus demand multiplied by `scale`.
pub fn apply_load_scale(net: &Network, scale: f64) -> Network {
    let mut out = net.clone();
    for b in &mut out.buses {
        b.demand_p *= scale;
        b.demand_q *= scale;
    }
    out
}

fn check_finite(path: &str, v: f64) -> Result<(), NetworkError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(semantic(path, "value must be finite"))
    }
}

fn check_nonneg(path: &str, v: f64) -> Result<(), NetworkError> {
    check_finite(path, v)?;
    if v < 0.0 {
        Err(semantic(path, format!("negative value {v}")))
    } else {
        Ok(())
    }
}

impl Network {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let mut seen = HashSet::new();
        for (k, b) in self.buses.iter().enumerate() {
            let p = |f: &str| format!("buses[{k}].{f}");
            if !seen.insert(b.id.as_str()) {
                return Err(semantic(p("id"), format!("duplicate bus id \"{}\"", b.id)));
            }
            check_finite(&p("location"), b.location.0)?;
            check_finite(&p("location"), b.location.1)?;
            check_finite(&p("demand_p"), b.demand_p)?;
            check_finite(&p("demand_q"), b.demand_q)?;
            check_finite(&p("v_min"), b.v_min)?;
            check_finite(&p("v_max"), b.v_max)?;
            if b.v_min <= 0.0 || b.v_min > b.v_max {
                return Err(semantic(p("v_min"), "require 0 < v_min <= v_max"));
            }
            check_nonneg(&p("existing_gen_p_max"), b.existing_gen_p_max)?;
            check_finite(&p("existing_gen_q_min"), b.existing_gen_q_min)?;
            check_finite(&p("existing_gen_q_max"), b.existing_gen_q_max)?;
            if b.existing_gen_q_min > b.existing_gen_q_max {
                return Err(semantic(p("existing_gen_q_min"), "exceeds existing_gen_q_max"));
            }
            check_nonneg(&p("new_gen_p_cap"), b.new_gen_p_cap)?;
            check_nonneg(&p("new_gen_q_cap"), b.new_gen_q_cap)?;
            check_nonneg(&p("cost_gen_facility"), b.cost_gen_facility)?;
            check_nonneg(&p("cost_gen_capacity"), b.cost_gen_capacity)?;
        }
        let mut line_ids = HashSet::new();
        for (k, l) in self.lines.iter().enumerate() {
            let p = |f: &str| format!("lines[{k}].{f}");
            if !line_ids.insert(l.id.as_str()) {
                return Err(semantic(p("id"), format!("duplicate line id \"{}\"", l.id)));
            }
            for (field, id) in [("from", &l.from), ("to", &l.to)] {
                if !seen.contains(id.as_str()) {
                    return Err(semantic(p(field), format!("unknown bus \"{id}\"")));
                }
            }
            if l.from == l.to {
                return Err(semantic(p("to"), "line endpoints must differ"));
            }
            check_nonneg(&p("length"), l.length)?;
            check_nonneg(&p("resistance"), l.resistance)?;
            check_finite(&p("reactance"), l.reactance)?;
            if l.reactance <= 0.0 {
                return Err(semantic(p("reactance"), "must be positive"));
            }
            check_finite(&p("reduced_reactance"), l.reduced_reactance)?;
            if l.reduced_reactance <= 0.0 || l.reduced_reactance > l.reactance {
                return Err(semantic(p("reduced_reactance"), "require 0 < X_bar <= X"));
            }
            check_finite(&p("thermal_limit"), l.thermal_limit)?;
            if l.thermal_limit <= 0.0 {
                return Err(semantic(p("thermal_limit"), format!("non-positive limit {}", l.thermal_limit)));
            }
            check_nonneg(&p("cost_build"), l.cost_build)?;
            check_nonneg(&p("cost_switch"), l.cost_switch)?;
            check_nonneg(&p("cost_harden"), l.cost_harden)?;
            check_nonneg(&p("cost_facts"), l.cost_facts)?;
            check_nonneg(&p("cost_pst"), l.cost_pst)?;
        }
        let g = &self.params;
        let p = |f: &str| format!("params.{f}");
        for (f, v) in [
            ("theta_u", g.theta_u),
            ("theta_m", g.theta_m),
            ("phi_u", g.phi_u),
            ("load_scale", g.load_scale),
            ("facts_reduction_factor", g.facts_reduction_factor),
            ("m_crit", g.m_crit),
            ("base_mva", g.base_mva),
        ] {
            check_finite(&p(f), v)?;
        }
        if !(g.theta_u > 0.0 && g.theta_u <= g.theta_m) {
            return Err(semantic(p("theta_u"), "require 0 < theta_u <= theta_m"));
        }
        if g.theta_u == g.theta_m {
            // Valid, but then an open line's angle bound is no looser than a closed one's.
            log::warn!("theta_m equals theta_u; open lines get no extra angle room");
        }
        if g.phi_u < 0.0 {
            return Err(semantic(p("phi_u"), "must be non-negative"));
        }
        for (f, v) in [("lp_cr", g.lp_cr), ("lq_cr", g.lq_cr), ("lp_ncr", g.lp_ncr), ("lq_ncr", g.lq_ncr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(semantic(p(f), "resilience fraction outside [0, 1]"));
            }
        }
        if !(g.facts_reduction_factor > 0.0 && g.facts_reduction_factor <= 1.0) {
            return Err(semantic(p("facts_reduction_factor"), "require 0 < factor <= 1"));
        }
        if g.load_scale <= 0.0 {
            return Err(semantic(p("load_scale"), "must be positive"));
        }
        if g.m_crit < 1.0 {
            return Err(semantic(p("m_crit"), "must be at least 1"));
        }
        if g.base_mva <= 0.0 {
            return Err(semantic(p("base_mva"), "must be positive"));
        }
        Ok(())
    }

    /// The network that models are built from: demands multiplied by
    /// `params.load_scale`, which is then reset to 1.
    pub fn effective(&self) -> Network {
        let mut out = apply_load_scale(self, self.params.load_scale);
        out.params.load_scale = 1.0;
        out
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// `(from, to)` bus indices of every line, in line order.
    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        let idx: HashMap<&str, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id.as_str(), k))
            .collect();
        self.lines
            .iter()
            .map(|l| (idx[l.from.as_str()], idx[l.to.as_str()]))
            .collect()
    }

    /// Adjacency lists over existing lines only.
    pub fn existing_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (l, (a, b)) in self.lines.iter().zip(self.endpoints()) {
            if l.exists {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }

    pub fn total_demand(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.demand_p, q + b.demand_q))
    }

    /// `(p, q)` demand totals of critical (`true`) or non-critical buses.
    pub fn class_demand(&self, critical: bool) -> (f64, f64) {
        self.buses
            .iter()
            .filter(|b| b.is_critical == critical)
            .fold((0.0, 0.0), |(p, q), b| (p + b.demand_p, q + b.demand_q))
    }

    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.buses.is_empty() {
            return None;
        }
        let n = self.buses.len() as f64;
        let (sx, sy) = self
            .buses
            .iter()
            .fold((0.0, 0.0), |(x, y), b| (x + b.location.0, y + b.location.1));
        Some((sx / n, sy / n))
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for b in &self.buses {
            x0 = x0.min(b.location.0);
            y0 = y0.min(b.location.1);
            x1 = x1.max(b.location.0);
            y1 = y1.max(b.location.1);
        }
        if self.buses.is_empty() {
            0.0
        } else {
            ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
        }
    }

    pub fn line_midpoint(&self, line: &Line) -> Option<(f64, f64)> {
        let a = self.buses.iter().find(|b| b.id == line.from)?.location;
        let b = self.buses.iter().find(|b| b.id == line.to)?.location;
        Some(((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
      "buses": [
        {"id": "b1", "location": [0, 0], "demand_p": 0, "demand_q": 0, "v_min": 0.95, "v_max": 1.05,
         "existing_gen_p_max": 200, "existing_gen_q_min": -100, "existing_gen_q_max": 100},
        {"id": "b2", "location": [3, 4], "demand_p": 100, "demand_q": 20, "is_critical": true,
         "v_min": 0.95, "v_max": 1.05}
      ],
      "lines": [
        {"id": "l1", "from": "b1", "to": "b2", "resistance": 0.01, "reactance": 0.1, "thermal_limit": 150}
      ],
      "params": {"theta_u": 0.2618, "phi_u": 1.0472, "lp_cr": 0.99, "lq_cr": 0.99, "lp_ncr": 0.8, "lq_ncr": 0.8}
    }"#;

    #[test]
    fn minimal_two_bus_file() {
        let net = parse_network(TWO_BUS).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.lines.len(), 1);
        assert_eq!(net.lines[0].length, 5.0);
        assert_eq!(net.lines[0].reduced_reactance, 0.05);
        assert!(net.lines[0].exists);
        assert_eq!(net.params.theta_m, PI);
        assert_eq!(net.params.m_crit, 100.0);
    }

    #[test]
    fn dangling_bus_reference_is_named() {
        let text = TWO_BUS.replace("\"to\": \"b2\"", "\"to\": \"b99\"");
        let err = parse_network(&text).unwrap_err();
        match &err {
            NetworkError::Semantic { path, message } => {
                assert_eq!(path, "lines[0].to");
                assert!(message.contains("b99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_network("{\n  \"buses\": [,\n}").unwrap_err();
        match err {
            NetworkError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_limit_rejected_with_field_path() {
        let text = TWO_BUS.replace("\"thermal_limit\": 150", "\"thermal_limit\": -5");
        let err = parse_network(&text).unwrap_err();
        assert!(err.to_string().starts_with("lines[0].thermal_limit"), "{err}");
    }

    #[test]
    fn pure_reactance_inverse() {
        let mut line = parse_network(TWO_BUS).unwrap().lines[0].clone();
        line.resistance = 0.0;
        line.reactance = 1.0;
        line.reduced_reactance = 0.5;
        assert_eq!(admittance_of(&line, false).unwrap(), (0.0, -1.0));
        assert_eq!(admittance_of(&line, true).unwrap(), (0.0, -2.0));
        line.reactance = 0.0;
        assert!(matches!(
            admittance_of(&line, false),
            Err(NetworkError::DegenerateImpedance(_))
        ));
    }

    #[test]
    fn load_scale_identity_and_arithmetic() {
        let net = parse_network(TWO_BUS).unwrap();
        assert_eq!(apply_load_scale(&net, 1.0), net);
        let scaled = apply_load_scale(&net, 1.25);
        assert_eq!(scaled.buses[1].demand_p, 125.0);
        assert_eq!(scaled.buses[1].demand_q, 25.0);
    }

    #[test]
    fn class_demands() {
        let net = parse_network(TWO_BUS).unwrap();
        assert_eq!(net.class_demand(true), (100.0, 20.0));
        assert_eq!(net.class_demand(false), (0.0, 0.0));
        assert_eq!(net.total_demand(), (100.0, 20.0));
    }
}
