use std::fmt;

/// Handle to a model variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// A variable handle together with its bounds at the time it was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarRef {
    pub id: VarId,
    pub lower: f64,
    pub upper: f64,
}

impl VarRef {
    pub fn new(id: VarId, lower: f64, upper: f64) -> Self {
        Self { id, lower, upper }
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

/// `Σ coefficients · vars  (sense)  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coefficients: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coefficients: Vec<(VarId, f64)>, sense: Sense, rhs: f64) -> Self {
        Self {
            coefficients,
            sense,
            rhs,
        }
    }

    pub fn le(coefficients: Vec<(VarId, f64)>, rhs: f64) -> Self {
        Self::new(coefficients, Sense::Le, rhs)
    }

    pub fn ge(coefficients: Vec<(VarId, f64)>, rhs: f64) -> Self {
        Self::new(coefficients, Sense::Ge, rhs)
    }

    pub fn eq(coefficients: Vec<(VarId, f64)>, rhs: f64) -> Self {
        Self::new(coefficients, Sense::Eq, rhs)
    }

    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.coefficients.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violate the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.lhs(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn normalized(mut self) -> Self {
        self.coefficients.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.coefficients.len());
        for (v, c) in self.coefficients {
            match merged.last_mut() {
                Some((w, d)) if *w == v => *d += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        self.coefficients = merged;
        self
    }
}

/// Rotated second-order cone `xᵀx ≤ y·z` with `y, z ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocAtom {
    pub x: Vec<VarId>,
    pub y: VarId,
    pub z: VarId,
}

impl SocAtom {
    /// `xᵀx − y·z` at `values`; positive means the point lies outside the cone.
    pub fn excess(&self, values: &[f64]) -> f64 {
        let xx: f64 = self.x.iter().map(|v| values[v.0] * values[v.0]).sum();
        xx - values[self.y.0] * values[self.z.0]
    }
}

/// How an auxiliary variable relates to the variables created before it.
///
/// Recorded by the relaxation builders so that a point of the original
/// nonconvex model can be lifted into the relaxed space.
#[derive(Debug, Clone, PartialEq)]
pub enum VarDef {
    Product(VarId, VarId),
    Square(VarId),
    Affine(Vec<(VarId, f64)>, f64),
    /// `on · cos(angle)`.
    OnOffCos { on: VarId, angle: VarId },
    /// `on · sin(angle)`.
    OnOffSin { on: VarId, angle: VarId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: ObjSense,
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Objective {
    pub fn value(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }
}

/// Mixed-integer linear model plus a registry of rotated-SOC atoms that the
/// cutting-plane driver enforces through linear outer approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    pub objective: Objective,
    pub soc_atoms: Vec<SocAtom>,
    /// Outer-approximation cuts collected so far; valid for the cone set and
    /// kept across re-solves.
    pub cuts: Vec<LinearConstraint>,
    defs: Vec<Option<VarDef>>,
    one: Option<VarId>,
}

impl Default for MilpModel {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Violation {
    pub bounds: f64,
    pub integrality: f64,
    pub rows: f64,
    pub cones: f64,
}

impl Violation {
    pub fn max(&self) -> f64 {
        self.bounds.max(self.integrality).max(self.rows).max(self.cones)
    }
}

impl MilpModel {
    pub fn new() -> Self {
        Self {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Objective {
                sense: ObjSense::Minimize,
                terms: Vec::new(),
                constant: 0.0,
            },
            soc_atoms: Vec::new(),
            cuts: Vec::new(),
            defs: Vec::new(),
            one: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarRef {
        let id = VarId(self.variables.len());
        let (lower, upper) = match kind {
            VarKind::Integer => (lower.ceil(), upper.floor()),
            VarKind::Continuous => (lower, upper),
        };
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            kind,
        });
        self.defs.push(None);
        VarRef::new(id, lower, upper)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarRef {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarRef {
        self.add_var(name, 0.0, 1.0, VarKind::Integer)
    }

    /// Variable fixed at 1, shared by every atom that needs a unit factor.
    pub fn one(&mut self) -> VarRef {
        match self.one {
            Some(id) => VarRef::new(id, 1.0, 1.0),
            None => {
                let r = self.continuous("one", 1.0, 1.0);
                self.one = Some(r.id);
                r
            }
        }
    }

    pub fn var_ref(&self, id: VarId) -> VarRef {
        let v = &self.variables[id.0];
        VarRef::new(id, v.lower, v.upper)
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.variables[id.0].name
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        let v = &mut self.variables[id.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn fix(&mut self, id: VarId, value: f64) {
        self.set_bounds(id, value, value);
    }

    pub fn define(&mut self, id: VarId, def: VarDef) {
        self.defs[id.0] = Some(def);
    }

    pub fn definition(&self, id: VarId) -> Option<&VarDef> {
        self.defs[id.0].as_ref()
    }

    /// Stores `c` normalized: stored rows never hold zero or repeated
    /// coefficients, which some backends reject or warn about.
    pub fn add_constraint(&mut self, c: LinearConstraint) -> usize {
        debug_assert!(c.coefficients.iter().all(|(v, _)| v.0 < self.variables.len()));
        self.constraints.push(c.normalized());
        self.constraints.len() - 1
    }

    pub fn add_constraints(&mut self, cs: impl IntoIterator<Item = LinearConstraint>) {
        for c in cs {
            self.add_constraint(c);
        }
    }

    pub fn add_soc(&mut self, atom: SocAtom) {
        for v in [atom.y, atom.z] {
            let lo = self.variables[v.0].lower;
            assert!(lo >= 0.0, "cone factor {} has negative lower bound {lo}", self.name(v));
        }
        self.soc_atoms.push(atom);
    }

    pub fn set_objective(&mut self, sense: ObjSense, terms: Vec<(VarId, f64)>, constant: f64) {
        self.objective = Objective {
            sense,
            terms,
            constant,
        };
    }

    /// Copy of the model without cone atoms or cuts, i.e. its linear part.
    pub fn linear_part(&self) -> MilpModel {
        MilpModel {
            soc_atoms: Vec::new(),
            cuts: Vec::new(),
            ..self.clone()
        }
    }

    /// Fills every defined auxiliary variable from `values`, in creation order.
    pub fn complete_assignment(&self, values: &mut [f64]) {
        for (k, def) in self.defs.iter().enumerate() {
            if let Some(def) = def {
                values[k] = match def {
                    VarDef::Product(a, b) => values[a.0] * values[b.0],
                    VarDef::Square(a) => values[a.0] * values[a.0],
                    VarDef::Affine(terms, c) => c + terms.iter().map(|(v, w)| w * values[v.0]).sum::<f64>(),
                    VarDef::OnOffCos { on, angle } => values[on.0] * values[angle.0].cos(),
                    VarDef::OnOffSin { on, angle } => values[on.0] * values[angle.0].sin(),
                };
            }
        }
        if let Some(one) = self.one {
            values[one.0] = 1.0;
        }
    }

    /// Largest violation of bounds, integrality, rows and cone atoms at `values`.
    pub fn violation(&self, values: &[f64]) -> Violation {
        let mut out = Violation::default();
        for (v, x) in self.variables.iter().zip(values) {
            out.bounds = out.bounds.max(v.lower - x).max(x - v.upper);
            if v.kind == VarKind::Integer {
                out.integrality = out.integrality.max((x - x.round()).abs());
            }
        }
        for c in self.constraints.iter().chain(&self.cuts) {
            out.rows = out.rows.max(c.violation(values));
        }
        for a in &self.soc_atoms {
            out.cones = out.cones.max(a.excess(values));
        }
        out
    }
}
