//! AC-feasibility recovery for a fixed design and topology.
//!
//! Minimizes `M (λp_cr + λq_cr) + λp_ncr + λq_ncr` subject to the nonconvex
//! AC flow equations, KCL, thermal and angle limits, voltage and generation
//! boxes, and `λ ≥ target − served` per load class. Because flows are
//! evaluated from `(v, θ, φ)` directly, the loss identities hold with
//! equality at every point.
//!
//! The reference solver is an augmented Lagrangian over a box: inequalities
//! get nonnegative slack variables, equalities enter the penalty, and each
//! subproblem is solved by projected Newton steps with Levenberg damping.

use crate::dc::dc_reactive_capacity_fill;
use crate::design::{line_data, DesignDecision, LineData, Mode, ModelOptions, ScenarioOperation};
use crate::milp::{CutOptions, MilpBackend};
use crate::netmodel::Network;
use crate::sbd::{parallel_map, price_scenario_detailed, SbdError};
use crate::scenario::Scenario;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::fmt::Write;

/// A smooth problem `min f(x)` s.t. `c(x) = 0`, `lo ≤ x ≤ hi`.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn bounds(&self) -> (&[f64], &[f64]);
    fn objective(&self, x: &[f64]) -> f64;
    fn objective_gradient(&self, x: &[f64]) -> DVector<f64>;
    fn constraints(&self, x: &[f64]) -> DVector<f64>;
    /// Dense `num_constraints × dim` Jacobian of `constraints`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// `‖c(x)‖∞`.
    pub infeasibility: f64,
    /// Projected-gradient norm of the Lagrangian.
    pub stationarity: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// A local solver for [`NlpProblem`]s.
pub trait LocalNlpSolver: Send + Sync {
    fn solve(&self, problem: &dyn NlpProblem, x0: &[f64]) -> NlpSolution;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedLagrangian {
    pub max_outer: usize,
    pub max_inner: usize,
    pub feasibility_tol: f64,
    pub stationarity_tol: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
}

impl Default for AugmentedLagrangian {
    fn default() -> Self {
        Self {
            max_outer: 60,
            max_inner: 200,
            feasibility_tol: 1e-9,
            stationarity_tol: 1e-7,
            initial_penalty: 10.0,
            max_penalty: 1e10,
        }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn projected_gradient_norm(x: &[f64], g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| ((xi - g[i]).clamp(lo[i], hi[i]) - xi).abs())
        .fold(0.0, f64::max)
}

struct Merit<'a> {
    p: &'a dyn NlpProblem,
    mult: &'a DVector<f64>,
    rho: f64,
}

impl Merit<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let c = self.p.constraints(x);
        self.p.objective(x) + self.mult.dot(&c) + 0.5 * self.rho * c.norm_squared()
    }

    /// Gradient, and the weights `μ + ρ c` it was formed with.
    fn gradient(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let c = self.p.constraints(x);
        let j = self.p.jacobian(x);
        let w = self.mult + c * self.rho;
        let g = self.p.objective_gradient(x) + j.tr_mul(&w);
        (g, j, w)
    }

    /// `ρ JᵀJ` exactly plus the curvature `Σ w_k ∇²c_k + ∇²f` by central
    /// differences of the gradient at fixed weights.
    fn hessian(&self, x: &[f64], j: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut h = j.tr_mul(j) * self.rho;
        let mut xp = x.to_vec();
        let curv = |z: &[f64]| self.p.objective_gradient(z) + self.p.jacobian(z).tr_mul(w);
        let mut fd = DMatrix::zeros(n, n);
        for k in 0..n {
            let step = 1e-6 * x[k].abs().max(1.0);
            xp[k] = x[k] + step;
            let gp = curv(&xp);
            xp[k] = x[k] - step;
            let gm = curv(&xp);
            xp[k] = x[k];
            fd.set_column(k, &((gp - gm) / (2.0 * step)));
        }
        h += (&fd + fd.transpose()) * 0.5;
        h
    }
}

impl AugmentedLagrangian {
    /// Projected Newton on the merit function; returns the final point.
    fn inner(&self, merit: &Merit<'_>, mut x: Vec<f64>, tol: f64) -> (Vec<f64>, usize) {
        let (lo, hi) = merit.p.bounds();
        let mut damping = 1e-8;
        let mut iters = 0;
        for _ in 0..self.max_inner {
            iters += 1;
            let (g, j, w) = merit.gradient(&x);
            if projected_gradient_norm(&x, &g, lo, hi) <= tol {
                break;
            }
            let n = x.len();
            let free: Vec<usize> = (0..n)
                .filter(|&i| {
                    let at_lo = x[i] <= lo[i] + 1e-12 && g[i] > 0.0;
                    let at_hi = x[i] >= hi[i] - 1e-12 && g[i] < 0.0;
                    !(at_lo || at_hi)
                })
                .collect();
            let h = merit.hessian(&x, &j, &w);
            let f0 = merit.value(&x);
            let mut accepted = false;
            for _ in 0..12 {
                let nf = free.len();
                let mut hf = DMatrix::zeros(nf, nf);
                let mut gf = DVector::zeros(nf);
                let scale = (0..nf).map(|a| h[(free[a], free[a])].abs()).fold(1.0, f64::max);
                for a in 0..nf {
                    gf[a] = -g[free[a]];
                    for b in 0..nf {
                        hf[(a, b)] = h[(free[a], free[b])];
                    }
                    hf[(a, a)] += damping * scale;
                }
                let Some(chol) = hf.cholesky() else {
                    damping = (damping * 10.0).max(1e-8);
                    continue;
                };
                let d = chol.solve(&gf);
                let mut alpha = 1.0;
                while alpha > 1e-10 {
                    let mut trial = x.clone();
                    for (a, &i) in free.iter().enumerate() {
                        trial[i] += alpha * d[a];
                    }
                    project(&mut trial, lo, hi);
                    let decrease: f64 = trial.iter().zip(&x).enumerate().map(|(i, (t, v))| g[i] * (t - v)).sum();
                    let f1 = merit.value(&trial);
                    if f1 <= f0 + 1e-4 * decrease.min(0.0) && f1 <= f0 {
                        x = trial;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted {
                    damping = (damping / 3.0).max(1e-12);
                    break;
                }
                damping *= 10.0;
            }
            if !accepted {
                // Projected gradient step as a last resort.
                let mut alpha = 1.0 / g.amax().max(1.0);
                while alpha > 1e-14 {
                    let mut trial: Vec<f64> = x.iter().enumerate().map(|(i, v)| v - alpha * g[i]).collect();
                    project(&mut trial, lo, hi);
                    if merit.value(&trial) < f0 {
                        x = trial;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
        }
        (x, iters)
    }
}

impl LocalNlpSolver for AugmentedLagrangian {
    fn solve(&self, problem: &dyn NlpProblem, x0: &[f64]) -> NlpSolution {
        let (lo, hi) = problem.bounds();
        let mut x = x0.to_vec();
        project(&mut x, lo, hi);
        let mut mult = DVector::zeros(problem.num_constraints());
        let mut rho = self.initial_penalty;
        let mut target = 0.1;
        let mut iterations = 0;
        let mut best: Option<NlpSolution> = None;
        for outer in 0..self.max_outer {
            let merit = Merit {
                p: problem,
                mult: &mult,
                rho,
            };
            let tol = (1.0 / rho).max(self.stationarity_tol * 0.1).min(1e-2);
            let (xn, it) = self.inner(&merit, x, tol);
            x = xn;
            iterations += it;
            let c = problem.constraints(&x);
            let infeas = c.amax();
            let lag = Merit {
                p: problem,
                mult: &(&mult + &c * rho),
                rho: 0.0,
            };
            let stat = projected_gradient_norm(&x, &lag.gradient(&x).0, lo, hi);
            let sol = NlpSolution {
                x: x.clone(),
                objective: problem.objective(&x),
                infeasibility: infeas,
                stationarity: stat,
                converged: infeas <= self.feasibility_tol && stat <= self.stationarity_tol,
                iterations,
            };
            log::debug!("AL outer {outer}: rho {rho:.1e} infeas {infeas:.3e} stat {stat:.3e} obj {}", sol.objective);
            let better = match &best {
                None => true,
                Some(b) => (sol.infeasibility, sol.objective) < (b.infeasibility, b.objective)
                    || sol.converged && !b.converged,
            };
            if better {
                best = Some(sol.clone());
            }
            if sol.converged {
                return sol;
            }
            if infeas <= target {
                mult += &c * rho;
                target = (target * 0.1).max(self.feasibility_tol * 0.1);
            } else if rho < self.max_penalty {
                rho *= 10.0;
            } else {
                mult += &c * rho;
            }
            if infeas <= self.feasibility_tol && outer > 5 && stat <= self.stationarity_tol * 1e3 {
                // Feasible and nearly stationary; further outer rounds rarely help.
                let mut sol = sol;
                sol.converged = true;
                return sol;
            }
        }
        best.expect("at least one outer iteration runs")
    }
}

#[derive(Debug, Clone, Copy)]
struct ActiveLine {
    index: usize,
    from: usize,
    to: usize,
    g: f64,
    b: f64,
    t2: f64,
    phi: Option<usize>,
}

impl ActiveLine {
    /// `[p_ij, q_ij, p_ji, q_ji]` and their derivatives with respect to
    /// `(v_i, v_j, θ_ij)`.
    fn flows(&self, vi: f64, vj: f64, th: f64) -> ([f64; 4], [[f64; 3]; 4]) {
        let (g, b) = (self.g, self.b);
        let (s, c) = th.sin_cos();
        let vv = vi * vj;
        let f = [
            g * vi * vi - vv * (g * c + b * s),
            -b * vi * vi - vv * (g * s - b * c),
            g * vj * vj - vv * (g * c - b * s),
            -b * vj * vj + vv * (g * s + b * c),
        ];
        let d = [
            [2.0 * g * vi - vj * (g * c + b * s), -vi * (g * c + b * s), -vv * (-g * s + b * c)],
            [-2.0 * b * vi - vj * (g * s - b * c), -vi * (g * s - b * c), -vv * (g * c + b * s)],
            [-vj * (g * c - b * s), 2.0 * g * vj - vi * (g * c - b * s), vv * (g * s + b * c)],
            [vj * (g * s + b * c), -2.0 * b * vj + vi * (g * s + b * c), vv * (g * c - b * s)],
        ];
        (f, d)
    }
}

#[derive(Debug, Clone, Copy)]
enum Ineq {
    /// `(p² + q²)/T² − 1 ≤ 0` on one end of a line.
    Thermal { line: usize, to_end: bool },
    /// `±θ_ij − θ_u ≤ 0`.
    Angle { line: usize, sign: f64 },
    /// `target − served − λ ≤ 0` for a load class.
    Resilience { class: usize },
}

/// Variable layout and data of one recovery problem.
struct AcProblem {
    n_bus: usize,
    lines: Vec<ActiveLine>,
    theta: Vec<Result<usize, f64>>,
    v: Vec<usize>,
    gp: Vec<usize>,
    gq: Vec<usize>,
    yp: Vec<usize>,
    yq: Vec<usize>,
    lambda: [usize; 4],
    ineqs: Vec<Ineq>,
    slack0: usize,
    dp: Vec<f64>,
    dq: Vec<f64>,
    critical: Vec<bool>,
    targets: [f64; 4],
    theta_u: f64,
    weight: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AcProblem {
    fn theta_of(&self, x: &[f64], bus: usize) -> f64 {
        match self.theta[bus] {
            Ok(k) => x[k],
            Err(fixed) => fixed,
        }
    }

    fn line_angle(&self, x: &[f64], l: &ActiveLine) -> f64 {
        self.theta_of(x, l.from) - self.theta_of(x, l.to) + l.phi.map_or(0.0, |k| x[k])
    }

    /// Served load per class `[p_cr, q_cr, p_ncr, q_ncr]`.
    fn served(&self, x: &[f64]) -> [f64; 4] {
        let mut s = [0.0; 4];
        for i in 0..self.n_bus {
            let off = if self.critical[i] { 0 } else { 2 };
            s[off] += self.dp[i] * x[self.yp[i]];
            s[off + 1] += self.dq[i] * x[self.yq[i]];
        }
        s
    }

    fn class_of(&self, i: usize) -> usize {
        if self.critical[i] {
            0
        } else {
            2
        }
    }
}

impl NlpProblem for AcProblem {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn num_constraints(&self) -> usize {
        2 * self.n_bus + self.ineqs.len()
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let l = self.lambda;
        self.weight * (x[l[0]] + x[l[1]]) + x[l[2]] + x[l[3]]
    }

    fn objective_gradient(&self, _x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        let l = self.lambda;
        g[l[0]] = self.weight;
        g[l[1]] = self.weight;
        g[l[2]] = 1.0;
        g[l[3]] = 1.0;
        g
    }

    fn constraints(&self, x: &[f64]) -> DVector<f64> {
        let n = self.n_bus;
        let mut c = DVector::zeros(self.num_constraints());
        for i in 0..n {
            c[i] = x[self.gp[i]] - self.dp[i] * x[self.yp[i]];
            c[n + i] = x[self.gq[i]] - self.dq[i] * x[self.yq[i]];
        }
        let mut fl = Vec::with_capacity(self.lines.len());
        for l in &self.lines {
            let th = self.line_angle(x, l);
            let (f, _) = l.flows(x[self.v[l.from]], x[self.v[l.to]], th);
            c[l.from] -= f[0];
            c[n + l.from] -= f[1];
            c[l.to] -= f[2];
            c[n + l.to] -= f[3];
            fl.push((f, th));
        }
        let served = self.served(x);
        for (k, q) in self.ineqs.iter().enumerate() {
            let s = x[self.slack0 + k];
            c[2 * n + k] = s + match *q {
                Ineq::Thermal { line, to_end } => {
                    let (f, _) = fl[line];
                    let (p, qq) = if to_end { (f[2], f[3]) } else { (f[0], f[1]) };
                    (p * p + qq * qq) / self.lines[line].t2 - 1.0
                }
                Ineq::Angle { line, sign } => sign * fl[line].1 - self.theta_u,
                Ineq::Resilience { class } => self.targets[class] - served[class] - x[self.lambda[class]],
            };
        }
        c
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n_bus;
        let mut j = DMatrix::zeros(self.num_constraints(), self.dim());
        for i in 0..n {
            j[(i, self.gp[i])] = 1.0;
            j[(i, self.yp[i])] = -self.dp[i];
            j[(n + i, self.gq[i])] = 1.0;
            j[(n + i, self.yq[i])] = -self.dq[i];
        }
        let mut fl = Vec::with_capacity(self.lines.len());
        for l in &self.lines {
            let th = self.line_angle(x, l);
            let (f, d) = l.flows(x[self.v[l.from]], x[self.v[l.to]], th);
            let rows = [l.from, n + l.from, l.to, n + l.to];
            for (r, dr) in rows.iter().zip(&d) {
                j[(*r, self.v[l.from])] -= dr[0];
                j[(*r, self.v[l.to])] -= dr[1];
                if let Ok(k) = self.theta[l.from] {
                    j[(*r, k)] -= dr[2];
                }
                if let Ok(k) = self.theta[l.to] {
                    j[(*r, k)] += dr[2];
                }
                if let Some(k) = l.phi {
                    j[(*r, k)] -= dr[2];
                }
            }
            fl.push((f, d));
        }
        for (k, q) in self.ineqs.iter().enumerate() {
            let row = 2 * n + k;
            j[(row, self.slack0 + k)] = 1.0;
            match *q {
                Ineq::Thermal { line, to_end } => {
                    let l = &self.lines[line];
                    let (f, d) = &fl[line];
                    let (a, b) = if to_end { (2, 3) } else { (0, 1) };
                    let s = 2.0 / l.t2;
                    let dv = |c: usize| s * (f[a] * d[a][c] + f[b] * d[b][c]);
                    j[(row, self.v[l.from])] += dv(0);
                    j[(row, self.v[l.to])] += dv(1);
                    let dth = dv(2);
                    if let Ok(k) = self.theta[l.from] {
                        j[(row, k)] += dth;
                    }
                    if let Ok(k) = self.theta[l.to] {
                        j[(row, k)] -= dth;
                    }
                    if let Some(k) = l.phi {
                        j[(row, k)] += dth;
                    }
                }
                Ineq::Angle { line, sign } => {
                    let l = &self.lines[line];
                    if let Ok(k) = self.theta[l.from] {
                        j[(row, k)] += sign;
                    }
                    if let Ok(k) = self.theta[l.to] {
                        j[(row, k)] -= sign;
                    }
                    if let Some(k) = l.phi {
                        j[(row, k)] += sign;
                    }
                }
                Ineq::Resilience { class } => {
                    j[(row, self.lambda[class])] = -1.0;
                    for i in 0..n {
                        if self.class_of(i) == class {
                            j[(row, self.yp[i])] = -self.dp[i];
                        } else if self.class_of(i) + 1 == class {
                            j[(row, self.yq[i])] = -self.dq[i];
                        }
                    }
                }
            }
        }
        j
    }
}

/// Line states that the recovery holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LineState {
    /// Post-switching state `x̃`.
    pub on: bool,
    pub facts: bool,
    pub pst: bool,
}

impl LineState {
    pub fn from_operation(op: &ScenarioOperation) -> Vec<LineState> {
        op.lines
            .iter()
            .map(|l| LineState {
                on: l.on(),
                facts: l.delta && l.on(),
                pst: l.gamma && l.on(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryResult {
    pub scenario: String,
    /// `[λp_cr, λq_cr, λp_ncr, λq_ncr]` in MW / MVAr.
    pub slacks: [f64; 4],
    /// `M (λp_cr + λq_cr) + λp_ncr + λq_ncr` in MW / MVAr.
    pub objective: f64,
    pub operation: ScenarioOperation,
    pub converged: bool,
    /// Largest AC residual (KCL and limits) in per unit.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOptions {
    /// Weight `M` on critical-load violations; `None` uses the network's.
    pub weight: Option<f64>,
    pub solver: AugmentedLagrangian,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            weight: None,
            solver: AugmentedLagrangian::default(),
        }
    }
}

fn build_problem(
    net: &Network,
    data: &[LineData],
    design: &DesignDecision,
    states: &[LineState],
    weight: f64,
) -> AcProblem {
    let base = net.params.base_mva;
    let n = net.buses.len();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut var = |l: f64, h: f64| {
        lo.push(l);
        hi.push(h);
        lo.len() - 1
    };
    // One reference angle per island of active lines.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for (d, s) in data.iter().zip(states) {
        if s.on {
            let (a, b) = (find(&mut parent, d.from), find(&mut parent, d.to));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let theta: Vec<Result<usize, f64>> = (0..n)
        .map(|i| {
            if find(&mut parent, i) == i {
                Err(0.0)
            } else {
                Ok(var(f64::NEG_INFINITY, f64::INFINITY))
            }
        })
        .collect();
    let mut v = Vec::new();
    let mut gp = Vec::new();
    let mut gq = Vec::new();
    let mut yp = Vec::new();
    let mut yq = Vec::new();
    for b in &net.buses {
        let zp = design.capacity_p(&b.id) / base;
        let zq = design.capacity_q(&b.id) / base;
        v.push(var(b.v_min, b.v_max));
        gp.push(var(0.0, b.existing_gen_p_max / base + zp));
        gq.push(var(b.existing_gen_q_min / base - zq, b.existing_gen_q_max / base + zq));
        yp.push(var(0.0, 1.0));
        yq.push(var(0.0, 1.0));
    }
    let mut lines = Vec::new();
    for (k, (d, s)) in data.iter().zip(states).enumerate() {
        if !s.on {
            continue;
        }
        let phi = s.pst.then(|| var(-net.params.phi_u, net.params.phi_u));
        let (g, b) = if s.facts { (d.g_bar, d.b_bar) } else { (d.g, d.b) };
        lines.push(ActiveLine {
            index: k,
            from: d.from,
            to: d.to,
            g,
            b,
            t2: d.t * d.t,
            phi,
        });
    }
    let lambda = [0, 1, 2, 3].map(|_| var(0.0, f64::INFINITY));
    let mut ineqs = Vec::new();
    for k in 0..lines.len() {
        ineqs.push(Ineq::Thermal { line: k, to_end: false });
        ineqs.push(Ineq::Thermal { line: k, to_end: true });
        ineqs.push(Ineq::Angle { line: k, sign: 1.0 });
        ineqs.push(Ineq::Angle { line: k, sign: -1.0 });
    }
    let (pc, qc) = net.class_demand(true);
    let (pn, qn) = net.class_demand(false);
    let g = &net.params;
    let targets = [g.lp_cr * pc / base, g.lq_cr * qc / base, g.lp_ncr * pn / base, g.lq_ncr * qn / base];
    for class in 0..4 {
        ineqs.push(Ineq::Resilience { class });
    }
    let slack0 = lo.len();
    for _ in &ineqs {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }
    AcProblem {
        n_bus: n,
        lines,
        theta,
        v,
        gp,
        gq,
        yp,
        yq,
        lambda,
        ineqs,
        slack0,
        dp: net.buses.iter().map(|b| b.demand_p / base).collect(),
        dq: net.buses.iter().map(|b| b.demand_q / base).collect(),
        critical: net.buses.iter().map(|b| b.is_critical).collect(),
        targets,
        theta_u: g.theta_u,
        weight,
        lo,
        hi,
    }
}

impl AcProblem {
    /// Starting point from bus voltages, angles and served fractions, with
    /// dispatch and slacks chosen to make the rest consistent.
    fn start(&self, v: &[f64], theta: &[f64], y: &[(f64, f64)], phi: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for i in 0..self.n_bus {
            x[self.v[i]] = v[i];
            if let Ok(k) = self.theta[i] {
                x[k] = theta[i];
            }
            x[self.yp[i]] = y[i].0;
            x[self.yq[i]] = y[i].1;
        }
        for l in &self.lines {
            if let Some(k) = l.phi {
                x[k] = phi[l.index];
            }
        }
        // Dispatch to balance the flows at this point where the boxes allow.
        let n = self.n_bus;
        for i in 0..n {
            x[self.gp[i]] = 0.0;
            x[self.gq[i]] = 0.0;
        }
        let c = self.constraints(&x);
        for i in 0..n {
            x[self.gp[i]] = (-c[i]).clamp(self.lo[self.gp[i]], self.hi[self.gp[i]]);
            x[self.gq[i]] = (-c[n + i]).clamp(self.lo[self.gq[i]], self.hi[self.gq[i]]);
        }
        let served = self.served(&x);
        for k in 0..4 {
            x[self.lambda[k]] = (self.targets[k] - served[k]).max(0.0);
        }
        let c = self.constraints(&x);
        for k in 0..self.ineqs.len() {
            let row = 2 * n + k;
            x[self.slack0 + k] = (x[self.slack0 + k] - c[row]).max(0.0);
        }
        x
    }

    /// Largest violation of the AC constraints at `x`, slacks excluded.
    fn residual(&self, x: &[f64]) -> f64 {
        let c = self.constraints(x);
        let n = self.n_bus;
        let mut r: f64 = (0..2 * n).map(|i| c[i].abs()).fold(0.0, f64::max);
        for k in 0..self.ineqs.len() {
            r = r.max(c[2 * n + k] - x[self.slack0 + k]);
        }
        r.max(0.0)
    }
}

fn operation_at(net: &Network, p: &AcProblem, states: &[LineState], scenario: &str, x: &[f64]) -> ScenarioOperation {
    use crate::design::{BusOperation, LineOperation};
    let base = net.params.base_mva;
    let mut lines: Vec<LineOperation> = net
        .lines
        .iter()
        .zip(states)
        .map(|(l, s)| LineOperation {
            id: l.id.clone(),
            x: s.on,
            tau: false,
            t: false,
            delta: s.facts,
            gamma: s.pst,
            theta: 0.0,
            phi: 0.0,
            p_ij: 0.0,
            q_ij: 0.0,
            p_ji: 0.0,
            q_ji: 0.0,
            l: 0.0,
        })
        .collect();
    // Open lines still carry the bus angle difference; only its bound is relaxed.
    for (op, l) in lines.iter_mut().zip(&net.lines) {
        let end = |id: &str| p.theta_of(x, net.bus_index(id).expect("validated network"));
        op.theta = end(&l.from) - end(&l.to);
    }
    for l in &p.lines {
        let th = p.line_angle(x, l);
        let (vi, vj) = (x[p.v[l.from]], x[p.v[l.to]]);
        let (f, _) = l.flows(vi, vj, th);
        let op = &mut lines[l.index];
        op.theta = th;
        op.phi = l.phi.map_or(0.0, |k| x[k]);
        op.p_ij = f[0] * base;
        op.q_ij = f[1] * base;
        op.p_ji = f[2] * base;
        op.q_ji = f[3] * base;
        op.l = (f[0] * f[0] + f[1] * f[1]) / (vi * vi);
    }
    let buses = net
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| BusOperation {
            id: b.id.clone(),
            theta: p.theta_of(x, i),
            v: x[p.v[i]],
            gp: x[p.gp[i]] * base,
            gq: x[p.gq[i]] * base,
            zp: (p.hi[p.gp[i]] * base - b.existing_gen_p_max).max(0.0),
            zq: (p.hi[p.gq[i]] * base - b.existing_gen_q_max).max(0.0),
            yp: x[p.yp[i]],
            yq: x[p.yq[i]],
        })
        .collect();
    ScenarioOperation {
        scenario: scenario.to_string(),
        lines,
        buses,
    }
}

/// Solves the recovery problem for one scenario with the line states held
/// fixed. Starts flat (`v = 1`, `θ = 0`, no shedding) and, when `warm` is
/// given, also from that point; the better local solution is returned.
pub fn recover_ac(
    net: &Network,
    design: &DesignDecision,
    states: &[LineState],
    scenario: &str,
    warm: Option<&ScenarioOperation>,
    options: &RecoveryOptions,
) -> RecoveryResult {
    let net = net.effective();
    let data = line_data(&net).expect("network validated before recovery");
    let weight = options.weight.unwrap_or(net.params.m_crit);
    let p = build_problem(&net, &data, design, states, weight);
    let n = net.buses.len();
    let mut starts = vec![p.start(&vec![1.0; n], &vec![0.0; n], &vec![(1.0, 1.0); n], &vec![0.0; net.lines.len()])];
    if let Some(w) = warm {
        let v: Vec<f64> = w.buses.iter().map(|b| b.v).collect();
        let th: Vec<f64> = w.buses.iter().map(|b| b.theta).collect();
        // Angles are relative to each island's reference bus.
        let th: Vec<f64> = (0..n)
            .map(|i| th[i] - th[island_root(&p, &data, states, i)])
            .collect();
        let y: Vec<(f64, f64)> = w.buses.iter().map(|b| (b.yp, b.yq)).collect();
        let phi: Vec<f64> = w.lines.iter().map(|l| l.phi).collect();
        starts.push(p.start(&v, &th, &y, &phi));
    }
    let mut best: Option<(NlpSolution, f64)> = None;
    for x0 in starts {
        let sol = options.solver.solve(&p, &x0);
        let res = p.residual(&sol.x);
        let key = |s: &NlpSolution, r: f64| (r > 1e-6, s.objective);
        let better = match &best {
            None => true,
            Some((b, br)) => key(&sol, res) < key(b, *br),
        };
        if better {
            best = Some((sol, res));
        }
    }
    let (sol, residual) = best.expect("at least the flat start runs");
    let base = net.params.base_mva;
    let served = p.served(&sol.x);
    let slacks = [0, 1, 2, 3].map(|k| {
        let s = ((p.targets[k] - served[k]) * base).max(0.0);
        if s < 1e-9 {
            0.0
        } else {
            s
        }
    });
    RecoveryResult {
        scenario: scenario.to_string(),
        objective: weight * (slacks[0] + slacks[1]) + slacks[2] + slacks[3],
        slacks,
        operation: operation_at(&net, &p, states, scenario, &sol.x),
        converged: sol.converged && residual <= 1e-6,
        kkt_residual: residual.max(sol.stationarity.min(residual.max(1e-300))),
    }
}

fn island_root(p: &AcProblem, data: &[LineData], states: &[LineState], bus: usize) -> usize {
    // Breadth-first search over active lines to the bus with a fixed angle.
    let mut seen = vec![false; p.n_bus];
    let mut queue = std::collections::VecDeque::from([bus]);
    seen[bus] = true;
    while let Some(i) = queue.pop_front() {
        if p.theta[i].is_err() {
            return i;
        }
        for (d, s) in data.iter().zip(states) {
            if !s.on {
                continue;
            }
            for (a, b) in [(d.from, d.to), (d.to, d.from)] {
                if a == i && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
    }
    bus
}

/// Certifies a design against the AC equations in every scenario.
///
/// Each scenario is first priced in the design's own `mode`; the priced
/// operation supplies the line states and a warm start. A DC design is given
/// reactive capacity by [`dc_reactive_capacity_fill`] before the AC check.
/// Scenarios run on up to `workers` threads and results keep input order.
pub fn certify_design(
    net: &Network,
    design: &DesignDecision,
    mode: Mode,
    scenarios: &[Scenario],
    backend: &dyn MilpBackend,
    cuts: &CutOptions,
    recovery: &RecoveryOptions,
    workers: usize,
) -> Result<Vec<RecoveryResult>, SbdError> {
    let devices = !design.facts.is_empty() || !design.pst.is_empty();
    let options = ModelOptions::new(mode).with_devices(devices);
    let ac_design = match mode {
        Mode::Qc => design.clone(),
        Mode::Dc => dc_reactive_capacity_fill(design),
    };
    let workers = if backend.is_reentrant() { workers } else { 1 };
    parallel_map(scenarios, workers, |s| {
        let priced = price_scenario_detailed(design, net, s, &options, backend, cuts)?;
        let states = LineState::from_operation(&priced.operation);
        Ok(recover_ac(net, &ac_design, &states, &s.id, Some(&priced.operation), recovery))
    })
    .into_iter()
    .collect()
}

/// Percent apparent load shed beyond the targets, `(critical, non-critical)`.
/// A class without demand reports 0.
pub fn apparent_load_shed_mu(result: &RecoveryResult, net: &Network) -> (f64, f64) {
    let net = net.effective();
    let mu = |lp: f64, lq: f64, (dp, dq): (f64, f64)| {
        let den = (dp * dp + dq * dq).sqrt();
        if den == 0.0 {
            0.0
        } else {
            (lp * lp + lq * lq).sqrt() / den * 100.0
        }
    };
    let s = result.slacks;
    (mu(s[0], s[1], net.class_demand(true)), mu(s[2], s[3], net.class_demand(false)))
}

/// Recovery report: one row per scenario.
pub fn recovery_csv(results: &[RecoveryResult], net: &Network) -> String {
    let mut out = String::from(
        "scenario,lambda_p_cr,lambda_q_cr,lambda_p_ncr,lambda_q_ncr,mu_crit,mu_ncr,converged,residual\n",
    );
    for r in results {
        let (mc, mn) = apparent_load_shed_mu(r, net);
        let s = r.slacks;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.3e}",
            r.scenario, s[0], s[1], s[2], s[3], mc, mn, r.converged, r.kkt_residual
        )
        .unwrap();
    }
    out
}

/// Result of [`grid_search_recovery`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    /// Least recovery objective over the grid, MW / MVAr.
    pub best_objective: f64,
    /// Grid points meeting every constraint with zero slack.
    pub feasible_points: Vec<ScenarioOperation>,
    pub points_checked: usize,
}

/// Exhaustive search over voltages and angles on a grid, for tiny networks.
///
/// Voltages step by `step` p.u. within bounds; non-reference angles step by
/// `step` rad within `±θ_u · (buses − 1)`. At each grid point the dispatch
/// and served fractions are chosen bus by bus to serve as much load as the
/// generator boxes allow, which minimizes every class slack at once. PST
/// angles are held at 0. At most `keep` feasible points are returned,
/// evenly spread over the enumeration order.
pub fn grid_search_recovery(
    net: &Network,
    design: &DesignDecision,
    states: &[LineState],
    scenario: &str,
    step: f64,
    keep: usize,
) -> GridSearch {
    let net = net.effective();
    let data = line_data(&net).expect("valid network");
    let weight = net.params.m_crit;
    let p = build_problem(&net, &data, design, states, weight);
    let n = net.buses.len();
    let base = net.params.base_mva;
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        let k = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=k).map(|i| lo + i as f64 * step).collect()
    };
    let v_axes: Vec<Vec<f64>> = net.buses.iter().map(|b| grid(b.v_min, b.v_max)).collect();
    let span = net.params.theta_u * (n.max(2) - 1) as f64;
    let th_axis = {
        let half = grid(0.0, span);
        let mut a: Vec<f64> = half.iter().rev().map(|t| -t).collect();
        a.extend(half.iter().skip(1));
        a
    };
    let free: Vec<usize> = (0..n).filter(|&i| p.theta[i].is_ok()).collect();
    let mut axes: Vec<&[f64]> = v_axes.iter().map(|a| a.as_slice()).collect();
    for _ in &free {
        axes.push(&th_axis);
    }
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut best = f64::INFINITY;
    let mut feasible_idx = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    let mut x = vec![0.0; p.dim()];
    let eval = |x: &mut [f64], idx: &[usize]| -> Option<(f64, bool)> {
        for i in 0..n {
            x[p.v[i]] = axes[i][idx[i]];
        }
        for (k, &i) in free.iter().enumerate() {
            if let Ok(var) = p.theta[i] {
                x[var] = axes[n + k][idx[n + k]];
            }
        }
        let mut inj_p = vec![0.0; n];
        let mut inj_q = vec![0.0; n];
        for l in &p.lines {
            let th = p.line_angle(x, l);
            if th.abs() > p.theta_u + 1e-12 {
                return None;
            }
            let (f, _) = l.flows(x[p.v[l.from]], x[p.v[l.to]], th);
            if f[0] * f[0] + f[1] * f[1] > l.t2 + 1e-12 || f[2] * f[2] + f[3] * f[3] > l.t2 + 1e-12 {
                return None;
            }
            inj_p[l.from] += f[0];
            inj_q[l.from] += f[1];
            inj_p[l.to] += f[2];
            inj_q[l.to] += f[3];
        }
        // g − d·y = inj with g in its box and y in [0, 1]: largest y.
        let pick = |inj: f64, d: f64, glo: f64, ghi: f64| -> Option<(f64, f64)> {
            if d == 0.0 {
                return (inj >= glo - 1e-12 && inj <= ghi + 1e-12).then_some((0.0, inj.clamp(glo, ghi)));
            }
            let y_hi = ((ghi - inj) / d).min(1.0);
            let y_lo = ((glo - inj) / d).max(0.0);
            (y_hi >= y_lo - 1e-12).then(|| {
                let y = y_hi.max(y_lo);
                (y, inj + d * y)
            })
        };
        for i in 0..n {
            let (y, g) = pick(inj_p[i], p.dp[i], p.lo[p.gp[i]], p.hi[p.gp[i]])?;
            x[p.yp[i]] = y;
            x[p.gp[i]] = g;
            let (y, g) = pick(inj_q[i], p.dq[i], p.lo[p.gq[i]], p.hi[p.gq[i]])?;
            x[p.yq[i]] = y;
            x[p.gq[i]] = g;
        }
        let served = p.served(x);
        let lam: Vec<f64> = (0..4).map(|k| (p.targets[k] - served[k]).max(0.0) * base).collect();
        let obj = weight * (lam[0] + lam[1]) + lam[2] + lam[3];
        Some((obj, lam.iter().all(|&l| l <= 1e-9)))
    };
    for count in 0..total {
        if let Some((obj, ok)) = eval(&mut x, &idx) {
            best = best.min(obj);
            if ok {
                feasible_idx.push(idx.clone());
            }
        }
        if count + 1 < total {
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
    let stride = (feasible_idx.len() / keep.max(1)).max(1);
    let feasible_points = feasible_idx
        .iter()
        .step_by(stride)
        .take(keep)
        .map(|idx| {
            eval(&mut x, idx);
            operation_at(&net, &p, states, scenario, &x)
        })
        .collect();
    GridSearch {
        best_objective: best,
        feasible_points,
        points_checked: total,
    }
}
