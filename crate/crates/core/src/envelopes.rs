//! Linear and conic envelopes for the nonconvex terms of on/off AC power flow.
//!
//! Every factory takes variable handles with their bounds and returns rows
//! (and, for quadratic pieces, rotated-cone atoms). Nothing is added to a
//! model here except the fresh intermediates of [`relax_product_chain`].
//!
//! Bounds of chained intermediates come from interval multiplication, widened
//! outward by `1e-12 · max(1, |b|)` so that rounding in the corner products
//! can never cut off a true value. Products of small integers and of two
//! constants are exact and are not widened.

use crate::milp::{LinearConstraint, MilpModel, SocAtom, VarDef, VarRef};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("variable #{0} needs finite bounds to enter an envelope")]
    Unbounded(usize),
    #[error("theta_u = {0} outside (0, pi/2]")]
    ThetaOutOfRange(f64),
    #[error("theta_M = {theta_m} is below theta_u = {theta_u}")]
    BigMTooSmall { theta_u: f64, theta_m: f64 },
    #[error("a product chain needs at least two factors")]
    ShortChain,
}

fn bounded(v: VarRef) -> Result<(f64, f64), EnvelopeError> {
    if v.is_bounded() {
        Ok((v.lower, v.upper))
    } else {
        Err(EnvelopeError::Unbounded(v.id.0))
    }
}

// Rounding in a product is relative to its size, so zero ends stay exact
// and never leave near-zero coefficients in the rows built from them.
fn widen(lo: f64, hi: f64) -> (f64, f64) {
    (lo - 1e-12 * lo.abs(), hi + 1e-12 * hi.abs())
}

/// Interval product `[a] · [b]`, widened outward.
pub fn product_bounds(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let small_int = |x: f64| x.fract() == 0.0 && x.abs() < 6.7e7;
    if [a.0, a.1, b.0, b.1].into_iter().all(small_int) || (a.0 == a.1 && b.0 == b.1) {
        return (lo, hi);
    }
    widen(lo, hi)
}

/// Interval square `[a]²`, widened outward.
pub fn square_bounds(a: (f64, f64)) -> (f64, f64) {
    let hi = (a.0 * a.0).max(a.1 * a.1);
    let lo = if a.0 <= 0.0 && a.1 >= 0.0 {
        0.0
    } else {
        (a.0 * a.0).min(a.1 * a.1)
    };
    let (lo, hi) = widen(lo, hi);
    (lo.max(0.0), hi)
}

/// The four McCormick inequalities for `xhat = x · y`.
pub fn mccormick(xhat: VarRef, x: VarRef, y: VarRef) -> Result<[LinearConstraint; 4], EnvelopeError> {
    let (xl, xu) = bounded(x)?;
    let (yl, yu) = bounded(y)?;
    let row = |cx: f64, cy: f64| vec![(xhat.id, 1.0), (y.id, -cx), (x.id, -cy)];
    Ok([
        LinearConstraint::ge(row(xl, yl), -xl * yl).normalized(),
        LinearConstraint::ge(row(xu, yu), -xu * yu).normalized(),
        LinearConstraint::le(row(xl, yu), -xl * yu).normalized(),
        LinearConstraint::le(row(xu, yl), -xu * yl).normalized(),
    ])
}

/// `xhat ≥ x²` as the cone atom `x² ≤ xhat · one`, and the secant
/// `xhat ≤ (x̄ + x̲) x − x̄ x̲`.
pub fn mccormick_q(xhat: VarRef, x: VarRef, one: VarRef) -> Result<(SocAtom, LinearConstraint), EnvelopeError> {
    let (xl, xu) = bounded(x)?;
    let atom = SocAtom {
        x: vec![x.id],
        y: xhat.id,
        z: one.id,
    };
    let secant = LinearConstraint::le(vec![(xhat.id, 1.0), (x.id, -(xl + xu))], -xl * xu).normalized();
    Ok((atom, secant))
}

fn check_angles(theta_u: f64, theta_m: f64) -> Result<(), EnvelopeError> {
    if !(theta_u > 0.0 && theta_u <= FRAC_PI_2 + 1e-12) {
        return Err(EnvelopeError::ThetaOutOfRange(theta_u));
    }
    if theta_m < theta_u {
        return Err(EnvelopeError::BigMTooSmall { theta_u, theta_m });
    }
    Ok(())
}

/// Output of [`cos_envelope`].
#[derive(Debug, Clone, PartialEq)]
pub struct CosEnvelope {
    pub rows: Vec<LinearConstraint>,
    /// `θ² ≤ theta_sq · one`.
    pub atom: SocAtom,
}

/// On/off quadratic envelope of `cs = x_on · cos θ`.
///
/// `theta_sq` stands for an upper estimate of `θ²`; it must have bounds
/// within `[0, θ_M²]`. Emits
/// `cs ≤ x_on − k (theta_sq + (x_on − 1) θ_M²)` with `k = (1 − cos θ_u)/θ_u²`
/// and the box `x_on cos θ_u ≤ cs ≤ x_on`.
pub fn cos_envelope(
    cs: VarRef,
    theta: VarRef,
    x_on: VarRef,
    theta_sq: VarRef,
    one: VarRef,
    theta_u: f64,
    theta_m: f64,
) -> Result<CosEnvelope, EnvelopeError> {
    check_angles(theta_u, theta_m)?;
    bounded(theta)?;
    bounded(x_on)?;
    let k = (1.0 - theta_u.cos()) / (theta_u * theta_u);
    let m2 = theta_m * theta_m;
    // cs − x_on + k·theta_sq + k·θ_M²·x_on ≤ k·θ_M²
    let quad = LinearConstraint::le(
        vec![(cs.id, 1.0), (x_on.id, k * m2 - 1.0), (theta_sq.id, k)],
        k * m2,
    )
    .normalized();
    let lower = LinearConstraint::ge(vec![(cs.id, 1.0), (x_on.id, -theta_u.cos())], 0.0).normalized();
    let upper = LinearConstraint::le(vec![(cs.id, 1.0), (x_on.id, -1.0)], 0.0).normalized();
    Ok(CosEnvelope {
        rows: vec![quad, lower, upper],
        atom: SocAtom {
            x: vec![theta.id],
            y: one.id,
            z: theta_sq.id,
        },
    })
}

/// On/off envelope of `sn = x_on · sin θ`: the two tangents at `±θ_u/2`,
/// relaxed by `cos(θ_u/2) θ_M + 1` when off, and the box
/// `x_on sin(−θ_u) ≤ sn ≤ x_on sin θ_u`.
pub fn sin_envelope(
    sn: VarRef,
    theta: VarRef,
    x_on: VarRef,
    theta_u: f64,
    theta_m: f64,
) -> Result<[LinearConstraint; 4], EnvelopeError> {
    check_angles(theta_u, theta_m)?;
    bounded(theta)?;
    bounded(x_on)?;
    let c = (theta_u / 2.0).cos();
    let a = (theta_u / 2.0).sin() - theta_u / 2.0 * c;
    let off = c * theta_m + 1.0;
    Ok([
        LinearConstraint::le(vec![(sn.id, 1.0), (theta.id, -c), (x_on.id, off - a)], off).normalized(),
        LinearConstraint::ge(vec![(sn.id, 1.0), (theta.id, -c), (x_on.id, a - off)], -off).normalized(),
        LinearConstraint::le(vec![(sn.id, 1.0), (x_on.id, -theta_u.sin())], 0.0).normalized(),
        LinearConstraint::ge(vec![(sn.id, 1.0), (x_on.id, theta_u.sin())], 0.0).normalized(),
    ])
}

/// Fresh variables and rows relaxing `target = Π vars`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductChain {
    pub rows: Vec<LinearConstraint>,
    /// `vars[0]·vars[1]`, then that times `vars[2]`, and so on; the last
    /// product is `target` itself and is not listed.
    pub intermediates: Vec<VarRef>,
}

/// Sequential McCormick relaxation `⟨⟨x₁, x₂⟩, …, x_p⟩` of a product.
///
/// Intermediates are created in `model` with interval bounds and registered
/// as products so that lifted points can be completed.
pub fn relax_product_chain(
    model: &mut MilpModel,
    name: &str,
    vars: &[VarRef],
    target: VarRef,
) -> Result<ProductChain, EnvelopeError> {
    if vars.len() < 2 {
        return Err(EnvelopeError::ShortChain);
    }
    for v in vars {
        bounded(*v)?;
    }
    let mut rows = Vec::new();
    let mut intermediates = Vec::new();
    let mut acc = vars[0];
    for (k, next) in vars[1..].iter().enumerate() {
        let out = if k + 2 == vars.len() {
            target
        } else {
            let (lo, hi) = product_bounds((acc.lower, acc.upper), (next.lower, next.upper));
            let v = model.continuous(format!("{name}~{}", k + 1), lo, hi);
            model.define(v.id, VarDef::Product(acc.id, next.id));
            intermediates.push(v);
            v
        };
        rows.extend(mccormick(out, acc, *next)?);
        acc = out;
    }
    Ok(ProductChain { rows, intermediates })
}
