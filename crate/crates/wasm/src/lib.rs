//! Browser bindings for three solver-free kernels: the trigonometric
//! envelopes, the spatial failure field, and gradient cuts on a rotated
//! cone. Every export returns a JSON string; the pure functions behind them
//! are plain Rust so they can be tested natively.

use orgdt::envelopes::{cos_envelope, sin_envelope};
use orgdt::milp::{add_gradient_cut, LinearConstraint, MilpModel, Sense, SocAtom, VarId};
use orgdt::netmodel::{parse_network, Network};
use orgdt::scenario::{default_sigma, field_probability, line_failure_probability, sample_scenarios};
use orgdt::testkit::DESK6_NETWORK;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Interval of `target` allowed by `rows` when every other variable takes
/// its value from `vals`.
fn slice(rows: &[LinearConstraint], target: VarId, vals: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for r in rows {
        let a = r.coefficients.iter().filter(|(v, _)| *v == target).map(|c| c.1).sum::<f64>();
        if a == 0.0 {
            continue;
        }
        let rest: f64 = r.coefficients.iter().filter(|(v, _)| *v != target).map(|(v, c)| c * vals[v.0]).sum();
        let bound = (r.rhs - rest) / a;
        let (le, ge) = match r.sense {
            Sense::Le => (a > 0.0, a < 0.0),
            Sense::Ge => (a < 0.0, a > 0.0),
            Sense::Eq => (true, true),
        };
        if le {
            hi = hi.min(bound);
        }
        if ge {
            lo = lo.max(bound);
        }
    }
    (lo, hi)
}

/// Truth and envelope of `x_on·cos θ` or `x_on·sin θ` across the admissible
/// angles: `[−θ_u, θ_u]` when on, `[−θ_M, θ_M]` when off.
pub fn envelope_json(kind: &str, theta_u: f64, theta_m: f64, on: bool, samples: usize) -> Result<Value, String> {
    let mut m = MilpModel::new();
    let one = m.one();
    let theta = m.continuous("theta", -theta_m, theta_m);
    let x = m.binary("x");
    let tsq = m.continuous("tsq", 0.0, theta_m * theta_m);
    let out = m.continuous("out", -1.0, 1.0);
    let rows: Vec<LinearConstraint> = match kind {
        "cos" => cos_envelope(out, theta, x, tsq, one, theta_u, theta_m).map_err(|e| e.to_string())?.rows,
        "sin" => sin_envelope(out, theta, x, theta_u, theta_m).map_err(|e| e.to_string())?.to_vec(),
        other => return Err(format!("unknown envelope \"{other}\" (expected cos or sin)")),
    };
    let span = if on { theta_u } else { theta_m };
    let n = samples.max(2);
    let mut vals = vec![0.0; m.num_vars()];
    vals[one.id.0] = 1.0;
    vals[x.id.0] = if on { 1.0 } else { 0.0 };
    let (mut thetas, mut truth, mut lower, mut upper) = (vec![], vec![], vec![], vec![]);
    for k in 0..n {
        let th = -span + 2.0 * span * k as f64 / (n - 1) as f64;
        vals[theta.id.0] = th;
        // The tightest value the cone atom allows.
        vals[tsq.id.0] = th * th;
        let (lo, hi) = slice(&rows, out.id, &vals);
        let f = if kind == "cos" { th.cos() } else { th.sin() };
        thetas.push(th);
        truth.push(if on { f } else { 0.0 });
        lower.push(lo.max(-1.0));
        upper.push(hi.min(1.0));
    }
    Ok(json!({ "theta": thetas, "truth": truth, "lower": lower, "upper": upper }))
}

fn network_or_desk(text: &str) -> Result<Network, String> {
    let text = if text.trim().is_empty() { DESK6_NETWORK } else { text };
    parse_network(text).map_err(|e| e.to_string())
}

/// Failure field on a `resolution × resolution` grid over the network's
/// bounding box, per-line probabilities, and `count` sampled scenarios.
/// A non-positive `sigma` selects the default width.
pub fn field_json(
    network: &str,
    sigma: f64,
    percentile: f64,
    resolution: usize,
    count: usize,
    seed: u64,
) -> Result<Value, String> {
    let net = network_or_desk(network)?;
    let sigma = if sigma > 0.0 { sigma } else { default_sigma(&net) };
    let xs = net.buses.iter().map(|b| b.location.0);
    let ys = net.buses.iter().map(|b| b.location.1);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    // Pad so buses do not sit on the border.
    let pad = 0.1 * (x1 - x0).max(y1 - y0).max(1.0);
    let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);
    let r = resolution.clamp(2, 200);
    let mut field = Vec::with_capacity(r * r);
    for j in 0..r {
        for i in 0..r {
            let p = (x0 + (x1 - x0) * (i as f64 + 0.5) / r as f64, y0 + (y1 - y0) * (j as f64 + 0.5) / r as f64);
            field.push(field_probability(&net, p, sigma, percentile).map_err(|e| e.to_string())?);
        }
    }
    let loc = |id: &str| net.buses[net.bus_index(id).expect("validated network")].location;
    let lines = net
        .lines
        .iter()
        .map(|l| {
            let (a, b) = (loc(&l.from), loc(&l.to));
            let p = line_failure_probability(l, &net, sigma, percentile).map_err(|e| e.to_string())?;
            Ok(json!({ "id": l.id, "from": [a.0, a.1], "to": [b.0, b.1], "exists": l.exists, "probability": p }))
        })
        .collect::<Result<Vec<Value>, String>>()?;
    let buses: Vec<Value> = net
        .buses
        .iter()
        .map(|b| json!({ "id": b.id, "x": b.location.0, "y": b.location.1, "critical": b.is_critical }))
        .collect();
    let set = sample_scenarios(&net, count.max(1), percentile, sigma, seed).map_err(|e| e.to_string())?;
    let scenarios: Vec<Value> = set.scenarios.iter().map(|s| json!(s.damaged_lines)).collect();
    Ok(json!({
        "bbox": [x0, y0, x1, y1],
        "sigma": sigma,
        "resolution": r,
        "field": field,
        "buses": buses,
        "lines": lines,
        "scenarios": scenarios,
    }))
}

/// `z ≥ s·x + b` read off a cut over `(x, one, z)` with `one = 1`.
fn cut_line(cut: &LinearConstraint, x: VarId, one: VarId, z: VarId) -> (f64, f64) {
    let coef = |v: VarId| cut.coefficients.iter().filter(|c| c.0 == v).map(|c| c.1).sum::<f64>();
    let sign = if cut.sense == Sense::Ge { -1.0 } else { 1.0 };
    let (ax, ay, az, rhs) = (sign * coef(x), sign * coef(one), sign * coef(z), sign * cut.rhs);
    // ax·x + ay + az·z ≤ rhs with az < 0.
    (-ax / az, (rhs - ay) / az)
}

/// Kelley's method on `min z − slope·x` over `x² ≤ z·1`, `x ∈ [lower, upper]`.
/// Each round solves the cut model exactly (a one-dimensional piecewise
/// linear program) and adds the gradient cut at the solution.
pub fn cuts_json(slope: f64, lower: f64, upper: f64, rounds: usize, tol: f64) -> Result<Value, String> {
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(format!("need lower < upper, got [{lower}, {upper}]"));
    }
    let mut m = MilpModel::new();
    let one = m.one();
    let x = m.continuous("x", lower, upper);
    let z_max = lower.powi(2).max(upper.powi(2));
    let z = m.continuous("z", 0.0, z_max);
    let atom = SocAtom {
        x: vec![x.id],
        y: one.id,
        z: z.id,
    };
    let mut lines: Vec<(f64, f64)> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..rounds.clamp(1, 100) {
        let z_of = |xv: f64| lines.iter().map(|(s, b)| s * xv + b).fold(0.0, f64::max);
        // The cut model's optimum sits at a bound or at a breakpoint.
        let mut candidates = vec![lower, upper];
        for (i, a) in lines.iter().enumerate() {
            candidates.push(-a.1 / a.0);
            for b in &lines[i + 1..] {
                if a.0 != b.0 {
                    candidates.push((b.1 - a.1) / (a.0 - b.0));
                }
            }
        }
        let (xv, bound) = candidates
            .into_iter()
            .filter(|c| c.is_finite() && (lower..=upper).contains(c))
            .map(|c| (c, z_of(c) - slope * c))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("bounds are candidates");
        let zv = z_of(xv);
        let mut point = vec![0.0; m.num_vars()];
        point[one.id.0] = 1.0;
        point[x.id.0] = xv;
        point[z.id.0] = zv;
        let excess = atom.excess(&point);
        let mut round = json!({ "x": xv, "z": zv, "bound": bound, "excess": excess });
        if excess <= tol {
            trace.push(round);
            converged = true;
            break;
        }
        let cut = add_gradient_cut(&atom, &point, 1e-9);
        let line = cut_line(&cut, x.id, one.id, z.id);
        round["cut"] = json!({ "slope": line.0, "intercept": line.1 });
        lines.push(line);
        trace.push(round);
    }
    let x_star = (slope / 2.0).clamp(lower, upper);
    Ok(json!({
        "rounds": trace,
        "converged": converged,
        "optimum": { "x": x_star, "z": x_star * x_star, "objective": x_star * x_star - slope * x_star },
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Envelope curves; angles in degrees.
#[wasm_bindgen]
pub fn envelope_curves(kind: &str, theta_u_deg: f64, theta_m_deg: f64, on: bool, samples: usize) -> Result<String, JsError> {
    to_js(envelope_json(kind, theta_u_deg.to_radians(), theta_m_deg.to_radians(), on, samples))
}

/// Failure field of a network JSON document; an empty document selects the
/// shipped desk network.
#[wasm_bindgen]
pub fn failure_field(
    network: &str,
    sigma: f64,
    percentile: f64,
    resolution: usize,
    count: usize,
    seed: u32,
) -> Result<String, JsError> {
    to_js(field_json(network, sigma, percentile, resolution, count, seed as u64))
}

#[wasm_bindgen]
pub fn gradient_cuts(slope: f64, lower: f64, upper: f64, rounds: usize) -> Result<String, JsError> {
    to_js(cuts_json(slope, lower, upper, rounds, 1e-6))
}

#[wasm_bindgen]
pub fn desk_network() -> String {
    DESK6_NETWORK.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(v: &Value, key: &str) -> Vec<f64> {
        v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    }

    #[test]
    fn envelopes_contain_the_truth() {
        for kind in ["cos", "sin"] {
            for on in [true, false] {
                let v = envelope_json(kind, 0.5, 1.2, on, 101).unwrap();
                let (t, lo, hi) = (arr(&v, "truth"), arr(&v, "lower"), arr(&v, "upper"));
                for k in 0..t.len() {
                    assert!(lo[k] <= t[k] + 1e-12 && t[k] <= hi[k] + 1e-12, "{kind} on={on} at {k}");
                }
                if !on {
                    assert!(lo.iter().chain(&hi).all(|x| x.abs() < 1e-12));
                }
            }
        }
        assert!(envelope_json("tan", 0.5, 1.0, true, 3).is_err());
    }

    #[test]
    fn cos_envelope_is_tight_at_the_limits() {
        let v = envelope_json("cos", 0.5, 1.2, true, 3).unwrap();
        let (t, hi) = (arr(&v, "truth"), arr(&v, "upper"));
        assert!((hi[0] - t[0]).abs() < 1e-12);
        assert!((hi[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn field_peaks_at_the_percentile() {
        let v = field_json("", 0.0, 0.4, 16, 5, 3).unwrap();
        let probs: Vec<f64> = v["lines"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|l| l["exists"] == true)
            .map(|l| l["probability"].as_f64().unwrap())
            .collect();
        let max = probs.iter().copied().fold(0.0, f64::max);
        assert!((max - 0.4).abs() < 1e-12);
        assert_eq!(v["field"].as_array().unwrap().len(), 256);
        assert_eq!(v["scenarios"].as_array().unwrap().len(), 5);
        assert_eq!(field_json("", 0.0, 0.4, 16, 5, 3).unwrap(), v);
        assert!(field_json("{", 1.0, 0.4, 4, 1, 0).is_err());
    }

    #[test]
    fn kelley_converges_to_the_parabola_minimum() {
        let v = cuts_json(1.0, -2.0, 3.0, 60, 1e-6).unwrap();
        assert_eq!(v["converged"], true);
        let rounds = v["rounds"].as_array().unwrap();
        let last = rounds.last().unwrap();
        assert!((last["x"].as_f64().unwrap() - 0.5).abs() < 1e-3);
        // Bounds from the cut model never exceed the optimum and never fall.
        let bounds: Vec<f64> = rounds.iter().map(|r| r["bound"].as_f64().unwrap()).collect();
        assert!(bounds.iter().all(|b| *b <= -0.25 + 1e-9));
        assert!(bounds.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        // Every cut is the tangent of z = x² at the separated point.
        for r in rounds.iter().filter(|r| r.get("cut").is_some()) {
            let xv = r["x"].as_f64().unwrap();
            assert!((r["cut"]["slope"].as_f64().unwrap() - 2.0 * xv).abs() < 1e-9);
            assert!((r["cut"]["intercept"].as_f64().unwrap() + xv * xv).abs() < 1e-9);
        }
    }
}
