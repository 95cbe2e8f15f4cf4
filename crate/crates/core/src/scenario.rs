//! Damage scenarios drawn from a spatial Gaussian failure field.
//!
//! Each existing line fails independently with a probability given by an
//! isotropic Gaussian centred on the bus centroid, scaled so the most exposed
//! line fails with probability `percentile`. One uniform draw is consumed per
//! (scenario, existing line) pair whatever the probability, so raising the
//! percentile under a fixed seed only ever adds damaged lines.

use crate::netmodel::{Line, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use thiserror::Error;

/// Identifier recorded in scenario files for the generator behind the draws.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("network has no buses or no existing lines")]
    EmptyNetwork,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("percentile must lie in [0, 1], got {0}")]
    BadPercentile(f64),
    #[error("line {line}: failure probability {value} outside [0, 1]")]
    BadProbability { line: String, value: f64 },
    #[error("scenario count must be at least 1")]
    ZeroCount,
    #[error("scenario {scenario}: unknown line \"{line}\"")]
    UnknownLine { scenario: String, line: String },
    #[error("scenario {scenario}: line \"{line}\" is a candidate and cannot be damaged")]
    CandidateDamaged { scenario: String, line: String },
    #[error("duplicate scenario id \"{0}\"")]
    DuplicateId(String),
    #[error("unsupported rng algorithm \"{0}\"")]
    UnknownRng(String),
    #[error("scenario file: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// Ids of existing lines knocked out, kept sorted.
    pub damaged_lines: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSet {
    pub seed: u64,
    #[serde(rename = "percentile")]
    pub damage_percentile: f64,
    pub sigma: f64,
    #[serde(default = "default_rng")]
    pub rng: String,
    pub scenarios: Vec<Scenario>,
}

fn default_rng() -> String {
    RNG_ALGORITHM.to_string()
}

impl ScenarioSet {
    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Checks ids are unique and every damaged line is an existing line of `net`.
    pub fn validate(&self, net: &Network) -> Result<(), ScenarioError> {
        if self.rng != RNG_ALGORITHM {
            return Err(ScenarioError::UnknownRng(self.rng.clone()));
        }
        let mut ids = HashSet::new();
        for s in &self.scenarios {
            if !ids.insert(s.id.as_str()) {
                return Err(ScenarioError::DuplicateId(s.id.clone()));
            }
            for l in &s.damaged_lines {
                match net.lines.iter().find(|x| &x.id == l) {
                    None => {
                        return Err(ScenarioError::UnknownLine {
                            scenario: s.id.clone(),
                            line: l.clone(),
                        })
                    }
                    Some(x) if !x.exists => {
                        return Err(ScenarioError::CandidateDamaged {
                            scenario: s.id.clone(),
                            line: l.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

/// Default field width: a quarter of the bounding-box diagonal.
pub fn default_sigma(net: &Network) -> f64 {
    let d = net.bounding_box_diagonal() / 4.0;
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

fn midpoint_sq_distance(net: &Network, line: &Line, centre: (f64, f64)) -> f64 {
    let (mx, my) = net.line_midpoint(line).expect("validated network");
    (mx - centre.0).powi(2) + (my - centre.1).powi(2)
}

/// The failure field at `point`: a Gaussian centred on the bus centroid,
/// scaled so that its largest value over existing line midpoints equals
/// `percentile`. Points nearer the centre than every midpoint are capped at 1.
pub fn field_probability(net: &Network, point: (f64, f64), sigma: f64, percentile: f64) -> Result<f64, ScenarioError> {
    check_field_args(sigma, percentile)?;
    let centre = net.centroid().ok_or(ScenarioError::EmptyNetwork)?;
    // Ratio to the peak is taken in log space so remote grids do not underflow.
    let nearest = net
        .lines
        .iter()
        .filter(|l| l.exists)
        .map(|l| midpoint_sq_distance(net, l, centre))
        .fold(f64::NAN, f64::min);
    if nearest.is_nan() {
        return Err(ScenarioError::EmptyNetwork);
    }
    let excess = (point.0 - centre.0).powi(2) + (point.1 - centre.1).powi(2) - nearest;
    Ok((percentile * (-excess / (2.0 * sigma * sigma)).exp()).min(1.0))
}

/// Failure probability of `line`: the field at its midpoint. Candidate lines
/// do not fail.
pub fn line_failure_probability(
    line: &Line,
    net: &Network,
    sigma: f64,
    percentile: f64,
) -> Result<f64, ScenarioError> {
    if !line.exists {
        check_field_args(sigma, percentile)?;
        return Ok(0.0);
    }
    let mid = net.line_midpoint(line).expect("validated network");
    field_probability(net, mid, sigma, percentile)
}

fn check_field_args(sigma: f64, percentile: f64) -> Result<(), ScenarioError> {
    if !(sigma > 0.0) {
        return Err(ScenarioError::BadSigma(sigma));
    }
    if !(0.0..=1.0).contains(&percentile) {
        return Err(ScenarioError::BadPercentile(percentile));
    }
    Ok(())
}

/// Width of the zero-padded numeric part of generated scenario ids.
fn id_width(count: usize) -> usize {
    count.to_string().len().max(2)
}

pub fn sample_scenarios(
    net: &Network,
    count: usize,
    percentile: f64,
    sigma: f64,
    seed: u64,
) -> Result<ScenarioSet, ScenarioError> {
    let scenarios = sample_with(net, count, seed, |l| line_failure_probability(l, net, sigma, percentile))?;
    Ok(ScenarioSet {
        seed,
        damage_percentile: percentile,
        sigma,
        rng: RNG_ALGORITHM.to_string(),
        scenarios,
    })
}

/// Independent Bernoulli trials on the existing lines with probabilities
/// from `field`, for failure models other than the Gaussian one.
///
/// Exactly one uniform is drawn per (scenario, existing line) pair, in line
/// order, whatever the probabilities. Two fields with `p₁ ≤ p₂` line by line
/// therefore give nested damage sets under the same seed.
pub fn sample_with(
    net: &Network,
    count: usize,
    seed: u64,
    field: impl Fn(&Line) -> Result<f64, ScenarioError>,
) -> Result<Vec<Scenario>, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::ZeroCount);
    }
    let probs: Vec<(String, f64)> = net
        .lines
        .iter()
        .filter(|l| l.exists)
        .map(|l| match field(l)? {
            p if (0.0..=1.0).contains(&p) => Ok((l.id.clone(), p)),
            p => Err(ScenarioError::BadProbability {
                line: l.id.clone(),
                value: p,
            }),
        })
        .collect::<Result<_, ScenarioError>>()?;
    if probs.is_empty() {
        return Err(ScenarioError::EmptyNetwork);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = id_width(count);
    Ok((1..=count)
        .map(|k| {
            let damaged_lines = probs
                .iter()
                .filter_map(|(id, p)| {
                    let u: f64 = rng.gen();
                    (u < *p).then(|| id.clone())
                })
                .collect();
            Scenario {
                id: format!("s{k:0width$}"),
                damaged_lines,
            }
        })
        .collect())
}

pub fn save_scenarios(set: &ScenarioSet) -> String {
    serde_json::to_string_pretty(set).expect("scenario set serializes")
}

/// Parses a scenario file and checks it against `net`.
pub fn load_scenarios(text: &str, net: &Network) -> Result<ScenarioSet, ScenarioError> {
    let set: ScenarioSet =
        serde_json::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
    set.validate(net)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_network;

    fn cross_net() -> Network {
        // Four spokes of equal length around a hub at the origin.
        let bus = |id: &str, x: f64, y: f64| {
            format!(
                r#"{{"id":"{id}","location":[{x},{y}],"demand_p":10,"demand_q":2,"v_min":0.95,"v_max":1.05}}"#
            )
        };
        let line = |id: &str, a: &str, b: &str| {
            format!(r#"{{"id":"{id}","from":"{a}","to":"{b}","resistance":0.01,"reactance":0.1,"thermal_limit":100}}"#)
        };
        let text = format!(
            r#"{{"buses":[{},{},{},{},{}],"lines":[{},{},{},{}],
            "params":{{"theta_u":0.26,"phi_u":1.0,"lp_cr":0.99,"lq_cr":0.99,"lp_ncr":0.8,"lq_ncr":0.8}}}}"#,
            bus("h", 0.0, 0.0),
            bus("e", 10.0, 0.0),
            bus("w", -10.0, 0.0),
            bus("n", 0.0, 10.0),
            bus("s", 0.0, -10.0),
            line("le", "h", "e"),
            line("lw", "h", "w"),
            line("ln", "h", "n"),
            line("ls", "h", "s"),
        );
        parse_network(&text).unwrap()
    }

    #[test]
    fn symmetric_lines_have_equal_probability() {
        let net = cross_net();
        let p: Vec<f64> = net
            .lines
            .iter()
            .map(|l| line_failure_probability(l, &net, 5.0, 0.4).unwrap())
            .collect();
        for v in &p {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn centroid_line_gets_percentile_and_far_lines_vanish() {
        let mut net = cross_net();
        // Move the west spoke far away.
        net.buses[2].location = (-1.0e4, 0.0);
        net.lines[1].length = 1.0e4;
        let mid = |k: usize| line_failure_probability(&net.lines[k], &net, 5.0, 0.3).unwrap();
        let far = mid(1);
        assert!(far < 1e-12, "far line probability {far}");
        let max = (0..4).map(mid).fold(0.0, f64::max);
        assert!((max - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_percentile_damages_nothing() {
        let set = sample_scenarios(&cross_net(), 5, 0.0, 5.0, 7).unwrap();
        assert!(set.scenarios.iter().all(|s| s.damaged_lines.is_empty()));
        assert_eq!(set.scenarios.len(), 5);
    }

    #[test]
    fn sure_failure_damages_everything() {
        let set = sample_scenarios(&cross_net(), 3, 1.0, 1e12, 7).unwrap();
        for s in &set.scenarios {
            assert_eq!(s.damaged_lines.len(), 4);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let net = cross_net();
        let a = save_scenarios(&sample_scenarios(&net, 6, 0.5, 8.0, 42).unwrap());
        let b = save_scenarios(&sample_scenarios(&net, 6, 0.5, 8.0, 42).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn raising_percentile_only_adds_damage() {
        let net = cross_net();
        let lo = sample_scenarios(&net, 20, 0.3, 8.0, 9).unwrap();
        let hi = sample_scenarios(&net, 20, 0.6, 8.0, 9).unwrap();
        for (a, b) in lo.scenarios.iter().zip(&hi.scenarios) {
            assert!(a.damaged_lines.is_subset(&b.damaged_lines));
        }
    }

    #[test]
    fn file_round_trip_and_rejections() {
        let net = cross_net();
        let set = sample_scenarios(&net, 4, 0.5, 8.0, 1).unwrap();
        assert_eq!(load_scenarios(&save_scenarios(&set), &net).unwrap(), set);

        let empty = ScenarioSet {
            seed: 0,
            damage_percentile: 0.0,
            sigma: 1.0,
            rng: RNG_ALGORITHM.into(),
            scenarios: vec![],
        };
        assert_eq!(load_scenarios(&save_scenarios(&empty), &net).unwrap(), empty);

        let bad = r#"{"seed":1,"percentile":0.5,"sigma":1,"scenarios":[{"id":"a","damaged_lines":["zz"]}]}"#;
        assert_eq!(
            load_scenarios(bad, &net).unwrap_err(),
            ScenarioError::UnknownLine {
                scenario: "a".into(),
                line: "zz".into()
            }
        );
    }

    #[test]
    fn argument_errors() {
        let net = cross_net();
        assert_eq!(sample_scenarios(&net, 0, 0.5, 1.0, 0).unwrap_err(), ScenarioError::ZeroCount);
        assert!(matches!(
            line_failure_probability(&net.lines[0], &net, 0.0, 0.5),
            Err(ScenarioError::BadSigma(_))
        ));
    }
}
