use orgdt::scenario::{
    default_sigma, line_failure_probability, load_scenarios, sample_scenarios, sample_with, save_scenarios, ScenarioError,
};
use orgdt::testkit::{desk6, random_instance, InstanceShape};
use proptest::prelude::*;

#[test]
fn the_most_exposed_line_fails_at_the_percentile() {
    let net = desk6();
    let sigma = default_sigma(&net);
    for pct in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let peak = net
            .lines
            .iter()
            .map(|l| line_failure_probability(l, &net, sigma, pct).unwrap())
            .fold(0.0, f64::max);
        assert!((peak - pct).abs() <= 1e-12, "{pct}: {peak}");
    }
}

#[test]
fn candidates_never_fail() {
    let net = desk6();
    for l in net.lines.iter().filter(|l| !l.exists) {
        assert_eq!(line_failure_probability(l, &net, 1.0, 1.0).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampling_is_a_function_of_the_seed(seed in any::<u64>(), pct in 0.0f64..=1.0, count in 1usize..30) {
        let net = desk6();
        let sigma = default_sigma(&net);
        let a = save_scenarios(&sample_scenarios(&net, count, pct, sigma, seed).unwrap());
        let b = save_scenarios(&sample_scenarios(&net, count, pct, sigma, seed).unwrap());
        prop_assert_eq!(a, b);
    }

    // One uniform is drawn per existing line whatever the field, so damage
    // sets only grow with the percentile.
    #[test]
    fn damage_grows_with_the_percentile(seed in any::<u64>(), lo in 0.0f64..=1.0, hi in 0.0f64..=1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let net = desk6();
        let sigma = default_sigma(&net);
        let a = sample_scenarios(&net, 12, lo, sigma, seed).unwrap();
        let b = sample_scenarios(&net, 12, hi, sigma, seed).unwrap();
        for (x, y) in a.scenarios.iter().zip(&b.scenarios) {
            prop_assert!(x.damaged_lines.is_subset(&y.damaged_lines));
        }
    }

    #[test]
    fn saved_sets_load_back(seed in 0u64..5000, pct in 0.0f64..=1.0) {
        let (net, _) = random_instance(seed, InstanceShape { buses: 5, extra_lines: 2, candidates: 1, scenarios: 1, new_generator: false });
        let set = sample_scenarios(&net, 7, pct, default_sigma(&net), seed).unwrap();
        prop_assert_eq!(load_scenarios(&save_scenarios(&set), &net).unwrap(), set);
    }

    #[test]
    fn probabilities_are_probabilities(seed in 0u64..5000, pct in 0.0f64..=1.0, sigma in 0.5f64..200.0) {
        let (net, _) = random_instance(seed, InstanceShape { buses: 6, extra_lines: 3, candidates: 2, scenarios: 1, new_generator: false });
        for l in &net.lines {
            let p = line_failure_probability(l, &net, sigma, pct).unwrap();
            prop_assert!((0.0..=pct).contains(&p), "{}: {p}", l.id);
        }
    }
}

#[test]
fn custom_fields_drive_the_same_trials() {
    let net = desk6();
    let sigma = default_sigma(&net);
    let gaussian = sample_with(&net, 9, 4, |l| line_failure_probability(l, &net, sigma, 0.6)).unwrap();
    assert_eq!(gaussian, sample_scenarios(&net, 9, 0.6, sigma, 4).unwrap().scenarios);

    let only_first = net.lines.iter().find(|l| l.exists).unwrap().id.clone();
    let chosen = sample_with(&net, 5, 4, |l| Ok(if l.id == only_first { 1.0 } else { 0.0 })).unwrap();
    assert!(chosen.iter().all(|s| s.damaged_lines.len() == 1 && s.damaged_lines.contains(&only_first)));

    let err = sample_with(&net, 1, 4, |_| Ok(1.5)).unwrap_err();
    assert!(matches!(err, ScenarioError::BadProbability { value, .. } if value == 1.5));
}
