use num_complex::Complex64;
use orgdt::netmodel::{admittance_of, apply_load_scale, parse_network, to_json, Network};
use orgdt::testkit::{desk6, random_instance, InstanceShape};
use proptest::prelude::*;

fn instance(seed: u64, buses: usize) -> Network {
    random_instance(
        seed,
        InstanceShape {
            buses,
            extra_lines: 2,
            candidates: 2,
            scenarios: 1,
            new_generator: seed % 2 == 0,
        },
    )
    .0
}

#[test]
fn desk_network_survives_a_round_trip() {
    let net = desk6();
    assert_eq!(parse_network(&to_json(&net)).unwrap(), net);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialized_networks_parse_back_unchanged(seed in 0u64..10_000, buses in 2usize..8) {
        let net = instance(seed, buses);
        prop_assert_eq!(parse_network(&to_json(&net)).unwrap(), net);
    }

    #[test]
    fn admittance_inverts_impedance(r in 1e-4f64..2.0, x in 1e-4f64..2.0, factor in 0.05f64..1.0, facts: bool) {
        let mut line = desk6().lines[0].clone();
        line.resistance = r;
        line.reactance = x;
        line.reduced_reactance = x * factor;
        let (g, b) = admittance_of(&line, facts).unwrap();
        let z = Complex64::new(r, if facts { x * factor } else { x });
        let one = Complex64::new(g, b) * z;
        prop_assert!((one - 1.0).norm() <= 1e-12, "{one}");
        prop_assert!(b < 0.0);
    }

    #[test]
    fn load_scale_touches_only_demand(seed in 0u64..10_000, scale in 0.0f64..3.0) {
        let net = instance(seed, 5);
        let scaled = apply_load_scale(&net, scale);
        prop_assert_eq!(&scaled.lines, &net.lines);
        prop_assert_eq!(&scaled.params, &net.params);
        for (a, b) in scaled.buses.iter().zip(&net.buses) {
            prop_assert_eq!(a.demand_p, b.demand_p * scale);
            prop_assert_eq!(a.demand_q, b.demand_q * scale);
            let mut same = a.clone();
            same.demand_p = b.demand_p;
            same.demand_q = b.demand_q;
            prop_assert_eq!(&same, b);
        }
    }
}
