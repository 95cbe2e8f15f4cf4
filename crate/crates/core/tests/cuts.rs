use orgdt::milp::{
    add_gradient_cut, default_backend, solve_with_cuts, CutOptions, MilpModel, ObjSense, SocAtom, SolveStatus, VarId,
    VarKind,
};
use proptest::prelude::*;

fn atom(dim: usize) -> SocAtom {
    SocAtom {
        x: (0..dim).map(VarId).collect(),
        y: VarId(dim),
        z: VarId(dim + 1),
    }
}

/// `Σ z_k − c_k x_k + d_k y_k` subject to `x_k² ≤ y_k z_k`, with integer
/// `y_k ∈ {1, 2, 3}` and `x_k ∈ [−3, 3]`.
fn separable(c: &[f64], d: &[f64]) -> MilpModel {
    let mut m = MilpModel::new();
    let mut terms = Vec::new();
    for (k, (&ck, &dk)) in c.iter().zip(d).enumerate() {
        let x = m.continuous(format!("x{k}"), -3.0, 3.0);
        let y = m.add_var(format!("y{k}"), 1.0, 3.0, VarKind::Integer);
        let z = m.continuous(format!("z{k}"), 0.0, 100.0);
        m.add_soc(SocAtom { x: vec![x.id], y: y.id, z: z.id });
        terms.extend([(z.id, 1.0), (x.id, -ck), (y.id, dk)]);
    }
    m.set_objective(ObjSense::Minimize, terms, 0.0);
    m
}

/// Minimum of one separable term by enumerating `y` and minimizing the
/// parabola `x²/y − c x` over the box.
fn term_optimum(c: f64, d: f64) -> f64 {
    (1..=3)
        .map(|y| {
            let y = y as f64;
            let x = (c * y / 2.0).clamp(-3.0, 3.0);
            x * x / y - c * x + d * y
        })
        .fold(f64::INFINITY, f64::min)
}

fn exact_options() -> CutOptions {
    let mut o = CutOptions::default();
    o.milp.rel_gap = 0.0;
    o.lp_rounds = 0;
    o
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cuts_keep_every_cone_point(
        at in proptest::collection::vec(-10.0f64..10.0, 3),
        at_y in 0.0f64..5.0,
        x in proptest::collection::vec(-10.0f64..10.0, 3),
        y in 1e-3f64..5.0,
        extra in 0.0f64..10.0,
    ) {
        let a = atom(3);
        let mut p = at.clone();
        p.extend([at_y, 0.0]);
        let cut = add_gradient_cut(&a, &p, 1e-6);
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let mut q = x.clone();
        q.extend([y, xx / y + extra]);
        let scale = 1.0 + xx / y + p.iter().map(|v| v.abs()).sum::<f64>();
        prop_assert!(cut.violation(&q) <= 1e-9 * scale, "{}", cut.violation(&q));
    }

    #[test]
    fn cuts_separate_the_point_they_come_from(x in 0.1f64..10.0, y in 0.1f64..5.0, short in 0.0f64..0.9) {
        let z = short * x * x / y;
        let cut = add_gradient_cut(&atom(1), &[x, y, z], 1e-6);
        prop_assert!(cut.violation(&[x, y, z]) > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cut_loop_reaches_the_enumerated_optimum(
        c in proptest::collection::vec(-4.0f64..4.0, 1..4),
        d in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let d = &d[..c.len()];
        let mut m = separable(&c, d);
        let opts = exact_options();
        let res = solve_with_cuts(&mut m, &default_backend(), &opts).unwrap();
        prop_assert_eq!(res.status, SolveStatus::Optimal);
        prop_assert!(res.rounds <= opts.max_rounds);
        let want: f64 = c.iter().zip(d).map(|(&ck, &dk)| term_optimum(ck, dk)).sum();
        prop_assert!((res.objective - want).abs() <= 1e-4 * want.abs().max(1.0), "{} vs {want}", res.objective);
        // The objective of the cut model rises as cuts accumulate.
        for w in res.objective_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-7 * w[0].abs().max(1.0), "{:?}", res.objective_trace);
        }
    }
}

#[test]
fn round_cap_stops_the_loop() {
    let mut m = separable(&[3.0, -2.5], &[0.2, -0.1]);
    let opts = CutOptions {
        max_rounds: 2,
        ..exact_options()
    };
    let res = solve_with_cuts(&mut m, &default_backend(), &opts).unwrap();
    assert!(res.rounds <= 2);
    assert!(res.status == SolveStatus::Optimal || res.status == SolveStatus::Limit);
}
