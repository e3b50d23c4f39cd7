use congested_transport::kantorovich::solve_transport;
use congested_transport::network::{Network, DEFAULT_PATH_CAP};
use congested_transport::wardrop::suite::{fixed_demand_suite, variable_demand_suite};
use congested_transport::wardrop::*;
use ndarray::{array, Array2};
use proptest::prelude::*;

/// Equilibrium on parallel links with `g_e(t) = a_e + b_e t`: every used link
/// costs the common level `c`, found by bisection on the routed demand.
fn parallel_affine_oracle(a: &[f64], b: &[f64], demand: f64) -> Vec<f64> {
    let routed = |c: f64| a.iter().zip(b).map(|(a, b)| ((c - a) / b).max(0.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if routed(mid) < demand {
            lo = mid
        } else {
            hi = mid
        }
    }
    a.iter().zip(b).map(|(a, b)| ((hi - a) / b).max(0.0)).collect()
}

fn parallel(m: usize) -> Network {
    Network::new(2, vec![(0, 1); m], vec![0], vec![1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parallel_links_match_water_filling(
        ab in proptest::collection::vec((0.0f64..3.0, 0.2f64..3.0), 2..6),
        demand in 0.1f64..5.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = ab.into_iter().unzip();
        // a t + b t^2 / 2 = b (a/b t + t^2/2)
        let costs: Vec<CongestionSpec> = a.iter().zip(&b).map(|(&a, &b)| CongestionSpec::ScaledAffineQuadratic { c: b, a: a / b }).collect();
        let net = parallel(a.len());
        let res = solve_fixed_demand(&net, &costs, &array![[demand]], &SolverOptions::new(1e-10, 5000)).unwrap();
        let oracle = parallel_affine_oracle(&a, &b, demand);
        for (x, y) in res.flows.0.iter().zip(&oracle) {
            prop_assert!((x - y).abs() < 1e-5 * (1.0 + demand), "{:?} vs {:?}", res.flows.0, oracle);
        }
        let rep = verify_wardrop(&net, &costs, &res, DEFAULT_PATH_CAP).unwrap();
        prop_assert!(rep.max_excess <= 1e-4);
    }

    #[test]
    fn solver_beats_every_single_path_routing(
        seed_costs in proptest::collection::vec((0.0f64..2.0, 1.2f64..3.0), 5),
        demand in 0.5f64..3.0,
    ) {
        let net = Network::new(4, vec![(0, 1), (1, 3), (0, 2), (2, 3), (1, 2)], vec![0], vec![3]);
        let costs: Vec<CongestionSpec> = seed_costs.iter().map(|&(a, p)| CongestionSpec::AffinePower { a, p }).collect();
        let res = solve_fixed_demand(&net, &costs, &array![[demand]], &SolverOptions::new(1e-8, 5000)).unwrap();
        for path in [vec![0, 1], vec![2, 3], vec![0, 4, 3]] {
            let mut f = vec![0.0; 5];
            for e in path {
                f[e] = demand;
            }
            prop_assert!(res.objective <= objective(&LinkFlow(f), &costs).unwrap() + 1e-9);
        }
        // flow conservation at the two inner nodes
        let x = &res.flows.0;
        prop_assert!((x[0] - x[1] - x[4]).abs() < 1e-9 * (1.0 + demand));
        prop_assert!((x[2] + x[4] - x[3]).abs() < 1e-9 * (1.0 + demand));
    }
}

#[test]
fn braess_paradox_equilibrium() {
    // s=0, a=1, b=2, t=3; x/100 on s-a and b-t, 45 on a-t and s-b, free a-b
    let net = Network::new(4, vec![(0, 1), (1, 3), (0, 2), (2, 3), (1, 2)], vec![0], vec![3]);
    let costs = vec![
        CongestionSpec::ScaledAffineQuadratic { c: 0.01, a: 0.0 },
        CongestionSpec::Linear { a: 45.0 },
        CongestionSpec::Linear { a: 45.0 },
        CongestionSpec::ScaledAffineQuadratic { c: 0.01, a: 0.0 },
        CongestionSpec::Linear { a: 0.0 },
    ];
    let res = solve_fixed_demand(&net, &costs, &array![[4000.0]], &SolverOptions::new(1e-9, 10_000)).unwrap();
    // everyone takes s-a-b-t at cost 80
    let x = &res.flows.0;
    assert!((x[0] - 4000.0).abs() < 1e-3 && (x[4] - 4000.0).abs() < 1e-3, "{x:?}");
    let rep = verify_wardrop(&net, &costs, &res, DEFAULT_PATH_CAP).unwrap();
    assert!(rep.max_excess <= 1e-4);
}

#[test]
fn suite_solutions_agree_with_the_oracle() {
    for inst in fixed_demand_suite().into_iter().take(4) {
        let res = solve_fixed_demand(&inst.net, &inst.costs, &inst.demand, &SolverOptions::new(1e-8, 20_000)).unwrap();
        let oracle =
            brute_force_equilibrium(&inst.net, &inst.costs, &DemandSpec::Fixed(inst.demand.clone()), 64).unwrap();
        assert!(
            (res.objective - oracle.objective).abs() <= 1e-5 * (1.0 + res.objective),
            "{}",
            inst.name
        );
    }
}

#[test]
fn variable_demand_coupling_is_transport_optimal() {
    for inst in variable_demand_suite() {
        let res = solve_variable_demand(
            &inst.net,
            &inst.costs,
            &inst.mu,
            &inst.nu,
            &SolverOptions::new(1e-9, 20_000),
        )
        .unwrap();
        let table = congested_transport::network::shortest_distances(&inst.net, &res.xi).unwrap();
        let d = Array2::from_shape_fn((inst.mu.len(), inst.nu.len()), |(a, b)| table.get(a, b));
        let ot = solve_transport(&inst.mu, &inst.nu, &d).unwrap();
        let realized: f64 = (&d * &res.coupling).sum();
        assert!(
            (realized - ot.value).abs() <= 1e-6 * ot.value.abs().max(1.0),
            "{}: {realized} vs {}",
            inst.name,
            ot.value
        );
    }
}

#[test]
fn text_inputs_round_trip() {
    let net_text = "nodes 2\nedge s t monomial 2\nedge s t affine_power 1 2\nsource s\ndest t\n";
    let (net, costs) = load_network(net_text, CongestionSpec::Quadratic).unwrap();
    assert_eq!(
        costs,
        vec![
            CongestionSpec::Monomial { p: 2.0 },
            CongestionSpec::AffinePower { a: 1.0, p: 2.0 }
        ]
    );
    let demand = parse_demand("demand s t 1\n", &net).unwrap();
    let DemandSpec::Fixed(g) = demand else {
        panic!("expected a matrix")
    };
    let res = solve_fixed_demand(&net, &costs, &g, &SolverOptions::new(1e-10, 5000)).unwrap();
    // t = 1 + t' with t + t' = 1: t = 1, t' = 0
    assert!((res.flows.0[0] - 1.0).abs() < 1e-6, "{:?}", res.flows);
}
