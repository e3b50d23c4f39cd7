use congested_transport::beckmann::*;
use congested_transport::kantorovich::{solve_transport, DiscreteMeasure, PowerCost};
use congested_transport::wardrop::CongestionSpec;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bumps(g: &Grid, c: [f64; 2], d: [f64; 2]) -> (ScalarField, ScalarField) {
    let bump = |p: [f64; 2]| {
        ScalarField::from_fn(g, move |x, y| {
            0.2 + (-((x - p[0]).powi(2) + (y - p[1]).powi(2)) / 0.05).exp()
        })
        .normalized(g, 1.0)
    };
    (bump(c), bump(d))
}

/// On a strip the flux is forced: `v(x) = int_0^x (mu - nu)`.
fn strip_flux(mu: &[f64], nu: &[f64], h: f64) -> Vec<f64> {
    let mut v = vec![0.0];
    for (m, n) in mu.iter().zip(nu) {
        let last = *v.last().unwrap();
        v.push(last + h * (m - n));
    }
    v
}

#[test]
fn strip_flux_is_the_cumulative_sum() {
    let n = 40;
    let g = Grid::new(n, 1, 1.0 / n as f64).unwrap();
    let mu = ScalarField::from_fn(&g, |x, _| 1.0 + x).normalized(&g, 1.0);
    let nu = ScalarField::from_fn(&g, |x, _| 2.0 - x * x).normalized(&g, 1.0);
    let oracle = strip_flux(mu.values.as_slice().unwrap(), nu.values.as_slice().unwrap(), g.h);

    let q = solve_dual_quadratic(&mu, &nu, &g).unwrap();
    for (k, o) in oracle.iter().enumerate() {
        assert!((q.v.vx[[k, 0]] - o).abs() < 1e-8, "{k}");
    }
    let s = solve_beckmann(&mu, &nu, &CongestionSpec::Monomial { p: 3.0 }, &g, 1e-9).unwrap();
    for (k, o) in oracle.iter().enumerate() {
        assert!((s.v.vx[[k, 0]] - o).abs() < 1e-6, "{k}: {} vs {o}", s.v.vx[[k, 0]]);
    }
}

#[test]
fn splitting_agrees_with_the_poisson_solve() {
    let g = Grid::square(16, 1.0).unwrap();
    let (mu, nu) = bumps(&g, [0.3, 0.3], [0.7, 0.6]);
    let q = solve_dual_quadratic(&mu, &nu, &g).unwrap();
    let s = solve_beckmann(&mu, &nu, &CongestionSpec::Quadratic, &g, 1e-10).unwrap();
    assert!((s.cost - q.cost).abs() <= 1e-6 * q.cost, "{} vs {}", s.cost, q.cost);
    let div = divergence(&s.v, &g).unwrap();
    let target = &mu.values - &nu.values;
    let worst = div
        .values
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst}");
    assert!(s.v.boundary_flux() == 0.0);
    assert!(s.gap() >= -1e-9);
}

#[test]
fn linear_cost_flow_is_bounded_below_by_w1() {
    // the Beckmann value for H(t) = t bounds the grid W1 from above, up to
    // the staircase factor of a 4-neighbour discretization
    let g = Grid::square(16, 1.0).unwrap();
    let (mu, nu) = bumps(&g, [0.25, 0.5], [0.75, 0.5]);
    let s = solve_beckmann_with(
        &mu,
        &nu,
        &[CongestionSpec::Linear { a: 1.0 }],
        &g,
        &BeckmannOptions::new(1e-5),
    )
    .unwrap();
    let to_measure = |f: &ScalarField| {
        let (p, w): (Vec<Vec<f64>>, Vec<f64>) = f
            .values
            .indexed_iter()
            .map(|((i, j), v)| (g.center(i, j).to_vec(), v * g.cell_area()))
            .unzip();
        DiscreteMeasure::new(p, w).unwrap()
    };
    let (a, b) = (to_measure(&mu), to_measure(&nu));
    let w1 = solve_transport(a.weights(), b.weights(), &PowerCost::new(1.0).matrix(&a, &b))
        .unwrap()
        .value;
    assert!(s.cost >= w1 * (1.0 - 1e-3), "{} < {w1}", s.cost);
    assert!(s.cost <= w1 * 2f64.sqrt() + 2.0 * g.h, "{} vs {w1}", s.cost);
}

#[test]
fn geodesics_on_uniform_weight_are_octagonal() {
    let g = Grid::square(9, 1.0).unwrap();
    let k = ScalarField::from_fn(&g, |_, _| 1.0);
    let d = geodesic_distances(&k, &g, (0, 0));
    // 8 straight steps
    assert!((d[[8, 0]] - 8.0 * g.h).abs() < 1e-12);
    // 8 diagonal steps
    assert!((d[[8, 8]] - 8.0 * 2f64.sqrt() * g.h).abs() < 1e-12);
    // knight-like offset (8, 4): 4 diagonal plus 4 straight
    assert!((d[[8, 4]] - (4.0 * 2f64.sqrt() + 4.0) * g.h).abs() < 1e-12);
    assert!(octagonal_distortion() > 0.08 && octagonal_distortion() < 0.085);
}

#[test]
fn field_files_round_trip() {
    let g = Grid::new(5, 3, 0.25).unwrap();
    let f = ScalarField::from_fn(&g, |x, y| x * 10.0 + y);
    let (csv, side) = write_scalar_field(&f, &g);
    let (g2, f2) = read_scalar_field(&csv, &side).unwrap();
    assert_eq!(g2, g);
    assert_eq!(f2, f);
    assert_eq!(parse_sidecar(&grid_sidecar(&g)).unwrap(), g);
}

fn coupling() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<[f64; 2]>, Array2<f64>)> {
    (1usize..5, 1usize..5, any::<u64>()).prop_map(|(m, n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pt = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let src: Vec<[f64; 2]> = (0..m).map(|_| pt(&mut rng)).collect();
        let dst: Vec<[f64; 2]> = (0..n).map(|_| pt(&mut rng)).collect();
        let plan = Array2::from_shape_fn((m, n), |_| rng.gen_range(0.0..1.0));
        (src, dst, plan)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transport_density_carries_the_coupling_cost((src, dst, plan) in coupling()) {
        let g = Grid::square(12, 1.0).unwrap();
        let sigma = rasterize_transport_density(&plan, &src, &dst, &g).unwrap();
        let cost: f64 = plan.indexed_iter().map(|((a, b), w)| w * (src[a][0] - dst[b][0]).hypot(src[a][1] - dst[b][1])).sum();
        let mass = sigma.mass(&g);
        prop_assert!((mass - cost).abs() <= 1e-10 * (1.0 + cost));
    }

    #[test]
    fn vector_measure_is_dominated_by_the_density((src, dst, plan) in coupling()) {
        let g = Grid::square(12, 1.0).unwrap();
        let sigma = rasterize_transport_density(&plan, &src, &dst, &g).unwrap();
        let vg = rasterize_v_gamma(&plan, &src, &dst, &g).unwrap();
        let mag = vg.cell_magnitude();
        for (m, s) in mag.values.iter().zip(sigma.values.iter()) {
            prop_assert!(*m <= s + 1e-8);
        }
    }

    #[test]
    fn divergence_of_a_gradient_is_the_laplacian(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::square(8, 1.0).unwrap();
        let u = ScalarField { values: Array2::from_shape_fn((8, 8), |_| rng.gen_range(-1.0..1.0)) };
        let div = divergence(&gradient(&u, &g), &g).unwrap();
        // zero-flux five-point Laplacian, written out independently
        for i in 0..8 {
            for j in 0..8 {
                let mut lap = 0.0;
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if (0..8).contains(&a) && (0..8).contains(&b) {
                        lap += u.values[[a as usize, b as usize]] - u.values[[i, j]];
                    }
                }
                prop_assert!((div.values[[i, j]] - lap / (g.h * g.h)).abs() < 1e-9);
            }
        }
    }
}
