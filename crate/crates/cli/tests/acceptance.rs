//! The twelve acceptance criteria, run in sequence so the timings are not
//! distorted by sibling tests. One PASS/FAIL line per criterion.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use congested_transport::beckmann::{
    bump_instance, cell_magnitude, coarse_w1, rasterize_transport_density, reconstruct_trajectories, solve_beckmann,
    solve_beckmann_with, solve_dual_quadratic, weighted_beckmann_duality_check, BeckmannError, BeckmannOptions,
    BeckmannSolution, Grid, ScalarField, TrajectoryOptions,
};
use congested_transport::kantorovich::{
    gateaux_check, hotelling_demands, hotelling_recover_prices, solve_transport, DiscreteMeasure, PowerCost,
};
use congested_transport::network::{shortest_distances, DEFAULT_PATH_CAP};
use congested_transport::urbanplan::{solve_quadratic_city_with, CityOptions, UrbanError};
use congested_transport::wardrop::suite::{fixed_demand_suite, variable_demand_suite};
use congested_transport::wardrop::{
    brute_force_equilibrium, solve_fixed_demand, solve_variable_demand, verify_wardrop, CongestionSpec, DemandSpec,
    SolverOptions,
};
use ct_cli::strip_timing;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn c1_wardrop_suite() -> Outcome {
    let t = Instant::now();
    let mut worst_gap: f64 = 0.0;
    let mut worst_excess: f64 = 0.0;
    let mut count = 0;
    for inst in fixed_demand_suite() {
        let res = match solve_fixed_demand(&inst.net, &inst.costs, &inst.demand, &SolverOptions::new(1e-7, 20_000)) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{}: {e}", inst.name)),
        };
        let rep = match verify_wardrop(&inst.net, &inst.costs, &res, DEFAULT_PATH_CAP) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{}: {e}", inst.name)),
        };
        worst_gap = worst_gap.max(res.relative_gap);
        worst_excess = worst_excess.max(rep.max_excess);
        count += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        count == 10 && worst_gap <= 1e-6 && worst_excess <= 1e-4 && secs <= 5.0,
        format!("{count} networks, max gap {worst_gap:.2e}, max excess {worst_excess:.2e}, {secs:.2} s"),
    )
}

fn c2_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in fixed_demand_suite() {
        let res = solve_fixed_demand(&inst.net, &inst.costs, &inst.demand, &SolverOptions::new(1e-9, 50_000));
        let oracle = brute_force_equilibrium(&inst.net, &inst.costs, &DemandSpec::Fixed(inst.demand.clone()), 64);
        match (res, oracle) {
            (Ok(r), Ok(o)) => worst = worst.max((r.objective - o.objective).abs() / (1.0 + r.objective)),
            (Err(e), _) | (_, Err(e)) => return outcome(false, format!("{}: {e}", inst.name)),
        }
    }
    outcome(worst <= 1e-5, format!("max |J - J_oracle| / (1 + J) = {worst:.2e}"))
}

fn c3_variable_demand() -> Outcome {
    let mut worst: f64 = 0.0;
    let suite = variable_demand_suite();
    let n = suite.len();
    for inst in suite {
        let res = match solve_variable_demand(
            &inst.net,
            &inst.costs,
            &inst.mu,
            &inst.nu,
            &SolverOptions::new(1e-9, 50_000),
        ) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{}: {e}", inst.name)),
        };
        let table = shortest_distances(&inst.net, &res.xi).expect("distances");
        let d = Array2::from_shape_fn((inst.mu.len(), inst.nu.len()), |(a, b)| table.get(a, b));
        let ot = solve_transport(&inst.mu, &inst.nu, &d).expect("transport");
        let realized: f64 = (&d * &res.coupling).sum();
        worst = worst.max(rel(realized, ot.value));
    }
    outcome(
        n == 5 && worst <= 1e-6,
        format!("{n} instances, max relative gap to the transport optimum {worst:.2e}"),
    )
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    DiscreteMeasure::new(pts, w.iter().map(|x| x / s).collect()).expect("measure")
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn c4_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (m, n) = (rng.gen_range(1..=50), rng.gen_range(1..=50));
        let (mu, nu) = (random_measure(&mut rng, m), random_measure(&mut rng, n));
        let p = if k % 2 == 0 { 1.0 } else { 2.0 };
        let sol = solve_transport(mu.weights(), nu.weights(), &PowerCost::new(p).matrix(&mu, &nu)).expect("ot");
        worst = worst.max((sol.value - sol.dual_value).abs() / sol.value.abs().max(1e-300));
    }
    let mut worst_perm: f64 = 0.0;
    for n in 1..=6 {
        for _ in 0..5 {
            let c = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0));
            let brute = permutations(n)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / n as f64)
                .fold(f64::INFINITY, f64::min);
            let w = vec![1.0 / n as f64; n];
            worst_perm = worst_perm.max((solve_transport(&w, &w, &c).expect("ot").value - brute).abs());
        }
    }
    outcome(
        worst <= 1e-8 && worst_perm <= 1e-10,
        format!("100 instances, max relative duality gap {worst:.2e}; permutation oracle max error {worst_perm:.2e}"),
    )
}

fn c5_transport_density() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Grid::square(32, 1.0).expect("grid");
    let pt = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (m, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let src: Vec<[f64; 2]> = (0..m).map(|_| pt(&mut rng)).collect();
        let dst: Vec<[f64; 2]> = (0..n).map(|_| pt(&mut rng)).collect();
        let plan = Array2::from_shape_fn((m, n), |_| rng.gen_range(0.0..1.0));
        let cost: f64 = plan
            .indexed_iter()
            .map(|((a, b), w)| w * (src[a][0] - dst[b][0]).hypot(src[a][1] - dst[b][1]))
            .sum();
        let sigma = rasterize_transport_density(&plan, &src, &dst, &g).expect("raster");
        worst = worst.max(rel(sigma.mass(&g), cost));
    }
    // optimal coupling for |x - y|
    let mut worst_w1: f64 = 0.0;
    for _ in 0..5 {
        let (mu, nu) = (random_measure(&mut rng, 7), random_measure(&mut rng, 5));
        let sol = solve_transport(mu.weights(), nu.weights(), &PowerCost::new(1.0).matrix(&mu, &nu)).expect("ot");
        let src: Vec<[f64; 2]> = mu.points().map(|p| [p[0], p[1]]).collect();
        let dst: Vec<[f64; 2]> = nu.points().map(|p| [p[0], p[1]]).collect();
        let sigma = rasterize_transport_density(&sol.plan, &src, &dst, &g).expect("raster");
        worst_w1 = worst_w1.max(rel(sigma.mass(&g), sol.value));
    }
    outcome(
        worst <= 1e-8 && worst_w1 <= 1e-8,
        format!("20 couplings, max relative error {worst:.2e}; against W1 {worst_w1:.2e}"),
    )
}

fn settle(r: Result<BeckmannSolution, BeckmannError>) -> Result<BeckmannSolution, String> {
    match r {
        Ok(s) => Ok(s),
        Err(BeckmannError::NoConvergence(s)) => Err(format!("no convergence after {} iterations", s.iterations)),
        Err(e) => Err(e.to_string()),
    }
}

fn c6_quadratic_beckmann() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for n in [16usize, 32, 64] {
        let g = Grid::square(n, 1.0).expect("grid");
        let mut bump = || {
            let (cx, cy): (f64, f64) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
            ScalarField::from_fn(&g, move |x, y| {
                0.2 + (-((x - cx).powi(2) + (y - cy).powi(2)) / 0.05).exp()
            })
            .normalized(&g, 1.0)
        };
        let (mu, nu) = (bump(), bump());
        let q = solve_dual_quadratic(&mu, &nu, &g).expect("poisson");
        let s = match settle(solve_beckmann(&mu, &nu, &CongestionSpec::Quadratic, &g, 1e-9)) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("{n}^2: {e}")),
        };
        worst = worst.max((s.cost - q.cost).abs() / q.cost);
    }
    // strip: the flux is the running sum of mu - nu
    let n = 64;
    let g = Grid::new(n, 1, 1.0 / n as f64).expect("grid");
    let mu = ScalarField::from_fn(&g, |x, _| 1.0 + x).normalized(&g, 1.0);
    let nu = ScalarField::from_fn(&g, |x, _| 2.0 - x * x).normalized(&g, 1.0);
    let q = solve_dual_quadratic(&mu, &nu, &g).expect("poisson");
    let s = match settle(solve_beckmann(&mu, &nu, &CongestionSpec::Quadratic, &g, 1e-12)) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("strip: {e}")),
    };
    let mut run = 0.0;
    let mut strip_err: f64 = 0.0;
    for i in 0..n {
        run += g.h * (mu.values[[i, 0]] - nu.values[[i, 0]]);
        strip_err = strip_err
            .max((q.v.vx[[i + 1, 0]] - run).abs())
            .max((s.v.vx[[i + 1, 0]] - run).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && strip_err <= 1e-8 && secs <= 30.0,
        format!("max relative cost difference {worst:.2e}, strip error {strip_err:.2e}, {secs:.2} s"),
    )
}

fn c7_weighted_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = Grid::square(24, 1.0).expect("grid");
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..5 {
        let (a, b): (f64, f64) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let k = ScalarField::from_fn(&g, |x, y| 1.0 + 0.5 * (a * x).sin() * (b * y).cos());
        let mut pts = |m: usize| {
            let p: Vec<Vec<f64>> = (0..m)
                .map(|_| vec![rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)])
                .collect();
            DiscreteMeasure::new(p, vec![1.0 / m as f64; m]).expect("measure")
        };
        let (mu, nu) = (pts(6), pts(6));
        let r = match weighted_beckmann_duality_check(&k, &mu, &nu, &g, &BeckmannOptions::new(1e-6)) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        worst_ratio = worst_ratio.max((r.flow_value - r.geodesic_ot_value).abs() / r.tolerance);
    }
    outcome(
        worst_ratio <= 1.0,
        format!("5 instances, worst |flow - geodesic OT| / allowance = {worst_ratio:.3}"),
    )
}

fn c8_trajectories() -> Outcome {
    let t = Instant::now();
    let (g, mu, nu) = bump_instance(64).expect("instance");
    let s = match settle(solve_beckmann_with(
        &mu,
        &nu,
        &[CongestionSpec::Linear { a: 1.0 }],
        &g,
        &BeckmannOptions::new(1e-4),
    )) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let tr =
        reconstruct_trajectories(&s.v, &mu, &nu, &g, &TrajectoryOptions::new(10_000, 200, 8)).expect("trajectories");
    let w_end = coarse_w1(&tr.endpoints, &tr.weights, &nu, &g, 16).expect("w1");
    let mid = ScalarField {
        values: (&mu.values + &nu.values) * 0.5,
    };
    let w_mid = coarse_w1(&tr.midpoints, &tr.weights, &mid, &g, 16).expect("w1");
    let mag = cell_magnitude(&s.v, &g);
    let l1 = tr.intensity.l1_distance(&mag, &g);
    let norm = mag.mass(&g);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        w_end <= 2.0 * g.h && l1 <= 0.1 * norm && w_mid <= 3.0 * g.h && secs <= 60.0,
        format!(
            "W1(end, nu) {w_end:.4} (2h = {:.4}), intensity L1 {l1:.4} vs {:.4}, midpoint W1 {w_mid:.4} (3h = {:.4}), {secs:.1} s",
            2.0 * g.h,
            0.1 * norm,
            3.0 * g.h
        ),
    )
}

fn c9_gateaux() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let n = rng.gen_range(3..7);
        let mu = random_measure(&mut rng, n);
        let w1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w1.iter().sum();
        let mu1 = mu.with_weights(w1.iter().map(|x| x / s).collect()).expect("measure");
        let m = rng.gen_range(2..6);
        let nu = random_measure(&mut rng, m);
        let p = if k % 2 == 0 { 2.0 } else { 1.5 };
        let r = match gateaux_check(&mu, &nu, &mu1, p, &[1e-4]) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        worst = worst.max(r.max_err / (1.0 + r.inner.abs()));
    }
    outcome(
        worst <= 1e-3,
        format!("10 instances, max |fd - inner| / (1 + |inner|) = {worst:.2e}"),
    )
}

fn c10_city() -> Outcome {
    let t = Instant::now();
    let g = Grid::square(96, 3.0).expect("grid");
    let mut o = CityOptions::new(1e-6);
    o.atoms_per_side = 12;
    let (sol, rep) = match solve_quadratic_city_with(1.0, &g, &o) {
        Ok(r) => r,
        Err(UrbanError::NoConvergence(s)) => {
            return outcome(false, format!("no convergence after {} iterations", s.iterations))
        }
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    let ratio_err = (rep.moment_ratio - rep.expected_ratio).abs() / rep.expected_ratio;
    outcome(
        rep.profile_l1 <= 0.05 && rep.barycentre_gap <= g.h && ratio_err <= 0.1 && secs <= 120.0,
        format!(
            "L1 {:.4}, barycentre gap {:.2e} (h = {}), moment ratio {:.4} vs {:.4}, {} outer iterations, {secs:.1} s",
            rep.profile_l1, rep.barycentre_gap, g.h, rep.moment_ratio, rep.expected_ratio, sol.iterations
        ),
    )
}

fn c11_hotelling() -> Outcome {
    let line = |n: usize| {
        let xs: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        DiscreteMeasure::on_line(&xs, &vec![1.0 / (n + 1) as f64; n + 1]).expect("consumers")
    };
    let square = |n: usize| {
        let pts: Vec<Vec<f64>> = (0..=n)
            .flat_map(|i| (0..=n).map(move |j| vec![i as f64 / n as f64, j as f64 / n as f64]))
            .collect();
        let m = pts.len();
        DiscreteMeasure::new(pts, vec![1.0 / m as f64; m]).expect("consumers")
    };
    // boundaries sit on consumer points, ties going to the lower-index firm
    let cases: Vec<(&str, Vec<Vec<f64>>, Vec<f64>, DiscreteMeasure, f64)> = vec![
        (
            "0.75 boundary",
            vec![vec![0.0], vec![1.0]],
            vec![0.0, 0.5],
            line(400),
            1.0,
        ),
        (
            "three on a line",
            vec![vec![0.0], vec![0.5], vec![1.0]],
            vec![0.0, 0.25, 0.25],
            line(64),
            1.0,
        ),
        (
            "four on a line",
            vec![vec![0.0], vec![0.25], vec![0.5], vec![1.0]],
            vec![0.0, 0.125, 0.25, 0.375],
            line(128),
            1.0,
        ),
        (
            "plane, two firms",
            vec![vec![0.0, 0.5], vec![1.0, 0.5]],
            vec![0.0, 0.5],
            square(16),
            2.0,
        ),
        (
            "plane, three firms",
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.5, 0.25],
            square(16),
            2.0,
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, firms, prices, consumers, p) in &cases {
        let cost = PowerCost::new(*p);
        let d = hotelling_demands(firms, prices, consumers, cost).expect("demands");
        if d.demands.iter().any(|&x| x <= 0.0) {
            return outcome(false, format!("{name}: a firm has no demand"));
        }
        let back = hotelling_recover_prices(firms, &d.demands, consumers, cost).expect("prices");
        let err = prices
            .iter()
            .zip(&back)
            .map(|(a, b)| ((a - prices[0]) - (b - back[0])).abs())
            .fold(0.0, f64::max);
        lines.push(format!("{name} {err:.1e}"));
        worst = worst.max(err);
    }
    outcome(
        worst <= 1e-6,
        format!(
            "{} instances, max round-trip error {worst:.2e} ({})",
            cases.len(),
            lines.join(", ")
        ),
    )
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn files_of(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("dir")
        .map(|e| {
            let p = e.expect("entry").path();
            let bytes = std::fs::read(&p).expect("file");
            (p, bytes)
        })
        .collect();
    out.sort();
    out
}

fn c12_determinism() -> Outcome {
    let runs: Vec<Vec<String>> = vec![
        vec![
            "wardrop".into(),
            "--net".into(),
            data("braess.net"),
            "--demand".into(),
            data("braess.dem"),
        ],
        vec![
            "wardrop".into(),
            "--net".into(),
            data("two_by_two.net"),
            "--demand".into(),
            data("two_by_two.dem"),
        ],
        vec![
            "ot".into(),
            "--mu".into(),
            data("square.pts"),
            "--nu".into(),
            data("targets.pts"),
            "--metric".into(),
            "lp".into(),
            "2".into(),
        ],
        vec![
            "beckmann".into(),
            "--mu".into(),
            data("mu.csv"),
            "--nu".into(),
            data("nu.csv"),
            "--grid".into(),
            data("grid.txt"),
            "--H".into(),
            "linear".into(),
            "1".into(),
            "--particles".into(),
            "2000".into(),
            "--seed".into(),
            "11".into(),
        ],
        vec!["city".into(), "--config".into(), data("poles.json")],
        vec!["city".into(), "--config".into(), data("city.json")],
        vec![
            "hotelling".into(),
            "--firms".into(),
            data("firms.pts"),
            "--consumers".into(),
            data("line.pts"),
            "--prices".into(),
            "0,0.5".into(),
        ],
        vec!["selftest".into()],
    ];
    let dir = tempfile::tempdir().expect("tempdir");
    for args in &runs {
        let mut snapshots = Vec::new();
        for _ in 0..2 {
            let status = Command::new(env!("CARGO_BIN_EXE_ct"))
                .args(args)
                .arg("--out")
                .arg(dir.path())
                .env("CT_THREADS", "2")
                .status()
                .expect("spawn ct");
            if status.code() != Some(0) {
                return outcome(false, format!("`ct {}` exited with {status}", args[0]));
            }
            let files: Vec<(PathBuf, Vec<u8>)> = files_of(dir.path())
                .into_iter()
                .map(|(p, b)| {
                    if p.file_name().is_some_and(|n| n == "report.json") {
                        (p, strip_timing(&String::from_utf8(b).expect("utf8")).into_bytes())
                    } else {
                        (p, b)
                    }
                })
                .collect();
            snapshots.push(files);
        }
        if snapshots[0] != snapshots[1] {
            return outcome(false, format!("`ct {}` output differs between runs", args[0]));
        }
        std::fs::remove_dir_all(dir.path()).expect("clean");
    }
    outcome(
        true,
        format!("{} commands run twice, outputs identical apart from timing", runs.len()),
    )
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("wardrop suite", c1_wardrop_suite),
        ("brute-force oracle", c2_oracle),
        ("variable demand", c3_variable_demand),
        ("transport duality", c4_duality),
        ("transport density mass", c5_transport_density),
        ("quadratic Beckmann", c6_quadratic_beckmann),
        ("weighted duality", c7_weighted_duality),
        ("trajectories", c8_trajectories),
        ("Gateaux derivative", c9_gateaux),
        ("quadratic city", c10_city),
        ("Hotelling round trip", c11_hotelling),
        ("CLI determinism", c12_determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        // written to the raw handle so the lines survive output capture
        let line = format!(
            "criterion {:>2} {tag} {name}: {} [{:.2} s]\n",
            k + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
        if !o.pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
