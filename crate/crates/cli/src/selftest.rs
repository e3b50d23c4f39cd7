//! Embedded oracle checks with closed-form or brute-force answers.

use anyhow::{bail, Result};
use ndarray::array;
use serde::Serialize;
use serde_json::json;

use congested_transport::beckmann::{rasterize_transport_density, solve_dual_quadratic, Grid, ScalarField};
use congested_transport::kantorovich::{
    hotelling_demands, hotelling_recover_prices, solve_transport, wasserstein_distance, DiscreteMeasure, PowerCost,
};
use congested_transport::urbanplan::{solve_p_nu, SpreadSpec};
use congested_transport::wardrop::suite::fixed_demand_suite;
use congested_transport::wardrop::{solve_fixed_demand, SolverOptions};

use crate::{Outcome, Produced};

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    expected: f64,
    tolerance: f64,
    pass: bool,
}

fn check(name: &'static str, value: f64, expected: f64, tolerance: f64) -> Check {
    Check {
        name,
        value,
        expected,
        tolerance,
        pass: (value - expected).abs() <= tolerance,
    }
}

/// Pigou at unit demand: everything takes the congestible link and `J = 1/2`.
fn pigou() -> Result<Check> {
    let inst = fixed_demand_suite()
        .into_iter()
        .find(|s| s.name == "pigou")
        .expect("pigou instance");
    let res = solve_fixed_demand(&inst.net, &inst.costs, &inst.demand, &SolverOptions::new(1e-10, 20_000))?;
    Ok(check("pigou_value", res.objective, 0.5, 1e-6))
}

fn two_atoms() -> Result<Check> {
    let a = DiscreteMeasure::new(vec![vec![0.0, 0.0]], vec![1.0])?;
    let b = DiscreteMeasure::new(vec![vec![1.0, 0.0]], vec![1.0])?;
    Ok(check("two_atom_w1", wasserstein_distance(&a, &b, 1.0)?, 1.0, 1e-12))
}

/// Uniform weights on `n` points: the optimum is the cheapest permutation.
fn permutation() -> Result<Check> {
    let c = array![
        [4.0, 1.0, 3.0, 2.5],
        [2.0, 0.0, 5.0, 1.0],
        [3.0, 2.0, 2.0, 0.5],
        [1.5, 3.0, 0.5, 4.0]
    ];
    let n = 4;
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / n as f64;
        best = best.min(v);
    });
    let w = vec![1.0 / n as f64; n];
    Ok(check(
        "permutation_oracle",
        solve_transport(&w, &w, &c)?.value,
        best,
        1e-10,
    ))
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// On a one-cell-high strip the flux is the running sum of `mu - nu`.
fn strip() -> Result<Check> {
    let n = 32;
    let g = Grid::new(n, 1, 1.0 / n as f64)?;
    let mu = ScalarField::from_fn(&g, |x, _| 1.0 + x).normalized(&g, 1.0);
    let nu = ScalarField::from_fn(&g, |x, _| 2.0 - x * x).normalized(&g, 1.0);
    let q = solve_dual_quadratic(&mu, &nu, &g)?;
    let mut run = 0.0;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        run += g.h * (mu.values[[i, 0]] - nu.values[[i, 0]]);
        worst = worst.max((q.v.vx[[i + 1, 0]] - run).abs());
    }
    Ok(check("strip_cumulative_flux", worst, 0.0, 1e-8))
}

fn hotelling() -> Result<Check> {
    // 401 grid consumers, one of them sitting on the boundary at 3/4
    let n = 400;
    let consumers = DiscreteMeasure::new(
        (0..=n).map(|k| vec![k as f64 / n as f64]).collect(),
        vec![1.0 / 401.0; 401],
    )?;
    let firms = vec![vec![0.0], vec![1.0]];
    let cost = PowerCost::new(1.0);
    let demand = hotelling_demands(&firms, &[0.0, 0.5], &consumers, cost)?;
    let prices = hotelling_recover_prices(&firms, &demand.demands, &consumers, cost)?;
    // a price gap of 1/2 moves the boundary to 3/4
    let share = check("hotelling_share", demand.demands[0], 301.0 / 401.0, 1e-12);
    if !share.pass {
        return Ok(share);
    }
    Ok(check("hotelling_round_trip", prices[1] - prices[0], 0.5, 1e-6))
}

/// Mass of the transport density equals the coupling cost.
fn sigma_mass() -> Result<Check> {
    let g = Grid::square(16, 1.0)?;
    let src = [[0.1, 0.2], [0.8, 0.3]];
    let dst = [[0.6, 0.9], [0.2, 0.7], [0.5, 0.5]];
    let plan = array![[0.2, 0.1, 0.15], [0.05, 0.3, 0.2]];
    let sigma = rasterize_transport_density(&plan, &src, &dst, &g)?;
    let cost: f64 = plan
        .indexed_iter()
        .map(|((a, b), w)| w * (src[a][0] - dst[b][0]).hypot(src[a][1] - dst[b][1]))
        .sum();
    Ok(check(
        "transport_density_mass",
        sigma.mass(&g),
        cost,
        1e-10 * (1.0 + cost),
    ))
}

/// One service at the centre: residents form `(C - |x - c|^2)_+ / 2` with
/// `C = 2 / sqrt(pi)`.
fn paraboloid() -> Result<Check> {
    let n = 48;
    let g = Grid::new(n, n, 3.0 / n as f64)?;
    let nu = DiscreteMeasure::new(vec![vec![1.5, 1.5]], vec![1.0])?;
    let sol = solve_p_nu(&nu, 2.0, &SpreadSpec::Quadratic, &g, 1e-10)?;
    let c = 2.0 / std::f64::consts::PI.sqrt();
    let exact = ScalarField::from_fn(&g, |x, y| (c - (x - 1.5).powi(2) - (y - 1.5).powi(2)).max(0.0) / 2.0);
    Ok(check("paraboloid_l1", sol.mu.l1_distance(&exact, &g), 0.0, 1e-3))
}

pub(crate) fn run() -> Result<Produced> {
    let checks = vec![
        pigou()?,
        two_atoms()?,
        permutation()?,
        strip()?,
        hotelling()?,
        sigma_mass()?,
        paraboloid()?,
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if !failed.is_empty() {
        for c in &checks {
            eprintln!(
                "{} {}: {} vs {}",
                if c.pass { "ok  " } else { "FAIL" },
                c.name,
                c.value,
                c.expected
            );
        }
        bail!("self test failed: {}", failed.join(", "));
    }
    Ok(Produced {
        outcome: Outcome::Converged,
        results: json!({ "checks": checks }),
        files: Vec::new(),
    })
}
