//! Services concentrated on finitely many poles with cost `sum g(a_k)`.
//!
//! For each pole count `k <= k_max` the residents step alternates with a
//! best response of the pole positions to the current coupling and a
//! projected gradient step on the pole sizes. The best `k` wins.

use std::collections::VecDeque;

use serde::Serialize;

use super::fixed_point::{run_p_nu, PnuOptions, PnuState};
use super::{
    cell_atom_cost, cell_centres, grid_transport, CitySolution, ConcentrationSpec, PoleCost, SpreadSpec, UrbanError,
};
use crate::beckmann::Grid;
use crate::kantorovich::DiscreteMeasure;
use crate::wardrop::oracle::{golden_min, project_simplex};

/// Poles lighter than this are dropped.
const DEAD_POLE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicOptions {
    /// Stop once an outer iteration lowers the value by less than this.
    pub tol: f64,
    pub k_max: usize,
    /// Try only this pole count.
    pub fixed_k: Option<usize>,
    pub max_outer: usize,
    pub inner_tol: f64,
    /// Threads for the sweep over `k`.
    pub threads: usize,
}

impl AtomicOptions {
    pub fn new(k_max: usize, tol: f64) -> Self {
        Self {
            tol,
            k_max,
            fixed_k: None,
            max_outer: 100,
            inner_tol: tol.max(1e-8),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicReport {
    /// `(k, value)` for every pole count tried; `None` when that run failed.
    pub sweep: Vec<(usize, Option<f64>)>,
    pub best_k: usize,
    /// Whether every pole's catchment is 4-connected on the grid.
    pub catchments_connected: bool,
    /// Pole of largest share for every cell with residents, `None` elsewhere.
    pub catchment: Vec<Option<usize>>,
}

fn initial_poles(k: usize, grid: &Grid) -> DiscreteMeasure {
    let y = 0.5 * grid.height();
    let pts = (0..k)
        .map(|a| vec![(a as f64 + 0.5) * grid.width() / k as f64, y])
        .collect();
    DiscreteMeasure::uniform(pts, 1.0).expect("at least one pole")
}

fn pole_cost(g: &PoleCost, nu: &DiscreteMeasure) -> f64 {
    nu.weights().iter().map(|&a| g.eval(a)).sum()
}

/// Minimizes `sum_i gamma_ij |x_i - y|^p` over `y` in the domain.
fn best_response(pts: &[[f64; 2]], mass: &[f64], p: f64, start: [f64; 2], grid: &Grid) -> [f64; 2] {
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return start;
    }
    if p == 2.0 {
        let mut b = [0.0; 2];
        for (x, m) in pts.iter().zip(mass) {
            b[0] += m * x[0];
            b[1] += m * x[1];
        }
        return [b[0] / total, b[1] / total];
    }
    let f = |y: [f64; 2]| -> f64 {
        pts.iter()
            .zip(mass)
            .map(|(x, m)| m * ((x[0] - y[0]).hypot(x[1] - y[1])).powf(p))
            .sum()
    };
    let mut y = start;
    for _ in 0..20 {
        let before = f(y);
        y[0] = golden_min(|t| f([t, y[1]]), 0.0, grid.width(), 16).0;
        y[1] = golden_min(|t| f([y[0], t]), 0.0, grid.height(), 16).0;
        if before - f(y) <= 1e-14 * (1.0 + before) {
            break;
        }
    }
    y
}

/// `(share, pole)` of the largest plan entry per cell.
fn catchment(state: &PnuState) -> Vec<Option<usize>> {
    state
        .transport
        .plan
        .rows()
        .into_iter()
        .map(|row| {
            let (j, v) = row
                .iter()
                .enumerate()
                .fold((0, 0.0), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
            (v > 0.0).then_some(j)
        })
        .collect()
}

fn connected(owner: &[Option<usize>], grid: &Grid) -> bool {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut seen = vec![false; owner.len()];
    let mut regions = std::collections::BTreeMap::new();
    for start in 0..owner.len() {
        let Some(pole) = owner[start] else { continue };
        if seen[start] {
            continue;
        }
        *regions.entry(pole).or_insert(0) += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            let (i, j) = (c / ny, c % ny);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(c - ny);
            }
            if i + 1 < nx {
                nb.push(c + ny);
            }
            if j > 0 {
                nb.push(c - 1);
            }
            if j + 1 < ny {
                nb.push(c + 1);
            }
            for d in nb {
                if !seen[d] && owner[d] == Some(pole) {
                    seen[d] = true;
                    queue.push_back(d);
                }
            }
        }
    }
    regions.values().all(|&n| n == 1)
}

struct Branch {
    solution: CitySolution,
    catchment: Vec<Option<usize>>,
}

fn run_k(
    k: usize,
    p: f64,
    spread: &SpreadSpec,
    g: &PoleCost,
    grid: &Grid,
    opts: &AtomicOptions,
) -> Result<Branch, UrbanError> {
    let centres = cell_centres(grid);
    let h2 = grid.cell_area();
    let mut nu = initial_poles(k, grid);
    let mut inner = PnuOptions::new(opts.inner_tol);
    let mut best: Option<Branch> = None;
    let mut history = Vec::new();
    let mut outer = 0;
    let mut converged = false;
    while outer < opts.max_outer {
        outer += 1;
        let state = match run_p_nu(&nu, p, spread, grid, &inner) {
            Ok(s) => s,
            Err(UrbanError::NoConvergence(_)) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        let mut sol = state.solution.clone();
        sol.terms.concentration = pole_cost(g, &nu);
        sol.value = sol.terms.total();
        if let Some(prev) = &best {
            if sol.value > prev.solution.value + 1e-10 {
                break;
            }
            if prev.solution.value - sol.value < opts.tol {
                converged = true;
            }
        }
        history.push(sol.value);
        inner.initial = Some(sol.mu.clone());
        inner.hint = Some(state.transport.potentials.psi.clone());
        let owner = catchment(&state);
        best = Some(Branch {
            solution: sol,
            catchment: owner,
        });
        if converged {
            break;
        }

        // pole positions: best response to the current coupling
        let plan = &state.transport.plan;
        let mut coords = Vec::with_capacity(2 * nu.len());
        for j in 0..nu.len() {
            let mass: Vec<f64> = (0..centres.len()).map(|i| plan[[i, j]]).collect();
            let y0 = [nu.point(j)[0], nu.point(j)[1]];
            let y = best_response(&centres, &mass, p, y0, grid);
            coords.extend_from_slice(&y);
        }
        let moved = DiscreteMeasure::from_flat(2, coords, nu.weights().to_vec())?;

        // pole sizes: projected gradient of T + sum g on the simplex
        let mu = &best.as_ref().expect("just stored").solution.mu;
        let sized = |w: &[f64]| -> Result<(f64, Vec<f64>), UrbanError> {
            let m = moved.with_weights(w.to_vec())?;
            let cost = cell_atom_cost(&centres, &m, p);
            let ot = grid_transport(mu, &m, &cost, grid, inner.hint.as_deref())?;
            Ok((ot.value + pole_cost(g, &m), ot.potentials.psi))
        };
        let mut w = moved.weights().to_vec();
        let (mut value, mut psi) = sized(&w)?;
        let mut step = 0.5 * h2.sqrt();
        for _ in 0..20 {
            let grad: Vec<f64> = w.iter().zip(&psi).map(|(a, s)| g.derivative(*a) + s).collect();
            let mut accepted = false;
            for _ in 0..10 {
                let trial: Vec<f64> = w.iter().zip(&grad).map(|(a, d)| a - step * d).collect();
                let mut trial = project_simplex(&trial, 1.0);
                trial.iter_mut().for_each(|a| {
                    if *a < DEAD_POLE {
                        *a = 0.0
                    }
                });
                let s: f64 = trial.iter().sum();
                trial.iter_mut().for_each(|a| *a /= s);
                let (v, ps) = sized(&trial)?;
                if v < value - 1e-14 {
                    w = trial;
                    value = v;
                    psi = ps;
                    accepted = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        nu = moved.with_weights(w)?;
    }
    let mut b = best.expect("first outer iteration succeeded");
    b.solution.iterations = outer;
    b.solution.converged = converged;
    b.solution.history = history;
    Ok(b)
}

/// Sweeps the pole count `k = 1..=k_max` and keeps the cheapest city.
pub fn minimize_with_atomic_g(
    p: f64,
    spread: &SpreadSpec,
    conc: &ConcentrationSpec,
    grid: &Grid,
    opts: &AtomicOptions,
) -> Result<(CitySolution, AtomicReport), UrbanError> {
    conc.validate()?;
    let ConcentrationSpec::Atomic(g) = conc else {
        return Err(UrbanError::InvalidSpec(
            "pole optimization needs an atomic concentration cost".into(),
        ));
    };
    let ks: Vec<usize> = match opts.fixed_k {
        Some(k) => vec![k],
        None => (1..=opts.k_max).collect(),
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(UrbanError::InvalidSpec("need at least one pole".into()));
    }
    let threads = opts.threads.max(1).min(ks.len());
    let mut results: Vec<Option<Result<Branch, UrbanError>>> = (0..ks.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, &k) in results.iter_mut().zip(&ks) {
            *slot = Some(run_k(k, p, spread, g, grid, opts));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let ks = &ks;
                    s.spawn(move || {
                        (t..ks.len())
                            .step_by(threads)
                            .map(|n| (n, run_k(ks[n], p, spread, g, grid, opts)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (n, r) in h.join().expect("pole sweep thread panicked") {
                    results[n] = Some(r);
                }
            }
        });
    }

    let mut sweep = Vec::with_capacity(ks.len());
    let mut best: Option<(usize, Branch)> = None;
    let mut first_err = None;
    for (r, &k) in results.into_iter().zip(&ks) {
        match r.expect("every branch ran") {
            Ok(b) => {
                sweep.push((k, Some(b.solution.value)));
                if best.as_ref().map_or(true, |(_, c)| b.solution.value < c.solution.value) {
                    best = Some((k, b));
                }
            }
            Err(e) => {
                sweep.push((k, None));
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((best_k, b)) = best else {
        return Err(first_err.expect("some branch failed"));
    };
    let report = AtomicReport {
        sweep,
        best_k,
        catchments_connected: connected(&b.catchment, grid),
        catchment: b.catchment,
    };
    if !b.solution.converged {
        return Err(UrbanError::NoConvergence(Box::new(b.solution)));
    }
    Ok((b.solution, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::urbanplan::{atom_barycentre, barycentre, CityNu};

    fn sqrt_g() -> ConcentrationSpec {
        ConcentrationSpec::Atomic(PoleCost::Power { exponent: 0.5, c: 1.0 })
    }

    #[test]
    fn connectivity_by_flood_fill() {
        let g = Grid::new(3, 2, 1.0).unwrap();
        // cells ordered (i, j) with j fastest
        let split = vec![Some(0), Some(0), Some(1), Some(1), None, Some(1)];
        assert!(connected(&split, &g));
        let broken = vec![Some(0), Some(1), Some(1), Some(1), Some(0), Some(1)];
        assert!(!connected(&broken, &g));
    }

    #[test]
    fn best_response_for_p_one_is_the_median() {
        let g = Grid::square(4, 1.0).unwrap();
        let pts = [[0.1, 0.5], [0.2, 0.5], [0.9, 0.5]];
        let y = best_response(&pts, &[1.0, 1.0, 1.0], 1.0, [0.5, 0.2], &g);
        assert!((y[0] - 0.2).abs() < 1e-6 && (y[1] - 0.5).abs() < 1e-6, "{y:?}");
    }

    #[test]
    fn one_pole_sits_at_the_barycentre() {
        let g = Grid::square(16, 1.0).unwrap();
        let mut o = AtomicOptions::new(1, 1e-9);
        o.fixed_k = Some(1);
        let (sol, rep) = minimize_with_atomic_g(2.0, &SpreadSpec::Quadratic, &sqrt_g(), &g, &o).unwrap();
        assert_eq!(rep.best_k, 1);
        let CityNu::Atoms(nu) = &sol.nu else {
            panic!("atoms expected")
        };
        let (a, b) = (atom_barycentre(nu), barycentre(&sol.mu, &g));
        assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-6, "{a:?} {b:?}");
        assert!(rep.catchments_connected);
    }

    #[test]
    fn superadditive_cost_rejected() {
        let g = Grid::square(8, 1.0).unwrap();
        let bad = ConcentrationSpec::Atomic(PoleCost::Power { exponent: 2.0, c: 1.0 });
        let r = minimize_with_atomic_g(2.0, &SpreadSpec::Quadratic, &bad, &g, &AtomicOptions::new(2, 1e-6));
        assert!(matches!(r, Err(UrbanError::InvalidSpec(_))));
    }
}
