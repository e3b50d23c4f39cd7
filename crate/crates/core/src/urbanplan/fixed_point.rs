//! Residents against fixed services: `min_mu W_p^p(mu, nu) + F(mu)`.
//!
//! Minimizers satisfy `mu = (f')^{-1}((C - psi)_+)` with `psi` a Kantorovich
//! potential of `(mu, nu)` and `C` fixed by the unit mass.
//!
//! Two solvers are provided. [`PnuMethod::Picard`] alternates a transport
//! solve with a damped step towards the right-hand side. On a grid the
//! simplex potential is piecewise constant in `mu` and the optimum sits on a
//! jump, so this iteration can cycle. [`PnuMethod::Dual`] instead maximizes
//! the concave dual over the atom potentials `psi_j`,
//! `D(psi) = sum_j psi_j w_j - h^2 sum_x f*(max_j (psi_j - c(x, y_j)))`,
//! by Newton steps on a log-sum-exp smoothing whose temperature is driven to
//! zero. Residents are then read off the characterization and the potential
//! is certified by the duality gap against the simplex.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    cell_atom_cost, cell_centres, check_atoms, grid_transport, CityNu, CitySolution, SpreadSpec, UrbanError, ValueTerms,
};
use crate::beckmann::{Grid, ScalarField};
use crate::kantorovich::{DiscreteMeasure, OtSolution};

/// Weight of the new density in the damped update.
pub const DAMPING: f64 = 0.3;

/// The multiplier bracket may not grow past this width.
const BRACKET_LIMIT: f64 = 1e6;

/// Newton steps per temperature.
const STAGE_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnuMethod {
    Dual,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnuOptions {
    /// Picard: bound on `|| mu_new - mu ||_1`. Dual: bound on the relative
    /// duality gap.
    pub tol: f64,
    pub max_iter: usize,
    pub method: PnuMethod,
    pub damping: f64,
    /// Starting density of the Picard iteration; uniform when absent.
    pub initial: Option<ScalarField>,
    /// Atom potentials of a nearby problem.
    pub hint: Option<Vec<f64>>,
}

impl PnuOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_iter: 2000,
            method: PnuMethod::Dual,
            damping: DAMPING,
            initial: None,
            hint: None,
        }
    }
}

/// State of the last transport solve, reused by the outer loops.
pub(crate) struct PnuState {
    pub solution: CitySolution,
    pub transport: OtSolution,
}

/// `(C, u)` with `u = (f')^{-1}((C - psi)_+)` and `h^2 sum u = 1`.
pub(crate) fn normalize(psi: &[f64], spread: &SpreadSpec, h2: f64) -> Result<(f64, Vec<f64>), UrbanError> {
    let mass = |c: f64| h2 * psi.iter().map(|&p| spread.inverse_derivative(c - p)).sum::<f64>();
    let lo0 = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let mut width = 1.0;
    while mass(lo0 + width) < 1.0 {
        width *= 2.0;
        if width > BRACKET_LIMIT {
            return Err(UrbanError::BisectionFailure { bound: lo0 + width });
        }
    }
    let (mut lo, mut hi) = (lo0, lo0 + width);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = hi;
    let mut u: Vec<f64> = psi.iter().map(|&p| spread.inverse_derivative(c - p)).collect();
    let m = h2 * u.iter().sum::<f64>();
    u.iter_mut().for_each(|x| *x /= m);
    Ok((c, u))
}

/// Source potential at every cell: `min_j (c(x, y_j) - psi_j)`.
pub(crate) fn c_transform(cost: &Array2<f64>, psi: &[f64]) -> Vec<f64> {
    cost.rows()
        .into_iter()
        .map(|row| row.iter().zip(psi).map(|(c, p)| c - p).fold(f64::INFINITY, f64::min))
        .collect()
}

struct Smoothed {
    value: f64,
    grad: Vec<f64>,
    /// Negated Hessian, row-major `k x k`.
    neg_hess: Vec<f64>,
}

/// Smoothed dual `D_tau`, its gradient and optionally its Hessian.
fn smoothed_dual(
    cost: &Array2<f64>,
    w: &[f64],
    psi: &[f64],
    spread: &SpreadSpec,
    h2: f64,
    tau: f64,
    hessian: bool,
) -> Smoothed {
    let k = w.len();
    let mut value: f64 = psi.iter().zip(w).map(|(p, q)| p * q).sum();
    let mut grad = w.to_vec();
    let mut neg_hess = if hessian { vec![0.0; k * k] } else { Vec::new() };
    let mut terms: Vec<(usize, f64)> = Vec::with_capacity(k);
    let ln_k = (k as f64).ln();
    for row in cost.rows() {
        let top = row
            .iter()
            .zip(psi)
            .map(|(c, p)| p - c)
            .fold(f64::NEG_INFINITY, f64::max);
        if top + tau * ln_k <= 0.0 {
            continue;
        }
        terms.clear();
        let mut z = 0.0;
        for (j, (c, p)) in row.iter().zip(psi).enumerate() {
            let e = (p - c - top) / tau;
            if e > -40.0 {
                let x = e.exp();
                z += x;
                terms.push((j, x));
            }
        }
        let s = top + tau * z.ln();
        if s <= 0.0 {
            continue;
        }
        let (f1, f2) = (spread.inverse_derivative(s), spread.conjugate_curvature(s));
        value -= h2 * spread.conjugate(s);
        for t in terms.iter_mut() {
            t.1 /= z;
            grad[t.0] -= h2 * f1 * t.1;
        }
        if hessian {
            let a = h2 * (f2 - f1 / tau);
            for &(j, pj) in &terms {
                neg_hess[j * k + j] += h2 * f1 * pj / tau;
                for &(l, pl) in &terms {
                    neg_hess[j * k + l] += a * pj * pl;
                }
            }
        }
    }
    Smoothed { value, grad, neg_hess }
}

/// Solves `(A + eps I) x = b` for symmetric positive semidefinite `A`.
fn solve_spd(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let diag_max = (0..k).map(|i| a[i * k + i]).fold(0.0f64, f64::max);
    let eps = 1e-10 * diag_max.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j] + if i == j { eps } else { 0.0 };
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                l[i * k + i] = s.max(eps).sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s -= l[i * k + m] * y[m];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for m in i + 1..k {
            s -= l[m * k + i] * x[m];
        }
        x[i] = s / l[i * k + i];
    }
    x
}

/// Shifts all atom potentials so that the smoothed residents have unit mass.
fn fix_mass(cost: &Array2<f64>, w: &[f64], psi: &mut [f64], spread: &SpreadSpec, h2: f64, tau: f64) {
    let missing = |psi: &[f64]| {
        smoothed_dual(cost, w, psi, spread, h2, tau, false)
            .grad
            .iter()
            .sum::<f64>()
    };
    let shifted = |psi: &[f64], a: f64| psi.iter().map(|p| p + a).collect::<Vec<f64>>();
    let mut hi = 1.0;
    while missing(&shifted(psi, hi)) > 0.0 && hi < BRACKET_LIMIT {
        hi *= 2.0;
    }
    let mut lo = -1.0;
    while missing(&shifted(psi, lo)) < 0.0 && lo > -BRACKET_LIMIT {
        lo *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if missing(&shifted(psi, mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    psi.iter_mut().for_each(|p| *p += hi);
}

/// Maximizes the dual over the atom potentials. After every temperature
/// stage `certified` is asked whether the exact problem is solved. Returns
/// the potentials and the Newton steps taken.
#[allow(clippy::too_many_arguments)]
fn maximize_dual(
    cost: &Array2<f64>,
    w: &[f64],
    spread: &SpreadSpec,
    grid: &Grid,
    hint: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    mut certified: impl FnMut(&[f64], usize) -> Result<bool, UrbanError>,
) -> Result<(Vec<f64>, usize), UrbanError> {
    let k = w.len();
    let h2 = grid.cell_area();
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(*c)).max(f64::MIN_POSITIVE);
    let area = grid.width() * grid.height();
    let tau_min = 0.05 * tol / (area * (1.0 + (k as f64).ln()));
    let mut psi = match hint {
        Some(h) if h.len() == k => h.to_vec(),
        _ => vec![0.0; k],
    };
    // a warm start only needs the cold end of the schedule
    let mut tau = if hint.is_some() {
        (1e-4 * scale).max(tau_min)
    } else {
        1e-2 * scale
    };
    fix_mass(cost, w, &mut psi, spread, h2, tau);
    let mut steps = 0;
    loop {
        let last = tau <= tau_min;
        let stage_tol = if last {
            0.1 * tol
        } else {
            (1e-3 * tau / scale).max(0.1 * tol)
        };
        for _ in 0..STAGE_STEPS {
            if steps >= max_iter {
                return Ok((psi, steps));
            }
            let cur = smoothed_dual(cost, w, &psi, spread, h2, tau, true);
            let imbalance: f64 = cur.grad.iter().map(|g| g.abs()).sum();
            if imbalance <= stage_tol {
                break;
            }
            steps += 1;
            let mut dir = solve_spd(&cur.neg_hess, &cur.grad, k);
            let big = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            if big > scale {
                dir.iter_mut().for_each(|d| *d *= scale / big);
            }
            let slope: f64 = dir.iter().zip(&cur.grad).map(|(d, g)| d * g).sum();
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..50 {
                let trial: Vec<f64> = psi.iter().zip(&dir).map(|(p, d)| p + t * d).collect();
                let v = smoothed_dual(cost, w, &trial, spread, h2, tau, false).value;
                if v >= cur.value + 1e-4 * t * slope {
                    psi = trial;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if last || certified(&psi, steps)? {
            break;
        }
        tau = (tau * 0.1).max(tau_min);
    }
    Ok((psi, steps))
}

/// Builds the solution from residents, their cell potential and multiplier,
/// and a transport solve whose atom potentials pair with `cell_potential`.
#[allow(clippy::too_many_arguments)]
fn finish(
    mu: ScalarField,
    cell_potential: &[f64],
    multiplier: f64,
    ot: OtSolution,
    atom_potential: &[f64],
    nu: &DiscreteMeasure,
    spread: &SpreadSpec,
    grid: &Grid,
    iterations: usize,
) -> PnuState {
    let h2 = grid.cell_area();
    let shift = cell_potential.iter().copied().fold(f64::INFINITY, f64::min);
    let potential: Vec<f64> = cell_potential.iter().map(|p| p - shift).collect();
    let c = multiplier - shift;
    let residual = h2
        * mu.values
            .iter()
            .zip(&potential)
            .map(|(m, p)| (m - spread.inverse_derivative(c - p)).abs())
            .sum::<f64>();
    let dual = h2 * mu.values.iter().zip(cell_potential).map(|(m, p)| m * p).sum::<f64>()
        + nu.weights().iter().zip(atom_potential).map(|(a, p)| a * p).sum::<f64>();
    let terms = ValueTerms {
        transport: ot.value,
        spread: h2 * mu.values.iter().map(|&t| spread.f(t)).sum::<f64>(),
        concentration: 0.0,
    };
    PnuState {
        solution: CitySolution {
            mu,
            nu: CityNu::Atoms(nu.clone()),
            value: terms.total(),
            terms,
            potential: ScalarField {
                values: Array2::from_shape_vec((grid.nx, grid.ny), potential).expect("one potential per cell"),
            },
            multiplier: c,
            residual,
            dual_gap: ot.value - dual,
            iterations,
            converged: false,
            history: Vec::new(),
        },
        transport: ot,
    }
}

/// Residents read off the atom potentials, with the exact transport as
/// certificate.
#[allow(clippy::too_many_arguments)]
fn certify(
    psi: &[f64],
    steps: usize,
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
    spread: &SpreadSpec,
    grid: &Grid,
    tol: f64,
) -> Result<PnuState, UrbanError> {
    let cell = c_transform(cost, psi);
    let (c, u) = normalize(&cell, spread, grid.cell_area())?;
    let mu = ScalarField {
        values: Array2::from_shape_vec((grid.nx, grid.ny), u).expect("one density per cell"),
    };
    let ot = grid_transport(&mu, nu, cost, grid, Some(psi))?;
    let mut state = finish(mu, &cell, c, ot, psi, nu, spread, grid, steps);
    let sol = &mut state.solution;
    // the smoothed imbalance stalls when cells tie between atoms; the gap
    // against the exact transport certifies the potentials instead
    sol.converged = sol.dual_gap <= tol * (1.0 + sol.terms.transport.abs());
    Ok(state)
}

fn run_dual(
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
    spread: &SpreadSpec,
    grid: &Grid,
    opts: &PnuOptions,
) -> Result<PnuState, UrbanError> {
    let mut last: Option<PnuState> = None;
    let (psi, steps) = maximize_dual(
        cost,
        nu.weights(),
        spread,
        grid,
        opts.hint.as_deref(),
        opts.tol,
        opts.max_iter,
        |psi, steps| {
            let state = certify(psi, steps, nu, cost, spread, grid, opts.tol)?;
            let done = state.solution.converged;
            last = Some(state);
            Ok(done)
        },
    )?;
    let state = match last {
        Some(s) if s.solution.converged => s,
        _ => certify(&psi, steps, nu, cost, spread, grid, opts.tol)?,
    };
    if state.solution.converged {
        Ok(state)
    } else {
        Err(UrbanError::NoConvergence(Box::new(state.solution)))
    }
}

fn run_picard(
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
    spread: &SpreadSpec,
    grid: &Grid,
    opts: &PnuOptions,
) -> Result<PnuState, UrbanError> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(UrbanError::InvalidSpec(format!(
            "damping {} outside (0, 1]",
            opts.damping
        )));
    }
    let h2 = grid.cell_area();
    let mut mu = match &opts.initial {
        Some(m) => {
            super::check_probability(m, grid, "initial mu")?;
            m.clone()
        }
        None => ScalarField::from_fn(grid, |_, _| 1.0).normalized(grid, 1.0),
    };
    let mut hint = opts.hint.clone();
    let mut best: Option<CitySolution> = None;
    let theta = opts.damping;
    for it in 1..=opts.max_iter.max(1) {
        let ot = grid_transport(&mu, nu, cost, grid, hint.as_deref())?;
        let psi = ot.potentials.psi.clone();
        let cell = c_transform(cost, &psi);
        let (c, u) = normalize(&cell, spread, h2)?;
        let mut state = finish(mu.clone(), &cell, c, ot, &psi, nu, spread, grid, it);
        hint = Some(psi);
        if theta * state.solution.residual <= opts.tol {
            state.solution.converged = true;
            return Ok(state);
        }
        for (m, &t) in mu.values.iter_mut().zip(&u) {
            *m = (1.0 - theta) * *m + theta * t;
        }
        if best.as_ref().map_or(true, |b| state.solution.residual < b.residual) {
            best = Some(state.solution);
        }
    }
    let mut sol = best.expect("at least one iteration");
    sol.iterations = opts.max_iter;
    Err(UrbanError::NoConvergence(Box::new(sol)))
}

pub(crate) fn run_p_nu(
    nu: &DiscreteMeasure,
    p: f64,
    spread: &SpreadSpec,
    grid: &Grid,
    opts: &PnuOptions,
) -> Result<PnuState, UrbanError> {
    if !(p >= 1.0) {
        return Err(UrbanError::InvalidSpec(format!("p = {p} must be at least 1")));
    }
    if !(opts.tol > 0.0) {
        return Err(UrbanError::InvalidSpec(format!(
            "tolerance {} must be positive",
            opts.tol
        )));
    }
    spread.validate()?;
    check_atoms(nu)?;
    let cost = cell_atom_cost(&cell_centres(grid), nu, p);
    match opts.method {
        PnuMethod::Dual => run_dual(nu, &cost, spread, grid, opts),
        PnuMethod::Picard => run_picard(nu, &cost, spread, grid, opts),
    }
}

/// Optimal residents for fixed atomic services `nu` (a probability).
pub fn solve_p_nu(
    nu: &DiscreteMeasure,
    p: f64,
    spread: &SpreadSpec,
    grid: &Grid,
    tol: f64,
) -> Result<CitySolution, UrbanError> {
    solve_p_nu_with(nu, p, spread, grid, &PnuOptions::new(tol))
}

pub fn solve_p_nu_with(
    nu: &DiscreteMeasure,
    p: f64,
    spread: &SpreadSpec,
    grid: &Grid,
    opts: &PnuOptions,
) -> Result<CitySolution, UrbanError> {
    run_p_nu(nu, p, spread, grid, opts).map(|s| s.solution)
}
