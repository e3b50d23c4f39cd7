//! Augmented-Lagrangian (ADMM) solver for the discrete minimal-flow problem
//! and the Poisson solution of its quadratic case.
//!
//! The flow magnitude of cell `c` is
//! `|v|_c = sqrt((vx_L^2 + vx_R^2) / 2 + (vy_B^2 + vy_T^2) / 2)` over its four
//! faces, and the cost is `h^2 sum_c H_c(|v|_c)`. Writing `A v` for the
//! per-cell vectors `(vx_L, vx_R, vy_B, vy_T) / sqrt(2)` gives `|v|_c = |(A v)_c|`
//! and `A^T A = I` on interior faces, because every interior face is shared by
//! two cells. For `H(t) = t^2 / 2` the cost is therefore `h^2 sum_faces v^2 / 2`,
//! whose minimizer is the gradient of the Neumann Poisson solution.
//!
//! ADMM splits `w = A v`: the `v` step projects `A^T(w - z)` onto
//! `{div v = mu - nu}` with one Poisson solve, the `w` step is the radial
//! proximal map of `H` per cell.

use ndarray::Array2;

use super::poisson::NeumannPoisson;
use super::{check_marginals, divergence, gradient, BeckmannError, Grid, ScalarField, VectorField};
use crate::wardrop::Congestion;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeckmannOptions {
    /// Bound on the consensus residual `|A v - w|`, on the change of `v`
    /// between iterations and on the duality gap relative to `1 + cost`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty, relative to the cell area.
    pub rho: f64,
    /// Rebalance the penalty from the primal and dual residuals.
    pub adaptive: bool,
}

impl BeckmannOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_iter: 20_000,
            rho: 1.0,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeckmannSolution {
    pub v: VectorField,
    /// `h^2 sum_c H_c(|v|_c)`.
    pub cost: f64,
    /// Value of the dual certificate, a lower bound on the optimal cost.
    pub dual_value: f64,
    /// Potential of the certificate.
    pub multiplier: ScalarField,
    /// `max |div v - (mu - nu)|`.
    pub div_residual: f64,
    /// Largest of the consensus residual and the last change of `v`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BeckmannSolution {
    pub fn gap(&self) -> f64 {
        self.cost - self.dual_value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSolution {
    /// Zero-mean potential with `Lap_h u = mu - nu`.
    pub u: ScalarField,
    /// `grad u` on faces.
    pub v: VectorField,
    /// `h^2 sum_faces v^2 / 2`.
    pub cost: f64,
}

/// Per-cell magnitudes `|v|_c`.
pub fn cell_magnitude(v: &VectorField, grid: &Grid) -> ScalarField {
    ScalarField {
        values: Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
            let s = v.vx[[i, j]].powi(2) + v.vx[[i + 1, j]].powi(2) + v.vy[[i, j]].powi(2) + v.vy[[i, j + 1]].powi(2);
            (0.5 * s).sqrt()
        }),
    }
}

/// `h^2 sum_c H_c(|v|_c)`; `costs` holds one entry per cell or a single
/// entry for all cells.
pub fn flow_cost<C: Congestion>(v: &VectorField, costs: &[C], grid: &Grid) -> f64 {
    let m = cell_magnitude(v, grid);
    let h2 = grid.cell_area();
    m.values
        .iter()
        .enumerate()
        .map(|(c, &t)| h2 * pick(costs, c).cost(t))
        .sum()
}

fn pick<C>(costs: &[C], c: usize) -> &C {
    if costs.len() == 1 {
        &costs[0]
    } else {
        &costs[c]
    }
}

/// Per-cell vectors `A v`, flattened as `[4 * (i * ny + j) + k]`.
fn apply_a(v: &VectorField, grid: &Grid, out: &mut [f64]) {
    let ny = grid.ny;
    for i in 0..grid.nx {
        for j in 0..ny {
            let c = 4 * (i * ny + j);
            out[c] = v.vx[[i, j]] * INV_SQRT2;
            out[c + 1] = v.vx[[i + 1, j]] * INV_SQRT2;
            out[c + 2] = v.vy[[i, j]] * INV_SQRT2;
            out[c + 3] = v.vy[[i, j + 1]] * INV_SQRT2;
        }
    }
}

/// `A^T w` restricted to interior faces.
fn apply_at(w: &[f64], grid: &Grid) -> VectorField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut v = VectorField::zeros(grid);
    for i in 1..nx {
        for j in 0..ny {
            v.vx[[i, j]] = (w[4 * ((i - 1) * ny + j) + 1] + w[4 * (i * ny + j)]) * INV_SQRT2;
        }
    }
    for i in 0..nx {
        for j in 1..ny {
            v.vy[[i, j]] = (w[4 * (i * ny + j - 1) + 3] + w[4 * (i * ny + j) + 2]) * INV_SQRT2;
        }
    }
    v
}

struct Projector<'a> {
    grid: &'a Grid,
    poisson: NeumannPoisson,
    f: Array2<f64>,
}

impl Projector<'_> {
    /// Nearest field to `p` (interior faces) with `div v = f`.
    fn project(&self, p: &VectorField) -> Result<VectorField, BeckmannError> {
        let r = divergence(p, self.grid)?.values - &self.f;
        let phi = self.poisson.solve(&r.mapv(|x| -x))?;
        let g = gradient(&ScalarField { values: phi }, self.grid);
        Ok(VectorField {
            vx: &p.vx + &g.vx,
            vy: &p.vy + &g.vy,
        })
    }
}

fn max_diff(a: &VectorField, b: &VectorField) -> f64 {
    a.vx.iter()
        .zip(&b.vx)
        .chain(a.vy.iter().zip(&b.vy))
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Dual certificate from the scaled multiplier `z` of the constraint
/// `w = A v`: the multiplier `y = rho h^2 z` is corrected so that `A^T y` is
/// a discrete gradient field, then scaled into the domain of `H*`.
fn certificate<C: Congestion>(
    proj: &Projector,
    costs: &[C],
    z: &[f64],
    rho: f64,
) -> Result<(f64, ScalarField), BeckmannError> {
    let grid = proj.grid;
    let h2 = grid.cell_area();
    let y: Vec<f64> = z.iter().map(|v| v * rho * h2).collect();
    let q = apply_at(&y, grid);
    // least-squares potential: D D^T lambda = D q, and D D^T = -Lap_h
    let dq = divergence(&q, grid)?.values;
    let lambda = proj.poisson.solve(&dq.mapv(|x| -x))?;
    let lambda = ScalarField { values: lambda };
    let g = gradient(&lambda, grid);
    // A^T y' = D^T lambda = -grad lambda
    let corr = VectorField {
        vx: &q.vx + &g.vx,
        vy: &q.vy + &g.vy,
    };
    let mut ac = vec![0.0; y.len()];
    apply_a(&corr, grid, &mut ac);
    let yp: Vec<f64> = y.iter().zip(&ac).map(|(a, b)| a - b).collect();
    let linear: f64 = lambda.values.iter().zip(&proj.f).map(|(a, b)| a * b).sum();
    let conj = |t: f64| -> f64 {
        yp.chunks(4)
            .enumerate()
            .map(|(c, yc)| {
                let s = t * (yc[0] * yc[0] + yc[1] * yc[1] + yc[2] * yc[2] + yc[3] * yc[3]).sqrt() / h2;
                h2 * pick(costs, c).conjugate(s)
            })
            .sum()
    };
    let mut t = 1.0;
    let mut penalty = conj(1.0);
    if !penalty.is_finite() {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if conj(mid).is_finite() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        t = lo;
        penalty = conj(t);
    }
    Ok((t * linear - penalty, lambda))
}

/// Minimizes `h^2 sum_c H(|v|_c)` subject to `div v = mu - nu` and zero
/// boundary flux.
pub fn solve_beckmann<C: Congestion>(
    mu: &ScalarField,
    nu: &ScalarField,
    spec: &C,
    grid: &Grid,
    tol: f64,
) -> Result<BeckmannSolution, BeckmannError> {
    solve_beckmann_with(mu, nu, std::slice::from_ref(spec), grid, &BeckmannOptions::new(tol))
}

/// As [`solve_beckmann`] with one cost per cell (or a single shared cost)
/// and explicit options.
pub fn solve_beckmann_with<C: Congestion>(
    mu: &ScalarField,
    nu: &ScalarField,
    costs: &[C],
    grid: &Grid,
    opts: &BeckmannOptions,
) -> Result<BeckmannSolution, BeckmannError> {
    check_marginals(mu, nu, grid)?;
    if costs.len() != 1 && costs.len() != grid.n_cells() {
        return Err(BeckmannError::ShapeMismatch {
            what: "costs",
            got: (costs.len(), 1),
            expected: (grid.n_cells(), 1),
        });
    }
    if !(opts.tol > 0.0) || !(opts.rho > 0.0) {
        return Err(BeckmannError::InvalidField("options"));
    }
    let f = &mu.values - &nu.values;
    let proj = Projector {
        grid,
        poisson: NeumannPoisson::new(grid),
        f,
    };
    let n4 = 4 * grid.n_cells();
    let mut rho = opts.rho;
    let mut w = vec![0.0; n4];
    let mut z = vec![0.0; n4];
    let mut av = vec![0.0; n4];
    let mut v = proj.project(&VectorField::zeros(grid))?;
    for it in 1..=opts.max_iter {
        let target: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a - b).collect();
        let v_new = proj.project(&apply_at(&target, grid))?;
        let change = max_diff(&v_new, &v);
        v = v_new;
        apply_a(&v, grid, &mut av);

        let w_old = w.clone();
        for c in 0..grid.n_cells() {
            let k = 4 * c;
            let mut y = [0.0; 4];
            for d in 0..4 {
                y[d] = av[k + d] + z[k + d];
            }
            let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2] + y[3] * y[3]).sqrt();
            let scale = if r > 0.0 {
                pick(costs, c).prox(r, 1.0 / rho) / r
            } else {
                0.0
            };
            for d in 0..4 {
                w[k + d] = scale * y[d];
            }
        }
        let mut primal = 0.0_f64;
        for k in 0..n4 {
            let r = av[k] - w[k];
            z[k] += r;
            primal = primal.max(r.abs());
        }
        let dual = rho * w.iter().zip(&w_old).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let residual = primal.max(change);

        if residual <= opts.tol || it == opts.max_iter || it % 25 == 0 {
            let cost = flow_cost(&v, costs, grid);
            let (dual_value, multiplier) = certificate(&proj, costs, &z, rho)?;
            let converged = residual <= opts.tol && cost - dual_value <= opts.tol * (1.0 + cost.abs());
            if converged || it == opts.max_iter {
                let div = divergence(&v, grid)?.values - &proj.f;
                let sol = BeckmannSolution {
                    div_residual: div.iter().fold(0.0, |m, x| m.max(x.abs())),
                    v,
                    cost,
                    dual_value,
                    multiplier,
                    residual,
                    iterations: it,
                    converged,
                };
                return if converged {
                    Ok(sol)
                } else {
                    Err(BeckmannError::NoConvergence(Box::new(sol)))
                };
            }
        }

        if opts.adaptive && it % 10 == 0 {
            if primal > 10.0 * dual {
                rho *= 2.0;
                z.iter_mut().for_each(|x| *x *= 0.5);
            } else if dual > 10.0 * primal {
                rho *= 0.5;
                z.iter_mut().for_each(|x| *x *= 2.0);
            }
        }
    }
    unreachable!("the loop returns at max_iter")
}

/// Solves `Lap_h u = mu - nu` with zero-flux boundaries and returns
/// `v = grad u`, the minimizer for `H(t) = t^2 / 2`.
pub fn solve_dual_quadratic(
    mu: &ScalarField,
    nu: &ScalarField,
    grid: &Grid,
) -> Result<QuadraticSolution, BeckmannError> {
    check_marginals(mu, nu, grid)?;
    let f = &mu.values - &nu.values;
    let u = ScalarField {
        values: NeumannPoisson::new(grid).solve(&f)?,
    };
    let v = gradient(&u, grid);
    let h2 = grid.cell_area();
    let cost = 0.5 * h2 * v.vx.iter().chain(v.vy.iter()).map(|x| x * x).sum::<f64>();
    Ok(QuadraticSolution { u, v, cost })
}
