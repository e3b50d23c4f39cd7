//! Discrete Neumann Poisson problems `Lap_h u = f` on the cell grid with the
//! 5-point stencil and mirrored ghost cells.
//!
//! Small grids use fast diagonalization: the 1-D Neumann second difference is
//! diagonal in the cosine basis `cos(pi k (i + 1/2) / n)`, so the solve is two
//! dense orthogonal transforms and a pointwise division. Larger grids use
//! conjugate gradients.

use ndarray::Array2;

use super::{BeckmannError, Grid};

/// Largest cell count handled by the direct solver.
pub const DIRECT_LIMIT: usize = 128 * 128;

/// Relative residual target of the iterative solver.
pub const CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    Direct,
    ConjugateGradient,
}

impl LinearSolver {
    pub fn for_grid(grid: &Grid) -> Self {
        if grid.n_cells() <= DIRECT_LIMIT {
            LinearSolver::Direct
        } else {
            LinearSolver::ConjugateGradient
        }
    }
}

/// Orthonormal cosine basis (columns) and eigenvalues of the 1-D Neumann
/// second difference with unit spacing.
fn cosine_basis(n: usize) -> (Array2<f64>, Vec<f64>) {
    let pi = std::f64::consts::PI;
    let basis = Array2::from_shape_fn((n, n), |(i, k)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (pi * k as f64 * (i as f64 + 0.5) / n as f64).cos()
    });
    let eig = (0..n)
        .map(|k| {
            let s = (pi * k as f64 / (2.0 * n as f64)).sin();
            -4.0 * s * s
        })
        .collect();
    (basis, eig)
}

#[derive(Debug, Clone)]
pub struct NeumannPoisson {
    grid: Grid,
    solver: LinearSolver,
    cx: Array2<f64>,
    cy: Array2<f64>,
    /// Eigenvalues of `Lap_h`; index `[0, 0]` is the constant mode.
    eig: Array2<f64>,
}

impl NeumannPoisson {
    pub fn new(grid: &Grid) -> Self {
        Self::with_solver(grid, LinearSolver::for_grid(grid))
    }

    pub fn with_solver(grid: &Grid, solver: LinearSolver) -> Self {
        let (cx, cy, eig) = match solver {
            LinearSolver::Direct => {
                let (cx, ex) = cosine_basis(grid.nx);
                let (cy, ey) = cosine_basis(grid.ny);
                let h2 = grid.h * grid.h;
                let eig = Array2::from_shape_fn((grid.nx, grid.ny), |(k, l)| (ex[k] + ey[l]) / h2);
                (cx, cy, eig)
            }
            LinearSolver::ConjugateGradient => (Array2::zeros((0, 0)), Array2::zeros((0, 0)), Array2::zeros((0, 0))),
        };
        Self {
            grid: *grid,
            solver,
            cx,
            cy,
            eig,
        }
    }

    pub fn solver(&self) -> LinearSolver {
        self.solver
    }

    /// Applies `Lap_h` with zero-flux boundaries.
    pub fn apply(&self, u: &Array2<f64>) -> Array2<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let h2 = self.grid.h * self.grid.h;
        Array2::from_shape_fn((nx, ny), |(i, j)| {
            let c = u[[i, j]];
            let mut s = 0.0;
            if i > 0 {
                s += u[[i - 1, j]] - c;
            }
            if i + 1 < nx {
                s += u[[i + 1, j]] - c;
            }
            if j > 0 {
                s += u[[i, j - 1]] - c;
            }
            if j + 1 < ny {
                s += u[[i, j + 1]] - c;
            }
            s / h2
        })
    }

    /// Zero-mean solution of `Lap_h u = f`. The mean of `f` must vanish up to
    /// rounding relative to its size; it is removed before solving.
    pub fn solve(&self, f: &Array2<f64>) -> Result<Array2<f64>, BeckmannError> {
        let n = f.len() as f64;
        let mean = f.sum() / n;
        let scale = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if mean.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(BeckmannError::SingularSystem(mean));
        }
        let f = f.mapv(|v| v - mean);
        Ok(match self.solver {
            LinearSolver::Direct => self.solve_direct(&f),
            LinearSolver::ConjugateGradient => self.solve_cg(&f),
        })
    }

    fn solve_direct(&self, f: &Array2<f64>) -> Array2<f64> {
        let mut hat = self.cx.t().dot(f).dot(&self.cy);
        hat.zip_mut_with(&self.eig, |a, &e| *a = if e == 0.0 { 0.0 } else { *a / e });
        self.cx.dot(&hat).dot(&self.cy.t())
    }

    fn solve_cg(&self, f: &Array2<f64>) -> Array2<f64> {
        // -Lap_h is positive semidefinite; work with it so CG sees an SPD
        // operator on the zero-mean subspace
        let b = f.mapv(|v| -v);
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = Array2::zeros(f.dim());
        if bnorm == 0.0 {
            return x;
        }
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let max_iter = 20 * (self.grid.nx + self.grid.ny) + 10 * f.len();
        for _ in 0..max_iter {
            if rr.sqrt() <= CG_TOL * bnorm {
                break;
            }
            let ap = self.apply(&p).mapv(|v| -v);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            x.scaled_add(alpha, &p);
            r.scaled_add(-alpha, &ap);
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            p = &r + &(p * (rr_new / rr));
            rr = rr_new;
        }
        let mean = x.sum() / x.len() as f64;
        x.mapv_inplace(|v| v - mean);
        x
    }
}
