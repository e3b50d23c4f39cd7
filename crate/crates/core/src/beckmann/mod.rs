//! Minimal-flow problems on a staggered grid: `min sum H(|v|)` subject to
//! `div v = mu - nu` with zero normal flux, a weighted variant checked against
//! grid-geodesic transport, rasterized transport densities and trajectory
//! reconstruction from a flow.
//!
//! Cells are indexed `[i, j]` with `i` along x. `vx` lives on the vertical
//! faces `x = i h` (shape `(nx + 1, ny)`), `vy` on the horizontal faces
//! `y = j h` (shape `(nx, ny + 1)`).

mod io;
mod poisson;
mod raster;
mod solver;
mod trajectories;
mod weighted;

use ndarray::Array2;
use thiserror::Error;

use crate::kantorovich::OtError;
use crate::wardrop::CongestionError;

pub use io::{grid_sidecar, parse_sidecar, read_scalar_field, write_scalar_field, write_vector_field};
pub use poisson::{LinearSolver, NeumannPoisson};
pub use raster::{rasterize_transport_density, rasterize_v_gamma, VGamma};
pub use solver::{
    cell_magnitude, flow_cost, solve_beckmann, solve_beckmann_with, solve_dual_quadratic, BeckmannOptions,
    BeckmannSolution, QuadraticSolution,
};
pub use trajectories::{bump_instance, coarse_w1, reconstruct_trajectories, Trajectories, TrajectoryOptions};
pub use weighted::{geodesic_distances, octagonal_distortion, weighted_beckmann_duality_check, WeightedReport};

/// Relative tolerance for mass balance between `mu` and `nu`.
pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeckmannError {
    #[error("grid needs at least two cells and a positive spacing (got {nx}x{ny}, h = {h})")]
    InvalidGrid { nx: usize, ny: usize, h: f64 },
    #[error("{what} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("masses differ: mu has {mu}, nu has {nu}")]
    MassMismatch { mu: f64, nu: f64 },
    #[error("{0} contains a negative or non-finite value")]
    InvalidField(&'static str),
    #[error("no convergence after {} iterations (residual {:.3e})", .0.iterations, .0.residual)]
    NoConvergence(Box<BeckmannSolution>),
    #[error("Poisson right-hand side has nonzero mean {0:e}")]
    SingularSystem(f64),
    #[error("point ({x}, {y}) lies outside the domain")]
    PointOutsideDomain { x: f64, y: f64 },
    #[error(transparent)]
    Congestion(#[from] CongestionError),
    #[error(transparent)]
    Transport(#[from] OtError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Uniform grid of `nx * ny` square cells of side `h` covering
/// `[0, nx h] x [0, ny h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Grid {
    /// A single row (`ny = 1`) is allowed for one-dimensional problems.
    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self, BeckmannError> {
        if nx == 0 || ny == 0 || nx * ny < 2 || !(h > 0.0 && h.is_finite()) {
            return Err(BeckmannError::InvalidGrid { nx, ny, h });
        }
        Ok(Self { nx, ny, h })
    }

    /// `n x n` cells on `[0, len]^2`.
    pub fn square(n: usize, len: f64) -> Result<Self, BeckmannError> {
        Self::new(n, n, len / n as f64)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.h
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[0] <= self.width() && p[1] >= 0.0 && p[1] <= self.height()
    }

    /// Cell containing `p`, points on the far boundary belonging to the last
    /// cell.
    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let i = ((p[0] / self.h).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((p[1] / self.h).floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }
}

/// Cell-centred values, e.g. a density (mass per area).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: Array2::zeros((grid.nx, grid.ny)),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
                let c = grid.center(i, j);
                f(c[0], c[1])
            }),
        }
    }

    pub fn check(&self, grid: &Grid, what: &'static str) -> Result<(), BeckmannError> {
        let expected = (grid.nx, grid.ny);
        if self.values.dim() != expected {
            return Err(BeckmannError::ShapeMismatch {
                what,
                got: self.values.dim(),
                expected,
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(BeckmannError::InvalidField(what));
        }
        Ok(())
    }

    /// `h^2 sum values`.
    pub fn mass(&self, grid: &Grid) -> f64 {
        grid.cell_area() * self.values.sum()
    }

    /// Rescales to total mass `total`.
    pub fn normalized(&self, grid: &Grid, total: f64) -> Self {
        let m = self.mass(grid);
        Self {
            values: self.values.mapv(|v| v * total / m),
        }
    }

    /// `h^2 sum |a - b|`.
    pub fn l1_distance(&self, other: &ScalarField, grid: &Grid) -> f64 {
        grid.cell_area()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Face-normal flux components on the staggered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub vx: Array2<f64>,
    pub vy: Array2<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            vx: Array2::zeros((grid.nx + 1, grid.ny)),
            vy: Array2::zeros((grid.nx, grid.ny + 1)),
        }
    }

    pub fn check(&self, grid: &Grid) -> Result<(), BeckmannError> {
        let ex = (grid.nx + 1, grid.ny);
        let ey = (grid.nx, grid.ny + 1);
        if self.vx.dim() != ex {
            return Err(BeckmannError::ShapeMismatch {
                what: "vx",
                got: self.vx.dim(),
                expected: ex,
            });
        }
        if self.vy.dim() != ey {
            return Err(BeckmannError::ShapeMismatch {
                what: "vy",
                got: self.vy.dim(),
                expected: ey,
            });
        }
        Ok(())
    }

    /// Largest normal flux through the domain boundary.
    pub fn boundary_flux(&self) -> f64 {
        let (nxp, ny) = self.vx.dim();
        let (nx, nyp) = self.vy.dim();
        let mut m = 0.0_f64;
        for j in 0..ny {
            m = m.max(self.vx[[0, j]].abs()).max(self.vx[[nxp - 1, j]].abs());
        }
        for i in 0..nx {
            m = m.max(self.vy[[i, 0]].abs()).max(self.vy[[i, nyp - 1]].abs());
        }
        m
    }

    /// Cell-centred components, each the mean of the two faces along its axis.
    pub fn colocate(&self) -> (Array2<f64>, Array2<f64>) {
        let (nx, nyp) = self.vy.dim();
        let ny = nyp - 1;
        let cx = Array2::from_shape_fn((nx, ny), |(i, j)| 0.5 * (self.vx[[i, j]] + self.vx[[i + 1, j]]));
        let cy = Array2::from_shape_fn((nx, ny), |(i, j)| 0.5 * (self.vy[[i, j]] + self.vy[[i, j + 1]]));
        (cx, cy)
    }

    /// `|v|` at cell centres from [`VectorField::colocate`].
    pub fn colocated_magnitude(&self) -> ScalarField {
        let (cx, cy) = self.colocate();
        ScalarField {
            values: Array2::from_shape_fn(cx.dim(), |ij| cx[ij].hypot(cy[ij])),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vx.iter().chain(self.vy.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `div(i, j) = [vx(i+1, j) - vx(i, j) + vy(i, j+1) - vy(i, j)] / h`.
pub fn divergence(v: &VectorField, grid: &Grid) -> Result<ScalarField, BeckmannError> {
    v.check(grid)?;
    let h = grid.h;
    Ok(ScalarField {
        values: Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
            (v.vx[[i + 1, j]] - v.vx[[i, j]] + v.vy[[i, j + 1]] - v.vy[[i, j]]) / h
        }),
    })
}

/// Face gradient of a cell field with zero boundary faces.
pub fn gradient(u: &ScalarField, grid: &Grid) -> VectorField {
    let h = grid.h;
    let (nx, ny) = (grid.nx, grid.ny);
    let u = &u.values;
    let mut v = VectorField::zeros(grid);
    for i in 1..nx {
        for j in 0..ny {
            v.vx[[i, j]] = (u[[i, j]] - u[[i - 1, j]]) / h;
        }
    }
    for i in 0..nx {
        for j in 1..ny {
            v.vy[[i, j]] = (u[[i, j]] - u[[i, j - 1]]) / h;
        }
    }
    v
}

/// Checks that `mu` and `nu` are nonnegative densities of equal mass.
pub(crate) fn check_marginals(mu: &ScalarField, nu: &ScalarField, grid: &Grid) -> Result<(), BeckmannError> {
    mu.check(grid, "mu")?;
    nu.check(grid, "nu")?;
    if mu.values.iter().any(|v| *v < 0.0) {
        return Err(BeckmannError::InvalidField("mu"));
    }
    if nu.values.iter().any(|v| *v < 0.0) {
        return Err(BeckmannError::InvalidField("nu"));
    }
    let (a, b) = (mu.mass(grid), nu.mass(grid));
    if (a - b).abs() > MASS_TOL * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
        return Err(BeckmannError::MassMismatch { mu: a, nu: b });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rules() {
        assert!(Grid::new(1, 1, 1.0).is_err());
        assert!(Grid::new(4, 4, 0.0).is_err());
        assert!(Grid::new(5, 1, 0.2).is_ok());
        let g = Grid::square(4, 1.0).unwrap();
        assert_eq!(g.cell_of([1.0, 1.0]), (3, 3));
        assert_eq!(g.cell_of([0.3, 0.0]), (1, 0));
    }

    #[test]
    fn zero_field_has_zero_divergence() {
        let g = Grid::new(5, 3, 0.1).unwrap();
        let d = divergence(&VectorField::zeros(&g), &g).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn uniform_interior_flux_telescopes() {
        let g = Grid::new(6, 4, 0.25).unwrap();
        let mut v = VectorField::zeros(&g);
        for i in 1..6 {
            for j in 0..4 {
                v.vx[[i, j]] = 2.0;
            }
        }
        let d = divergence(&v, &g).unwrap();
        for i in 0..6 {
            for j in 0..4 {
                let expected = match i {
                    0 => 8.0,
                    5 => -8.0,
                    _ => 0.0,
                };
                assert_eq!(d.values[[i, j]], expected);
            }
        }
        assert_eq!(d.values.sum(), 0.0);
    }

    #[test]
    fn gradient_of_half_square_has_unit_divergence() {
        let g = Grid::square(32, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |x, _| 0.5 * x * x);
        let d = divergence(&gradient(&u, &g), &g).unwrap();
        for i in 1..31 {
            for j in 0..32 {
                assert!((d.values[[i, j]] - 1.0).abs() <= g.h);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = Grid::new(3, 3, 1.0).unwrap();
        let bad = VectorField {
            vx: Array2::zeros((3, 3)),
            vy: Array2::zeros((3, 4)),
        };
        assert!(matches!(
            divergence(&bad, &g),
            Err(BeckmannError::ShapeMismatch { what: "vx", .. })
        ));
    }
}
