//! Transport density `sigma_gamma` and vector measure `v_gamma` of a coupling
//! between point sets, rasterized by exact segment-cell clipping.

use ndarray::Array2;

use super::{BeckmannError, Grid, ScalarField, VectorField};

/// `v_gamma` in two forms.
#[derive(Debug, Clone, PartialEq)]
pub struct VGamma {
    /// Staggered field: each interior face holds the mean of its two
    /// neighbouring cell averages; boundary faces are zero.
    pub faces: VectorField,
    /// Cell averages `(1 / h^2) sum gamma int_cell omega'` of each component.
    pub cell_x: ScalarField,
    pub cell_y: ScalarField,
}

impl VGamma {
    /// Pointwise `|v_gamma|` from the cell averages.
    pub fn cell_magnitude(&self) -> ScalarField {
        ScalarField {
            values: Array2::from_shape_fn(self.cell_x.values.dim(), |ij| {
                self.cell_x.values[ij].hypot(self.cell_y.values[ij])
            }),
        }
    }
}

/// Pieces of the segment `[a, b]` inside each cell as `(i, j, dx, dy)`,
/// where `(dx, dy)` is the clipped displacement.
pub(crate) fn clip_segment(grid: &Grid, a: [f64; 2], b: [f64; 2], mut visit: impl FnMut(usize, usize, f64, f64)) {
    let d = [b[0] - a[0], b[1] - a[1]];
    if d[0] == 0.0 && d[1] == 0.0 {
        return;
    }
    let mut ts = vec![0.0, 1.0];
    for axis in 0..2 {
        if d[axis] == 0.0 {
            continue;
        }
        let (lo, hi) = if a[axis] < b[axis] {
            (a[axis], b[axis])
        } else {
            (b[axis], a[axis])
        };
        let first = (lo / grid.h).ceil() as i64;
        let last = (hi / grid.h).floor() as i64;
        for k in first..=last {
            let t = (k as f64 * grid.h - a[axis]) / d[axis];
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|x, y| x.partial_cmp(y).expect("finite crossing"));
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let (i, j) = grid.cell_of([a[0] + tm * d[0], a[1] + tm * d[1]]);
        visit(i, j, (t1 - t0) * d[0], (t1 - t0) * d[1]);
    }
}

fn check_points(grid: &Grid, pts: &[[f64; 2]]) -> Result<(), BeckmannError> {
    match pts.iter().find(|p| !grid.contains(**p)) {
        Some(p) => Err(BeckmannError::PointOutsideDomain { x: p[0], y: p[1] }),
        None => Ok(()),
    }
}

fn check_coupling(coupling: &Array2<f64>, src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<(), BeckmannError> {
    if coupling.dim() != (src.len(), dst.len()) {
        return Err(BeckmannError::ShapeMismatch {
            what: "coupling",
            got: coupling.dim(),
            expected: (src.len(), dst.len()),
        });
    }
    if coupling.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(BeckmannError::InvalidField("coupling"));
    }
    Ok(())
}

/// `sigma_gamma`: every pair deposits `gamma(x, y)` times the length of the
/// segment `[x, y]` inside each cell, divided by `h^2`.
pub fn rasterize_transport_density(
    coupling: &Array2<f64>,
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
    grid: &Grid,
) -> Result<ScalarField, BeckmannError> {
    check_coupling(coupling, src, dst)?;
    check_points(grid, src)?;
    check_points(grid, dst)?;
    let mut sigma = Array2::zeros((grid.nx, grid.ny));
    let h2 = grid.cell_area();
    for ((a, b), &g) in coupling.indexed_iter() {
        if g > 0.0 {
            clip_segment(grid, src[a], dst[b], |i, j, dx, dy| {
                sigma[[i, j]] += g * dx.hypot(dy) / h2;
            });
        }
    }
    Ok(ScalarField { values: sigma })
}

/// `v_gamma`: every pair deposits `gamma(x, y)` times its clipped
/// displacement in each cell, divided by `h^2`.
pub fn rasterize_v_gamma(
    coupling: &Array2<f64>,
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
    grid: &Grid,
) -> Result<VGamma, BeckmannError> {
    check_coupling(coupling, src, dst)?;
    check_points(grid, src)?;
    check_points(grid, dst)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let mut cx = Array2::zeros((nx, ny));
    let mut cy = Array2::zeros((nx, ny));
    let h2 = grid.cell_area();
    for ((a, b), &g) in coupling.indexed_iter() {
        if g > 0.0 {
            clip_segment(grid, src[a], dst[b], |i, j, dx, dy| {
                cx[[i, j]] += g * dx / h2;
                cy[[i, j]] += g * dy / h2;
            });
        }
    }
    let mut faces = VectorField::zeros(grid);
    for i in 1..nx {
        for j in 0..ny {
            faces.vx[[i, j]] = 0.5 * (cx[[i - 1, j]] + cx[[i, j]]);
        }
    }
    for i in 0..nx {
        for j in 1..ny {
            faces.vy[[i, j]] = 0.5 * (cy[[i, j - 1]] + cy[[i, j]]);
        }
    }
    Ok(VGamma {
        faces,
        cell_x: ScalarField { values: cx },
        cell_y: ScalarField { values: cy },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit(n: usize) -> Grid {
        Grid::square(n, 1.0).unwrap()
    }

    #[test]
    fn single_atom_mass_is_its_length() {
        let g = unit(16);
        let s = rasterize_transport_density(&array![[1.0]], &[[0.25, 0.5]], &[[0.75, 0.5]], &g).unwrap();
        assert!((s.mass(&g) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_length_segment_deposits_nothing() {
        let g = unit(8);
        let s = rasterize_transport_density(&array![[2.0]], &[[0.3, 0.3]], &[[0.3, 0.3]], &g).unwrap();
        assert_eq!(s.max_abs(), 0.0);
        let v = rasterize_v_gamma(&array![[2.0]], &[[0.3, 0.3]], &[[0.3, 0.3]], &g).unwrap();
        assert_eq!(v.faces.max_abs(), 0.0);
    }

    #[test]
    fn diagonal_through_corners() {
        let g = unit(4);
        let s = rasterize_transport_density(&array![[1.0]], &[[0.0, 0.0]], &[[1.0, 1.0]], &g).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.25 * 2f64.sqrt() * 16.0 } else { 0.0 };
                assert!((s.values[[i, j]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizontal_segment_has_no_vertical_part() {
        let g = unit(10);
        let v = rasterize_v_gamma(&array![[1.0]], &[[0.12, 0.55]], &[[0.83, 0.55]], &g).unwrap();
        assert_eq!(v.faces.vy.iter().fold(0.0_f64, |m, x| m.max(x.abs())), 0.0);
        assert!(v.faces.vx.iter().any(|x| *x > 0.0));
    }

    #[test]
    fn opposite_segments_cancel() {
        let g = unit(10);
        let src = [[0.2, 0.5], [0.8, 0.5]];
        let dst = [[0.8, 0.5], [0.2, 0.5]];
        let gamma = array![[1.0, 0.0], [0.0, 1.0]];
        let v = rasterize_v_gamma(&gamma, &src, &dst, &g).unwrap();
        let s = rasterize_transport_density(&gamma, &src, &dst, &g).unwrap();
        assert!(v.faces.max_abs() < 1e-12);
        assert!((s.mass(&g) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn points_outside_are_rejected() {
        let g = unit(4);
        assert!(matches!(
            rasterize_transport_density(&array![[1.0]], &[[1.5, 0.5]], &[[0.5, 0.5]], &g),
            Err(BeckmannError::PointOutsideDomain { .. })
        ));
    }
}
