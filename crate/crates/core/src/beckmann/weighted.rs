//! Weighted minimal flow `min sum k |v|` against transport with the
//! geodesic distance of the metric `k`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;

use super::solver::{solve_beckmann_with, BeckmannOptions};
use super::{BeckmannError, Grid, ScalarField};
use crate::kantorovich::{solve_transport, DiscreteMeasure};
use crate::wardrop::CongestionSpec;

/// Worst relative overestimate of Euclidean length by the 8-neighbour grid
/// metric, attained at `tan(theta) = sqrt(2) - 1`: `sqrt(4 - 2 sqrt(2)) - 1`.
pub fn octagonal_distortion() -> f64 {
    (4.0 - 2.0 * std::f64::consts::SQRT_2).sqrt() - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedReport {
    pub flow_value: f64,
    pub geodesic_ot_value: f64,
    pub rel_err: f64,
    /// `octagonal_distortion() * ot + 2 h k_max mass`.
    pub tolerance: f64,
    pub flow_iterations: usize,
    pub flow_gap: f64,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances from cell `from` to every cell on the
/// 8-neighbour graph of cell centres; an edge costs the mean of its end
/// weights times its Euclidean length.
pub fn geodesic_distances(k: &ScalarField, grid: &Grid, from: (usize, usize)) -> Array2<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut dist = Array2::from_elem((nx, ny), f64::INFINITY);
    let idx = |i: usize, j: usize| i * ny + j;
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Item(0.0, idx(from.0, from.1)));
    let diag = std::f64::consts::SQRT_2 * grid.h;
    while let Some(Item(d, u)) = heap.pop() {
        let (i, j) = (u / ny, u % ny);
        if d > dist[[i, j]] {
            continue;
        }
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                    continue;
                }
                let (a, b) = (a as usize, b as usize);
                let len = if di != 0 && dj != 0 { diag } else { grid.h };
                let cand = d + 0.5 * (k.values[[i, j]] + k.values[[a, b]]) * len;
                if cand < dist[[a, b]] {
                    dist[[a, b]] = cand;
                    heap.push(Item(cand, idx(a, b)));
                }
            }
        }
    }
    dist
}

fn to_density(m: &DiscreteMeasure, grid: &Grid) -> Result<ScalarField, BeckmannError> {
    let mut f = ScalarField::zeros(grid);
    for (p, &w) in m.points().zip(m.weights()) {
        let q = [p[0], p[1]];
        if !grid.contains(q) {
            return Err(BeckmannError::PointOutsideDomain { x: q[0], y: q[1] });
        }
        f.values[grid.cell_of(q)] += w / grid.cell_area();
    }
    Ok(f)
}

/// Compares `min h^2 sum_c k_c |v|_c` over flows with `div v = mu - nu`
/// with the transport cost under the grid geodesic distance of `k`. Points
/// of `mu` and `nu` are assigned to the cells containing them.
pub fn weighted_beckmann_duality_check(
    k: &ScalarField,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &Grid,
    opts: &BeckmannOptions,
) -> Result<WeightedReport, BeckmannError> {
    k.check(grid, "k")?;
    if k.values.iter().any(|x| !(*x > 0.0)) {
        return Err(BeckmannError::InvalidField("k"));
    }
    if mu.dim() != 2 || nu.dim() != 2 {
        return Err(BeckmannError::InvalidField("measures must be planar"));
    }
    let fmu = to_density(mu, grid)?;
    let fnu = to_density(nu, grid)?;
    let costs: Vec<CongestionSpec> = k.values.iter().map(|&a| CongestionSpec::Linear { a }).collect();
    let flow = match solve_beckmann_with(&fmu, &fnu, &costs, grid, opts) {
        Ok(s) => s,
        Err(BeckmannError::NoConvergence(s)) => *s,
        Err(e) => return Err(e),
    };

    let cells = |f: &ScalarField| -> Vec<((usize, usize), f64)> {
        f.values
            .indexed_iter()
            .filter(|(_, v)| **v > 0.0)
            .map(|(ij, v)| (ij, v * grid.cell_area()))
            .collect()
    };
    let (a, b) = (cells(&fmu), cells(&fnu));
    let mass: f64 = a.iter().map(|x| x.1).sum();
    let ot = if a.is_empty() {
        0.0
    } else {
        let mut cost = Array2::zeros((a.len(), b.len()));
        for (r, (src, _)) in a.iter().enumerate() {
            let d = geodesic_distances(k, grid, *src);
            for (c, (dst, _)) in b.iter().enumerate() {
                cost[[r, c]] = d[*dst];
            }
        }
        let wa: Vec<f64> = a.iter().map(|x| x.1).collect();
        let wb: Vec<f64> = b.iter().map(|x| x.1).collect();
        solve_transport(&wa, &wb, &cost)?.value
    };
    let kmax = k.max_abs();
    let rel_err = if ot > 0.0 {
        (flow.cost - ot).abs() / ot
    } else {
        flow.cost.abs()
    };
    Ok(WeightedReport {
        flow_value: flow.cost,
        geodesic_ot_value: ot,
        rel_err,
        tolerance: octagonal_distortion() * ot + 2.0 * grid.h * kmax * mass,
        flow_iterations: flow.iterations,
        flow_gap: flow.gap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_constant() {
        assert!((octagonal_distortion() - 0.082392).abs() < 1e-6);
    }

    #[test]
    fn uniform_weight_geodesics_are_octile() {
        let g = Grid::square(10, 1.0).unwrap();
        let k = ScalarField::from_fn(&g, |_, _| 1.0);
        let d = geodesic_distances(&k, &g, (0, 0));
        assert!((d[[3, 0]] - 0.3).abs() < 1e-12);
        assert!((d[[3, 3]] - 0.3 * 2f64.sqrt()).abs() < 1e-12);
        assert!((d[[5, 2]] - (0.3 + 0.2 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn equal_measures_give_zero() {
        let g = Grid::square(6, 1.0).unwrap();
        let k = ScalarField::from_fn(&g, |_, _| 1.0);
        let m = DiscreteMeasure::new(vec![vec![0.25, 0.4]], vec![1.0]).unwrap();
        let r = weighted_beckmann_duality_check(&k, &m, &m, &g, &BeckmannOptions::new(1e-8)).unwrap();
        assert!(r.flow_value.abs() < 1e-12 && r.geodesic_ot_value == 0.0);
    }
}
