//! Particle trajectories of the non-autonomous field
//! `w(t, x) = v(x) / ((1 - t) mu(x) + t nu(x))`, which push `mu` onto `nu`
//! whenever `div v = mu - nu`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::clip_segment;
use super::{check_marginals, BeckmannError, Grid, ScalarField, VectorField};
use crate::kantorovich::{solve_transport, DiscreteMeasure, PowerCost};

/// Density floor relative to the larger of `max mu` and `max nu`.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Particles per work unit; results do not depend on the thread count.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    pub n_particles: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub threads: usize,
}

impl TrajectoryOptions {
    pub fn new(n_particles: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_particles,
            n_steps,
            seed,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub starts: Vec<[f64; 2]>,
    pub endpoints: Vec<[f64; 2]>,
    /// Positions after `n_steps / 2` steps.
    pub midpoints: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Deposited `weight * |omega'| dt` per cell, divided by `h^2`.
    pub intensity: ScalarField,
    /// Velocity evaluations where the interpolated density was clamped.
    pub floor_hits: usize,
    /// Boundary reflections.
    pub reflections: usize,
}

/// Bilinear interpolation of cell-centred values, constant beyond the
/// outermost centres.
fn bilinear(values: &Array2<f64>, grid: &Grid, p: [f64; 2]) -> f64 {
    let (nx, ny) = values.dim();
    let locate = |x: f64, n: usize| -> (usize, usize, f64) {
        let s = (x / grid.h - 0.5).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n.saturating_sub(2));
        if n == 1 {
            (0, 0, 0.0)
        } else {
            (k, k + 1, s - k as f64)
        }
    };
    let (i0, i1, tx) = locate(p[0], nx);
    let (j0, j1, ty) = locate(p[1], ny);
    let a = values[[i0, j0]] * (1.0 - tx) + values[[i1, j0]] * tx;
    let b = values[[i0, j1]] * (1.0 - tx) + values[[i1, j1]] * tx;
    a * (1.0 - ty) + b * ty
}

struct Field<'a> {
    grid: &'a Grid,
    vx: Array2<f64>,
    vy: Array2<f64>,
    mu: &'a Array2<f64>,
    nu: &'a Array2<f64>,
    floor: f64,
}

impl Field<'_> {
    fn velocity(&self, t: f64, p: [f64; 2], hits: &mut usize) -> [f64; 2] {
        let rho = (1.0 - t) * bilinear(self.mu, self.grid, p) + t * bilinear(self.nu, self.grid, p);
        let rho = if rho < self.floor {
            *hits += 1;
            self.floor
        } else {
            rho
        };
        [
            bilinear(&self.vx, self.grid, p) / rho,
            bilinear(&self.vy, self.grid, p) / rho,
        ]
    }

    fn reflect(&self, p: &mut [f64; 2], count: &mut usize) {
        let lims = [self.grid.width(), self.grid.height()];
        for (x, &hi) in p.iter_mut().zip(&lims) {
            // a step longer than the domain is not expected; fold repeatedly
            while *x < 0.0 || *x > hi {
                *x = if *x < 0.0 { -*x } else { 2.0 * hi - *x };
                *count += 1;
            }
        }
    }
}

struct Block {
    starts: Vec<[f64; 2]>,
    ends: Vec<[f64; 2]>,
    mids: Vec<[f64; 2]>,
    intensity: Array2<f64>,
    hits: usize,
    reflections: usize,
}

/// Stratified seeding: cell `c` receives a share of the particles
/// proportional to its mass (largest remainders), each particle carrying an
/// equal part of that mass.
fn allocate(mu: &Array2<f64>, grid: &Grid, n: usize) -> Vec<(usize, usize, f64)> {
    let h2 = grid.cell_area();
    let total: f64 = mu.sum() * h2;
    let cells: Vec<(usize, usize, f64)> = mu.indexed_iter().map(|((i, j), &m)| (i, j, m * h2)).collect();
    let exact: Vec<f64> = cells.iter().map(|c| c.2 / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &c in &order {
        if left == 0 {
            break;
        }
        if cells[c].2 > 0.0 {
            counts[c] += 1;
            left -= 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (c, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            out.push((cells[c].0, cells[c].1, cells[c].2 / k as f64));
        }
    }
    out
}

fn run_block(field: &Field, seeds: &[(usize, usize, f64)], first: usize, opts: &TrajectoryOptions) -> Block {
    let grid = field.grid;
    let dt = 1.0 / opts.n_steps as f64;
    let mut b = Block {
        starts: Vec::with_capacity(seeds.len()),
        ends: Vec::with_capacity(seeds.len()),
        mids: Vec::with_capacity(seeds.len()),
        intensity: Array2::zeros((grid.nx, grid.ny)),
        hits: 0,
        reflections: 0,
    };
    for (k, &(i, j, weight)) in seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream((first + k) as u64);
        let mut p = [
            (i as f64 + rng.gen::<f64>()) * grid.h,
            (j as f64 + rng.gen::<f64>()) * grid.h,
        ];
        b.starts.push(p);
        let mut mid = p;
        for step in 0..opts.n_steps {
            let t = step as f64 * dt;
            let add = |p: [f64; 2], k: [f64; 2], s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
            let k1 = field.velocity(t, p, &mut b.hits);
            let k2 = field.velocity(t + 0.5 * dt, add(p, k1, 0.5 * dt), &mut b.hits);
            let k3 = field.velocity(t + 0.5 * dt, add(p, k2, 0.5 * dt), &mut b.hits);
            let k4 = field.velocity(t + dt, add(p, k3, dt), &mut b.hits);
            let mut q = [
                p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ];
            field.reflect(&mut q, &mut b.reflections);
            clip_segment(grid, p, q, |ci, cj, dx, dy| {
                b.intensity[[ci, cj]] += weight * dx.hypot(dy);
            });
            p = q;
            if step + 1 == opts.n_steps / 2 {
                mid = p;
            }
        }
        b.ends.push(p);
        b.mids.push(mid);
    }
    b
}

/// Advects particles seeded from `mu` through `w(t, x)` with fourth-order
/// Runge-Kutta steps over `t in [0, 1]`.
pub fn reconstruct_trajectories(
    v: &VectorField,
    mu: &ScalarField,
    nu: &ScalarField,
    grid: &Grid,
    opts: &TrajectoryOptions,
) -> Result<Trajectories, BeckmannError> {
    check_marginals(mu, nu, grid)?;
    v.check(grid)?;
    if opts.n_particles == 0 || opts.n_steps == 0 {
        return Err(BeckmannError::InvalidField("trajectory options"));
    }
    let (vx, vy) = v.colocate();
    let peak = mu.max_abs().max(nu.max_abs());
    let field = Field {
        grid,
        vx,
        vy,
        mu: &mu.values,
        nu: &nu.values,
        floor: DENSITY_FLOOR * peak,
    };
    let seeds = allocate(&mu.values, grid, opts.n_particles);
    let chunks: Vec<(usize, &[(usize, usize, f64)])> =
        seeds.chunks(BLOCK).enumerate().map(|(k, c)| (k * BLOCK, c)).collect();
    let threads = opts.threads.max(1).min(chunks.len().max(1));
    let blocks: Vec<Block> = if threads == 1 {
        chunks
            .iter()
            .map(|&(first, c)| run_block(&field, c, first, opts))
            .collect()
    } else {
        let mut slots: Vec<Option<Block>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let field = &field;
                    let chunks = &chunks;
                    s.spawn(move || {
                        (t..chunks.len())
                            .step_by(threads)
                            .map(|k| (k, run_block(field, chunks[k].1, chunks[k].0, opts)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, b) in h.join().expect("particle thread panicked") {
                    slots[k] = Some(b);
                }
            }
        });
        slots.into_iter().map(|b| b.expect("every block computed")).collect()
    };

    let h2 = grid.cell_area();
    let mut out = Trajectories {
        starts: Vec::with_capacity(seeds.len()),
        endpoints: Vec::with_capacity(seeds.len()),
        midpoints: Vec::with_capacity(seeds.len()),
        weights: seeds.iter().map(|s| s.2).collect(),
        intensity: ScalarField::zeros(grid),
        floor_hits: 0,
        reflections: 0,
    };
    for b in blocks {
        out.starts.extend(b.starts);
        out.endpoints.extend(b.ends);
        out.midpoints.extend(b.mids);
        out.intensity.values += &b.intensity;
        out.floor_hits += b.hits;
        out.reflections += b.reflections;
    }
    out.intensity.values.mapv_inplace(|x| x / h2);
    Ok(out)
}

/// `W_1` between weighted points and a cell density, both binned onto a
/// `coarse x coarse` partition of the domain and placed at the coarse cell
/// centres.
pub fn coarse_w1(
    points: &[[f64; 2]],
    weights: &[f64],
    density: &ScalarField,
    grid: &Grid,
    coarse: usize,
) -> Result<f64, BeckmannError> {
    let (cw, ch) = (grid.width() / coarse as f64, grid.height() / coarse as f64);
    let bin = |p: [f64; 2]| -> usize {
        let i = ((p[0] / cw).floor().max(0.0) as usize).min(coarse - 1);
        let j = ((p[1] / ch).floor().max(0.0) as usize).min(coarse - 1);
        i * coarse + j
    };
    let mut a = vec![0.0; coarse * coarse];
    for (p, w) in points.iter().zip(weights) {
        a[bin(*p)] += w;
    }
    let mut b = vec![0.0; coarse * coarse];
    for ((i, j), &m) in density.values.indexed_iter() {
        b[bin(grid.center(i, j))] += m * grid.cell_area();
    }
    let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    b.iter_mut().for_each(|x| *x *= ta / tb);
    let centers: Vec<Vec<f64>> = (0..coarse * coarse)
        .map(|k| vec![((k / coarse) as f64 + 0.5) * cw, ((k % coarse) as f64 + 0.5) * ch])
        .collect();
    let keep_a: Vec<usize> = (0..a.len()).filter(|&k| a[k] > 0.0).collect();
    let keep_b: Vec<usize> = (0..b.len()).filter(|&k| b[k] > 0.0).collect();
    let ma = DiscreteMeasure::new(
        keep_a.iter().map(|&k| centers[k].clone()).collect(),
        keep_a.iter().map(|&k| a[k]).collect(),
    )?;
    let mb = DiscreteMeasure::new(
        keep_b.iter().map(|&k| centers[k].clone()).collect(),
        keep_b.iter().map(|&k| b[k]).collect(),
    )?;
    let cost = PowerCost::new(1.0).matrix(&ma, &mb);
    Ok(solve_transport(ma.weights(), mb.weights(), &cost)?.value)
}

/// Two Gaussian bumps of unit mass on `[0, 1]^2` with `n x n` cells,
/// centred at `(0.3, 0.5)` and `(0.7, 0.5)` with standard deviation 0.08.
pub fn bump_instance(n: usize) -> Result<(Grid, ScalarField, ScalarField), BeckmannError> {
    let grid = Grid::square(n, 1.0)?;
    let bump = |cx: f64, cy: f64| {
        let s2 = 2.0 * 0.08 * 0.08;
        ScalarField::from_fn(&grid, move |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / s2).exp())
    };
    let mu = bump(0.3, 0.5).normalized(&grid, 1.0);
    let nu = bump(0.7, 0.5).normalized(&grid, 1.0);
    Ok((grid, mu, nu))
}
