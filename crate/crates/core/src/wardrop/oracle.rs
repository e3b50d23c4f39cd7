//! Path-space reference solver for small networks.
//!
//! Path flows live on a product of scaled simplices, one per
//! origin-destination pair. `J` is minimized by projected gradient descent
//! with backtracking; the gradient of `J` with respect to a path flow is the
//! path cost under `xi = g(i)`. For demand given by marginals, the coupling
//! is searched by nested golden-section over its free entries.

use ndarray::Array2;

use super::{link_metric, objective, relative_gap, Congestion, DemandSpec, EquilibriumResult, LinkFlow, WardropError};
use crate::kantorovich::solve_transport;
use crate::network::{enumerate_paths, shortest_distances, validate_network, Network, NetworkError, DEFAULT_PATH_CAP};

/// Largest path count the oracle accepts.
pub const ORACLE_PATH_LIMIT: usize = 50;

const PGD_MAX_ITER: usize = 200_000;
const STALL_WINDOW: usize = 500;

struct PathProblem<'a, C> {
    costs: &'a [C],
    n_edges: usize,
    /// Edge lists of the enumerated paths.
    paths: Vec<Vec<usize>>,
    /// Path indices per (source position, destination position); `None` when
    /// the source coincides with the destination.
    groups: Vec<Vec<Option<Vec<usize>>>>,
    sources: Vec<usize>,
    dests: Vec<usize>,
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = total}`.
pub(crate) fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite path costs"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - total) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

impl<'a, C: Congestion> PathProblem<'a, C> {
    fn new(net: &Network, costs: &'a [C]) -> Result<Self, WardropError> {
        let set = enumerate_paths(net, net.n_nodes(), DEFAULT_PATH_CAP)?;
        if set.len() > ORACLE_PATH_LIMIT {
            return Err(WardropError::OracleTooLarge {
                paths: set.len(),
                limit: ORACLE_PATH_LIMIT,
            });
        }
        let mut groups = vec![vec![None; net.dests().len()]; net.sources().len()];
        for (a, &s) in net.sources().iter().enumerate() {
            for (b, &d) in net.dests().iter().enumerate() {
                if s != d {
                    let idx: Vec<usize> = set
                        .paths
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.source == s && p.dest == d)
                        .map(|(k, _)| k)
                        .collect();
                    groups[a][b] = Some(idx);
                }
            }
        }
        Ok(Self {
            costs,
            n_edges: net.n_edges(),
            paths: set.paths.into_iter().map(|p| p.edges).collect(),
            groups,
            sources: net.sources().to_vec(),
            dests: net.dests().to_vec(),
        })
    }

    fn flows(&self, q: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_edges];
        for (p, &qp) in self.paths.iter().zip(q) {
            for &e in p {
                f[e] += qp;
            }
        }
        f
    }

    fn pair_flows(&self, q: &[f64]) -> Vec<f64> {
        let nd = self.dests.len();
        let mut f = vec![0.0; self.sources.len() * nd * self.n_edges];
        for (a, row) in self.groups.iter().enumerate() {
            for (b, idx) in row.iter().enumerate() {
                let base = (a * nd + b) * self.n_edges;
                for &k in idx.iter().flatten() {
                    for &e in &self.paths[k] {
                        f[base + e] += q[k];
                    }
                }
            }
        }
        f
    }

    fn value(&self, q: &[f64]) -> f64 {
        self.flows(q).iter().zip(self.costs).map(|(&t, h)| h.cost(t)).sum()
    }

    fn path_costs(&self, q: &[f64]) -> Vec<f64> {
        let xi: Vec<f64> = self
            .flows(q)
            .iter()
            .zip(self.costs)
            .map(|(&t, h)| h.marginal(t))
            .collect();
        self.paths.iter().map(|p| p.iter().map(|&e| xi[e]).sum()).collect()
    }

    fn active_groups<'g>(&'g self, gamma: &'g Array2<f64>) -> impl Iterator<Item = (&'g [usize], f64)> + 'g {
        gamma
            .indexed_iter()
            .filter_map(move |((a, b), &g)| match &self.groups[a][b] {
                Some(idx) if g > 0.0 => Some((idx.as_slice(), g)),
                _ => None,
            })
    }

    fn check_reachable(&self, gamma: &Array2<f64>) -> Result<(), WardropError> {
        for ((a, b), &g) in gamma.indexed_iter() {
            if g > 0.0 && self.groups[a][b].as_ref().is_some_and(|idx| idx.is_empty()) {
                return Err(NetworkError::Unreachable {
                    origin: self.sources[a],
                    dest: self.dests[b],
                }
                .into());
            }
        }
        Ok(())
    }

    fn project(&self, v: &[f64], gamma: &Array2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.paths.len()];
        for (idx, g) in self.active_groups(gamma) {
            let sub: Vec<f64> = idx.iter().map(|&k| v[k]).collect();
            for (&k, x) in idx.iter().zip(project_simplex(&sub, g)) {
                out[k] = x;
            }
        }
        out
    }

    /// `(sum q L - sum gamma min L, sum gamma min L)`.
    fn gap(&self, q: &[f64], gamma: &Array2<f64>) -> (f64, f64) {
        let l = self.path_costs(q);
        let (mut used, mut best) = (0.0, 0.0);
        for (idx, g) in self.active_groups(gamma) {
            let m = idx.iter().map(|&k| l[k]).fold(f64::INFINITY, f64::min);
            best += g * m;
            used += idx.iter().map(|&k| q[k] * l[k]).sum::<f64>();
        }
        (used - best, best)
    }

    /// Minimizes over path flows for a fixed demand matrix; returns the path
    /// flows and the iteration count.
    fn solve(&self, gamma: &Array2<f64>, abs_tol: f64) -> Result<(Vec<f64>, usize), WardropError> {
        self.check_reachable(gamma)?;
        let mut q = vec![0.0; self.paths.len()];
        for (idx, g) in self.active_groups(gamma) {
            for &k in idx {
                q[k] = g / idx.len() as f64;
            }
        }
        let mut step = 1.0;
        let mut j = self.value(&q);
        let mut checkpoint = j;
        for it in 0..PGD_MAX_ITER {
            let (gap, _) = self.gap(&q, gamma);
            if gap <= abs_tol * (1.0 + j.abs()) {
                return Ok((q, it));
            }
            if it % STALL_WINDOW == STALL_WINDOW - 1 {
                // progress below rounding level over a whole window
                if checkpoint - j <= 1e-15 * (1.0 + j.abs()) {
                    return Ok((q, it));
                }
                checkpoint = j;
            }
            let grad = self.path_costs(&q);
            step *= 2.0;
            loop {
                let trial: Vec<f64> = q.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
                let cand = self.project(&trial, gamma);
                let lin: f64 = grad
                    .iter()
                    .zip(cand.iter().zip(&q))
                    .map(|(g, (c, x))| g * (c - x))
                    .sum();
                let sq: f64 = cand.iter().zip(&q).map(|(c, x)| (c - x) * (c - x)).sum();
                let jc = self.value(&cand);
                if jc <= j + lin + sq / (2.0 * step) || step < 1e-300 {
                    if sq == 0.0 {
                        return Ok((q, it));
                    }
                    q = cand;
                    j = jc;
                    break;
                }
                step *= 0.5;
            }
        }
        Ok((q, PGD_MAX_ITER))
    }
}

/// Golden-section search for the minimum of a convex `f` on `[lo, hi]`,
/// after locating the best of `grid + 1` equispaced samples.
pub(crate) fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    if hi - lo <= 0.0 {
        return (lo, f(lo));
    }
    let grid = grid.max(2);
    let h = (hi - lo) / grid as f64;
    let (mut best_k, mut best_v) = (0, f64::INFINITY);
    for k in 0..=grid {
        let v = f(lo + k as f64 * h);
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }
    let mut a = lo + best_k.saturating_sub(1) as f64 * h;
    let mut b = (lo + (best_k + 1) as f64 * h).min(hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 * (1.0 + hi - lo) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let v = f(t);
    if v <= best_v {
        (t, v)
    } else {
        (lo + best_k as f64 * h, best_v)
    }
}

/// Couplings of a two-row problem parameterized by the first row's leading
/// entries; the nested search fixes them one at a time.
fn nested_search<Fv: FnMut(&Array2<f64>) -> f64>(
    mu0: f64,
    nu: &[f64],
    fixed: &mut Vec<f64>,
    grid: usize,
    eval: &mut Fv,
) -> f64 {
    let n = nu.len();
    let k = fixed.len();
    let assigned: f64 = fixed.iter().sum();
    if k + 1 == n {
        let mut g = Array2::zeros((2, n));
        for j in 0..n {
            let top = if j < k { fixed[j] } else { mu0 - assigned };
            g[[0, j]] = top.max(0.0);
            g[[1, j]] = (nu[j] - top).max(0.0);
        }
        return eval(&g);
    }
    let rest: f64 = nu[k + 1..].iter().sum();
    let lo = (mu0 - assigned - rest).max(0.0);
    let hi = nu[k].min(mu0 - assigned).max(lo);
    let (t, _) = golden_min(
        |t| {
            fixed.push(t);
            let v = nested_search(mu0, nu, fixed, grid, eval);
            fixed.pop();
            v
        },
        lo,
        hi,
        grid,
    );
    fixed.push(t);
    let out = nested_search(mu0, nu, fixed, grid, eval);
    fixed.pop();
    out
}

/// Reference minimizer of `J` over path flows. Requires at most
/// [`ORACLE_PATH_LIMIT`] simple paths. For marginal demand the smaller side
/// must have at most two points and the coupling at most three free entries.
pub fn brute_force_equilibrium<C: Congestion>(
    net: &Network,
    costs: &[C],
    demand: &DemandSpec,
    grid_steps: usize,
) -> Result<EquilibriumResult, WardropError> {
    validate_network(net)?;
    if costs.len() != net.n_edges() {
        return Err(WardropError::EdgeCount {
            got: costs.len(),
            expected: net.n_edges(),
        });
    }
    let problem = PathProblem::new(net, costs)?;
    let tol = 1e-10;
    let (gamma, q, iterations) = match demand {
        DemandSpec::Fixed(g) => {
            super::check_demand_shape(net, g)?;
            let (q, it) = problem.solve(g, tol)?;
            (g.clone(), q, it)
        }
        DemandSpec::Marginals { mu, nu } => {
            let (ns, nd) = (mu.len(), nu.len());
            if ns != net.sources().len() || nd != net.dests().len() {
                return Err(WardropError::DemandShape {
                    rows: ns,
                    cols: nd,
                    sources: net.sources().len(),
                    dests: net.dests().len(),
                });
            }
            let (sm, sn): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
            if (sm - sn).abs() > 1e-12 * sm.max(sn) {
                return Err(WardropError::MassMismatch { mu: sm, nu: sn });
            }
            let transpose = ns > 2 && nd <= 2;
            let (rows, cols) = if transpose { (nu, mu) } else { (mu, nu) };
            let free = (rows.len().saturating_sub(1)) * (cols.len().saturating_sub(1));
            if rows.len() > 2 || free > 3 {
                return Err(WardropError::OracleTooLarge { paths: free, limit: 3 });
            }
            let orient = |g: Array2<f64>| if transpose { g.t().to_owned() } else { g };
            let mut best: Option<(f64, Array2<f64>, Vec<f64>, usize)> = None;
            let mut first_error = None;
            let mut eval = |g: &Array2<f64>| -> f64 {
                let g = orient(g.clone());
                match problem.solve(&g, tol) {
                    Ok((q, it)) => {
                        let v = problem.value(&q);
                        if best.as_ref().map_or(true, |b| v < b.0) {
                            best = Some((v, g, q, it));
                        }
                        v
                    }
                    Err(e) => {
                        first_error.get_or_insert(e);
                        f64::INFINITY
                    }
                }
            };
            if rows.len() == 1 {
                let mut g = Array2::zeros((1, cols.len()));
                for (j, &c) in cols.iter().enumerate() {
                    g[[0, j]] = c;
                }
                eval(&g);
            } else {
                nested_search(rows[0], cols, &mut Vec::new(), grid_steps, &mut eval);
            }
            match best {
                Some((_, g, q, it)) => (g, q, it),
                None => return Err(first_error.expect("at least one evaluation")),
            }
        }
    };

    let flows = LinkFlow(problem.flows(&q));
    let xi = link_metric(&flows, costs)?;
    let table = shortest_distances(net, &xi)?;
    let shortest = match demand {
        DemandSpec::Fixed(_) => gamma
            .indexed_iter()
            .filter(|(_, g)| **g > 0.0)
            .map(|((a, b), g)| g * table.dist[a][b])
            .sum(),
        DemandSpec::Marginals { mu, nu } => {
            let cost = Array2::from_shape_fn(gamma.dim(), |(a, b)| {
                let d = table.dist[a][b];
                if d.is_finite() {
                    d
                } else {
                    1e12
                }
            });
            solve_transport(mu, nu, &cost)?.value
        }
    };
    Ok(EquilibriumResult {
        objective: objective(&flows, costs)?,
        relative_gap: relative_gap(&xi, &flows, shortest),
        flows,
        coupling: gamma,
        xi,
        iterations,
        converged: true,
        history: Vec::new(),
        pair_flows: problem.pair_flows(&q),
    })
}
