//! Discrete optimal transport with dual potentials.
//!
//! Duals follow the convention `max sum phi mu + sum psi nu` subject to
//! `phi(x) + psi(y) <= c(x, y)`, normalized so that `phi` vanishes at the
//! first source point.

pub mod hotelling;
pub mod measure;
mod simplex;

use ndarray::Array2;
use thiserror::Error;

pub use hotelling::{hotelling_demands, hotelling_recover_prices, HotellingAssignment};
pub use measure::{euclidean, parse_cost_csv, DiscreteMeasure, PowerCost};

/// Relative tolerance on `sum mu - sum nu`.
pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("mass mismatch: source mass {mu}, target mass {nu}")]
    MassMismatch { mu: f64, nu: f64 },
    #[error("cost entry ({i}, {j}) is not finite")]
    NonFiniteCost { i: usize, j: usize },
    #[error("cost matrix is {rows}x{cols}, expected {m}x{n}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        m: usize,
        n: usize,
    },
    #[error("optimal plan has a disconnected support graph; the dual potential is not unique")]
    DegenerateDual,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Dual potentials for a transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtSolution {
    /// Transport plan, `m x n`.
    pub plan: Array2<f64>,
    pub potentials: PotentialPair,
    /// Primal value `sum plan * cost`.
    pub value: f64,
    /// Dual value `sum phi mu + sum psi nu`.
    pub dual_value: f64,
    pub pivots: usize,
}

impl OtSolution {
    /// `|primal - dual| / (1 + |primal|)`.
    pub fn duality_gap(&self) -> f64 {
        (self.value - self.dual_value).abs() / (1.0 + self.value.abs())
    }

    /// Largest violation of `phi + psi <= c`.
    pub fn dual_infeasibility(&self, cost: &Array2<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for ((i, j), &c) in cost.indexed_iter() {
            worst = worst.max(self.potentials.phi[i] + self.potentials.psi[j] - c);
        }
        worst
    }

    /// Largest `|phi + psi - c|` over plan entries above `tol`.
    pub fn slackness_violation(&self, cost: &Array2<f64>, tol: f64) -> f64 {
        let mut worst = 0.0_f64;
        for ((i, j), &g) in self.plan.indexed_iter() {
            if g > tol {
                let r = self.potentials.phi[i] + self.potentials.psi[j] - cost[[i, j]];
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<(), OtError> {
    match w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        Some(x) => Err(OtError::Invalid(format!(
            "{what} weight {x} is not finite and nonnegative"
        ))),
        None => Ok(()),
    }
}

/// Checks `|sum a - sum b| <= MASS_TOL * max(sum a, sum b)`.
pub fn check_mass(a: &[f64], b: &[f64]) -> Result<(), OtError> {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > MASS_TOL * sa.max(sb) {
        return Err(OtError::MassMismatch { mu: sa, nu: sb });
    }
    Ok(())
}

/// Solves the transport problem between weight vectors for a dense cost.
pub fn solve_transport(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<OtSolution, OtError> {
    solve_transport_with_hint(a, b, cost, None)
}

/// As [`solve_transport`], warm-started from a guess of the target-side
/// potential `psi` (for instance the one from a nearby problem).
pub fn solve_transport_with_hint(
    a: &[f64],
    b: &[f64],
    cost: &Array2<f64>,
    psi_hint: Option<&[f64]>,
) -> Result<OtSolution, OtError> {
    let (m, n) = (a.len(), b.len());
    if cost.dim() != (m, n) {
        return Err(OtError::ShapeMismatch {
            rows: cost.nrows(),
            cols: cost.ncols(),
            m,
            n,
        });
    }
    if m == 0 || n == 0 {
        return Err(OtError::Invalid("both measures need at least one point".into()));
    }
    check_weights(a, "source")?;
    check_weights(b, "target")?;
    if let Some(((i, j), _)) = cost.indexed_iter().find(|(_, c)| !c.is_finite()) {
        return Err(OtError::NonFiniteCost { i, j });
    }
    check_mass(a, b)?;

    let rows: Vec<usize> = (0..m).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| b[j] > 0.0).collect();

    let mut plan = Array2::zeros((m, n));
    let mut phi = vec![f64::NAN; m];
    let mut psi = vec![f64::NAN; n];
    let mut pivots = 0;

    if rows.is_empty() || cols.is_empty() {
        phi.iter_mut().for_each(|p| *p = 0.0);
        for (j, p) in psi.iter_mut().enumerate() {
            *p = (0..m).map(|i| cost[[i, j]]).fold(f64::INFINITY, f64::min);
        }
    } else {
        let sub_a: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
        let mut sub_b: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
        // exact balance for the simplex; the residual is within MASS_TOL
        let scale = sub_a.iter().sum::<f64>() / sub_b.iter().sum::<f64>();
        sub_b.iter_mut().for_each(|x| *x *= scale);
        let sub_cost = Array2::from_shape_fn((rows.len(), cols.len()), |(r, c)| cost[[rows[r], cols[c]]]);
        let out = if rows.len() >= cols.len() {
            let hint: Vec<f64> = match psi_hint {
                Some(h) if h.len() == n => cols.iter().map(|&j| h[j]).collect(),
                _ => vec![0.0; cols.len()],
            };
            simplex::solve(&sub_a, &sub_b, &sub_cost, &hint)
        } else {
            // the starting basis assigns the larger side, so transpose
            let t = sub_cost.t().to_owned();
            let back = simplex::solve(&sub_b, &sub_a, &t, &vec![0.0; rows.len()]);
            simplex::SimplexOutcome {
                plan: back.plan.t().to_owned(),
                supply_pi: back.demand_pi.iter().map(|p| -p).collect(),
                demand_pi: back.supply_pi.iter().map(|p| -p).collect(),
                pivots: back.pivots,
            }
        };
        pivots = out.pivots;
        for (r, &i) in rows.iter().enumerate() {
            phi[i] = -out.supply_pi[r];
            for (c, &j) in cols.iter().enumerate() {
                plan[[i, j]] = out.plan[[r, c]];
            }
        }
        for (c, &j) in cols.iter().enumerate() {
            psi[j] = out.demand_pi[c];
        }
        // zero-mass points get their c-transform values
        for j in 0..n {
            if b[j] <= 0.0 {
                psi[j] = rows
                    .iter()
                    .map(|&i| cost[[i, j]] - phi[i])
                    .fold(f64::INFINITY, f64::min);
            }
        }
        for i in 0..m {
            if a[i] <= 0.0 {
                phi[i] = (0..n).map(|j| cost[[i, j]] - psi[j]).fold(f64::INFINITY, f64::min);
            }
        }
    }

    let shift = phi[0];
    phi.iter_mut().for_each(|p| *p -= shift);
    psi.iter_mut().for_each(|p| *p += shift);

    let value = plan.iter().zip(cost.iter()).map(|(g, c)| g * c).sum();
    let dual_value =
        phi.iter().zip(a).map(|(p, w)| p * w).sum::<f64>() + psi.iter().zip(b).map(|(p, w)| p * w).sum::<f64>();
    Ok(OtSolution {
        plan,
        potentials: PotentialPair { phi, psi },
        value,
        dual_value,
        pivots,
    })
}

/// Optimal coupling between two measures for the given cost matrix.
pub fn solve_discrete_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
) -> Result<OtSolution, OtError> {
    solve_transport(mu.weights(), nu.weights(), cost)
}

/// `W_p^p(mu, nu)` for the Euclidean ground distance.
pub fn wasserstein_p(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, OtError> {
    if !(p >= 1.0) {
        return Err(OtError::Invalid(format!("p = {p} must be at least 1")));
    }
    if mu.dim() != nu.dim() {
        return Err(OtError::Invalid("measures live in different dimensions".into()));
    }
    let cost = PowerCost::new(p).matrix(mu, nu);
    Ok(solve_discrete_ot(mu, nu, &cost)?.value)
}

/// `W_p(mu, nu)`, the `p`-th root of [`wasserstein_p`].
pub fn wasserstein_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, OtError> {
    Ok(wasserstein_p(mu, nu, p)?.max(0.0).powf(1.0 / p))
}

/// Whether the bipartite graph of plan entries above `tol`, restricted to
/// rows with `a > 0` and columns with `b > 0`, is connected.
pub fn support_is_connected(plan: &Array2<f64>, a: &[f64], b: &[f64], tol: f64) -> bool {
    let (m, n) = plan.dim();
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for ((i, j), &g) in plan.indexed_iter() {
        if g > tol {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, m + j));
            parent[ri] = rj;
        }
    }
    let active: Vec<usize> = (0..m)
        .filter(|&i| a[i] > 0.0)
        .chain((0..n).filter(|&j| b[j] > 0.0).map(|j| m + j))
        .collect();
    let Some(&first) = active.first() else {
        return true;
    };
    let root = find(&mut parent, first);
    active.iter().all(|&k| find(&mut parent, k) == root)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateauxReport {
    pub eps: Vec<f64>,
    /// `[W(mu_eps) - W(mu)] / eps` per `eps`.
    pub fd: Vec<f64>,
    /// `sum phi (mu1 - mu)`.
    pub inner: f64,
    /// `|fd - inner|` per `eps`.
    pub errors: Vec<f64>,
    pub max_err: f64,
}

/// Compares finite differences of `mu -> W_p^p(mu, nu)` along `mu1 - mu` with
/// the first variation given by the source potential.
pub fn gateaux_check(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    p: f64,
    eps_list: &[f64],
) -> Result<GateauxReport, OtError> {
    if mu.dim() != nu.dim() || mu.dim() != mu1.dim() {
        return Err(OtError::Invalid("measures live in different dimensions".into()));
    }
    check_mass(mu.weights(), mu1.weights())?;
    check_mass(mu.weights(), nu.weights())?;

    // union of the two supports, exact coordinate matches merged
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut w0 = Vec::new();
    let mut w1 = Vec::new();
    let slot = |x: &[f64], coords: &mut Vec<Vec<f64>>, w0: &mut Vec<f64>, w1: &mut Vec<f64>| match coords
        .iter()
        .position(|c| c.as_slice() == x)
    {
        Some(k) => k,
        None => {
            coords.push(x.to_vec());
            w0.push(0.0);
            w1.push(0.0);
            coords.len() - 1
        }
    };
    for (x, &w) in mu.points().zip(mu.weights()) {
        let k = slot(x, &mut coords, &mut w0, &mut w1);
        w0[k] += w;
    }
    for (x, &w) in mu1.points().zip(mu1.weights()) {
        let k = slot(x, &mut coords, &mut w0, &mut w1);
        w1[k] += w;
    }
    let base = DiscreteMeasure::new(coords, w0.clone())?;
    let cost = PowerCost::new(p).matrix(&base, nu);
    let sol = solve_transport(&w0, nu.weights(), &cost)?;
    if !support_is_connected(&sol.plan, &w0, nu.weights(), 0.0) {
        return Err(OtError::DegenerateDual);
    }
    let inner: f64 = sol
        .potentials
        .phi
        .iter()
        .zip(w1.iter().zip(&w0))
        .map(|(f, (b, a))| f * (b - a))
        .sum();

    let mut fd = Vec::with_capacity(eps_list.len());
    let mut errors = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let w: Vec<f64> = w0.iter().zip(&w1).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
        let v = solve_transport(&w, nu.weights(), &cost)?.value;
        let d = (v - sol.value) / eps;
        errors.push((d - inner).abs());
        fd.push(d);
    }
    let max_err = errors.iter().cloned().fold(0.0, f64::max);
    Ok(GateauxReport {
        eps: eps_list.to_vec(),
        fd,
        inner,
        errors,
        max_err,
    })
}
