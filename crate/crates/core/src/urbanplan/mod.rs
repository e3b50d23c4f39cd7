//! The urban planning functional `T(mu, nu) + F(mu) + G(nu)` on a grid:
//! residents `mu` pay the spreading cost `F`, services `nu` pay the
//! concentration cost `G`, and `T = W_p^p` prices commuting.

mod atomic;
mod city;
mod fixed_point;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beckmann::{BeckmannError, Grid, ScalarField};
use crate::kantorovich::{
    gateaux_check, solve_transport_with_hint, DiscreteMeasure, GateauxReport, OtError, OtSolution, PowerCost,
};

pub use atomic::{minimize_with_atomic_g, AtomicOptions, AtomicReport};
pub use city::{
    quadratic_city_density, quadratic_city_profile, quadratic_city_radius, solve_quadratic_city,
    solve_quadratic_city_with, CityOptions, CityReport,
};
pub use fixed_point::{solve_p_nu, solve_p_nu_with, PnuMethod, PnuOptions, DAMPING};

/// Tolerance on `h^2 sum mu = 1`.
pub const MASS_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UrbanError {
    #[error(transparent)]
    Grid(#[from] BeckmannError),
    #[error(transparent)]
    Transport(#[from] OtError),
    #[error("mass mismatch: mu has mass {mu}, nu has mass {nu}")]
    MassMismatch { mu: f64, nu: f64 },
    #[error("invalid problem data: {0}")]
    InvalidSpec(String),
    #[error("no bracket for the mass multiplier below {bound}")]
    BisectionFailure { bound: f64 },
    #[error("the optimal city of radius {radius} around ({}, {}) does not fit in the domain", center[0], center[1])]
    DomainTooSmall { radius: f64, center: [f64; 2] },
    #[error("no convergence after {} iterations (residual {})", .0.iterations, .0.residual)]
    NoConvergence(Box<CitySolution>),
}

/// Convex spreading integrand `f` of the residents, with `f(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SpreadSpec {
    /// `f(t) = t^2`.
    Quadratic,
    /// `f(t) = t^m / m`, `m > 1`.
    Power { m: f64 },
}

impl SpreadSpec {
    pub fn f(&self, t: f64) -> f64 {
        match *self {
            SpreadSpec::Quadratic => t * t,
            SpreadSpec::Power { m } => t.max(0.0).powf(m) / m,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            SpreadSpec::Quadratic => 2.0 * t,
            SpreadSpec::Power { m } => t.max(0.0).powf(m - 1.0),
        }
    }

    /// `(f')^{-1}(s)` for `s >= 0`.
    pub fn inverse_derivative(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            SpreadSpec::Quadratic => 0.5 * s,
            SpreadSpec::Power { m } => s.powf(1.0 / (m - 1.0)),
        }
    }

    /// Conjugate `f*(s) = sup_{t >= 0} (s t - f(t))`.
    pub fn conjugate(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            SpreadSpec::Quadratic => 0.25 * s * s,
            SpreadSpec::Power { m } => {
                let q = m / (m - 1.0);
                s.powf(q) / q
            }
        }
    }

    /// Slope of `(f')^{-1}`, the second derivative of `f*`.
    pub fn conjugate_curvature(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match *self {
            SpreadSpec::Quadratic => 0.5,
            SpreadSpec::Power { m } => s.max(1e-12).powf(1.0 / (m - 1.0) - 1.0) / (m - 1.0),
        }
    }

    /// Checks midpoint convexity on random triples and the inverse of `f'`.
    pub fn validate(&self) -> Result<(), UrbanError> {
        if let SpreadSpec::Power { m } = *self {
            if !(m > 1.0) || !m.is_finite() {
                return Err(UrbanError::InvalidSpec(format!("power spread needs m > 1, got {m}")));
            }
        }
        if self.f(0.0) != 0.0 {
            return Err(UrbanError::InvalidSpec("f(0) must vanish".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20 {
            let (a, b): (f64, f64) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            let mid = self.f(0.5 * (a + b));
            if mid > 0.5 * (self.f(a) + self.f(b)) + 1e-12 * (1.0 + mid.abs()) {
                return Err(UrbanError::InvalidSpec(format!("f is not convex between {a} and {b}")));
            }
        }
        for s in [0.1, 1.0, 10.0] {
            let back = self.derivative(self.inverse_derivative(s));
            if (back - s).abs() > 1e-8 * s.max(1.0) {
                return Err(UrbanError::InvalidSpec(format!("f'((f')^-1({s})) = {back}")));
            }
        }
        Ok(())
    }
}

/// Cost `g(a)` of a service pole of size `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "g", rename_all = "snake_case")]
pub enum PoleCost {
    /// `c a^exponent`.
    Power {
        exponent: f64,
        #[serde(default = "one")]
        c: f64,
    },
    /// `fixed + slope a` for `a > 0`.
    Affine { fixed: f64, slope: f64 },
}

fn one() -> f64 {
    1.0
}

impl PoleCost {
    pub fn eval(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        match *self {
            PoleCost::Power { exponent, c } => c * a.powf(exponent),
            PoleCost::Affine { fixed, slope } => fixed + slope * a,
        }
    }

    pub fn derivative(&self, a: f64) -> f64 {
        match *self {
            PoleCost::Power { exponent, c } => c * exponent * a.max(f64::MIN_POSITIVE).powf(exponent - 1.0),
            PoleCost::Affine { slope, .. } => slope,
        }
    }
}

/// Interaction cost `h(r)` between services at distance `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "h", rename_all = "snake_case")]
pub enum InteractionKernel {
    /// `c r^q`, `q >= 1`.
    Power { c: f64, q: f64 },
}

impl InteractionKernel {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            InteractionKernel::Power { c, q } => c * r.powf(q),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            InteractionKernel::Power { c, q } => c * q * r.powf(q - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConcentrationSpec {
    /// `G(nu) = sum_k g(a_k)` on atomic `nu`, `+inf` otherwise.
    Atomic(PoleCost),
    /// `G(nu) = int int h(|x - y|) dnu dnu`.
    Interaction(InteractionKernel),
}

impl ConcentrationSpec {
    /// Samples `g(0) = 0` and subadditivity, or monotonicity of `h`.
    pub fn validate(&self) -> Result<(), UrbanError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        match self {
            ConcentrationSpec::Atomic(g) => {
                if g.eval(0.0) != 0.0 {
                    return Err(UrbanError::InvalidSpec("g(0) must vanish".into()));
                }
                for _ in 0..50 {
                    let (a, b): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                    let (ga, gb, gab) = (g.eval(a), g.eval(b), g.eval(a + b));
                    if !ga.is_finite() || !gb.is_finite() || ga < 0.0 || gab > ga + gb + 1e-10 {
                        return Err(UrbanError::InvalidSpec(format!("g is not subadditive at ({a}, {b})")));
                    }
                }
            }
            ConcentrationSpec::Interaction(h) => {
                let InteractionKernel::Power { c, q } = *h;
                if !(c >= 0.0) || !(q >= 1.0) {
                    return Err(UrbanError::InvalidSpec(format!(
                        "interaction needs c >= 0 and q >= 1, got c = {c}, q = {q}"
                    )));
                }
                let mut r: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..10.0)).collect();
                r.sort_by(f64::total_cmp);
                if r.windows(2).any(|w| h.eval(w[1]) < h.eval(w[0])) {
                    return Err(UrbanError::InvalidSpec("h is not nondecreasing".into()));
                }
            }
        }
        Ok(())
    }
}

/// Services: atoms, or a density on the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum CityNu {
    Atoms(DiscreteMeasure),
    Density(ScalarField),
}

impl CityNu {
    /// Weighted points; a density contributes its positive cells.
    pub fn as_measure(&self, grid: &Grid) -> Result<DiscreteMeasure, UrbanError> {
        match self {
            CityNu::Atoms(m) => Ok(m.clone()),
            CityNu::Density(f) => density_measure(f, grid),
        }
    }

    /// Cell density of `nu`, atoms binned into the cells containing them.
    pub fn density(&self, grid: &Grid) -> Result<ScalarField, UrbanError> {
        match self {
            CityNu::Density(f) => Ok(f.clone()),
            CityNu::Atoms(m) => {
                let mut f = ScalarField::zeros(grid);
                for (p, &w) in m.points().zip(m.weights()) {
                    let q = [p[0], p[1]];
                    if !grid.contains(q) {
                        return Err(BeckmannError::PointOutsideDomain { x: q[0], y: q[1] }.into());
                    }
                    f.values[grid.cell_of(q)] += w / grid.cell_area();
                }
                Ok(f)
            }
        }
    }
}

/// The three parts of the functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueTerms {
    /// `W_p^p(mu, nu)`.
    pub transport: f64,
    /// `h^2 sum f(u)`.
    pub spread: f64,
    /// `G(nu)`; `+inf` for a density under an atomic cost.
    pub concentration: f64,
}

impl ValueTerms {
    pub fn total(&self) -> f64 {
        self.transport + self.spread + self.concentration
    }

    pub fn is_feasible(&self) -> bool {
        self.concentration.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CitySolution {
    /// Resident density, `h^2 sum mu = 1`.
    pub mu: ScalarField,
    pub nu: CityNu,
    /// Total value of the functional.
    pub value: f64,
    pub terms: ValueTerms,
    /// Kantorovich potential of `mu` against `nu` at every cell centre.
    pub potential: ScalarField,
    /// The constant `C` with `mu = (f')^{-1}((C - potential)_+)`.
    pub multiplier: f64,
    /// `|| mu - (f')^{-1}((C - potential)_+) ||_1`.
    pub residual: f64,
    /// `W_p^p(mu, nu)` minus the dual value of `potential` and its atom-side
    /// transform; zero exactly when `potential` is a Kantorovich potential.
    pub dual_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Value after each accepted outer iteration.
    pub history: Vec<f64>,
}

/// Cell centres of the grid, in the order of `ScalarField::values.iter()`.
pub(crate) fn cell_centres(grid: &Grid) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(grid.n_cells());
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            out.push(grid.center(i, j));
        }
    }
    out
}

fn density_measure(f: &ScalarField, grid: &Grid) -> Result<DiscreteMeasure, UrbanError> {
    let h2 = grid.cell_area();
    let (pts, w): (Vec<Vec<f64>>, Vec<f64>) = f
        .values
        .indexed_iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|((i, j), v)| {
            let c = grid.center(i, j);
            (vec![c[0], c[1]], v * h2)
        })
        .unzip();
    Ok(DiscreteMeasure::new(pts, w)?)
}

pub(crate) fn check_probability(mu: &ScalarField, grid: &Grid, what: &'static str) -> Result<(), UrbanError> {
    mu.check(grid, what)?;
    if mu.values.iter().any(|v| *v < 0.0) {
        return Err(BeckmannError::InvalidField(what).into());
    }
    let m = mu.mass(grid);
    if (m - 1.0).abs() > MASS_TOL {
        return Err(UrbanError::MassMismatch { mu: m, nu: 1.0 });
    }
    Ok(())
}

fn check_atoms(nu: &DiscreteMeasure) -> Result<(), UrbanError> {
    if nu.dim() != 2 {
        return Err(UrbanError::InvalidSpec("services must be planar points".into()));
    }
    let m = nu.total_mass();
    if (m - 1.0).abs() > MASS_TOL {
        return Err(UrbanError::MassMismatch { mu: 1.0, nu: m });
    }
    Ok(())
}

/// `|x - y|^p` between every cell centre and every atom.
pub(crate) fn cell_atom_cost(centres: &[[f64; 2]], nu: &DiscreteMeasure, p: f64) -> Array2<f64> {
    let pc = PowerCost::new(p);
    Array2::from_shape_fn((centres.len(), nu.len()), |(i, j)| pc.eval(&centres[i], nu.point(j)))
}

/// Dual ascent on the atom potentials of the semi-discrete problem, used to
/// warm-start the simplex. `cost` is `cells x atoms`.
pub(crate) fn laguerre_hint(a: &[f64], b: &[f64], cost: &Array2<f64>, sweeps: usize) -> Vec<f64> {
    let k = b.len();
    let mut psi = vec![0.0; k];
    let spread = cost.iter().fold(0.0f64, |m, c| m.max(*c));
    let mut step = 0.5 * spread.max(f64::MIN_POSITIVE);
    let mut prev_err = f64::INFINITY;
    let mut share = vec![0.0; k];
    for _ in 0..sweeps {
        share.iter_mut().for_each(|s| *s = 0.0);
        for (i, &w) in a.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let row = cost.row(i);
            let mut best = (f64::INFINITY, 0);
            for j in 0..k {
                let v = row[j] - psi[j];
                if v < best.0 {
                    best = (v, j);
                }
            }
            share[best.1] += w;
        }
        let err: f64 = share.iter().zip(b).map(|(s, w)| (w - s).abs()).sum();
        if err < 1e-9 {
            break;
        }
        if err > prev_err {
            step *= 0.5;
        }
        prev_err = err;
        for j in 0..k {
            psi[j] += step * (b[j] - share[j]) / b[j].max(f64::MIN_POSITIVE) / k as f64;
        }
    }
    psi
}

/// Optimal transport from the cells of `mu` to the atoms of `nu`.
pub(crate) fn grid_transport(
    mu: &ScalarField,
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
    grid: &Grid,
    hint: Option<&[f64]>,
) -> Result<OtSolution, UrbanError> {
    let h2 = grid.cell_area();
    let a: Vec<f64> = mu.values.iter().map(|v| v * h2).collect();
    let b = nu.weights();
    let fresh;
    let hint = match hint {
        Some(h) if h.len() == b.len() => h,
        _ => {
            fresh = laguerre_hint(&a, b, cost, 200);
            &fresh
        }
    };
    Ok(solve_transport_with_hint(&a, b, cost, Some(hint))?)
}

/// `T + F + G` for residents `mu` and services `nu`.
pub fn eval_total(
    mu: &ScalarField,
    nu: &CityNu,
    p: f64,
    spread: &SpreadSpec,
    conc: &ConcentrationSpec,
    grid: &Grid,
) -> Result<ValueTerms, UrbanError> {
    check_probability(mu, grid, "mu")?;
    if !(p >= 1.0) {
        return Err(UrbanError::InvalidSpec(format!("p = {p} must be at least 1")));
    }
    let atoms = nu.as_measure(grid)?;
    check_atoms(&atoms)?;
    let centres = cell_centres(grid);
    let cost = cell_atom_cost(&centres, &atoms, p);
    let transport = grid_transport(mu, &atoms, &cost, grid, None)?.value;
    let spread_value = grid.cell_area() * mu.values.iter().map(|&u| spread.f(u)).sum::<f64>();
    let concentration = match (conc, nu) {
        (ConcentrationSpec::Atomic(_), CityNu::Density(_)) => f64::INFINITY,
        (ConcentrationSpec::Atomic(g), CityNu::Atoms(m)) => m.weights().iter().map(|&a| g.eval(a)).sum(),
        (ConcentrationSpec::Interaction(h), _) => interaction_energy(&atoms, h),
    };
    Ok(ValueTerms {
        transport,
        spread: spread_value,
        concentration,
    })
}

/// `sum_i sum_j w_i w_j h(|y_i - y_j|)` over ordered pairs.
pub fn interaction_energy(nu: &DiscreteMeasure, h: &InteractionKernel) -> f64 {
    let w = nu.weights();
    let mut total = 0.0;
    for i in 0..nu.len() {
        for j in 0..nu.len() {
            if i != j {
                let (a, b) = (nu.point(i), nu.point(j));
                total += w[i] * w[j] * h.eval((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
    }
    total
}

/// First variation of `mu -> W_p^p(mu, nu)` along `mu1 - mu` for cell
/// densities, against finite differences at each `eps`.
pub fn gateaux_on_grid(
    mu: &ScalarField,
    mu1: &ScalarField,
    nu: &DiscreteMeasure,
    p: f64,
    grid: &Grid,
    eps_list: &[f64],
) -> Result<GateauxReport, UrbanError> {
    check_probability(mu, grid, "mu")?;
    check_probability(mu1, grid, "mu1")?;
    check_atoms(nu)?;
    let a = density_measure(mu, grid)?;
    let b = density_measure(mu1, grid)?;
    Ok(gateaux_check(&a, nu, &b, p, eps_list)?)
}

/// Barycentre of a cell density.
pub fn barycentre(f: &ScalarField, grid: &Grid) -> [f64; 2] {
    let mut s = [0.0; 3];
    for ((i, j), &v) in f.values.indexed_iter() {
        let c = grid.center(i, j);
        s[0] += v * c[0];
        s[1] += v * c[1];
        s[2] += v;
    }
    [s[0] / s[2], s[1] / s[2]]
}

/// Barycentre of weighted points.
pub fn atom_barycentre(nu: &DiscreteMeasure) -> [f64; 2] {
    let mut s = [0.0; 3];
    for (p, &w) in nu.points().zip(nu.weights()) {
        s[0] += w * p[0];
        s[1] += w * p[1];
        s[2] += w;
    }
    [s[0] / s[2], s[1] / s[2]]
}
