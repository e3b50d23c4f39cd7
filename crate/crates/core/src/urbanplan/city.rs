//! The quadratic city: `W_2^2(mu, nu) + int u^2 + lambda int int |x - y|^2 dnu dnu`.
//!
//! The minimizer is known in closed form. Residents follow the paraboloid
//! `u = lambda / (2 lambda + 1) (r^2 - |x - x0|^2)_+`, services are the image
//! of `mu` under the homothety of ratio `1 / (2 lambda + 1)` about the common
//! barycentre `x0`, and unit mass fixes `r^4 = 2 (2 lambda + 1) / (pi lambda)`.

use serde::Serialize;

use super::fixed_point::{run_p_nu, PnuOptions};
use super::{
    atom_barycentre, barycentre, cell_centres, interaction_energy, CityNu, CitySolution, ConcentrationSpec,
    InteractionKernel, SpreadSpec, UrbanError,
};
use crate::beckmann::{Grid, ScalarField};
use crate::kantorovich::DiscreteMeasure;

#[derive(Debug, Clone, PartialEq)]
pub struct CityOptions {
    /// Stop once an outer iteration lowers the value by less than this.
    pub tol: f64,
    /// Services are `atoms_per_side^2` equal atoms.
    pub atoms_per_side: usize,
    pub max_outer: usize,
    /// Tolerance of each residents step.
    pub inner_tol: f64,
}

impl CityOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            atoms_per_side: 12,
            max_outer: 200,
            inner_tol: tol.max(1e-7),
        }
    }
}

/// Comparison of a computed city with the closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityReport {
    pub lambda: f64,
    pub radius: f64,
    pub centre: [f64; 2],
    /// `h^2 sum |mu - u_exact|` with the profile centred at the residents'
    /// barycentre.
    pub profile_l1: f64,
    pub mu_barycentre: [f64; 2],
    pub nu_barycentre: [f64; 2],
    pub barycentre_gap: f64,
    /// Second moment of `nu` over that of `mu`, each about its barycentre.
    pub moment_ratio: f64,
    /// `(2 lambda + 1)^{-2}`.
    pub expected_ratio: f64,
}

/// Radius of the closed-form city in the plane.
pub fn quadratic_city_radius(lambda: f64) -> f64 {
    (2.0 * (2.0 * lambda + 1.0) / (std::f64::consts::PI * lambda)).powf(0.25)
}

/// Closed-form resident density at distance `r` from the centre.
pub fn quadratic_city_profile(lambda: f64, r: f64) -> f64 {
    let big = quadratic_city_radius(lambda);
    lambda / (2.0 * lambda + 1.0) * (big * big - r * r).max(0.0)
}

pub fn solve_quadratic_city(lambda: f64, grid: &Grid, tol: f64) -> Result<(CitySolution, CityReport), UrbanError> {
    solve_quadratic_city_with(lambda, grid, &CityOptions::new(tol))
}

fn second_moment(points: impl Iterator<Item = ([f64; 2], f64)>, about: [f64; 2]) -> f64 {
    let (mut s, mut m) = (0.0, 0.0);
    for (p, w) in points {
        s += w * ((p[0] - about[0]).powi(2) + (p[1] - about[1]).powi(2));
        m += w;
    }
    s / m
}

/// Alternates the residents step against fixed services with the services
/// step: for the current coupling `gamma` the objective is quadratic in the
/// atom positions and minimized by `y_j = (b_j + 2 lambda x0) / (2 lambda + 1)`,
/// with `b_j` the barycentre of the residents sent to atom `j`.
pub fn solve_quadratic_city_with(
    lambda: f64,
    grid: &Grid,
    opts: &CityOptions,
) -> Result<(CitySolution, CityReport), UrbanError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(UrbanError::InvalidSpec(format!("lambda = {lambda} must be positive")));
    }
    if opts.atoms_per_side == 0 {
        return Err(UrbanError::InvalidSpec("need at least one service atom".into()));
    }
    let radius = quadratic_city_radius(lambda);
    let centre = [0.5 * grid.width(), 0.5 * grid.height()];
    if radius > centre[0].min(centre[1]) {
        return Err(UrbanError::DomainTooSmall { radius, center: centre });
    }
    let spread = SpreadSpec::Quadratic;
    let kernel = InteractionKernel::Power { c: lambda, q: 2.0 };
    ConcentrationSpec::Interaction(kernel).validate()?;

    let s = opts.atoms_per_side;
    let k = s * s;
    let lattice: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            vec![
                ((a / s) as f64 + 0.5) * grid.width() / s as f64,
                ((a % s) as f64 + 0.5) * grid.height() / s as f64,
            ]
        })
        .collect();
    let mut nu = DiscreteMeasure::uniform(lattice, 1.0)?;
    let centres = cell_centres(grid);
    let h2 = grid.cell_area();

    let mut inner = PnuOptions::new(opts.inner_tol);
    let mut best: Option<CitySolution> = None;
    let mut history = Vec::new();
    let mut outer = 0;
    let mut converged = false;
    while outer < opts.max_outer {
        outer += 1;
        let state = match run_p_nu(&nu, 2.0, &spread, grid, &inner) {
            Ok(s) => s,
            Err(UrbanError::NoConvergence(_)) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        let mut sol = state.solution;
        sol.terms.concentration = interaction_energy(&nu, &kernel);
        sol.value = sol.terms.total();
        if let Some(prev) = &best {
            if sol.value > prev.value + 1e-10 {
                break;
            }
            if prev.value - sol.value < opts.tol {
                converged = true;
            }
        }
        history.push(sol.value);
        inner.initial = Some(sol.mu.clone());
        inner.hint = Some(state.transport.potentials.psi.clone());

        // services step
        let x0 = barycentre(&sol.mu, grid);
        let plan = &state.transport.plan;
        let w = nu.weights().to_vec();
        let mut coords = Vec::with_capacity(2 * k);
        for j in 0..k {
            let mut b = [0.0; 3];
            for (i, c) in centres.iter().enumerate() {
                let g = plan[[i, j]];
                if g > 0.0 {
                    b[0] += g * c[0];
                    b[1] += g * c[1];
                    b[2] += g;
                }
            }
            let y = if b[2] > 0.0 {
                [b[0] / b[2], b[1] / b[2]]
            } else {
                let p = nu.point(j);
                [p[0], p[1]]
            };
            for d in 0..2 {
                coords.push((y[d] + 2.0 * lambda * x0[d]) / (2.0 * lambda + 1.0));
            }
        }
        let moved = DiscreteMeasure::from_flat(2, coords, w)?;
        best = Some(sol);
        if converged {
            break;
        }
        nu = moved;
    }
    let mut sol = best.expect("first outer iteration succeeded");
    sol.iterations = outer;
    sol.converged = converged;
    sol.history = history;

    let mu_bar = barycentre(&sol.mu, grid);
    let atoms = match &sol.nu {
        CityNu::Atoms(m) => m.clone(),
        CityNu::Density(_) => unreachable!("services are atoms"),
    };
    let nu_bar = atom_barycentre(&atoms);
    let mut profile_l1 = 0.0;
    for ((i, j), &m) in sol.mu.values.indexed_iter() {
        let c = grid.center(i, j);
        let r = (c[0] - mu_bar[0]).hypot(c[1] - mu_bar[1]);
        profile_l1 += h2 * (m - quadratic_city_profile(lambda, r)).abs();
    }
    let mu_moment = second_moment(
        sol.mu
            .values
            .indexed_iter()
            .map(|((i, j), &m)| (grid.center(i, j), m * h2)),
        mu_bar,
    );
    let nu_moment = second_moment(
        atoms.points().zip(atoms.weights()).map(|(p, &w)| ([p[0], p[1]], w)),
        nu_bar,
    );
    let report = CityReport {
        lambda,
        radius,
        centre,
        profile_l1,
        mu_barycentre: mu_bar,
        nu_barycentre: nu_bar,
        barycentre_gap: (mu_bar[0] - nu_bar[0]).hypot(mu_bar[1] - nu_bar[1]),
        moment_ratio: nu_moment / mu_moment,
        expected_ratio: (2.0 * lambda + 1.0).powi(-2),
    };
    if !sol.converged {
        return Err(UrbanError::NoConvergence(Box::new(sol)));
    }
    Ok((sol, report))
}

/// Closed-form resident density sampled at the cell centres, centred at the
/// middle of the domain.
pub fn quadratic_city_density(lambda: f64, grid: &Grid) -> ScalarField {
    let (cx, cy) = (0.5 * grid.width(), 0.5 * grid.height());
    ScalarField::from_fn(grid, |x, y| quadratic_city_profile(lambda, (x - cx).hypot(y - cy)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_normalizes_the_profile() {
        // independent radial quadrature of 2 pi r u(r)
        for lambda in [0.5, 1.0, 4.0] {
            let big = quadratic_city_radius(lambda);
            let n = 100_000;
            let dr = big / n as f64;
            let mass: f64 = (0..n)
                .map(|k| {
                    let r = (k as f64 + 0.5) * dr;
                    2.0 * std::f64::consts::PI * r * quadratic_city_profile(lambda, r) * dr
                })
                .sum();
            assert!((mass - 1.0).abs() < 1e-8, "{lambda}: {mass}");
        }
        assert!((quadratic_city_radius(1.0) - (6.0 / std::f64::consts::PI).powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn small_domain_rejected() {
        let g = Grid::square(16, 1.0).unwrap();
        assert!(matches!(
            solve_quadratic_city(1.0, &g, 1e-6),
            Err(UrbanError::DomainTooSmall { .. })
        ));
    }

    #[test]
    fn coarse_city_matches_closed_form() {
        let g = Grid::square(24, 3.0).unwrap();
        let mut o = CityOptions::new(1e-7);
        o.atoms_per_side = 6;
        let (sol, rep) = solve_quadratic_city_with(1.0, &g, &o).unwrap();
        assert!(rep.profile_l1 < 0.15, "{rep:?}");
        assert!(rep.barycentre_gap < g.h, "{rep:?}");
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        assert!((sol.mu.mass(&g) - 1.0).abs() < 1e-8);
    }
}
