//! Hotelling competition: influence regions from prices, and prices back
//! from demands through the transport dual.
//!
//! A consumer at `x` buys from the firm minimizing `c(x, x_i) + p_i`. With
//! `nu = sum d_i delta_{x_i}`, the optimal plan from `nu` to the consumers
//! together with `p = -phi` reproduces these choices: the firm-side potential
//! in the `phi + psi <= c` convention is minus the price.

use ndarray::Array2;

use super::{check_mass, solve_transport, DiscreteMeasure, OtError, PowerCost};

#[derive(Debug, Clone, PartialEq)]
pub struct HotellingAssignment {
    /// Chosen firm per consumer point.
    pub firm_of: Vec<usize>,
    /// Consumer mass served by each firm.
    pub demands: Vec<f64>,
}

fn check_firms(firms: &[Vec<f64>], consumers: &DiscreteMeasure) -> Result<(), OtError> {
    if firms.is_empty() {
        return Err(OtError::Invalid("at least one firm is required".into()));
    }
    if firms.iter().any(|f| f.len() != consumers.dim()) {
        return Err(OtError::Invalid("firm and consumer dimensions differ".into()));
    }
    Ok(())
}

fn firm_costs(firms: &[Vec<f64>], consumers: &DiscreteMeasure, cost: PowerCost) -> Array2<f64> {
    Array2::from_shape_fn((firms.len(), consumers.len()), |(i, k)| {
        cost.eval(&firms[i], consumers.point(k))
    })
}

/// Assigns each consumer to `argmin_i c(x, x_i) + p_i`, lowest index on ties.
pub fn hotelling_demands(
    firms: &[Vec<f64>],
    prices: &[f64],
    consumers: &DiscreteMeasure,
    cost: PowerCost,
) -> Result<HotellingAssignment, OtError> {
    check_firms(firms, consumers)?;
    if prices.len() != firms.len() || prices.iter().any(|p| !p.is_finite()) {
        return Err(OtError::Invalid("need one finite price per firm".into()));
    }
    let mut firm_of = Vec::with_capacity(consumers.len());
    let mut demands = vec![0.0; firms.len()];
    for (x, &w) in consumers.points().zip(consumers.weights()) {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for (i, f) in firms.iter().enumerate() {
            let v = cost.eval(x, f) + prices[i];
            if v < best_val {
                best_val = v;
                best = i;
            }
        }
        firm_of.push(best);
        demands[best] += w;
    }
    Ok(HotellingAssignment { firm_of, demands })
}

/// Recovers prices, with the first firm's price set to 0, from the demands
/// they induce.
///
/// Prices consistent with a given plan form a polyhedron; the least element
/// is returned. It is the longest-path solution of
/// `p_j >= p_i + max_{x served by i} [c(x, x_i) - c(x, x_j)]`, and coincides
/// with the generating prices whenever the boundary consumers break their
/// ties toward the lower-index firm.
pub fn hotelling_recover_prices(
    firms: &[Vec<f64>],
    demands: &[f64],
    consumers: &DiscreteMeasure,
    cost: PowerCost,
) -> Result<Vec<f64>, OtError> {
    check_firms(firms, consumers)?;
    if demands.len() != firms.len() {
        return Err(OtError::Invalid("need one demand per firm".into()));
    }
    check_mass(demands, consumers.weights())?;
    let c = firm_costs(firms, consumers, cost);
    let sol = solve_transport(demands, consumers.weights(), &c)?;
    let n = firms.len();

    let mut prices: Vec<f64> = sol.potentials.phi.iter().map(|f| -f).collect();

    // gap[i][j] = max over consumers served by i of c(x, x_i) - c(x, x_j)
    let mut gap = vec![vec![f64::NEG_INFINITY; n]; n];
    let tol = 1e-12 * consumers.total_mass();
    for ((i, k), &g) in sol.plan.indexed_iter() {
        if g > tol {
            for j in 0..n {
                if j != i {
                    let d = c[[i, k]] - c[[j, k]];
                    if d > gap[i][j] {
                        gap[i][j] = d;
                    }
                }
            }
        }
    }
    // Bellman-Ford for longest paths from firm 0; the dual prices certify
    // that no positive cycle exists, so n rounds suffice
    let mut least = vec![f64::NEG_INFINITY; n];
    least[0] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for i in 0..n {
            if least[i] == f64::NEG_INFINITY {
                continue;
            }
            for j in 1..n {
                let cand = least[i] + gap[i][j];
                if cand > least[j] {
                    least[j] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let shift = prices[0];
    for (p, l) in prices.iter_mut().zip(&least) {
        *p = if l.is_finite() { *l } else { *p - shift };
    }
    Ok(prices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(k: usize) -> DiscreteMeasure {
        let xs: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        DiscreteMeasure::on_line(&xs, &vec![1.0 / k as f64; k]).unwrap()
    }

    #[test]
    fn single_firm_takes_everything() {
        let consumers = unit_grid(11);
        let a = hotelling_demands(&[vec![0.3]], &[2.0], &consumers, PowerCost::new(1.0)).unwrap();
        assert!((a.demands[0] - 1.0).abs() < 1e-12);
        let p = hotelling_recover_prices(&[vec![0.3]], &a.demands, &consumers, PowerCost::new(1.0)).unwrap();
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn equal_prices_split_the_line() {
        let consumers = unit_grid(400);
        let firms = [vec![0.0], vec![1.0]];
        let a = hotelling_demands(&firms, &[1.0, 1.0], &consumers, PowerCost::new(1.0)).unwrap();
        assert!((a.demands[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_demands_give_equal_prices() {
        // the centre consumer is split between the two firms
        let consumers = unit_grid(401);
        let firms = [vec![0.0], vec![1.0]];
        let p = hotelling_recover_prices(&firms, &[0.5, 0.5], &consumers, PowerCost::new(1.0)).unwrap();
        assert!(p[0] == 0.0 && p[1].abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn boundary_at_three_quarters() {
        let consumers = unit_grid(401);
        let firms = [vec![0.0], vec![1.0]];
        let a = hotelling_demands(&firms, &[0.0, 0.5], &consumers, PowerCost::new(1.0)).unwrap();
        assert!((a.demands[0] - 301.0 / 401.0).abs() < 1e-12);
        let p = hotelling_recover_prices(&firms, &a.demands, &consumers, PowerCost::new(1.0)).unwrap();
        assert!((p[1] - 0.5).abs() < 1e-9, "{p:?}");
    }
}
