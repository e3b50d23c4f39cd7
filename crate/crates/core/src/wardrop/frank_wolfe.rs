//! Frank-Wolfe in link space with exact line search.
//!
//! Each iteration linearizes `J` at the current flows, so the descent target
//! is an extreme point: the all-or-nothing assignment of the demand (fixed
//! demand) or of an optimal coupling for the cost `d_xi` (variable demand).
//! With away steps enabled the iterate is also kept as an explicit convex
//! combination of visited extreme points, and mass may be moved away from the
//! worst of them; on small networks this turns the sublinear tail of plain
//! Frank-Wolfe into fast convergence.

use ndarray::Array2;

use super::{
    assign, check_demand_shape, link_metric, objective, relative_gap, Congestion, EquilibriumResult, LinkFlow,
    WardropError,
};
use crate::kantorovich::solve_transport;
use crate::network::{shortest_distances, validate_network, EdgeMetric, Network, NetworkError};

/// Number of bisection steps in the line search.
const LINE_SEARCH_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target relative gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Allow away steps from previously visited extreme points.
    pub away_steps: bool,
}

impl SolverOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            away_steps: true,
        }
    }

    /// Classic Frank-Wolfe: only steps toward the new extreme point.
    pub fn plain(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            away_steps: false,
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::new(1e-6, 100_000)
    }
}

struct Vertex {
    flows: Vec<f64>,
    coupling: Array2<f64>,
    pair_flows: Vec<f64>,
    weight: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest `alpha` in `[0, alpha_max]` that bisection can certify as a
/// descent step for `J(x + alpha d)`.
fn line_search<C: Congestion>(costs: &[C], x: &[f64], d: &[f64], alpha_max: f64) -> f64 {
    let slope = |alpha: f64| -> f64 {
        x.iter()
            .zip(d)
            .zip(costs)
            .map(|((&xe, &de), h)| h.marginal((xe + alpha * de).max(0.0)) * de)
            .sum()
    };
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    if slope(alpha_max) <= 0.0 {
        return alpha_max;
    }
    let (mut lo, mut hi) = (0.0, alpha_max);
    for _ in 0..LINE_SEARCH_STEPS {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Runs the (away-step) Frank-Wolfe loop. `oracle` maps a metric to the
/// minimizing extreme point `(flows, coupling, pair flows)` and its
/// linearized cost.
fn run<C, O>(
    costs: &[C],
    start: (Vec<f64>, Array2<f64>, Vec<f64>),
    mut oracle: O,
    opts: &SolverOptions,
) -> Result<EquilibriumResult, WardropError>
where
    C: Congestion,
    O: FnMut(&EdgeMetric) -> Result<(Vec<f64>, Array2<f64>, Vec<f64>, f64), WardropError>,
{
    if !(opts.tol > 0.0) {
        return Err(WardropError::BadTolerance(opts.tol));
    }
    let mut active = vec![Vertex {
        flows: start.0.clone(),
        coupling: start.1.clone(),
        pair_flows: start.2.clone(),
        weight: 1.0,
    }];
    let mut x = start.0;
    let mut gamma = start.1;
    let mut pairs = start.2;
    let mut history = Vec::new();
    let mut k = 0;
    loop {
        let flows = LinkFlow(x.clone());
        let xi = link_metric(&flows, costs)?;
        let (y, y_coupling, y_pairs, shortest) = oracle(&xi)?;
        let gap = relative_gap(&xi, &flows, shortest);
        if gap <= opts.tol || k == opts.max_iter {
            let result = EquilibriumResult {
                objective: objective(&flows, costs)?,
                flows,
                coupling: gamma,
                xi,
                relative_gap: gap,
                iterations: k,
                converged: gap <= opts.tol,
                history,
                pair_flows: pairs,
            };
            return if result.converged {
                Ok(result)
            } else {
                Err(WardropError::MaxIterations(Box::new(result)))
            };
        }
        k += 1;

        let cost_x = dot(&xi.0, &x);
        let fw_gap = cost_x - shortest;
        let mut away: Option<(usize, f64)> = None;
        if opts.away_steps && active.len() > 1 {
            let (idx, worst) = active
                .iter()
                .enumerate()
                .map(|(i, v)| (i, dot(&xi.0, &v.flows)))
                .fold((0, f64::NEG_INFINITY), |acc, it| if it.1 > acc.1 { it } else { acc });
            if worst - cost_x > fw_gap {
                away = Some((idx, worst));
            }
        }

        match away {
            Some((idx, _)) => {
                let w = active[idx].weight;
                let alpha_max = w / (1.0 - w);
                let d: Vec<f64> = x.iter().zip(&active[idx].flows).map(|(a, b)| a - b).collect();
                let alpha = line_search(costs, &x, &d, alpha_max);
                for v in active.iter_mut() {
                    v.weight *= 1.0 + alpha;
                }
                active[idx].weight -= alpha;
                if alpha >= alpha_max {
                    active.swap_remove(idx);
                }
            }
            None => {
                let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                let alpha = line_search(costs, &x, &d, 1.0);
                if alpha >= 1.0 {
                    active.clear();
                } else {
                    for v in active.iter_mut() {
                        v.weight *= 1.0 - alpha;
                    }
                }
                if alpha > 0.0 {
                    match active
                        .iter_mut()
                        .find(|v| v.pair_flows == y_pairs && v.coupling == y_coupling)
                    {
                        Some(v) => v.weight += alpha,
                        None => active.push(Vertex {
                            flows: y,
                            coupling: y_coupling,
                            pair_flows: y_pairs,
                            weight: alpha,
                        }),
                    }
                }
            }
        }
        active.retain(|v| v.weight > 0.0);
        let total: f64 = active.iter().map(|v| v.weight).sum();
        active.iter_mut().for_each(|v| v.weight /= total);

        x.iter_mut().for_each(|e| *e = 0.0);
        gamma.fill(0.0);
        pairs.iter_mut().for_each(|e| *e = 0.0);
        for v in &active {
            for (xe, ve) in x.iter_mut().zip(&v.flows) {
                *xe += v.weight * ve;
            }
            for (pe, ve) in pairs.iter_mut().zip(&v.pair_flows) {
                *pe += v.weight * ve;
            }
            gamma.scaled_add(v.weight, &v.coupling);
        }
        history.push(objective(&LinkFlow(x.clone()), costs)?);
    }
}

fn check_costs<C>(net: &Network, costs: &[C]) -> Result<(), WardropError> {
    if costs.len() != net.n_edges() {
        return Err(WardropError::EdgeCount {
            got: costs.len(),
            expected: net.n_edges(),
        });
    }
    Ok(())
}

fn zero_metric(costs: &[impl Congestion]) -> EdgeMetric {
    EdgeMetric(costs.iter().map(|h| h.marginal(0.0)).collect())
}

fn zero_demand_result(net: &Network, coupling: Array2<f64>, costs: &[impl Congestion]) -> EquilibriumResult {
    EquilibriumResult {
        flows: LinkFlow::zeros(net.n_edges()),
        coupling,
        xi: zero_metric(costs),
        objective: 0.0,
        relative_gap: 0.0,
        iterations: 0,
        converged: true,
        history: Vec::new(),
        pair_flows: Vec::new(),
    }
}

/// Minimizes `J` for a fixed origin-destination matrix, stopping once the
/// relative gap is at most `tol`. A zero matrix yields zero flows.
pub fn solve_fixed_demand<C: Congestion>(
    net: &Network,
    costs: &[C],
    gamma: &Array2<f64>,
    opts: &SolverOptions,
) -> Result<EquilibriumResult, WardropError> {
    validate_network(net)?;
    check_costs(net, costs)?;
    check_demand_shape(net, gamma)?;
    if gamma.sum() == 0.0 {
        return Ok(zero_demand_result(net, gamma.clone(), costs));
    }
    let oracle = |xi: &EdgeMetric| {
        let table = shortest_distances(net, xi)?;
        let (y, y_pairs) = assign(net, &table, gamma)?;
        let shortest: f64 = gamma
            .indexed_iter()
            .filter(|(_, g)| **g > 0.0)
            .map(|((a, b), g)| table.dist[a][b] * g)
            .sum();
        Ok((y.0, gamma.clone(), y_pairs, shortest))
    };
    let (start, start_pairs) = {
        let table = shortest_distances(net, &zero_metric(costs))?;
        assign(net, &table, gamma)?
    };
    run(costs, (start.0, gamma.clone(), start_pairs), oracle, opts)
}

/// Minimizes `J` jointly over flows and couplings with marginals `mu`
/// (sources) and `nu` (destinations). Each linearized step solves a
/// transport problem with cost `d_xi`.
pub fn solve_variable_demand<C: Congestion>(
    net: &Network,
    costs: &[C],
    mu: &[f64],
    nu: &[f64],
    opts: &SolverOptions,
) -> Result<EquilibriumResult, WardropError> {
    validate_network(net)?;
    check_costs(net, costs)?;
    if mu.len() != net.sources().len() || nu.len() != net.dests().len() {
        return Err(WardropError::DemandShape {
            rows: mu.len(),
            cols: nu.len(),
            sources: net.sources().len(),
            dests: net.dests().len(),
        });
    }
    for (pos, &v) in mu.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(WardropError::NegativeDemand {
                source_pos: pos,
                dest_pos: usize::MAX,
                value: v,
            });
        }
    }
    for (pos, &v) in nu.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(WardropError::NegativeDemand {
                source_pos: usize::MAX,
                dest_pos: pos,
                value: v,
            });
        }
    }
    let (sm, sn): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sm - sn).abs() > 1e-12 * sm.max(sn) {
        return Err(WardropError::MassMismatch { mu: sm, nu: sn });
    }
    let (ns, nd) = (mu.len(), nu.len());
    if sm == 0.0 {
        return Ok(zero_demand_result(net, Array2::zeros((ns, nd)), costs));
    }

    let oracle = |xi: &EdgeMetric| {
        let table = shortest_distances(net, xi)?;
        let finite_max = table
            .dist
            .iter()
            .flatten()
            .filter(|d| d.is_finite())
            .fold(0.0_f64, |a, &d| a.max(d));
        // unreachable pairs are priced out of any optimal coupling
        let penalty = 1e6 * (1.0 + finite_max);
        let cost = Array2::from_shape_fn((ns, nd), |(a, b)| {
            let d = table.dist[a][b];
            if d.is_finite() {
                d
            } else {
                penalty
            }
        });
        let ot = solve_transport(mu, nu, &cost)?;
        let plan = ot.plan;
        for ((a, b), &g) in plan.indexed_iter() {
            if g > 0.0 && !table.dist[a][b].is_finite() {
                return Err(WardropError::Network(NetworkError::Unreachable {
                    origin: net.sources()[a],
                    dest: net.dests()[b],
                }));
            }
        }
        let (y, y_pairs) = assign(net, &table, &plan)?;
        let shortest: f64 = plan
            .indexed_iter()
            .filter(|(_, g)| **g > 0.0)
            .map(|((a, b), g)| table.dist[a][b] * g)
            .sum();
        Ok((y.0, plan, y_pairs, shortest))
    };
    let (start, start_coupling, start_pairs, _) = oracle(&zero_metric(costs))?;
    run(costs, (start, start_coupling, start_pairs), oracle, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wardrop::CongestionSpec;
    use ndarray::array;

    fn pigou() -> (Network, Vec<CongestionSpec>) {
        let net = Network::new(2, vec![(0, 1), (0, 1)], vec![0], vec![1]);
        (net, vec![CongestionSpec::Quadratic, CongestionSpec::Linear { a: 1.0 }])
    }

    fn diamond() -> Network {
        Network::new(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)], vec![0], vec![3])
    }

    #[test]
    fn pigou_equilibrium() {
        let (net, costs) = pigou();
        let r = solve_fixed_demand(&net, &costs, &array![[1.0]], &SolverOptions::default()).unwrap();
        assert!((r.flows.0[0] - 1.0).abs() < 1e-9);
        assert!((r.objective - 0.5).abs() < 1e-9);
        assert!(r.relative_gap <= 1e-6);
    }

    #[test]
    fn zero_demand_gives_zero_flows() {
        let (net, costs) = pigou();
        let r = solve_fixed_demand(&net, &costs, &array![[0.0]], &SolverOptions::default()).unwrap();
        assert_eq!(r.flows.0, vec![0.0, 0.0]);
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.relative_gap, 0.0);
    }

    #[test]
    fn diamond_splits_evenly() {
        let costs = [CongestionSpec::Quadratic; 4];
        for opts in [SolverOptions::default(), SolverOptions::plain(1e-8, 10_000)] {
            let r = solve_fixed_demand(&diamond(), &costs, &array![[2.0]], &opts).unwrap();
            for f in &r.flows.0 {
                assert!((f - 1.0).abs() < 1e-4, "{:?}", r.flows);
            }
        }
    }

    #[test]
    fn objective_never_increases() {
        let net = Network::new(
            4,
            vec![(0, 1), (0, 2), (1, 3), (2, 3), (1, 2), (0, 3)],
            vec![0],
            vec![3],
        );
        let costs = [
            CongestionSpec::Monomial { p: 3.0 },
            CongestionSpec::AffinePower { a: 0.5, p: 2.0 },
            CongestionSpec::Quadratic,
            CongestionSpec::Monomial { p: 1.5 },
            CongestionSpec::Linear { a: 0.1 },
            CongestionSpec::AffinePower { a: 2.0, p: 4.0 },
        ];
        for opts in [SolverOptions::new(1e-9, 5000), SolverOptions::plain(1e-9, 5000)] {
            let r = match solve_fixed_demand(&net, &costs, &array![[3.0]], &opts) {
                Ok(r) => r,
                Err(WardropError::MaxIterations(r)) => *r,
                Err(e) => panic!("{e}"),
            };
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn max_iterations_returns_best_iterate() {
        let net = Network::new(3, vec![(0, 1), (0, 1), (0, 1)], vec![0], vec![1]);
        let costs = [
            CongestionSpec::Monomial { p: 3.0 },
            CongestionSpec::Quadratic,
            CongestionSpec::AffinePower { a: 0.1, p: 1.5 },
        ];
        match solve_fixed_demand(&net, &costs, &array![[5.0]], &SolverOptions::plain(1e-14, 3)) {
            Err(WardropError::MaxIterations(r)) => {
                assert_eq!(r.iterations, 3);
                assert!(!r.converged);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_pair_variable_demand_matches_fixed() {
        let costs = [
            CongestionSpec::Quadratic,
            CongestionSpec::Monomial { p: 3.0 },
            CongestionSpec::AffinePower { a: 1.0, p: 2.0 },
            CongestionSpec::Quadratic,
        ];
        let fixed = solve_fixed_demand(&diamond(), &costs, &array![[2.0]], &SolverOptions::default()).unwrap();
        let var = solve_variable_demand(&diamond(), &costs, &[2.0], &[2.0], &SolverOptions::default()).unwrap();
        assert!((fixed.objective - var.objective).abs() < 1e-6);
    }

    #[test]
    fn cheap_direct_links_give_diagonal_coupling() {
        // s1 -> d1, s2 -> d2 cheap; crossing links expensive
        let net = Network::new(4, vec![(0, 2), (1, 3), (0, 3), (1, 2)], vec![0, 1], vec![2, 3]);
        let costs = [
            CongestionSpec::Quadratic,
            CongestionSpec::Quadratic,
            CongestionSpec::AffinePower { a: 5.0, p: 2.0 },
            CongestionSpec::AffinePower { a: 5.0, p: 2.0 },
        ];
        let r = solve_variable_demand(&net, &costs, &[0.5, 0.5], &[0.5, 0.5], &SolverOptions::default()).unwrap();
        assert!((r.coupling[[0, 0]] - 0.5).abs() < 1e-9);
        assert!((r.coupling[[1, 1]] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn variable_demand_rejects_mass_mismatch() {
        let (net, costs) = pigou();
        assert!(matches!(
            solve_variable_demand(&net, &costs, &[1.0], &[2.0], &SolverOptions::default()),
            Err(WardropError::MassMismatch { .. })
        ));
    }
}
