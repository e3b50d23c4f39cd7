//! Wardrop certificate: decompose link flows into path flows and measure how
//! far each used path is from being shortest.

use super::{link_metric, Congestion, EquilibriumResult, WardropError, DIST_FLOOR};
use crate::network::{shortest_distances, Network, NetworkError};

/// Path flow below which a path does not count as used.
pub const USED_PATH_FLOW: f64 = 1e-8;

/// Largest unrouted demand, relative to the total, tolerated by the
/// decomposition.
pub const DECOMPOSITION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PathFlow {
    pub source_pos: usize,
    pub dest_pos: usize,
    pub edges: Vec<usize>,
    pub flow: f64,
    /// Length under `xi`.
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WardropReport {
    /// `max (L(w) - d(x, y)) / max(d(x, y), 1e-12)` over used paths.
    pub max_excess: f64,
    /// Pair attaining `max_excess`, by source and destination position.
    pub worst_pair: Option<(usize, usize)>,
    pub path_flows: Vec<PathFlow>,
    /// Demand left unrouted by the decomposition, relative to the total.
    pub residual: f64,
}

/// Shortest path from `s` to `d` under `xi` using only edges whose residual
/// flow exceeds `floor`. Ties prefer the smaller edge id at each relaxation.
fn residual_shortest_path(
    net: &Network,
    out: &[Vec<usize>],
    xi: &[f64],
    residual: &[f64],
    floor: f64,
    s: usize,
    d: usize,
) -> Option<Vec<usize>> {
    let n = net.n_nodes();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[s] = 0.0;
    loop {
        let u = (0..n)
            .filter(|&v| !done[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
        if u == d {
            break;
        }
        done[u] = true;
        for &e in &out[u] {
            if residual[e] <= floor {
                continue;
            }
            let w = net.edge(e).1;
            let cand = dist[u] + xi[e];
            if cand < dist[w] {
                dist[w] = cand;
                pred[w] = e;
            }
        }
    }
    let mut path = Vec::new();
    let mut v = d;
    while v != s {
        let e = pred[v];
        path.push(e);
        v = net.edge(e).0;
    }
    path.reverse();
    Some(path)
}

/// Decomposes the flows of each pair (`result.pair_flows`, or the aggregate
/// `result.flows` shared by all pairs when absent) into path flows for the
/// demand in `result.coupling` by repeatedly routing
/// `min(residual demand, bottleneck)` along the shortest residual path, then
/// compares every used path with the shortest distance under `xi`.
///
/// At most `path_cap` paths are produced per pair.
pub fn verify_wardrop<C: Congestion>(
    net: &Network,
    costs: &[C],
    result: &EquilibriumResult,
    path_cap: usize,
) -> Result<WardropReport, WardropError> {
    super::check_demand_shape(net, &result.coupling)?;
    let xi = link_metric(&result.flows, costs)?;
    let table = shortest_distances(net, &xi)?;
    let out = net.out_edges();
    let ne = net.n_edges();
    let nd = net.dests().len();
    let per_pair = !result.pair_flows.is_empty();
    if per_pair && result.pair_flows.len() != result.coupling.len() * ne {
        return Err(WardropError::EdgeCount {
            got: result.pair_flows.len(),
            expected: result.coupling.len() * ne,
        });
    }
    let mut shared = result.flows.0.clone();
    let total: f64 = result.coupling.sum();
    let scale = total.max(result.flows.0.iter().fold(0.0_f64, |a, &b| a.max(b)));
    let floor = 1e-14 * scale.max(1.0);

    let mut path_flows = Vec::new();
    let mut unrouted = 0.0;
    for ((a, b), &g) in result.coupling.indexed_iter() {
        let (s, d) = (net.sources()[a], net.dests()[b]);
        if g <= 0.0 || s == d {
            continue;
        }
        let mut own;
        let residual: &mut Vec<f64> = if per_pair {
            let base = (a * nd + b) * ne;
            own = result.pair_flows[base..base + ne].to_vec();
            &mut own
        } else {
            &mut shared
        };
        let mut left = g;
        let mut count = 0;
        while left > floor && count < path_cap {
            let Some(path) = residual_shortest_path(net, &out, &xi.0, residual, floor, s, d) else {
                break;
            };
            let bottleneck = path.iter().map(|&e| residual[e]).fold(f64::INFINITY, f64::min);
            let q = left.min(bottleneck);
            for &e in &path {
                residual[e] -= q;
            }
            left -= q;
            count += 1;
            path_flows.push(PathFlow {
                source_pos: a,
                dest_pos: b,
                length: net.path_length(&path, &xi),
                edges: path,
                flow: q,
            });
        }
        unrouted += left.max(0.0);
    }
    let residual = if total > 0.0 { unrouted / total } else { 0.0 };
    if residual > DECOMPOSITION_TOL {
        return Err(WardropError::DecompositionFailure { residual });
    }

    let mut max_excess = 0.0_f64;
    let mut worst_pair = None;
    for p in path_flows.iter().filter(|p| p.flow > USED_PATH_FLOW) {
        let d = table.dist[p.source_pos][p.dest_pos];
        if !d.is_finite() {
            return Err(NetworkError::Unreachable {
                origin: net.sources()[p.source_pos],
                dest: net.dests()[p.dest_pos],
            }
            .into());
        }
        let excess = (p.length - d) / d.max(DIST_FLOOR);
        if worst_pair.is_none() || excess > max_excess {
            max_excess = excess;
            worst_pair = Some((p.source_pos, p.dest_pos));
        }
    }
    Ok(WardropReport {
        max_excess,
        worst_pair,
        path_flows,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::EdgeMetric;
    use crate::wardrop::{CongestionSpec, LinkFlow};
    use ndarray::{array, Array2};

    fn result(flows: Vec<f64>, coupling: Array2<f64>) -> EquilibriumResult {
        EquilibriumResult {
            xi: EdgeMetric::zeros(flows.len()),
            flows: LinkFlow(flows),
            coupling,
            objective: 0.0,
            relative_gap: 0.0,
            iterations: 0,
            converged: true,
            history: Vec::new(),
            pair_flows: Vec::new(),
        }
    }

    #[test]
    fn balanced_parallel_split_is_equilibrium() {
        let net = Network::new(2, vec![(0, 1), (0, 1)], vec![0], vec![1]);
        let costs = [CongestionSpec::Quadratic; 2];
        let r = verify_wardrop(&net, &costs, &result(vec![1.0, 1.0], array![[2.0]]), 100).unwrap();
        assert_eq!(r.path_flows.len(), 2);
        assert!(r.max_excess.abs() < 1e-15);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn unbalanced_split_reports_excess() {
        let net = Network::new(2, vec![(0, 1), (0, 1)], vec![0], vec![1]);
        let costs = [CongestionSpec::Quadratic; 2];
        let r = verify_wardrop(&net, &costs, &result(vec![1.5, 0.5], array![[2.0]]), 100).unwrap();
        // lengths 1.5 and 0.5
        assert!((r.max_excess - 2.0).abs() < 1e-12);
        assert_eq!(r.worst_pair, Some((0, 0)));
    }

    #[test]
    fn missing_flow_is_a_decomposition_failure() {
        let net = Network::new(2, vec![(0, 1)], vec![0], vec![1]);
        let costs = [CongestionSpec::Quadratic];
        assert!(matches!(
            verify_wardrop(&net, &costs, &result(vec![0.5], array![[1.0]]), 100),
            Err(WardropError::DecompositionFailure { .. })
        ));
    }
}
