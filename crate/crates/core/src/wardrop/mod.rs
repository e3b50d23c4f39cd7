//! Congested traffic on networks: `min J(i) = sum_e H_e(i_e)` over link
//! flows induced by an origin-destination demand, and Wardrop equilibrium
//! certificates.

pub mod congestion;
mod frank_wolfe;
mod io;
pub(crate) mod oracle;
pub mod suite;
mod verify;

use ndarray::Array2;
use thiserror::Error;

use crate::kantorovich::OtError;
use crate::network::{shortest_distances, EdgeMetric, Network, NetworkError};

pub use congestion::{check_consistency, Congestion, CongestionError, CongestionSpec, CustomCongestion, Scaled};
pub use frank_wolfe::{solve_fixed_demand, solve_variable_demand, SolverOptions};
pub use io::{load_network, parse_demand};
pub use oracle::brute_force_equilibrium;
pub use verify::{verify_wardrop, PathFlow, WardropReport};

/// Clamp for divisions by shortest-path costs, which vanish when `g(0) = 0`.
pub const DIST_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WardropError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Transport(#[from] OtError),
    #[error(transparent)]
    Congestion(#[from] CongestionError),
    #[error("negative flow {value} on edge {edge}")]
    NegativeFlow { edge: usize, value: f64 },
    #[error("{got} entries given, the network has {expected} edges")]
    EdgeCount { got: usize, expected: usize },
    #[error("demand matrix is {rows}x{cols}, expected {sources}x{dests}")]
    DemandShape {
        rows: usize,
        cols: usize,
        sources: usize,
        dests: usize,
    },
    #[error("negative demand {value} for pair ({source_pos}, {dest_pos})")]
    NegativeDemand {
        source_pos: usize,
        dest_pos: usize,
        value: f64,
    },
    #[error("demand marginals differ: {mu} leaves, {nu} arrives")]
    MassMismatch { mu: f64, nu: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("no convergence after {} iterations (relative gap {:.3e})", .0.iterations, .0.relative_gap)]
    MaxIterations(Box<EquilibriumResult>),
    #[error("flow decomposition left residual flow {residual}")]
    DecompositionFailure { residual: f64 },
    #[error("the brute-force oracle needs at most {limit} paths, the network has {paths}")]
    OracleTooLarge { paths: usize, limit: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Edge intensities `i_e >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkFlow(pub Vec<f64>);

impl LinkFlow {
    pub fn zeros(n_edges: usize) -> Self {
        LinkFlow(vec![0.0; n_edges])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Origin-destination demand, indexed by position in `Network::sources()`
/// and `Network::dests()`.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandSpec {
    Fixed(Array2<f64>),
    Marginals { mu: Vec<f64>, nu: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub flows: LinkFlow,
    /// Realized demand coupling, sources by destinations.
    pub coupling: Array2<f64>,
    /// `g(i_e)` per edge.
    pub xi: EdgeMetric,
    pub objective: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration.
    pub history: Vec<f64>,
    /// Link flows per origin-destination pair, flattened as
    /// `[(a * n_dests + b) * n_edges + e]`. Empty when unknown.
    pub pair_flows: Vec<f64>,
}

fn check_flows(flows: &LinkFlow, n: usize) -> Result<(), WardropError> {
    if flows.0.len() != n {
        return Err(WardropError::EdgeCount {
            got: flows.0.len(),
            expected: n,
        });
    }
    match flows.0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        Some((edge, &value)) => Err(WardropError::NegativeFlow { edge, value }),
        None => Ok(()),
    }
}

/// `J = sum_e H_e(i_e)`.
pub fn objective<C: Congestion>(flows: &LinkFlow, costs: &[C]) -> Result<f64, WardropError> {
    check_flows(flows, costs.len())?;
    Ok(flows.0.iter().zip(costs).map(|(&t, h)| h.cost(t)).sum())
}

/// `xi_e = g_e(i_e)`.
pub fn link_metric<C: Congestion>(flows: &LinkFlow, costs: &[C]) -> Result<EdgeMetric, WardropError> {
    check_flows(flows, costs.len())?;
    Ok(EdgeMetric(
        flows.0.iter().zip(costs).map(|(&t, h)| h.marginal(t)).collect(),
    ))
}

/// Routes every origin-destination mass along its witness shortest path.
pub fn all_or_nothing(net: &Network, xi: &EdgeMetric, coupling: &Array2<f64>) -> Result<LinkFlow, WardropError> {
    check_demand_shape(net, coupling)?;
    let table = shortest_distances(net, xi)?;
    Ok(assign(net, &table, coupling)?.0)
}

/// All-or-nothing assignment, returning aggregate and per-pair flows.
fn assign(
    net: &Network,
    table: &crate::network::DistanceTable,
    coupling: &Array2<f64>,
) -> Result<(LinkFlow, Vec<f64>), WardropError> {
    let ne = net.n_edges();
    let nd = coupling.ncols();
    let mut flows = vec![0.0; ne];
    let mut pair_flows = vec![0.0; coupling.len() * ne];
    for ((a, b), &g) in coupling.indexed_iter() {
        if g <= 0.0 {
            continue;
        }
        let base = (a * nd + b) * ne;
        match &table.witness[a][b] {
            Some(path) => path.iter().for_each(|&e| {
                flows[e] += g;
                pair_flows[base + e] += g;
            }),
            None => {
                return Err(NetworkError::Unreachable {
                    origin: net.sources()[a],
                    dest: net.dests()[b],
                }
                .into())
            }
        }
    }
    Ok((LinkFlow(flows), pair_flows))
}

fn check_demand_shape(net: &Network, gamma: &Array2<f64>) -> Result<(), WardropError> {
    let (rows, cols) = gamma.dim();
    if rows != net.sources().len() || cols != net.dests().len() {
        return Err(WardropError::DemandShape {
            rows,
            cols,
            sources: net.sources().len(),
            dests: net.dests().len(),
        });
    }
    if let Some(((source_pos, dest_pos), &value)) = gamma.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(WardropError::NegativeDemand {
            source_pos,
            dest_pos,
            value,
        });
    }
    Ok(())
}

/// Relative gap `(sum xi i - sum d gamma) / sum d gamma`, denominator floored
/// at [`DIST_FLOOR`].
pub fn relative_gap(xi: &EdgeMetric, flows: &LinkFlow, shortest_cost: f64) -> f64 {
    let tstt: f64 = xi.0.iter().zip(&flows.0).map(|(a, b)| a * b).sum();
    (tstt - shortest_cost) / shortest_cost.max(DIST_FLOOR)
}
