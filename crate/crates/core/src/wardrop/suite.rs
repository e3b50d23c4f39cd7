//! Small reference networks with mixed congestion families, used by the
//! self-test and by cross-checks against the path-space oracle.

use ndarray::{array, Array2};

use super::CongestionSpec;
use crate::network::Network;

use CongestionSpec::{AffinePower, Linear, Monomial, Quadratic};

#[derive(Debug, Clone)]
pub struct SuiteInstance {
    pub name: &'static str,
    pub net: Network,
    pub costs: Vec<CongestionSpec>,
    pub demand: Array2<f64>,
}

/// Variable-demand instance: marginals instead of a demand matrix.
#[derive(Debug, Clone)]
pub struct MarginalInstance {
    pub name: &'static str,
    pub net: Network,
    pub costs: Vec<CongestionSpec>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

fn ap(a: f64, p: f64) -> CongestionSpec {
    AffinePower { a, p }
}

fn instance(
    name: &'static str,
    n: usize,
    arcs: &[(usize, usize, CongestionSpec)],
    sources: Vec<usize>,
    dests: Vec<usize>,
    demand: Array2<f64>,
) -> SuiteInstance {
    SuiteInstance {
        name,
        net: Network::new(n, arcs.iter().map(|a| (a.0, a.1)).collect(), sources, dests),
        costs: arcs.iter().map(|a| a.2).collect(),
        demand,
    }
}

/// Ten fixed-demand instances with 2 to 8 nodes and at most 50 simple paths.
pub fn fixed_demand_suite() -> Vec<SuiteInstance> {
    vec![
        instance(
            "pigou",
            2,
            &[(0, 1, Quadratic), (0, 1, Linear { a: 1.0 })],
            vec![0],
            vec![1],
            array![[1.0]],
        ),
        instance(
            "parallel-three",
            2,
            &[(0, 1, ap(0.5, 2.0)), (0, 1, Monomial { p: 3.0 }), (0, 1, ap(0.2, 1.5))],
            vec![0],
            vec![1],
            array![[2.0]],
        ),
        instance(
            "braess",
            4,
            &[
                (0, 1, Quadratic),
                (0, 2, Linear { a: 1.0 }),
                (1, 3, Linear { a: 1.0 }),
                (2, 3, Quadratic),
                (1, 2, ap(0.1, 2.0)),
            ],
            vec![0],
            vec![3],
            array![[1.0]],
        ),
        instance(
            "diamond-cubic",
            4,
            &[
                (0, 1, Monomial { p: 3.0 }),
                (0, 2, ap(1.0, 2.0)),
                (1, 3, ap(0.5, 3.0)),
                (2, 3, Monomial { p: 2.5 }),
            ],
            vec![0],
            vec![3],
            array![[1.5]],
        ),
        instance(
            "two-origins",
            5,
            &[
                (0, 2, Quadratic),
                (1, 2, ap(0.3, 2.0)),
                (0, 3, ap(0.5, 2.0)),
                (1, 3, Quadratic),
                (2, 4, Monomial { p: 3.0 }),
                (3, 4, ap(0.2, 2.0)),
                (2, 3, Linear { a: 0.1 }),
            ],
            vec![0, 1],
            vec![4],
            array![[1.0], [0.7]],
        ),
        instance(
            "ladder",
            6,
            &[
                (0, 1, Quadratic),
                (0, 2, ap(0.2, 2.0)),
                (1, 2, Linear { a: 0.05 }),
                (2, 1, Linear { a: 0.05 }),
                (1, 3, Monomial { p: 3.0 }),
                (2, 4, Quadratic),
                (3, 4, Linear { a: 0.05 }),
                (4, 3, Linear { a: 0.05 }),
                (3, 5, ap(0.1, 2.0)),
                (4, 5, Monomial { p: 2.5 }),
            ],
            vec![0],
            vec![5],
            array![[2.0]],
        ),
        instance(
            "crossing-pairs",
            6,
            &[
                (0, 2, Quadratic),
                (1, 2, Quadratic),
                (2, 3, ap(0.5, 2.0)),
                (3, 4, Quadratic),
                (3, 5, Quadratic),
                (0, 4, ap(1.0, 3.0)),
                (1, 5, ap(1.0, 3.0)),
                (0, 5, ap(2.0, 2.0)),
            ],
            vec![0, 1],
            vec![4, 5],
            array![[1.0, 0.5], [0.25, 1.0]],
        ),
        instance(
            "grid-2x4",
            8,
            &[
                (0, 1, Quadratic),
                (1, 2, ap(0.1, 2.0)),
                (2, 3, Monomial { p: 3.0 }),
                (4, 5, ap(0.3, 2.0)),
                (5, 6, Quadratic),
                (6, 7, ap(0.1, 1.5)),
                (0, 4, Linear { a: 0.2 }),
                (1, 5, Quadratic),
                (2, 6, ap(0.05, 2.0)),
                (3, 7, Linear { a: 0.2 }),
                (1, 6, ap(0.4, 2.0)),
            ],
            vec![0],
            vec![7],
            array![[3.0]],
        ),
        instance(
            "two-way-ring",
            5,
            &[
                (0, 1, Quadratic),
                (1, 0, Quadratic),
                (1, 2, ap(0.2, 2.0)),
                (2, 1, ap(0.2, 2.0)),
                (2, 3, Monomial { p: 3.0 }),
                (3, 2, Monomial { p: 3.0 }),
                (3, 4, Quadratic),
                (4, 3, Quadratic),
                (4, 0, ap(0.5, 2.0)),
                (0, 4, ap(0.5, 2.0)),
                (0, 2, ap(1.0, 2.0)),
            ],
            vec![0, 1],
            vec![2, 3],
            array![[1.0, 1.0], [0.5, 0.0]],
        ),
        instance(
            "hub-eight",
            8,
            &[
                (0, 2, Quadratic),
                (1, 2, ap(0.1, 2.0)),
                (0, 3, ap(0.3, 2.0)),
                (1, 3, Quadratic),
                (2, 4, Monomial { p: 3.0 }),
                (3, 4, Quadratic),
                (2, 5, ap(0.2, 2.0)),
                (3, 5, ap(0.2, 2.5)),
                (4, 6, Quadratic),
                (5, 6, Linear { a: 0.3 }),
                (4, 7, ap(0.1, 2.0)),
                (5, 7, Quadratic),
                (4, 5, Linear { a: 0.05 }),
            ],
            vec![0, 1],
            vec![6, 7],
            array![[0.8, 0.4], [0.3, 1.2]],
        ),
    ]
}

/// Five instances with two sources and two destinations for the
/// variable-demand solver.
pub fn variable_demand_suite() -> Vec<MarginalInstance> {
    let square = |name, costs: [CongestionSpec; 4], mu: [f64; 2], nu: [f64; 2]| MarginalInstance {
        name,
        net: Network::new(4, vec![(0, 2), (0, 3), (1, 2), (1, 3)], vec![0, 1], vec![2, 3]),
        costs: costs.to_vec(),
        mu: mu.to_vec(),
        nu: nu.to_vec(),
    };
    let mut out = vec![
        square(
            "square-symmetric",
            [Quadratic, ap(1.0, 2.0), ap(1.0, 2.0), Quadratic],
            [0.5, 0.5],
            [0.5, 0.5],
        ),
        square(
            "square-skewed",
            [Quadratic, Quadratic, ap(0.2, 2.0), Monomial { p: 3.0 }],
            [1.0, 0.4],
            [0.6, 0.8],
        ),
        square(
            "square-cheap-cross",
            [ap(2.0, 2.0), Linear { a: 0.5 }, Quadratic, ap(0.4, 3.0)],
            [0.3, 0.9],
            [0.9, 0.3],
        ),
    ];
    let fixed = fixed_demand_suite();
    for (name, k) in [("crossing-pairs-marginals", 6), ("hub-eight-marginals", 9)] {
        let inst = &fixed[k];
        out.push(MarginalInstance {
            name,
            net: inst.net.clone(),
            costs: inst.costs.clone(),
            mu: inst.demand.rows().into_iter().map(|r| r.sum()).collect(),
            nu: inst.demand.columns().into_iter().map(|c| c.sum()).collect(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{enumerate_paths, validate_network, DEFAULT_PATH_CAP};

    #[test]
    fn suite_respects_size_limits() {
        let suite = fixed_demand_suite();
        assert_eq!(suite.len(), 10);
        for inst in &suite {
            validate_network(&inst.net).unwrap();
            let n = inst.net.n_nodes();
            assert!((2..=8).contains(&n), "{}", inst.name);
            let paths = enumerate_paths(&inst.net, n, DEFAULT_PATH_CAP).unwrap();
            assert!(paths.len() <= 50, "{}: {} paths", inst.name, paths.len());
            for c in &inst.costs {
                c.validate().unwrap();
            }
        }
        assert_eq!(variable_demand_suite().len(), 5);
    }
}
