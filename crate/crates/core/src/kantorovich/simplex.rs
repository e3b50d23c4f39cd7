//! Primal network simplex for the balanced transportation problem.
//!
//! Supply nodes `0..m`, demand nodes `m..m+n` and an artificial root `m+n`.
//! Real arcs `i -> m+j` have id `i*n + j`. Artificial arcs: `m*n + k` joins
//! node `k` to the root (toward it for supplies, away from it for demands),
//! and `m*n + m + n + j` runs from demand `j` to the root.
//!
//! The starting basis sends every supply to its cheapest demand under the
//! reduced costs `c_ij - hint_j` and settles each demand's surplus or deficit
//! with the root. Zero-flow artificial arcs point away from the root, so the
//! basis is strongly feasible, and leaving arcs are chosen to keep it so.

use ndarray::Array2;

const NONE: usize = usize::MAX;

pub(crate) struct SimplexOutcome {
    pub plan: Array2<f64>,
    /// Node potentials; reduced cost of arc `(a, b)` is `c + pi[a] - pi[b]`.
    pub supply_pi: Vec<f64>,
    pub demand_pi: Vec<f64>,
    pub pivots: usize,
}

struct Solver {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    art_cost: f64,
    flow: Vec<f64>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    /// `true` when the parent arc points from the node to its parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    /// Tree arcs at each node as `(arc, neighbour, arc points to neighbour)`.
    tree_adj: Vec<Vec<(usize, usize, bool)>>,
    next_arc: usize,
    block: usize,
    eps: f64,
}

impl Solver {
    fn root(&self) -> usize {
        self.m + self.n
    }

    fn n_arcs(&self) -> usize {
        self.m * self.n + self.m + 2 * self.n
    }

    fn endpoints(&self, arc: usize) -> (usize, usize) {
        let mn = self.m * self.n;
        if arc < mn {
            (arc / self.n, self.m + arc % self.n)
        } else {
            let k = arc - mn;
            if k < self.m {
                (k, self.root())
            } else if k < self.m + self.n {
                (self.root(), k)
            } else {
                (k - self.n, self.root())
            }
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.m * self.n {
            self.cost[arc]
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let (a, b) = self.endpoints(arc);
        self.arc_cost(arc) + self.pi[a] - self.pi[b]
    }

    fn new(supply: &[f64], demand: &[f64], cost: &Array2<f64>, hint: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let cmax = cost.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
        // any flow through the root costs 2 * art_cost > max |c| more than a
        // direct arc, so artificial arcs end up empty
        let art_cost = cmax + 1.0;
        let root = m + n;
        let n_arcs = m * n + m + 2 * n;
        let mut s = Solver {
            m,
            n,
            cost: cost.iter().copied().collect(),
            art_cost,
            flow: vec![0.0; n_arcs],
            parent: vec![NONE; root + 1],
            parent_arc: vec![NONE; root + 1],
            up: vec![false; root + 1],
            depth: vec![0; root + 1],
            pi: vec![0.0; root + 1],
            tree_adj: vec![Vec::new(); root + 1],
            next_arc: 0,
            block: ((n_arcs as f64).sqrt().ceil() as usize).max(16),
            eps: 1e-12 * (cmax + 1.0),
        };
        let mut inflow = vec![0.0; n];
        let mut target = vec![0; m];
        for i in 0..m {
            let mut best = 0;
            let mut best_val = f64::INFINITY;
            for j in 0..n {
                let v = cost[[i, j]] - hint[j];
                if v < best_val {
                    best_val = v;
                    best = j;
                }
            }
            target[i] = best;
            inflow[best] += supply[i];
        }
        for j in 0..n {
            let node = m + j;
            let excess = inflow[j] - demand[j];
            let arc = if excess > 0.0 {
                s.up[node] = true;
                s.flow[m * n + m + n + j] = excess;
                m * n + m + n + j
            } else {
                s.flow[m * n + node] = -excess;
                m * n + node
            };
            s.parent[node] = root;
            s.parent_arc[node] = arc;
            let toward_root = s.up[node];
            s.tree_adj[node].push((arc, root, toward_root));
            s.tree_adj[root].push((arc, node, !toward_root));
        }
        for i in 0..m {
            let node = m + target[i];
            let arc = i * n + target[i];
            s.parent[i] = node;
            s.parent_arc[i] = arc;
            s.up[i] = true;
            s.flow[arc] = supply[i];
            s.tree_adj[i].push((arc, node, true));
            s.tree_adj[node].push((arc, i, false));
        }
        for j in 0..n {
            s.rehang(m + j);
        }
        s
    }

    /// Block pricing: the most negative reduced cost within the first block
    /// that contains a violation.
    fn entering_arc(&mut self) -> Option<usize> {
        let (m, n) = (self.m, self.n);
        let mn = m * n;
        let total = self.n_arcs();
        let mut scanned = 0;
        let mut best = NONE;
        let mut best_rc = -self.eps;
        let mut in_block = 0;
        let mut arc = self.next_arc;
        while scanned < total {
            let step = if arc < mn {
                // a run of real arcs along one row
                let (i, j0) = (arc / n, arc % n);
                let j1 = n.min(j0 + self.block - in_block);
                let row = &self.cost[i * n..(i + 1) * n];
                let pi_i = self.pi[i];
                let pi_d = &self.pi[m..m + n];
                for j in j0..j1 {
                    let rc = row[j] + pi_i - pi_d[j];
                    if rc < best_rc {
                        best_rc = rc;
                        best = i * n + j;
                    }
                }
                j1 - j0
            } else {
                let rc = self.reduced_cost(arc);
                if rc < best_rc {
                    best_rc = rc;
                    best = arc;
                }
                1
            };
            scanned += step;
            in_block += step;
            arc += step;
            if arc == total {
                arc = 0;
            }
            if in_block >= self.block {
                if best != NONE {
                    self.next_arc = arc;
                    return Some(best);
                }
                in_block = 0;
            }
        }
        if best != NONE {
            self.next_arc = arc;
            Some(best)
        } else {
            None
        }
    }

    fn pivot(&mut self, entering: usize) {
        let (u, v) = self.endpoints(entering);
        // the cycle is entering arc u -> v, then v .. join, then join .. u
        let mut a = u;
        let mut b = v;
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        let join = a;

        // Flow is pushed along u -> v. On the u side the cycle runs from the
        // join down to u, so an arc loses flow when it points child -> parent
        // against that direction. On the v side it runs from v up to the join.
        let mut delta = f64::INFINITY;
        let mut leave_node = NONE;
        let mut leave_on_u_side = true;
        let mut w = u;
        while w != join {
            if self.up[w] {
                let f = self.flow[self.parent_arc[w]];
                if f < delta {
                    delta = f;
                    leave_node = w;
                    leave_on_u_side = true;
                }
            }
            w = self.parent[w];
        }
        let mut w = v;
        while w != join {
            if !self.up[w] {
                let f = self.flow[self.parent_arc[w]];
                if f <= delta {
                    delta = f;
                    leave_node = w;
                    leave_on_u_side = false;
                }
            }
            w = self.parent[w];
        }
        assert!(leave_node != NONE, "transportation problem cannot be unbounded");

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut w = u;
            while w != join {
                let arc = self.parent_arc[w];
                if self.up[w] {
                    self.flow[arc] -= delta;
                } else {
                    self.flow[arc] += delta;
                }
                w = self.parent[w];
            }
            let mut w = v;
            while w != join {
                let arc = self.parent_arc[w];
                if self.up[w] {
                    self.flow[arc] += delta;
                } else {
                    self.flow[arc] -= delta;
                }
                w = self.parent[w];
            }
        }
        let leaving = self.parent_arc[leave_node];
        self.flow[leaving] = 0.0;

        // detach the subtree below the leaving arc and hang it from the
        // entering arc
        let old_parent = self.parent[leave_node];
        remove_arc(&mut self.tree_adj[leave_node], leaving);
        remove_arc(&mut self.tree_adj[old_parent], leaving);
        self.tree_adj[u].push((entering, v, true));
        self.tree_adj[v].push((entering, u, false));
        let (inner, outer) = if leave_on_u_side { (u, v) } else { (v, u) };
        self.parent[inner] = outer;
        self.parent_arc[inner] = entering;
        self.up[inner] = inner == u;
        self.rehang(inner);
    }

    /// Recomputes parent pointers, depths and potentials below `top`, whose
    /// own parent fields are already set.
    fn rehang(&mut self, top: usize) {
        let mut stack = vec![top];
        while let Some(node) = stack.pop() {
            let arc = self.parent_arc[node];
            let p = self.parent[node];
            self.depth[node] = self.depth[p] + 1;
            let c = self.arc_cost(arc);
            self.pi[node] = if self.up[node] { self.pi[p] - c } else { self.pi[p] + c };
            for k in 0..self.tree_adj[node].len() {
                let (child_arc, child, away) = self.tree_adj[node][k];
                if child_arc == arc {
                    continue;
                }
                self.parent[child] = node;
                self.parent_arc[child] = child_arc;
                self.up[child] = !away;
                stack.push(child);
            }
        }
    }
}

fn remove_arc(list: &mut Vec<(usize, usize, bool)>, arc: usize) {
    if let Some(pos) = list.iter().position(|e| e.0 == arc) {
        list.swap_remove(pos);
    }
}

/// Solves `min <c, x>` over `x >= 0` with row sums `supply` and column sums
/// `demand`. Both must be strictly positive and have equal totals.
/// `hint` holds guesses for the demand-side potentials (zeros are fine).
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &Array2<f64>, hint: &[f64]) -> SimplexOutcome {
    let (m, n) = (supply.len(), demand.len());
    let mut s = Solver::new(supply, demand, cost, hint);
    let mut pivots = 0;
    while let Some(arc) = s.entering_arc() {
        s.pivot(arc);
        pivots += 1;
    }
    let mut plan = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            plan[[i, j]] = s.flow[i * n + j].max(0.0);
        }
    }
    SimplexOutcome {
        plan,
        supply_pi: s.pi[..m].to_vec(),
        demand_pi: s.pi[m..m + n].to_vec(),
        pivots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_picks_cheaper_matching() {
        let cost = ndarray::array![[0.5, 2.0], [0.5, 1.0]];
        let out = solve(&[0.5, 0.5], &[0.5, 0.5], &cost, &[0.0; 2]);
        assert!((out.plan[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((out.plan[[1, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn potentials_are_tight_on_support() {
        let cost = ndarray::array![[3.0, 1.0, 4.0], [1.0, 5.0, 9.0], [2.0, 6.0, 5.0]];
        let out = solve(&[1.0, 2.0, 3.0], &[2.5, 0.5, 3.0], &cost, &[0.0; 3]);
        for i in 0..3 {
            for j in 0..3 {
                let rc = cost[[i, j]] + out.supply_pi[i] - out.demand_pi[j];
                assert!(rc > -1e-12);
                if out.plan[[i, j]] > 1e-12 {
                    assert!(rc.abs() < 1e-12);
                }
            }
        }
    }
}
