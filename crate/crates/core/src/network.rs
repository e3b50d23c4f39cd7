//! Directed networks with sources and destinations, and shortest-path
//! machinery under a nonnegative per-edge metric.
//!
//! Nodes and edges are dense 0-based ids. Parallel edges are allowed, self
//! loops are not. Shortest paths break ties by the lowest lexicographic
//! edge-id sequence so that witnesses are reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Default cap on the number of simple paths produced by [`enumerate_paths`].
pub const DEFAULT_PATH_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("edge {edge} references node {node}, but the network has {n_nodes} nodes")]
    DanglingEdge { edge: usize, node: usize, n_nodes: usize },
    #[error("edge {edge} is a self loop at node {node}")]
    SelfLoop { edge: usize, node: usize },
    #[error("the network has no sources")]
    NoSources,
    #[error("the network has no destinations")]
    NoDestinations,
    #[error("terminal {node} is not a valid node id")]
    BadTerminal { node: usize },
    #[error("destination {dest} is unreachable from {origin}")]
    Unreachable { origin: usize, dest: usize },
    #[error("negative metric {value} on edge {edge}")]
    NegativeMetric { edge: usize, value: f64 },
    #[error("metric has {got} entries, expected {expected}")]
    MetricLength { got: usize, expected: usize },
    #[error("more than {cap} simple paths")]
    PathExplosion { cap: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A finite directed graph with source and destination sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n_nodes: usize,
    labels: Vec<String>,
    edges: Vec<(usize, usize)>,
    sources: Vec<usize>,
    dests: Vec<usize>,
}

impl Network {
    /// Builds a network from raw ids. Labels default to the decimal node id.
    /// The result is not validated; call [`validate_network`].
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>, sources: Vec<usize>, dests: Vec<usize>) -> Self {
        let labels = (0..n_nodes).map(|i| i.to_string()).collect();
        Self {
            n_nodes,
            labels,
            edges,
            sources,
            dests,
        }
    }

    /// Replaces the node labels. Panics if the count does not match.
    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.n_nodes, "label count must equal node count");
        self.labels = labels;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn dests(&self) -> &[usize] {
        &self.dests
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn node_by_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Outgoing edge ids per node, ascending.
    pub fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for (e, &(t, _)) in self.edges.iter().enumerate() {
            if t < self.n_nodes {
                out[t].push(e);
            }
        }
        out
    }

    /// Incoming edge ids per node, ascending.
    pub fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.n_nodes];
        for (e, &(_, h)) in self.edges.iter().enumerate() {
            if h < self.n_nodes {
                inc[h].push(e);
            }
        }
        inc
    }

    /// Sum of `xi` along a path of edge ids.
    pub fn path_length(&self, path: &[usize], xi: &EdgeMetric) -> f64 {
        path.iter().map(|&e| xi.0[e]).sum()
    }

    /// Parses the line-oriented network format:
    ///
    /// ```text
    /// nodes 3
    /// edge a b
    /// edge b c
    /// source a
    /// dest c
    /// ```
    ///
    /// Labels are mapped to ids in order of first appearance. Trailing tokens
    /// after `edge <tail> <head>` are returned per edge so callers can attach
    /// per-edge attributes (the Wardrop loader uses them for cost overrides).
    pub fn parse(text: &str) -> Result<(Network, Vec<Vec<String>>), NetworkError> {
        let mut n_nodes: Option<usize> = None;
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut edges = Vec::new();
        let mut extras = Vec::new();
        let mut sources = Vec::new();
        let mut dests = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            let err = |message: &str| NetworkError::Parse {
                line,
                message: message.to_string(),
            };
            let mut intern = |label: &str| -> Result<usize, NetworkError> {
                if let Some(&id) = ids.get(label) {
                    return Ok(id);
                }
                let id = labels.len();
                if let Some(n) = n_nodes {
                    if id >= n {
                        return Err(NetworkError::Parse {
                            line,
                            message: format!("label '{label}' exceeds declared node count {n}"),
                        });
                    }
                }
                ids.insert(label.to_string(), id);
                labels.push(label.to_string());
                Ok(id)
            };
            match toks[0] {
                "nodes" => {
                    if toks.len() != 2 {
                        return Err(err("expected `nodes <n>`"));
                    }
                    let n: usize = toks[1].parse().map_err(|_| err("bad node count"))?;
                    n_nodes = Some(n);
                }
                "edge" => {
                    if toks.len() < 3 {
                        return Err(err("expected `edge <tail> <head>`"));
                    }
                    let t = intern(toks[1])?;
                    let h = intern(toks[2])?;
                    edges.push((t, h));
                    extras.push(toks[3..].iter().map(|s| s.to_string()).collect());
                }
                "source" => {
                    if toks.len() != 2 {
                        return Err(err("expected `source <label>`"));
                    }
                    let s = intern(toks[1])?;
                    if !sources.contains(&s) {
                        sources.push(s);
                    }
                }
                "dest" => {
                    if toks.len() != 2 {
                        return Err(err("expected `dest <label>`"));
                    }
                    let d = intern(toks[1])?;
                    if !dests.contains(&d) {
                        dests.push(d);
                    }
                }
                other => return Err(err(&format!("unknown directive '{other}'"))),
            }
        }

        let n = n_nodes.ok_or(NetworkError::Parse {
            line: 0,
            message: "missing `nodes <n>` header".into(),
        })?;
        // unlabeled trailing nodes keep a synthetic label
        while labels.len() < n {
            let mut candidate = format!("#{}", labels.len());
            while ids.contains_key(&candidate) {
                candidate.push('_');
            }
            ids.insert(candidate.clone(), labels.len());
            labels.push(candidate);
        }
        let net = Network {
            n_nodes: n,
            labels,
            edges,
            sources,
            dests,
        };
        Ok((net, extras))
    }
}

/// Nonnegative per-edge cost.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMetric(pub Vec<f64>);

impl EdgeMetric {
    pub fn zeros(n_edges: usize) -> Self {
        Self(vec![0.0; n_edges])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, net: &Network) -> Result<(), NetworkError> {
        if self.0.len() != net.n_edges() {
            return Err(NetworkError::MetricLength {
                got: self.0.len(),
                expected: net.n_edges(),
            });
        }
        for (edge, &value) in self.0.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(NetworkError::NegativeMetric { edge, value });
            }
        }
        Ok(())
    }
}

/// A simple path from `source` to `dest` as a sequence of edge ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub source: usize,
    pub dest: usize,
    pub edges: Vec<usize>,
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{} [", self.source, self.dest)?;
        for (k, e) in self.edges.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Paths for one (source, dest) node pair, in lexicographic order.
    pub fn between(&self, source: usize, dest: usize) -> impl Iterator<Item = &Path> {
        self.paths.iter().filter(move |p| p.source == source && p.dest == dest)
    }
}

/// Shortest distances between every source and destination, indexed by
/// position in `Network::sources()` and `Network::dests()`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    /// `dist[a][b]` for source `sources[a]` and destination `dests[b]`;
    /// `f64::INFINITY` when unreachable.
    pub dist: Vec<Vec<f64>>,
    /// Witness path per pair, `None` when unreachable.
    pub witness: Vec<Vec<Option<Vec<usize>>>>,
}

impl DistanceTable {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.dist[a][b]
    }
}

/// Checks structural invariants and that every destination is reachable from
/// at least one source.
pub fn validate_network(net: &Network) -> Result<(), NetworkError> {
    for (edge, &(t, h)) in net.edges.iter().enumerate() {
        for node in [t, h] {
            if node >= net.n_nodes {
                return Err(NetworkError::DanglingEdge {
                    edge,
                    node,
                    n_nodes: net.n_nodes,
                });
            }
        }
        if t == h {
            return Err(NetworkError::SelfLoop { edge, node: t });
        }
    }
    if net.sources.is_empty() {
        return Err(NetworkError::NoSources);
    }
    if net.dests.is_empty() {
        return Err(NetworkError::NoDestinations);
    }
    for &node in net.sources.iter().chain(net.dests.iter()) {
        if node >= net.n_nodes {
            return Err(NetworkError::BadTerminal { node });
        }
    }
    let out = net.out_edges();
    let mut reached = vec![false; net.n_nodes];
    let mut stack: Vec<usize> = net.sources.clone();
    for &s in &net.sources {
        reached[s] = true;
    }
    while let Some(u) = stack.pop() {
        for &e in &out[u] {
            let w = net.edges[e].1;
            if !reached[w] {
                reached[w] = true;
                stack.push(w);
            }
        }
    }
    for &d in &net.dests {
        if !reached[d] {
            return Err(NetworkError::Unreachable {
                origin: net.sources[0],
                dest: d,
            });
        }
    }
    Ok(())
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Distances from every node to `target`, following edges forward.
fn distances_to(net: &Network, in_edges: &[Vec<usize>], xi: &[f64], target: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.n_nodes];
    let mut heap = BinaryHeap::new();
    dist[target] = 0.0;
    heap.push(HeapItem {
        dist: 0.0,
        node: target,
    });
    while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &e in &in_edges[u] {
            let t = net.edges[e].0;
            let cand = d + xi[e];
            if cand < dist[t] {
                dist[t] = cand;
                heap.push(HeapItem { dist: cand, node: t });
            }
        }
    }
    dist
}

fn tight(xi_e: f64, to_head: f64, to_tail: f64) -> bool {
    (xi_e + to_head - to_tail).abs() <= 1e-12 * to_tail.abs().max(1.0)
}

/// Lexicographically smallest simple path from `s` to `d` using only tight
/// edges, where `to_d` holds distances to `d`.
fn lex_min_witness(
    net: &Network,
    out: &[Vec<usize>],
    xi: &[f64],
    to_d: &[f64],
    s: usize,
    d: usize,
) -> Option<Vec<usize>> {
    if !to_d[s].is_finite() {
        return None;
    }
    let mut on_path = vec![false; net.n_nodes];
    let mut path = Vec::new();
    // iterative DFS over tight edges in ascending id order
    let mut stack: Vec<(usize, usize)> = vec![(s, 0)];
    on_path[s] = true;
    while let Some(top) = stack.last_mut() {
        let u = top.0;
        if u == d {
            return Some(path);
        }
        let mut chosen = None;
        while top.1 < out[u].len() {
            let e = out[u][top.1];
            top.1 += 1;
            let w = net.edges[e].1;
            if !on_path[w] && to_d[w].is_finite() && tight(xi[e], to_d[w], to_d[u]) {
                chosen = Some((e, w));
                break;
            }
        }
        match chosen {
            Some((e, w)) => {
                on_path[w] = true;
                path.push(e);
                stack.push((w, 0));
            }
            None => {
                on_path[u] = false;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Shortest distances `d_xi(s, d)` for every source/destination pair, with a
/// deterministic witness path per reachable pair.
pub fn shortest_distances(net: &Network, xi: &EdgeMetric) -> Result<DistanceTable, NetworkError> {
    xi.check(net)?;
    let out = net.out_edges();
    let inc = net.in_edges();
    let mut dist = vec![vec![f64::INFINITY; net.dests.len()]; net.sources.len()];
    let mut witness = vec![vec![None; net.dests.len()]; net.sources.len()];
    for (b, &d) in net.dests.iter().enumerate() {
        let to_d = distances_to(net, &inc, &xi.0, d);
        for (a, &s) in net.sources.iter().enumerate() {
            dist[a][b] = to_d[s];
            witness[a][b] = lex_min_witness(net, &out, &xi.0, &to_d, s, d);
        }
    }
    Ok(DistanceTable { dist, witness })
}

/// All simple paths from each source to each destination with at most
/// `max_len` edges, lexicographically ordered within each pair. Pairs are
/// listed in source-major order.
pub fn enumerate_paths(net: &Network, max_len: usize, cap: usize) -> Result<PathSet, NetworkError> {
    let out = net.out_edges();
    let mut paths = Vec::new();
    for &s in &net.sources {
        for &d in &net.dests {
            if s == d {
                continue;
            }
            let mut on_path = vec![false; net.n_nodes];
            let mut current = Vec::new();
            on_path[s] = true;
            dfs_paths(net, &out, s, d, max_len, cap, &mut on_path, &mut current, &mut paths)?;
        }
    }
    Ok(PathSet { paths })
}

#[allow(clippy::too_many_arguments)]
fn dfs_paths(
    net: &Network,
    out: &[Vec<usize>],
    u: usize,
    d: usize,
    max_len: usize,
    cap: usize,
    on_path: &mut [bool],
    current: &mut Vec<usize>,
    paths: &mut Vec<Path>,
) -> Result<(), NetworkError> {
    if current.len() >= max_len {
        return Ok(());
    }
    for &e in &out[u] {
        let w = net.edges[e].1;
        if on_path[w] {
            continue;
        }
        current.push(e);
        if w == d {
            if paths.len() >= cap {
                return Err(NetworkError::PathExplosion { cap });
            }
            paths.push(Path {
                source: net.edges[current[0]].0,
                dest: d,
                edges: current.clone(),
            });
        } else {
            on_path[w] = true;
            dfs_paths(net, out, w, d, max_len, cap, on_path, current, paths)?;
            on_path[w] = false;
        }
        current.pop();
    }
    Ok(())
}
