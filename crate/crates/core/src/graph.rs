//! Undirected binary graphs, synthetic generators, and the observed/hidden
//! node bookkeeping that defines which adjacency entries must be inferred.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GinError, Result};

/// Undirected graph on nodes `0..n` stored as a dense 0/1 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Array2<f64>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            adjacency: Array2::zeros((n, n)),
        }
    }

    /// Builds a graph from undirected edges. Duplicates and reversed pairs merge.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Graph::empty(n);
        for &(a, b) in edges {
            if a >= n {
                return Err(GinError::Range { id: a, n });
            }
            if b >= n {
                return Err(GinError::Range { id: b, n });
            }
            if a == b {
                return Err(GinError::Parameter(format!("self-loop on node {a}")));
            }
            g.add_edge(a, b);
        }
        Ok(g)
    }

    /// Accepts any square matrix; entries > 0.5 are edges. Must be symmetric
    /// with an empty diagonal.
    pub fn from_adjacency(adjacency: Array2<f64>) -> Result<Self> {
        let (r, c) = adjacency.dim();
        if r != c {
            return Err(GinError::shape("graph", &[r], &[c]));
        }
        let bin = adjacency.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
        for i in 0..r {
            if bin[[i, i]] != 0.0 {
                return Err(GinError::Parameter(format!("self-loop on node {i}")));
            }
            for j in (i + 1)..r {
                if bin[[i, j]] != bin[[j, i]] {
                    return Err(GinError::Parameter(format!(
                        "adjacency not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Graph { adjacency: bin })
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[[a, b]] != 0.0
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        self.adjacency[[a, b]] = 1.0;
        self.adjacency[[b, a]] = 1.0;
    }

    fn remove_edge(&mut self, a: usize, b: usize) {
        self.adjacency[[a, b]] = 0.0;
        self.adjacency[[b, a]] = 0.0;
    }

    pub fn edge_count(&self) -> usize {
        (self.adjacency.sum() / 2.0).round() as usize
    }

    /// Edges as `(a, b)` with `a < b`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.adjacency
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| self.adjacency.row(i).iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.n() == 0 || self.largest_component().len() == self.n()
    }

    fn largest_component(&self) -> Vec<usize> {
        let n = self.n();
        let adj: Vec<Vec<usize>> = (0..n).map(|i| self.neighbors(i)).collect();
        let mut seen = vec![false; n];
        let mut best = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut k = 0;
            while k < comp.len() {
                let u = comp[k];
                k += 1;
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            if comp.len() > best.len() {
                best = comp;
            }
        }
        best.sort_unstable();
        best
    }

    /// Writes the `src,dst` edge list.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["src", "dst"])?;
        for (a, b) in self.edges() {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush().map_err(|e| GinError::io(path, e))?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> GinError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GinError::io(path, io),
        other => GinError::Serde(format!("{other:?}")),
    }
}

fn check_prob(p: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(GinError::Parameter(format!("{name} = {p} not in [0, 1]")));
    }
    Ok(())
}

/// Erdős–Rényi G(n, p).
pub fn generate_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(GinError::Parameter(format!("ER needs n >= 2, got {n}")));
    }
    check_prob(p, "p")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                g.add_edge(i, j);
            }
        }
    }
    Ok(g)
}

/// Watts–Strogatz small world: ring lattice with `k` nearest neighbors, then
/// each clockwise edge has its far endpoint rewired with probability `p_rewire`.
pub fn generate_ws(n: usize, k: usize, p_rewire: f64, seed: u64) -> Result<Graph> {
    if k % 2 != 0 {
        return Err(GinError::Parameter(format!("WS needs even k, got {k}")));
    }
    if k >= n {
        return Err(GinError::Parameter(format!("WS needs k < n, got k={k}, n={n}")));
    }
    check_prob(p_rewire, "p_rewire")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in 1..=k / 2 {
            g.add_edge(i, (i + j) % n);
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.random::<f64>() >= p_rewire || !g.has_edge(u, v) {
                continue;
            }
            let free: Vec<usize> = (0..n).filter(|&w| w != u && !g.has_edge(u, w)).collect();
            if free.is_empty() {
                continue;
            }
            let w = free[rng.random_range(0..free.len())];
            g.remove_edge(u, v);
            g.add_edge(u, w);
        }
    }
    Ok(g)
}

/// Barabási–Albert growth from a ring over the first `m0` nodes; every new
/// node links to `k` distinct existing nodes chosen proportionally to degree.
pub fn generate_ba(n: usize, m0: usize, k: usize, seed: u64) -> Result<Graph> {
    if k < 1 || m0 < k {
        return Err(GinError::Parameter(format!(
            "BA needs m0 >= k >= 1, got m0={m0}, k={k}"
        )));
    }
    if n < m0 {
        return Err(GinError::Parameter(format!("BA needs n >= m0, got n={n}, m0={m0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(n);
    if m0 == 2 {
        g.add_edge(0, 1);
    } else if m0 > 2 {
        for i in 0..m0 {
            g.add_edge(i, (i + 1) % m0);
        }
    }
    // every edge endpoint appears once, so uniform draws are degree-proportional
    let mut endpoints: Vec<usize> = g.edges().into_iter().flat_map(|(a, b)| [a, b]).collect();
    for new in m0..n {
        let mut targets = BTreeSet::new();
        while targets.len() < k {
            let t = if endpoints.is_empty() {
                rng.random_range(0..new)
            } else {
                endpoints[rng.random_range(0..endpoints.len())]
            };
            targets.insert(t);
        }
        for t in targets {
            g.add_edge(new, t);
            endpoints.push(new);
            endpoints.push(t);
        }
    }
    Ok(g)
}

/// Split of the node set into observed and hidden nodes, both sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePartition {
    n: usize,
    observed: Vec<usize>,
    hidden: Vec<usize>,
}

impl NodePartition {
    pub fn new(n: usize, hidden: &[usize]) -> Result<Self> {
        let mut is_hidden = vec![false; n];
        for &h in hidden {
            if h >= n {
                return Err(GinError::Range { id: h, n });
            }
            if is_hidden[h] {
                return Err(GinError::Parameter(format!("hidden node {h} listed twice")));
            }
            is_hidden[h] = true;
        }
        let observed = (0..n).filter(|&i| !is_hidden[i]).collect();
        let hidden = (0..n).filter(|&i| is_hidden[i]).collect();
        Ok(NodePartition {
            n,
            observed,
            hidden,
        })
    }

    pub fn all_observed(n: usize) -> Self {
        NodePartition {
            n,
            observed: (0..n).collect(),
            hidden: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden.len()
    }

    /// Node ids with observed nodes first, then hidden nodes.
    pub fn canonical_order(&self) -> Vec<usize> {
        self.observed.iter().chain(&self.hidden).copied().collect()
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        self.hidden.binary_search(&i).is_ok()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct File<'a> {
            n: usize,
            hidden: &'a [usize],
        }
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(&File {
            n: self.n,
            hidden: &self.hidden,
        })?;
        std::fs::write(path, body).map_err(|e| GinError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            n: usize,
            hidden: Vec<usize>,
        }
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GinError::io(path, e))?;
        let f: File = serde_json::from_str(&text)?;
        NodePartition::new(f.n, &f.hidden)
    }
}

/// Picks `n_hidden` nodes uniformly at random as hidden.
pub fn partition_nodes(g: &Graph, n_hidden: usize, seed: u64) -> Result<NodePartition> {
    let n = g.n();
    if n_hidden >= n {
        return Err(GinError::Parameter(format!(
            "n_hidden = {n_hidden} must be < n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = index::sample(&mut rng, n, n_hidden).into_vec();
    NodePartition::new(n, &hidden)
}

/// Boolean matrix marking adjacency entries with at least one hidden endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMask {
    mask: Array2<bool>,
}

impl AdjacencyMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn n(&self) -> usize {
        self.mask.nrows()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.mask
    }

    /// Masked pairs `(i, j)` with `i < j`.
    pub fn upper_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.mask[[i, j]] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Mask covering every off-diagonal entry (reconstruction scoring).
    pub fn full(n: usize) -> Self {
        let mut mask = Array2::from_elem((n, n), true);
        for i in 0..n {
            mask[[i, i]] = false;
        }
        AdjacencyMask { mask }
    }

    pub fn from_array(mask: Array2<bool>) -> Self {
        AdjacencyMask { mask }
    }
}

pub fn unobserved_mask(p: &NodePartition) -> AdjacencyMask {
    let n = p.n();
    let mut mask = Array2::from_elem((n, n), false);
    for &h in p.hidden() {
        mask.row_mut(h).fill(true);
        mask.column_mut(h).fill(true);
    }
    AdjacencyMask { mask }
}

/// Reads a `src,dst` CSV edge list.
///
/// Without `declared_n` the node count is `max id + 1` and every id below it
/// must occur in some edge. With `declared_n`, ids must be smaller than it.
pub fn load_edge_list(path: impl AsRef<Path>, declared_n: Option<usize>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GinError::io(path, e))?;
    parse_edge_list(&text, declared_n)
}

pub fn parse_edge_list(text: &str, declared_n: Option<usize>) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "src,dst" => {}
        Some((_, h)) => {
            return Err(GinError::Parse {
                line: 1,
                msg: format!("expected header `src,dst`, found `{h}`"),
            })
        }
        None => {
            return Err(GinError::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(GinError::Parse {
                line: line_no,
                msg: format!("expected 2 fields, found {}", parts.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| GinError::Parse {
                line: line_no,
                msg: format!("bad node id `{s}`: {e}"),
            })
        };
        let (a, b) = (parse(parts[0])?, parse(parts[1])?);
        if a == b {
            return Err(GinError::Parse {
                line: line_no,
                msg: format!("self-loop on node {a}"),
            });
        }
        if let Some(n) = declared_n {
            if a >= n || b >= n {
                return Err(GinError::Range { id: a.max(b), n });
            }
        }
        edges.push((a, b));
    }
    let n = match declared_n {
        Some(n) => n,
        None => {
            let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
            let mut present = vec![false; n];
            for &(a, b) in &edges {
                present[a] = true;
                present[b] = true;
            }
            if let Some(gap) = present.iter().position(|&p| !p) {
                return Err(GinError::Parameter(format!(
                    "node ids are not contiguous: id {gap} never appears"
                )));
            }
            n
        }
    };
    Graph::from_edges(n, &edges)
}

/// Summary statistics of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralStats {
    pub average_degree: f64,
    /// Mean shortest path length over the largest connected component.
    pub average_path_length: f64,
    pub density: f64,
    pub average_clustering: f64,
}

impl StructuralStats {
    /// Average degree as printed in summary tables.
    pub fn rounded_degree(&self) -> u64 {
        self.average_degree.round() as u64
    }
}

pub fn structural_stats(g: &Graph) -> StructuralStats {
    let n = g.n();
    let e = g.edge_count() as f64;
    let nf = n as f64;
    let adj: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i)).collect();

    let average_degree = if n == 0 { 0.0 } else { 2.0 * e / nf };
    let density = if n < 2 { 0.0 } else { 2.0 * e / (nf * (nf - 1.0)) };

    let mut clustering_sum = 0.0;
    for nb in &adj {
        let k = nb.len();
        if k < 2 {
            continue;
        }
        let mut links = 0usize;
        for (x, &a) in nb.iter().enumerate() {
            for &b in &nb[x + 1..] {
                if g.has_edge(a, b) {
                    links += 1;
                }
            }
        }
        clustering_sum += 2.0 * links as f64 / (k * (k - 1)) as f64;
    }
    let average_clustering = if n == 0 { 0.0 } else { clustering_sum / nf };

    let comp = g.largest_component();
    let average_path_length = if comp.len() < 2 {
        0.0
    } else {
        let mut total = 0usize;
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for &s in &comp {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        total += dist[v];
                        queue.push_back(v);
                    }
                }
            }
        }
        let c = comp.len() as f64;
        total as f64 / (c * (c - 1.0))
    };

    StructuralStats {
        average_degree,
        average_path_length,
        density,
        average_clustering,
    }
}

/// Bundled empirical networks.
pub mod datasets {
    use super::{parse_edge_list, Graph};

    pub const KARATE_CSV: &str = include_str!("../data/karate.csv");

    /// Zachary's karate club: 34 nodes, 78 edges.
    pub fn karate() -> Graph {
        parse_edge_list(KARATE_CSV, None).expect("bundled karate edge list is valid")
    }
}
