//! Directed communication graphs and the reachability / robustness checks
//! that the learning guarantees are stated in terms of.
//!
//! **Edge direction.** An edge `(i, j)` means agent `i` transmits to agent
//! `j`. The *neighbors* of `j` are therefore its **in-neighbors**
//! `N_j = { i : (i, j) ∈ E }`: the agents whose beliefs `j` reads. Every
//! function in this module that says "neighbor" means in-neighbor.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of agent ids.
pub type AgentSet = BTreeSet<usize>;

/// Largest graph accepted by [`brute_force_strongly_r_robust`].
pub const BRUTE_FORCE_MAX_NODES: usize = 20;

/// Time-invariant directed graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct DirectedGraph {
    n: usize,
    // sorted, deduplicated
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphRepr> for DirectedGraph {
    type Error = Error;

    fn try_from(repr: GraphRepr) -> Result<Self> {
        DirectedGraph::new(repr.n, repr.edges)
    }
}

impl From<DirectedGraph> for GraphRepr {
    fn from(g: DirectedGraph) -> Self {
        GraphRepr {
            n: g.n,
            edges: g.edges().collect(),
        }
    }
}

impl DirectedGraph {
    /// Builds a graph from an edge list. Duplicate edges collapse.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput(
                "graph must have at least one node".into(),
            ));
        }
        let mut in_neighbors = vec![BTreeSet::new(); n];
        let mut out_neighbors = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({i},{j}) has an endpoint outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            in_neighbors[j].insert(i);
            out_neighbors[i].insert(j);
        }
        Ok(DirectedGraph {
            n,
            in_neighbors: in_neighbors
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            out_neighbors: out_neighbors
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
        })
    }

    /// Directed path `0 → 1 → … → n-1`.
    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Directed cycle `0 → 1 → … → n-1 → 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(n, []);
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Complete graph with edges in both directions between every pair.
    pub fn complete(n: usize) -> Result<Self> {
        Self::new(
            n,
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))),
        )
    }

    /// Erdős–Rényi style digraph: each ordered pair is an edge with
    /// probability `p`, drawn from a seeded stream.
    pub fn random(n: usize, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "edge probability {p} outside [0,1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        Self::new(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    /// All edges `(from, to)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, outs)| outs.iter().map(move |&j| (i, j)))
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from < self.n && self.out_neighbors[from].binary_search(&to).is_ok()
    }

    /// In-neighbors of `i` as a sorted slice. Panics if `i` is out of range;
    /// use [`neighbors`] for the checked variant.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// Out-neighbors of `i` as a sorted slice.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    pub fn nodes(&self) -> AgentSet {
        (0..self.n).collect()
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::InvalidInput(format!(
                "agent {i} outside 0..{}",
                self.n
            )));
        }
        Ok(())
    }

    fn check_set(&self, set: &AgentSet, what: &str) -> Result<()> {
        match set.iter().next_back() {
            Some(&max) if max >= self.n => Err(Error::InvalidInput(format!(
                "{what} contains agent {max} outside 0..{}",
                self.n
            ))),
            _ => Ok(()),
        }
    }

    /// Renders the edge-list text format accepted by [`parse_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }
}

/// Parses the edge-list text format: a header line `n=<count>` followed by
/// one `i j` pair per line. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_edge_list(text: &str) -> Result<DirectedGraph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let bad = |line: usize, msg: String| Error::InvalidInput(format!("line {line}: {msg}"));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty edge list: missing `n=<count>` header".into()))?;
    let n = header
        .strip_prefix("n=")
        .and_then(|v| v.trim().parse::<usize>().ok())
        .ok_or_else(|| {
            bad(
                hline,
                format!("expected `n=<count>` header, found `{header}`"),
            )
        })?;

    let mut edges = Vec::new();
    for (line, content) in lines {
        let mut parts = content.split_whitespace();
        let parse = |tok: Option<&str>| tok.and_then(|t| t.parse::<usize>().ok());
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(i), Some(j), None) => edges.push((i, j)),
            _ => return Err(bad(line, format!("expected `i j`, found `{content}`"))),
        }
    }
    DirectedGraph::new(n, edges)
}

/// Reads a graph from an edge-list file.
pub fn read_edge_list(path: impl AsRef<Path>) -> Result<DirectedGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The neighbor set `N_i`: every agent with an edge into `i`.
pub fn neighbors(g: &DirectedGraph, i: usize) -> Result<AgentSet> {
    g.check_node(i)?;
    Ok(g.in_neighbors(i).iter().copied().collect())
}

/// True iff every node of `targets` has a directed path from some node of
/// `sources`. Vacuously true for empty `targets`.
pub fn is_reachable(g: &DirectedGraph, sources: &AgentSet, targets: &AgentSet) -> Result<bool> {
    Ok(unreachable_from(g, sources, targets)?.is_empty())
}

/// The members of `targets` that no node of `sources` can reach.
pub fn unreachable_from(
    g: &DirectedGraph,
    sources: &AgentSet,
    targets: &AgentSet,
) -> Result<AgentSet> {
    g.check_set(sources, "source set")?;
    g.check_set(targets, "target set")?;
    if let Some(shared) = sources.intersection(targets).next() {
        return Err(Error::InvalidInput(format!(
            "source and target sets overlap at agent {shared}"
        )));
    }
    let mut seen = vec![false; g.n];
    let mut queue: VecDeque<usize> = sources.iter().copied().collect();
    for &s in sources {
        seen[s] = true;
    }
    while let Some(u) = queue.pop_front() {
        for &v in g.out_neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    Ok(targets.iter().copied().filter(|&t| !seen[t]).collect())
}

/// Longest shortest-path length over ordered pairs `(u, v)`, `u ≠ v`, with
/// a `u → v` path. Pairs without a path are ignored. Returns `None` when no
/// pair is connected, except for the single-node graph which reports `0`.
///
/// Diagnostic only.
pub fn diameter(g: &DirectedGraph) -> Option<usize> {
    if g.n == 1 {
        return Some(0);
    }
    let mut best: Option<usize> = None;
    let mut dist = vec![usize::MAX; g.n];
    let mut queue = VecDeque::new();
    for src in 0..g.n {
        dist.fill(usize::MAX);
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in g.out_neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = Some(best.map_or(dist[v], |b| b.max(dist[v])));
                    queue.push_back(v);
                }
            }
        }
    }
    best
}

/// `C` is r-reachable iff some `i ∈ C` has at least `r` neighbors outside `C`.
pub fn is_r_reachable(g: &DirectedGraph, set: &AgentSet, r: usize) -> Result<bool> {
    if set.is_empty() {
        return Err(Error::InvalidInput(
            "r-reachability of the empty set".into(),
        ));
    }
    check_r(r)?;
    g.check_set(set, "set")?;
    Ok(set.iter().any(|&i| {
        g.in_neighbors(i)
            .iter()
            .filter(|j| !set.contains(j))
            .count()
            >= r
    }))
}

fn check_r(r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidInput(
            "robustness parameter r must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Fixpoint of bootstrap percolation with threshold `r` started from the
/// active set `seed`: repeatedly activate any node with at least `r` active
/// neighbors. Runs in `O(n + |E|)`.
pub fn percolation_closure(g: &DirectedGraph, seed: &AgentSet, r: usize) -> Result<AgentSet> {
    check_r(r)?;
    g.check_set(seed, "initial active set")?;
    let mut active = vec![false; g.n];
    let mut hits = vec![0usize; g.n];
    let mut queue: VecDeque<usize> = seed.iter().copied().collect();
    for &s in seed {
        active[s] = true;
    }
    while let Some(u) = queue.pop_front() {
        for &v in g.out_neighbors(u) {
            if active[v] {
                continue;
            }
            hits[v] += 1;
            if hits[v] >= r {
                active[v] = true;
                queue.push_back(v);
            }
        }
    }
    Ok((0..g.n).filter(|&v| active[v]).collect())
}

/// Whether every non-empty subset of `V \ S` is r-reachable, decided by
/// bootstrap percolation from `S` with threshold `r`.
///
/// If percolation stalls, the inactive remainder is itself a subset that is
/// not r-reachable; if it covers `V`, any subset `C` contains a first node
/// to activate, which had `r` active (hence outside-`C`) neighbors.
pub fn is_strongly_r_robust(g: &DirectedGraph, sources: &AgentSet, r: usize) -> Result<bool> {
    Ok(percolation_closure(g, sources, r)?.len() == g.n)
}

/// Exponential oracle for [`is_strongly_r_robust`]: enumerates every
/// non-empty `C ⊆ V \ S` and tests r-reachability directly.
pub fn brute_force_strongly_r_robust(
    g: &DirectedGraph,
    sources: &AgentSet,
    r: usize,
) -> Result<bool> {
    if g.n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::Capacity(format!(
            "brute-force robustness check limited to {BRUTE_FORCE_MAX_NODES} nodes, graph has {}",
            g.n
        )));
    }
    check_r(r)?;
    g.check_set(sources, "source set")?;
    let rest: Vec<usize> = (0..g.n).filter(|v| !sources.contains(v)).collect();
    for mask in 1u32..(1u32 << rest.len()) {
        let subset: AgentSet = rest
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, &v)| v)
            .collect();
        if !is_r_reachable(g, &subset, r)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Layered bootstrap percolation: `L_0 = S`, and `L_k` holds the nodes
/// outside all earlier layers with at least `r` neighbors inside them.
/// Stops at the first empty layer. The union covers `V` exactly when the
/// graph is strongly r-robust w.r.t. `S`.
pub fn percolation_layers(
    g: &DirectedGraph,
    sources: &AgentSet,
    r: usize,
) -> Result<Vec<AgentSet>> {
    check_r(r)?;
    g.check_set(sources, "source set")?;
    let mut covered = vec![false; g.n];
    for &s in sources {
        covered[s] = true;
    }
    let mut layers = vec![sources.clone()];
    loop {
        let next: AgentSet = (0..g.n)
            .filter(|&v| !covered[v])
            .filter(|&v| g.in_neighbors(v).iter().filter(|&&u| covered[u]).count() >= r)
            .collect();
        if next.is_empty() {
            break;
        }
        for &v in &next {
            covered[v] = true;
        }
        layers.push(next);
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[usize]) -> AgentSet {
        items.iter().copied().collect()
    }

    fn path3() -> DirectedGraph {
        DirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn neighbors_follow_in_edges() {
        let g = path3();
        assert_eq!(neighbors(&g, 1).unwrap(), set(&[0]));
        assert_eq!(neighbors(&g, 0).unwrap(), set(&[]));
        let tri = DirectedGraph::complete(3).unwrap();
        assert_eq!(neighbors(&tri, 2).unwrap(), set(&[0, 1]));
        assert!(matches!(neighbors(&g, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(DirectedGraph::new(2, [(0, 0)]).is_err());
        assert!(DirectedGraph::new(2, [(0, 2)]).is_err());
        assert!(DirectedGraph::new(0, []).is_err());
    }

    #[test]
    fn reachability() {
        let g = path3();
        assert!(is_reachable(&g, &set(&[0]), &set(&[1, 2])).unwrap());
        assert!(!is_reachable(&g, &set(&[2]), &set(&[0])).unwrap());
        assert!(is_reachable(&g, &set(&[1]), &set(&[])).unwrap());
        assert!(is_reachable(&g, &set(&[]), &set(&[])).unwrap());
        assert!(is_reachable(&g, &set(&[0]), &set(&[0, 1])).is_err());
    }

    #[test]
    fn diameters() {
        assert_eq!(diameter(&DirectedGraph::complete(4).unwrap()), Some(1));
        assert_eq!(diameter(&path3()), Some(2));
        assert_eq!(diameter(&DirectedGraph::new(3, []).unwrap()), None);
        assert_eq!(diameter(&DirectedGraph::new(1, []).unwrap()), Some(0));
        assert_eq!(diameter(&DirectedGraph::cycle(5).unwrap()), Some(4));
    }

    #[test]
    fn r_reachable_sets() {
        let g = path3();
        assert!(is_r_reachable(&g, &set(&[1, 2]), 1).unwrap());
        assert!(!is_r_reachable(&g, &set(&[1]), 2).unwrap());
        assert!(is_r_reachable(&g, &set(&[]), 1).is_err());

        let k5 = DirectedGraph::complete(5).unwrap();
        for a in 0..5 {
            for b in (a + 1)..5 {
                assert!(is_r_reachable(&k5, &set(&[a, b]), 3).unwrap());
            }
        }
    }

    #[test]
    fn strong_robustness_small_cases() {
        let g = path3();
        for r in 1..4 {
            assert!(is_strongly_r_robust(&g, &g.nodes(), r).unwrap());
            assert!(brute_force_strongly_r_robust(&g, &g.nodes(), r).unwrap());
        }
        assert!(is_strongly_r_robust(&g, &set(&[0]), 1).unwrap());
        assert!(brute_force_strongly_r_robust(&g, &set(&[0]), 1).unwrap());
        assert!(!is_strongly_r_robust(&g, &set(&[0]), 2).unwrap());
        assert!(!brute_force_strongly_r_robust(&g, &set(&[0]), 2).unwrap());
        assert!(is_strongly_r_robust(&g, &set(&[0]), 0).is_err());

        let empty = DirectedGraph::new(2, []).unwrap();
        assert!(!brute_force_strongly_r_robust(&empty, &set(&[]), 1).unwrap());
        assert!(!is_strongly_r_robust(&empty, &set(&[]), 1).unwrap());
    }

    #[test]
    fn brute_force_guard() {
        let g = DirectedGraph::new(21, []).unwrap();
        assert!(matches!(
            brute_force_strongly_r_robust(&g, &set(&[]), 1),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn layers() {
        let g = path3();
        assert_eq!(
            percolation_layers(&g, &set(&[0]), 1).unwrap(),
            vec![set(&[0]), set(&[1]), set(&[2])]
        );
        assert_eq!(
            percolation_layers(&g, &g.nodes(), 2).unwrap(),
            vec![g.nodes()]
        );
        assert_eq!(
            percolation_layers(&g, &set(&[0]), 2).unwrap(),
            vec![set(&[0])]
        );
    }

    #[test]
    fn edge_list_round_trip() {
        let g = DirectedGraph::random(7, 0.4, 11).unwrap();
        assert_eq!(parse_edge_list(&g.to_edge_list()).unwrap(), g);
        let parsed = parse_edge_list("# comment\nn=3\n0 1\n\n1 2\n").unwrap();
        assert_eq!(parsed, path3());
    }

    #[test]
    fn edge_list_errors_carry_line() {
        let err = parse_edge_list("n=3\n0 1\n1 x\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(parse_edge_list("3\n0 1\n").is_err());
        assert!(parse_edge_list("n=2\n0 5\n").is_err());
    }

    #[test]
    fn serde_uses_edge_list() {
        let g = path3();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"n":3,"edges":[[0,1],[1,2]]}"#);
        let back: DirectedGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<DirectedGraph>(r#"{"n":2,"edges":[[1,1]]}"#).is_err());
    }
}
