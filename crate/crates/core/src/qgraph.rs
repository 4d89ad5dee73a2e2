//! Q-graphs: directed graphs whose edges are labelled by channel
//! outputs, so any output sequence maps to a node by walking edges.
//!
//! Besides the data structure this module provides the two
//! parameterized Ising graph families (the `2|X|`-node graph that is
//! tight for small alphabets and the `|X|+3`-node graph used for large
//! ones), extraction of a graph and test distribution from rollout
//! traces (k-means clustering plus transition counting), and DOT/JSON
//! export.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optional annotation for a node: whether the decoder knows the
/// channel state at this node, and which state it last knew.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTag {
    pub state_known: bool,
    pub last_state: Option<usize>,
}

/// Directed graph over auxiliary nodes with one successor per channel
/// output: `phi(q, y) -> q'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGraph {
    node_count: usize,
    output_count: usize,
    /// Row-major `(q, y) -> q'`.
    phi: Vec<usize>,
    tags: Vec<Option<NodeTag>>,
}

impl QGraph {
    pub fn new(
        node_count: usize,
        output_count: usize,
        phi: Vec<usize>,
        tags: Vec<Option<NodeTag>>,
    ) -> Result<Self> {
        if phi.len() != node_count * output_count {
            return Err(Error::ShapeMismatch(format!(
                "phi needs {} entries, got {}",
                node_count * output_count,
                phi.len()
            )));
        }
        if phi.iter().any(|&q| q >= node_count) {
            return Err(Error::InvalidArgument("phi target out of range".into()));
        }
        if tags.len() != node_count {
            return Err(Error::ShapeMismatch("one tag slot per node".into()));
        }
        Ok(Self {
            node_count,
            output_count,
            phi,
            tags,
        })
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    #[inline]
    pub fn output_count(&self) -> usize {
        self.output_count
    }

    /// Successor of `q` on output `y`.
    #[inline]
    pub fn step(&self, q: usize, y: usize) -> usize {
        self.phi[q * self.output_count + y]
    }

    pub fn tag(&self, q: usize) -> Option<NodeTag> {
        self.tags[q]
    }

    /// Walks `phi` along an output sequence, returning the final node.
    pub fn phi_walk(&self, q0: usize, outputs: &[usize]) -> Result<usize> {
        if q0 >= self.node_count {
            return Err(Error::InvalidArgument(format!("node {q0} out of range")));
        }
        let mut q = q0;
        for &y in outputs {
            if y >= self.output_count {
                return Err(Error::InvalidArgument(format!("output {y} out of range")));
            }
            q = self.step(q, y);
        }
        Ok(q)
    }

    /// Graphviz DOT rendering; edge labels are output symbols.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph qgraph {\n");
        for q in 0..self.node_count {
            let label = match self.tags[q] {
                Some(NodeTag {
                    state_known,
                    last_state,
                }) => {
                    let ls = last_state.map_or("-".to_string(), |s| s.to_string());
                    format!("{q} [label=\"q{q} known={state_known} s={ls}\"];\n")
                }
                None => format!("{q} [label=\"q{q}\"];\n"),
            };
            out.push_str(&label);
        }
        for q in 0..self.node_count {
            for y in 0..self.output_count {
                out.push_str(&format!("{q} -> {} [label=\"{y}\"];\n", self.step(q, y)));
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Per-node output law `T(y|q)` used as the reference distribution in
/// the duality bound's KL reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDistribution {
    node_count: usize,
    output_count: usize,
    /// Row-major `T(y|q)`.
    rows: Vec<f64>,
}

impl TestDistribution {
    pub fn new(node_count: usize, output_count: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != node_count * output_count {
            return Err(Error::ShapeMismatch(format!(
                "test distribution needs {} entries, got {}",
                node_count * output_count,
                rows.len()
            )));
        }
        for q in 0..node_count {
            let row = &rows[q * output_count..(q + 1) * output_count];
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "T row {q} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "T row {q} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            node_count,
            output_count,
            rows,
        })
    }

    #[inline]
    pub fn prob(&self, y: usize, q: usize) -> f64 {
        self.rows[q * self.output_count + y]
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[f64] {
        &self.rows[q * self.output_count..(q + 1) * self.output_count]
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

/// Node index of `(state known, last state g)` in the small Ising
/// graph: known nodes come first, then the uncertain ones.
pub fn small_node(n: usize, state_known: bool, g: usize) -> usize {
    debug_assert!(g < n);
    if state_known {
        g
    } else {
        n + g
    }
}

/// The `2|X|`-node Ising Q-graph and its parameterized test
/// distribution.
///
/// Nodes `0..n` mean the decoder knows the channel state (`g` = node
/// index); nodes `n..2n` mean it saw state `g = q - n` last but the
/// state has since become ambiguous. An ambiguous node resolves on any
/// output to the known node of that output; a known node stays known
/// when the output differs from its state and becomes ambiguous when
/// the output repeats it.
pub fn ising_qgraph_small(n: usize, p: f64) -> Result<(QGraph, TestDistribution)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need alphabet size >= 2, got {n}"
        )));
    }
    check_open_unit(p)?;
    let nodes = 2 * n;
    let mut phi = vec![0usize; nodes * n];
    let mut tags = vec![None; nodes];
    for g in 0..n {
        let known = small_node(n, true, g);
        let unsure = small_node(n, false, g);
        tags[known] = Some(NodeTag {
            state_known: true,
            last_state: Some(g),
        });
        tags[unsure] = Some(NodeTag {
            state_known: false,
            last_state: Some(g),
        });
        for y in 0..n {
            phi[known * n + y] = if y == g {
                small_node(n, false, g)
            } else {
                small_node(n, true, y)
            };
            phi[unsure * n + y] = small_node(n, true, y);
        }
    }
    let graph = QGraph::new(nodes, n, phi, tags)?;

    let k = (n - 1) as f64;
    let mut rows = vec![0.0; nodes * n];
    for g in 0..n {
        let known = small_node(n, true, g);
        let unsure = small_node(n, false, g);
        for y in 0..n {
            rows[known * n + y] = if y == g {
                (1.0 + p) / 2.0
            } else {
                (1.0 - p) / (2.0 * k)
            };
            rows[unsure * n + y] = if y == g {
                2.0 * p / (1.0 + p)
            } else {
                (1.0 - p) / (k * (1.0 + p))
            };
        }
    }
    let t = TestDistribution::new(nodes, n, rows)?;
    Ok((graph, t))
}

/// The `|X|+3`-node Ising Q-graph for large alphabets.
///
/// Node 0 carries no state information (uniform output law). Nodes
/// `1..=n` are associated with state `q - 1`; nodes `n+1` and `n+2`
/// carry partial information about states 0 and 1 respectively and
/// share the same output law and transition rule as the associated
/// full-knowledge nodes. From any associated node, seeing the
/// associated state again destroys the information (go to node 0),
/// while any other output reveals the fresh input (go to its node).
/// Node 0 routes outputs 0 and 1 through the partial nodes, which keeps
/// the graph strongly connected.
pub fn ising_qgraph_large(n: usize, p: f64) -> Result<(QGraph, TestDistribution)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need alphabet size >= 3, got {n}"
        )));
    }
    check_open_unit(p)?;
    let nodes = n + 3;
    let assoc = |q: usize| -> Option<usize> {
        match q {
            0 => None,
            q if q <= n => Some(q - 1),
            q if q == n + 1 => Some(0),
            _ => Some(1),
        }
    };
    let mut phi = vec![0usize; nodes * n];
    let mut tags = vec![None; nodes];
    tags[0] = Some(NodeTag {
        state_known: false,
        last_state: None,
    });
    for y in 0..n {
        phi[y] = match y {
            0 => n + 1,
            1 => n + 2,
            _ => y + 1,
        };
    }
    for q in 1..nodes {
        let g = assoc(q).expect("non-root nodes carry a state");
        tags[q] = Some(NodeTag {
            state_known: q <= n,
            last_state: Some(g),
        });
        for y in 0..n {
            phi[q * n + y] = if y == g { 0 } else { y + 1 };
        }
    }
    let graph = QGraph::new(nodes, n, phi, tags)?;

    let k = (n - 1) as f64;
    let mut rows = vec![0.0; nodes * n];
    for y in 0..n {
        rows[y] = 1.0 / n as f64;
    }
    for q in 1..nodes {
        let g = assoc(q).unwrap();
        for y in 0..n {
            rows[q * n + y] = if y == g { p } else { (1.0 - p) / k };
        }
    }
    let t = TestDistribution::new(nodes, n, rows)?;
    Ok((graph, t))
}

fn check_open_unit(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "parameter p must lie strictly inside (0,1), got {p}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Structure extraction from rollout traces
// ---------------------------------------------------------------------------

/// k-means output: centers, per-point assignments, and the achieved
/// within-cluster sum of squared distances.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    /// May be smaller than the requested `k` when the trace has fewer
    /// distinct points.
    pub effective_k: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// Lloyd's algorithm with k-means++ seeding and restarts, keeping the
/// lowest-SSE run. When the trace has fewer than `k` distinct points
/// the distinct points themselves are returned.
pub fn cluster_states<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|d| sq_dist(d, p) < 1e-24) {
            distinct.push(p.clone());
            if distinct.len() > k {
                break;
            }
        }
    }
    if distinct.len() <= k {
        let centers = distinct;
        let assignments: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
        let sse = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centers[a]))
            .sum();
        let effective_k = centers.len();
        return Ok(KMeansResult {
            centers,
            assignments,
            sse,
            effective_k,
        });
    }

    let restarts = restarts.clamp(1, 100);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let mut centers = seed_plus_plus(points, k, rng);
        let mut assignments = vec![0usize; points.len()];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let (a, _) = nearest(&centers, p);
                if assignments[i] != a {
                    assignments[i] = a;
                    changed = true;
                }
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assignments) {
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for s in sums[c].iter_mut() {
                        *s /= counts[c] as f64;
                    }
                    centers[c] = sums[c].clone();
                }
            }
            if !changed {
                break;
            }
        }
        let sse: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centers[a]))
            .sum();
        if best.as_ref().map_or(true, |b| sse < b.sse) {
            best = Some(KMeansResult {
                centers,
                assignments,
                sse,
                effective_k: k,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                t -= d;
                if t <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

/// Knee-of-the-SSE-curve helper for choosing `k`: runs k-means for
/// `k = 1..=k_max` and returns the k whose SSE point is farthest from
/// the chord between the endpoints, plus the SSE curve itself.
pub fn elbow_k<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k_max: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    if k_max < 1 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let mut curve = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        curve.push(cluster_states(points, k, restarts, rng)?.sse);
    }
    let (x0, y0) = (1.0, curve[0]);
    let (x1, y1) = (k_max as f64, curve[k_max - 1]);
    let norm = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt().max(1e-30);
    let mut best_k = 1;
    let mut best_d = -1.0;
    for (i, &sse) in curve.iter().enumerate() {
        let x = (i + 1) as f64;
        let d = ((y1 - y0) * x - (x1 - x0) * sse + x1 * y0 - y1 * x0).abs() / norm;
        if d > best_d {
            best_d = d;
            best_k = i + 1;
        }
    }
    Ok((best_k, curve))
}

/// Result of inducing a Q-graph from a trace: cluster occupancy, the
/// majority transition map with per-edge consistency ratios, and the
/// estimated per-node output law with visit counts.
#[derive(Debug, Clone)]
pub struct ExtractionReport {
    pub centers: Vec<Vec<f64>>,
    pub occupancy: Vec<usize>,
    /// Majority successor per `(q, y)`; `None` where never observed.
    pub phi: Vec<Option<usize>>,
    /// Fraction of observed `(q, y)` transitions agreeing with the
    /// majority successor; 1.0 where never observed.
    pub consistency: Vec<f64>,
    /// Edges with consistency below 0.99, flagged for inspection.
    pub flagged: Vec<(usize, usize, f64)>,
    /// Estimated `T(y|q)` rows from raw counts; `None` for unvisited
    /// nodes.
    pub t_rows: Vec<Option<Vec<f64>>>,
    pub visit_counts: Vec<usize>,
    pub output_count: usize,
}

impl ExtractionReport {
    /// Converts the report into a usable graph and test distribution,
    /// failing loudly if any observed `(q, y)` edge lacks a successor
    /// or a visited node has a zero-count output (which would break the
    /// KL reward's support requirement).
    pub fn to_qgraph(&self) -> Result<(QGraph, TestDistribution)> {
        let nq = self.centers.len();
        let ny = self.output_count;
        let mut phi = vec![0usize; nq * ny];
        let mut rows = vec![0.0; nq * ny];
        for q in 0..nq {
            let t_row = self.t_rows[q].as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("node {q} was never visited; prune or supply T"))
            })?;
            for y in 0..ny {
                match self.phi[q * ny + y] {
                    Some(tgt) => {
                        phi[q * ny + y] = tgt;
                        if t_row[y] <= 0.0 {
                            return Err(Error::InvalidArgument(format!(
                                "zero-count output {y} at node {q}: raw-count T unusable for duality"
                            )));
                        }
                    }
                    None if t_row[y] <= 0.0 => {
                        // Output never seen at this node: keep a
                        // self-loop. The duality builder re-checks
                        // support against the channel, so an actually
                        // reachable hole still fails loudly there.
                        phi[q * ny + y] = q;
                    }
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "edge (q={q}, y={y}) observed as output but transition unknown"
                        )));
                    }
                }
            }
            rows[q * ny..(q + 1) * ny].copy_from_slice(t_row);
        }
        let tags = vec![None; nq];
        Ok((
            QGraph::new(nq, ny, phi, tags)?,
            TestDistribution::new(nq, ny, rows)?,
        ))
    }
}

/// Assigns each trace belief to its nearest center, tallies
/// `(q, y) -> q'` transitions, takes the majority successor per edge,
/// and estimates `T(y|q)` by counting output frequencies per node.
pub fn induce_qgraph(
    trace: &[(Vec<f64>, usize)],
    centers: &[Vec<f64>],
    output_count: usize,
) -> Result<ExtractionReport> {
    if trace.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two trace steps".into(),
        ));
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("no centers".into()));
    }
    let nq = centers.len();
    let ny = output_count;
    let assignments: Vec<usize> = trace.iter().map(|(z, _)| nearest(centers, z).0).collect();
    let mut occupancy = vec![0usize; nq];
    for &a in &assignments {
        occupancy[a] += 1;
    }
    let mut succ = vec![0usize; nq * ny * nq];
    let mut out_counts = vec![0usize; nq * ny];
    let mut visit_counts = vec![0usize; nq];
    for t in 0..trace.len() {
        let q = assignments[t];
        let y = trace[t].1;
        if y >= ny {
            return Err(Error::InvalidArgument(format!("output {y} out of range")));
        }
        visit_counts[q] += 1;
        out_counts[q * ny + y] += 1;
        if t + 1 < trace.len() {
            succ[(q * ny + y) * nq + assignments[t + 1]] += 1;
        }
    }
    let mut phi = vec![None; nq * ny];
    let mut consistency = vec![1.0; nq * ny];
    let mut flagged = Vec::new();
    for q in 0..nq {
        for y in 0..ny {
            let counts = &succ[(q * ny + y) * nq..(q * ny + y + 1) * nq];
            let total: usize = counts.iter().sum();
            if total == 0 {
                continue;
            }
            let (best, &best_count) = counts
                .iter()
                .enumerate()
                .max_by_key(|(_, &c)| c)
                .expect("nonempty");
            phi[q * ny + y] = Some(best);
            let ratio = best_count as f64 / total as f64;
            consistency[q * ny + y] = ratio;
            if ratio < 0.99 {
                flagged.push((q, y, ratio));
            }
        }
    }
    let t_rows: Vec<Option<Vec<f64>>> = (0..nq)
        .map(|q| {
            if visit_counts[q] == 0 {
                None
            } else {
                Some(
                    (0..ny)
                        .map(|y| out_counts[q * ny + y] as f64 / visit_counts[q] as f64)
                        .collect(),
                )
            }
        })
        .collect();
    Ok(ExtractionReport {
        centers: centers.to_vec(),
        occupancy,
        phi,
        consistency,
        flagged,
        t_rows,
        visit_counts,
        output_count: ny,
    })
}

// ---------------------------------------------------------------------------
// JSON import/export
// ---------------------------------------------------------------------------

/// JSON schema `{nodes, outputs, phi, t, tags}` shared by export and
/// the duality solver's import path.
#[derive(Debug, Serialize, Deserialize)]
pub struct QGraphJson {
    pub nodes: usize,
    pub outputs: usize,
    pub phi: Vec<usize>,
    pub t: Option<Vec<f64>>,
    #[serde(default)]
    pub tags: Option<Vec<Option<NodeTag>>>,
}

/// Serializes a graph (and optionally its test distribution) to JSON.
pub fn to_json(graph: &QGraph, t: Option<&TestDistribution>) -> String {
    let doc = QGraphJson {
        nodes: graph.node_count,
        outputs: graph.output_count,
        phi: graph.phi.clone(),
        t: t.map(|t| t.rows.clone()),
        tags: Some(graph.tags.clone()),
    };
    serde_json::to_string_pretty(&doc).expect("graph serializes")
}

/// Parses the JSON schema back into a graph and optional test
/// distribution.
pub fn from_json(json: &str) -> Result<(QGraph, Option<TestDistribution>)> {
    let doc: QGraphJson = serde_json::from_str(json)?;
    let tags = doc.tags.unwrap_or_else(|| vec![None; doc.nodes]);
    let graph = QGraph::new(doc.nodes, doc.outputs, doc.phi, tags)?;
    let t = doc
        .t
        .map(|rows| TestDistribution::new(doc.nodes, doc.outputs, rows))
        .transpose()?;
    Ok((graph, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phi_walk_identity_and_single_step() {
        let (g, _) = ising_qgraph_small(2, 0.4).unwrap();
        let q0 = small_node(2, true, 0);
        assert_eq!(g.phi_walk(q0, &[]).unwrap(), q0);
        assert_eq!(g.phi_walk(q0, &[1]).unwrap(), g.step(q0, 1));
    }

    #[test]
    fn small_graph_walk_follows_known_state_rule() {
        // From (known, 0): output 0 repeats the known state, so the
        // state becomes ambiguous; a further 0 resolves it back to
        // known-0.
        let (g, _) = ising_qgraph_small(2, 0.4).unwrap();
        let start = small_node(2, true, 0);
        let mid = g.phi_walk(start, &[0]).unwrap();
        assert_eq!(mid, small_node(2, false, 0));
        let end = g.phi_walk(start, &[0, 0]).unwrap();
        assert_eq!(end, small_node(2, true, 0));
    }

    #[test]
    fn small_graph_rows_are_probability_vectors() {
        for n in [2usize, 3, 5, 8] {
            for &p in &[0.01, 0.3, 0.99] {
                let (g, t) = ising_qgraph_small(n, p).unwrap();
                assert_eq!(g.node_count(), 2 * n);
                for q in 0..g.node_count() {
                    let sum: f64 = t.row(q).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                    assert!(t.row(q).iter().all(|&v| v > 0.0));
                }
            }
        }
    }

    #[test]
    fn small_graph_t_matches_parameterization() {
        let p = 0.2638;
        let (_, t) = ising_qgraph_small(2, p).unwrap();
        let known0 = small_node(2, true, 0);
        let unsure0 = small_node(2, false, 0);
        assert!((t.prob(0, known0) - (1.0 + p) / 2.0).abs() < 1e-15);
        assert!((t.prob(0, unsure0) - 2.0 * p / (1.0 + p)).abs() < 1e-15);
    }

    #[test]
    fn large_graph_has_alphabet_plus_three_nodes() {
        let (g, t) = ising_qgraph_large(9, 0.5196).unwrap();
        assert_eq!(g.node_count(), 12);
        for q in 0..g.node_count() {
            let sum: f64 = t.row(q).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // Node 0 is uniform.
        for y in 0..9 {
            assert!((t.prob(y, 0) - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_constructors_reject_degenerate_p() {
        assert!(ising_qgraph_small(3, 0.0).is_err());
        assert!(ising_qgraph_small(3, 1.0).is_err());
        assert!(ising_qgraph_large(9, -0.1).is_err());
        assert!(ising_qgraph_large(2, 0.5).is_err());
        assert!(ising_qgraph_small(1, 0.5).is_err());
    }

    #[test]
    fn phi_determinism_exhaustive() {
        for n in [2usize, 4, 9] {
            let (g, _) = if n >= 3 {
                ising_qgraph_large(n, 0.4).unwrap()
            } else {
                ising_qgraph_small(n, 0.4).unwrap()
            };
            for q in 0..g.node_count() {
                for y in 0..n {
                    let a = g.step(q, y);
                    let b = g.step(q, y);
                    assert_eq!(a, b);
                    assert!(a < g.node_count());
                }
            }
        }
    }

    #[test]
    fn kmeans_single_repeated_point() {
        let points = vec![vec![0.25, 0.75]; 40];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = cluster_states(&points, 1, 5, &mut rng).unwrap();
        assert_eq!(res.effective_k, 1);
        assert!(res.centers[0]
            .iter()
            .zip(&[0.25, 0.75])
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(res.sse < 1e-20);
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut points = Vec::new();
        for i in 0..200 {
            let jitter = 1e-8 * (i as f64 / 200.0 - 0.5);
            points.push(vec![0.1 + jitter, 0.9 - jitter]);
            points.push(vec![0.8 - jitter, 0.2 + jitter]);
        }
        let res = cluster_states(&points, 2, 10, &mut rng).unwrap();
        let mut centers = res.centers.clone();
        centers.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((centers[0][0] - 0.1).abs() < 1e-6);
        assert!((centers[1][0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn kmeans_collapses_duplicates_when_k_too_large() {
        let points = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = cluster_states(&points, 5, 3, &mut rng).unwrap();
        assert_eq!(res.effective_k, 2);
    }

    #[test]
    fn induce_recovers_known_graph_round_trip() {
        // Walk the small 2-alphabet graph with its exact T as the
        // output law; extraction must recover phi exactly.
        let p = 0.45;
        let (g, t) = ising_qgraph_small(2, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut q = 0usize;
        let mut trace = Vec::new();
        // One-hot "belief" per node keeps centers trivially separable.
        for _ in 0..20_000 {
            let row = t.row(q);
            let y = crate::belief::sample_categorical(row, &mut rng);
            let mut z = vec![0.0; g.node_count()];
            z[q] = 1.0;
            trace.push((z, y));
            q = g.step(q, y);
        }
        let centers: Vec<Vec<f64>> = (0..g.node_count())
            .map(|i| {
                let mut z = vec![0.0; g.node_count()];
                z[i] = 1.0;
                z
            })
            .collect();
        let report = induce_qgraph(&trace, &centers, 2).unwrap();
        assert!(report.flagged.is_empty());
        for q in 0..g.node_count() {
            for y in 0..2 {
                if let Some(tgt) = report.phi[q * 2 + y] {
                    assert_eq!(tgt, g.step(q, y), "q={q} y={y}");
                    assert_eq!(report.consistency[q * 2 + y], 1.0);
                }
            }
            if let Some(row) = &report.t_rows[q] {
                let visits = report.visit_counts[q] as f64;
                for y in 0..2 {
                    let sigma = (t.prob(y, q) * (1.0 - t.prob(y, q)) / visits).sqrt();
                    assert!(
                        (row[y] - t.prob(y, q)).abs() < 3.0 * sigma + 1e-9,
                        "T({y}|{q})"
                    );
                }
            }
        }
        let (g2, _t2) = report.to_qgraph().unwrap();
        assert_eq!(g2.node_count(), g.node_count());
    }

    #[test]
    fn induce_single_node_self_loop() {
        let trace: Vec<(Vec<f64>, usize)> = (0..100).map(|i| (vec![1.0], i % 2)).collect();
        let centers = vec![vec![1.0]];
        let report = induce_qgraph(&trace, &centers, 2).unwrap();
        assert_eq!(report.phi[0], Some(0));
        assert_eq!(report.phi[1], Some(0));
        let row = report.t_rows[0].as_ref().unwrap();
        assert!((row[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn elbow_finds_planted_cluster_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points = Vec::new();
        for c in 0..3 {
            for i in 0..60 {
                let jitter = 0.01 * ((i % 10) as f64 / 10.0 - 0.5);
                points.push(vec![c as f64 + jitter, -(c as f64) + jitter]);
            }
        }
        let (k, curve) = elbow_k(&points, 6, 3, &mut rng).unwrap();
        assert_eq!(k, 3, "sse curve: {curve:?}");
    }

    #[test]
    fn json_round_trip() {
        let (g, t) = ising_qgraph_large(4, 0.6).unwrap();
        let json = to_json(&g, Some(&t));
        let (g2, t2) = from_json(&json).unwrap();
        assert_eq!(g, g2);
        assert_eq!(Some(t), t2);
    }

    #[test]
    fn dot_export_mentions_every_edge() {
        let (g, _) = ising_qgraph_small(2, 0.4).unwrap();
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches("->").count(), g.node_count() * 2);
    }
}
