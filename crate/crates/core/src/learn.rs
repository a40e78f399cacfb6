//! Topology learning from voltage-magnitude statistics with every node
//! observed.
//!
//! Edge weights are `φ_ab = Var(ε_a − ε_b)`. On a radial feeder driven by
//! independent injections, the operating tree is the minimum-φ spanning tree
//! of the candidate layout, subject to the substation having a single line.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{edge_key, GridGraph, NodeId, RadialTree};
use crate::samples::SampleSet;

/// Symmetric matrix of φ over a labelled node set. Slot 0 is always the
/// substation, whose voltage deviation is identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiWeights {
    nodes: Vec<NodeId>,
    slot: HashMap<NodeId, usize>,
    matrix: DMatrix<f64>,
}

impl PhiWeights {
    pub fn from_matrix(nodes: Vec<NodeId>, matrix: DMatrix<f64>) -> Result<Self> {
        if nodes.first() != Some(&NodeId::ROOT) {
            return Err(Error::domain("phi weights must list the substation first"));
        }
        let k = nodes.len();
        if matrix.shape() != (k, k) {
            return Err(Error::domain(
                "phi matrix shape does not match its node list",
            ));
        }
        let mut slot = HashMap::with_capacity(k);
        for (i, &n) in nodes.iter().enumerate() {
            if slot.insert(n, i).is_some() {
                return Err(Error::domain(format!("node {n} listed twice")));
            }
        }
        for i in 0..k {
            if matrix[(i, i)] != 0.0 {
                return Err(Error::domain("phi diagonal must be zero"));
            }
            for j in 0..i {
                let w = matrix[(i, j)];
                if !(w.is_finite() && w >= 0.0) || w != matrix[(j, i)] {
                    return Err(Error::domain(format!(
                        "phi between {} and {} must be finite, nonnegative and symmetric",
                        nodes[i], nodes[j]
                    )));
                }
            }
        }
        Ok(PhiWeights {
            nodes,
            slot,
            matrix,
        })
    }

    /// Substation first, then the measured nodes.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.slot.contains_key(&n)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn try_get(&self, a: NodeId, b: NodeId) -> Option<f64> {
        Some(self.matrix[(*self.slot.get(&a)?, *self.slot.get(&b)?)])
    }

    /// # Panics
    /// If either node has no weights.
    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        self.try_get(a, b)
            .unwrap_or_else(|| panic!("no phi weight between {a} and {b}"))
    }

    /// `Var(ε_n)` for each measured node, i.e. φ to the substation.
    pub fn root_variances(&self) -> BTreeMap<NodeId, f64> {
        self.nodes[1..]
            .iter()
            .map(|&n| (n, self.get(NodeId::ROOT, n)))
            .collect()
    }

    /// Keeps the substation and the listed nodes.
    pub fn restrict(&self, keep: &[NodeId]) -> Result<PhiWeights> {
        let mut nodes = vec![NodeId::ROOT];
        nodes.extend(keep.iter().copied().filter(|n| !n.is_root()));
        let slots = nodes
            .iter()
            .map(|n| self.slot.get(n).copied().ok_or(Error::UnknownNode(*n)))
            .collect::<Result<Vec<_>>>()?;
        let k = nodes.len();
        let matrix = DMatrix::from_fn(k, k, |i, j| self.matrix[(slots[i], slots[j])]);
        PhiWeights::from_matrix(nodes, matrix)
    }

    /// Applies `f` to every off-diagonal entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PhiWeights> {
        let k = self.nodes.len();
        let matrix = DMatrix::from_fn(
            k,
            k,
            |i, j| if i == j { 0.0 } else { f(self.matrix[(i, j)]) },
        );
        PhiWeights::from_matrix(self.nodes.clone(), matrix)
    }
}

/// Unbiased sample variance of `ε_a − ε_b` for every pair of measured nodes
/// and the substation. Each entry is accumulated in snapshot order, so the
/// result does not depend on how the pairs are distributed over threads.
pub fn empirical_phi(samples: &SampleSet) -> Result<PhiWeights> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::domain(format!(
            "phi needs at least two snapshots, got {m}"
        )));
    }
    let k = samples.nodes().len();
    let eps = samples.eps();
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let col = eps.column(c);
            let mean = col.iter().sum::<f64>() / m as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let denom = (m - 1) as f64;
    // Slot 0 is the substation with a zero column.
    let rows: Vec<Vec<f64>> = (0..=k)
        .into_par_iter()
        .map(|i| {
            (0..=k)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    let b = &centered[hi - 1];
                    let sum: f64 = if lo == 0 {
                        b.iter().map(|v| v * v).sum()
                    } else {
                        let a = &centered[lo - 1];
                        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
                    };
                    sum / denom
                })
                .collect()
        })
        .collect();
    let matrix = DMatrix::from_fn(k + 1, k + 1, |i, j| rows[i][j]);
    let mut nodes = vec![NodeId::ROOT];
    nodes.extend_from_slice(samples.nodes());
    PhiWeights::from_matrix(nodes, matrix)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedEdge {
    pub u: NodeId,
    pub v: NodeId,
    /// φ of the edge; `None` when an endpoint is unmeasured.
    pub phi: Option<f64>,
}

/// A learned spanning tree. Edges are stored as `(smaller, larger)` pairs
/// in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedTopology {
    pub edges: Vec<LearnedEdge>,
    pub weight_total: f64,
}

impl LearnedTopology {
    pub fn from_edges(mut edges: Vec<LearnedEdge>) -> Self {
        for e in &mut edges {
            let (u, v) = edge_key(e.u, e.v);
            e.u = u;
            e.v = v;
        }
        edges.sort_by_key(|e| (e.u, e.v));
        let weight_total = edges.iter().filter_map(|e| e.phi).sum();
        LearnedTopology {
            edges,
            weight_total,
        }
    }

    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges.iter().map(|e| edge_key(e.u, e.v)).collect()
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.edges.iter().flat_map(|e| [e.u, e.v]).collect()
    }

    /// Orients the learned edges as a radial tree, taking impedances from
    /// the grid.
    pub fn to_radial_tree(&self, grid: &GridGraph) -> Result<RadialTree> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e.u, e.v)).collect();
        RadialTree::from_grid_edges(grid, &edges)
    }
}

/// Which node pairs the learner may connect.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Only the grid's candidate lines.
    #[default]
    Grid,
    /// Every pair of nodes; for when the layout is unknown.
    CompleteGraph,
}

pub fn complete_graph_edges(nodes: &[NodeId]) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1) / 2);
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            out.push(edge_key(a, b));
        }
    }
    out
}

/// Minimum-weight spanning tree over `candidate_edges` among trees whose
/// root has degree one.
///
/// A spanning tree with a degree-one root is a spanning tree of the
/// non-root nodes plus one root edge, and the two parts are chosen
/// independently. The non-root part is Kruskal over edges ordered by
/// `(φ, smaller id, larger id)`; the root takes its cheapest candidate edge
/// (ties to the smaller neighbour id).
pub fn constrained_mst(
    candidate_edges: &[(NodeId, NodeId)],
    weights: &PhiWeights,
    root: NodeId,
) -> Result<LearnedTopology> {
    if !weights.contains(root) {
        return Err(Error::UnknownNode(root));
    }
    let mut keyed = Vec::with_capacity(candidate_edges.len());
    let mut root_edges = Vec::new();
    for &(a, b) in candidate_edges {
        let w = weights
            .try_get(a, b)
            .ok_or_else(|| Error::domain(format!("no phi weight for candidate edge ({a}, {b})")))?;
        if a == b {
            return Err(Error::domain(format!("self-loop at node {a}")));
        }
        let (lo, hi) = edge_key(a, b);
        if a == root || b == root {
            let other = if a == root { b } else { a };
            root_edges.push((w, other));
        } else {
            keyed.push((w, lo, hi));
        }
    }

    let others: Vec<NodeId> = weights
        .nodes()
        .iter()
        .copied()
        .filter(|&n| n != root)
        .collect();
    if others.is_empty() {
        return Ok(LearnedTopology::from_edges(Vec::new()));
    }
    let slot: HashMap<NodeId, usize> = others.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    keyed.dedup_by(|x, y| x.1 == y.1 && x.2 == y.2);
    let mut uf = UnionFind::<usize>::new(others.len());
    let mut edges = Vec::with_capacity(others.len());
    for &(w, a, b) in &keyed {
        if uf.union(slot[&a], slot[&b]) {
            edges.push(LearnedEdge {
                u: a,
                v: b,
                phi: Some(w),
            });
            if edges.len() + 1 == others.len() {
                break;
            }
        }
    }
    if edges.len() + 1 != others.len() {
        return Err(Error::Infeasible(
            "candidate edges do not connect the non-substation nodes".into(),
        ));
    }

    let (w, child) = root_edges
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .ok_or_else(|| Error::Infeasible("no candidate edge touches the substation".into()))?;
    edges.push(LearnedEdge {
        u: root,
        v: child,
        phi: Some(w),
    });
    Ok(LearnedTopology::from_edges(edges))
}

/// Spanning tree over the weights' nodes using the grid's lines (or every
/// pair in complete-graph mode).
pub fn learn_from_weights(
    weights: &PhiWeights,
    grid: &GridGraph,
    mode: CandidateMode,
) -> Result<LearnedTopology> {
    let candidates = match mode {
        CandidateMode::Grid => grid
            .edge_keys()
            .into_iter()
            .filter(|&(a, b)| weights.contains(a) && weights.contains(b))
            .collect(),
        CandidateMode::CompleteGraph => complete_graph_edges(weights.nodes()),
    };
    constrained_mst(&candidates, weights, grid.root())
}

/// Empirical φ followed by the degree-constrained spanning tree.
pub fn learn_topology(
    samples: &SampleSet,
    grid: &GridGraph,
    mode: CandidateMode,
) -> Result<LearnedTopology> {
    let covered: BTreeSet<NodeId> = samples.nodes().iter().copied().collect();
    if let Some(missing) = grid.nodes().skip(1).find(|n| !covered.contains(n)) {
        return Err(Error::domain(format!("no measurements for node {missing}")));
    }
    if covered.len() + 1 != grid.num_nodes() {
        return Err(Error::domain(
            "sample set has columns for nodes outside the grid",
        ));
    }
    let weights = empirical_phi(samples)?;
    learn_from_weights(&weights, grid, mode)
}

/// How decisively one excluded candidate line lost to the tree path it
/// would have closed a cycle with.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleGap {
    pub excluded: (NodeId, NodeId),
    pub excluded_phi: f64,
    /// Largest φ on the tree path between the excluded edge's endpoints.
    pub max_path_phi: f64,
    /// `excluded_phi − max_path_phi`; nonnegative for a minimum tree.
    pub gap: f64,
}

/// Per excluded candidate edge, the weight gap to the cycle it closes.
/// Gaps are sorted ascending so the closest calls come first.
pub fn mst_diagnostics(
    topology: &LearnedTopology,
    candidate_edges: &[(NodeId, NodeId)],
    weights: &PhiWeights,
) -> Vec<CycleGap> {
    let chosen = topology.edge_set();
    let mut adj: HashMap<NodeId, Vec<(NodeId, f64)>> = HashMap::new();
    for e in &topology.edges {
        let w = e.phi.unwrap_or(f64::NAN);
        adj.entry(e.u).or_default().push((e.v, w));
        adj.entry(e.v).or_default().push((e.u, w));
    }
    let mut gaps: Vec<CycleGap> = candidate_edges
        .iter()
        .map(|&(a, b)| edge_key(a, b))
        .filter(|k| !chosen.contains(k))
        .filter_map(|(a, b)| {
            let excluded_phi = weights.try_get(a, b)?;
            let max_path_phi = max_on_path(&adj, a, b)?;
            Some(CycleGap {
                excluded: (a, b),
                excluded_phi,
                max_path_phi,
                gap: excluded_phi - max_path_phi,
            })
        })
        .collect();
    gaps.sort_by(|x, y| x.gap.total_cmp(&y.gap).then(x.excluded.cmp(&y.excluded)));
    gaps
}

fn max_on_path(adj: &HashMap<NodeId, Vec<(NodeId, f64)>>, from: NodeId, to: NodeId) -> Option<f64> {
    let mut best: HashMap<NodeId, f64> = HashMap::from([(from, f64::NEG_INFINITY)]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        let here = best[&n];
        if n == to {
            return Some(here);
        }
        for &(m, w) in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if let Entry::Vacant(e) = best.entry(m) {
                e.insert(here.max(w));
                queue.push_back(m);
            }
        }
    }
    None
}

/// Splits measured nodes into groups fed by different substations. Nodes in
/// different trees have independent voltages, so their φ equals the sum of
/// their variances; `a` and `b` are linked when
/// `φ_ab < (1 − tolerance)(Var ε_a + Var ε_b)` and groups are the connected
/// components of that relation. The substation slot is ignored.
pub fn partition_into_trees(
    weights: &PhiWeights,
    variances: &BTreeMap<NodeId, f64>,
    tolerance: f64,
) -> Result<Vec<Vec<NodeId>>> {
    let nodes: Vec<NodeId> = weights.nodes()[1..].to_vec();
    let var = |n: NodeId| {
        variances
            .get(&n)
            .copied()
            .ok_or_else(|| Error::domain(format!("no voltage variance for node {n}")))
    };
    let mut uf = UnionFind::<usize>::new(nodes.len());
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let threshold = (1.0 - tolerance) * (var(nodes[i])? + var(nodes[j])?);
            if weights.get(nodes[i], nodes[j]) < threshold {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (i, &n) in nodes.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(n);
    }
    let mut out: Vec<Vec<NodeId>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Fraction of true edges that were missed: `|est \ truth| / |truth|`.
/// For two spanning trees on one node set this equals `|truth \ est| /
/// |truth|`.
pub fn topology_error(estimated: &LearnedTopology, truth: &RadialTree) -> Result<f64> {
    let truth_edges = truth.edge_set();
    let truth_nodes: BTreeSet<NodeId> = truth.preorder().iter().copied().collect();
    if estimated.nodes() != truth_nodes {
        return Err(Error::domain(
            "estimated and true topologies cover different node sets",
        ));
    }
    let wrong = estimated.edge_set().difference(&truth_edges).count();
    Ok(wrong as f64 / truth_edges.len() as f64)
}
