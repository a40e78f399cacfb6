//! Topology learning when some nodes carry no voltage measurements.
//!
//! The learner first builds the minimum-φ spanning tree over the measured
//! nodes. Unmeasured nodes distort it only locally: the one-hop neighbours
//! of a hidden node connect to each other instead of through it. Working
//! from the deepest measured nodes upward, each tree edge is tested against
//! closed-form φ predictions built from line impedances and injection
//! covariances:
//!
//! 1. `a` parent of `b`: `φ_ab = Σ_{d ∈ D_b} f(z_ab, d)`
//! 2. `a`–`h`–`c` chain: `φ_ac = Σ_{d ∈ D_c} f(z_ah + z_hc, d) + Σ_{d ∈ D_h∖D_c} f(z_ah, d)`
//! 3. `a`, `c` siblings under `h`: `φ_ac = φ_ha + φ_hc`
//!
//! with `f(z, d) = r² Ω_p(d) + x² Ω_q(d) + 2 r x Ω_pq(d)`. Hidden nodes must be
//! more than two hops apart and not adjacent to the substation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{edge_key, GridGraph, Impedance, NodeId, RadialTree};
use crate::lcpf::{InjectionStats, NodeInjection};
use crate::learn::{
    complete_graph_edges, constrained_mst, empirical_phi, LearnedEdge, LearnedTopology, PhiWeights,
};
use crate::samples::SampleSet;

/// Default match tolerance for sampled φ.
pub const SAMPLED_TOLERANCE: f64 = 0.25;
/// Default match tolerance for exact φ.
pub const EXACT_TOLERANCE: f64 = 1e-6;

/// Nodes known to exist whose voltages are not measured.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct HiddenNodeSet {
    nodes: BTreeSet<NodeId>,
}

impl HiddenNodeSet {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        if nodes.contains(&NodeId::ROOT) {
            return Err(Error::domain("the substation cannot be hidden"));
        }
        Ok(HiddenNodeSet { nodes })
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    /// Checks the placement rule against a known tree: no hidden node next to
    /// the substation and every pair more than two hops apart.
    pub fn check_placement(&self, tree: &RadialTree) -> Result<()> {
        let nodes: Vec<NodeId> = self.nodes.iter().copied().collect();
        for (i, &h) in nodes.iter().enumerate() {
            if h.index() >= tree.num_nodes() {
                return Err(Error::UnknownNode(h));
            }
            if tree.parent(h) == Some(NodeId::ROOT) {
                return Err(Error::domain(format!(
                    "hidden node {h} is adjacent to the substation"
                )));
            }
            for &g in &nodes[i + 1..] {
                if tree.hops(h, g) <= 2 {
                    return Err(Error::domain(format!(
                        "hidden nodes {h} and {g} are within two hops"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Summed injection (co)variances over a set of nodes.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSum {
    pub var_p: f64,
    pub var_q: f64,
    pub cov_pq: f64,
}

impl CovarianceSum {
    pub fn of(entry: &NodeInjection) -> Self {
        CovarianceSum {
            var_p: entry.var_p,
            var_q: entry.var_q,
            cov_pq: entry.cov_pq,
        }
    }

    pub fn of_all<'a>(entries: impl IntoIterator<Item = &'a NodeInjection>) -> Self {
        entries
            .into_iter()
            .map(CovarianceSum::of)
            .fold(Self::default(), Add::add)
    }

    /// φ across a line feeding exactly these nodes.
    pub fn edge_phi(&self, z: Impedance) -> f64 {
        let (r, x) = (z.r(), z.x());
        r * r * self.var_p + x * x * self.var_q + 2.0 * r * x * self.cov_pq
    }

    fn scaled(self, k: f64) -> Self {
        CovarianceSum {
            var_p: self.var_p * k,
            var_q: self.var_q * k,
            cov_pq: self.cov_pq * k,
        }
    }
}

impl Add for CovarianceSum {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        CovarianceSum {
            var_p: self.var_p + o.var_p,
            var_q: self.var_q + o.var_q,
            cov_pq: self.cov_pq + o.cov_pq,
        }
    }
}

impl AddAssign for CovarianceSum {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for CovarianceSum {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.scaled(-1.0)
    }
}

/// φ over a tree edge with resistance `r`, reactance `x` feeding the given
/// descendants.
pub fn predicted_phi_edge(r: f64, x: f64, descendants: &[NodeInjection]) -> f64 {
    let s = CovarianceSum::of_all(descendants);
    r * r * s.var_p + x * x * s.var_q + 2.0 * r * x * s.cov_pq
}

/// A hypothesised local structure and the descendant sets it implies.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Hypothesis {
    /// `a` is the parent of `b`; `below` sums over the subtree of `b`.
    Edge {
        line: Impedance,
        below: CovarianceSum,
    },
    /// `a`–`h`–`c` with `h` the middle node. `middle_only` sums over the
    /// subtree of `h` minus that of `c`; `below` over the subtree of `c`.
    Grandparent {
        upper: Impedance,
        lower: Impedance,
        middle_only: CovarianceSum,
        below: CovarianceSum,
    },
    /// `a` and `c` are both children of `h`.
    Siblings {
        left: Impedance,
        left_below: CovarianceSum,
        right: Impedance,
        right_below: CovarianceSum,
    },
}

impl Hypothesis {
    /// Which of the three edge identities this hypothesis uses (1, 2 or 3).
    pub fn statement(&self) -> u8 {
        match self {
            Hypothesis::Edge { .. } => 1,
            Hypothesis::Grandparent { .. } => 2,
            Hypothesis::Siblings { .. } => 3,
        }
    }

    pub fn predicted_phi(&self) -> f64 {
        match *self {
            Hypothesis::Edge { line, below } => below.edge_phi(line),
            Hypothesis::Grandparent {
                upper,
                lower,
                middle_only,
                below,
            } => below.edge_phi(upper.series(&lower)) + middle_only.edge_phi(upper),
            Hypothesis::Siblings {
                left,
                left_below,
                right,
                right_below,
            } => left_below.edge_phi(left) + right_below.edge_phi(right),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatementCheck {
    /// `|observed − predicted| / predicted`; infinite when rejected outright.
    pub score: f64,
    pub accepted: bool,
}

impl StatementCheck {
    pub fn rejected() -> Self {
        StatementCheck {
            score: f64::INFINITY,
            accepted: false,
        }
    }
}

/// Scores an observed φ against a hypothesis. `None` stands for a
/// hypothesis that needs a line missing from the layout.
pub fn check_statement(
    observed_phi: f64,
    hypothesis: Option<&Hypothesis>,
    tolerance: f64,
) -> StatementCheck {
    let Some(h) = hypothesis else {
        return StatementCheck::rejected();
    };
    let predicted = h.predicted_phi();
    if predicted.is_nan() || predicted <= 0.0 || !observed_phi.is_finite() {
        return StatementCheck::rejected();
    }
    let score = (observed_phi - predicted).abs() / predicted;
    StatementCheck {
        score,
        accepted: score <= tolerance,
    }
}

/// Minimum-φ spanning tree over the measured nodes, oriented from the
/// substation.
#[derive(Clone, Debug)]
pub struct ObservableTree {
    pub topology: LearnedTopology,
    parent: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl ObservableTree {
    fn from_topology(topology: LearnedTopology) -> Result<Self> {
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for e in &topology.edges {
            adj.entry(e.u).or_default().push(e.v);
            adj.entry(e.v).or_default().push(e.u);
        }
        let mut parent = BTreeMap::new();
        let mut children: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        children.insert(NodeId::ROOT, BTreeSet::new());
        let mut stack = vec![NodeId::ROOT];
        while let Some(n) = stack.pop() {
            for &m in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                if m != NodeId::ROOT && !parent.contains_key(&m) {
                    parent.insert(m, n);
                    children.entry(n).or_default().insert(m);
                    children.entry(m).or_default();
                    stack.push(m);
                }
            }
        }
        if parent.len() + 1 != adj.len().max(1) {
            return Err(Error::domain(
                "observable tree is not connected to the substation",
            ));
        }
        Ok(ObservableTree {
            topology,
            parent,
            children,
        })
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent.get(&n).copied()
    }

    pub fn children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children.get(&n).into_iter().flatten().copied()
    }

    pub fn depth(&self, n: NodeId) -> usize {
        depth_in(&self.parent, n)
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.parent(a) == Some(b) || self.parent(b) == Some(a)
    }

    /// Measured nodes by decreasing depth, ties by ascending id.
    pub fn reverse_topological_order(&self) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = self.children.keys().copied().collect();
        nodes.sort_by_key(|&n| (std::cmp::Reverse(self.depth(n)), n));
        nodes
    }
}

fn depth_in(parent: &BTreeMap<NodeId, NodeId>, mut n: NodeId) -> usize {
    let mut d = 0;
    while let Some(&p) = parent.get(&n) {
        n = p;
        d += 1;
    }
    d
}

/// Degree-constrained spanning tree over every pair of measured nodes.
pub fn observable_mst(weights: &PhiWeights) -> Result<ObservableTree> {
    let topology = constrained_mst(
        &complete_graph_edges(weights.nodes()),
        weights,
        NodeId::ROOT,
    )?;
    ObservableTree::from_topology(topology)
}

pub fn observable_mst_from_samples(samples: &SampleSet) -> Result<ObservableTree> {
    observable_mst(&empirical_phi(samples)?)
}

/// The two admissible shapes of a hidden node's neighbourhood in the
/// observable tree.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborhoodConfig {
    /// `c*` hangs directly off the hidden node's parent.
    A,
    /// `c*` hangs off a parent-side child `via`, which hangs off the parent.
    B { via: NodeId },
    /// `c*` hangs off a `c*`-side child `via`, which hangs off the parent.
    /// Consistent with the edge rules but neither A nor B.
    Bridged { via: NodeId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodShape {
    pub hidden: NodeId,
    pub parent: NodeId,
    /// Child of the hidden node with the smallest φ to it.
    pub c_star: NodeId,
    /// Children closer (in φ) to the parent than to `c*`.
    pub attached_to_parent: Vec<NodeId>,
    /// Remaining children other than `c*`.
    pub attached_to_c_star: Vec<NodeId>,
    pub config: NeighborhoodConfig,
}

/// Classifies how the one-hop neighbourhood of a hidden non-leaf node shows
/// up in the observable tree. Fails if two children other than `c*` are
/// joined, a parent-side child is not joined to the parent, or a `c*`-side
/// child is not joined to `c*`. Needs the true tree and φ over all nodes
/// (hidden ones included), so it is a verification aid rather than part of
/// learning. Returns a description of the violated rule on failure.
pub fn classify_neighborhood(
    observable: &ObservableTree,
    truth: &RadialTree,
    full_phi: &PhiWeights,
    hidden: NodeId,
) -> std::result::Result<NeighborhoodShape, String> {
    let parent = truth
        .parent(hidden)
        .ok_or("hidden node is the substation")?;
    let kids = truth.children(hidden);
    if kids.is_empty() {
        return Err(format!("hidden node {hidden} is a leaf"));
    }
    let c_star = *kids
        .iter()
        .min_by(|&&x, &&y| {
            full_phi
                .get(hidden, x)
                .total_cmp(&full_phi.get(hidden, y))
                .then(x.cmp(&y))
        })
        .expect("non-empty");
    for (i, &ci) in kids.iter().enumerate() {
        for &cj in &kids[i + 1..] {
            if ci != c_star && cj != c_star && observable.has_edge(ci, cj) {
                return Err(format!("edge between non-c* children {ci} and {cj}"));
            }
        }
    }
    let mut near_parent = Vec::new();
    let mut near_star = Vec::new();
    for &c in kids.iter().filter(|&&c| c != c_star) {
        if full_phi.get(parent, c) < full_phi.get(c_star, c) {
            if !observable.has_edge(parent, c) {
                return Err(format!("child {c} should attach to parent {parent}"));
            }
            near_parent.push(c);
        } else {
            if !observable.has_edge(c_star, c) {
                return Err(format!("child {c} should attach to c* {c_star}"));
            }
            near_star.push(c);
        }
    }
    let config = if observable.has_edge(parent, c_star) {
        NeighborhoodConfig::A
    } else if let Some(&via) = near_parent
        .iter()
        .find(|&&c| observable.has_edge(c, c_star))
    {
        NeighborhoodConfig::B { via }
    } else if let Some(&via) = near_star.iter().find(|&&c| observable.has_edge(c, parent)) {
        NeighborhoodConfig::Bridged { via }
    } else {
        return Err(format!(
            "children of {hidden} are not linked to its parent {parent} through a child"
        ));
    };
    Ok(NeighborhoodShape {
        hidden,
        parent,
        c_star,
        attached_to_parent: near_parent,
        attached_to_c_star: near_star,
        config,
    })
}

/// Noted while learning; does not stop reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// Several hypotheses for one edge scored within tolerance; the lowest
    /// score was taken.
    Ambiguous {
        parent: NodeId,
        child: NodeId,
        statement: u8,
        /// `(hidden node or None for a direct edge, score)`, best first.
        candidates: Vec<(Option<NodeId>, f64)>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingDataOutcome {
    pub topology: LearnedTopology,
    pub diagnostics: Vec<Diagnostic>,
}

/// No hypothesis matched some neighbourhood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionFailure {
    pub reason: String,
    /// Node whose children could not be explained.
    pub parent: Option<NodeId>,
    pub unexplained_children: Vec<NodeId>,
    pub unresolved_hidden: Vec<NodeId>,
    /// Edges settled before the failure.
    pub partial_edges: Vec<(NodeId, NodeId)>,
}

impl fmt::Display for ReconstructionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "reconstruction failed: {}", self.reason)?;
        if let Some(p) = self.parent {
            write!(
                f,
                " (at node {p}, children {:?})",
                self.unexplained_children
            )?;
        }
        Ok(())
    }
}

impl std::error::Error for ReconstructionFailure {}

struct Learner<'a> {
    grid: &'a GridGraph,
    weights: &'a PhiWeights,
    tolerance: f64,
    parent: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
    below: HashMap<NodeId, CovarianceSum>,
    pending: BTreeSet<NodeId>,
    edges: Vec<LearnedEdge>,
    diagnostics: Vec<Diagnostic>,
}

impl Learner<'_> {
    fn z(&self, a: NodeId, b: NodeId) -> Option<Impedance> {
        self.grid.impedance(a, b)
    }

    fn fail(&self, reason: impl Into<String>, parent: Option<NodeId>, kids: Vec<NodeId>) -> Error {
        Error::Reconstruction(Box::new(ReconstructionFailure {
            reason: reason.into(),
            parent,
            unexplained_children: kids,
            unresolved_hidden: self.pending.iter().copied().collect(),
            partial_edges: self.edges.iter().map(|e| (e.u, e.v)).collect(),
        }))
    }

    fn add_edge(&mut self, a: NodeId, b: NodeId, phi: Option<f64>) {
        self.edges.push(LearnedEdge { u: a, v: b, phi });
    }

    fn detach(&mut self, n: NodeId) {
        if let Some(p) = self.parent.remove(&n) {
            if let Some(set) = self.children.get_mut(&p) {
                set.remove(&n);
            }
        }
        self.children.remove(&n);
    }

    /// Deepest node that still has children in the working tree.
    fn select(&self) -> Option<NodeId> {
        self.children
            .iter()
            .filter(|(_, kids)| !kids.is_empty())
            .map(|(&n, _)| n)
            .max_by_key(|&n| (depth_in(&self.parent, n), std::cmp::Reverse(n)))
    }

    fn run(&mut self) -> Result<()> {
        while !self.pending.is_empty() {
            let a = self.select().ok_or_else(|| {
                self.fail(
                    "hidden nodes remain but the observable tree is exhausted",
                    None,
                    vec![],
                )
            })?;
            let kids: Vec<NodeId> = self.children[&a].iter().copied().collect();
            let mut residual = Vec::new();
            for b in kids {
                if self.pending.is_empty() {
                    break;
                }
                if !self.try_direct_child(a, b) {
                    residual.push(b);
                }
            }
            if residual.is_empty() || self.pending.is_empty() {
                continue;
            }
            if !self.try_hidden_between(a, &residual) && !self.try_hidden_parent(a, &residual) {
                return Err(self.fail("no hidden-node hypothesis matches", Some(a), residual));
            }
        }
        Ok(())
    }

    /// Statement 1 for child `b`, with or without a hidden node below `b`.
    fn try_direct_child(&mut self, a: NodeId, b: NodeId) -> bool {
        let observed = self.weights.get(a, b);
        let Some(line) = self.z(a, b) else {
            return false;
        };
        let below_b = self.below[&b];
        let mut scored: Vec<(Option<NodeId>, f64)> = vec![(
            None,
            check_statement(
                observed,
                Some(&Hypothesis::Edge {
                    line,
                    below: below_b,
                }),
                self.tolerance,
            )
            .score,
        )];
        for &h in &self.pending {
            if self.z(b, h).is_none() {
                continue;
            }
            let hyp = Hypothesis::Edge {
                line,
                below: below_b + self.below[&h],
            };
            scored.push((
                Some(h),
                check_statement(observed, Some(&hyp), self.tolerance).score,
            ));
        }
        scored.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        let (best, score) = scored[0];
        if score > self.tolerance {
            return false;
        }
        let matching: Vec<_> = scored
            .iter()
            .copied()
            .filter(|c| c.1 <= self.tolerance)
            .collect();
        if matching.len() > 1 {
            self.diagnostics.push(Diagnostic::Ambiguous {
                parent: a,
                child: b,
                statement: 1,
                candidates: matching,
            });
        }
        self.add_edge(a, b, Some(observed));
        let mut subtree = below_b;
        if let Some(h) = best {
            self.add_edge(b, h, None);
            self.pending.remove(&h);
            subtree += self.below[&h];
            self.below.insert(b, subtree);
        }
        *self.below.get_mut(&a).expect("working node") += subtree;
        self.detach(b);
        true
    }

    /// Statement 2: one hidden `h` sits between `a` and all of `residual`.
    fn try_hidden_between(&mut self, a: NodeId, residual: &[NodeId]) -> bool {
        let kids_sum = residual
            .iter()
            .fold(CovarianceSum::default(), |s, c| s + self.below[c]);
        let best = self
            .pending
            .iter()
            .filter_map(|&h| {
                let upper = self.z(a, h)?;
                let mut total = 0.0;
                let h_subtree = self.below[&h] + kids_sum;
                for &c in residual {
                    let hyp = Hypothesis::Grandparent {
                        upper,
                        lower: self.z(h, c)?,
                        middle_only: h_subtree - self.below[&c],
                        below: self.below[&c],
                    };
                    total +=
                        check_statement(self.weights.get(a, c), Some(&hyp), self.tolerance).score;
                }
                Some((h, total / residual.len() as f64, h_subtree))
            })
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        let Some((h, score, h_subtree)) = best else {
            return false;
        };
        if score > self.tolerance {
            return false;
        }
        self.add_edge(a, h, None);
        for &c in residual {
            self.add_edge(h, c, None);
            self.detach(c);
        }
        self.pending.remove(&h);
        self.below.insert(h, h_subtree);
        *self.below.get_mut(&a).expect("working node") += h_subtree;
        true
    }

    /// Statement 3: a hidden `h` is the parent of `a` and of all of
    /// `residual`. `h` stays pending until its own parent is found.
    fn try_hidden_parent(&mut self, a: NodeId, residual: &[NodeId]) -> bool {
        if a.is_root() {
            return false;
        }
        let below_a = self.below[&a];
        let best = self
            .pending
            .iter()
            .filter_map(|&h| {
                let left = self.z(h, a)?;
                let mut total = 0.0;
                for &c in residual {
                    let hyp = Hypothesis::Siblings {
                        left,
                        left_below: below_a,
                        right: self.z(h, c)?,
                        right_below: self.below[&c],
                    };
                    total +=
                        check_statement(self.weights.get(a, c), Some(&hyp), self.tolerance).score;
                }
                Some((h, total / residual.len() as f64))
            })
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        let Some((h, score)) = best else {
            return false;
        };
        if score > self.tolerance {
            return false;
        }
        self.add_edge(h, a, None);
        let mut h_subtree = self.below[&h] + below_a;
        for &c in residual {
            self.add_edge(h, c, None);
            h_subtree += self.below[&c];
            self.detach(c);
        }
        self.below.insert(h, h_subtree);
        self.detach(a);
        true
    }
}

/// Reconstructs the full operating tree from φ over the measured nodes.
///
/// `weights` must cover the substation and exactly the nodes not in
/// `hidden`. Impedances come from the grid's candidate lines and
/// covariances from `all_stats`.
pub fn learn_with_missing_weights(
    weights: &PhiWeights,
    grid: &GridGraph,
    hidden: &HiddenNodeSet,
    all_stats: &InjectionStats,
    tolerance: f64,
) -> Result<MissingDataOutcome> {
    if all_stats.num_nodes() != grid.num_nodes() {
        return Err(Error::domain(
            "injection statistics do not match the grid size",
        ));
    }
    for n in grid.nodes() {
        let measured = weights.contains(n);
        if measured == hidden.contains(n) {
            return Err(Error::domain(format!(
                "node {n} must be either measured or hidden, not {}",
                if measured { "both" } else { "neither" }
            )));
        }
    }
    if weights.nodes().len() + hidden.len() != grid.num_nodes() {
        return Err(Error::domain("phi weights cover nodes outside the grid"));
    }

    let observable = observable_mst(weights)?;
    let below = grid
        .nodes()
        .map(|n| {
            let s = all_stats.get(n).map(CovarianceSum::of).unwrap_or_default();
            (n, s)
        })
        .collect();
    let mut learner = Learner {
        grid,
        weights,
        tolerance,
        parent: observable.parent.clone(),
        children: observable.children.clone(),
        below,
        pending: hidden.nodes().clone(),
        edges: Vec::new(),
        diagnostics: Vec::new(),
    };
    learner.run()?;

    let mut edges = learner.edges;
    for (&c, &p) in &learner.parent {
        edges.push(LearnedEdge {
            u: p,
            v: c,
            phi: Some(weights.get(p, c)),
        });
    }
    let topology = LearnedTopology::from_edges(edges);
    debug_assert_eq!(
        topology.edge_set().len(),
        topology.edges.len(),
        "each edge is settled once"
    );
    Ok(MissingDataOutcome {
        topology,
        diagnostics: learner.diagnostics,
    })
}

/// [`learn_with_missing_weights`] on empirical φ. Columns of hidden nodes, if
/// present in `samples`, are ignored.
pub fn learn_with_missing(
    samples: &SampleSet,
    grid: &GridGraph,
    hidden: &HiddenNodeSet,
    all_stats: &InjectionStats,
    tolerance: f64,
) -> Result<MissingDataOutcome> {
    let dropped: Vec<NodeId> = hidden.nodes().iter().copied().collect();
    let observed = samples.without(&dropped);
    learn_with_missing_weights(
        &empirical_phi(&observed)?,
        grid,
        hidden,
        all_stats,
        tolerance,
    )
}

/// Canonical edge keys of a reconstruction, for comparisons.
pub fn edge_keys(outcome: &MissingDataOutcome) -> BTreeSet<(NodeId, NodeId)> {
    outcome
        .topology
        .edges
        .iter()
        .map(|e| edge_key(e.u, e.v))
        .collect()
}
