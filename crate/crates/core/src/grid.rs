//! Feeder graphs, radial operating trees and the path-sum form of the
//! inverse reduced Laplacian.
//!
//! Node `0` is always the substation. Every per-node vector or matrix that
//! describes the reduced system (substation removed) is indexed by
//! `node - 1`; see [`NodeId::reduced`].

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    /// The substation.
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_root(self) -> bool {
        self.0 == 0
    }

    /// Row/column of this node in reduced-system vectors and matrices.
    /// `None` for the substation.
    pub fn reduced(self) -> Option<usize> {
        self.0.checked_sub(1)
    }

    /// Inverse of [`NodeId::reduced`].
    pub fn from_reduced(i: usize) -> NodeId {
        NodeId(i + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Orders an undirected edge as `(smaller, larger)`.
pub fn edge_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Series line impedance in per-unit; both parts strictly positive.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impedance {
    r: f64,
    x: f64,
}

impl Impedance {
    pub fn new(r: f64, x: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::domain(format!(
                "line resistance must be positive, got {r}"
            )));
        }
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::domain(format!(
                "line reactance must be positive, got {x}"
            )));
        }
        Ok(Impedance { r, x })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn part(&self, kind: WeightKind) -> f64 {
        match kind {
            WeightKind::Resistance => self.r,
            WeightKind::Reactance => self.x,
        }
    }

    /// Series connection of two lines.
    pub fn series(&self, other: &Impedance) -> Impedance {
        Impedance {
            r: self.r + other.r,
            x: self.x + other.x,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Impedance> {
        Impedance::new(self.r * factor, self.x * factor)
    }
}

/// Which impedance part weights the Laplacian (`1/r` or `1/x` edge weights).
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Resistance,
    Reactance,
}

/// A physically present line, open or closed.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Line {
    pub u: NodeId,
    pub v: NodeId,
    pub impedance: Impedance,
}

impl Line {
    pub fn new(u: NodeId, v: NodeId, impedance: Impedance) -> Self {
        Line { u, v, impedance }
    }

    pub fn key(&self) -> (NodeId, NodeId) {
        edge_key(self.u, self.v)
    }
}

/// The loopy layout: every candidate line with its impedance.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGraph {
    num_nodes: usize,
    lines: Vec<Line>,
    index: HashMap<(NodeId, NodeId), usize>,
}

impl GridGraph {
    pub fn new(num_nodes: usize, lines: Vec<Line>) -> Result<Self> {
        if num_nodes < 2 {
            return Err(Error::domain("a feeder needs at least two nodes"));
        }
        let mut index = HashMap::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            check_line_endpoints(num_nodes, line)?;
            if index.insert(line.key(), i).is_some() {
                return Err(Error::domain(format!(
                    "duplicate candidate edge ({}, {})",
                    line.u, line.v
                )));
            }
        }
        let adjacency = adjacency_lists(num_nodes, lines.iter().map(|l| (l.u, l.v)));
        if reachable_from_root(&adjacency).iter().any(|seen| !seen) {
            return Err(Error::domain("candidate edge set is not connected"));
        }
        Ok(GridGraph {
            num_nodes,
            lines,
            index,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.num_nodes).map(NodeId)
    }

    pub fn contains_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.index.contains_key(&edge_key(a, b))
    }

    pub fn impedance(&self, a: NodeId, b: NodeId) -> Option<Impedance> {
        self.index
            .get(&edge_key(a, b))
            .map(|&i| self.lines[i].impedance)
    }

    pub fn edge_keys(&self) -> Vec<(NodeId, NodeId)> {
        self.lines.iter().map(Line::key).collect()
    }
}

fn check_line_endpoints(num_nodes: usize, line: &Line) -> Result<()> {
    for n in [line.u, line.v] {
        if n.index() >= num_nodes {
            return Err(Error::UnknownNode(n));
        }
    }
    if line.u == line.v {
        return Err(Error::domain(format!("self-loop at node {}", line.u)));
    }
    Ok(())
}

fn adjacency_lists(
    num_nodes: usize,
    edges: impl Iterator<Item = (NodeId, NodeId)>,
) -> Vec<Vec<NodeId>> {
    let mut adj = vec![Vec::new(); num_nodes];
    for (u, v) in edges {
        adj[u.index()].push(v);
        adj[v.index()].push(u);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

fn reachable_from_root(adj: &[Vec<NodeId>]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([NodeId::ROOT]);
    seen[0] = true;
    while let Some(n) = queue.pop_front() {
        for &m in &adj[n.index()] {
            if !seen[m.index()] {
                seen[m.index()] = true;
                queue.push_back(m);
            }
        }
    }
    seen
}

/// An operating configuration: a spanning tree over all nodes, oriented away
/// from the substation, whose root has exactly one child.
#[derive(Clone, Debug)]
pub struct RadialTree {
    parent: Vec<Option<(NodeId, Impedance)>>,
    children: Vec<Vec<NodeId>>,
    depth: Vec<usize>,
    preorder: Vec<NodeId>,
    // Preorder entry index and one-past-last index of each subtree.
    enter: Vec<usize>,
    exit: Vec<usize>,
}

impl RadialTree {
    pub fn from_lines(num_nodes: usize, lines: &[Line]) -> Result<Self> {
        if num_nodes < 2 {
            return Err(Error::domain("a radial tree needs at least two nodes"));
        }
        if lines.len() != num_nodes - 1 {
            return Err(Error::domain(format!(
                "a spanning tree on {num_nodes} nodes has {} edges, got {}",
                num_nodes - 1,
                lines.len()
            )));
        }
        let mut keys = BTreeSet::new();
        for line in lines {
            check_line_endpoints(num_nodes, line)?;
            if !keys.insert(line.key()) {
                return Err(Error::domain(format!(
                    "duplicate edge ({}, {})",
                    line.u, line.v
                )));
            }
        }
        let mut incident: Vec<Vec<(NodeId, Impedance)>> = vec![Vec::new(); num_nodes];
        for line in lines {
            incident[line.u.index()].push((line.v, line.impedance));
            incident[line.v.index()].push((line.u, line.impedance));
        }
        for list in &mut incident {
            list.sort_by_key(|&(n, _)| n);
        }
        if incident[0].len() != 1 {
            return Err(Error::domain(format!(
                "substation must have degree one, has degree {}",
                incident[0].len()
            )));
        }

        let mut parent: Vec<Option<(NodeId, Impedance)>> = vec![None; num_nodes];
        let mut children = vec![Vec::new(); num_nodes];
        let mut depth = vec![0; num_nodes];
        let mut visited = vec![false; num_nodes];
        let mut preorder = Vec::with_capacity(num_nodes);
        let mut stack = vec![NodeId::ROOT];
        visited[0] = true;
        while let Some(n) = stack.pop() {
            preorder.push(n);
            // Reverse so that the smallest child is visited first.
            for &(m, z) in incident[n.index()].iter().rev() {
                if visited[m.index()] {
                    continue;
                }
                visited[m.index()] = true;
                parent[m.index()] = Some((n, z));
                depth[m.index()] = depth[n.index()] + 1;
                stack.push(m);
            }
        }
        if preorder.len() != num_nodes {
            return Err(Error::domain(
                "edge set is not connected (contains a cycle)",
            ));
        }
        for n in &preorder[1..] {
            let (p, _) = parent[n.index()].expect("non-root nodes have parents");
            children[p.index()].push(*n);
        }
        for list in &mut children {
            list.sort_unstable();
        }

        let mut enter = vec![0; num_nodes];
        let mut exit = vec![0; num_nodes];
        for (pos, n) in preorder.iter().enumerate() {
            enter[n.index()] = pos;
        }
        // Subtree sizes by reverse preorder.
        let mut size = vec![1usize; num_nodes];
        for n in preorder.iter().rev() {
            if let Some((p, _)) = parent[n.index()] {
                size[p.index()] += size[n.index()];
            }
        }
        for n in 0..num_nodes {
            exit[n] = enter[n] + size[n];
        }

        Ok(RadialTree {
            parent,
            children,
            depth,
            preorder,
            enter,
            exit,
        })
    }

    /// Builds the tree from a subset of the grid's candidate edges, taking
    /// impedances from the grid.
    pub fn from_grid_edges(grid: &GridGraph, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let lines = edges
            .iter()
            .map(|&(a, b)| {
                grid.impedance(a, b)
                    .map(|z| Line::new(a, b, z))
                    .ok_or_else(|| {
                        Error::domain(format!("edge ({a}, {b}) is not a candidate line"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        RadialTree::from_lines(grid.num_nodes(), &lines)
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    fn check(&self, a: NodeId) -> Result<()> {
        if a.index() < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::UnknownNode(a))
        }
    }

    pub fn parent(&self, a: NodeId) -> Option<NodeId> {
        self.parent
            .get(a.index())
            .copied()
            .flatten()
            .map(|(p, _)| p)
    }

    /// Impedance of the line from `a` to its parent.
    pub fn parent_impedance(&self, a: NodeId) -> Option<Impedance> {
        self.parent
            .get(a.index())
            .copied()
            .flatten()
            .map(|(_, z)| z)
    }

    pub fn children(&self, a: NodeId) -> &[NodeId] {
        &self.children[a.index()]
    }

    pub fn depth(&self, a: NodeId) -> usize {
        self.depth[a.index()]
    }

    /// Nodes in depth-first preorder from the substation.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    /// All edges as `(child, parent, impedance)`, in preorder of the child.
    pub fn lines(&self) -> impl Iterator<Item = (NodeId, NodeId, Impedance)> + '_ {
        self.preorder[1..].iter().map(move |&n| {
            let (p, z) = self.parent[n.index()].expect("non-root node");
            (n, p, z)
        })
    }

    /// Edge set as canonical `(smaller, larger)` pairs.
    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.lines().map(|(c, p, _)| edge_key(c, p)).collect()
    }

    /// Whether `c` lies in the subtree rooted at `a` (including `a` itself).
    pub fn is_descendant(&self, c: NodeId, a: NodeId) -> bool {
        let pos = self.enter[c.index()];
        self.enter[a.index()] <= pos && pos < self.exit[a.index()]
    }

    /// Edges on the unique path from `a` up to the substation, as
    /// `(child, parent)` pairs starting at `a`.
    pub fn path_to_root(&self, a: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        self.check(a)?;
        let mut path = Vec::with_capacity(self.depth(a));
        let mut n = a;
        while let Some(p) = self.parent(n) {
            path.push((n, p));
            n = p;
        }
        Ok(path)
    }

    /// The subtree rooted at `a`, including `a`, in ascending order.
    pub fn descendants(&self, a: NodeId) -> Result<Vec<NodeId>> {
        self.check(a)?;
        let mut out: Vec<NodeId> =
            self.preorder[self.enter[a.index()]..self.exit[a.index()]].to_vec();
        out.sort_unstable();
        Ok(out)
    }

    /// Tree distance in hops.
    pub fn hops(&self, a: NodeId, b: NodeId) -> usize {
        let (mut a, mut b) = (a, b);
        let mut hops = 0;
        while self.depth(a) > self.depth(b) {
            a = self.parent(a).expect("deeper node has a parent");
            hops += 1;
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent(b).expect("deeper node has a parent");
            hops += 1;
        }
        while a != b {
            a = self.parent(a).expect("not at root");
            b = self.parent(b).expect("not at root");
            hops += 2;
        }
        hops
    }

    /// `H⁻¹` for `1/r` (or `1/x`) edge weights, by path accumulation:
    /// entry `(a, b)` is the summed impedance part over the edges shared by
    /// the root paths of `a` and `b`.
    pub fn reduced_laplacian_inverse(&self, kind: WeightKind) -> HInverse {
        let n = self.num_nodes() - 1;
        let mut m = DMatrix::<f64>::zeros(n, n);
        // Row of `a` equals the row of its parent plus the line part on the
        // columns of a's subtree. Preorder guarantees the parent row is done.
        for &a in &self.preorder[1..] {
            let (p, z) = self.parent[a.index()].expect("non-root node");
            let w = z.part(kind);
            let ra = a.reduced().expect("non-root");
            if let Some(rp) = p.reduced() {
                for c in 0..n {
                    m[(ra, c)] = m[(rp, c)];
                }
            }
            for &d in &self.preorder[self.enter[a.index()]..self.exit[a.index()]] {
                let rd = d
                    .reduced()
                    .expect("subtree of a non-root node excludes root");
                m[(ra, rd)] += w;
            }
        }
        HInverse { matrix: m }
    }

    /// The reduced weighted Laplacian itself (`1/r` or `1/x` weights).
    pub fn reduced_laplacian(&self, kind: WeightKind) -> DMatrix<f64> {
        let n = self.num_nodes() - 1;
        let mut h = DMatrix::<f64>::zeros(n, n);
        for (c, p, z) in self.lines() {
            let w = 1.0 / z.part(kind);
            let rc = c.reduced().expect("child is never the root");
            h[(rc, rc)] += w;
            if let Some(rp) = p.reduced() {
                h[(rp, rp)] += w;
                h[(rc, rp)] -= w;
                h[(rp, rc)] -= w;
            }
        }
        h
    }

    /// `H⁻¹(a, c) − H⁻¹(b, c)` for a tree edge with `b` the parent of `a`:
    /// the line part of `(a, b)` when `c` is in a's subtree, zero otherwise.
    pub fn h_inverse_difference(
        &self,
        a: NodeId,
        b: NodeId,
        c: NodeId,
        kind: WeightKind,
    ) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        self.check(c)?;
        match self.parent[a.index()] {
            Some((p, z)) if p == b => Ok(if self.is_descendant(c, a) {
                z.part(kind)
            } else {
                0.0
            }),
            _ => Err(Error::domain(format!(
                "({a}, {b}) is not a tree edge with {b} as parent"
            ))),
        }
    }
}

/// Dense inverse reduced Laplacian, rows and columns indexed by
/// [`NodeId::reduced`].
#[derive(Clone, Debug, PartialEq)]
pub struct HInverse {
    matrix: DMatrix<f64>,
}

impl HInverse {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Entry for two nodes; rows of the substation are identically zero.
    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        match (a.reduced(), b.reduced()) {
            (Some(i), Some(j)) => self.matrix[(i, j)],
            _ => 0.0,
        }
    }
}
