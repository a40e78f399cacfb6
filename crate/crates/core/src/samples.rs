//! Voltage measurement snapshots.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::NodeId;

/// One snapshot of the reduced system: magnitude deviations `ε = v − 1` and
/// phase angles, indexed by [`NodeId::reduced`].
#[derive(Clone, Debug, PartialEq)]
pub struct VoltageSample {
    pub eps: DVector<f64>,
    pub theta: DVector<f64>,
}

/// `m` snapshots over a labelled set of non-substation nodes. Row `t` is
/// snapshot `t`, column `k` belongs to `nodes()[k]`. Angles are optional.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    nodes: Vec<NodeId>,
    eps: DMatrix<f64>,
    theta: Option<DMatrix<f64>>,
}

impl SampleSet {
    pub fn new(nodes: Vec<NodeId>, eps: DMatrix<f64>, theta: Option<DMatrix<f64>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &n in &nodes {
            if n.is_root() {
                return Err(Error::domain("the substation has no measurement column"));
            }
            if !seen.insert(n) {
                return Err(Error::domain(format!(
                    "node {n} appears twice in the sample set"
                )));
            }
        }
        if eps.ncols() != nodes.len() {
            return Err(Error::domain(format!(
                "{} magnitude columns for {} nodes",
                eps.ncols(),
                nodes.len()
            )));
        }
        if let Some(t) = &theta {
            if t.shape() != eps.shape() {
                return Err(Error::domain(
                    "angle and magnitude matrices differ in shape",
                ));
            }
        }
        Ok(SampleSet { nodes, eps, theta })
    }

    /// Stacks full-system snapshots (all `N − 1` non-root nodes).
    pub fn from_snapshots(snapshots: &[VoltageSample]) -> Result<Self> {
        let n = snapshots.first().map_or(0, |s| s.eps.len());
        if snapshots
            .iter()
            .any(|s| s.eps.len() != n || s.theta.len() != n)
        {
            return Err(Error::domain("snapshots differ in dimension"));
        }
        let m = snapshots.len();
        let eps = DMatrix::from_fn(m, n, |t, k| snapshots[t].eps[k]);
        let theta = DMatrix::from_fn(m, n, |t, k| snapshots[t].theta[k]);
        SampleSet::new((0..n).map(NodeId::from_reduced).collect(), eps, Some(theta))
    }

    pub fn len(&self) -> usize {
        self.eps.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn eps(&self) -> &DMatrix<f64> {
        &self.eps
    }

    pub fn theta(&self) -> Option<&DMatrix<f64>> {
        self.theta.as_ref()
    }

    pub fn column_of(&self, node: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    /// Whether the columns are exactly nodes `1..=k` in order, i.e. the
    /// layout of reduced-system vectors.
    pub fn is_full_system(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(k, n)| n.reduced() == Some(k))
    }

    /// Snapshot `t` as a reduced-system vector pair. Requires angles and
    /// the full-system column layout.
    pub fn snapshot(&self, t: usize) -> Result<VoltageSample> {
        if !self.is_full_system() {
            return Err(Error::domain(
                "snapshot requires columns for nodes 1..N-1 in order",
            ));
        }
        let theta = self
            .theta
            .as_ref()
            .ok_or_else(|| Error::domain("sample set carries no angle measurements"))?;
        Ok(VoltageSample {
            eps: self.eps.row(t).transpose(),
            theta: theta.row(t).transpose(),
        })
    }

    /// The first `m` snapshots.
    pub fn head(&self, m: usize) -> SampleSet {
        let m = m.min(self.len());
        SampleSet {
            nodes: self.nodes.clone(),
            eps: self.eps.rows(0, m).into_owned(),
            theta: self.theta.as_ref().map(|t| t.rows(0, m).into_owned()),
        }
    }

    /// Drops the given nodes' columns.
    pub fn without(&self, dropped: &[NodeId]) -> SampleSet {
        let keep: Vec<usize> = (0..self.nodes.len())
            .filter(|&k| !dropped.contains(&self.nodes[k]))
            .collect();
        SampleSet {
            nodes: keep.iter().map(|&k| self.nodes[k]).collect(),
            eps: self.eps.select_columns(keep.iter()),
            theta: self.theta.as_ref().map(|t| t.select_columns(keep.iter())),
        }
    }

    pub fn without_angles(&self) -> SampleSet {
        SampleSet {
            nodes: self.nodes.clone(),
            eps: self.eps.clone(),
            theta: None,
        }
    }
}
