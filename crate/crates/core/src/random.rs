//! Seeded generators for feeders, injection statistics and hidden-node sets.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{edge_key, GridGraph, Impedance, Line, NodeId, RadialTree};
use crate::hidden::HiddenNodeSet;
use crate::lcpf::{InjectionStats, NodeInjection};

/// Generator for trial `index` of a run seeded with `seed`. Each trial gets
/// its own ChaCha stream, so trials can run in any order.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Closed interval `[lo, hi]` with `0 < lo <= hi`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct PositiveRange {
    lo: f64,
    hi: f64,
}

impl PositiveRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::domain(format!(
                "range [{lo}, {hi}] must satisfy 0 < lo <= hi"
            )));
        }
        Ok(PositiveRange { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl TryFrom<[f64; 2]> for PositiveRange {
    type Error = Error;
    fn try_from([lo, hi]: [f64; 2]) -> Result<Self> {
        PositiveRange::new(lo, hi)
    }
}

impl From<PositiveRange> for [f64; 2] {
    fn from(r: PositiveRange) -> Self {
        [r.lo, r.hi]
    }
}

fn random_impedance<R: Rng + ?Sized>(range: PositiveRange, rng: &mut R) -> Impedance {
    Impedance::new(range.sample(rng), range.sample(rng)).expect("range is positive")
}

/// A random radial feeder plus `num_extra_edges` open candidate lines.
///
/// The tree grows by attaching node `k` to a uniform node among `1..k`
/// (node 1 hangs off the substation), after which the non-substation labels
/// are shuffled. Extra lines are drawn uniformly from the missing pairs of
/// non-substation nodes. Line parameters are uniform on `impedance_range`.
pub fn generate_random_feeder(
    num_nodes: usize,
    num_extra_edges: usize,
    impedance_range: PositiveRange,
    seed: u64,
) -> Result<(GridGraph, RadialTree)> {
    generate_feeder_with(
        num_nodes,
        num_extra_edges,
        impedance_range,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

pub fn generate_feeder_with<R: Rng + ?Sized>(
    num_nodes: usize,
    num_extra_edges: usize,
    impedance_range: PositiveRange,
    rng: &mut R,
) -> Result<(GridGraph, RadialTree)> {
    if num_nodes < 2 {
        return Err(Error::domain("a feeder needs at least two nodes"));
    }
    let loads = num_nodes - 1;
    let capacity = loads * (loads - 1) / 2 - (loads - 1);
    if num_extra_edges > capacity {
        return Err(Error::domain(format!(
            "{num_extra_edges} extra lines requested but only {capacity} node pairs are free"
        )));
    }

    let mut label: Vec<usize> = (1..num_nodes).collect();
    label.shuffle(rng);
    let relabel = |k: usize| {
        if k == 0 {
            NodeId::ROOT
        } else {
            NodeId(label[k - 1])
        }
    };

    let mut tree_lines = Vec::with_capacity(loads);
    tree_lines.push(Line::new(
        NodeId::ROOT,
        relabel(1),
        random_impedance(impedance_range, rng),
    ));
    for k in 2..num_nodes {
        let parent = rng.random_range(1..k);
        tree_lines.push(Line::new(
            relabel(parent),
            relabel(k),
            random_impedance(impedance_range, rng),
        ));
    }
    let tree = RadialTree::from_lines(num_nodes, &tree_lines)?;

    let used: BTreeSet<(NodeId, NodeId)> = tree_lines.iter().map(Line::key).collect();
    let mut free = Vec::with_capacity(capacity);
    for a in 1..num_nodes {
        for b in a + 1..num_nodes {
            let key = edge_key(NodeId(a), NodeId(b));
            if !used.contains(&key) {
                free.push(key);
            }
        }
    }
    let mut lines = tree_lines;
    for &(a, b) in free.choose_multiple(rng, num_extra_edges) {
        lines.push(Line::new(a, b, random_impedance(impedance_range, rng)));
    }
    lines.sort_by_key(Line::key);
    let grid = GridGraph::new(num_nodes, lines)?;
    Ok((grid, tree))
}

/// Distribution of per-node injection statistics.
///
/// Per node: `var_p` uniform on `var_p`, `var_q = s · var_p` with `s`
/// uniform on `var_q_ratio`, correlation `ρ` uniform on `correlation`, and
/// `cov_pq = ρ √(var_p var_q)`. Means are loads: `−U(mean_p)`, `−U(mean_q)`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsEnsemble {
    pub var_p: PositiveRange,
    pub var_q_ratio: PositiveRange,
    pub correlation: PositiveRange,
    pub mean_p: PositiveRange,
    pub mean_q: PositiveRange,
}

impl Default for StatsEnsemble {
    fn default() -> Self {
        StatsEnsemble {
            var_p: PositiveRange { lo: 0.5, hi: 1.5 },
            var_q_ratio: PositiveRange { lo: 0.25, hi: 1.0 },
            correlation: PositiveRange { lo: 0.1, hi: 0.9 },
            mean_p: PositiveRange { lo: 0.5, hi: 1.5 },
            mean_q: PositiveRange { lo: 0.1, hi: 0.5 },
        }
    }
}

impl StatsEnsemble {
    pub fn validate(&self) -> Result<()> {
        if self.correlation.hi > 1.0 {
            return Err(Error::schema(
                "stats.correlation",
                "correlation must not exceed 1",
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, num_nodes: usize, rng: &mut R) -> Result<InjectionStats> {
        self.validate()?;
        let entries = (1..num_nodes)
            .map(|_| {
                let var_p = self.var_p.sample(rng);
                let var_q = self.var_q_ratio.sample(rng) * var_p;
                let rho = self.correlation.sample(rng);
                NodeInjection {
                    mu_p: -self.mean_p.sample(rng),
                    mu_q: -self.mean_q.sample(rng),
                    var_p,
                    var_q,
                    cov_pq: rho * (var_p * var_q).sqrt(),
                }
            })
            .collect();
        InjectionStats::new(entries)
    }
}

/// Draws `count` hidden nodes that are not adjacent to the substation and
/// pairwise more than two hops apart.
///
/// Each attempt scans the eligible nodes in random order and keeps every
/// node compatible with those already kept; attempts that end short are
/// rejected.
pub fn sample_hidden_set<R: Rng + ?Sized>(
    tree: &RadialTree,
    count: usize,
    rng: &mut R,
) -> Result<HiddenNodeSet> {
    const ATTEMPTS: usize = 1000;
    let mut eligible: Vec<NodeId> = (1..tree.num_nodes())
        .map(NodeId)
        .filter(|&n| tree.parent(n) != Some(NodeId::ROOT))
        .collect();
    for _ in 0..ATTEMPTS {
        eligible.shuffle(rng);
        let mut chosen: Vec<NodeId> = Vec::with_capacity(count);
        for &n in &eligible {
            if chosen.len() == count {
                break;
            }
            if chosen.iter().all(|&h| tree.hops(h, n) > 2) {
                chosen.push(n);
            }
        }
        if chosen.len() == count {
            let set = HiddenNodeSet::new(chosen)?;
            debug_assert!(set.check_placement(tree).is_ok());
            return Ok(set);
        }
    }
    Err(Error::domain(format!(
        "could not place {count} hidden nodes more than two hops apart"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range() -> PositiveRange {
        PositiveRange::new(0.01, 0.1).unwrap()
    }

    #[test]
    fn thirty_node_feeder() {
        let (grid, tree) = generate_random_feeder(30, 30, range(), 7).unwrap();
        assert_eq!(grid.lines().len(), 59);
        assert_eq!(tree.edge_set().len(), 29);
        assert!(tree
            .edge_set()
            .iter()
            .all(|&(a, b)| grid.contains_edge(a, b)));
        assert_eq!(tree.children(NodeId::ROOT).len(), 1);
        let root_lines = grid
            .lines()
            .iter()
            .filter(|l| l.u.is_root() || l.v.is_root())
            .count();
        assert_eq!(root_lines, 1);
    }

    #[test]
    fn two_node_feeder() {
        let (grid, tree) = generate_random_feeder(2, 0, range(), 3).unwrap();
        assert_eq!(grid.lines().len(), 1);
        assert_eq!(tree.parent(NodeId(1)), Some(NodeId::ROOT));
        assert!(generate_random_feeder(2, 1, range(), 3).is_err());
        assert!(generate_random_feeder(1, 0, range(), 3).is_err());
    }

    #[test]
    fn same_seed_same_feeder() {
        let a = generate_random_feeder(20, 10, range(), 11).unwrap();
        let b = generate_random_feeder(20, 10, range(), 11).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.edge_set(), b.1.edge_set());
        let c = generate_random_feeder(20, 10, range(), 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn extra_edge_capacity() {
        // 5 loads: 10 pairs, 4 used by the tree.
        assert!(generate_random_feeder(6, 6, range(), 1).is_ok());
        assert!(generate_random_feeder(6, 7, range(), 1).is_err());
    }

    #[test]
    fn ensemble_produces_valid_stats() {
        let mut rng = trial_rng(5, 0);
        let stats = StatsEnsemble::default().sample(40, &mut rng).unwrap();
        assert_eq!(stats.num_nodes(), 40);
        assert!(stats
            .entries()
            .iter()
            .all(|e| e.mu_p < 0.0 && e.cov_pq > 0.0));
    }

    #[test]
    fn ranges_reject_bad_bounds() {
        assert!(PositiveRange::new(0.0, 1.0).is_err());
        assert!(PositiveRange::new(2.0, 1.0).is_err());
        assert!(serde_json::from_str::<PositiveRange>("[0.2, 0.1]").is_err());
        assert_eq!(
            serde_json::from_str::<PositiveRange>("[0.1, 0.2]").unwrap(),
            PositiveRange::new(0.1, 0.2).unwrap()
        );
    }

    #[test]
    fn hidden_sets_respect_spacing() {
        let (_, tree) = generate_random_feeder(30, 0, range(), 2).unwrap();
        let mut rng = trial_rng(9, 1);
        for k in 1..=4 {
            let set = sample_hidden_set(&tree, k, &mut rng).unwrap();
            assert_eq!(set.len(), k);
            set.check_placement(&tree).unwrap();
        }
    }

    #[test]
    fn trial_streams_differ() {
        let a: u64 = trial_rng(1, 0).random();
        let b: u64 = trial_rng(1, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, trial_rng(1, 0).random::<u64>());
    }
}
