//! Linear-coupled power flow on a radial tree.
//!
//! With `A = H⁻¹` for `1/r` weights and `B = H⁻¹` for `1/x` weights, the
//! reduced-system voltages respond to injections as
//!
//! ```text
//! ε = A p + B q        θ = B p − A q
//! ```
//!
//! Injection fluctuations are independent across nodes and Gaussian within
//! a node, so every second moment of `ε` follows in closed form from the
//! per-node 2×2 covariances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NodeId, RadialTree, WeightKind};
use crate::learn::PhiWeights;
use crate::samples::{SampleSet, VoltageSample};

/// First and second moments of one node's active/reactive injection.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInjection {
    pub mu_p: f64,
    pub mu_q: f64,
    pub var_p: f64,
    pub var_q: f64,
    pub cov_pq: f64,
}

impl NodeInjection {
    /// Checks the per-node independence model: positive variances,
    /// positively correlated `p` and `q`, and a valid 2×2 covariance.
    pub fn validate(&self) -> Result<()> {
        let all = [self.mu_p, self.mu_q, self.var_p, self.var_q, self.cov_pq];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("injection statistics must be finite"));
        }
        if self.var_p <= 0.0 || self.var_q <= 0.0 {
            return Err(Error::domain("injection variances must be positive"));
        }
        if self.cov_pq <= 0.0 {
            return Err(Error::domain(
                "active and reactive injections must be positively correlated",
            ));
        }
        if self.cov_pq * self.cov_pq > self.var_p * self.var_q {
            return Err(Error::domain("cov_pq² exceeds var_p·var_q"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        [[self.var_p, self.cov_pq], [self.cov_pq, self.var_q]]
    }
}

/// Injection statistics for every non-substation node, indexed by
/// [`NodeId::reduced`]. Cross-node covariances are zero by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionStats {
    entries: Vec<NodeInjection>,
}

impl InjectionStats {
    pub fn new(entries: Vec<NodeInjection>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("injection statistics need at least one node"));
        }
        for (i, e) in entries.iter().enumerate() {
            e.validate()
                .map_err(|err| Error::domain(format!("node {}: {err}", NodeId::from_reduced(i))))?;
        }
        Ok(InjectionStats { entries })
    }

    /// Number of nodes including the substation.
    pub fn num_nodes(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn entries(&self) -> &[NodeInjection] {
        &self.entries
    }

    pub fn get(&self, node: NodeId) -> Option<&NodeInjection> {
        node.reduced().and_then(|i| self.entries.get(i))
    }

    /// Multiplies every (co)variance by `factor`, leaving means alone.
    pub fn scale_covariances(&self, factor: f64) -> Result<Self> {
        InjectionStats::new(
            self.entries
                .iter()
                .map(|e| NodeInjection {
                    var_p: e.var_p * factor,
                    var_q: e.var_q * factor,
                    cov_pq: e.cov_pq * factor,
                    ..*e
                })
                .collect(),
        )
    }

    fn column(&self, f: impl Fn(&NodeInjection) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.entries.len(), self.entries.iter().map(f))
    }
}

/// One injection snapshot of the reduced system.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionSample {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoltageMoments {
    pub mu_eps: DVector<f64>,
    pub mu_theta: DVector<f64>,
    pub omega_eps: DMatrix<f64>,
}

/// The linear map of one radial configuration, with both inverse reduced
/// Laplacians precomputed.
#[derive(Clone, Debug)]
pub struct LcpfModel {
    hr_inv: DMatrix<f64>,
    hx_inv: DMatrix<f64>,
}

impl LcpfModel {
    pub fn new(tree: &RadialTree) -> Self {
        LcpfModel {
            hr_inv: tree
                .reduced_laplacian_inverse(WeightKind::Resistance)
                .into_matrix(),
            hx_inv: tree
                .reduced_laplacian_inverse(WeightKind::Reactance)
                .into_matrix(),
        }
    }

    /// Size of the reduced system.
    pub fn dim(&self) -> usize {
        self.hr_inv.nrows()
    }

    pub fn hr_inv(&self) -> &DMatrix<f64> {
        &self.hr_inv
    }

    pub fn hx_inv(&self) -> &DMatrix<f64> {
        &self.hx_inv
    }

    pub fn solve(&self, sample: &InjectionSample) -> Result<VoltageSample> {
        let n = self.dim();
        if sample.p.len() != n || sample.q.len() != n {
            return Err(Error::domain(format!(
                "injection sample has dimension ({}, {}), system has {n}",
                sample.p.len(),
                sample.q.len()
            )));
        }
        Ok(VoltageSample {
            eps: &self.hr_inv * &sample.p + &self.hx_inv * &sample.q,
            theta: &self.hx_inv * &sample.p - &self.hr_inv * &sample.q,
        })
    }

    /// Draws `m` injection snapshots and maps them to voltages. Equivalent
    /// to [`sample_injections`] followed by [`LcpfModel::solve`] per row.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        stats: &InjectionStats,
        m: usize,
        rng: &mut R,
    ) -> Result<SampleSet> {
        if stats.num_nodes() != self.dim() + 1 {
            return Err(Error::domain(
                "injection statistics do not match the tree size",
            ));
        }
        let (p, q) = draw_injections(stats, m, rng)?;
        // Rows are snapshots, so `ε_rowᵀ = pᵀ A + qᵀ B` (A and B symmetric).
        let eps = &p * &self.hr_inv + &q * &self.hx_inv;
        let theta = &p * &self.hx_inv - &q * &self.hr_inv;
        let nodes = (0..self.dim()).map(NodeId::from_reduced).collect();
        SampleSet::new(nodes, eps, Some(theta))
    }

    pub fn moments(&self, stats: &InjectionStats) -> Result<VoltageMoments> {
        if stats.num_nodes() != self.dim() + 1 {
            return Err(Error::domain(
                "injection statistics do not match the tree size",
            ));
        }
        let mu_p = stats.column(|e| e.mu_p);
        let mu_q = stats.column(|e| e.mu_q);
        Ok(VoltageMoments {
            mu_eps: &self.hr_inv * &mu_p + &self.hx_inv * &mu_q,
            mu_theta: &self.hx_inv * &mu_p - &self.hr_inv * &mu_q,
            omega_eps: self.eps_covariance(
                stats.column(|e| e.var_p).as_slice(),
                stats.column(|e| e.var_q).as_slice(),
                stats.column(|e| e.cov_pq).as_slice(),
            ),
        })
    }

    /// `Ω_ε = A Ω_p A + B Ω_q B + A Ω_pq B + B Ω_pq A` for diagonal
    /// injection covariances given by their diagonals. No positivity is
    /// required here, so degenerate fixtures can be evaluated directly.
    pub fn eps_covariance(&self, var_p: &[f64], var_q: &[f64], cov_pq: &[f64]) -> DMatrix<f64> {
        let a = &self.hr_inv;
        let b = &self.hx_inv;
        let scale_cols = |m: &DMatrix<f64>, d: &[f64]| {
            let mut out = m.clone();
            for (j, mut col) in out.column_iter_mut().enumerate() {
                col *= d[j];
            }
            out
        };
        let a_dp = scale_cols(a, var_p);
        let b_dq = scale_cols(b, var_q);
        let a_dpq = scale_cols(a, cov_pq);
        let b_dpq = scale_cols(b, cov_pq);
        &a_dp * a + &b_dq * b + &a_dpq * b + &b_dpq * a
    }

    /// Variance of `ε_a − ε_b` by direct summation over injection nodes.
    /// The substation is the reference (`ε ≡ 0`).
    pub fn phi(&self, stats: &InjectionStats, a: NodeId, b: NodeId) -> Result<f64> {
        if a == b {
            return Err(Error::domain(format!(
                "phi needs two distinct nodes, got {a} twice"
            )));
        }
        for n in [a, b] {
            if n.index() > self.dim() {
                return Err(Error::UnknownNode(n));
            }
        }
        let row = |m: &DMatrix<f64>, n: NodeId, d: usize| n.reduced().map_or(0.0, |i| m[(i, d)]);
        let mut total = 0.0;
        for (d, e) in stats.entries().iter().enumerate() {
            let dr = row(&self.hr_inv, a, d) - row(&self.hr_inv, b, d);
            let dx = row(&self.hx_inv, a, d) - row(&self.hx_inv, b, d);
            total += dr * dr * e.var_p + dx * dx * e.var_q + 2.0 * dr * dx * e.cov_pq;
        }
        Ok(total)
    }

    /// Exact φ for every node pair, substation included, computed from
    /// `Ω_ε` as `Ω(a,a) − 2Ω(a,b) + Ω(b,b)`.
    pub fn phi_weights(&self, stats: &InjectionStats) -> Result<PhiWeights> {
        let omega = self.moments(stats)?.omega_eps;
        let n = self.dim() + 1;
        let cov = |a: usize, b: usize| {
            if a == 0 || b == 0 {
                0.0
            } else {
                omega[(a - 1, b - 1)]
            }
        };
        let matrix = DMatrix::from_fn(n, n, |a, b| {
            let (lo, hi) = (a.min(b), a.max(b));
            if lo == hi {
                0.0
            } else {
                (cov(lo, lo) - 2.0 * cov(lo, hi) + cov(hi, hi)).max(0.0)
            }
        });
        PhiWeights::from_matrix((0..n).map(NodeId).collect(), matrix)
    }
}

/// Per-node `(p, q)` draws in snapshot-major order: snapshot `t` consumes
/// two standard normals per node, nodes ascending.
fn draw_injections<R: Rng + ?Sized>(
    stats: &InjectionStats,
    m: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m == 0 {
        return Err(Error::domain("at least one sample must be drawn"));
    }
    let n = stats.entries().len();
    // Cholesky factor of [[var_p, cov], [cov, var_q]] per node.
    let factors: Vec<(f64, f64, f64)> = stats
        .entries()
        .iter()
        .map(|e| {
            let l11 = e.var_p.sqrt();
            let l21 = e.cov_pq / l11;
            let l22 = (e.var_q - l21 * l21).max(0.0).sqrt();
            (l11, l21, l22)
        })
        .collect();
    let mut p = DMatrix::zeros(m, n);
    let mut q = DMatrix::zeros(m, n);
    for t in 0..m {
        for (k, (e, &(l11, l21, l22))) in stats.entries().iter().zip(&factors).enumerate() {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            p[(t, k)] = e.mu_p + l11 * z1;
            q[(t, k)] = e.mu_q + l21 * z1 + l22 * z2;
        }
    }
    Ok((p, q))
}

/// `m` independent injection snapshots.
pub fn sample_injections<R: Rng + ?Sized>(
    stats: &InjectionStats,
    m: usize,
    rng: &mut R,
) -> Result<Vec<InjectionSample>> {
    let (p, q) = draw_injections(stats, m, rng)?;
    Ok((0..m)
        .map(|t| InjectionSample {
            p: p.row(t).transpose(),
            q: q.row(t).transpose(),
        })
        .collect())
}

pub fn solve_lcpf(tree: &RadialTree, sample: &InjectionSample) -> Result<VoltageSample> {
    LcpfModel::new(tree).solve(sample)
}

pub fn exact_voltage_moments(tree: &RadialTree, stats: &InjectionStats) -> Result<VoltageMoments> {
    LcpfModel::new(tree).moments(stats)
}

pub fn phi_exact(tree: &RadialTree, stats: &InjectionStats, a: NodeId, b: NodeId) -> Result<f64> {
    LcpfModel::new(tree).phi(stats, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::{chain, tree};
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_stats(n: usize, var_p: f64, var_q: f64, cov_pq: f64) -> InjectionStats {
        InjectionStats::new(vec![
            NodeInjection {
                mu_p: 0.0,
                mu_q: 0.0,
                var_p,
                var_q,
                cov_pq
            };
            n
        ])
        .unwrap()
    }

    #[test]
    fn solve_chain_example() {
        let t = chain(1.0, 1.0);
        let v = solve_lcpf(
            &t,
            &InjectionSample {
                p: dvector![0.0, 1.0],
                q: dvector![0.0, 0.0],
            },
        )
        .unwrap();
        assert_eq!(v.eps, dvector![1.0, 2.0]);
        assert_eq!(v.theta, dvector![1.0, 2.0]);

        let zero = solve_lcpf(
            &t,
            &InjectionSample {
                p: dvector![0.0, 0.0],
                q: dvector![0.0, 0.0],
            },
        )
        .unwrap();
        assert_eq!(zero.eps, dvector![0.0, 0.0]);
        assert_eq!(zero.theta, dvector![0.0, 0.0]);

        assert!(solve_lcpf(
            &t,
            &InjectionSample {
                p: dvector![0.0],
                q: dvector![0.0, 0.0],
            }
        )
        .is_err());
    }

    #[test]
    fn eps_covariance_single_stochastic_node() {
        // Ω_ε = H⁻¹ e₂ e₂ᵀ H⁻¹ with H⁻¹ = [[1,1],[1,2]].
        let model = LcpfModel::new(&chain(1.0, 1.0));
        let omega = model.eps_covariance(&[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(omega, dmatrix![1.0, 2.0; 2.0, 4.0]);
    }

    #[test]
    fn eps_covariance_matches_outer_product_form() {
        let model = LcpfModel::new(&chain(1.0, 1.0));
        let h = dmatrix![1.0, 1.0; 1.0, 2.0];
        let e2 = dvector![0.0, 1.0];
        let expected = &h * &e2 * e2.transpose() * &h;
        assert_eq!(
            model.eps_covariance(&[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]),
            expected
        );
    }

    #[test]
    fn stats_validation() {
        let ok = NodeInjection {
            mu_p: -1.0,
            mu_q: -0.2,
            var_p: 1.0,
            var_q: 0.25,
            cov_pq: 0.25,
        };
        assert!(ok.validate().is_ok());
        assert!(NodeInjection { var_p: 0.0, ..ok }.validate().is_err());
        assert!(NodeInjection { var_q: 0.0, ..ok }.validate().is_err());
        assert!(NodeInjection { cov_pq: 0.0, ..ok }.validate().is_err());
        assert!(NodeInjection { cov_pq: 0.6, ..ok }.validate().is_err());
        assert!(InjectionStats::new(vec![]).is_err());
    }

    #[test]
    fn phi_chain_fixture() {
        let t = chain(1.0, 0.5);
        let stats = uniform_stats(2, 1.0, 0.25, 0.25);
        let phi = |a, b| phi_exact(&t, &stats, NodeId(a), NodeId(b)).unwrap();
        assert!((phi(1, 2) - 1.3125).abs() < 1e-12);
        assert!((phi(0, 1) - 2.625).abs() < 1e-12);
        assert!((phi(0, 2) - 6.5625).abs() < 1e-12);
        assert!(phi(0, 2) > phi(0, 1) + phi(1, 2));
        assert_eq!(phi(2, 1), phi(1, 2));
        assert!(phi_exact(&t, &stats, NodeId(1), NodeId(1)).is_err());
        assert!(phi_exact(&t, &stats, NodeId(1), NodeId(7)).is_err());
    }

    #[test]
    fn phi_routes_agree() {
        let t = tree(
            6,
            &[
                (0, 3, 0.05, 0.03),
                (3, 1, 0.02, 0.04),
                (3, 5, 0.07, 0.01),
                (1, 2, 0.03, 0.03),
                (5, 4, 0.01, 0.08),
            ],
        );
        let stats = InjectionStats::new(
            (0..5)
                .map(|i| NodeInjection {
                    mu_p: -0.1 * i as f64,
                    mu_q: 0.0,
                    var_p: 1.0 + 0.3 * i as f64,
                    var_q: 0.4,
                    cov_pq: 0.2 + 0.05 * i as f64,
                })
                .collect(),
        )
        .unwrap();
        let model = LcpfModel::new(&t);
        let w = model.phi_weights(&stats).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                if a != b {
                    let direct = model.phi(&stats, NodeId(a), NodeId(b)).unwrap();
                    let via = w.get(NodeId(a), NodeId(b));
                    assert!((direct - via).abs() <= 1e-12 * direct.max(1e-12), "{a},{b}");
                }
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let stats = uniform_stats(3, 1.0, 0.5, 0.3);
        let a = sample_injections(&stats, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_injections(&stats, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
        assert!(sample_injections(&stats, 0, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn simulate_matches_per_sample_solve() {
        let t = tree(4, &[(0, 2, 0.1, 0.2), (2, 1, 0.3, 0.1), (2, 3, 0.05, 0.07)]);
        let stats = uniform_stats(3, 1.0, 0.5, 0.3);
        let model = LcpfModel::new(&t);
        let set = model
            .simulate(&stats, 5, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let inj = sample_injections(&stats, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (k, s) in inj.iter().enumerate() {
            let v = model.solve(s).unwrap();
            let row = set.snapshot(k).unwrap();
            assert!((v.eps - row.eps).abs().max() < 1e-14);
            assert!((v.theta - row.theta).abs().max() < 1e-14);
        }
    }

    #[test]
    fn moments_means_follow_linear_map() {
        let t = chain(1.0, 1.0);
        let stats = InjectionStats::new(vec![
            NodeInjection {
                mu_p: 1.0,
                mu_q: 0.0,
                var_p: 1.0,
                var_q: 1.0,
                cov_pq: 0.5,
            },
            NodeInjection {
                mu_p: 0.0,
                mu_q: 1.0,
                var_p: 1.0,
                var_q: 1.0,
                cov_pq: 0.5,
            },
        ])
        .unwrap();
        let m = exact_voltage_moments(&t, &stats).unwrap();
        // A = B = [[1,1],[1,2]]: μ_ε = A(1,0) + A(0,1), μ_θ = A(1,0) − A(0,1).
        assert_eq!(m.mu_eps, dvector![2.0, 3.0]);
        assert_eq!(m.mu_theta, dvector![0.0, -1.0]);
    }
}
