//! Recovering nodal injections and their statistics from voltage magnitude
//! and angle measurements on a known tree.
//!
//! The forward map is `ε = A p + B q`, `θ = B p − A q`. Since `A⁻¹ = H_r` is
//! the reduced Laplacian itself, eliminating `q = H_r (B p − θ)` leaves the
//! symmetric positive definite system
//!
//! ```text
//! (A + B H_r B) p = ε + B H_r θ
//! ```
//!
//! which is factored once per tree.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NodeId, RadialTree, WeightKind};
use crate::lcpf::{InjectionSample, InjectionStats, NodeInjection};
use crate::samples::{SampleSet, VoltageSample};

/// Inverse of the linear power flow map for one tree.
#[derive(Clone, Debug)]
pub struct InjectionInverter {
    hr: DMatrix<f64>,
    b: DMatrix<f64>,
    /// `H_r B`, shared by both half-solves.
    hr_b: DMatrix<f64>,
    schur: Cholesky<f64, Dyn>,
}

impl InjectionInverter {
    pub fn new(tree: &RadialTree) -> Result<Self> {
        let a = tree
            .reduced_laplacian_inverse(WeightKind::Resistance)
            .into_matrix();
        let b = tree
            .reduced_laplacian_inverse(WeightKind::Reactance)
            .into_matrix();
        let hr = tree.reduced_laplacian(WeightKind::Resistance);
        let hr_b = &hr * &b;
        let mut s = &a + &b * &hr_b;
        // Symmetrise away rounding before factoring.
        s = (&s + s.transpose()) * 0.5;
        let schur =
            Cholesky::new(s).ok_or_else(|| Error::domain("power flow system is singular"))?;
        Ok(InjectionInverter { hr, b, hr_b, schur })
    }

    pub fn dim(&self) -> usize {
        self.hr.nrows()
    }

    pub fn invert(&self, sample: &VoltageSample) -> Result<InjectionSample> {
        let n = self.dim();
        if sample.eps.len() != n || sample.theta.len() != n {
            return Err(Error::domain(format!(
                "voltage sample has {} / {} entries, tree has {n} loads",
                sample.eps.len(),
                sample.theta.len()
            )));
        }
        let rhs: DVector<f64> = &sample.eps + self.hr_b.transpose() * &sample.theta;
        let p = self.schur.solve(&rhs);
        let q = &self.hr * (&self.b * &p - &sample.theta);
        Ok(InjectionSample { p, q })
    }

    /// Inverts every snapshot of a full-system sample set with angles.
    /// Returns `(P, Q)` with one row per snapshot.
    pub fn invert_all(&self, samples: &SampleSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !samples.is_full_system() || samples.nodes().len() != self.dim() {
            return Err(Error::domain(
                "injection recovery needs measurements at every load node",
            ));
        }
        let theta = samples
            .theta()
            .ok_or_else(|| Error::domain("injection recovery needs angle measurements"))?;
        // Row form of the solve: pᵀ = (εᵀ + θᵀ H_r B) S⁻¹.
        let rhs = samples.eps() + theta * &self.hr_b;
        let p = self.schur.solve(&rhs.transpose()).transpose();
        let q = (&p * &self.b - theta) * &self.hr;
        Ok((p, q))
    }
}

pub fn invert_lcpf(tree: &RadialTree, sample: &VoltageSample) -> Result<InjectionSample> {
    InjectionInverter::new(tree)?.invert(sample)
}

/// How far recovered injections are from independent across nodes.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossNodeReport {
    /// Largest |correlation| between injections (p or q) at distinct nodes.
    pub max_abs_correlation: f64,
    /// Frobenius norm of the cross-node covariance entries relative to the
    /// whole covariance of the stacked `(p, q)` vector.
    pub relative_cross_energy: f64,
}

/// Per-node injection statistics recovered from samples. The estimates are
/// not validated against the positivity model; see [`Self::to_stats`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionEstimate {
    pub entries: Vec<NodeInjection>,
    pub cross_node: CrossNodeReport,
}

impl InjectionEstimate {
    pub fn get(&self, node: NodeId) -> Option<&NodeInjection> {
        node.reduced().and_then(|i| self.entries.get(i))
    }

    pub fn to_stats(&self) -> Result<InjectionStats> {
        InjectionStats::new(self.entries.clone())
    }
}

/// Inverts each snapshot, then takes unbiased per-node means and
/// (co)variances of `(p, q)`.
pub fn estimate_injection_stats(
    tree: &RadialTree,
    samples: &SampleSet,
) -> Result<InjectionEstimate> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 snapshots, got {m}")));
    }
    let (p, q) = InjectionInverter::new(tree)?.invert_all(samples)?;
    let n = p.ncols();
    let mut stacked = DMatrix::zeros(m, 2 * n);
    stacked.columns_mut(0, n).copy_from(&p);
    stacked.columns_mut(n, n).copy_from(&q);
    let means = stacked.row_mean();
    for mut row in stacked.row_iter_mut() {
        row -= &means;
    }
    let cov = stacked.transpose() * &stacked / (m as f64 - 1.0);

    let entries = (0..n)
        .map(|k| NodeInjection {
            mu_p: means[k],
            mu_q: means[n + k],
            var_p: cov[(k, k)],
            var_q: cov[(n + k, n + k)],
            cov_pq: cov[(k, n + k)],
        })
        .collect();

    let mut max_corr: f64 = 0.0;
    let (mut cross, mut total) = (0.0, 0.0);
    for i in 0..2 * n {
        for j in 0..2 * n {
            let c = cov[(i, j)];
            total += c * c;
            if i % n != j % n {
                cross += c * c;
                let denom = (cov[(i, i)] * cov[(j, j)]).sqrt();
                if denom > 0.0 {
                    max_corr = max_corr.max((c / denom).abs());
                }
            }
        }
    }
    Ok(InjectionEstimate {
        entries,
        cross_node: CrossNodeReport {
            max_abs_correlation: max_corr,
            relative_cross_energy: if total > 0.0 {
                (cross / total).sqrt()
            } else {
                0.0
            },
        },
    })
}

/// Relative Frobenius error of the per-node 2×2 covariance blocks:
/// `√(Σ_a ‖Ĉ_a − C_a‖²) / √(Σ_a ‖C_a‖²)`.
pub fn covariance_error(estimate: &[NodeInjection], truth: &InjectionStats) -> Result<f64> {
    if estimate.len() != truth.entries().len() {
        return Err(Error::domain(
            "estimate and truth cover different node counts",
        ));
    }
    let (mut diff, mut norm) = (0.0, 0.0);
    for (e, t) in estimate.iter().zip(truth.entries()) {
        let (ce, ct) = (e.covariance(), t.covariance());
        for i in 0..2 {
            for j in 0..2 {
                diff += (ce[i][j] - ct[i][j]).powi(2);
                norm += ct[i][j].powi(2);
            }
        }
    }
    Ok((diff / norm).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::{chain, tree};
    use crate::lcpf::LcpfModel;
    use crate::random::{trial_rng, StatsEnsemble};
    use nalgebra::dvector;

    #[test]
    fn inverts_chain_fixture() {
        let t = chain(1.0, 1.0);
        let v = VoltageSample {
            eps: dvector![1.0, 2.0],
            theta: dvector![1.0, 2.0],
        };
        let s = invert_lcpf(&t, &v).unwrap();
        assert!((s.p - dvector![0.0, 1.0]).amax() < 1e-12);
        assert!(s.q.amax() < 1e-12);
    }

    #[test]
    fn zero_voltages_zero_injections() {
        let t = chain(0.3, 0.7);
        let v = VoltageSample {
            eps: DVector::zeros(2),
            theta: DVector::zeros(2),
        };
        let s = invert_lcpf(&t, &v).unwrap();
        assert_eq!(s.p.amax(), 0.0);
        assert_eq!(s.q.amax(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let t = chain(0.3, 0.7);
        let v = VoltageSample {
            eps: DVector::zeros(3),
            theta: DVector::zeros(3),
        };
        assert!(invert_lcpf(&t, &v).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let t = tree(
            5,
            &[
                (0, 1, 0.1, 0.2),
                (1, 2, 0.05, 0.03),
                (1, 3, 0.2, 0.1),
                (3, 4, 0.07, 0.09),
            ],
        );
        let mut rng = trial_rng(3, 0);
        let stats = StatsEnsemble::default().sample(5, &mut rng).unwrap();
        let samples = LcpfModel::new(&t).simulate(&stats, 5, &mut rng).unwrap();
        let inv = InjectionInverter::new(&t).unwrap();
        let (p, q) = inv.invert_all(&samples).unwrap();
        for k in 0..5 {
            let one = inv.invert(&samples.snapshot(k).unwrap()).unwrap();
            assert!((p.row(k).transpose() - one.p).amax() < 1e-10);
            assert!((q.row(k).transpose() - one.q).amax() < 1e-10);
        }
    }

    #[test]
    fn identical_snapshots_give_zero_covariance() {
        let t = chain(0.5, 0.5);
        let eps = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.1, 0.2]);
        let s = SampleSet::new(vec![NodeId(1), NodeId(2)], eps.clone(), Some(eps)).unwrap();
        let est = estimate_injection_stats(&t, &s).unwrap();
        assert!(est
            .entries
            .iter()
            .all(|e| e.var_p.abs() < 1e-20 && e.var_q.abs() < 1e-20 && e.cov_pq.abs() < 1e-20));
        assert!(est.to_stats().is_err());
        assert!(estimate_injection_stats(&t, &s.head(1)).is_err());
    }

    #[test]
    fn requires_angles() {
        let t = chain(0.5, 0.5);
        let eps = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.2]);
        let s = SampleSet::new(vec![NodeId(1), NodeId(2)], eps, None).unwrap();
        assert!(estimate_injection_stats(&t, &s).is_err());
    }

    #[test]
    fn covariance_error_is_zero_on_truth() {
        let mut rng = trial_rng(1, 0);
        let stats = StatsEnsemble::default().sample(4, &mut rng).unwrap();
        assert_eq!(covariance_error(stats.entries(), &stats).unwrap(), 0.0);
    }
}
