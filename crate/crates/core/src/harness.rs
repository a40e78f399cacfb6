//! Sample-size sweeps: error of the learners against ground truth as the
//! number of voltage snapshots grows.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridGraph, NodeId, RadialTree};
use crate::hidden::{learn_with_missing, HiddenNodeSet, SAMPLED_TOLERANCE};
use crate::injection::{covariance_error, estimate_injection_stats};
use crate::io::read_grid;
use crate::lcpf::LcpfModel;
use crate::learn::{learn_topology, topology_error, CandidateMode};
use crate::random::{
    generate_feeder_with, sample_hidden_set, trial_rng, PositiveRange, StatsEnsemble,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSpec {
    pub num_nodes: usize,
    pub extra_edges: usize,
    pub impedance_range: PositiveRange,
}

/// Where each trial's feeder comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeederSource {
    /// A fresh random feeder per trial.
    Random(FeederSpec),
    /// One fixed grid file with operational lines marked.
    GridFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenSpec {
    /// This many hidden nodes drawn per trial.
    Count(usize),
    /// Fixed node ids; only with a grid file.
    Nodes(Vec<NodeId>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub feeder: FeederSource,
    #[serde(default)]
    pub stats: StatsEnsemble,
    pub sample_counts: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub hidden: Option<HiddenSpec>,
    #[serde(default)]
    pub candidates: CandidateMode,
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Also score recovered injection covariances (full observation only).
    #[serde(default)]
    pub estimate_injections: bool,
    /// Record wall-clock time per row. Off by default so that outputs are
    /// byte-reproducible.
    #[serde(default)]
    pub record_runtime: bool,
    pub output_dir: PathBuf,
}

fn default_tolerance() -> f64 {
    SAMPLED_TOLERANCE
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::schema(config_field(&e.to_string()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        // Relative paths in the config are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let FeederSource::GridFile(p) = &mut cfg.feeder {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::schema("trials", "must be positive"));
        }
        if self.sample_counts.is_empty() {
            return Err(Error::schema("sample_counts", "must not be empty"));
        }
        if self.sample_counts[0] < 2 || self.sample_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::schema(
                "sample_counts",
                "must be strictly increasing and at least 2",
            ));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::schema("tolerance", "must be a non-negative number"));
        }
        if let FeederSource::Random(spec) = &self.feeder {
            if spec.num_nodes < 2 {
                return Err(Error::schema(
                    "feeder.random.num_nodes",
                    "must be at least 2",
                ));
            }
        }
        match (&self.hidden, &self.feeder) {
            (Some(HiddenSpec::Count(0)), _) => {
                return Err(Error::schema("hidden.count", "must be positive"))
            }
            (Some(HiddenSpec::Nodes(_)), FeederSource::Random(_)) => {
                return Err(Error::schema(
                    "hidden.nodes",
                    "fixed hidden nodes need a grid file",
                ))
            }
            _ => {}
        }
        if self.estimate_injections && self.hidden.is_some() {
            return Err(Error::schema(
                "estimate_injections",
                "needs full observation",
            ));
        }
        self.stats.validate()
    }
}

fn config_field(msg: &str) -> String {
    // serde_json reports e.g. "missing field `trials` at line 3 column 1".
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub trial: usize,
    pub topology_error: f64,
    /// The learner gave up; `topology_error` is then 1.
    pub failed: bool,
    pub covariance_error: Option<f64>,
    pub runtime_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub m: usize,
    pub mean_error: f64,
    pub stderr: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub mean_covariance_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ordered by `(m, trial)`.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut ms: Vec<usize> = self.rows.iter().map(|r| r.m).collect();
        ms.dedup();
        ms.into_iter()
            .map(|m| {
                let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.m == m).collect();
                let n = rows.len();
                let mean = rows.iter().map(|r| r.topology_error).sum::<f64>() / n as f64;
                let stderr = if n > 1 {
                    let var = rows
                        .iter()
                        .map(|r| (r.topology_error - mean).powi(2))
                        .sum::<f64>()
                        / (n - 1) as f64;
                    (var / n as f64).sqrt()
                } else {
                    0.0
                };
                let cov: Vec<f64> = rows.iter().filter_map(|r| r.covariance_error).collect();
                SummaryRow {
                    m,
                    mean_error: mean,
                    stderr,
                    n_trials: n,
                    n_failed: rows.iter().filter(|r| r.failed).count(),
                    mean_covariance_error: (!cov.is_empty())
                        .then(|| cov.iter().sum::<f64>() / cov.len() as f64),
                }
            })
            .collect()
    }

    /// Writes `results.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

        let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
        w.write_record([
            "m",
            "trial",
            "topology_error",
            "failed",
            "covariance_error",
            "runtime_ms",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.m.to_string(),
                r.trial.to_string(),
                r.topology_error.to_string(),
                r.failed.to_string(),
                opt(r.covariance_error),
                opt(r.runtime_ms),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record([
            "m",
            "mean_error",
            "stderr",
            "n_trials",
            "n_failed",
            "mean_covariance_error",
        ])?;
        for s in self.summary() {
            w.write_record([
                s.m.to_string(),
                s.mean_error.to_string(),
                s.stderr.to_string(),
                s.n_trials.to_string(),
                s.n_failed.to_string(),
                opt(s.mean_covariance_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Trial {
    grid: GridGraph,
    truth: RadialTree,
}

fn setup_trial<R: Rng>(
    config: &ExperimentConfig,
    fixed: Option<&Trial>,
    rng: &mut R,
) -> Result<Trial> {
    match (&config.feeder, fixed) {
        (FeederSource::Random(spec), _) => {
            let (grid, truth) =
                generate_feeder_with(spec.num_nodes, spec.extra_edges, spec.impedance_range, rng)?;
            Ok(Trial { grid, truth })
        }
        (FeederSource::GridFile(_), Some(t)) => Ok(Trial {
            grid: t.grid.clone(),
            truth: t.truth.clone(),
        }),
        (FeederSource::GridFile(p), None) => Err(Error::domain(format!(
            "grid file {} not loaded",
            p.display()
        ))),
    }
}

fn run_trial(
    config: &ExperimentConfig,
    fixed: Option<&Trial>,
    index: usize,
) -> Result<Vec<SweepRow>> {
    const FEEDER_ATTEMPTS: usize = 100;
    let mut rng = trial_rng(config.seed, index as u64);
    let mut attempt = 0;
    // Random feeders that cannot hold the requested hidden set are redrawn.
    let (Trial { grid, truth }, hidden) = loop {
        attempt += 1;
        let trial = setup_trial(config, fixed, &mut rng)?;
        let hidden = match &config.hidden {
            None => None,
            Some(HiddenSpec::Count(k)) => match sample_hidden_set(&trial.truth, *k, &mut rng) {
                Ok(set) => Some(set),
                Err(_) if fixed.is_none() && attempt < FEEDER_ATTEMPTS => continue,
                Err(e) => return Err(e),
            },
            Some(HiddenSpec::Nodes(ids)) => {
                let set = HiddenNodeSet::new(ids.iter().copied())?;
                set.check_placement(&trial.truth)?;
                Some(set)
            }
        };
        break (trial, hidden);
    };
    let stats = config.stats.sample(grid.num_nodes(), &mut rng)?;
    let max_m = *config.sample_counts.last().expect("validated non-empty");
    let mut all = LcpfModel::new(&truth).simulate(&stats, max_m, &mut rng)?;
    if !config.estimate_injections {
        all = all.without_angles();
    }

    let mut rows = Vec::with_capacity(config.sample_counts.len());
    for &m in &config.sample_counts {
        let samples = all.head(m);
        let start = Instant::now();
        let learned = match &hidden {
            None => learn_topology(&samples, &grid, config.candidates),
            Some(h) => {
                learn_with_missing(&samples, &grid, h, &stats, config.tolerance).map(|o| o.topology)
            }
        };
        let (topology_error, failed) = match learned {
            Ok(t) => (topology_error(&t, &truth)?, false),
            Err(Error::Reconstruction(_)) => (1.0, true),
            Err(e) => return Err(e),
        };
        let covariance_error = if config.estimate_injections {
            let est = estimate_injection_stats(&truth, &samples)?;
            Some(covariance_error(&est.entries, &stats)?)
        } else {
            None
        };
        let runtime_ms = config
            .record_runtime
            .then(|| start.elapsed().as_secs_f64() * 1e3);
        rows.push(SweepRow {
            m,
            trial: index,
            topology_error,
            failed,
            covariance_error,
            runtime_ms,
        });
    }
    Ok(rows)
}

/// Runs every trial (in parallel) at every sample count. Each trial draws
/// its feeder, hidden set, statistics and `max(sample_counts)` snapshots
/// from its own stream; smaller counts use the leading snapshots.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let fixed = match &config.feeder {
        FeederSource::GridFile(path) => {
            let file = read_grid(path)?;
            let truth = file.truth.ok_or_else(|| {
                Error::schema("feeder.grid_file", "grid file marks no operational lines")
            })?;
            Some(Trial {
                grid: file.grid,
                truth,
            })
        }
        FeederSource::Random(_) => None,
    };
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial(config, fixed.as_ref(), i))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<SweepRow> = per_trial.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.m, r.trial));
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(json)
    }

    const BASE: &str = r#"{
        "feeder": {"random": {"num_nodes": 10, "extra_edges": 5, "impedance_range": [0.01, 0.1]}},
        "sample_counts": [20, 200], "trials": 3, "seed": 4, "output_dir": "out"
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = config(BASE).unwrap();
        assert_eq!(c.tolerance, SAMPLED_TOLERANCE);
        assert_eq!(c.candidates, CandidateMode::Grid);
        assert!(c.hidden.is_none());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = BASE.replace("[20, 200]", "[200, 20]");
        assert!(
            matches!(config(&bad), Err(Error::Schema { field, .. }) if field == "sample_counts")
        );
        let bad = BASE.replace("\"trials\": 3", "\"trials\": 0");
        assert!(matches!(config(&bad), Err(Error::Schema { field, .. }) if field == "trials"));
        let bad = BASE.replace("\"trials\": 3,", "");
        assert!(matches!(config(&bad), Err(Error::Schema { field, .. }) if field == "trials"));
        let bad = BASE.replace("\"seed\": 4", "\"seed\": 4, \"hidden\": {\"nodes\": [3]}");
        assert!(config(&bad).is_err());
        let bad = BASE.replace("\"seed\": 4", "\"seed\": 4, \"typo\": 1");
        assert!(config(&bad).is_err());
    }

    #[test]
    fn single_row() {
        let c = config(
            &BASE
                .replace("[20, 200]", "[30]")
                .replace("\"trials\": 3", "\"trials\": 1"),
        )
        .unwrap();
        let r = run_sweep(&c).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.summary()[0].n_trials, 1);
    }

    #[test]
    fn rows_are_ordered_and_deterministic() {
        let c = config(BASE).unwrap();
        let a = run_sweep(&c).unwrap();
        let b = run_sweep(&c).unwrap();
        assert_eq!(a, b);
        let keys: Vec<_> = a.rows.iter().map(|r| (r.m, r.trial)).collect();
        assert_eq!(
            keys,
            vec![(20, 0), (20, 1), (20, 2), (200, 0), (200, 1), (200, 2)]
        );
    }

    #[test]
    fn injection_scoring_and_hidden_runs() {
        let c = config(&BASE.replace("\"seed\": 4", "\"seed\": 4, \"estimate_injections\": true"))
            .unwrap();
        let r = run_sweep(&c).unwrap();
        assert!(r.rows.iter().all(|row| row.covariance_error.is_some()));

        let c = config(&BASE.replace("\"seed\": 4", "\"seed\": 4, \"hidden\": {\"count\": 1}"))
            .unwrap();
        let r = run_sweep(&c).unwrap();
        assert!(r
            .rows
            .iter()
            .all(|row| (0.0..=1.0).contains(&row.topology_error)));
    }
}
