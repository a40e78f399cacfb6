use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gridtopo::harness::{run_sweep, ExperimentConfig};
use gridtopo::hidden::{learn_with_missing, HiddenNodeSet, SAMPLED_TOLERANCE};
use gridtopo::io::{
    read_grid, read_samples, read_stats, read_topology, stats_to_json, write_grid, write_samples,
    write_stats, write_topology, GridFile, TopologyDocument,
};
use gridtopo::random::{generate_random_feeder, trial_rng, PositiveRange, StatsEnsemble};
use gridtopo::{
    estimate_injection_stats, learn_topology, topology_error, CandidateMode, Error, LcpfModel,
    NodeId,
};

/// Radial feeder simulation and topology learning from voltage magnitudes.
#[derive(Parser)]
#[command(name = "gridtopo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random radial feeder with extra open candidate lines.
    Generate(GenerateArgs),
    /// Simulate voltage snapshots on the grid's operating tree.
    Simulate(SimulateArgs),
    /// Learn the operating tree with every node measured.
    Learn(LearnArgs),
    /// Learn the operating tree when some nodes are unmeasured.
    LearnMissing(LearnMissingArgs),
    /// Recover per-node injection statistics on a known tree.
    EstimateInjections(EstimateArgs),
    /// Run a sample-size sweep and write results.csv and summary.csv.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of nodes including the substation (node 0).
    #[arg(long)]
    nodes: usize,
    /// Open candidate lines added beyond the operating tree.
    #[arg(long, default_value_t = 0)]
    extra: usize,
    #[arg(long, default_value_t = 0.01)]
    impedance_min: f64,
    #[arg(long, default_value_t = 0.1)]
    impedance_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Also draw injection statistics from the default ensemble and write
    /// them here.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid JSON with operational lines marked.
    #[arg(long)]
    grid: PathBuf,
    /// Number of snapshots.
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Injection statistics; drawn from the default ensemble when absent.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Write the statistics used to this file.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Omit phase-angle columns.
    #[arg(long)]
    no_angles: bool,
    /// Sample CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    /// Consider every node pair instead of the grid's candidate lines.
    #[arg(long)]
    complete_graph: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnMissingArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Sample CSV; columns of hidden nodes are ignored if present.
    #[arg(long)]
    samples: PathBuf,
    /// Comma-separated ids of unmeasured nodes.
    #[arg(long, value_delimiter = ',', required = true)]
    hidden: Vec<usize>,
    /// Injection statistics for every node.
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, default_value_t = SAMPLED_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Topology JSON (as written by `learn`).
    #[arg(long)]
    tree: PathBuf,
    /// Sample CSV with angle columns.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn score(file: &GridFile, topology: &gridtopo::LearnedTopology) -> Result<Option<f64>, Error> {
    file.truth
        .as_ref()
        .map(|t| topology_error(topology, t))
        .transpose()
}

fn operating_tree(file: &GridFile, path: &Path) -> Result<gridtopo::RadialTree, Error> {
    file.truth.clone().ok_or_else(|| Error::Schema {
        field: "edges.operational".into(),
        message: format!("{} marks no operational lines", path.display()),
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(a) => {
            let range = PositiveRange::new(a.impedance_min, a.impedance_max)?;
            let (grid, tree) = generate_random_feeder(a.nodes, a.extra, range, a.seed)?;
            write_grid(&a.out, &grid, Some(&tree))?;
            if let Some(path) = a.stats_out {
                let stats = StatsEnsemble::default().sample(a.nodes, &mut trial_rng(a.seed, 1))?;
                write_stats(&path, stats.entries())?;
            }
        }
        Command::Simulate(a) => {
            let file = read_grid(&a.grid)?;
            let tree = operating_tree(&file, &a.grid)?;
            let mut rng = trial_rng(a.seed, 0);
            let stats = match &a.stats {
                Some(p) => read_stats(p)?,
                None => {
                    StatsEnsemble::default().sample(tree.num_nodes(), &mut trial_rng(a.seed, 1))?
                }
            };
            let mut samples = LcpfModel::new(&tree).simulate(&stats, a.samples, &mut rng)?;
            if a.no_angles {
                samples = samples.without_angles();
            }
            write_samples(&a.out, &samples)?;
            if let Some(path) = a.stats_out {
                write_stats(&path, stats.entries())?;
            }
        }
        Command::Learn(a) => {
            let file = read_grid(&a.grid)?;
            let samples = read_samples(&a.samples)?;
            let mode = if a.complete_graph {
                CandidateMode::CompleteGraph
            } else {
                CandidateMode::Grid
            };
            let topology = learn_topology(&samples, &file.grid, mode)?;
            let error = score(&file, &topology)?;
            write_topology(&a.out, &TopologyDocument::new(topology, error))?;
        }
        Command::LearnMissing(a) => {
            let file = read_grid(&a.grid)?;
            let samples = read_samples(&a.samples)?;
            let stats = read_stats(&a.stats)?;
            let hidden = HiddenNodeSet::new(a.hidden.into_iter().map(NodeId))?;
            let outcome = learn_with_missing(&samples, &file.grid, &hidden, &stats, a.tolerance)?;
            for d in &outcome.diagnostics {
                eprintln!("{}", serde_json::to_string(d)?);
            }
            let error = score(&file, &outcome.topology)?;
            write_topology(&a.out, &TopologyDocument::new(outcome.topology, error))?;
        }
        Command::EstimateInjections(a) => {
            let file = read_grid(&a.grid)?;
            let tree = read_topology(&a.tree)?
                .topology()
                .to_radial_tree(&file.grid)?;
            let samples = read_samples(&a.samples)?;
            let estimate = estimate_injection_stats(&tree, &samples)?;
            let mut doc = stats_to_json(&estimate.entries);
            doc["cross_node"] = serde_json::to_value(estimate.cross_node)?;
            std::fs::write(&a.out, serde_json::to_string_pretty(&doc)? + "\n")?;
        }
        Command::Sweep(a) => {
            let mut config = ExperimentConfig::load(&a.config)?;
            if let Some(dir) = a.out_dir {
                config.output_dir = dir;
            }
            let result = run_sweep(&config)?;
            result.write(&config.output_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut line = json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::Schema { field, .. } = &e {
                line["field"] = json!(field);
            }
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
