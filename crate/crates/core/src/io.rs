//! File formats: grid and statistics JSON, sample CSV, topology JSON.
//!
//! Grid:
//!
//! ```json
//! {"num_nodes": 3, "root": 0,
//!  "edges": [{"u": 0, "v": 1, "r": 0.1, "x": 0.2, "operational": true}, ...]}
//! ```
//!
//! Stats: `{"nodes": [{"id": 1, "mu_p": .., "mu_q": .., "var_p": .., "var_q": .., "cov_pq": ..}, ...]}`
//! with every non-substation node listed once.
//!
//! Samples: CSV with header `eps_<id>,...[,theta_<id>,...]`, one row per
//! snapshot, angle columns in the same node order as magnitude columns.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::grid::{GridGraph, Impedance, Line, NodeId, RadialTree};
use crate::lcpf::{InjectionStats, NodeInjection};
use crate::learn::{LearnedEdge, LearnedTopology};
use crate::samples::SampleSet;

/// A candidate layout plus, when the file marks operational lines, the
/// true operating tree.
#[derive(Clone, Debug)]
pub struct GridFile {
    pub grid: GridGraph,
    pub truth: Option<RadialTree>,
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::schema(format!("{path}{name}"), "missing field"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::schema(display_path(path), "expected an object"))
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "<document>".into()
    } else {
        path.trim_end_matches('.').to_string()
    }
}

fn get_usize(obj: &Map<String, Value>, name: &str, path: &str) -> Result<usize> {
    field(obj, name, path)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::schema(format!("{path}{name}"), "expected a non-negative integer"))
}

fn get_f64(obj: &Map<String, Value>, name: &str, path: &str) -> Result<f64> {
    field(obj, name, path)?
        .as_f64()
        .ok_or_else(|| Error::schema(format!("{path}{name}"), "expected a number"))
}

fn get_array<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Vec<Value>> {
    field(obj, name, path)?
        .as_array()
        .ok_or_else(|| Error::schema(format!("{path}{name}"), "expected an array"))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn parse_grid(doc: &Value) -> Result<GridFile> {
    let obj = as_object(doc, "")?;
    let num_nodes = get_usize(obj, "num_nodes", "")?;
    let root = get_usize(obj, "root", "")?;
    if root != 0 {
        return Err(Error::schema("root", "the substation must be node 0"));
    }
    let mut lines = Vec::new();
    let mut operational = Vec::new();
    for (i, e) in get_array(obj, "edges", "")?.iter().enumerate() {
        let path = format!("edges[{i}].");
        let e = as_object(e, &path)?;
        let u = get_usize(e, "u", &path)?;
        let v = get_usize(e, "v", &path)?;
        let r = get_f64(e, "r", &path)?;
        let x = get_f64(e, "x", &path)?;
        for (name, value) in [("r", r), ("x", x)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::schema(
                    format!("{path}{name}"),
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        let z = Impedance::new(r, x)?;
        let op = match e.get("operational") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                return Err(Error::schema(
                    format!("{path}operational"),
                    "expected a boolean",
                ))
            }
        };
        let line = Line::new(NodeId(u), NodeId(v), z);
        if op {
            operational.push(line);
        }
        lines.push(line);
    }
    let grid =
        GridGraph::new(num_nodes, lines).map_err(|err| Error::schema("edges", err.to_string()))?;
    let truth = if operational.is_empty() {
        None
    } else {
        Some(
            RadialTree::from_lines(num_nodes, &operational)
                .map_err(|err| Error::schema("edges.operational", err.to_string()))?,
        )
    };
    Ok(GridFile { grid, truth })
}

pub fn grid_to_json(grid: &GridGraph, truth: Option<&RadialTree>) -> Value {
    let truth_edges = truth.map(RadialTree::edge_set).unwrap_or_default();
    let edges: Vec<Value> = grid
        .lines()
        .iter()
        .map(|l| {
            json!({
                "u": l.u.index(),
                "v": l.v.index(),
                "r": l.impedance.r(),
                "x": l.impedance.x(),
                "operational": truth_edges.contains(&l.key()),
            })
        })
        .collect();
    json!({ "num_nodes": grid.num_nodes(), "root": 0, "edges": edges })
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    parse_grid(&read_json(path)?)
}

pub fn write_grid(path: &Path, grid: &GridGraph, truth: Option<&RadialTree>) -> Result<()> {
    write_json(path, &grid_to_json(grid, truth))
}

pub fn parse_stats(doc: &Value) -> Result<InjectionStats> {
    let obj = as_object(doc, "")?;
    let list = get_array(obj, "nodes", "")?;
    let mut slots: Vec<Option<NodeInjection>> = vec![None; list.len()];
    for (i, entry) in list.iter().enumerate() {
        let path = format!("nodes[{i}].");
        let e = as_object(entry, &path)?;
        let id = get_usize(e, "id", &path)?;
        if id == 0 || id > list.len() {
            return Err(Error::schema(
                format!("{path}id"),
                format!("expected a load node in 1..={}", list.len()),
            ));
        }
        if slots[id - 1].is_some() {
            return Err(Error::schema(
                format!("{path}id"),
                format!("node {id} listed twice"),
            ));
        }
        let inj = NodeInjection {
            mu_p: get_f64(e, "mu_p", &path)?,
            mu_q: get_f64(e, "mu_q", &path)?,
            var_p: get_f64(e, "var_p", &path)?,
            var_q: get_f64(e, "var_q", &path)?,
            cov_pq: get_f64(e, "cov_pq", &path)?,
        };
        inj.validate()
            .map_err(|err| Error::schema(format!("nodes[{i}]"), err.to_string()))?;
        slots[id - 1] = Some(inj);
    }
    let entries = slots
        .into_iter()
        .map(|s| s.expect("ids are a permutation"))
        .collect();
    InjectionStats::new(entries).map_err(|err| Error::schema("nodes", err.to_string()))
}

/// Serialises per-node statistics; `entries[k]` belongs to node `k + 1`.
pub fn stats_to_json(entries: &[NodeInjection]) -> Value {
    let nodes: Vec<Value> = entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            json!({
                "id": k + 1,
                "mu_p": e.mu_p,
                "mu_q": e.mu_q,
                "var_p": e.var_p,
                "var_q": e.var_q,
                "cov_pq": e.cov_pq,
            })
        })
        .collect();
    json!({ "nodes": nodes })
}

pub fn read_stats(path: &Path) -> Result<InjectionStats> {
    parse_stats(&read_json(path)?)
}

pub fn write_stats(path: &Path, entries: &[NodeInjection]) -> Result<()> {
    write_json(path, &stats_to_json(entries))
}

fn parse_column(name: &str, prefix: &str, k: usize) -> Result<NodeId> {
    name.strip_prefix(prefix)
        .and_then(|id| id.parse::<usize>().ok())
        .filter(|&id| id > 0)
        .map(NodeId)
        .ok_or_else(|| {
            Error::schema(
                format!("header[{k}]"),
                format!("expected `{prefix}<node id>`, got `{name}`"),
            )
        })
}

pub fn read_samples_from<R: Read>(reader: R) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n_eps = header.iter().take_while(|h| h.starts_with("eps_")).count();
    let nodes = header[..n_eps]
        .iter()
        .enumerate()
        .map(|(k, h)| parse_column(h, "eps_", k))
        .collect::<Result<Vec<_>>>()?;
    if nodes.is_empty() {
        return Err(Error::schema("header", "no `eps_<id>` columns"));
    }
    let with_angles = header.len() > n_eps;
    if with_angles {
        if header.len() != 2 * n_eps {
            return Err(Error::schema(
                "header",
                "angle columns must mirror magnitude columns",
            ));
        }
        for (k, h) in header[n_eps..].iter().enumerate() {
            if parse_column(h, "theta_", n_eps + k)? != nodes[k] {
                return Err(Error::schema(
                    format!("header[{}]", n_eps + k),
                    "angle columns must follow magnitude order",
                ));
            }
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (t, record) in rdr.records().enumerate() {
        let record = record?;
        for (k, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::schema(
                    format!("row {} column {}", t + 1, header[k]),
                    format!("not a number: `{cell}`"),
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let width = header.len();
    let all = DMatrix::from_row_slice(rows, width, &values);
    let eps = all.columns(0, n_eps).into_owned();
    let theta = with_angles.then(|| all.columns(n_eps, n_eps).into_owned());
    SampleSet::new(nodes, eps, theta).map_err(|err| Error::schema("header", err.to_string()))
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    read_samples_from(fs::File::open(path)?)
}

pub fn write_samples_to<W: Write>(writer: W, samples: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = samples.nodes().iter().map(|n| format!("eps_{n}")).collect();
    if samples.theta().is_some() {
        header.extend(samples.nodes().iter().map(|n| format!("theta_{n}")));
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..samples.len() {
        row.clear();
        row.extend(samples.eps().row(t).iter().map(|v| v.to_string()));
        if let Some(theta) = samples.theta() {
            row.extend(theta.row(t).iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &SampleSet) -> Result<()> {
    write_samples_to(fs::File::create(path)?, samples)
}

/// Learned topology as written to disk, with the score against ground
/// truth when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub edges: Vec<LearnedEdge>,
    pub weight_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_error: Option<f64>,
}

impl TopologyDocument {
    pub fn new(topology: LearnedTopology, topology_error: Option<f64>) -> Self {
        TopologyDocument {
            edges: topology.edges,
            weight_total: topology.weight_total,
            topology_error,
        }
    }

    pub fn topology(&self) -> LearnedTopology {
        LearnedTopology::from_edges(self.edges.clone())
    }
}

pub fn read_topology(path: &Path) -> Result<TopologyDocument> {
    let doc = read_json(path)?;
    let obj = as_object(&doc, "")?;
    for (i, e) in get_array(obj, "edges", "")?.iter().enumerate() {
        let path = format!("edges[{i}].");
        let e = as_object(e, &path)?;
        get_usize(e, "u", &path)?;
        get_usize(e, "v", &path)?;
    }
    Ok(serde_json::from_value(doc)?)
}

pub fn write_topology(path: &Path, doc: &TopologyDocument) -> Result<()> {
    write_json(path, doc)
}
