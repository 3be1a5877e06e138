use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::blocks::Graph;
use crate::diffcore::Tensor;
use crate::error::{invalid, Error, Result};

/// Graphs with scalar targets and optional per-graph descriptor rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub targets: Vec<f64>,
    /// One descriptor row per graph; may contain non-finite entries.
    pub features: Option<FeatureMatrix>,
}

impl GraphDataset {
    pub fn new(graphs: Vec<Graph>, targets: Vec<f64>, features: Option<FeatureMatrix>) -> Result<Self> {
        if graphs.len() != targets.len() {
            return Err(invalid("graph_dataset", format!("{} graphs for {} targets", graphs.len(), targets.len())));
        }
        if let Some(f) = &features {
            if f.rows != graphs.len() {
                return Err(invalid("graph_dataset", format!("{} descriptor rows for {} graphs", f.rows, graphs.len())));
            }
        }
        if let Some(w) = graphs.first().map(Graph::feature_width) {
            if let Some(i) = graphs.iter().position(|g| g.feature_width() != w) {
                return Err(invalid("graph_dataset", format!("graph {i} has node width {}, expected {w}", graphs[i].feature_width())));
            }
        }
        Ok(Self {
            graphs,
            targets,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn node_width(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_width)
    }

    pub fn descriptor_width(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.cols)
    }
}

/// A descriptor entry: a number, `null`, or one of the strings
/// `"nan"`, `"inf"`, `"-inf"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Cell {
    Num(f64),
    Text(String),
    Null(()),
}

impl Cell {
    fn value(&self) -> std::result::Result<f64, String> {
        match self {
            Cell::Num(v) => Ok(*v),
            Cell::Null(()) => Ok(f64::NAN),
            Cell::Text(s) => match s.as_str() {
                "nan" | "NaN" => Ok(f64::NAN),
                "inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                other => Err(format!("invalid descriptor value `{other}`")),
            },
        }
    }

    fn from_value(v: f64) -> Self {
        if v.is_nan() {
            Cell::Text("nan".into())
        } else if v.is_infinite() {
            Cell::Text(if v > 0.0 { "inf" } else { "-inf" }.into())
        } else {
            Cell::Num(v)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    nodes: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features: Option<Vec<Vec<f64>>>,
}

fn ragged(rows: &[Vec<f64>], what: &str) -> std::result::Result<usize, String> {
    let w = rows.first().map_or(0, Vec::len);
    match rows.iter().position(|r| r.len() != w) {
        Some(i) => Err(format!("ragged {what}: row {i} has {} entries, expected {w}", rows[i].len())),
        None => Ok(w),
    }
}

fn parse_record(rec: Record) -> std::result::Result<(Graph, f64, Option<Vec<f64>>), String> {
    if rec.nodes.is_empty() {
        return Err("graph has no nodes".into());
    }
    let width = ragged(&rec.nodes, "node features")?;
    let n = rec.nodes.len();
    if let Some(&(u, v)) = rec.edges.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(format!("edge index out of range: [{u}, {v}] with {n} nodes"));
    }
    if !rec.target.is_finite() {
        return Err("target is not finite".into());
    }
    let edge_features = match rec.edge_features {
        Some(ef) => {
            if ef.len() != rec.edges.len() {
                return Err(format!("{} edge feature rows for {} edges", ef.len(), rec.edges.len()));
            }
            let w = ragged(&ef, "edge features")?;
            Some(Tensor::new(vec![ef.len(), w], ef.concat()).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    let features = Tensor::new(vec![n, width], rec.nodes.concat()).map_err(|e| e.to_string())?;
    let graph = Graph::new(features, rec.edges, edge_features).map_err(|e| e.to_string())?;
    let descriptors = rec.features.map(|cells| cells.iter().map(Cell::value).collect::<std::result::Result<Vec<_>, _>>()).transpose()?;
    Ok((graph, rec.target, descriptors))
}

/// Parses line-delimited JSON, one graph per non-blank line.
pub fn parse_graph_dataset(reader: impl BufRead) -> Result<GraphDataset> {
    let mut graphs = Vec::new();
    let mut targets = Vec::new();
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let (graph, target, desc) = parse_record(rec).map_err(err)?;
        if let Some(first) = graphs.first().map(Graph::feature_width) {
            if graph.feature_width() != first {
                return Err(err(format!("node width {} differs from {first}", graph.feature_width())));
            }
        }
        if let (Some(Some(prev)), Some(cur)) = (rows.first(), &desc) {
            if prev.len() != cur.len() {
                return Err(err(format!("{} descriptors, expected {}", cur.len(), prev.len())));
            }
        }
        if !rows.is_empty() && rows[0].is_some() != desc.is_some() {
            return Err(err("descriptor `features` must be present on all lines or none".into()));
        }
        graphs.push(graph);
        targets.push(target);
        rows.push(desc);
    }
    let features = match rows.first() {
        Some(Some(first)) => {
            let cols = first.len();
            let values = rows.into_iter().flatten().flatten().collect();
            Some(FeatureMatrix::new((0..cols).map(|c| format!("f{c}")).collect(), values, targets.clone())?)
        }
        _ => None,
    };
    GraphDataset::new(graphs, targets, features)
}

pub fn load_graph_dataset(path: &Path) -> Result<GraphDataset> {
    parse_graph_dataset(BufReader::new(File::open(path)?))
}

pub fn write_graph_dataset(mut out: impl Write, ds: &GraphDataset) -> Result<()> {
    for (i, g) in ds.graphs.iter().enumerate() {
        let rec = Record {
            nodes: (0..g.nodes()).map(|r| g.node_features.row(r).to_vec()).collect(),
            edges: g.edges.clone(),
            target: ds.targets[i],
            features: ds.features.as_ref().map(|f| f.row(i).iter().map(|&v| Cell::from_value(v)).collect()),
            edge_features: g
                .edge_features
                .as_ref()
                .map(|ef| (0..ef.rows()).map(|r| ef.row(r).to_vec()).collect()),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_graph_dataset(path: &Path, ds: &GraphDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_graph_dataset(&mut w, ds)?;
    w.flush()?;
    Ok(())
}
