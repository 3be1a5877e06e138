use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tensor, Topology};
use crate::error::{invalid, Result};

/// Node features and directed edges. Undirected graphs list both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    /// `[nodes, d_in]`.
    pub node_features: Tensor,
    pub edges: Vec<(usize, usize)>,
    /// `[edges, d_e]`; carried but not consumed by [`super::MessageBlock`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_features: Option<Tensor>,
}

impl Graph {
    pub fn new(node_features: Tensor, edges: Vec<(usize, usize)>, edge_features: Option<Tensor>) -> Result<Self> {
        if node_features.ndim() != 2 {
            return Err(invalid("graph", format!("node features must be a matrix, got {:?}", node_features.shape())));
        }
        let n = node_features.shape()[0];
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(invalid("graph", format!("edge index out of range: ({u}, {v}) with {n} nodes")));
        }
        if let Some(ef) = &edge_features {
            if ef.ndim() != 2 || ef.shape()[0] != edges.len() {
                return Err(invalid("graph", format!("edge features {:?} for {} edges", ef.shape(), edges.len())));
            }
        }
        Ok(Self {
            node_features,
            edges,
            edge_features,
        })
    }

    pub fn nodes(&self) -> usize {
        self.node_features.shape()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.node_features.shape()[1]
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.nodes(), self.edges.clone()).expect("edges validated on construction")
    }
}

/// Disjoint union of several graphs with node indices offset.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub features: Tensor,
    pub topology: Rc<Topology>,
    /// Graph index of every node.
    pub segments: Rc<[usize]>,
    pub graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let width = graphs.first().ok_or_else(|| invalid("graph_batch", "no graphs"))?.feature_width();
        let mut data = Vec::new();
        let mut edges = Vec::new();
        let mut segments = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            if g.feature_width() != width {
                return Err(invalid("graph_batch", format!("feature width {} differs from {width}", g.feature_width())));
            }
            let offset = segments.len();
            data.extend_from_slice(g.node_features.data());
            edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
            segments.extend(std::iter::repeat_n(gi, g.nodes()));
        }
        let n = segments.len();
        Ok(Self {
            features: Tensor::new(vec![n, width], data)?,
            topology: Rc::new(Topology::new(n, edges)?),
            segments: segments.into(),
            graphs: graphs.len(),
        })
    }
}
