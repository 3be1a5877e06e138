use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletEnergy {
    pub value: f64,
    /// The edge list was empty; `value` is 0.
    pub no_edges: bool,
}

/// Mean over edges of `||h_u - h_v||^2` for a `[nodes, d]` embedding.
pub fn dirichlet_energy(h: &Tensor, edges: &[(usize, usize)]) -> Result<DirichletEnergy> {
    if h.ndim() != 2 {
        return Err(invalid("dirichlet_energy", format!("expected a matrix, got {:?}", h.shape())));
    }
    let n = h.shape()[0];
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(invalid("dirichlet_energy", format!("edge ({u}, {v}) out of range for {n} nodes")));
    }
    if edges.is_empty() {
        return Ok(DirichletEnergy { value: 0.0, no_edges: true });
    }
    let total: f64 = edges
        .iter()
        .map(|&(u, v)| h.row(u).iter().zip(h.row(v)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok(DirichletEnergy {
        value: total / edges.len() as f64,
        no_edges: false,
    })
}

/// Dirichlet energy of every state along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub energies: Vec<f64>,
    pub no_edges: bool,
}

pub fn smoothness_report(states: &[&Tensor], edges: &[(usize, usize)]) -> Result<SmoothnessReport> {
    let energies = states.iter().map(|h| dirichlet_energy(h, edges)).collect::<Result<Vec<_>>>()?;
    Ok(SmoothnessReport {
        no_edges: edges.is_empty(),
        energies: energies.into_iter().map(|e| e.value).collect(),
    })
}
