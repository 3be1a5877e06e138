use std::rc::Rc;

use rand::Rng;

use super::init::he_weight;
use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::error::{invalid, Result};

/// Attentive graph pooling through a virtual node.
///
/// The virtual state starts at the mean node embedding. Each round it
/// attends over the nodes of its graph with scaled dot-product scores and
/// absorbs the attended summary: `s <- s + tanh((sum_v a_v h_v) W_r)`.
#[derive(Clone, Debug)]
pub struct VirtualReadout {
    pub width: usize,
    pub rounds: Vec<ParamId>,
}

/// Pooled graph states and the attention weights of every round.
#[derive(Clone, Debug)]
pub struct Readout {
    /// `[graphs, width]`.
    pub pooled: Var,
    /// One `[nodes]` weight vector per round.
    pub weights: Vec<Var>,
}

impl VirtualReadout {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, rounds: usize, rng: &mut R) -> Result<Self> {
        let rounds = (0..rounds)
            .map(|r| store.add(format!("{name}.round{r}"), he_weight(rng, width, width)))
            .collect::<Result<_>>()?;
        Ok(Self { width, rounds })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.rounds.clone()
    }

    /// Pools `h` (`[nodes, width]`) into `groups` graph states. `segments`
    /// names the graph of each node; every graph needs at least one node.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, segments: Rc<[usize]>, groups: usize) -> Result<Readout> {
        let mut sizes = vec![0usize; groups];
        for &s in segments.iter() {
            if s >= groups {
                return Err(invalid("virtual_readout", format!("segment {s} out of range for {groups} graphs")));
            }
            sizes[s] += 1;
        }
        if let Some(g) = sizes.iter().position(|&c| c == 0) {
            return Err(invalid("virtual_readout", format!("graph {g} has no nodes")));
        }
        let scale = 1.0 / (self.width as f64).sqrt();
        let mut s = tape.segment_sum(h, segments.clone(), groups, true)?;
        let mut weights = Vec::with_capacity(self.rounds.len());
        for &w in &self.rounds {
            let state = tape.gather(s, segments.clone())?;
            let dots = tape.mul(state, h)?;
            let dots = tape.row_sum(dots)?;
            let scores = tape.scale(dots, scale)?;
            let a = tape.segment_softmax(scores, segments.clone(), groups)?;
            let weighted = tape.scale_rows(h, a)?;
            let summary = tape.segment_sum(weighted, segments.clone(), groups, false)?;
            let w = tape.param(store, w);
            let upd = tape.matmul(summary, w)?;
            let upd = tape.tanh(upd)?;
            s = tape.add(s, upd)?;
            weights.push(a);
        }
        Ok(Readout { pooled: s, weights })
    }
}
