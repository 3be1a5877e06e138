//! End-to-end models: input projection, a depth stack of shared or
//! distinct blocks, and an output head.
//!
//! Parameter names start with `embed.`, `blocks.` or `head.` so that
//! counts can be broken down by component.

use std::cell::Cell;
use std::rc::Rc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::blocks::{
    trunc_normal, Activation, Aggregation, AttentionBlock, DenseBlock, GraphBatch, Head, HeadConfig, Linear, MessageBlock, Norm,
    VirtualReadout,
};
use crate::dataio::{FeatureMatrix, GraphDataset};
use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::dynamics::{DepthConfig, DepthStack, StepContext, Trajectory};
use crate::error::{invalid, Result};
use crate::training::{Regressor, SequenceModel};

/// Hyperparameters shared by the model families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width inside the recurrence.
    pub width: usize,
    pub activation: Activation,
    pub aggregation: Aggregation,
    pub heads: usize,
    pub context: usize,
    pub readout_rounds: usize,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            activation: Activation::LeakyRelu,
            aggregation: Aggregation::Mean,
            heads: 4,
            context: 32,
            readout_rounds: 2,
            head: HeadConfig::default(),
        }
    }
}

/// Parameters grouped by component.
pub trait ParamGroups {
    fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)>;
}

/// Dense regressor on feature rows.
#[derive(Clone, Debug)]
pub struct TabularModel {
    input: Linear,
    stack: DepthStack<DenseBlock>,
    head: Head,
    evaluations: Cell<usize>,
}

impl TabularModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d_in: usize, config: &ModelConfig, depth: DepthConfig, rng: &mut R) -> Result<Self> {
        let w = config.width;
        let input = Linear::new(store, "embed.input", d_in, w, true, rng)?;
        let stack = DepthStack::build(depth, store, "blocks", |s, name| DenseBlock::new(s, name, w, config.activation, rng))?;
        let head = Head::new(store, "head", config.head.clone(), w, rng)?;
        Ok(Self {
            input,
            stack,
            head,
            evaluations: Cell::new(0),
        })
    }

    pub fn stack(&self) -> &DepthStack<DenseBlock> {
        &self.stack
    }
}

impl ParamGroups for TabularModel {
    fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        vec![("embedding", self.input.param_ids()), ("blocks", self.stack.param_ids()), ("head", self.head.param_ids())]
    }
}

impl Regressor for TabularModel {
    type Data = FeatureMatrix;

    fn predict(&self, tape: &mut Tape, store: &ParamStore, data: &FeatureMatrix, rows: &[usize], rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let x = tape.constant(data.select(rows));
        let h = self.input.forward(tape, store, x)?;
        let traj = self.stack.run(tape, store, h, &StepContext::None)?;
        self.evaluations.set(self.evaluations.get() + traj.evaluations);
        self.head.forward(tape, store, traj.last(), rng)
    }

    fn block_evaluations(&self) -> usize {
        self.evaluations.get()
    }
}

/// Message-passing regressor with virtual-node readout. Per-graph
/// descriptors, when the dataset carries them, are appended to the pooled
/// state before the head; they must already be preprocessed.
#[derive(Clone, Debug)]
pub struct GraphModel {
    input: Linear,
    stack: DepthStack<MessageBlock>,
    readout: VirtualReadout,
    head: Head,
    descriptors: usize,
    evaluations: Cell<usize>,
}

/// Node states along the recurrence for one batch.
pub struct GraphTrace {
    pub batch: GraphBatch,
    pub trajectory: Trajectory,
}

impl GraphModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        node_width: usize,
        descriptors: usize,
        config: &ModelConfig,
        depth: DepthConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let w = config.width;
        let input = Linear::new(store, "embed.input", node_width, w, true, rng)?;
        let stack = DepthStack::build(depth, store, "blocks", |s, name| {
            MessageBlock::new(s, name, w, config.activation, config.aggregation, rng)
        })?;
        let readout = VirtualReadout::new(store, "head.readout", w, config.readout_rounds, rng)?;
        let head = Head::new(store, "head.mlp", config.head.clone(), w + descriptors, rng)?;
        Ok(Self {
            input,
            stack,
            readout,
            head,
            descriptors,
            evaluations: Cell::new(0),
        })
    }

    pub fn stack(&self) -> &DepthStack<MessageBlock> {
        &self.stack
    }

    /// Runs the recurrence on the selected graphs.
    pub fn trace(&self, tape: &mut Tape, store: &ParamStore, data: &GraphDataset, rows: &[usize]) -> Result<GraphTrace> {
        let graphs: Vec<_> = rows.iter().map(|&i| &data.graphs[i]).collect();
        let batch = GraphBatch::new(&graphs)?;
        let x = tape.constant(batch.features.clone());
        let h = self.input.forward(tape, store, x)?;
        let trajectory = self.stack.run(tape, store, h, &StepContext::Graph(Rc::clone(&batch.topology)))?;
        self.evaluations.set(self.evaluations.get() + trajectory.evaluations);
        Ok(GraphTrace { batch, trajectory })
    }
}

impl ParamGroups for GraphModel {
    fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut head = self.readout.param_ids();
        head.extend(self.head.param_ids());
        vec![("embedding", self.input.param_ids()), ("blocks", self.stack.param_ids()), ("head", head)]
    }
}

impl Regressor for GraphModel {
    type Data = GraphDataset;

    fn predict(&self, tape: &mut Tape, store: &ParamStore, data: &GraphDataset, rows: &[usize], rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if data.descriptor_width() != self.descriptors {
            return Err(invalid(
                "graph_model",
                format!("dataset has {} descriptors, model expects {}", data.descriptor_width(), self.descriptors),
            ));
        }
        let trace = self.trace(tape, store, data, rows)?;
        let batch = &trace.batch;
        let pooled = self.readout.forward(tape, store, trace.trajectory.last(), Rc::clone(&batch.segments), batch.graphs)?.pooled;
        let pooled = match &data.features {
            Some(f) if self.descriptors > 0 => {
                let d = tape.constant(f.select(rows));
                tape.concat(&[pooled, d])?
            }
            _ => pooled,
        };
        self.head.forward(tape, store, pooled, rng)
    }

    fn block_evaluations(&self) -> usize {
        self.evaluations.get()
    }
}

/// Character-level decoder: token and learned position embeddings, a depth
/// stack of causal attention blocks, a final LayerNorm and a linear
/// projection to the vocabulary.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub vocab: usize,
    pub config: ModelConfig,
    tok: ParamId,
    pos: ParamId,
    stack: DepthStack<AttentionBlock>,
    norm: Norm,
    lm_head: Linear,
    evaluations: Cell<usize>,
}

/// Standard deviation of the embedding tables.
const EMBED_STD: f64 = 0.02;

impl LanguageModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab: usize, config: &ModelConfig, depth: DepthConfig, rng: &mut R) -> Result<Self> {
        let d = config.width;
        let tok = store.add("embed.tok", trunc_normal(rng, &[vocab, d], EMBED_STD))?;
        let pos = store.add("embed.pos", trunc_normal(rng, &[config.context, d], EMBED_STD))?;
        let stack = DepthStack::build(depth, store, "blocks", |s, name| {
            AttentionBlock::new(s, name, d, config.heads, config.context, true, rng)
        })?;
        let norm = Norm::new(store, "head.ln", d)?;
        let lm_head = Linear::new(store, "head.lm", d, vocab, false, rng)?;
        Ok(Self {
            vocab,
            config: config.clone(),
            tok,
            pos,
            stack,
            norm,
            lm_head,
            evaluations: Cell::new(0),
        })
    }

    pub fn stack(&self) -> &DepthStack<AttentionBlock> {
        &self.stack
    }
}

impl ParamGroups for LanguageModel {
    fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut head = self.norm.param_ids();
        head.extend(self.lm_head.param_ids());
        vec![("embedding", vec![self.tok, self.pos]), ("blocks", self.stack.param_ids()), ("head", head)]
    }
}

impl SequenceModel for LanguageModel {
    fn context(&self) -> usize {
        self.config.context
    }

    fn logits(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize], seq_len: usize) -> Result<Var> {
        if seq_len == 0 || seq_len > self.config.context || tokens.len() % seq_len != 0 {
            return Err(invalid(
                "language_model",
                format!("{} tokens do not form windows of {seq_len} (context {})", tokens.len(), self.config.context),
            ));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(invalid("language_model", format!("token {t} outside vocabulary of {}", self.vocab)));
        }
        let tok = tape.param(store, self.tok);
        let pos = tape.param(store, self.pos);
        let te = tape.gather(tok, Rc::from(tokens))?;
        let positions: Rc<[usize]> = (0..tokens.len()).map(|i| i % seq_len).collect();
        let pe = tape.gather(pos, positions)?;
        let h = tape.add(te, pe)?;
        let traj = self.stack.run(tape, store, h, &StepContext::Sequence { seq_len })?;
        self.evaluations.set(self.evaluations.get() + traj.evaluations);
        let h = self.norm.forward(tape, store, traj.last())?;
        self.lm_head.forward(tape, store, h)
    }

    fn block_evaluations(&self) -> usize {
        self.evaluations.get()
    }
}
