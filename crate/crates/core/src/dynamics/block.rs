use std::cell::Cell;
use std::rc::Rc;

use crate::diffcore::{ParamId, ParamStore, Tape, Topology, Var};
use crate::Result;

/// Per-step constant handed to every block evaluation.
///
/// Integrator stages within one step see the same context.
#[derive(Clone, Debug, Default)]
pub enum StepContext {
    #[default]
    None,
    /// Node adjacency of a (possibly batched) graph.
    Graph(Rc<Topology>),
    /// Rows are consecutive sequences of this length.
    Sequence { seq_len: usize },
}

/// A width-preserving operator `F`.
pub trait Block {
    /// Embedding width; `apply` maps `[n, width]` to `[n, width]`.
    fn width(&self) -> usize;

    fn param_ids(&self) -> Vec<ParamId>;

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var>;
}

impl<B: Block + ?Sized> Block for &B {
    fn width(&self) -> usize {
        (**self).width()
    }

    fn param_ids(&self) -> Vec<ParamId> {
        (**self).param_ids()
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var> {
        (**self).apply(tape, store, h, ctx)
    }
}

/// Parameter-free block defined by a closure. Handy for analytic maps.
pub struct FnBlock<F> {
    width: usize,
    f: F,
}

impl<F> FnBlock<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    pub fn new(width: usize, f: F) -> Self {
        Self { width, f }
    }
}

impl<F> Block for FnBlock<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn width(&self) -> usize {
        self.width
    }

    fn param_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }

    fn apply(&self, tape: &mut Tape, _store: &ParamStore, h: Var, _ctx: &StepContext) -> Result<Var> {
        (self.f)(tape, h)
    }
}

/// Wraps a block and counts how often it is evaluated.
pub struct CountingBlock<B> {
    inner: B,
    calls: Cell<usize>,
}

impl<B: Block> CountingBlock<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Block> Block for CountingBlock<B> {
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.inner.param_ids()
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var> {
        self.calls.set(self.calls.get() + 1);
        self.inner.apply(tape, store, h, ctx)
    }
}
