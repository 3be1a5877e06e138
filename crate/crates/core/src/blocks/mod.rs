//! Width-preserving operators for the recurrence, plus graph readout and
//! prediction heads.

mod attention;
mod dense;
mod graph;
mod head;
mod init;
mod message;
mod readout;

pub use attention::{AttentionBlock, AttentionOutput};
pub use dense::{Activation, DenseBlock, Linear, Norm};
pub use graph::{Graph, GraphBatch};
pub use head::{Head, HeadConfig, HeadKind};
pub use init::{dropout_mask, trunc_normal};
pub use message::{Aggregation, MessageBlock};
pub use readout::{Readout, VirtualReadout};
