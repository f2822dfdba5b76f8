//! Differentiable toy field models and their training utilities.

pub mod embedding;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod tape;

pub use embedding::TimeEmbedding;
pub use model::{l1_loss, Field, FieldMode, FieldModel, FnField, Topology, Trace, TracedModel};
pub use optim::{AdamWConfig, OptimizerState};
pub use schedule::LrSchedule;
pub use tape::{ConvParams, LinearParams, NodeId, ParamAllocator, ParamRange, Tape};
