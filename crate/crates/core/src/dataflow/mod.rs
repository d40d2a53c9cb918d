//! RNN cells as dataflow graphs over the engine's primitive units, and their
//! compilation to VLIW macro-instruction programs.

mod graph;
mod program;

use thiserror::Error;

use crate::csb::CsbError;

pub use graph::{
    build_cell_graph, evaluate_graph, BiasSlot, CellGraph, CellKind, CellState, CellWeights, Input,
    Node, NodeId, Operand, PrimitiveKind, Source, WeightSlot,
};
pub use program::{
    compile_macro, execute_macro, execute_with, MacroInstruction, MacroProgram, MvmBackend,
    ReferenceMvm, RnnOutput, Section, SectionCount,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataflowError {
    #[error("unsupported cell type {0:?} (supported: lstm, gru)")]
    UnsupportedCell(String),

    #[error("cell dimensions must be at least 1, got input {input_dim}, hidden {hidden_dim}")]
    InvalidDims { input_dim: usize, hidden_dim: usize },

    #[error("{kind} slot {slot} is not bound")]
    UnboundSlot { kind: &'static str, slot: String },

    #[error("{what}: expected length {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error(transparent)]
    Csb(#[from] CsbError),
}
