use std::fmt::Write as _;

use super::graph::{apply_ew, check_step, fetch};
use super::{CellGraph, CellState, CellWeights, DataflowError, Input, NodeId, Operand, PrimitiveKind, Source};
use crate::csb::BlockShape;
use crate::scheduler::EngineConfig;
use crate::Scalar;

/// Workload of one active section.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionCount {
    /// Element-wise units: vector elements.
    Elements(usize),
    /// CSB engine: block iterations along the grid columns (`count_h`) and
    /// grid rows (`count_v`).
    Blocks { count_h: usize, count_v: usize },
}

/// One unit's share of a VLIW word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    /// Node whose result this section produces; also its buffer address.
    pub node: NodeId,
    pub count: SectionCount,
    /// Input routing: where each operand is read from.
    pub operands: Vec<Operand>,
    /// External operand: the weight slot of an MVM.
    pub weight_slot: Option<usize>,
}

/// A VLIW word with one optional section per unit, indexed by
/// [`PrimitiveKind::unit`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacroInstruction {
    pub sections: [Option<Section>; 5],
}

impl MacroInstruction {
    pub fn section(&self, kind: PrimitiveKind) -> Option<&Section> {
        self.sections[kind.unit()].as_ref()
    }

    pub fn active(&self) -> impl Iterator<Item = (PrimitiveKind, &Section)> {
        PrimitiveKind::ALL
            .into_iter()
            .filter_map(|k| self.section(k).map(|s| (k, s)))
    }
}

/// A compiled cell: the word list plus the graph acting as symbol table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacroProgram {
    pub graph: CellGraph,
    pub words: Vec<MacroInstruction>,
    /// Word index of every node.
    pub word_of: Vec<usize>,
}

/// ASAP list scheduling with one unit of each kind: nodes are placed in
/// topological order into the earliest word after all their producers whose
/// section for the node's unit is still free.
pub fn compile_macro(
    graph: &CellGraph,
    cfg: &EngineConfig,
    shape: BlockShape,
) -> Result<MacroProgram, DataflowError> {
    graph.check().map_err(|msg| DataflowError::Dimension {
        what: format!("malformed graph: {msg}"),
        expected: 0,
        actual: 0,
    })?;
    let mut words: Vec<MacroInstruction> = Vec::new();
    let mut word_of = vec![0; graph.nodes.len()];
    for node in &graph.nodes {
        let earliest = graph
            .predecessors(node.id)
            .map(|p| word_of[p] + 1)
            .max()
            .unwrap_or(0);
        let unit = node.kind.unit();
        let w = (earliest..)
            .find(|&w| w >= words.len() || words[w].sections[unit].is_none())
            .expect("unbounded search");
        if w >= words.len() {
            words.resize_with(w + 1, MacroInstruction::default);
        }
        let count = match node.weight_slot {
            Some(slot) => {
                let s = &graph.weight_slots[slot];
                SectionCount::Blocks {
                    count_h: s.cols.div_ceil(shape.block_cols).div_ceil(cfg.l),
                    count_v: s.rows.div_ceil(shape.block_rows).div_ceil(cfg.k),
                }
            }
            None => SectionCount::Elements(graph.hidden_dim),
        };
        words[w].sections[unit] = Some(Section {
            node: node.id,
            count,
            operands: node.operands.clone(),
            weight_slot: node.weight_slot,
        });
        word_of[node.id] = w;
    }
    Ok(MacroProgram {
        graph: graph.clone(),
        words,
        word_of,
    })
}

fn operand_text(op: &Operand, graph: &CellGraph) -> String {
    let base = match op.source {
        Source::Input(Input::X) => "x".to_string(),
        Source::Input(Input::HPrev) => "h".to_string(),
        Source::Input(Input::CPrev) => "c".to_string(),
        Source::Node(id) => format!("n{id}"),
        Source::Bias(b) => format!("bias:{}", graph.bias_slots[b].name),
        Source::ConstOne => "one".to_string(),
    };
    if op.negate {
        format!("-{base}")
    } else {
        base
    }
}

impl MacroProgram {
    /// One word per line, sections separated by `|`, idle units shown as `-`.
    pub fn to_text(&self) -> String {
        let g = &self.graph;
        let mut out = String::new();
        for (w, word) in self.words.iter().enumerate() {
            let _ = write!(out, "word {w}");
            for kind in PrimitiveKind::ALL {
                let _ = write!(out, " | {} ", kind.as_str());
                let Some(s) = word.section(kind) else {
                    out.push('-');
                    continue;
                };
                let ops: Vec<String> = s.operands.iter().map(|o| operand_text(o, g)).collect();
                let _ = write!(out, "n{} {} <- {}", s.node, g.nodes[s.node].name, ops.join(","));
                match s.count {
                    SectionCount::Elements(c) => {
                        let _ = write!(out, " count={c}");
                    }
                    SectionCount::Blocks { count_h, count_v } => {
                        let slot = s.weight_slot.expect("mvm section has a slot");
                        let _ = write!(
                            out,
                            " mem={} count={}x{}",
                            g.weight_slots[slot].name, count_h, count_v
                        );
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Provider of the CSB-MVM results while executing a macro program.
pub trait MvmBackend<T> {
    type Error: From<DataflowError>;

    /// `weights[slot] * x` on the logical (unpadded) dims.
    fn mvm(&mut self, slot: usize, x: &[T], out_len: usize) -> Result<Vec<T>, Self::Error>;

    /// Called after every word with that word.
    fn end_word(&mut self, _word: &MacroInstruction) {}
}

/// Functional MVM through the reference CSB kernel.
pub struct ReferenceMvm<'a, T> {
    pub weights: &'a CellWeights<T>,
}

impl<T: Scalar> MvmBackend<T> for ReferenceMvm<'_, T> {
    type Error = DataflowError;

    fn mvm(&mut self, slot: usize, x: &[T], out_len: usize) -> Result<Vec<T>, DataflowError> {
        Ok(self.weights.weights[slot].mvm_logical(x, out_len)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnOutput<T> {
    /// Hidden state after every step.
    pub h_seq: Vec<Vec<T>>,
    pub final_state: CellState<T>,
}

/// Runs `prog` over the input sequence, word by word, with MVMs supplied by
/// `backend`.
pub fn execute_with<T: Scalar, B: MvmBackend<T>>(
    prog: &MacroProgram,
    weights: &CellWeights<T>,
    xs: &[Vec<T>],
    init: &CellState<T>,
    backend: &mut B,
) -> Result<RnnOutput<T>, B::Error> {
    let g = &prog.graph;
    weights.check(g)?;
    let mut state = init.clone();
    let mut h_seq = Vec::with_capacity(xs.len());
    for x in xs {
        check_step(g, x, &state)?;
        let mut values: Vec<Option<Vec<T>>> = vec![None; g.nodes.len()];
        for word in &prog.words {
            let mut produced = Vec::new();
            for (kind, s) in word.active() {
                let args: Vec<Vec<T>> = s
                    .operands
                    .iter()
                    .map(|op| {
                        fetch(op, g, weights, x, &state, |p| {
                            values[p].clone().expect("producer runs in an earlier word")
                        })
                    })
                    .collect();
                let out = match s.weight_slot {
                    Some(slot) => backend.mvm(slot, &args[0], g.weight_slots[slot].rows)?,
                    None => apply_ew(kind, &args),
                };
                produced.push((s.node, out));
            }
            for (node, out) in produced {
                values[node] = Some(out);
            }
            backend.end_word(word);
        }
        state = CellState {
            h: values[g.h_out].take().expect("h output computed"),
            c: g.c_out.map(|c| values[c].take().expect("c output computed")),
        };
        h_seq.push(state.h.clone());
    }
    Ok(RnnOutput {
        h_seq,
        final_state: state,
    })
}

/// Golden functional model: executes the program with reference MVMs.
pub fn execute_macro<T: Scalar>(
    prog: &MacroProgram,
    weights: &CellWeights<T>,
    xs: &[Vec<T>],
    init: &CellState<T>,
) -> Result<RnnOutput<T>, DataflowError> {
    execute_with(prog, weights, xs, init, &mut ReferenceMvm { weights })
}
