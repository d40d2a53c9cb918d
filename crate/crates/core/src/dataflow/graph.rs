use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataflowError;
use crate::csb::{BlockShape, CsbMatrix, DenseMatrix};
use crate::pruner::project_csb;
use crate::Scalar;

/// The engine's arithmetic units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveKind {
    CsbMvm,
    EwMul,
    EwAdd,
    Sigmoid,
    Tanh,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 5] = [
        PrimitiveKind::CsbMvm,
        PrimitiveKind::EwMul,
        PrimitiveKind::EwAdd,
        PrimitiveKind::Sigmoid,
        PrimitiveKind::Tanh,
    ];

    /// Section slot of this unit within a macro word.
    pub fn unit(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::CsbMvm => "csb_mvm",
            PrimitiveKind::EwMul => "ew_mul",
            PrimitiveKind::EwAdd => "ew_add",
            PrimitiveKind::Sigmoid => "sigmoid",
            PrimitiveKind::Tanh => "tanh",
        }
    }

    fn arity(self) -> usize {
        match self {
            PrimitiveKind::EwMul | PrimitiveKind::EwAdd => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl std::str::FromStr for CellKind {
    type Err = DataflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            _ => Err(DataflowError::UnsupportedCell(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Input {
    X,
    HPrev,
    CPrev,
}

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Input(Input),
    Node(NodeId),
    Bias(usize),
    /// All-ones vector of the hidden width.
    ConstOne,
}

/// Operand routing; `negate` flips the sign on the way into the unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Operand {
    pub source: Source,
    pub negate: bool,
}

impl Operand {
    fn of(source: Source) -> Self {
        Self {
            source,
            negate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub kind: PrimitiveKind,
    pub name: String,
    pub operands: Vec<Operand>,
    pub weight_slot: Option<usize>,
}

/// Logical weight matrix consumed by one `CsbMvm` node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiasSlot {
    pub name: String,
    pub len: usize,
}

/// One time step of a recurrent cell. Nodes are stored in topological order;
/// every node produces a vector of the hidden width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellGraph {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub nodes: Vec<Node>,
    pub weight_slots: Vec<WeightSlot>,
    pub bias_slots: Vec<BiasSlot>,
    pub h_out: NodeId,
    pub c_out: Option<NodeId>,
}

impl CellGraph {
    /// Producer nodes of `id`.
    pub fn predecessors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[id].operands.iter().filter_map(|o| match o.source {
            Source::Node(p) => Some(p),
            _ => None,
        })
    }

    pub fn count(&self, kind: PrimitiveKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn weight_slot(&self, name: &str) -> Option<usize> {
        self.weight_slots.iter().position(|s| s.name == name)
    }

    /// Checks the structural invariants: operands refer to earlier nodes,
    /// arities match the unit and every MVM names exactly one slot.
    pub fn check(&self) -> Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(format!("node {i} carries id {}", n.id));
            }
            if n.operands.len() != n.kind.arity() {
                return Err(format!("node {i} ({}) has {} operands", n.kind.as_str(), n.operands.len()));
            }
            for o in &n.operands {
                match o.source {
                    Source::Node(p) if p >= i => return Err(format!("node {i} reads later node {p}")),
                    Source::Bias(b) if b >= self.bias_slots.len() => {
                        return Err(format!("node {i} reads unknown bias {b}"))
                    }
                    Source::Input(Input::CPrev) if self.cell != CellKind::Lstm => {
                        return Err(format!("node {i} reads a cell state the cell does not have"))
                    }
                    _ => {}
                }
            }
            match (n.kind, n.weight_slot) {
                (PrimitiveKind::CsbMvm, Some(s)) if s < self.weight_slots.len() => {}
                (PrimitiveKind::CsbMvm, _) => return Err(format!("mvm node {i} has no weight slot")),
                (_, Some(_)) => return Err(format!("node {i} is not an mvm but names a slot")),
                _ => {}
            }
        }
        Ok(())
    }
}

struct Builder {
    nodes: Vec<Node>,
    weight_slots: Vec<WeightSlot>,
    bias_slots: Vec<BiasSlot>,
    input_dim: usize,
    hidden_dim: usize,
}

impl Builder {
    fn push(&mut self, kind: PrimitiveKind, name: &str, operands: Vec<Operand>, slot: Option<usize>) -> Source {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            kind,
            name: name.to_string(),
            operands,
            weight_slot: slot,
        });
        Source::Node(id)
    }

    fn mvm(&mut self, weight: &str, input: Source) -> Source {
        let cols = if matches!(input, Source::Input(Input::X)) {
            self.input_dim
        } else {
            self.hidden_dim
        };
        let slot = self.weight_slots.len();
        self.weight_slots.push(WeightSlot {
            name: weight.to_string(),
            rows: self.hidden_dim,
            cols,
        });
        self.push(PrimitiveKind::CsbMvm, weight, vec![Operand::of(input)], Some(slot))
    }

    fn bias(&mut self, name: &str) -> Source {
        self.bias_slots.push(BiasSlot {
            name: name.to_string(),
            len: self.hidden_dim,
        });
        Source::Bias(self.bias_slots.len() - 1)
    }

    fn binary(&mut self, kind: PrimitiveKind, name: &str, a: Operand, b: Operand) -> Source {
        self.push(kind, name, vec![a, b], None)
    }

    fn add(&mut self, name: &str, a: Source, b: Source) -> Source {
        self.binary(PrimitiveKind::EwAdd, name, Operand::of(a), Operand::of(b))
    }

    fn mul(&mut self, name: &str, a: Source, b: Source) -> Source {
        self.binary(PrimitiveKind::EwMul, name, Operand::of(a), Operand::of(b))
    }

    fn act(&mut self, kind: PrimitiveKind, name: &str, a: Source) -> Source {
        self.push(kind, name, vec![Operand::of(a)], None)
    }

    /// `act(W x + U h + b)`, returning the activation node.
    fn gate(&mut self, tag: &str, act: PrimitiveKind, h_input: Source) -> Source {
        let wx = self.mvm(&format!("W_{tag}"), Source::Input(Input::X));
        let uh = self.mvm(&format!("U_{tag}"), h_input);
        let pre = self.add(&format!("{tag}_sum"), wx, uh);
        let b = self.bias(&format!("b_{tag}"));
        let biased = self.add(&format!("{tag}_pre"), pre, b);
        self.act(act, tag, biased)
    }
}

/// Dataflow graph of one LSTM or GRU time step.
pub fn build_cell_graph(cell: CellKind, input_dim: usize, hidden_dim: usize) -> Result<CellGraph, DataflowError> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(DataflowError::InvalidDims { input_dim, hidden_dim });
    }
    let mut b = Builder {
        nodes: Vec::new(),
        weight_slots: Vec::new(),
        bias_slots: Vec::new(),
        input_dim,
        hidden_dim,
    };
    let h = Source::Input(Input::HPrev);
    let (h_out, c_out) = match cell {
        CellKind::Gru => {
            let z = b.gate("z", PrimitiveKind::Sigmoid, h);
            let r = b.gate("r", PrimitiveKind::Sigmoid, h);
            let rh = b.mul("r_h", r, h);
            let cand = b.gate("h", PrimitiveKind::Tanh, rh);
            let keep = b.binary(
                PrimitiveKind::EwAdd,
                "one_minus_z",
                Operand::of(Source::ConstOne),
                Operand {
                    source: z,
                    negate: true,
                },
            );
            let old = b.mul("keep_h", keep, h);
            let new = b.mul("take_cand", z, cand);
            (b.add("h_next", old, new), None)
        }
        CellKind::Lstm => {
            let i = b.gate("i", PrimitiveKind::Sigmoid, h);
            let f = b.gate("f", PrimitiveKind::Sigmoid, h);
            let g = b.gate("g", PrimitiveKind::Tanh, h);
            let o = b.gate("o", PrimitiveKind::Sigmoid, h);
            let fc = b.mul("f_c", f, Source::Input(Input::CPrev));
            let ig = b.mul("i_g", i, g);
            let c = b.add("c_next", fc, ig);
            let tc = b.act(PrimitiveKind::Tanh, "tanh_c", c);
            (b.mul("h_next", o, tc), Some(c))
        }
    };
    let node = |s: Source| match s {
        Source::Node(id) => id,
        _ => unreachable!("outputs are nodes"),
    };
    Ok(CellGraph {
        cell,
        input_dim,
        hidden_dim,
        nodes: b.nodes,
        weight_slots: b.weight_slots,
        bias_slots: b.bias_slots,
        h_out: node(h_out),
        c_out: c_out.map(node),
    })
}

/// Recurrent state carried between time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T> {
    pub h: Vec<T>,
    /// Present for LSTM only.
    pub c: Option<Vec<T>>,
}

impl<T: Scalar> CellState<T> {
    pub fn zeros(graph: &CellGraph) -> Self {
        Self {
            h: vec![T::zero(); graph.hidden_dim],
            c: (graph.cell == CellKind::Lstm).then(|| vec![T::zero(); graph.hidden_dim]),
        }
    }
}

/// Matrices and vectors bound to a graph's slots, in slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct CellWeights<T> {
    /// Possibly padded: each matrix covers at least its slot's logical dims.
    pub weights: Vec<CsbMatrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> CellWeights<T> {
    /// Random weights `N(0, scale^2)`, padded to `shape` and, when
    /// `prune_fraction` is given, projected onto the CSB pattern.
    pub fn random(
        graph: &CellGraph,
        shape: BlockShape,
        prune_fraction: Option<f64>,
        scale: f64,
        seed: u64,
    ) -> Result<Self, DataflowError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).map_err(|e| DataflowError::Dimension {
            what: format!("weight scale {scale}: {e}"),
            expected: 0,
            actual: 0,
        })?;
        let mut weights = Vec::with_capacity(graph.weight_slots.len());
        for slot in &graph.weight_slots {
            let d = DenseMatrix::from_fn(slot.rows, slot.cols, |_, _| T::of(normal.sample(&mut rng)));
            let mut d = d.padded_to(shape);
            if let Some(pr) = prune_fraction {
                d = project_csb(&d, shape, pr);
            }
            weights.push(CsbMatrix::encode(&d, shape)?);
        }
        let biases = graph
            .bias_slots
            .iter()
            .map(|b| (0..b.len).map(|_| T::of(normal.sample(&mut rng))).collect())
            .collect();
        Ok(Self { weights, biases })
    }

    /// Checks that every slot is bound with compatible dimensions.
    pub fn check(&self, graph: &CellGraph) -> Result<(), DataflowError> {
        for (i, slot) in graph.weight_slots.iter().enumerate() {
            let w = self.weights.get(i).ok_or_else(|| DataflowError::UnboundSlot {
                kind: "weight",
                slot: slot.name.clone(),
            })?;
            if w.rows() < slot.rows || w.cols() < slot.cols {
                return Err(DataflowError::Dimension {
                    what: format!("weight {} ({}x{})", slot.name, w.rows(), w.cols()),
                    expected: slot.rows * slot.cols,
                    actual: w.rows() * w.cols(),
                });
            }
        }
        for (i, slot) in graph.bias_slots.iter().enumerate() {
            let b = self.biases.get(i).ok_or_else(|| DataflowError::UnboundSlot {
                kind: "bias",
                slot: slot.name.clone(),
            })?;
            if b.len() != slot.len {
                return Err(DataflowError::Dimension {
                    what: format!("bias {}", slot.name),
                    expected: slot.len,
                    actual: b.len(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_step<T>(graph: &CellGraph, x: &[T], state: &CellState<T>) -> Result<(), DataflowError> {
    let expect = |what: &str, expected: usize, actual: usize| {
        if expected == actual {
            Ok(())
        } else {
            Err(DataflowError::Dimension {
                what: what.to_string(),
                expected,
                actual,
            })
        }
    };
    expect("x", graph.input_dim, x.len())?;
    expect("h", graph.hidden_dim, state.h.len())?;
    match (&state.c, graph.cell) {
        (Some(c), CellKind::Lstm) => expect("c", graph.hidden_dim, c.len()),
        (None, CellKind::Gru) => Ok(()),
        (None, CellKind::Lstm) => expect("c", graph.hidden_dim, 0),
        (Some(c), CellKind::Gru) => expect("c", 0, c.len()),
    }
}

/// Value of an operand given already-computed node outputs.
pub(crate) fn fetch<T: Scalar>(
    op: &Operand,
    graph: &CellGraph,
    weights: &CellWeights<T>,
    x: &[T],
    state: &CellState<T>,
    node_value: impl Fn(NodeId) -> Vec<T>,
) -> Vec<T> {
    let v = match op.source {
        Source::Input(Input::X) => x.to_vec(),
        Source::Input(Input::HPrev) => state.h.clone(),
        Source::Input(Input::CPrev) => state.c.clone().expect("checked: lstm state"),
        Source::Node(id) => node_value(id),
        Source::Bias(b) => weights.biases[b].clone(),
        Source::ConstOne => vec![T::one(); graph.hidden_dim],
    };
    if op.negate {
        v.into_iter().map(|e| -e).collect()
    } else {
        v
    }
}

/// Applies an element-wise unit.
pub(crate) fn apply_ew<T: Scalar>(kind: PrimitiveKind, args: &[Vec<T>]) -> Vec<T> {
    match kind {
        PrimitiveKind::EwMul => args[0].iter().zip(&args[1]).map(|(&a, &b)| a * b).collect(),
        PrimitiveKind::EwAdd => args[0].iter().zip(&args[1]).map(|(&a, &b)| a + b).collect(),
        PrimitiveKind::Sigmoid => args[0].iter().map(|&a| a.sigmoid()).collect(),
        PrimitiveKind::Tanh => args[0].iter().map(|&a| a.tanh()).collect(),
        PrimitiveKind::CsbMvm => unreachable!("mvm is not element-wise"),
    }
}

/// Evaluates one time step by recursive descent from the outputs.
pub fn evaluate_graph<T: Scalar>(
    graph: &CellGraph,
    weights: &CellWeights<T>,
    x: &[T],
    state: &CellState<T>,
) -> Result<CellState<T>, DataflowError> {
    weights.check(graph)?;
    check_step(graph, x, state)?;
    let mut memo: Vec<Option<Vec<T>>> = vec![None; graph.nodes.len()];

    fn eval<T: Scalar>(
        id: NodeId,
        graph: &CellGraph,
        weights: &CellWeights<T>,
        x: &[T],
        state: &CellState<T>,
        memo: &mut Vec<Option<Vec<T>>>,
    ) -> Result<Vec<T>, DataflowError> {
        if let Some(v) = &memo[id] {
            return Ok(v.clone());
        }
        let node = &graph.nodes[id];
        for p in graph.predecessors(id) {
            eval(p, graph, weights, x, state, memo)?;
        }
        let args: Vec<Vec<T>> = node
            .operands
            .iter()
            .map(|op| {
                fetch(op, graph, weights, x, state, |p| {
                    memo[p].clone().expect("predecessor evaluated")
                })
            })
            .collect();
        let out = match node.kind {
            PrimitiveKind::CsbMvm => {
                let slot = node.weight_slot.expect("checked graph");
                weights.weights[slot].mvm_logical(&args[0], graph.weight_slots[slot].rows)?
            }
            kind => apply_ew(kind, &args),
        };
        memo[id] = Some(out.clone());
        Ok(out)
    }

    let h = eval(graph.h_out, graph, weights, x, state, &mut memo)?;
    let c = match graph.c_out {
        Some(id) => Some(eval(id, graph, weights, x, state, &mut memo)?),
        None => None,
    };
    Ok(CellState { h, c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvm_counts_match_the_cell_equations() {
        let gru = build_cell_graph(CellKind::Gru, 3, 5).unwrap();
        assert_eq!(gru.count(PrimitiveKind::CsbMvm), 6);
        let names: Vec<&str> = gru.weight_slots.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["W_z", "U_z", "W_r", "U_r", "W_h", "U_h"]);
        assert_eq!(gru.weight_slots[0].cols, 3);
        assert_eq!(gru.weight_slots[1].cols, 5);
        let lstm = build_cell_graph(CellKind::Lstm, 3, 5).unwrap();
        assert_eq!(lstm.count(PrimitiveKind::CsbMvm), 8);
        assert!(lstm.c_out.is_some() && gru.c_out.is_none());
        gru.check().unwrap();
        lstm.check().unwrap();
    }

    #[test]
    fn unknown_cells_and_empty_dims_are_rejected() {
        assert!(matches!("lstmp".parse::<CellKind>(), Err(DataflowError::UnsupportedCell(_))));
        assert_eq!("GRU".parse::<CellKind>().unwrap(), CellKind::Gru);
        assert!(build_cell_graph(CellKind::Gru, 0, 4).is_err());
    }

    #[test]
    fn zero_weights_keep_zero_state() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let g = build_cell_graph(cell, 4, 6).unwrap();
            let shape = BlockShape::new(2, 2).unwrap();
            let mut w = CellWeights::<f64>::random(&g, shape, None, 1.0, 1).unwrap();
            w.weights = w
                .weights
                .iter()
                .map(|m| CsbMatrix::encode(&DenseMatrix::zeros(m.rows(), m.cols()), shape).unwrap())
                .collect();
            w.biases.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
            let s = evaluate_graph(&g, &w, &[1.0, -2.0, 0.5, 3.0], &CellState::zeros(&g)).unwrap();
            assert!(s.h.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn missing_bindings_are_reported() {
        let g = build_cell_graph(CellKind::Gru, 2, 2).unwrap();
        let mut w = CellWeights::<f64>::random(&g, BlockShape::new(2, 2).unwrap(), None, 1.0, 1).unwrap();
        w.weights.pop();
        assert!(matches!(
            evaluate_graph(&g, &w, &[0.0, 0.0], &CellState::zeros(&g)),
            Err(DataflowError::UnboundSlot { kind: "weight", .. })
        ));
    }
}
