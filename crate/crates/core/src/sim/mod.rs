//! Cycle-level model of the CSB engine.
//!
//! Each group retires one `P x Q` tile per cycle, so an `r x c` item costs
//! `ceil(r/P) * ceil(c/Q)` cycles. Groups run their items of a block
//! iteration back to back and the iteration lasts as long as its slowest
//! group. Horizontal reduction of the accumulators is free.

mod report;

use serde::Serialize;
use thiserror::Error;

use crate::csb::CsbMatrix;
use crate::dataflow::{
    execute_with, CellState, CellWeights, DataflowError, MacroInstruction, MacroProgram, MvmBackend,
    PrimitiveKind, RnnOutput, SectionCount,
};
use crate::scheduler::{EngineConfig, MicroProgram, SchedError, Sharing};
use crate::Scalar;

pub use report::{utilization_report, ModeAverage, ReportRow, UtilizationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Sched(#[from] SchedError),

    #[error("program does not match the engine or matrix: {0}")]
    Mismatch(String),

    #[error("kernel cell coverage mismatch in block ({block_row}, {block_col}): {detail}")]
    Coverage {
        block_row: usize,
        block_col: usize,
        detail: String,
    },

    #[error("input length {actual}, matrix expects {expected}")]
    Dimension { expected: usize, actual: usize },

    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

/// Cycle and MAC counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CycleStats {
    pub total_cycles: u64,
    /// Kernel cells multiplied (one MAC each).
    pub effective_macs: u64,
    /// Cycles each group spent executing items, row-major over the grid.
    pub per_group_busy_cycles: Vec<u64>,
    pub peak_pe_count: u64,
}

impl CycleStats {
    fn empty(cfg: &EngineConfig) -> Self {
        Self {
            total_cycles: 0,
            effective_macs: 0,
            per_group_busy_cycles: vec![0; cfg.groups()],
            peak_pe_count: cfg.peak_pes() as u64,
        }
    }

    /// `effective_macs / (total_cycles * peak_pe_count)`; 0 for an idle run.
    pub fn utilization(&self) -> f64 {
        if self.total_cycles == 0 {
            0.0
        } else {
            self.effective_macs as f64 / (self.total_cycles as f64 * self.peak_pe_count as f64)
        }
    }

    fn absorb(&mut self, other: &CycleStats) {
        self.effective_macs += other.effective_macs;
        for (a, b) in self.per_group_busy_cycles.iter_mut().zip(&other.per_group_busy_cycles) {
            *a += b;
        }
    }
}

/// Per-group cycles of one block iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IterationTrace {
    pub i: usize,
    pub j: usize,
    pub group_cycles: Vec<u64>,
    pub cycles: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult<T> {
    pub output: Vec<T>,
    pub stats: CycleStats,
    pub utilization: f64,
    pub trace: Vec<IterationTrace>,
}

fn check_program<T: Scalar>(prog: &MicroProgram, csb: &CsbMatrix<T>, cfg: &EngineConfig) -> Result<(), SimError> {
    cfg.validate()?;
    if prog.config != *cfg {
        return Err(SimError::Mismatch(format!(
            "program compiled for {:?}, engine is {:?}",
            prog.config, cfg
        )));
    }
    let (gr, gc) = csb.grid();
    let want = cfg.iteration_grid(gr, gc);
    if (prog.iter_rows, prog.iter_cols) != want || prog.iterations.len() != want.0 * want.1 {
        return Err(SimError::Mismatch(format!(
            "program has {}x{} iterations, matrix needs {}x{}",
            prog.iter_rows, prog.iter_cols, want.0, want.1
        )));
    }
    Ok(())
}

/// Runs a compiled micro program on input `x` (padded width).
pub fn simulate_mvm<T: Scalar>(
    prog: &MicroProgram,
    csb: &CsbMatrix<T>,
    x: &[T],
    cfg: &EngineConfig,
) -> Result<SimResult<T>, SimError> {
    check_program(prog, csb, cfg)?;
    if x.len() != csb.cols() {
        return Err(SimError::Dimension {
            expected: csb.cols(),
            actual: x.len(),
        });
    }
    let shape = csb.block_shape();
    let (grid_rows, grid_cols) = csb.grid();
    let groups = cfg.groups();
    let mut covered = vec![0u8; csb.nnz()];
    let mut stats = CycleStats::empty(cfg);
    let mut trace = Vec::with_capacity(prog.iterations.len());
    let mut y = vec![T::zero(); csb.rows()];
    // one accumulator per group over the rows of its block-row
    let mut acc = vec![vec![T::zero(); shape.block_rows]; groups];
    let mut gathered: Vec<T> = Vec::with_capacity(shape.block_cols);

    for i in 0..prog.iter_rows {
        acc.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v = T::zero()));
        for j in 0..prog.iter_cols {
            let plan = &prog.iterations[i * prog.iter_cols + j];
            if (plan.i, plan.j) != (i, j) || plan.groups.len() != groups {
                return Err(SimError::Mismatch(format!("iteration slot ({i}, {j}) is malformed")));
            }
            let mut group_cycles = vec![0u64; groups];
            for (g, items) in plan.groups.iter().enumerate() {
                for item in items {
                    let owner = match item.sharing {
                        Sharing::Local => g,
                        Sharing::Horizontal => cfg.left_of(g),
                        Sharing::Vertical => cfg.up_of(g),
                    };
                    let expected = (i * cfg.k + owner / cfg.l, j * cfg.l + owner % cfg.l);
                    if item.origin != expected
                        || expected.0 >= grid_rows
                        || expected.1 >= grid_cols
                        || (item.sharing != Sharing::Local && owner == g)
                    {
                        return Err(SimError::Mismatch(format!(
                            "item of group {g} in iteration ({i}, {j}) claims block {:?}",
                            item.origin
                        )));
                    }
                    if item.row_idx.len() != item.trip_rows || item.col_idx.len() != item.trip_cols {
                        return Err(SimError::Mismatch("trip counts disagree with index lists".into()));
                    }
                    let (br, bc) = item.origin;
                    let block = csb.block(br, bc);
                    let base = csb.value_offset(br, bc);
                    let locate = |idx: &[u16], kernel: &[u16], what: &str| -> Result<Vec<usize>, SimError> {
                        idx.iter()
                            .map(|v| {
                                kernel.binary_search(v).map_err(|_| SimError::Coverage {
                                    block_row: br,
                                    block_col: bc,
                                    detail: format!("{what} index {v} is not in the kernel"),
                                })
                            })
                            .collect()
                    };
                    let rows = locate(&item.row_idx, block.row_idx, "row")?;
                    let cols = locate(&item.col_idx, block.col_idx, "column")?;
                    let n = block.n();
                    gathered.clear();
                    gathered.extend(item.col_idx.iter().map(|&c| x[bc * shape.block_cols + c as usize]));
                    let target = &mut acc[owner_accumulator(item.sharing, g, owner)];
                    for (&a, &r) in rows.iter().zip(&item.row_idx) {
                        let mut partial = T::zero();
                        for (&b, &xv) in cols.iter().zip(&gathered) {
                            covered[base + a * n + b] += 1;
                            partial += block.values[a * n + b] * xv;
                        }
                        target[r as usize] += partial;
                    }
                    group_cycles[g] += cfg.item_cycles(item.trip_rows, item.trip_cols);
                    stats.effective_macs += item.macs() as u64;
                }
            }
            let cycles = group_cycles.iter().copied().max().unwrap_or(0);
            stats.total_cycles += cycles;
            for (busy, c) in stats.per_group_busy_cycles.iter_mut().zip(&group_cycles) {
                *busy += c;
            }
            trace.push(IterationTrace {
                i,
                j,
                group_cycles,
                cycles,
            });
        }
        // horizontal reduction along each grid row
        for k in 0..cfg.k {
            let br = i * cfg.k + k;
            if br >= grid_rows {
                continue;
            }
            for l in 0..cfg.l {
                for (r, &v) in acc[k * cfg.l + l].iter().enumerate() {
                    y[br * shape.block_rows + r] += v;
                }
            }
        }
    }

    if let Some(pos) = covered.iter().position(|&c| c != 1) {
        let (br, bc) = block_of_value(csb, pos);
        return Err(SimError::Coverage {
            block_row: br,
            block_col: bc,
            detail: format!("kernel value {pos} multiplied {} times", covered[pos]),
        });
    }
    let utilization = stats.utilization();
    Ok(SimResult {
        output: y,
        stats,
        utilization,
        trace,
    })
}

/// Vertical items accumulate into the owner's buffer, everything else into
/// the executing group's.
fn owner_accumulator(sharing: Sharing, executing: usize, owner: usize) -> usize {
    match sharing {
        Sharing::Vertical => owner,
        _ => executing,
    }
}

fn block_of_value<T: Scalar>(csb: &CsbMatrix<T>, pos: usize) -> (usize, usize) {
    let (gr, gc) = csb.grid();
    (0..gr * gc)
        .rev()
        .map(|b| (b / gc, b % gc))
        .find(|&(r, c)| csb.value_offset(r, c) <= pos)
        .unwrap_or((0, 0))
}

/// Outcome of a simulated RNN run.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnSimResult<T> {
    pub output: RnnOutput<T>,
    /// All words: engine and element-wise time.
    pub stats: CycleStats,
    pub utilization: f64,
}

struct EngineBackend<'a, T> {
    weights: &'a CellWeights<T>,
    micro: &'a [MicroProgram],
    cfg: &'a EngineConfig,
    word_engine_cycles: u64,
    stats: CycleStats,
}

impl<T: Scalar> MvmBackend<T> for EngineBackend<'_, T> {
    type Error = SimError;

    fn mvm(&mut self, slot: usize, x: &[T], out_len: usize) -> Result<Vec<T>, SimError> {
        let csb = &self.weights.weights[slot];
        let prog = self.micro.get(slot).ok_or_else(|| DataflowError::UnboundSlot {
            kind: "micro program",
            slot: slot.to_string(),
        })?;
        let mut padded = x.to_vec();
        padded.resize(csb.cols(), T::zero());
        let res = simulate_mvm(prog, csb, &padded, self.cfg)?;
        self.word_engine_cycles = res.stats.total_cycles;
        self.stats.absorb(&res.stats);
        let mut out = res.output;
        out.truncate(out_len);
        Ok(out)
    }

    fn end_word(&mut self, word: &MacroInstruction) {
        let mut duration = 0;
        for (kind, s) in word.active() {
            let d = match (kind, s.count) {
                (PrimitiveKind::CsbMvm, _) => self.word_engine_cycles,
                (_, SectionCount::Elements(c)) => c.div_ceil(self.cfg.ew_width) as u64,
                (_, SectionCount::Blocks { .. }) => 0,
            };
            duration = duration.max(d);
        }
        self.stats.total_cycles += duration;
        self.word_engine_cycles = 0;
    }
}

/// Executes a compiled cell over `xs` on the engine model; `micro[s]` must be
/// compiled from `weights.weights[s]` for `cfg`.
pub fn simulate_rnn<T: Scalar>(
    prog: &MacroProgram,
    micro: &[MicroProgram],
    weights: &CellWeights<T>,
    xs: &[Vec<T>],
    init: &CellState<T>,
    cfg: &EngineConfig,
) -> Result<RnnSimResult<T>, SimError> {
    if micro.len() != prog.graph.weight_slots.len() {
        return Err(SimError::Mismatch(format!(
            "{} micro programs for {} weight slots",
            micro.len(),
            prog.graph.weight_slots.len()
        )));
    }
    let mut backend = EngineBackend {
        weights,
        micro,
        cfg,
        word_engine_cycles: 0,
        stats: CycleStats::empty(cfg),
    };
    let output = execute_with(prog, weights, xs, init, &mut backend)?;
    let utilization = backend.stats.utilization();
    Ok(RnnSimResult {
        output,
        stats: backend.stats,
        utilization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csb::{BlockShape, DenseMatrix};
    use crate::scheduler::{compile_micro, SharingMode};

    fn fixture() -> CsbMatrix<f64> {
        let d = DenseMatrix::from_fn(8, 16, |r, c| {
            if r < 4 && !(4..8).contains(&c) {
                1.0 + ((r * 16 + c) as f64 * 0.37).sin()
            } else {
                0.0
            }
        });
        CsbMatrix::encode(&d, BlockShape::new(8, 8).unwrap()).unwrap()
    }

    fn x() -> Vec<f64> {
        (0..16).map(|i| (i as f64 * 0.61).cos()).collect()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-9 * scale)
    }

    #[test]
    fn worked_example_cycles() {
        let csb = fixture();
        let h = EngineConfig::new(1, 2, 2, 2, SharingMode::Horizontal).unwrap();
        let res = simulate_mvm(&compile_micro(&csb, &h).unwrap(), &csb, &x(), &h).unwrap();
        assert_eq!(res.trace[0].group_cycles, vec![6, 6]);
        assert_eq!(res.stats.total_cycles, 6);
        assert_eq!(res.utilization, 1.0);
        assert!(close(&res.output, &csb.mvm(&x()).unwrap()));

        let none = h.with_mode(SharingMode::None);
        let res = simulate_mvm(&compile_micro(&csb, &none).unwrap(), &csb, &x(), &none).unwrap();
        assert_eq!(res.trace[0].group_cycles, vec![4, 8]);
        assert_eq!(res.stats.total_cycles, 8);
        assert_eq!(res.utilization, 0.75);
    }

    #[test]
    fn single_item_ceil_cost() {
        let cfg = EngineConfig::new(1, 1, 2, 2, SharingMode::None).unwrap();
        assert_eq!(cfg.item_cycles(4, 6), 6);
        assert_eq!(cfg.item_cycles(3, 5), 6);
    }

    #[test]
    fn foreign_program_is_rejected() {
        let csb = fixture();
        let h = EngineConfig::new(1, 2, 2, 2, SharingMode::Horizontal).unwrap();
        let mut prog = compile_micro(&csb, &h).unwrap();
        prog.iterations[0].groups[1].pop();
        assert!(matches!(
            simulate_mvm(&prog, &csb, &x(), &h),
            Err(SimError::Coverage { .. })
        ));

        let mut doubled = compile_micro(&csb, &h).unwrap();
        let dup = doubled.iterations[0].groups[0][0].clone();
        doubled.iterations[0].groups[0].push(dup);
        assert!(matches!(
            simulate_mvm(&doubled, &csb, &x(), &h),
            Err(SimError::Coverage { .. })
        ));

        let other = h.with_mode(SharingMode::TwoD);
        assert!(matches!(
            simulate_mvm(&compile_micro(&csb, &h).unwrap(), &csb, &x(), &other),
            Err(SimError::Mismatch(_))
        ));
        assert!(matches!(
            simulate_mvm(&compile_micro(&csb, &h).unwrap(), &csb, &x()[..8], &h),
            Err(SimError::Dimension { .. })
        ));
    }

    #[test]
    fn vertical_shares_land_in_the_owner_rows() {
        // 2x1 grid: the top block is dense, the bottom one empty
        let d = DenseMatrix::from_fn(8, 4, |r, c| if r < 4 { (r * 4 + c) as f64 + 1.0 } else { 0.0 });
        let csb = CsbMatrix::encode(&d, BlockShape::new(4, 4).unwrap()).unwrap();
        let cfg = EngineConfig::new(2, 1, 2, 2, SharingMode::Vertical).unwrap();
        let prog = compile_micro(&csb, &cfg).unwrap();
        assert_eq!(prog.iterations[0].groups[1][0].sharing, Sharing::Vertical);
        let x = [1.0, -1.0, 0.5, 2.0];
        let res = simulate_mvm(&prog, &csb, &x, &cfg).unwrap();
        assert_eq!(res.trace[0].group_cycles, vec![2, 2]);
        assert!(close(&res.output, &csb.mvm(&x).unwrap()));
    }
}
