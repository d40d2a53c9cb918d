//! Micro-instruction compiler for the CSB engine.
//!
//! The engine is a `K x L` torus of PEGroups, each a `P x Q` PE array. One
//! block iteration maps a `K x L` window of blocks onto the groups in
//! row-major order. Kernel workloads differ per block, so the compiler moves
//! rectangular kernel partitions to torus neighbours: a group hands its last
//! kernel columns to the right neighbour (horizontal sharing) and its last
//! kernel rows to the lower neighbour (vertical sharing). The split per group
//! is found by a bounded backtracking search over the CLP constraints, with the
//! balance margin relaxed in `P * Q` steps until a split exists.

mod micro;
mod solver;
mod validate;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csb::CsbMatrix;
use crate::Scalar;

pub use micro::{
    compile_micro, compile_micro_detailed, IterationPlan, IterationSolution, MicroItem,
    MicroProgram, Sharing,
};
pub use solver::{minimal_margin, no_sharing_margin, solve_partition, solve_partition_with, SolverLimits};
pub use validate::{validate_partition, ClpViolation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),

    #[error("iteration ({i}, {j}) outside the {rows}x{cols} iteration grid")]
    IterationOutOfRange {
        i: usize,
        j: usize,
        rows: usize,
        cols: usize,
    },

    #[error("micro program line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Which torus sharing paths the engine has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    None,
    Vertical,
    Horizontal,
    TwoD,
}

impl SharingMode {
    pub const ALL: [SharingMode; 4] = [
        SharingMode::None,
        SharingMode::Vertical,
        SharingMode::Horizontal,
        SharingMode::TwoD,
    ];

    pub fn horizontal(self) -> bool {
        matches!(self, SharingMode::Horizontal | SharingMode::TwoD)
    }

    pub fn vertical(self) -> bool {
        matches!(self, SharingMode::Vertical | SharingMode::TwoD)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SharingMode::None => "none",
            SharingMode::Vertical => "vertical",
            SharingMode::Horizontal => "horizontal",
            SharingMode::TwoD => "two_d",
        }
    }
}

impl std::fmt::Display for SharingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SharingMode {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SchedError::InvalidConfig(format!("unknown sharing mode {s:?}")))
    }
}

fn default_ew_width() -> usize {
    1
}

/// Engine geometry: a `k x l` grid of PEGroups with `p x q` PEs each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub k: usize,
    pub l: usize,
    pub p: usize,
    pub q: usize,
    pub sharing_mode: SharingMode,
    /// Elements per cycle of each element-wise unit.
    #[serde(default = "default_ew_width")]
    pub ew_width: usize,
}

impl EngineConfig {
    pub fn new(k: usize, l: usize, p: usize, q: usize, sharing_mode: SharingMode) -> Result<Self, SchedError> {
        let cfg = Self {
            k,
            l,
            p,
            q,
            sharing_mode,
            ew_width: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if self.k == 0 || self.l == 0 || self.p == 0 || self.q == 0 || self.ew_width == 0 {
            return Err(SchedError::InvalidConfig(format!(
                "grid {}x{}, pe {}x{} and ew_width {} must all be positive",
                self.k, self.l, self.p, self.q, self.ew_width
            )));
        }
        Ok(())
    }

    pub fn with_mode(self, sharing_mode: SharingMode) -> Self {
        Self { sharing_mode, ..self }
    }

    pub fn groups(&self) -> usize {
        self.k * self.l
    }

    pub fn peak_pes(&self) -> usize {
        self.k * self.l * self.p * self.q
    }

    /// Row-major group index of `(k, l)`.
    pub fn group_index(&self, k: usize, l: usize) -> usize {
        k * self.l + l
    }

    /// Torus predecessor along a grid row: the group that shares horizontally
    /// into `g`.
    pub fn left_of(&self, g: usize) -> usize {
        let (k, l) = (g / self.l, g % self.l);
        self.group_index(k, (l + self.l - 1) % self.l)
    }

    /// Torus predecessor along a grid column: the group that shares
    /// vertically into `g`.
    pub fn up_of(&self, g: usize) -> usize {
        let (k, l) = (g / self.l, g % self.l);
        self.group_index((k + self.k - 1) % self.k, l)
    }

    pub fn right_of(&self, g: usize) -> usize {
        let (k, l) = (g / self.l, g % self.l);
        self.group_index(k, (l + 1) % self.l)
    }

    pub fn down_of(&self, g: usize) -> usize {
        let (k, l) = (g / self.l, g % self.l);
        self.group_index((k + 1) % self.k, l)
    }

    /// Cycles for an `r x c` workload: one `P x Q` tile per cycle.
    pub fn item_cycles(&self, r: usize, c: usize) -> u64 {
        (r.div_ceil(self.p) * c.div_ceil(self.q)) as u64
    }

    /// Temporal iteration grid for a block grid of `grid_rows x grid_cols`.
    pub fn iteration_grid(&self, grid_rows: usize, grid_cols: usize) -> (usize, usize) {
        (grid_rows.div_ceil(self.k), grid_cols.div_ceil(self.l))
    }
}

/// Kernel dimensions of the blocks mapped onto the grid in one iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelWindow {
    pub i: usize,
    pub j: usize,
    /// Kernel rows per group, row-major over the grid; 0 past the matrix edge.
    pub m: Vec<usize>,
    pub n: Vec<usize>,
}

impl KernelWindow {
    /// Window from explicit per-group dims, row-major.
    pub fn from_dims(i: usize, j: usize, dims: &[(usize, usize)]) -> Self {
        Self {
            i,
            j,
            m: dims.iter().map(|d| d.0).collect(),
            n: dims.iter().map(|d| d.1).collect(),
        }
    }

    pub fn raw_load(&self, g: usize) -> u64 {
        (self.m[g] * self.n[g]) as u64
    }

    pub fn total(&self) -> u64 {
        (0..self.m.len()).map(|g| self.raw_load(g)).sum()
    }

    /// Exact average workload per group.
    pub fn avg(&self) -> Ratio<u64> {
        Ratio::new(self.total(), self.m.len() as u64)
    }
}

/// Dims of the blocks in iteration `(i, j)`.
pub fn analyze_iteration<T: Scalar>(
    csb: &CsbMatrix<T>,
    cfg: &EngineConfig,
    i: usize,
    j: usize,
) -> Result<KernelWindow, SchedError> {
    let (gr, gc) = csb.grid();
    let (rows, cols) = cfg.iteration_grid(gr, gc);
    if i >= rows || j >= cols {
        return Err(SchedError::IterationOutOfRange { i, j, rows, cols });
    }
    let mut dims = Vec::with_capacity(cfg.groups());
    for k in 0..cfg.k {
        for l in 0..cfg.l {
            let (br, bc) = (i * cfg.k + k, j * cfg.l + l);
            dims.push(if br < gr && bc < gc {
                csb.kernel_dims(br, bc)
            } else {
                (0, 0)
            });
        }
    }
    Ok(KernelWindow::from_dims(i, j, &dims))
}

/// Split of one group's kernel (all counts are kernel rows/cols).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupVars {
    pub m_local: usize,
    pub n_local: usize,
    pub dm_h: usize,
    pub dn_h: usize,
    pub dm_v: usize,
    pub dn_v: usize,
}

impl GroupVars {
    /// Kernel kept entirely local: horizontal rows span `m`, vertical columns
    /// span `n`, both shared areas are zero.
    pub fn unshared(m: usize, n: usize) -> Self {
        Self {
            m_local: m,
            n_local: n,
            dm_h: m,
            dn_h: 0,
            dm_v: 0,
            dn_v: n,
        }
    }

    pub fn local_area(&self) -> u64 {
        (self.m_local * self.n_local) as u64
    }

    pub fn horizontal_area(&self) -> u64 {
        (self.dm_h * self.dn_h) as u64
    }

    pub fn vertical_area(&self) -> u64 {
        (self.dm_v * self.dn_v) as u64
    }
}

/// Per-group split for one iteration, row-major over the grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionVars {
    pub groups: Vec<GroupVars>,
}

impl PartitionVars {
    pub fn unshared(window: &KernelWindow) -> Self {
        Self {
            groups: window
                .m
                .iter()
                .zip(&window.n)
                .map(|(&m, &n)| GroupVars::unshared(m, n))
                .collect(),
        }
    }

    /// Scheduled MAC workload of each group: its local part plus what its
    /// left and upper torus neighbours hand over.
    pub fn loads(&self, cfg: &EngineConfig) -> Vec<u64> {
        (0..self.groups.len())
            .map(|g| {
                let mut load = self.groups[g].local_area();
                let left = cfg.left_of(g);
                if left != g {
                    load += self.groups[left].horizontal_area();
                }
                let up = cfg.up_of(g);
                if up != g {
                    load += self.groups[up].vertical_area();
                }
                load
            })
            .collect()
    }
}
