use std::fmt::Write as _;

use super::{
    analyze_iteration, minimal_margin, no_sharing_margin, EngineConfig, KernelWindow,
    PartitionVars, SchedError, SharingMode, SolverLimits,
};
use crate::csb::CsbMatrix;
use crate::Scalar;

/// How a micro item reaches the group executing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sharing {
    /// The group's own block.
    Local,
    /// Taken from the left torus neighbour's block through its input port.
    Horizontal,
    /// Taken from the upper torus neighbour's block; results go back to it.
    Vertical,
}

impl Sharing {
    pub fn as_str(self) -> &'static str {
        match self {
            Sharing::Local => "local",
            Sharing::Horizontal => "horiz",
            Sharing::Vertical => "vert",
        }
    }
}

/// One rectangular kernel partition executed by one group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicroItem {
    pub sharing: Sharing,
    pub trip_rows: usize,
    pub trip_cols: usize,
    /// In-block output indices, a contiguous slice of the owner's `row_idx`.
    pub row_idx: Vec<u16>,
    /// In-block input indices, a contiguous slice of the owner's `col_idx`.
    pub col_idx: Vec<u16>,
    /// `(block_row, block_col)` of the block the kernel cells belong to.
    pub origin: (usize, usize),
}

impl MicroItem {
    pub fn macs(&self) -> usize {
        self.trip_rows * self.trip_cols
    }
}

/// Items of one block iteration, one list per group (row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationPlan {
    pub i: usize,
    pub j: usize,
    pub groups: Vec<Vec<MicroItem>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicroProgram {
    pub config: EngineConfig,
    pub iter_rows: usize,
    pub iter_cols: usize,
    /// Row-major over the iteration grid.
    pub iterations: Vec<IterationPlan>,
}

/// Scheduler decisions behind one [`IterationPlan`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationSolution {
    pub window: KernelWindow,
    pub margin: u64,
    pub no_sharing_margin: u64,
    pub vars: PartitionVars,
}

/// Block executed by group `g` in iteration `(i, j)`.
fn block_of(cfg: &EngineConfig, i: usize, j: usize, g: usize) -> (usize, usize) {
    (i * cfg.k + g / cfg.l, j * cfg.l + g % cfg.l)
}

fn slice_item<T: Scalar>(
    csb: &CsbMatrix<T>,
    sharing: Sharing,
    origin: (usize, usize),
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Option<MicroItem> {
    if rows.is_empty() || cols.is_empty() {
        return None;
    }
    let block = csb.block(origin.0, origin.1);
    Some(MicroItem {
        sharing,
        trip_rows: rows.len(),
        trip_cols: cols.len(),
        row_idx: block.row_idx[rows].to_vec(),
        col_idx: block.col_idx[cols].to_vec(),
        origin,
    })
}

fn plan_iteration<T: Scalar>(
    csb: &CsbMatrix<T>,
    cfg: &EngineConfig,
    window: &KernelWindow,
    vars: &PartitionVars,
) -> IterationPlan {
    let (i, j) = (window.i, window.j);
    let mut groups: Vec<Vec<MicroItem>> = vec![Vec::new(); cfg.groups()];
    for (g, items) in groups.iter_mut().enumerate() {
        let own = &vars.groups[g];
        if window.m[g] > 0 {
            items.extend(slice_item(
                csb,
                Sharing::Local,
                block_of(cfg, i, j, g),
                0..own.m_local,
                0..own.n_local,
            ));
        }
        let left = cfg.left_of(g);
        if left != g && window.m[left] > 0 {
            let lv = &vars.groups[left];
            items.extend(slice_item(
                csb,
                Sharing::Horizontal,
                block_of(cfg, i, j, left),
                0..lv.dm_h,
                lv.n_local..window.n[left],
            ));
        }
        let up = cfg.up_of(g);
        if up != g && window.m[up] > 0 {
            let uv = &vars.groups[up];
            items.extend(slice_item(
                csb,
                Sharing::Vertical,
                block_of(cfg, i, j, up),
                uv.m_local..window.m[up],
                0..uv.dn_v,
            ));
        }
    }
    IterationPlan { i, j, groups }
}

/// Compiles `csb` for the engine and also returns the per-iteration
/// partition solutions and margins.
pub fn compile_micro_detailed<T: Scalar>(
    csb: &CsbMatrix<T>,
    cfg: &EngineConfig,
) -> Result<(MicroProgram, Vec<IterationSolution>), SchedError> {
    cfg.validate()?;
    let (gr, gc) = csb.grid();
    let (iter_rows, iter_cols) = cfg.iteration_grid(gr, gc);
    let limits = SolverLimits {
        never_worse: true,
        ..SolverLimits::default()
    };
    let mut iterations = Vec::with_capacity(iter_rows * iter_cols);
    let mut solutions = Vec::with_capacity(iter_rows * iter_cols);
    for i in 0..iter_rows {
        for j in 0..iter_cols {
            let window = analyze_iteration(csb, cfg, i, j)?;
            let (margin, vars) = minimal_margin(&window, cfg, limits);
            iterations.push(plan_iteration(csb, cfg, &window, &vars));
            solutions.push(IterationSolution {
                no_sharing_margin: no_sharing_margin(&window, cfg),
                window,
                margin,
                vars,
            });
        }
    }
    Ok((
        MicroProgram {
            config: *cfg,
            iter_rows,
            iter_cols,
            iterations,
        },
        solutions,
    ))
}

/// Compiles `csb` into per-group micro-instruction streams.
pub fn compile_micro<T: Scalar>(csb: &CsbMatrix<T>, cfg: &EngineConfig) -> Result<MicroProgram, SchedError> {
    compile_micro_detailed(csb, cfg).map(|(p, _)| p)
}

fn csv(idx: &[u16]) -> String {
    idx.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl MicroProgram {
    pub fn item_count(&self) -> usize {
        self.iterations
            .iter()
            .flat_map(|it| &it.groups)
            .map(|g| g.len())
            .sum()
    }

    /// Line-oriented text form; `parse` reads it back.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# micro iters={}x{} grid={}x{} pe={}x{} mode={} ew={}\n",
            self.iter_rows, self.iter_cols, c.k, c.l, c.p, c.q, c.sharing_mode, c.ew_width
        );
        for it in &self.iterations {
            for (g, items) in it.groups.iter().enumerate() {
                for item in items {
                    let _ = writeln!(
                        out,
                        "iter {} {} | group {} {} | {} {}x{} | rows={} | cols={}",
                        it.i,
                        it.j,
                        g / c.l,
                        g % c.l,
                        item.sharing.as_str(),
                        item.trip_rows,
                        item.trip_cols,
                        csv(&item.row_idx),
                        csv(&item.col_idx)
                    );
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SchedError> {
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
        let (hn, header) = lines
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| err(1, "empty micro program"))?;
        let config_err = |msg: String| err(hn, &msg);
        let fields = header
            .strip_prefix("# micro ")
            .ok_or_else(|| err(hn, "missing '# micro' header"))?;
        let mut iters = None;
        let mut grid = None;
        let mut pe = None;
        let mut mode = None;
        let mut ew = 1;
        for f in fields.split_whitespace() {
            let (key, val) = f.split_once('=').ok_or_else(|| err(hn, "malformed header field"))?;
            match key {
                "iters" => iters = Some(pair(val, hn)?),
                "grid" => grid = Some(pair(val, hn)?),
                "pe" => pe = Some(pair(val, hn)?),
                "mode" => mode = Some(val.parse::<SharingMode>().map_err(|e| config_err(e.to_string()))?),
                "ew" => ew = num(val, hn)?,
                _ => return Err(err(hn, &format!("unknown header field {key:?}"))),
            }
        }
        let ((iter_rows, iter_cols), (k, l), (p, q), mode) = match (iters, grid, pe, mode) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(err(hn, "header needs iters, grid, pe and mode")),
        };
        let config = EngineConfig {
            k,
            l,
            p,
            q,
            sharing_mode: mode,
            ew_width: ew,
        };
        config.validate().map_err(|e| config_err(e.to_string()))?;
        let mut prog = MicroProgram {
            config,
            iter_rows,
            iter_cols,
            iterations: (0..iter_rows * iter_cols)
                .map(|x| IterationPlan {
                    i: x / iter_cols,
                    j: x % iter_cols,
                    groups: vec![Vec::new(); k * l],
                })
                .collect(),
        };
        for (ln, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            if parts.len() != 5 {
                return Err(err(ln, "expected 5 '|'-separated fields"));
            }
            let (i, j) = words_pair(parts[0], "iter", ln)?;
            let (gk, gl) = words_pair(parts[1], "group", ln)?;
            if i >= iter_rows || j >= iter_cols || gk >= k || gl >= l {
                return Err(err(ln, "iteration or group out of range"));
            }
            let (kind, dims) = parts[2]
                .split_once(' ')
                .ok_or_else(|| err(ln, "expected '<kind> <rows>x<cols>'"))?;
            let sharing = match kind {
                "local" => Sharing::Local,
                "horiz" => Sharing::Horizontal,
                "vert" => Sharing::Vertical,
                _ => return Err(err(ln, &format!("unknown item kind {kind:?}"))),
            };
            let (trip_rows, trip_cols) = pair(dims.trim(), ln)?;
            let row_idx = idx_list(parts[3], "rows=", ln)?;
            let col_idx = idx_list(parts[4], "cols=", ln)?;
            if row_idx.len() != trip_rows || col_idx.len() != trip_cols {
                return Err(err(ln, "trip counts disagree with index lists"));
            }
            let g = gk * l + gl;
            let owner = match sharing {
                Sharing::Local => g,
                Sharing::Horizontal => config.left_of(g),
                Sharing::Vertical => config.up_of(g),
            };
            prog.iterations[i * iter_cols + j].groups[g].push(MicroItem {
                sharing,
                trip_rows,
                trip_cols,
                row_idx,
                col_idx,
                origin: block_of(&config, i, j, owner),
            });
        }
        Ok(prog)
    }
}

fn err(line: usize, msg: &str) -> SchedError {
    SchedError::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn num(s: &str, line: usize) -> Result<usize, SchedError> {
    s.parse().map_err(|_| err(line, &format!("bad number {s:?}")))
}

fn pair(s: &str, line: usize) -> Result<(usize, usize), SchedError> {
    let (a, b) = s.split_once('x').ok_or_else(|| err(line, &format!("expected AxB, got {s:?}")))?;
    Ok((num(a, line)?, num(b, line)?))
}

fn words_pair(s: &str, tag: &str, line: usize) -> Result<(usize, usize), SchedError> {
    let w: Vec<&str> = s.split_whitespace().collect();
    match w.as_slice() {
        [t, a, b] if *t == tag => Ok((num(a, line)?, num(b, line)?)),
        _ => Err(err(line, &format!("expected '{tag} <a> <b>'"))),
    }
}

fn idx_list(s: &str, prefix: &str, line: usize) -> Result<Vec<u16>, SchedError> {
    let body = s.strip_prefix(prefix).ok_or_else(|| err(line, &format!("expected {prefix}")))?;
    body.split(',')
        .map(|v| v.parse::<u16>().map_err(|_| err(line, &format!("bad index {v:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csb::{BlockShape, DenseMatrix};

    /// 8x16 matrix, 8x8 blocks: kernels 4x4 and 4x8.
    fn fixture() -> CsbMatrix<f64> {
        let d = DenseMatrix::from_fn(8, 16, |r, c| {
            if r < 4 && !(4..8).contains(&c) {
                1.0 + (r * 16 + c) as f64
            } else {
                0.0
            }
        });
        CsbMatrix::encode(&d, BlockShape::new(8, 8).unwrap()).unwrap()
    }

    #[test]
    fn worked_example_items() {
        let cfg = EngineConfig::new(1, 2, 2, 2, SharingMode::Horizontal).unwrap();
        let prog = compile_micro(&fixture(), &cfg).unwrap();
        assert_eq!(prog.iterations.len(), 1);
        let g = &prog.iterations[0].groups;
        assert_eq!(g[0].len(), 2);
        assert_eq!((g[0][0].sharing, g[0][0].trip_rows, g[0][0].trip_cols), (Sharing::Local, 4, 4));
        assert_eq!(g[0][1].sharing, Sharing::Horizontal);
        assert_eq!((g[0][1].trip_rows, g[0][1].trip_cols, g[0][1].origin), (4, 2, (0, 1)));
        assert_eq!(g[0][1].col_idx, vec![6, 7]);
        assert_eq!(g[1].len(), 1);
        assert_eq!((g[1][0].trip_rows, g[1][0].trip_cols), (4, 6));
        assert_eq!(g[1][0].col_idx, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn text_form_is_stable_and_parses_back() {
        let cfg = EngineConfig::new(1, 2, 2, 2, SharingMode::Horizontal).unwrap();
        let prog = compile_micro(&fixture(), &cfg).unwrap();
        let text = prog.to_text();
        let expected = "\
# micro iters=1x1 grid=1x2 pe=2x2 mode=horizontal ew=1
iter 0 0 | group 0 0 | local 4x4 | rows=0,1,2,3 | cols=0,1,2,3
iter 0 0 | group 0 0 | horiz 4x2 | rows=0,1,2,3 | cols=6,7
iter 0 0 | group 0 1 | local 4x6 | rows=0,1,2,3 | cols=0,1,2,3,4,5
";
        assert_eq!(text, expected);
        assert_eq!(MicroProgram::parse(&text).unwrap(), prog);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "# micro iters=1x1 grid=1x2 pe=2x2 mode=none\niter 0 0 | group 0 5 | local 1x1 | rows=0 | cols=0\n";
        assert!(matches!(MicroProgram::parse(bad), Err(SchedError::Parse { line: 2, .. })));
        let bad = "# micro iters=1x1 grid=1x2 pe=2x2 mode=none\niter 0 0 | group 0 0 | local 2x1 | rows=0 | cols=0\n";
        assert!(matches!(MicroProgram::parse(bad), Err(SchedError::Parse { line: 2, .. })));
        assert!(MicroProgram::parse("iter 0 0").is_err());
        assert!(MicroProgram::parse("# micro iters=1x1 grid=1x2 pe=2x2 mode=sideways").is_err());
    }

    #[test]
    fn none_mode_emits_one_local_item_per_nonempty_block() {
        let cfg = EngineConfig::new(1, 2, 2, 2, SharingMode::None).unwrap();
        let prog = compile_micro(&fixture(), &cfg).unwrap();
        let items: Vec<&MicroItem> = prog.iterations[0].groups.iter().flatten().collect();
        assert_eq!(items.len(), 2);
        assert!(items.iter().all(|it| it.sharing == Sharing::Local));
        assert_eq!(items.iter().map(|it| it.macs()).sum::<usize>(), 48);
    }

    #[test]
    fn empty_matrix_has_no_items() {
        let d = DenseMatrix::<f64>::zeros(16, 16);
        let csb = CsbMatrix::encode(&d, BlockShape::new(4, 4).unwrap()).unwrap();
        let cfg = EngineConfig::new(2, 2, 2, 2, SharingMode::TwoD).unwrap();
        let prog = compile_micro(&csb, &cfg).unwrap();
        assert_eq!(prog.iterations.len(), 4);
        assert_eq!(prog.item_count(), 0);
    }
}
