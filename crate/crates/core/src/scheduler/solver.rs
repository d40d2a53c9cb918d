//! Backtracking search over the discretized CLP domains.
//!
//! Free variables per group are the branch (full-row horizontal share, or
//! full-width vertical share), the vertical cut `dm_v` (multiple of `P`, at
//! most half the kernel rows) and the horizontal cut `dn_h` (multiple of `Q`).
//! Everything else follows from the branch. Groups are assigned in row-major
//! order and options are tried in lexicographic `(branch, dm_v, dn_h)` order,
//! so the first solution found is the lexicographically smallest one. Loads
//! are compared against the average in integers scaled by the group count.

use super::{EngineConfig, GroupVars, KernelWindow, PartitionVars};

/// Search limits and optional extra constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverLimits {
    /// Candidate assignments tried before giving up on a margin.
    pub node_budget: u64,
    /// Also require every group's load and cycle count to stay within the
    /// largest unshared load and cycle count of the window.
    pub never_worse: bool,
}

impl Default for SolverLimits {
    fn default() -> Self {
        Self {
            node_budget: 200_000,
            never_worse: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Opt {
    vars: GroupVars,
    local: u64,
    h: u64,
    v: u64,
    local_cyc: u64,
    h_cyc: u64,
    v_cyc: u64,
}

impl Opt {
    fn new(vars: GroupVars, cfg: &EngineConfig) -> Self {
        Self {
            vars,
            local: vars.local_area(),
            h: vars.horizontal_area(),
            v: vars.vertical_area(),
            local_cyc: cfg.item_cycles(vars.m_local, vars.n_local),
            h_cyc: cfg.item_cycles(vars.dm_h, vars.dn_h),
            v_cyc: cfg.item_cycles(vars.dm_v, vars.dn_v),
        }
    }

    fn signature(&self) -> [u64; 6] {
        [self.local, self.h, self.v, self.local_cyc, self.h_cyc, self.v_cyc]
    }
}

fn group_options(window: &KernelWindow, cfg: &EngineConfig, g: usize) -> Vec<Opt> {
    let (m, n) = (window.m[g], window.n[g]);
    if m == 0 || n == 0 {
        return vec![Opt::new(GroupVars::unshared(m, n), cfg)];
    }
    // the torus predecessor of a 1-wide dimension is the group itself
    let cut_rows: Vec<usize> = if cfg.sharing_mode.vertical() && cfg.down_of(g) != g {
        (0..=m / 2).step_by(cfg.p).collect()
    } else {
        vec![0]
    };
    let cut_cols: Vec<usize> = if cfg.sharing_mode.horizontal() && cfg.right_of(g) != g {
        (0..=n).step_by(cfg.q).collect()
    } else {
        vec![0]
    };
    let mut opts: Vec<Opt> = Vec::with_capacity(2 * cut_rows.len() * cut_cols.len());
    for full_rows in [true, false] {
        for &dm_v in &cut_rows {
            for &dn_h in &cut_cols {
                let vars = if full_rows {
                    GroupVars {
                        m_local: m - dm_v,
                        n_local: n - dn_h,
                        dm_h: m,
                        dn_h,
                        dm_v,
                        dn_v: n - dn_h,
                    }
                } else {
                    GroupVars {
                        m_local: m - dm_v,
                        n_local: n - dn_h,
                        dm_h: m - dm_v,
                        dn_h,
                        dm_v,
                        dn_v: n,
                    }
                };
                let opt = Opt::new(vars, cfg);
                if !opts.iter().any(|o| o.signature() == opt.signature()) {
                    opts.push(opt);
                }
            }
        }
    }
    opts
}

#[derive(Clone, Copy)]
struct Range {
    lo: u64,
    hi: u64,
}

impl Range {
    fn of(opts: &[Opt], f: impl Fn(&Opt) -> u64) -> Self {
        let it = opts.iter().map(&f);
        Self {
            lo: it.clone().min().unwrap_or(0),
            hi: it.max().unwrap_or(0),
        }
    }

    fn exact(v: u64) -> Self {
        Self { lo: v, hi: v }
    }
}

struct Search<'a> {
    cfg: &'a EngineConfig,
    opts: Vec<Vec<Opt>>,
    ranges: Vec<[Range; 6]>,
    chosen: Vec<Option<usize>>,
    groups: u64,
    lo_scaled: i128,
    hi_scaled: i128,
    max_load: Option<u64>,
    max_cycles: Option<u64>,
    nodes: u64,
    budget: u64,
}

impl Search<'_> {
    fn range(&self, g: usize, field: usize) -> Range {
        match self.chosen[g] {
            Some(o) => {
                let o = &self.opts[g][o];
                Range::exact([o.local, o.h, o.v, o.local_cyc, o.h_cyc, o.v_cyc][field])
            }
            None => self.ranges[g][field],
        }
    }

    /// Whether group `g`'s constraints can still hold given the assignments so far.
    fn admissible(&self, g: usize) -> bool {
        let (left, up) = (self.cfg.left_of(g), self.cfg.up_of(g));
        let mut load = self.range(g, 0);
        let mut cyc = self.range(g, 3);
        if left != g {
            let (h, hc) = (self.range(left, 1), self.range(left, 4));
            load.lo += h.lo;
            load.hi += h.hi;
            cyc.lo += hc.lo;
            cyc.hi += hc.hi;
        }
        if up != g {
            let (v, vc) = (self.range(up, 2), self.range(up, 5));
            load.lo += v.lo;
            load.hi += v.hi;
            cyc.lo += vc.lo;
            cyc.hi += vc.hi;
        }
        let scaled_lo = (load.lo * self.groups) as i128;
        let scaled_hi = (load.hi * self.groups) as i128;
        if scaled_hi < self.lo_scaled || scaled_lo > self.hi_scaled {
            return false;
        }
        if self.max_load.is_some_and(|cap| load.lo > cap) {
            return false;
        }
        !self.max_cycles.is_some_and(|cap| cyc.lo > cap)
    }

    /// `Some(true)` on success, `Some(false)` when the subtree is exhausted,
    /// `None` once the node budget runs out.
    fn dfs(&mut self, g: usize) -> Option<bool> {
        if g == self.chosen.len() {
            return Some(true);
        }
        let affected = [g, self.cfg.right_of(g), self.cfg.down_of(g)];
        for o in 0..self.opts[g].len() {
            self.nodes += 1;
            if self.nodes > self.budget {
                return None;
            }
            self.chosen[g] = Some(o);
            if affected.iter().all(|&h| self.admissible(h)) && self.dfs(g + 1)? {
                return Some(true);
            }
        }
        self.chosen[g] = None;
        Some(false)
    }
}

fn max_raw_cycles(window: &KernelWindow, cfg: &EngineConfig) -> u64 {
    (0..window.m.len())
        .map(|g| cfg.item_cycles(window.m[g], window.n[g]))
        .max()
        .unwrap_or(0)
}

/// Solves the partition problem for `window` at `margin` with the given limits.
///
/// Returns `None` when no assignment exists or the node budget runs out first.
pub fn solve_partition_with(
    window: &KernelWindow,
    cfg: &EngineConfig,
    margin: u64,
    limits: SolverLimits,
) -> Option<PartitionVars> {
    let groups = cfg.groups();
    assert_eq!(window.m.len(), groups, "window does not match the engine grid");
    let opts: Vec<Vec<Opt>> = (0..groups).map(|g| group_options(window, cfg, g)).collect();
    let ranges = opts
        .iter()
        .map(|o| {
            [
                Range::of(o, |x| x.local),
                Range::of(o, |x| x.h),
                Range::of(o, |x| x.v),
                Range::of(o, |x| x.local_cyc),
                Range::of(o, |x| x.h_cyc),
                Range::of(o, |x| x.v_cyc),
            ]
        })
        .collect();
    let total = window.total() as i128;
    let slack = groups as i128 * margin as i128;
    let mut search = Search {
        cfg,
        opts,
        ranges,
        chosen: vec![None; groups],
        groups: groups as u64,
        lo_scaled: total - slack,
        hi_scaled: total + slack,
        max_load: limits
            .never_worse
            .then(|| (0..groups).map(|g| window.raw_load(g)).max().unwrap_or(0)),
        max_cycles: limits.never_worse.then(|| max_raw_cycles(window, cfg)),
        nodes: 0,
        budget: limits.node_budget,
    };
    if search.dfs(0) != Some(true) {
        return None;
    }
    Some(PartitionVars {
        groups: search
            .chosen
            .iter()
            .enumerate()
            .map(|(g, o)| search.opts[g][o.expect("complete assignment")].vars)
            .collect(),
    })
}

/// Lexicographically smallest assignment satisfying every CLP at `margin`,
/// or `None` if there is none within the default search budget.
pub fn solve_partition(window: &KernelWindow, cfg: &EngineConfig, margin: u64) -> Option<PartitionVars> {
    solve_partition_with(window, cfg, margin, SolverLimits::default())
}

/// Smallest multiple of `P * Q` at which the unshared assignment satisfies
/// the balance constraint.
pub fn no_sharing_margin(window: &KernelWindow, cfg: &EngineConfig) -> u64 {
    let groups = window.m.len() as u64;
    let total = window.total();
    let dev = (0..window.m.len())
        .map(|g| (window.raw_load(g) * groups).abs_diff(total))
        .max()
        .unwrap_or(0);
    let unit = groups * (cfg.p * cfg.q) as u64;
    dev.div_ceil(unit) * (cfg.p * cfg.q) as u64
}

/// Smallest feasible margin among multiples of `P * Q` and the solution there.
///
/// Feasibility is monotone in the margin, so this bisects between 0 and the
/// no-sharing margin, where the unshared assignment always succeeds.
pub fn minimal_margin(
    window: &KernelWindow,
    cfg: &EngineConfig,
    limits: SolverLimits,
) -> (u64, PartitionVars) {
    let unit = (cfg.p * cfg.q) as u64;
    let top = no_sharing_margin(window, cfg) / unit;
    let mut best = (
        top,
        solve_partition_with(window, cfg, top * unit, limits)
            .unwrap_or_else(|| PartitionVars::unshared(window)),
    );
    let (mut lo, mut hi) = (0, top);
    while lo < hi {
        let mid = (lo + hi) / 2;
        match solve_partition_with(window, cfg, mid * unit, limits) {
            Some(vars) => {
                best = (mid, vars);
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    (best.0 * unit, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{validate_partition, SharingMode};

    fn example(mode: SharingMode) -> (KernelWindow, EngineConfig) {
        (
            KernelWindow::from_dims(0, 0, &[(4, 4), (4, 8)]),
            EngineConfig::new(1, 2, 2, 2, mode).unwrap(),
        )
    }

    #[test]
    fn horizontal_example_balances_exactly() {
        let (w, cfg) = example(SharingMode::Horizontal);
        let vars = solve_partition(&w, &cfg, 0).unwrap();
        assert_eq!(vars.groups[0], GroupVars::unshared(4, 4));
        assert_eq!(
            vars.groups[1],
            GroupVars {
                m_local: 4,
                n_local: 6,
                dm_h: 4,
                dn_h: 2,
                dm_v: 0,
                dn_v: 6
            }
        );
        assert_eq!(vars.loads(&cfg), vec![24, 24]);
        validate_partition(&w, &cfg, 0, &vars).unwrap();
    }

    #[test]
    fn no_sharing_needs_margin_eight() {
        let (w, cfg) = example(SharingMode::None);
        assert_eq!(solve_partition(&w, &cfg, 0), None);
        assert_eq!(solve_partition(&w, &cfg, 4), None);
        assert_eq!(solve_partition(&w, &cfg, 8), Some(PartitionVars::unshared(&w)));
        assert_eq!(no_sharing_margin(&w, &cfg), 8);
        assert_eq!(minimal_margin(&w, &cfg, SolverLimits::default()).0, 8);
    }

    #[test]
    fn single_group_is_always_balanced() {
        let w = KernelWindow::from_dims(0, 0, &[(7, 3)]);
        for mode in SharingMode::ALL {
            let cfg = EngineConfig::new(1, 1, 2, 2, mode).unwrap();
            assert_eq!(solve_partition(&w, &cfg, 0), Some(PartitionVars::unshared(&w)));
        }
    }

    #[test]
    fn vertical_sharing_only_cuts_rows() {
        let w = KernelWindow::from_dims(0, 0, &[(8, 4), (0, 0)]);
        let cfg = EngineConfig::new(2, 1, 2, 2, SharingMode::Vertical).unwrap();
        let (margin, vars) = minimal_margin(&w, &cfg, SolverLimits::default());
        assert_eq!(margin, 0);
        assert_eq!(vars.loads(&cfg), vec![16, 16]);
        assert_eq!(vars.groups[0].dm_v, 4);
        assert_eq!(vars.groups[0].dn_h, 0);
        validate_partition(&w, &cfg, margin, &vars).unwrap();
    }

    #[test]
    fn exhausted_budget_reports_no_solution() {
        let (w, cfg) = example(SharingMode::Horizontal);
        let limits = SolverLimits {
            node_budget: 1,
            never_worse: false,
        };
        assert_eq!(solve_partition_with(&w, &cfg, 0, limits), None);
    }
}
