//! Post-hoc CLP checker, written against the constraint definitions rather
//! than the solver's search space.

use num_rational::Ratio;
use num_traits::Signed;
use thiserror::Error;

use super::{EngineConfig, KernelWindow, PartitionVars};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClpViolation {
    #[error("{vars} group assignments for a {groups}-group window")]
    GroupCount { vars: usize, groups: usize },
    #[error("group {0}: horizontal share exceeds the kernel (CLP1)")]
    Clp1(usize),
    #[error("group {0}: vertical share exceeds its bounds (CLP2)")]
    Clp2(usize),
    #[error("group {0}: neither full-row nor full-width split (CLP3/CLP4)")]
    Branch(usize),
    #[error("group {0}: local dims disagree with the cuts (CLP5)")]
    Clp5(usize),
    #[error("group {0}: cut not aligned to the PE array (CLP6)")]
    Clp6(usize),
    #[error("group {0}: partitions do not tile the kernel")]
    Tiling(usize),
    #[error("group {0}: shares along a path the engine does not have")]
    Path(usize),
    #[error("group {group}: load {load} deviates from average {avg} by more than {margin} (CLP7)")]
    Clp7 {
        group: usize,
        load: u64,
        avg: String,
        margin: u64,
    },
}

pub fn validate_partition(
    window: &KernelWindow,
    cfg: &EngineConfig,
    margin: u64,
    vars: &PartitionVars,
) -> Result<(), ClpViolation> {
    let groups = cfg.k * cfg.l;
    if vars.groups.len() != groups || window.m.len() != groups || window.n.len() != groups {
        return Err(ClpViolation::GroupCount {
            vars: vars.groups.len(),
            groups,
        });
    }
    for (g, v) in vars.groups.iter().enumerate() {
        let (m, n) = (window.m[g], window.n[g]);
        if v.dm_h > m || v.dn_h > n {
            return Err(ClpViolation::Clp1(g));
        }
        if v.dm_v > m / 2 || v.dn_v > n {
            return Err(ClpViolation::Clp2(g));
        }
        let clp3 = v.dm_h == m && v.dn_v + v.dn_h == n;
        let clp4 = v.dn_v == n && v.dm_h + v.dm_v == m;
        if !(clp3 || clp4) {
            return Err(ClpViolation::Branch(g));
        }
        if v.m_local + v.dm_v != m || v.n_local + v.dn_h != n {
            return Err(ClpViolation::Clp5(g));
        }
        if v.dm_v % cfg.p != 0 || v.dn_h % cfg.q != 0 {
            return Err(ClpViolation::Clp6(g));
        }
        if v.m_local * v.n_local + v.dm_h * v.dn_h + v.dm_v * v.dn_v != m * n {
            return Err(ClpViolation::Tiling(g));
        }
        let gives_h = v.dm_h * v.dn_h > 0;
        let gives_v = v.dm_v * v.dn_v > 0;
        if (gives_h && (!cfg.sharing_mode.horizontal() || cfg.l == 1))
            || (gives_v && (!cfg.sharing_mode.vertical() || cfg.k == 1))
        {
            return Err(ClpViolation::Path(g));
        }
    }

    let total: u64 = window.m.iter().zip(&window.n).map(|(&m, &n)| (m * n) as u64).sum();
    let avg = Ratio::new(total as i128, groups as i128);
    for k in 0..cfg.k {
        for l in 0..cfg.l {
            let g = k * cfg.l + l;
            let left = &vars.groups[k * cfg.l + (l + cfg.l - 1) % cfg.l];
            let up = &vars.groups[((k + cfg.k - 1) % cfg.k) * cfg.l + l];
            let own = &vars.groups[g];
            let load = own.m_local * own.n_local + left.dm_h * left.dn_h + up.dm_v * up.dn_v;
            let dev = Ratio::from_integer(load as i128) - avg;
            if dev.abs() > Ratio::from_integer(margin as i128) {
                return Err(ClpViolation::Clp7 {
                    group: g,
                    load: load as u64,
                    avg: avg.to_string(),
                    margin,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{GroupVars, SharingMode};

    fn setup() -> (KernelWindow, EngineConfig) {
        (
            KernelWindow::from_dims(0, 0, &[(4, 4), (4, 8)]),
            EngineConfig::new(1, 2, 2, 2, SharingMode::Horizontal).unwrap(),
        )
    }

    #[test]
    fn hand_solved_split_passes() {
        let (w, cfg) = setup();
        let vars = PartitionVars {
            groups: vec![
                GroupVars::unshared(4, 4),
                GroupVars {
                    m_local: 4,
                    n_local: 6,
                    dm_h: 4,
                    dn_h: 2,
                    dm_v: 0,
                    dn_v: 6,
                },
            ],
        };
        assert_eq!(validate_partition(&w, &cfg, 0, &vars), Ok(()));
    }

    #[test]
    fn each_violation_is_named() {
        let (w, cfg) = setup();
        let base = PartitionVars::unshared(&w);
        assert!(matches!(
            validate_partition(&w, &cfg, 0, &base),
            Err(ClpViolation::Clp7 { load: 16, .. })
        ));
        assert_eq!(validate_partition(&w, &cfg, 8, &base), Ok(()));

        let with = |g: GroupVars| PartitionVars {
            groups: vec![GroupVars::unshared(4, 4), g],
        };
        let odd = GroupVars {
            m_local: 4,
            n_local: 7,
            dm_h: 4,
            dn_h: 1,
            dm_v: 0,
            dn_v: 7,
        };
        assert_eq!(validate_partition(&w, &cfg, 100, &with(odd)), Err(ClpViolation::Clp6(1)));
        let neither = GroupVars {
            dm_h: 3,
            ..GroupVars::unshared(4, 8)
        };
        assert_eq!(validate_partition(&w, &cfg, 100, &with(neither)), Err(ClpViolation::Branch(1)));
        let vertical = GroupVars {
            m_local: 2,
            n_local: 8,
            dm_h: 2,
            dn_h: 0,
            dm_v: 2,
            dn_v: 8,
        };
        assert_eq!(validate_partition(&w, &cfg, 100, &with(vertical)), Err(ClpViolation::Path(1)));
        let too_deep = GroupVars {
            m_local: 1,
            dm_v: 3,
            ..GroupVars::unshared(4, 8)
        };
        assert_eq!(validate_partition(&w, &cfg, 100, &with(too_deep)), Err(ClpViolation::Clp2(1)));
        let bad_local = GroupVars {
            n_local: 5,
            ..GroupVars::unshared(4, 8)
        };
        assert_eq!(validate_partition(&w, &cfg, 100, &with(bad_local)), Err(ClpViolation::Clp5(1)));
    }
}
