use serde::{Deserialize, Serialize};

use crate::scheduler::SharingMode;

/// One simulated (matrix, block size, mode) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub matrix_id: String,
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
    pub mode: SharingMode,
    pub prune_ratio: f64,
    pub nnz: usize,
    pub cycles: u64,
    pub utilization: f64,
    pub nio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeAverage {
    pub mode: SharingMode,
    pub runs: usize,
    pub mean_utilization: f64,
    pub mean_cycles: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtilizationReport {
    pub rows: Vec<ReportRow>,
    /// Arithmetic means per sharing mode, in mode order; modes without rows
    /// are left out.
    pub averages: Vec<ModeAverage>,
}

impl UtilizationReport {
    pub fn mean_utilization(&self, mode: SharingMode) -> Option<f64> {
        self.averages
            .iter()
            .find(|a| a.mode == mode)
            .map(|a| a.mean_utilization)
    }
}

/// Collects rows and per-mode averages; `None` for an empty suite.
pub fn utilization_report(rows: Vec<ReportRow>) -> Option<UtilizationReport> {
    if rows.is_empty() {
        return None;
    }
    let averages = SharingMode::ALL
        .into_iter()
        .filter_map(|mode| {
            let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.mode == mode).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            Some(ModeAverage {
                mode,
                runs: sel.len(),
                mean_utilization: sel.iter().map(|r| r.utilization).sum::<f64>() / n,
                mean_cycles: sel.iter().map(|r| r.cycles as f64).sum::<f64>() / n,
            })
        })
        .collect();
    Some(UtilizationReport { rows, averages })
}
