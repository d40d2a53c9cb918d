use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use csb_core::csb::{read_file, write_file, CsbMatrix};
use csb_core::dataflow::{build_cell_graph, compile_macro, CellKind};
use csb_core::pruner::{progressive_prune, SyntheticTask};
use csb_core::scheduler::{compile_micro, MicroProgram};
use csb_core::sim::{simulate_mvm, utilization_report, ReportRow};
use csb_core::suite::{imbalance_suite, pruned_matrix, SuiteConfig};
use csb_core::{BlockShape, EngineConfig, SharingMode};
use rayon::prelude::*;

use crate::config::{RunConfig, SweepSource};
use crate::error::CliError;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or stdout when there is none.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => write_bytes(p, bytes),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn prune(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let task_cfg = cfg
        .task
        .as_ref()
        .ok_or_else(|| CliError::Config("prune needs a \"task\" section".into()))?;
    let prune_cfg = cfg
        .prune
        .as_ref()
        .ok_or_else(|| CliError::Config("prune needs a \"prune\" section".into()))?;
    let task = SyntheticTask::<f64>::generate(task_cfg, cfg.seed)?;
    let report = progressive_prune(&task, prune_cfg)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    write_bytes(&dir.join("prune_report.json"), &json(&report.summary))?;
    let model = dir.join("model.csb");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_file(&model, &report.z)?;
    let s = &report.summary;
    println!(
        "fraction {:.4} ({:.2}x) after {} rounds, loss {:.4e} (baseline {:.4e}) -> {}",
        s.final_fraction,
        s.compression_ratio,
        s.rounds.len(),
        s.final_loss,
        s.baseline_loss,
        model.display()
    );
    Ok(())
}

pub fn compile_model(model: &Path, engine: &EngineConfig, out: Option<&Path>) -> Result<(), CliError> {
    let csb: CsbMatrix<f64> = read_file(model)?;
    let prog = compile_micro(&csb, engine)?;
    emit(out, prog.to_text().as_bytes())
}

pub fn compile_cell(
    cell: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    block: usize,
    engine: &EngineConfig,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let shape = BlockShape::square(block).map_err(|e| CliError::Config(e.to_string()))?;
    let graph = build_cell_graph(cell, input_dim, hidden_dim).map_err(|e| CliError::Config(e.to_string()))?;
    let prog = compile_macro(&graph, engine, shape).map_err(|e| CliError::Config(e.to_string()))?;
    emit(out, prog.to_text().as_bytes())
}

pub struct SimulateArgs<'a> {
    pub model: &'a Path,
    pub program: &'a Path,
    pub input: Option<&'a Path>,
    pub csv: Option<&'a Path>,
    pub trace: Option<&'a Path>,
    pub output: Option<&'a Path>,
    pub verify: bool,
}

fn report_row(id: &str, csb: &CsbMatrix<f64>, mode: SharingMode, cycles: u64, utilization: f64) -> Result<ReportRow, CliError> {
    Ok(ReportRow {
        matrix_id: id.to_string(),
        rows: csb.rows(),
        cols: csb.cols(),
        block: csb.block_shape().block_rows,
        mode,
        prune_ratio: 1.0 - csb.nnz() as f64 / (csb.rows() * csb.cols()) as f64,
        nnz: csb.nnz(),
        cycles,
        utilization,
        nio: csb.nio().map_err(|e| CliError::Format(e.to_string()))?,
    })
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let csb: CsbMatrix<f64> = read_file(args.model)?;
    let text = fs::read_to_string(args.program).map_err(|e| CliError::io(args.program, e))?;
    let prog = MicroProgram::parse(&text)?;
    let x: Vec<f64> = match args.input {
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&raw).map_err(|e| CliError::Format(format!("{}: {e}", p.display())))?
        }
        None => vec![1.0; csb.cols()],
    };
    let res = simulate_mvm(&prog, &csb, &x, &prog.config)?;
    if args.verify {
        let want = csb.mvm(&x).map_err(|e| CliError::Config(e.to_string()))?;
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if let Some((i, (a, b))) = res
            .output
            .iter()
            .zip(&want)
            .enumerate()
            .find(|(_, (a, b))| (*a - *b).abs() > 1e-9 * scale)
        {
            return Err(CliError::Verify(format!("output {i}: engine {a}, reference {b}")));
        }
    }
    if let Some(p) = args.trace {
        let mut lines = Vec::new();
        for t in &res.trace {
            serde_json::to_writer(&mut lines, t).expect("trace serializes");
            lines.push(b'\n');
        }
        write_bytes(p, &lines)?;
    }
    if let Some(p) = args.output {
        write_bytes(p, &json(&res.output))?;
    }
    let id = args
        .model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let row = report_row(&id, &csb, prog.config.sharing_mode, res.stats.total_cycles, res.utilization)?;
    emit(args.csv, &csv_bytes(&[row])?)
}

fn sweep_matrices(cfg: &RunConfig, block: usize) -> Vec<(String, CsbMatrix<f64>)> {
    let s = &cfg.sweep;
    match s.source {
        SweepSource::Imbalance => imbalance_suite::<f64>(&SuiteConfig {
            count: s.seeds,
            rows: s.rows,
            cols: s.cols,
            block,
            align: block / 8,
            seed: cfg.seed,
        })
        .into_iter()
        .map(|m| (format!("{}-b{block}", m.id), m.csb))
        .collect(),
        SweepSource::Pruned => (0..s.seeds)
            .map(|i| {
                let seed = cfg.seed.wrapping_add(i as u64);
                (
                    format!("pruned-{i}-b{block}"),
                    pruned_matrix::<f64>(s.rows, s.cols, block, s.prune_fraction, seed),
                )
            })
            .collect(),
    }
}

/// Runs every (block size, matrix, mode) combination; rows come back in that
/// order regardless of `jobs`.
pub fn sweep_rows(cfg: &RunConfig, jobs: usize) -> Result<Vec<ReportRow>, CliError> {
    let work: Vec<(String, CsbMatrix<f64>)> = cfg
        .sweep
        .block_sizes
        .iter()
        .flat_map(|&b| sweep_matrices(cfg, b))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let per_matrix: Vec<Result<Vec<ReportRow>, CliError>> = pool.install(|| {
        work.par_iter()
            .map(|(id, csb)| {
                let x = vec![1.0; csb.cols()];
                cfg.sweep
                    .modes
                    .iter()
                    .map(|&mode| {
                        let engine = cfg.engine.with_mode(mode);
                        let prog = compile_micro(csb, &engine)?;
                        let res = simulate_mvm(&prog, csb, &x, &engine)?;
                        report_row(id, csb, mode, res.stats.total_cycles, res.utilization)
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_matrix {
        rows.extend(r?);
    }
    Ok(rows)
}

fn print_averages(rows: Vec<ReportRow>) -> Result<csb_core::sim::UtilizationReport, CliError> {
    let report = utilization_report(rows).ok_or_else(|| CliError::Format("no rows".into()))?;
    for a in &report.averages {
        eprintln!(
            "{:<10} runs {:>5}  mean utilization {:.4}  mean cycles {:.1}",
            a.mode.as_str(),
            a.runs,
            a.mean_utilization,
            a.mean_cycles
        );
    }
    Ok(report)
}

pub fn sweep(cfg: &RunConfig, jobs: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let rows = sweep_rows(cfg, jobs)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
    write_bytes(&path, &csv_bytes(&rows)?)?;
    eprintln!("{} rows -> {}", rows.len(), path.display());
    print_averages(rows)?;
    Ok(())
}

pub fn report(csv_path: &Path, json_out: Option<&Path>) -> Result<(), CliError> {
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::io(csv_path, e),
        _ => CliError::Format(format!("{}: {e}", csv_path.display())),
    })?;
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<ReportRow>, _>>()
        .map_err(|e| CliError::Format(format!("{}: {e}", csv_path.display())))?;
    let report = print_averages(rows)?;
    if let Some(p) = json_out {
        write_bytes(p, &json(&report))?;
    }
    Ok(())
}
