//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the report is always shown.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use common::*;
use csb_core::csb::{csr_index_count, BlockShape, CsbMatrix};
use csb_core::dataflow::{
    build_cell_graph, compile_macro, execute_macro, CellGraph, CellKind, CellState, CellWeights,
};
use csb_core::pruner::{
    progressive_prune, project_csb_masked, LossTarget, PruneConfig, SgdConfig, SyntheticTask, TaskConfig,
};
use csb_core::scheduler::{
    compile_micro, compile_micro_detailed, validate_partition, EngineConfig, KernelWindow, MicroProgram,
    SharingMode,
};
use csb_core::sim::{simulate_mvm, simulate_rnn};
use csb_core::suite::{imbalance_suite, pruned_matrix, SuiteConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'a str, Box<dyn FnOnce() -> Outcome + 'a>);

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let out = f();
    let el = t.elapsed();
    match out {
        Ok(msg) if el <= limit => Ok(format!("{msg}, {:.2?}", el)),
        Ok(msg) => Err(format!("{msg}, but took {:.2?} (limit {:?})", el, limit)),
        Err(msg) => Err(format!("{msg}, {:.2?}", el)),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mvm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = *[8usize, 16, 32].choose(&mut rng).unwrap();
        let rows = b * rng.random_range(1..=256 / b);
        let cols = b * rng.random_range(1..=256 / b);
        let w = random_pattern(&mut rng, rows, cols, b);
        let csb = CsbMatrix::encode(&to_dense(&w), BlockShape::square(b).unwrap()).map_err(|e| e.to_string())?;
        let x = vector(&mut rng, cols);
        let y = csb.mvm(&x).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(&y, &matvec(&w, &x)));
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:e}"))?;
    Ok(format!("1000 matrices, max relative error {worst:.1e}"))
}

fn projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0;
    for n in 0..200 {
        let b = *[4usize, 8, 16].choose(&mut rng).unwrap();
        let rows = b * rng.random_range(1..=8);
        let cols = b * rng.random_range(1..=8);
        let w = gaussian(&mut rng, rows, cols);
        let shape = BlockShape::square(b).unwrap();
        for pr in [0.5, 0.75, 0.9375] {
            let (z, mask) = project_csb_masked(&to_dense(&w), shape, pr);
            let ctx = || format!("matrix {n} ({rows}x{cols}, block {b}) at {pr}");
            ensure(from_dense(&z) == projection_oracle(&w, b, pr), || format!("{}: differs from oracle", ctx()))?;
            let p = 1.0 - (1.0 - pr).sqrt();
            let (kr, kc) = ((p * rows as f64).floor() as usize, (p * cols as f64).floor() as usize);
            ensure(
                mask.pruned_rows.iter().all(|f| f.iter().filter(|&&x| x).count() == kr)
                    && mask.pruned_cols.iter().all(|f| f.iter().filter(|&&x| x).count() == kc),
                || format!("{}: pruned segment counts differ from {kr}/{kc}", ctx()),
            )?;
            let csb = CsbMatrix::encode(&z, shape).map_err(|e| format!("{}: {e}", ctx()))?;
            ensure(csb.decode() == z, || format!("{}: encode is lossy", ctx()))?;
            let (again, _) = project_csb_masked(&z, shape, pr);
            ensure(again == z, || format!("{}: not idempotent", ctx()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} projections match the oracle"))
}

fn admm() -> Outcome {
    let block = BlockShape::new(8, 8).unwrap();
    let task = SyntheticTask::<f64>::generate(
        &TaskConfig {
            rows: 64,
            cols: 64,
            train_samples: 512,
            val_samples: 256,
            noise_sigma: 0.01,
            teacher_prune_fraction: Some(0.75),
            teacher_block: Some(block),
        },
        11,
    )
    .map_err(|e| e.to_string())?;
    let cfg = PruneConfig {
        block_shape: block,
        init_prune_fraction: 0.5,
        init_step: 0.1,
        target_loss: LossTarget::BaselineRatio(1.1),
        epochs_per_round: 60,
        rho: 1.0,
        sgd: SgdConfig {
            learning_rate: 0.05,
            batch_size: 64,
            steps_per_epoch: 8,
        },
        max_fraction: 0.99,
        baseline_epochs: 300,
        max_rounds: 64,
    };
    let report = progressive_prune(&task, &cfg).map_err(|e| e.to_string())?;
    let s = &report.summary;
    let msg = format!(
        "fraction {:.3} after {} rounds, loss {:.3e} vs baseline {:.3e}",
        s.final_fraction,
        s.rounds.len(),
        s.final_loss,
        s.baseline_loss
    );
    ensure(s.final_fraction >= 0.7 && s.final_loss <= 1.1 * s.baseline_loss, || msg.clone())?;
    Ok(msg)
}

/// Counts how often each kernel cell is touched by the program's items.
fn exact_cover(prog: &MicroProgram, csb: &CsbMatrix<f64>) -> Result<(), String> {
    let mut hits: HashMap<(usize, usize, u16, u16), u32> = HashMap::new();
    for plan in &prog.iterations {
        for items in &plan.groups {
            for it in items {
                for &r in &it.row_idx {
                    for &c in &it.col_idx {
                        *hits.entry((it.origin.0, it.origin.1, r, c)).or_default() += 1;
                    }
                }
            }
        }
    }
    let (gr, gc) = csb.grid();
    let mut cells = 0;
    for br in 0..gr {
        for bc in 0..gc {
            let blk = csb.block(br, bc);
            for &r in blk.row_idx {
                for &c in blk.col_idx {
                    cells += 1;
                    let h = hits.get(&(br, bc, r, c)).copied().unwrap_or(0);
                    ensure(h == 1, || format!("cell ({br},{bc},{r},{c}) covered {h} times"))?;
                }
            }
        }
    }
    ensure(cells == hits.len(), || format!("{} cells outside the kernels", hits.len() - cells))
}

/// Smallest multiple of `P*Q` bounding every unshared load's distance to the average.
fn unshared_margin(w: &KernelWindow, cfg: &EngineConfig) -> u64 {
    let g = w.m.len() as u64;
    let loads: Vec<u64> = (0..w.m.len()).map(|k| (w.m[k] * w.n[k]) as u64).collect();
    let total: u64 = loads.iter().sum();
    let pq = (cfg.p * cfg.q) as u64;
    (0..)
        .map(|t| t * pq)
        .find(|&m| loads.iter().all(|&l| (l * g).abs_diff(total) <= m * g))
        .unwrap()
}

fn scheduler_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let dims = [1usize, 2, 4];
    let mut shared = 0;
    for n in 0..500 {
        let (k, l, p, q) = (
            *dims.choose(&mut rng).unwrap(),
            *dims.choose(&mut rng).unwrap(),
            *dims.choose(&mut rng).unwrap(),
            *dims.choose(&mut rng).unwrap(),
        );
        let mode = SharingMode::ALL[n % 4];
        let cfg = EngineConfig::new(k, l, p, q, mode).map_err(|e| e.to_string())?;
        let b = *[4usize, 8, 16].choose(&mut rng).unwrap();
        let w = random_pattern(&mut rng, k * b, l * b, b);
        let csb = CsbMatrix::encode(&to_dense(&w), BlockShape::square(b).unwrap()).map_err(|e| e.to_string())?;
        let ctx = || format!("iteration {n} ({k}x{l} grid, {p}x{q} PEs, {mode}, block {b})");
        let (prog, sols) = compile_micro_detailed(&csb, &cfg).map_err(|e| format!("{}: {e}", ctx()))?;
        let sol = &sols[0];
        validate_partition(&sol.window, &cfg, sol.margin, &sol.vars)
            .map_err(|v| format!("{}: {v:?}", ctx()))?;
        let bound = unshared_margin(&sol.window, &cfg);
        ensure(sol.margin <= bound, || format!("{}: margin {} > {bound}", ctx(), sol.margin))?;
        if sol.margin < bound {
            shared += 1;
        }
        exact_cover(&prog, &csb).map_err(|e| format!("{}: {e}", ctx()))?;
        let x = vector(&mut rng, l * b);
        let res = simulate_mvm(&prog, &csb, &x, &cfg).map_err(|e| format!("{}: {e}", ctx()))?;
        let err = rel_err(&res.output, &matvec(&w, &x));
        ensure(err <= 1e-9, || format!("{}: output error {err:e}", ctx()))?;
    }
    Ok(format!("500 iterations valid, {shared} tightened below the unshared margin"))
}

fn worked_example() -> Outcome {
    let w: Rows = (0..8)
        .map(|r| {
            (0..16)
                .map(|c| if r < 4 && !(4..8).contains(&c) { 1.0 + (r + c) as f64 / 16.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let csb = CsbMatrix::encode(&to_dense(&w), BlockShape::new(8, 8).unwrap()).map_err(|e| e.to_string())?;
    let h = EngineConfig::new(1, 2, 2, 2, SharingMode::Horizontal).unwrap();
    let x: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
    let (prog, sols) = compile_micro_detailed(&csb, &h).map_err(|e| e.to_string())?;
    let loads = sols[0].vars.loads(&h);
    ensure(loads == vec![24, 24], || format!("loads {loads:?}"))?;
    let shared = simulate_mvm(&prog, &csb, &x, &h).map_err(|e| e.to_string())?;
    let none = h.with_mode(SharingMode::None);
    let plain = simulate_mvm(&compile_micro(&csb, &none).map_err(|e| e.to_string())?, &csb, &x, &none)
        .map_err(|e| e.to_string())?;
    // 48 MACs on 8 PEs: 6 cycles balanced, 8 when the 4x8 kernel runs alone
    let ok = shared.trace[0].group_cycles == vec![6, 6]
        && shared.stats.total_cycles == 6
        && shared.utilization == 1.0
        && plain.trace[0].group_cycles == vec![4, 8]
        && plain.stats.total_cycles == 8
        && plain.utilization == 48.0 / (8.0 * 8.0)
        && rel_err(&shared.output, &matvec(&w, &x)) <= 1e-12;
    let msg = format!(
        "loads {loads:?}, cycles {:?} -> {} (util {}), unshared {:?} -> {} (util {})",
        shared.trace[0].group_cycles,
        shared.stats.total_cycles,
        shared.utilization,
        plain.trace[0].group_cycles,
        plain.stats.total_cycles,
        plain.utilization
    );
    ensure(ok, || msg.clone())?;
    Ok(msg)
}

fn utilization_trend() -> Outcome {
    let suite = imbalance_suite::<f64>(&SuiteConfig {
        count: 50,
        rows: 256,
        cols: 256,
        block: 32,
        align: 4,
        seed: 7,
    });
    let base = EngineConfig::new(4, 4, 4, 4, SharingMode::None).unwrap();
    let mut sums = [0.0; 4];
    let mut regressions = Vec::new();
    for m in &suite {
        let x = vec![1.0; m.csb.cols()];
        let mut cycles = [0u64; 4];
        for (i, mode) in SharingMode::ALL.into_iter().enumerate() {
            let cfg = base.with_mode(mode);
            let prog = compile_micro(&m.csb, &cfg).map_err(|e| format!("{}: {e}", m.id))?;
            let res = simulate_mvm(&prog, &m.csb, &x, &cfg).map_err(|e| format!("{}: {e}", m.id))?;
            sums[i] += res.utilization;
            cycles[i] = res.stats.total_cycles;
        }
        if cycles[3] > cycles[0] {
            regressions.push(m.id.clone());
        }
    }
    let mean = sums.map(|s| s / suite.len() as f64);
    let msg = format!(
        "mean utilization none {:.3}, vertical {:.3}, horizontal {:.3}, two_d {:.3}; two_d slower on {:?}",
        mean[0], mean[1], mean[2], mean[3], regressions
    );
    let ok = mean[0] < mean[1].min(mean[2])
        && mean[1].max(mean[2]) < mean[3]
        && mean[3] >= 0.85
        && mean[0] <= 0.60
        && regressions.is_empty();
    ensure(ok, || msg.clone())?;
    Ok(msg)
}

fn nio_trend() -> Outcome {
    let (mut n16, mut n32) = (0.0, 0.0);
    let count = 50;
    for s in 0..count {
        // a 32-block pattern restricted to 16-blocks is still a cross product,
        // so both encodings hold the same nonzeros
        let big = pruned_matrix::<f64>(256, 256, 32, 0.75, s);
        let dense = big.decode();
        let small = CsbMatrix::encode(&dense, BlockShape::square(16).unwrap()).map_err(|e| e.to_string())?;
        ensure(small.nnz() == big.nnz(), || format!("instance {s}: nnz differs"))?;
        n32 += big.nio().map_err(|e| e.to_string())?;
        n16 += small.nio().map_err(|e| e.to_string())?;
        let csr = csr_index_count(&dense);
        ensure(csr > big.nnz(), || format!("instance {s}: CSR indices {csr} <= nnz {}", big.nnz()))?;
    }
    let (n16, n32) = (n16 / count as f64, n32 / count as f64);
    ensure(n32 < n16, || format!("mean NIO block 32 {n32:.4} >= block 16 {n16:.4}"))?;
    Ok(format!("mean NIO block 16 {n16:.4}, block 32 {n32:.4}; CSR above nnz on all {count}"))
}

struct Dense {
    w: HashMap<String, Rows>,
    b: HashMap<String, Vec<f64>>,
}

impl Dense {
    fn new(g: &CellGraph, weights: &CellWeights<f64>) -> Self {
        let w = g
            .weight_slots
            .iter()
            .zip(&weights.weights)
            .map(|(s, m)| {
                let d = from_dense(&m.decode());
                let t: Rows = d[..s.rows].iter().map(|r| r[..s.cols].to_vec()).collect();
                (s.name.clone(), t)
            })
            .collect();
        let b = g
            .bias_slots
            .iter()
            .zip(&weights.biases)
            .map(|(s, v)| (s.name.clone(), v.clone()))
            .collect();
        Self { w, b }
    }

    /// `W_tag x + U_tag h + b_tag`, elementwise in that order.
    fn pre(&self, tag: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let wx = matvec(&self.w[&format!("W_{tag}")], x);
        let uh = matvec(&self.w[&format!("U_{tag}")], h);
        let b = &self.b[&format!("b_{tag}")];
        (0..b.len()).map(|i| wx[i] + uh[i] + b[i]).collect()
    }
}

fn gru_step(d: &Dense, x: &[f64], h: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = d.pre("z", x, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = d.pre("r", x, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = d.pre("h", x, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

fn lstm_step(d: &Dense, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let i: Vec<f64> = d.pre("i", x, h).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = d.pre("f", x, h).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = d.pre("g", x, h).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = d.pre("o", x, h).into_iter().map(sigmoid).collect();
    let c2: Vec<f64> = (0..h.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let h2 = (0..h.len()).map(|k| o[k] * c2[k].tanh()).collect();
    (h2, c2)
}

fn rnn_equivalence() -> Outcome {
    let shape = BlockShape::square(16).unwrap();
    let cfg = EngineConfig::new(2, 2, 4, 4, SharingMode::TwoD).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut sim_err, mut oracle_err) = (0.0f64, 0.0f64);
    let mut utils = Vec::new();
    for cell in [CellKind::Gru, CellKind::Lstm] {
        for hidden in [32usize, 64] {
            let input = 40;
            let g = build_cell_graph(cell, input, hidden).map_err(|e| e.to_string())?;
            let weights = CellWeights::<f64>::random(&g, shape, Some(0.75), 1.0 / (hidden as f64).sqrt(), rng.random())
                .map_err(|e| e.to_string())?;
            let prog = compile_macro(&g, &cfg, shape).map_err(|e| e.to_string())?;
            let micro = weights
                .weights
                .iter()
                .map(|w| compile_micro(w, &cfg))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let xs: Vec<Vec<f64>> = (0..32).map(|_| vector(&mut rng, input)).collect();
            let init = CellState::zeros(&g);
            let golden = execute_macro(&prog, &weights, &xs, &init).map_err(|e| e.to_string())?;
            let sim = simulate_rnn(&prog, &micro, &weights, &xs, &init, &cfg).map_err(|e| e.to_string())?;
            utils.push(sim.utilization);

            let dense = Dense::new(&g, &weights);
            let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
            for (t, x) in xs.iter().enumerate() {
                match cell {
                    CellKind::Gru => h = gru_step(&dense, x, &h),
                    CellKind::Lstm => (h, c) = lstm_step(&dense, x, &h, &c),
                }
                sim_err = sim_err.max(rel_err(&sim.output.h_seq[t], &golden.h_seq[t]));
                oracle_err = oracle_err.max(rel_err(&golden.h_seq[t], &h));
            }
            if let Some(gc) = &golden.final_state.c {
                sim_err = sim_err.max(rel_err(sim.output.final_state.c.as_ref().unwrap(), gc));
                oracle_err = oracle_err.max(rel_err(gc, &c));
            }
        }
    }
    let msg = format!("sim vs golden {sim_err:.1e}, golden vs oracle {oracle_err:.1e}, utilization {utils:.3?}");
    ensure(sim_err <= 1e-9 && oracle_err <= 1e-12, || msg.clone())?;
    Ok(msg)
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria: Vec<Criterion> = vec![
        ("csb mvm matches dense mvm", Box::new(|| timed(Duration::from_secs(10), mvm_oracle))),
        ("projection counts, lossless encode, idempotence", Box::new(|| timed(min(60), projection))),
        ("admm progressive pruning at desk scale", Box::new(|| timed(min(5), admm))),
        ("scheduler soundness on random iterations", Box::new(|| timed(min(1), scheduler_soundness))),
        ("two-group worked example", Box::new(|| timed(min(60), worked_example))),
        ("utilization trend over sharing modes", Box::new(|| timed(min(2), utilization_trend))),
        ("index overhead trend", Box::new(|| timed(min(60), nio_trend))),
        ("gru/lstm engine run matches golden model", Box::new(|| timed(min(60), rnn_equivalence))),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.into_iter().enumerate() {
        match run() {
            Ok(msg) => println!("PASS {} {name}: {msg}", n + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg}", n + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
