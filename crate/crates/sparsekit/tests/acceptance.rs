//! Acceptance suite: every release gate in one sequential run.
//!
//! The criteria run in a single test so the timing comparison is never
//! distorted by concurrent test threads. One PASS/FAIL line is printed per
//! criterion (visible with `cargo test --test acceptance -- --nocapture`).

use sparsekit::cli::{
    cmd_convert, cmd_energy_sweep, cmd_train_demo, ConvertConfig, EnergySweepConfig,
    TrainDemoConfig,
};
use sparsekit::dispatch::{convert_lossless, OutputFormat, PathOutcome, Registry};
use sparsekit::kernels::{dense_gemm_tiled, nmg_spmm, time_gemm, GemmTiling};
use sparsekit::matrix::{energy, Axis, CsrMatrix, DenseMatrix, LayoutTag, Matrix};
use sparsekit::nmg::{self, NmgFormat};
use sparsekit::sparsify::{apply, SparsifierSpec};
use sparsekit::train::{
    finetune, finite_difference_check, prune_model, synthetic_regression, Mlp, MlpConfig,
    PruneScope, TrainingLog,
};
use sparsekit::verify;
use std::time::Instant;

type CriterionResult = Result<String, String>;

fn bench_threads() -> usize {
    std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
}

/// 1. nmg_spmm and csr_spmm match the dense oracle on >= 50 randomized
/// cases within 1e-4 relative error in single precision, in under 2 min.
fn criterion_1_kernel_correctness() -> CriterionResult {
    let t0 = Instant::now();
    let result = verify::suite_kernel_oracle(50, 20260810);
    let elapsed = t0.elapsed().as_secs_f64();
    if !result.passed {
        return Err(result.details);
    }
    if elapsed >= 120.0 {
        return Err(format!("suite took {elapsed:.1}s, budget is 120s"));
    }
    Ok(format!("{} in {elapsed:.1}s", result.details))
}

/// 2. On >= 200 random small chunks, greedy never beats the exhaustive
/// oracle, exchange never loses to greedy, and the mean greedy/optimal
/// ratio stays above the 0.95 regression floor.
fn criterion_2_conversion_optimality() -> CriterionResult {
    let result = verify::suite_greedy_vs_oracle(200, 31337);
    if result.passed {
        Ok(result.details)
    } else {
        Err(result.details)
    }
}

/// 3. On 100 seeded Gaussian 768x3072 matrices at 75% sparsity (n=1, m=4):
/// mean energies keep the structure ordering and the n:m vs n:m:g(g=16)
/// gap stays within 0.05.
fn criterion_3_energy_ordering() -> CriterionResult {
    let trials = 100u64;
    let (rows, cols) = (768, 3072);
    let specs = [
        SparsifierSpec::ScalarFraction { fraction: 0.75 },
        SparsifierSpec::PerBlockFraction {
            n: 1,
            m: 4,
            axis: Axis::Cols,
        },
        SparsifierSpec::GroupedNm {
            n: 1,
            m: 4,
            g: 16,
            sparse_dim: Axis::Cols,
            group_dim: Axis::Rows,
        },
        SparsifierSpec::GroupedNm {
            n: 1,
            m: 4,
            g: 1,
            sparse_dim: Axis::Cols,
            group_dim: Axis::Rows,
        },
        SparsifierSpec::BlockwiseFraction {
            fraction: 0.75,
            block_rows: 4,
            block_cols: 4,
        },
    ];
    let names = ["unstructured", "n:m", "n:m:g(16)", "n:m:g(1)", "blocked"];
    let mut means = [0.0f64; 5];
    for t in 0..trials {
        let x = DenseMatrix::<f64>::gaussian(rows, cols, 9000 + t);
        for (k, spec) in specs.iter().enumerate() {
            let pruned = apply(spec, &x).map_err(|e| e.to_string())?.to_dense();
            means[k] += energy(&pruned, &x).map_err(|e| e.to_string())? / trials as f64;
        }
    }
    for w in 0..4 {
        if means[w] < means[w + 1] {
            return Err(format!(
                "{} ({:.4}) below {} ({:.4})",
                names[w],
                means[w],
                names[w + 1],
                means[w + 1]
            ));
        }
    }
    let gap = means[1] - means[2];
    if gap > 0.05 {
        return Err(format!("n:m vs n:m:g(16) gap {gap:.4} exceeds 0.05"));
    }
    Ok(format!(
        "means {:.4} >= {:.4} >= {:.4} >= {:.4} >= {:.4}; n:m vs g16 gap {gap:.4}",
        means[0], means[1], means[2], means[3], means[4]
    ))
}

/// 4. On 768x3072x4096, the grouped kernel at 1:8 beats the dense baseline
/// outright and at 1:2 stays within 0.8x of it (tiling tuned via the bench
/// sweep flags: nr=32).
fn criterion_4_performance() -> CriterionResult {
    let (m, k, n) = (768usize, 3072, 4096);
    let tiling = GemmTiling {
        nr: 32,
        threads: bench_threads(),
        ..Default::default()
    };
    let a = DenseMatrix::<f32>::gaussian(m, k, 1);
    let b = DenseMatrix::<f32>::gaussian(k, n, 2);
    let dense = time_gemm(
        || {
            dense_gemm_tiled(&a, &b, tiling).unwrap();
        },
        (m, k, n),
        3,
    )
    .map_err(|e| e.to_string())?;
    let mut medians = Vec::new();
    for (fn_, fm) in [(1usize, 2usize), (1, 8)] {
        let fmt = NmgFormat::new(fn_, fm, 16, Axis::Cols, Axis::Rows).map_err(|e| e.to_string())?;
        let enc = nmg::from_dense_greedy(&a, fmt).map_err(|e| e.to_string())?;
        let report = time_gemm(
            || {
                nmg_spmm(&enc, &b, tiling).unwrap();
            },
            (m, k, n),
            3,
        )
        .map_err(|e| e.to_string())?;
        medians.push(report.median_s);
    }
    let (t_half, t_eighth) = (medians[0], medians[1]);
    let speedup_half = dense.median_s / t_half;
    let speedup_eighth = dense.median_s / t_eighth;
    if t_eighth >= dense.median_s {
        return Err(format!(
            "1:8 median {t_eighth:.3}s not below dense {:.3}s",
            dense.median_s
        ));
    }
    if speedup_half < 0.8 {
        return Err(format!("1:2 speedup {speedup_half:.2}x below 0.8x"));
    }
    Ok(format!(
        "dense {:.3}s; 1:2 {:.3}s ({speedup_half:.2}x); 1:8 {:.3}s ({speedup_eighth:.2}x)",
        dense.median_s, t_half, t_eighth
    ))
}

/// 5. Every parameter gradient of the seeded 64-32-1 MLP matches central
/// finite differences (h=1e-5, double precision) within 1e-4 relative.
fn criterion_5_gradients() -> CriterionResult {
    let registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let cfg = MlpConfig {
        samples: 8,
        seed: 77,
        ..Default::default()
    };
    let mut mlp = Mlp::<f64>::new(&cfg);
    let data = synthetic_regression::<f64>(&cfg);
    let worst = finite_difference_check(&mut mlp, &registry, &data, 1e-5)
        .map_err(|e| e.to_string())?;
    if worst <= 1e-4 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e} exceeds 1e-4"))
    }
}

/// 6. Iterative pruning 10% -> 50%: exactly 50% per-layer sparsity, final
/// loss within 10% of the dense run, and mask persistence between pruning
/// events.
fn criterion_6_pruning_pipeline(demo: &DemoRun) -> CriterionResult {
    let dense_loss = demo.final_loss("dense")?;
    let iterative_loss = demo.final_loss("iterative")?;
    let ratio = iterative_loss / dense_loss;
    if ratio > 1.10 {
        return Err(format!(
            "iterative final loss {iterative_loss:.5} is {ratio:.3}x the dense loss"
        ));
    }

    // exact per-layer 50% and mask persistence, instrumented re-run
    let registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let cfg = MlpConfig {
        samples: 1024,
        noise: 0.3,
        seed: 42,
        ..Default::default()
    };
    let mut model = Mlp::<f64>::new(&cfg);
    let data = synthetic_regression::<f64>(&cfg);
    let mut step = 0;
    let mut log = TrainingLog::default();
    finetune(&mut model, &registry, &data, 400, 0.1, "dense", &mut step, &mut log)
        .map_err(|e| e.to_string())?;
    let ids = model.weight_ids();
    for level in [0.1, 0.2, 0.3, 0.4, 0.5] {
        prune_model(&mut model, &ids, level, PruneScope::Local).map_err(|e| e.to_string())?;
        let masks: Vec<Vec<bool>> = ids
            .iter()
            .map(|&id| model.graph.parameter_value(id).unwrap().support_mask())
            .collect();
        finetune(&mut model, &registry, &data, 150, 0.1, "finetune", &mut step, &mut log)
            .map_err(|e| e.to_string())?;
        for (k, &id) in ids.iter().enumerate() {
            if model.graph.parameter_value(id).unwrap().support_mask() != masks[k] {
                return Err(format!("mask of layer {k} changed during fine-tuning at {level}"));
            }
        }
    }
    for &id in &ids {
        let value = model.graph.parameter_value(id).unwrap();
        let (r, c) = value.shape();
        let zeros = value
            .to_dense()
            .as_slice()
            .iter()
            .filter(|v| **v == 0.0)
            .count();
        // ScalarFraction keeps ceil(size/2), so sparsity is exact on these
        // even-sized layers
        if zeros * 2 != r * c {
            return Err(format!("layer sparsity {zeros}/{} is not exactly 50%", r * c));
        }
    }
    Ok(format!(
        "iterative loss ratio {ratio:.3}x; per-layer sparsity exactly 50%; masks persistent"
    ))
}

/// 7. Dispatch semantics: CSR add produces exact union support; relu on a
/// grouped tensor takes the warned dense fallback; dense -> grouped is
/// refused by lossless conversion.
fn criterion_7_dispatch() -> CriterionResult {
    let registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let a_dense = DenseMatrix::new(2, 3, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap();
    let b_dense = DenseMatrix::new(2, 3, vec![0.5, 4.0, -2.0, 0.0, 0.0, 5.0]).unwrap();
    let run = registry
        .execute(
            "add",
            &[
                Matrix::Csr(CsrMatrix::from_dense(&a_dense)),
                Matrix::Csr(CsrMatrix::from_dense(&b_dense)),
            ],
            &[OutputFormat::keep_all_into(LayoutTag::Csr)],
        )
        .map_err(|e| e.to_string())?;
    let Matrix::Csr(sum) = &run.outputs[0] else {
        return Err("csr add did not stay csr".into());
    };
    // union of supports: {(0,0),(0,1),(0,2),(1,1),(1,2)}; (0,2) cancels to 0
    if sum.nnz() != 5 {
        return Err(format!("expected union support of 5 entries, got {}", sum.nnz()));
    }
    let oracle = DenseMatrix::new(2, 3, vec![1.5, 4.0, 0.0, 0.0, 3.0, 5.0]).unwrap();
    if sum.to_dense() != oracle {
        return Err("csr add values differ from the dense oracle".into());
    }

    let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
    let w = DenseMatrix::<f64>::gaussian(8, 8, 5);
    let enc = nmg::from_dense_greedy(&w, fmt).unwrap();
    let dec = enc.to_dense();
    let run = registry
        .execute("relu", &[Matrix::GroupedNm(enc)], &[OutputFormat::dense()])
        .map_err(|e| e.to_string())?;
    if run.outcome != PathOutcome::DenseFallback {
        return Err("grouped relu did not take the dense fallback".into());
    }
    if run.warnings.len() != 1 {
        return Err(format!("expected exactly 1 warning, got {}", run.warnings.len()));
    }
    let want = DenseMatrix::from_fn(8, 8, |i, j| dec.get(i, j).max(0.0));
    if run.outputs[0].to_dense() != want {
        return Err("fallback relu deviates from the oracle".into());
    }

    match convert_lossless(&Matrix::Dense(w), LayoutTag::GroupedNm { n: 1, m: 4, g: 2 }) {
        Err(_) => {}
        Ok(_) => return Err("dense -> grouped conversion was not refused".into()),
    }
    Ok("union-support add, warned relu fallback, refused dense->grouped".into())
}

struct DemoRun {
    stdout: String,
    files: Vec<(String, Vec<u8>)>,
}

impl DemoRun {
    /// Final loss column of one schedule's log.
    fn final_loss(&self, schedule: &str) -> Result<f64, String> {
        let (_, bytes) = self
            .files
            .iter()
            .find(|(name, _)| name == schedule)
            .ok_or_else(|| format!("missing {schedule} log"))?;
        let text = String::from_utf8_lossy(bytes);
        let last = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .next_back()
            .ok_or_else(|| format!("{schedule} log is empty"))?;
        last.rsplit(',')
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| format!("{schedule} log has no final loss"))
    }
}

fn run_demo(prefix: &std::path::Path) -> Result<DemoRun, String> {
    let cfg = TrainDemoConfig {
        out_prefix: prefix.to_string_lossy().into_owned(),
        ..Default::default()
    };
    let mut stdout = Vec::new();
    cmd_train_demo(&cfg, &mut stdout).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for name in ["dense", "oneshot", "iterative", "layerwise"] {
        let path = format!("{}_{name}.csv", cfg.out_prefix);
        files.push((
            name.to_string(),
            std::fs::read(&path).map_err(|e| e.to_string())?,
        ));
    }
    Ok(DemoRun {
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        files,
    })
}

/// 8. convert, energy-sweep, and train-demo produce byte-identical
/// non-timing output across two runs with the same seed.
fn criterion_8_determinism(
    dir: &std::path::Path,
    demo_a: &DemoRun,
    demo_b: &DemoRun,
) -> CriterionResult {
    // convert: same input, same output path, two runs
    let input = dir.join("input.stnm");
    let output = dir.join("converted.stng");
    let x = DenseMatrix::<f32>::gaussian(24, 16, 99);
    sparsekit::io::write_dense(&input, &x).map_err(|e| e.to_string())?;
    let cfg = ConvertConfig {
        input: input.clone(),
        output: output.clone(),
        n: 2,
        m: 4,
        g: 2,
        algorithm: "greedy-exchange".into(),
        ..Default::default()
    };
    let mut run = |label: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let mut stdout = Vec::new();
        cmd_convert(&cfg, &mut stdout).map_err(|e| format!("{label}: {e}"))?;
        Ok((std::fs::read(&output).map_err(|e| e.to_string())?, stdout))
    };
    let (bytes_a, stdout_a) = run("convert run 1")?;
    let (bytes_b, stdout_b) = run("convert run 2")?;
    if bytes_a != bytes_b || stdout_a != stdout_b {
        return Err("convert output differs across runs".into());
    }

    // energy sweep
    let sweep_out = dir.join("sweep.csv");
    let sweep_cfg = EnergySweepConfig {
        rows: 64,
        cols: 96,
        trials: 2,
        seed: 5,
        pairs: "1:4".into(),
        g_list: "1,16".into(),
        out: sweep_out.clone(),
        ..Default::default()
    };
    let mut sweep = || -> Result<Vec<u8>, String> {
        let mut stdout = Vec::new();
        cmd_energy_sweep(&sweep_cfg, &mut stdout).map_err(|e| e.to_string())?;
        std::fs::read(&sweep_out).map_err(|e| e.to_string())
    };
    if sweep()? != sweep()? {
        return Err("energy-sweep csv differs across runs".into());
    }

    // train demo: the two full runs executed for criterion 6
    if demo_a.files != demo_b.files || demo_a.stdout != demo_b.stdout {
        return Err("train-demo output differs across runs".into());
    }
    Ok("convert, energy-sweep, and train-demo byte-identical across reruns".into())
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    // the train demo runs twice: criterion 6 consumes the outcome, criterion
    // 8 compares the two runs byte for byte
    let demo_a = run_demo(&dir.path().join("demo")).expect("train demo run 1");
    let demo_b = run_demo(&dir.path().join("demo")).expect("train demo run 2");

    let results: Vec<(&str, CriterionResult)> = vec![
        ("1 kernel-correctness", criterion_1_kernel_correctness()),
        ("2 conversion-optimality", criterion_2_conversion_optimality()),
        ("3 energy-ordering", criterion_3_energy_ordering()),
        ("4 performance", criterion_4_performance()),
        ("5 gradient-correctness", criterion_5_gradients()),
        ("6 pruning-pipeline", criterion_6_pruning_pipeline(&demo_a)),
        ("7 dispatch-semantics", criterion_7_dispatch()),
        (
            "8 determinism",
            criterion_8_determinism(dir.path(), &demo_a, &demo_b),
        ),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(details) => println!("criterion {name}: PASS — {details}"),
            Err(details) => {
                failed += 1;
                println!("criterion {name}: FAIL — {details}");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
