//! Runtime verification suites: the oracle and property checks behind the
//! `verify` command. Each suite returns a pass/fail report; any failure
//! makes the command exit nonzero.

use crate::dispatch::{convert_lossless, OutputFormat, PathOutcome, Registry};
use crate::error::Result;
use crate::kernels::{dense_gemm_tiled, max_relative_error, nmg_spmm, GemmTiling};
use crate::matrix::{energy, Axis, CooMatrix, CsrMatrix, DenseMatrix, LayoutTag, Matrix};
use crate::nmg::{
    self, assignment_energy, oracle_optimal, ConversionAlgorithm, GroupedNMMatrix, NmgFormat,
    PatternTable,
};
use crate::sparsify::{apply, SparsifierSpec};
use crate::train::{finite_difference_check, synthetic_regression, Mlp, MlpConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl SuiteResult {
    fn pass(name: &'static str, details: String) -> Self {
        SuiteResult {
            name,
            passed: true,
            details,
        }
    }

    fn fail(name: &'static str, details: String) -> Self {
        SuiteResult {
            name,
            passed: false,
            details,
        }
    }
}

/// Greedy and exchange conversions against the exhaustive oracle on random
/// small chunks: greedy never beats the oracle, exchange never loses to
/// greedy, and the mean greedy/optimal ratio stays above the floor.
pub fn suite_greedy_vs_oracle(trials: usize, seed: u64) -> SuiteResult {
    const NAME: &str = "greedy-vs-oracle";
    let configs = [(1usize, 2usize, 1usize), (1, 3, 2), (1, 4, 2), (2, 4, 1)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    for t in 0..trials {
        let (n, m, g) = configs[t % configs.len()];
        let table = match PatternTable::new(n, m) {
            Ok(t) => t,
            Err(e) => return SuiteResult::fail(NAME, e.to_string()),
        };
        let width = table.count() * g;
        let chunk = DenseMatrix::<f64>::gaussian(m, width, rng.gen());
        let fmt = NmgFormat::new(n, m, g, Axis::Rows, Axis::Cols).unwrap();
        let run = |alg| nmg::assign_chunks(&chunk, fmt, alg).map(|mut a| a.remove(0));
        let greedy = match run(ConversionAlgorithm::Greedy) {
            Ok(a) => a,
            Err(e) => return SuiteResult::fail(NAME, e.to_string()),
        };
        let refined = run(ConversionAlgorithm::GreedyExchange).unwrap();
        let oracle = match oracle_optimal(&chunk, n, m, g, Axis::Rows) {
            Ok(a) => a,
            Err(e) => return SuiteResult::fail(NAME, e.to_string()),
        };
        let eg = assignment_energy(&chunk, Axis::Rows, &table, &greedy).unwrap();
        let er = assignment_energy(&chunk, Axis::Rows, &table, &refined).unwrap();
        let eo = assignment_energy(&chunk, Axis::Rows, &table, &oracle).unwrap();
        if eg > eo + 1e-9 {
            return SuiteResult::fail(
                NAME,
                format!("greedy {eg} beat the oracle {eo} on {n}:{m}:{g} trial {t}"),
            );
        }
        if er + 1e-9 < eg {
            return SuiteResult::fail(
                NAME,
                format!("exchange {er} lost to greedy {eg} on {n}:{m}:{g} trial {t}"),
            );
        }
        if eo > 0.0 {
            ratio_sum += eg / eo;
            ratio_count += 1;
        }
    }
    let mean_ratio = ratio_sum / ratio_count.max(1) as f64;
    if mean_ratio < 0.95 {
        return SuiteResult::fail(
            NAME,
            format!("mean greedy/optimal ratio {mean_ratio:.4} below the 0.95 floor"),
        );
    }
    SuiteResult::pass(
        NAME,
        format!("{trials} chunks, mean greedy/optimal ratio {mean_ratio:.4}"),
    )
}

/// Every edge of the lossless conversion table preserves the dense
/// decoding exactly, and dense -> grouped is refused.
pub fn suite_conversion_losslessness(trials: usize, seed: u64) -> SuiteResult {
    const NAME: &str = "conversion-losslessness";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let base = DenseMatrix::<f64>::gaussian(8, 8, rng.gen());
        let masked = apply(&SparsifierSpec::ScalarFraction { fraction: 0.6 }, &base).unwrap();
        let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
        let grouped = nmg::from_dense_greedy(&base, fmt).unwrap();
        let variants: Vec<Matrix<f64>> = vec![
            Matrix::Dense(base.clone()),
            Matrix::Masked(masked.clone()),
            Matrix::Csr(CsrMatrix::from_dense(&masked.to_dense())),
            Matrix::Coo(CooMatrix::from_dense(&masked.to_dense())),
            Matrix::GroupedNm(grouped),
        ];
        let targets = [
            LayoutTag::Dense,
            LayoutTag::Masked,
            LayoutTag::Csr,
            LayoutTag::Coo,
            LayoutTag::GroupedNm { n: 1, m: 4, g: 2 },
        ];
        // the lossless table itself; refusal is correct exactly off-table
        use crate::matrix::LayoutKind as K;
        let in_table = |from: K, to: K| {
            matches!(
                (from, to),
                (_, K::Dense)
                    | (K::Dense | K::Masked, K::Csr | K::Coo)
                    | (K::Csr, K::Coo)
                    | (K::Coo, K::Csr)
                    | (K::GroupedNm, K::Masked)
            )
        };
        for x in &variants {
            for &target in &targets {
                let expected = in_table(x.layout_tag().kind(), target.kind());
                match convert_lossless(x, target) {
                    Ok(converted) => {
                        if !expected {
                            return SuiteResult::fail(
                                NAME,
                                format!(
                                    "{} -> {} should have been refused",
                                    x.layout_tag(),
                                    target
                                ),
                            );
                        }
                        if converted.to_dense() != x.to_dense() {
                            return SuiteResult::fail(
                                NAME,
                                format!(
                                    "{} -> {} altered values on trial {t}",
                                    x.layout_tag(),
                                    target
                                ),
                            );
                        }
                    }
                    Err(_) if !expected => {}
                    Err(_) => {
                        return SuiteResult::fail(
                            NAME,
                            format!("{} -> {} refused unexpectedly", x.layout_tag(), target),
                        );
                    }
                }
            }
        }
        // the one conversion that must always be refused
        if convert_lossless(&Matrix::Dense(base), LayoutTag::GroupedNm { n: 1, m: 4, g: 2 })
            .is_ok()
        {
            return SuiteResult::fail(NAME, "dense -> grouped was not refused".into());
        }
    }
    SuiteResult::pass(NAME, format!("{trials} matrices through every table edge"))
}

/// Kernel type injected into the kernel suite; the production kernel by
/// default, a corrupted one in the negative-control test.
pub type NmgGemm =
    dyn Fn(&GroupedNMMatrix<f32>, &DenseMatrix<f32>, GemmTiling) -> Result<DenseMatrix<f32>>;

/// CSR and grouped kernels against the double-precision dense oracle on
/// randomized shapes and sparsities.
pub fn suite_kernel_oracle(cases: usize, seed: u64) -> SuiteResult {
    suite_kernel_oracle_with(&|a, b, t| nmg_spmm(a, b, t), cases, seed)
}

pub fn suite_kernel_oracle_with(gemm: &NmgGemm, cases: usize, seed: u64) -> SuiteResult {
    const NAME: &str = "kernel-vs-dense";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiling = GemmTiling::with_threads(2);
    let configs = [(1usize, 2usize), (1, 4), (2, 4), (1, 8), (3, 6), (2, 8)];
    for case in 0..cases {
        let (n, m) = configs[case % configs.len()];
        let g = [1usize, 2, 4, 16][case % 4];
        let fmt = match NmgFormat::new(n, m, g, Axis::Cols, Axis::Rows) {
            Ok(f) => f,
            Err(e) => return SuiteResult::fail(NAME, e.to_string()),
        };
        let width = fmt.chunk_width();
        let rows = width * rng.gen_range(1..=(512 / width).max(1));
        let k = m * rng.gen_range(1..=(1024 / m).max(1));
        let ncols = rng.gen_range(1..=512);
        let a32 = DenseMatrix::<f32>::gaussian(rows, k, rng.gen());
        let b32 = DenseMatrix::<f32>::gaussian(k, ncols, rng.gen());
        let enc = match nmg::from_dense_greedy(&a32, fmt) {
            Ok(e) => e,
            Err(e) => return SuiteResult::fail(NAME, e.to_string()),
        };
        let dec64: DenseMatrix<f64> = enc.to_dense().cast();
        let b64: DenseMatrix<f64> = b32.cast();
        let oracle = dense_gemm_tiled(&dec64, &b64, tiling).unwrap();
        let got = match gemm(&enc, &b32, tiling) {
            Ok(c) => c,
            Err(e) => return SuiteResult::fail(NAME, e.to_string()),
        };
        let err = max_relative_error(&got, &oracle, &dec64, &b64);
        if err > 1e-4 {
            return SuiteResult::fail(
                NAME,
                format!("grouped kernel error {err:.2e} at {rows}x{k}x{ncols} {n}:{m}:{g}"),
            );
        }
        // csr baseline on a magnitude-pruned version of the same operand
        let sparsity = 0.5 + 0.45 * rng.gen::<f64>();
        let pruned = apply(
            &SparsifierSpec::ScalarFraction { fraction: sparsity },
            &a32,
        )
        .unwrap()
        .to_dense();
        let csr = CsrMatrix::from_dense(&pruned);
        let got = crate::kernels::csr_spmm(&csr, &b32).unwrap();
        let dec64: DenseMatrix<f64> = pruned.cast();
        let oracle = dense_gemm_tiled(&dec64, &b64, tiling).unwrap();
        let err = max_relative_error(&got, &oracle, &dec64, &b64);
        if err > 1e-4 {
            return SuiteResult::fail(
                NAME,
                format!("csr kernel error {err:.2e} at {rows}x{k}x{ncols}"),
            );
        }
    }
    SuiteResult::pass(NAME, format!("{cases} randomized cases within 1e-4"))
}

/// Analytic gradients against central finite differences on the demo MLP.
pub fn suite_gradient_check(seed: u64) -> SuiteResult {
    const NAME: &str = "gradient-vs-finite-difference";
    let registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let cfg = MlpConfig {
        samples: 8,
        seed,
        ..Default::default()
    };
    let mut mlp = Mlp::<f64>::new(&cfg);
    let data = synthetic_regression::<f64>(&cfg);
    match finite_difference_check(&mut mlp, &registry, &data, 1e-5) {
        Ok(worst) if worst <= 1e-4 => {
            SuiteResult::pass(NAME, format!("max relative error {worst:.2e}"))
        }
        Ok(worst) => SuiteResult::fail(NAME, format!("max relative error {worst:.2e} > 1e-4")),
        Err(e) => SuiteResult::fail(NAME, e.to_string()),
    }
}

/// Exact, via-conversion, and fallback dispatch paths all produce the
/// dense-oracle result; warnings appear only on the fallback.
pub fn suite_dispatch_paths(seed: u64) -> SuiteResult {
    const NAME: &str = "dispatch-path-equivalence";
    let mut registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
    registry.register_nmg_ops(fmt);
    let base = DenseMatrix::<f64>::gaussian(8, 8, seed);
    let enc = nmg::from_dense_greedy(&base, fmt).unwrap();
    let dec = enc.to_dense();
    let b = DenseMatrix::<f64>::gaussian(8, 8, seed ^ 1);

    // exact grouped matmul
    let run = registry
        .execute(
            "matmul",
            &[Matrix::GroupedNm(enc.clone()), Matrix::Dense(b.clone())],
            &[OutputFormat::dense()],
        )
        .unwrap();
    if run.outcome != PathOutcome::Exact || !run.warnings.is_empty() {
        return SuiteResult::fail(NAME, "registered grouped matmul did not hit exactly".into());
    }
    let oracle = dense_gemm_tiled(&dec, &b, GemmTiling::default()).unwrap();
    let worst = run
        .outputs[0]
        .to_dense()
        .as_slice()
        .iter()
        .zip(oracle.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    if worst > 1e-9 {
        return SuiteResult::fail(NAME, format!("exact path deviates by {worst:.2e}"));
    }

    // conversion path: coo reaches the csr implementation
    let masked = apply(&SparsifierSpec::ScalarFraction { fraction: 0.5 }, &base).unwrap();
    let coo = CooMatrix::from_dense(&masked.to_dense());
    let run = registry
        .execute(
            "matmul",
            &[Matrix::Coo(coo), Matrix::Dense(b.clone())],
            &[OutputFormat::dense()],
        )
        .unwrap();
    if !matches!(run.outcome, PathOutcome::ViaConversion(_)) || !run.warnings.is_empty() {
        return SuiteResult::fail(NAME, "coo matmul did not use a lossless conversion".into());
    }

    // fallback: relu on a grouped tensor
    let run = registry
        .execute("relu", &[Matrix::GroupedNm(enc)], &[OutputFormat::dense()])
        .unwrap();
    if run.outcome != PathOutcome::DenseFallback || run.warnings.len() != 1 {
        return SuiteResult::fail(NAME, "grouped relu did not take the warned fallback".into());
    }
    let want = DenseMatrix::from_fn(dec.rows(), dec.cols(), |i, j| dec.get(i, j).max(0.0));
    if run.outputs[0].to_dense() != want {
        return SuiteResult::fail(NAME, "fallback relu result deviates from the oracle".into());
    }
    SuiteResult::pass(NAME, "exact, conversion, and fallback paths all match".into())
}

/// Mean pruning energies keep their structural ordering at 75% sparsity.
pub fn suite_energy_ordering(trials: usize, seed: u64) -> SuiteResult {
    const NAME: &str = "energy-structure-ordering";
    let (rows, cols) = (64, 96);
    let specs: [(&str, SparsifierSpec); 5] = [
        ("unstructured", SparsifierSpec::ScalarFraction { fraction: 0.75 }),
        (
            "n:m",
            SparsifierSpec::PerBlockFraction {
                n: 1,
                m: 4,
                axis: Axis::Cols,
            },
        ),
        (
            "n:m:g16",
            SparsifierSpec::GroupedNm {
                n: 1,
                m: 4,
                g: 16,
                sparse_dim: Axis::Cols,
                group_dim: Axis::Rows,
            },
        ),
        (
            "n:m:g1",
            SparsifierSpec::GroupedNm {
                n: 1,
                m: 4,
                g: 1,
                sparse_dim: Axis::Cols,
                group_dim: Axis::Rows,
            },
        ),
        (
            "blocked",
            SparsifierSpec::BlockwiseFraction {
                fraction: 0.75,
                block_rows: 4,
                block_cols: 4,
            },
        ),
    ];
    let mut means = [0.0f64; 5];
    for t in 0..trials {
        let x = DenseMatrix::<f64>::gaussian(rows, cols, seed.wrapping_add(t as u64));
        for (k, (_, spec)) in specs.iter().enumerate() {
            let pruned = apply(spec, &x).unwrap().to_dense();
            means[k] += energy(&pruned, &x).unwrap() / trials as f64;
        }
    }
    for w in 0..4 {
        if means[w] < means[w + 1] - 1e-9 {
            return SuiteResult::fail(
                NAME,
                format!(
                    "{} ({:.4}) fell below {} ({:.4})",
                    specs[w].0,
                    means[w],
                    specs[w + 1].0,
                    means[w + 1]
                ),
            );
        }
    }
    SuiteResult::pass(
        NAME,
        format!(
            "unstructured {:.3} >= n:m {:.3} >= g16 {:.3} >= g1 {:.3} >= blocked {:.3}",
            means[0], means[1], means[2], means[3], means[4]
        ),
    )
}

/// Runs every suite; returns the reports and whether all passed.
pub fn run_all(seed: u64) -> (Vec<SuiteResult>, bool) {
    let results = vec![
        suite_greedy_vs_oracle(200, seed),
        suite_conversion_losslessness(20, seed ^ 0x01),
        suite_kernel_oracle(12, seed ^ 0x02),
        suite_gradient_check(seed ^ 0x03),
        suite_dispatch_paths(seed ^ 0x04),
        suite_energy_ordering(40, seed ^ 0x05),
    ];
    let all = results.iter().all(|r| r.passed);
    (results, all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let (results, all) = run_all(7);
        assert!(results.len() >= 5);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.details);
        }
        assert!(all);
    }

    #[test]
    fn injected_kernel_bug_is_caught() {
        let broken: &NmgGemm = &|a, b, t| {
            let mut c = nmg_spmm(a, b, t)?;
            let last = c.len() - 1;
            c.as_mut_slice()[last] += 1.0;
            Ok(c)
        };
        let result = suite_kernel_oracle_with(broken, 4, 7);
        assert!(!result.passed);
    }
}
