//! The grouped sparse-dense GEMM kernel against the dense baseline.
//!
//! Encodes a weight matrix at a few n:m:g settings, verifies each product
//! against the dense kernel, and reports median runtimes. Shapes here are
//! small so the example finishes quickly; `sparsekit gemm-bench` runs the
//! full-size sweep.
//!
//! Run with: cargo run --release --example sparse_gemm

use sparsekit::kernels::{dense_gemm_tiled, max_relative_error, nmg_spmm, time_gemm, GemmTiling};
use sparsekit::matrix::{Axis, DenseMatrix};
use sparsekit::nmg::{from_dense_greedy, NmgFormat};

fn main() {
    let threads = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let tiling = GemmTiling {
        nr: 32,
        threads,
        ..Default::default()
    };
    let (m, k, n) = (384usize, 768, 1024);
    let a = DenseMatrix::<f32>::gaussian(m, k, 1);
    let b = DenseMatrix::<f32>::gaussian(k, n, 2);

    let dense = time_gemm(
        || {
            dense_gemm_tiled(&a, &b, tiling).unwrap();
        },
        (m, k, n),
        5,
    )
    .unwrap();
    println!(
        "dense {m}x{k}x{n}: median {:.1} ms ({:.2} GFLOP/s)",
        dense.median_s * 1e3,
        dense.gflops
    );

    let b64: DenseMatrix<f64> = b.cast();
    for (fn_, fm, fg) in [(1usize, 2usize, 16usize), (2, 4, 8), (1, 8, 16)] {
        let fmt = NmgFormat::new(fn_, fm, fg, Axis::Cols, Axis::Rows).unwrap();
        let enc = from_dense_greedy(&a, fmt).unwrap();

        // verify against the double-precision oracle before timing
        let got = nmg_spmm(&enc, &b, tiling).unwrap();
        let dec64: DenseMatrix<f64> = enc.to_dense().cast();
        let oracle = dense_gemm_tiled(&dec64, &b64, tiling).unwrap();
        let err = max_relative_error(&got, &oracle, &dec64, &b64);
        assert!(err <= 1e-4, "kernel mismatch: {err:.2e}");

        let report = time_gemm(
            || {
                nmg_spmm(&enc, &b, tiling).unwrap();
            },
            (m, k, n),
            5,
        )
        .unwrap();
        println!(
            "{fn_}:{fm}:{fg} ({:.1}% sparse): median {:.1} ms, {:.2}x dense, max rel err {err:.1e}",
            100.0 * (1.0 - fn_ as f64 / fm as f64),
            report.median_s * 1e3,
            dense.median_s / report.median_s,
        );
    }
}
