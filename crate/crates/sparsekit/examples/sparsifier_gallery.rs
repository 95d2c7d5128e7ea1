//! Every built-in sparsifier applied to the same Gaussian matrix.
//!
//! Shows the streaming/blocking/materializing classification, the achieved
//! sparsity, and the preserved energy of each, plus SameFormat
//! re-sparsification against a masked reference.
//!
//! Run with: cargo run --release --example sparsifier_gallery

use sparsekit::matrix::{energy, Axis, DenseMatrix, Matrix};
use sparsekit::sparsify::{apply, apply_same_format, classify, SparsifierSpec};

fn main() {
    let x = DenseMatrix::<f64>::gaussian(64, 96, 7);
    let specs: Vec<(&str, SparsifierSpec)> = vec![
        ("keep-all", SparsifierSpec::KeepAll),
        (
            "random fraction p=0.75",
            SparsifierSpec::RandomFraction { p: 0.75, seed: 11 },
        ),
        (
            "scalar threshold t=1.15",
            SparsifierSpec::ScalarThreshold { threshold: 1.15 },
        ),
        (
            "per-block 1:4",
            SparsifierSpec::PerBlockFraction {
                n: 1,
                m: 4,
                axis: Axis::Cols,
            },
        ),
        (
            "scalar fraction f=0.75",
            SparsifierSpec::ScalarFraction { fraction: 0.75 },
        ),
        (
            "block-wise 4x4 f=0.75",
            SparsifierSpec::BlockwiseFraction {
                fraction: 0.75,
                block_rows: 4,
                block_cols: 4,
            },
        ),
        (
            "grouped 1:4:16",
            SparsifierSpec::GroupedNm {
                n: 1,
                m: 4,
                g: 16,
                sparse_dim: Axis::Cols,
                group_dim: Axis::Rows,
            },
        ),
    ];

    println!("{:<26} {:<14} sparsity  energy", "sparsifier", "class");
    for (name, spec) in &specs {
        let masked = apply(spec, &x).unwrap();
        let e = energy(&masked.to_dense(), &x).unwrap();
        let s = Matrix::Masked(masked).sparsity();
        let class = format!("{:?}", classify(spec));
        println!("{name:<26} {class:<14} {s:.3}     {e:.3}");
    }

    // SameFormat: re-sparsify a fresh tensor into an existing mask
    let reference = Matrix::Masked(
        apply(&SparsifierSpec::ScalarFraction { fraction: 0.5 }, &x).unwrap(),
    );
    let fresh = DenseMatrix::<f64>::gaussian(64, 96, 8);
    let resparsified = apply_same_format(&reference, &fresh).unwrap();
    println!(
        "\nsame-format reuse: reference sparsity {:.3}, re-sparsified {:.3} (masks identical: {})",
        reference.sparsity(),
        resparsified.sparsity(),
        reference.support_mask() == resparsified.support_mask(),
    );

    // the sparsifier descriptions themselves serialize as tagged JSON
    let json = serde_json::to_string(&specs[4].1).unwrap();
    println!("spec as JSON: {json}");
}
