//! Sparsity layouts and the two metrics everything else builds on.
//!
//! Builds the same small matrix in every storage format, decodes each back
//! to dense, and reports the stored-entry sparsity and the preserved-energy
//! metric for a pruned copy.
//!
//! Run with: cargo run --release --example layouts_and_metrics

use sparsekit::matrix::{energy, CooMatrix, CsrMatrix, DenseMatrix, MaskedMatrix, Matrix};
use sparsekit::sparsify::{apply, SparsifierSpec};

fn main() {
    let x = DenseMatrix::new(
        4,
        4,
        vec![
            4.0, 0.0, -1.5, 0.0, //
            0.0, 2.0, 0.0, 0.25, //
            -3.0, 0.0, 1.0, 0.0, //
            0.0, 0.5, 0.0, -2.5,
        ],
    )
    .unwrap();

    let variants: Vec<(&str, Matrix<f64>)> = vec![
        ("dense", Matrix::Dense(x.clone())),
        (
            "masked",
            Matrix::Masked(
                MaskedMatrix::apply_mask(&x, x.as_slice().iter().map(|v| *v != 0.0).collect())
                    .unwrap(),
            ),
        ),
        ("csr", Matrix::Csr(CsrMatrix::from_dense(&x))),
        ("coo", Matrix::Coo(CooMatrix::from_dense(&x))),
    ];

    println!("layout   sparsity  decodes-exactly");
    for (name, m) in &variants {
        println!(
            "{name:<8} {:.3}     {}",
            m.sparsity(),
            m.to_dense() == x
        );
    }

    // prune to the 4 largest magnitudes and measure how much L1 mass is kept
    let pruned = apply(&SparsifierSpec::ScalarFraction { fraction: 0.75 }, &x)
        .unwrap()
        .to_dense();
    println!(
        "\nkeeping the top 25% of magnitudes preserves {:.1}% of the L1 energy",
        100.0 * energy(&pruned, &x).unwrap()
    );
}
