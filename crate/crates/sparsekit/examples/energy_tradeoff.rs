//! Structure versus preserved energy: unstructured, n:m, grouped n:m:g at
//! several group sizes, and whole-block pruning, all at matched sparsity
//! on seeded Gaussian matrices.
//!
//! More structure means faster kernels but less freedom in which values
//! survive; larger groups recover most of what plain n:m keeps.
//!
//! Run with: cargo run --release --example energy_tradeoff

use sparsekit::matrix::{energy, Axis, DenseMatrix};
use sparsekit::sparsify::{apply, SparsifierSpec};

fn main() {
    let trials = 10u64;
    let (rows, cols) = (256, 384);

    println!("mean preserved energy over {trials} trials ({rows}x{cols} Gaussian):\n");
    println!("{:<10} {:>14} {:>8} {:>8} {:>8} {:>8} {:>8}", "sparsity", "unstructured", "n:m", "g=16", "g=4", "g=1", "blocked");
    for (n, m) in [(1usize, 2usize), (1, 4), (1, 8)] {
        let sparsity = 1.0 - n as f64 / m as f64;
        let specs = [
            SparsifierSpec::ScalarFraction { fraction: sparsity },
            SparsifierSpec::PerBlockFraction {
                n,
                m,
                axis: Axis::Cols,
            },
            grouped(n, m, 16),
            grouped(n, m, 4),
            grouped(n, m, 1),
            SparsifierSpec::BlockwiseFraction {
                fraction: sparsity,
                block_rows: 4,
                block_cols: 4,
            },
        ];
        let mut means = [0.0f64; 6];
        for t in 0..trials {
            let x = DenseMatrix::<f64>::gaussian(rows, cols, 100 + t);
            for (k, spec) in specs.iter().enumerate() {
                let pruned = apply(spec, &x).unwrap().to_dense();
                means[k] += energy(&pruned, &x).unwrap() / trials as f64;
            }
        }
        println!(
            "{:<10} {:>14.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            format!("{:.1}%", 100.0 * sparsity),
            means[0],
            means[1],
            means[2],
            means[3],
            means[4],
            means[5]
        );
    }
    println!("\n(the `energy-sweep` subcommand writes the same table as CSV at full scale)");
}

fn grouped(n: usize, m: usize, g: usize) -> SparsifierSpec {
    SparsifierSpec::GroupedNm {
        n,
        m,
        g,
        sparse_dim: Axis::Cols,
        group_dim: Axis::Rows,
    }
}
