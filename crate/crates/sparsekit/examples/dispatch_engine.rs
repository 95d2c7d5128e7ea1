//! The operator dispatch engine: exact hits, lossless-conversion rewrites,
//! the warned dense fallback, output-format pipelines, and registering a
//! custom operator.
//!
//! Run with: cargo run --release --example dispatch_engine

use std::sync::Arc;

use sparsekit::dispatch::{OperatorKey, OpImpl, OutputFormat, Registry};
use sparsekit::kernels::GemmTiling;
use sparsekit::matrix::{Axis, CooMatrix, DenseMatrix, LayoutTag, Matrix};
use sparsekit::nmg::{from_dense_greedy, NmgFormat};
use sparsekit::sparsify::SparsifierSpec;

fn main() {
    let mut registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
    registry.register_nmg_ops(fmt);

    let w = DenseMatrix::<f64>::gaussian(8, 8, 3);
    let grouped = Matrix::GroupedNm(from_dense_greedy(&w, fmt).unwrap());
    let x = Matrix::Dense(DenseMatrix::<f64>::gaussian(8, 4, 4));

    // exact: the grouped matmul was registered for this parameterization
    let run = registry
        .execute("matmul", &[grouped.clone(), x.clone()], &[OutputFormat::dense()])
        .unwrap();
    println!("matmul(grouped, dense)   -> {:?}", run.outcome);

    // rewrite: no coo matmul exists, but coo -> csr is lossless
    let coo = Matrix::Coo(CooMatrix::from_dense(&grouped.to_dense()));
    let run = registry
        .execute("matmul", &[coo, x.clone()], &[OutputFormat::dense()])
        .unwrap();
    println!("matmul(coo, dense)       -> {:?}", run.outcome);

    // fallback: nothing handles relu on a grouped tensor
    let run = registry
        .execute("relu", &[grouped.clone()], &[OutputFormat::dense()])
        .unwrap();
    println!("relu(grouped)            -> {:?}", run.outcome);
    for w in &run.warnings {
        println!("  warning: {}", w.to_json_line());
    }

    // output formats sparsify results on the way out
    let sparse_out = OutputFormat {
        inline: SparsifierSpec::KeepAll,
        tmp_layout: LayoutTag::Dense,
        external: SparsifierSpec::ScalarFraction { fraction: 0.9 },
        out_layout: LayoutTag::Csr,
    };
    let run = registry
        .execute("matmul", &[grouped, x.clone()], &[sparse_out])
        .unwrap();
    println!(
        "matmul with 90% magnitude-pruned csr output -> {} stored entries",
        match &run.outputs[0] {
            Matrix::Csr(c) => c.nnz(),
            _ => unreachable!(),
        }
    );

    // a custom operator goes through the same registry
    let imp: OpImpl<f64> = Arc::new(|inputs, _| {
        let d = inputs[0].to_dense();
        let scaled = DenseMatrix::from_fn(d.rows(), d.cols(), |i, j| 2.0 * d.get(i, j));
        Ok(vec![Matrix::Dense(scaled)])
    });
    registry.register_fwd(
        OperatorKey::from_tags("double", &[LayoutTag::Dense], &[LayoutTag::Dense]),
        imp,
    );
    let run = registry
        .execute("double", &[x], &[OutputFormat::dense()])
        .unwrap();
    println!("custom op \"double\"       -> {:?}", run.outcome);

    // everything the registry currently holds
    println!("\nregistry contents:\n{}", registry.dump());
}
