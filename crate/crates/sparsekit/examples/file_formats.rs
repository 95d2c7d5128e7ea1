//! The binary and CSV matrix formats plus model checkpoints.
//!
//! Round-trips a dense matrix through the STNM binary format and CSV,
//! stores a grouped tensor as STNG, and writes a model checkpoint with its
//! JSON manifest.
//!
//! Run with: cargo run --release --example file_formats

use sparsekit::io;
use sparsekit::matrix::{Axis, DenseMatrix};
use sparsekit::nmg::{from_dense_greedy, NmgFormat};
use sparsekit::train::{prune_model, save_checkpoint, Mlp, MlpConfig, PruneScope};

fn main() {
    let dir = std::env::temp_dir().join("sparsekit_file_formats");
    std::fs::create_dir_all(&dir).unwrap();

    // dense binary roundtrip
    let x = DenseMatrix::<f32>::gaussian(8, 16, 1);
    let stnm = dir.join("weight.stnm");
    io::write_dense(&stnm, &x).unwrap();
    let back = match io::read_dense(&stnm).unwrap() {
        io::AnyDense::Single(m) => m,
        _ => unreachable!("dtype is preserved"),
    };
    println!(
        "{}: {} bytes, roundtrip exact: {}",
        stnm.display(),
        std::fs::metadata(&stnm).unwrap().len(),
        back == x
    );

    // csv import/export
    let csv = dir.join("weight.csv");
    io::write_csv(&csv, &x).unwrap();
    let from_csv: DenseMatrix<f32> = io::read_csv(&csv).unwrap();
    println!("{}: roundtrip exact: {}", csv.display(), from_csv == x);

    // grouped binary format
    let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
    let enc = from_dense_greedy(&x, fmt).unwrap();
    let stng = dir.join("weight.stng");
    io::write_grouped(&stng, &enc).unwrap();
    let back = match io::read_grouped(&stng).unwrap() {
        io::AnyGrouped::Single(m) => m,
        _ => unreachable!(),
    };
    println!(
        "{}: {} bytes ({} stored values + {} block indices), decode exact: {}",
        stng.display(),
        std::fs::metadata(&stng).unwrap().len(),
        enc.values().len(),
        enc.col_index().len(),
        back.to_dense() == enc.to_dense()
    );

    // model checkpoint with manifest
    let cfg = MlpConfig::default();
    let mut model = Mlp::<f64>::new(&cfg);
    let ids = model.weight_ids();
    prune_model(&mut model, &ids, 0.5, PruneScope::Local).unwrap();
    let ckpt = dir.join("checkpoint");
    save_checkpoint(&model, &ckpt).unwrap();
    println!(
        "\ncheckpoint manifest:\n{}",
        std::fs::read_to_string(ckpt.join("manifest.json")).unwrap()
    );
}
