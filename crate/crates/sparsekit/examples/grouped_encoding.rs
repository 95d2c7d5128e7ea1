//! The grouped n:m format end to end on a small matrix.
//!
//! Prints the revolving-door pattern table, runs the greedy conversion and
//! its exchange refinement, compares both against the exhaustive oracle on
//! a chunk small enough to enumerate, and decodes the result.
//!
//! Run with: cargo run --release --example grouped_encoding

use sparsekit::matrix::{energy, Axis, DenseMatrix};
use sparsekit::nmg::{
    assignment_energy, from_dense, oracle_optimal, pattern_order, ConversionAlgorithm, NmgFormat,
};

fn main() {
    // every 3-subset of 6 positions, consecutive entries differing by one
    let table = pattern_order(3, 6).unwrap();
    println!("3:6 pattern table ({} patterns, revolving-door order):", table.count());
    for p in 0..table.count() {
        let marks: String = (0..6)
            .map(|i| if table.pattern(p).contains(&(i as u8)) { 'x' } else { '.' })
            .collect();
        if p == 0 {
            println!("  {p:>2}: {marks}");
        } else {
            let (out, inn) = table.transition(p);
            println!("  {p:>2}: {marks}   (drop {out}, add {inn})");
        }
    }

    // a single 2 x 6 chunk of 1:2:3 (chunk width C(2,1)*3 = 6)
    let chunk = DenseMatrix::new(
        2,
        6,
        vec![
            3.0, 0.2, -1.0, 4.0, 0.3, -0.5, //
            0.4, 2.5, 0.9, -0.1, 2.0, 1.5,
        ],
    )
    .unwrap();
    let fmt = NmgFormat::new(1, 2, 3, Axis::Rows, Axis::Cols).unwrap();
    let table = pattern_order(1, 2).unwrap();

    let greedy = from_dense(&chunk, fmt, ConversionAlgorithm::Greedy).unwrap();
    let refined = from_dense(&chunk, fmt, ConversionAlgorithm::GreedyExchange).unwrap();
    let oracle = oracle_optimal(&chunk, 1, 2, 3, Axis::Rows).unwrap();

    let e_greedy = energy(&greedy.to_dense(), &chunk).unwrap();
    let e_refined = energy(&refined.to_dense(), &chunk).unwrap();
    let e_oracle = assignment_energy(&chunk, Axis::Rows, &table, &oracle).unwrap()
        / chunk.l1_norm();

    println!("\n1:2:3 conversion of one chunk:");
    println!("  greedy energy           {e_greedy:.4}");
    println!("  greedy+exchange energy  {e_refined:.4}");
    println!("  exhaustive optimum      {e_oracle:.4}");

    println!("\ndecoded greedy result:");
    let dec = greedy.to_dense();
    for i in 0..dec.rows() {
        println!("  {:?}", dec.row(i));
    }
    println!(
        "stored blocks (chunk-relative original positions): {:?}",
        greedy.col_index()
    );
}
