//! Structured-sparsity toolkit: sparsity layouts, sparsifiers, operator
//! dispatch, grouped n:m tensors with a register-blocked sparse-dense GEMM,
//! and masked magnitude-pruning fine-tuning.
//!
//! The pieces compose the way a sparse workload does: a [`sparsify`]
//! sparsifier decides which values of a tensor survive, a [`matrix`] layout
//! stores the survivors, the [`dispatch`] registry routes operators to
//! implementations for the layouts at hand (converting losslessly or
//! falling back to dense with a warning when it has to), and [`train`]
//! keeps parameters inside their layout invariants across gradient updates.
//! The grouped n:m format in [`nmg`] stores every nonzero pattern of a
//! chunk in fixed revolving-door order, which is what lets the [`kernels`]
//! GEMM stream it branch-free.
//!
//! ## Examples
//!
//! One runnable example per capability, under `examples/`:
//!
//! - **`layouts_and_metrics`** — dense/masked/CSR/COO storage, the
//!   sparsity and preserved-energy metrics.
//! - **`sparsifier_gallery`** — every built-in sparsifier, its
//!   streaming/blocking/materializing class, and SameFormat reuse.
//! - **`grouped_encoding`** — the revolving-door pattern table, greedy and
//!   exchange-refined conversion, and the exhaustive oracle.
//! - **`sparse_gemm`** — the grouped sparse-dense GEMM kernel against the
//!   dense baseline, verified then timed.
//! - **`dispatch_engine`** — exact, via-conversion, and dense-fallback
//!   dispatch, output-format pipelines, custom operator registration.
//! - **`masked_finetune`** — one-shot, iterative, and layer-wise magnitude
//!   pruning with mask-preserving SGD.
//! - **`energy_tradeoff`** — the structure-versus-energy table at matched
//!   sparsity.
//! - **`file_formats`** — binary/CSV matrix files and model checkpoints.
//!
//! ```bash
//! cargo run --release --example grouped_encoding
//! ```
//!
//! The `sparsekit` binary exposes the same machinery as subcommands
//! (`convert`, `energy-sweep`, `gemm-bench`, `train-demo`, `verify`,
//! `registry-dump`); see the crate README.

pub mod cli;
pub mod dispatch;
pub mod error;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod nmg;
pub mod scalar;
pub mod sparsify;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::{Axis, DenseMatrix, LayoutTag, Matrix};
pub use scalar::{Dtype, Scalar};
