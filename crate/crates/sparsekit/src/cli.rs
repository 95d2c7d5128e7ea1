//! Command-line surface: conversion, energy sweeps, correctness-gated GEMM
//! benchmarks, the pruning demo, and the verification suites.
//!
//! Every flag can also come from a JSON config file (`--config path`);
//! flags win over config values. All commands are deterministic for a
//! fixed `--seed`, apart from wall-clock timing columns.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O
//! error.

use crate::dispatch::Registry;
use crate::error::{Error, Result};
use crate::kernels::{dense_gemm_tiled, max_relative_error, nmg_spmm, time_gemm, GemmTiling};
use crate::matrix::{Axis, DenseMatrix, Matrix};
use crate::nmg::{self, ConversionAlgorithm, NmgFormat};
use crate::scalar::Dtype;
use crate::sparsify::{apply, SparsifierSpec};
use crate::train::{
    finetune, run_schedule, synthetic_regression, Mlp, MlpConfig, PruneSchedule, PruneScope,
    TrainerConfig, TrainingLog,
};
use crate::verify;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sparsekit",
    about = "Structured-sparsity toolkit: grouped n:m encoding, sparse GEMM, pruning demos",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dense matrix file (.stnm or .csv) to the grouped format.
    Convert(ConvertArgs),
    /// Mean preserved energy per sparsity structure over seeded matrices.
    EnergySweep(EnergySweepArgs),
    /// Time the GEMM kernels across formats (correctness-gated).
    GemmBench(GemmBenchArgs),
    /// Train the demo MLP densely, then run the three pruning schedules.
    TrainDemo(TrainDemoArgs),
    /// Run the verification suites and print a pass/fail table.
    Verify(VerifyArgs),
    /// Print the contents of the built-in dispatch registry.
    RegistryDump,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let mut stdout = std::io::stdout();
    let result = match cli.command {
        Command::Convert(args) => args.resolve().and_then(|c| cmd_convert(&c, &mut stdout)),
        Command::EnergySweep(args) => {
            args.resolve().and_then(|c| cmd_energy_sweep(&c, &mut stdout))
        }
        Command::GemmBench(args) => args.resolve().and_then(|c| cmd_gemm_bench(&c, &mut stdout)),
        Command::TrainDemo(args) => args.resolve().and_then(|c| cmd_train_demo(&c, &mut stdout)),
        Command::Verify(args) => cmd_verify(args.seed, &mut stdout),
        Command::RegistryDump => {
            let registry = Registry::<f32>::with_builtins(GemmTiling::default());
            writeln!(stdout, "{}", registry.dump()).map(|_| 0).map_err(Error::from)
        }
    };
    match result {
        Ok(code) => code,
        Err(e @ Error::Io(_)) => {
            eprintln!("error: {e}");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config<C: for<'de> Deserialize<'de>>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    match s {
        "rows" => Ok(Axis::Rows),
        "cols" => Ok(Axis::Cols),
        other => Err(format!("axis must be rows or cols, got {other}")),
    }
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ConvertArgs {
    /// Input matrix (.stnm binary or .csv)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output grouped file (.stng)
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    g: Option<usize>,
    /// greedy or greedy-exchange
    #[arg(long)]
    algorithm: Option<String>,
    /// Axis carrying the m-blocks
    #[arg(long, value_parser = parse_axis)]
    sparse_dim: Option<Axis>,
    /// Axis grouped into chunks
    #[arg(long, value_parser = parse_axis)]
    group_dim: Option<Axis>,
    /// Zero-pad the matrix up to the next valid shape
    #[arg(long)]
    pad: bool,
    /// Value type when reading CSV input (single or double)
    #[arg(long)]
    dtype: Option<String>,
    /// JSON config file; flags win over its values
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub n: usize,
    pub m: usize,
    pub g: usize,
    pub algorithm: String,
    pub sparse_dim: Axis,
    pub group_dim: Axis,
    pub pad: bool,
    pub dtype: String,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        ConvertConfig {
            input: PathBuf::new(),
            output: PathBuf::new(),
            n: 2,
            m: 4,
            g: 4,
            algorithm: "greedy".into(),
            sparse_dim: Axis::Cols,
            group_dim: Axis::Rows,
            pad: false,
            dtype: "single".into(),
        }
    }
}

impl ConvertArgs {
    fn resolve(self) -> Result<ConvertConfig> {
        let mut cfg: ConvertConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => ConvertConfig::default(),
        };
        if let Some(v) = self.input {
            cfg.input = v;
        }
        if let Some(v) = self.output {
            cfg.output = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.g {
            cfg.g = v;
        }
        if let Some(v) = self.algorithm {
            cfg.algorithm = v;
        }
        if let Some(v) = self.sparse_dim {
            cfg.sparse_dim = v;
        }
        if let Some(v) = self.group_dim {
            cfg.group_dim = v;
        }
        if self.pad {
            cfg.pad = true;
        }
        if let Some(v) = self.dtype {
            cfg.dtype = v;
        }
        if cfg.input.as_os_str().is_empty() || cfg.output.as_os_str().is_empty() {
            return Err(Error::InvalidParameter(
                "convert needs --input and --output".into(),
            ));
        }
        Ok(cfg)
    }
}

fn parse_algorithm(name: &str) -> Result<ConversionAlgorithm> {
    match name {
        "greedy" => Ok(ConversionAlgorithm::Greedy),
        "greedy-exchange" => Ok(ConversionAlgorithm::GreedyExchange),
        other => Err(Error::InvalidParameter(format!(
            "algorithm must be greedy or greedy-exchange, got {other}"
        ))),
    }
}

fn parse_dtype(name: &str) -> Result<Dtype> {
    match name {
        "single" => Ok(Dtype::Single),
        "double" => Ok(Dtype::Double),
        other => Err(Error::InvalidParameter(format!(
            "dtype must be single or double, got {other}"
        ))),
    }
}

fn convert_typed<T: crate::scalar::Scalar>(
    x: DenseMatrix<T>,
    cfg: &ConvertConfig,
    out: &mut dyn Write,
) -> Result<()> {
    let fmt = NmgFormat::new(cfg.n, cfg.m, cfg.g, cfg.sparse_dim, cfg.group_dim)?;
    let algorithm = parse_algorithm(&cfg.algorithm)?;
    let original_shape = x.shape();
    let x = if fmt.check_divisibility(x.rows(), x.cols()).is_err() && cfg.pad {
        let (pr, pc) = fmt.padded_shape(x.rows(), x.cols());
        writeln!(
            out,
            "padding {}x{} -> {pr}x{pc}",
            original_shape.0, original_shape.1
        )?;
        x.pad_to(pr, pc)?
    } else {
        fmt.check_divisibility(x.rows(), x.cols())?;
        x
    };
    let encoded = nmg::from_dense(&x, fmt, algorithm)?;
    crate::io::write_grouped(&cfg.output, &encoded)?;
    let decoded = encoded.to_dense();
    let sparsity = Matrix::Dense(decoded.clone()).sparsity();
    let energy = crate::matrix::energy(&decoded, &x)?;
    writeln!(
        out,
        "wrote {} ({}:{}:{}, {} algorithm)",
        cfg.output.display(),
        cfg.n,
        cfg.m,
        cfg.g,
        cfg.algorithm
    )?;
    writeln!(out, "achieved sparsity {sparsity}")?;
    writeln!(out, "preserved energy {energy}")?;
    Ok(())
}

pub fn cmd_convert(cfg: &ConvertConfig, out: &mut dyn Write) -> Result<i32> {
    let is_csv = cfg
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        match parse_dtype(&cfg.dtype)? {
            Dtype::Single => convert_typed(crate::io::read_csv::<f32>(&cfg.input)?, cfg, out)?,
            Dtype::Double => convert_typed(crate::io::read_csv::<f64>(&cfg.input)?, cfg, out)?,
        }
    } else {
        match crate::io::read_dense(&cfg.input)? {
            crate::io::AnyDense::Single(x) => convert_typed(x, cfg, out)?,
            crate::io::AnyDense::Double(x) => convert_typed(x, cfg, out)?,
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// energy-sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EnergySweepArgs {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// n:m pairs, e.g. 1:2,2:4,1:4,1:8
    #[arg(long)]
    pairs: Option<String>,
    /// group sizes for the grouped format, e.g. 1,4,16
    #[arg(long)]
    g_list: Option<String>,
    /// block shape for blocked pruning, e.g. 4x4
    #[arg(long)]
    block: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySweepConfig {
    pub rows: usize,
    pub cols: usize,
    pub trials: usize,
    pub seed: u64,
    pub pairs: String,
    pub g_list: String,
    pub block: String,
    pub out: PathBuf,
}

impl Default for EnergySweepConfig {
    fn default() -> Self {
        EnergySweepConfig {
            rows: 768,
            cols: 3072,
            trials: 3,
            seed: 42,
            pairs: "1:2,2:4,1:4,1:8".into(),
            g_list: "1,4,16".into(),
            block: "4x4".into(),
            out: PathBuf::from("energy_sweep.csv"),
        }
    }
}

impl EnergySweepArgs {
    fn resolve(self) -> Result<EnergySweepConfig> {
        let mut cfg: EnergySweepConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => EnergySweepConfig::default(),
        };
        if let Some(v) = self.rows {
            cfg.rows = v;
        }
        if let Some(v) = self.cols {
            cfg.cols = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.pairs {
            cfg.pairs = v;
        }
        if let Some(v) = self.g_list {
            cfg.g_list = v;
        }
        if let Some(v) = self.block {
            cfg.block = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if cfg.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        Ok(cfg)
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|p| {
            let (n, m) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::InvalidParameter(format!("bad n:m pair {p}")))?;
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("bad n:m pair {p}")))
            };
            Ok((parse(n)?, parse(m)?))
        })
        .collect()
}

fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad list entry {v}")))
        })
        .collect()
}

fn parse_block(text: &str) -> Result<(usize, usize)> {
    let (r, c) = text
        .split_once('x')
        .ok_or_else(|| Error::InvalidParameter(format!("bad block shape {text}")))?;
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::InvalidParameter(format!("bad block shape {text}")))
    };
    Ok((parse(r)?, parse(c)?))
}

pub fn cmd_energy_sweep(cfg: &EnergySweepConfig, out: &mut dyn Write) -> Result<i32> {
    let pairs = parse_pairs(&cfg.pairs)?;
    let g_list = parse_list(&cfg.g_list)?;
    let (block_rows, block_cols) = parse_block(&cfg.block)?;
    let mut csv = String::from("sparsity,format,n,m,g,trials,mean_energy\n");

    let mean_energy = |spec: &SparsifierSpec| -> Result<f64> {
        let mut total = 0.0;
        for t in 0..cfg.trials {
            let x = DenseMatrix::<f64>::gaussian(cfg.rows, cfg.cols, cfg.seed + t as u64);
            let pruned = apply(spec, &x)?.to_dense();
            total += crate::matrix::energy(&pruned, &x)?;
        }
        Ok(total / cfg.trials as f64)
    };

    // keep-all reference point
    csv.push_str(&format!("0,keep_all,,,,{},1\n", cfg.trials));
    for &(n, m) in &pairs {
        let sparsity = 1.0 - n as f64 / m as f64;
        let e = mean_energy(&SparsifierSpec::ScalarFraction { fraction: sparsity })?;
        csv.push_str(&format!("{sparsity},unstructured,,,,{},{e}\n", cfg.trials));
        let e = mean_energy(&SparsifierSpec::PerBlockFraction {
            n,
            m,
            axis: Axis::Cols,
        })?;
        csv.push_str(&format!("{sparsity},n_m,{n},{m},,{},{e}\n", cfg.trials));
        for &g in &g_list {
            let e = mean_energy(&SparsifierSpec::GroupedNm {
                n,
                m,
                g,
                sparse_dim: Axis::Cols,
                group_dim: Axis::Rows,
            })?;
            csv.push_str(&format!("{sparsity},n_m_g,{n},{m},{g},{},{e}\n", cfg.trials));
        }
        let e = mean_energy(&SparsifierSpec::BlockwiseFraction {
            fraction: sparsity,
            block_rows,
            block_cols,
        })?;
        csv.push_str(&format!(
            "{sparsity},blocked,{block_rows},{block_cols},,{},{e}\n",
            cfg.trials
        ));
    }
    std::fs::write(&cfg.out, &csv)?;
    writeln!(out, "wrote {} ({} trials per point)", cfg.out.display(), cfg.trials)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// gemm-bench
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GemmBenchArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Output columns of the GEMM (N)
    #[arg(long)]
    n_cols: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated formats: dense and/or n:m:g triples (e.g. 1:2:16)
    #[arg(long)]
    formats: Option<String>,
    /// Register tile width (sweep flag for tuning)
    #[arg(long)]
    nr: Option<usize>,
    #[arg(long)]
    kc: Option<usize>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GemmBenchConfig {
    pub m: usize,
    pub k: usize,
    pub n_cols: usize,
    pub reps: usize,
    pub threads: usize,
    pub seed: u64,
    pub formats: String,
    pub nr: usize,
    pub kc: usize,
    pub nc: usize,
    pub out: PathBuf,
}

impl Default for GemmBenchConfig {
    fn default() -> Self {
        let tiling = GemmTiling::default();
        GemmBenchConfig {
            m: 768,
            k: 3072,
            n_cols: 4096,
            reps: 5,
            threads: 0, // 0 = all available cores
            seed: 42,
            formats: "dense,1:2:16,2:6:4,1:8:16".into(),
            nr: tiling.nr,
            kc: tiling.kc,
            nc: tiling.nc,
            out: PathBuf::from("gemm_bench.csv"),
        }
    }
}

impl GemmBenchArgs {
    fn resolve(self) -> Result<GemmBenchConfig> {
        let mut cfg: GemmBenchConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => GemmBenchConfig::default(),
        };
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.n_cols {
            cfg.n_cols = v;
        }
        if let Some(v) = self.reps {
            cfg.reps = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.formats {
            cfg.formats = v;
        }
        if let Some(v) = self.nr {
            cfg.nr = v;
        }
        if let Some(v) = self.kc {
            cfg.kc = v;
        }
        if let Some(v) = self.nc {
            cfg.nc = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if cfg.reps < 3 {
            return Err(Error::InvalidParameter("bench needs --reps >= 3".into()));
        }
        Ok(cfg)
    }
}

enum BenchFormat {
    Dense,
    Nmg { n: usize, m: usize, g: usize },
}

fn parse_formats(text: &str) -> Result<Vec<BenchFormat>> {
    text.split(',')
        .map(|f| {
            let f = f.trim();
            if f == "dense" {
                return Ok(BenchFormat::Dense);
            }
            let parts: Vec<&str> = f.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidParameter(format!(
                    "format must be dense or n:m:g, got {f}"
                )));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("bad format {f}")))
            };
            Ok(BenchFormat::Nmg {
                n: parse(parts[0])?,
                m: parse(parts[1])?,
                g: parse(parts[2])?,
            })
        })
        .collect()
}

pub fn cmd_gemm_bench(cfg: &GemmBenchConfig, out: &mut dyn Write) -> Result<i32> {
    let formats = parse_formats(&cfg.formats)?;
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
    } else {
        cfg.threads
    };
    let tiling = GemmTiling {
        nr: cfg.nr,
        kc: cfg.kc,
        nc: cfg.nc,
        threads,
        ..Default::default()
    };
    tiling.validate()?;
    let (m, k, n) = (cfg.m, cfg.k, cfg.n_cols);
    let a = DenseMatrix::<f32>::gaussian(m, k, cfg.seed);
    let b = DenseMatrix::<f32>::gaussian(k, n, cfg.seed + 1);
    let b64: DenseMatrix<f64> = b.cast();

    let mut csv = String::from("shape,format,n,m,g,sparsity,reps,median_s,min_s,gflops\n");
    let shape = format!("{m}x{k}x{n}");
    for format in formats {
        let line = match format {
            BenchFormat::Dense => {
                let report = time_gemm(
                    || {
                        dense_gemm_tiled(&a, &b, tiling).unwrap();
                    },
                    (m, k, n),
                    cfg.reps,
                )?;
                format!(
                    "{shape},dense,,,,0,{},{},{},{:.3}\n",
                    report.reps, report.median_s, report.min_s, report.gflops
                )
            }
            BenchFormat::Nmg { n: fn_, m: fm, g: fg } => {
                let fmt = NmgFormat::new(fn_, fm, fg, Axis::Cols, Axis::Rows)?;
                let (pm, pk) = fmt.padded_shape(m, k);
                let padded = if (pm, pk) != (m, k) {
                    writeln!(out, "# {fn_}:{fm}:{fg}: padding A {m}x{k} -> {pm}x{pk}")?;
                    a.pad_to(pm, pk)?
                } else {
                    a.clone()
                };
                let enc = nmg::from_dense_greedy(&padded, fmt)?;
                // correctness gate before any timing
                let full = nmg_spmm(&enc, &b, tiling)?;
                let cropped = full.crop_to(m, n)?;
                let enc_dense64: DenseMatrix<f64> = enc.to_dense().crop_to(m, k)?.cast();
                let check = dense_gemm_tiled(&enc_dense64, &b64, tiling)?;
                let err = max_relative_error(&cropped, &check, &enc_dense64, &b64);
                if err > 1e-4 {
                    writeln!(
                        out,
                        "correctness gate FAILED for {fn_}:{fm}:{fg}: relative error {err:.3e}"
                    )?;
                    return Ok(1);
                }
                let report = time_gemm(
                    || {
                        nmg_spmm(&enc, &b, tiling).unwrap();
                    },
                    (m, k, n),
                    cfg.reps,
                )?;
                let sparsity = 1.0 - fn_ as f64 / fm as f64;
                format!(
                    "{shape},nmg,{fn_},{fm},{fg},{sparsity},{},{},{},{:.3}\n",
                    report.reps, report.median_s, report.min_s, report.gflops
                )
            }
        };
        write!(out, "{line}")?;
        csv.push_str(&line);
    }
    std::fs::write(&cfg.out, &csv)?;
    writeln!(out, "wrote {}", cfg.out.display())?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// train-demo
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainDemoArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs_dense: Option<usize>,
    #[arg(long)]
    epochs_per_phase: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Target sparsity for all three schedules
    #[arg(long)]
    target: Option<f64>,
    /// Pool all layers when thresholding (global magnitude pruning)
    #[arg(long)]
    global: bool,
    /// Training-set size of the synthetic task
    #[arg(long)]
    samples: Option<usize>,
    /// Noise level of the synthetic targets
    #[arg(long)]
    noise: Option<f64>,
    /// Prefix for the emitted CSV logs
    #[arg(long)]
    out_prefix: Option<String>,
    /// Directory for the final iterative-schedule checkpoint
    #[arg(long)]
    save_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainDemoConfig {
    pub seed: u64,
    pub epochs_dense: usize,
    pub epochs_per_phase: usize,
    pub lr: f64,
    pub target: f64,
    pub global: bool,
    pub samples: usize,
    pub noise: f64,
    pub out_prefix: String,
    pub save_dir: Option<PathBuf>,
}

impl Default for TrainDemoConfig {
    fn default() -> Self {
        TrainDemoConfig {
            seed: 42,
            epochs_dense: 400,
            epochs_per_phase: 150,
            lr: 0.1,
            target: 0.5,
            global: false,
            samples: 1024,
            noise: 0.3,
            out_prefix: "train_demo".into(),
            save_dir: None,
        }
    }
}

impl TrainDemoArgs {
    fn resolve(self) -> Result<TrainDemoConfig> {
        let mut cfg: TrainDemoConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => TrainDemoConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs_dense {
            cfg.epochs_dense = v;
        }
        if let Some(v) = self.epochs_per_phase {
            cfg.epochs_per_phase = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.target {
            cfg.target = v;
        }
        if self.global {
            cfg.global = true;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
        }
        if let Some(v) = self.noise {
            cfg.noise = v;
        }
        if let Some(v) = self.out_prefix {
            cfg.out_prefix = v;
        }
        if let Some(v) = self.save_dir {
            cfg.save_dir = Some(v);
        }
        if !(0.0..1.0).contains(&cfg.target) {
            return Err(Error::InvalidParameter(
                "target sparsity must be in [0,1)".into(),
            ));
        }
        Ok(cfg)
    }
}

/// Outcome of the pruning demo; exposed for tests and callers.
pub struct TrainDemoOutcome {
    pub dense_loss: f64,
    pub schedule_losses: Vec<(String, f64)>,
    pub logs: Vec<(String, TrainingLog)>,
}

pub fn run_train_demo(cfg: &TrainDemoConfig) -> Result<TrainDemoOutcome> {
    let registry = Registry::<f64>::with_builtins(GemmTiling::default());
    let mlp_cfg = MlpConfig {
        seed: cfg.seed,
        samples: cfg.samples,
        noise: cfg.noise,
        ..Default::default()
    };
    let data = synthetic_regression::<f64>(&mlp_cfg);
    let scope = if cfg.global {
        PruneScope::Global
    } else {
        PruneScope::Local
    };

    // dense pretraining
    let mut model = Mlp::<f64>::new(&mlp_cfg);
    let mut dense_log = TrainingLog::default();
    let mut step = 0usize;
    let dense_loss = finetune(
        &mut model,
        &registry,
        &data,
        cfg.epochs_dense,
        cfg.lr,
        "dense",
        &mut step,
        &mut dense_log,
    )?;
    let snapshot: Vec<(crate::train::NodeId, Matrix<f64>)> = model
        .weight_ids()
        .iter()
        .map(|&id| (id, model.graph.parameter_value(id).unwrap().clone()))
        .collect();

    let iterative = PruneSchedule::Iterative {
        start: 0.1,
        step: 0.1,
        target: cfg.target,
        epochs_per_step: cfg.epochs_per_phase,
    };
    let iterative_levels = iterative.pruning_levels().len();
    let schedules: Vec<(String, PruneSchedule)> = vec![
        ("oneshot".into(), PruneSchedule::OneShot { target: cfg.target }),
        ("iterative".into(), iterative),
        (
            "layerwise".into(),
            PruneSchedule::LayerWise {
                target: cfg.target,
                epochs_per_layer: cfg.epochs_per_phase,
            },
        ),
    ];

    let mut logs = vec![("dense".to_string(), dense_log)];
    let mut schedule_losses = Vec::new();
    for (name, schedule) in schedules {
        for (id, value) in &snapshot {
            model.graph.set_parameter_value(*id, value.clone())?;
        }
        let trainer = TrainerConfig {
            lr: cfg.lr,
            // one-shot gets the same total fine-tuning budget as iterative
            epochs: cfg.epochs_per_phase * iterative_levels,
            scope,
        };
        let log = run_schedule(&mut model, &registry, &data, &schedule, &trainer)?;
        let final_loss = log.final_loss().unwrap_or(f64::NAN);
        schedule_losses.push((name.clone(), final_loss));
        logs.push((name.clone(), log));
        if name == "iterative" {
            if let Some(dir) = &cfg.save_dir {
                crate::train::save_checkpoint(&model, dir)?;
            }
        }
    }
    Ok(TrainDemoOutcome {
        dense_loss,
        schedule_losses,
        logs,
    })
}

pub fn cmd_train_demo(cfg: &TrainDemoConfig, out: &mut dyn Write) -> Result<i32> {
    let outcome = run_train_demo(cfg)?;
    for (name, log) in &outcome.logs {
        let path = format!("{}_{name}.csv", cfg.out_prefix);
        std::fs::write(&path, log.to_csv())?;
        writeln!(out, "wrote {path}")?;
    }
    writeln!(out, "dense final loss {}", outcome.dense_loss)?;
    for (name, loss) in &outcome.schedule_losses {
        writeln!(
            out,
            "{name} final loss {loss} (ratio to dense {:.4})",
            loss / outcome.dense_loss
        )?;
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

pub fn cmd_verify(seed: u64, out: &mut dyn Write) -> Result<i32> {
    let (results, all_passed) = verify::run_all(seed);
    writeln!(out, "{:<34} {:<6} details", "suite", "result")?;
    for r in &results {
        writeln!(
            out,
            "{:<34} {:<6} {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.details
        )?;
    }
    Ok(if all_passed { 0 } else { 1 })
}
