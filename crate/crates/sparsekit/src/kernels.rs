//! Matrix-multiplication kernels: a cache-blocked dense reference, a CSR
//! sparse-dense baseline, and the register-blocked grouped-n:m sparse-dense
//! GEMM.
//!
//! All kernels accumulate each output element along ascending k, so results
//! are bit-identical across tilings and thread counts (threads own disjoint
//! output row ranges and never share accumulators).

use crate::error::{Error, Result};
use crate::matrix::{Axis, CsrMatrix, DenseMatrix};
use crate::nmg::GroupedNMMatrix;
use crate::scalar::Scalar;
use std::time::Instant;

/// Cache- and register-blocking parameters.
///
/// `mc` splits output rows for the dense kernel, `kc`/`nc` are the B-panel
/// block sizes, `nr` is the register-tile width (a multiple of the 8-wide
/// vector granule). B panels are packed into nr-wide column tiles before
/// the inner loops run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmTiling {
    pub mc: usize,
    pub kc: usize,
    pub nc: usize,
    pub nr: usize,
    pub threads: usize,
}

impl Default for GemmTiling {
    fn default() -> Self {
        GemmTiling {
            mc: 64,
            kc: 256,
            nc: 4096,
            nr: 16,
            threads: 1,
        }
    }
}

impl GemmTiling {
    /// Default tiling with the given thread count.
    pub fn with_threads(threads: usize) -> Self {
        GemmTiling {
            threads,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc == 0 || self.kc == 0 || self.nc == 0 || self.nr == 0 || self.threads == 0 {
            return Err(Error::InvalidParameter(
                "tiling parameters must be positive".into(),
            ));
        }
        if self.nr % 8 != 0 {
            return Err(Error::InvalidParameter(format!(
                "nr must be a multiple of the vector granule 8, got {}",
                self.nr
            )));
        }
        Ok(())
    }
}

fn check_mul_shapes(
    a: (usize, usize),
    b: (usize, usize),
    context: &str,
) -> Result<(usize, usize, usize)> {
    if a.1 != b.0 {
        return Err(Error::ShapeMismatch {
            expected: (a.1, 0),
            got: b,
            context: context.into(),
        });
    }
    Ok((a.0, a.1, b.1))
}

/// Splits `c` into per-thread row ranges aligned to `row_align` rows.
/// Returns (start_row, slice) pairs; every slice covers whole rows.
fn split_rows<'a, T>(
    c: &'a mut [T],
    total_rows: usize,
    row_width: usize,
    row_align: usize,
    threads: usize,
) -> Vec<(usize, &'a mut [T])> {
    let units = total_rows / row_align;
    let threads = threads.min(units.max(1));
    let base = units / threads;
    let extra = units % threads;
    let mut out = Vec::with_capacity(threads);
    let mut rest = c;
    let mut row = 0usize;
    for t in 0..threads {
        let my_units = base + usize::from(t < extra);
        let my_rows = if t + 1 == threads {
            total_rows - row
        } else {
            my_units * row_align
        };
        let (head, tail) = rest.split_at_mut(my_rows * row_width);
        out.push((row, head));
        rest = tail;
        row += my_rows;
    }
    out
}

// ---------------------------------------------------------------------------
// Dense reference GEMM
// ---------------------------------------------------------------------------

/// Dense GEMM with the default tiling, single-threaded.
pub fn dense_gemm<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    dense_gemm_tiled(a, b, GemmTiling::default())
}

/// Cache-blocked dense GEMM. Accumulation per output element is ascending
/// in k for every tiling, so the result matches the naive triple loop
/// exactly.
pub fn dense_gemm_tiled<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    tiling: GemmTiling,
) -> Result<DenseMatrix<T>> {
    tiling.validate()?;
    let (m, k, n) = check_mul_shapes(a.shape(), b.shape(), "dense_gemm")?;
    let mut c = DenseMatrix::zeros(m, n);
    let av = a.as_slice();
    let bv = b.as_slice();
    let cv = c.as_mut_slice();

    for jc in (0..n).step_by(tiling.nc) {
        let jw = tiling.nc.min(n - jc);
        for kc0 in (0..k).step_by(tiling.kc) {
            let kw = tiling.kc.min(k - kc0);
            let parts = split_rows(cv, m, n, tiling.mc.min(m), tiling.threads);
            std::thread::scope(|s| {
                for (row0, chunk) in parts {
                    s.spawn(move || {
                        let rows = chunk.len() / n;
                        for il in 0..rows {
                            let i = row0 + il;
                            let crow = &mut chunk[il * n + jc..il * n + jc + jw];
                            for kk in kc0..kc0 + kw {
                                let aik = av[i * k + kk];
                                let brow = &bv[kk * n + jc..kk * n + jc + jw];
                                for (cj, bj) in crow.iter_mut().zip(brow) {
                                    *cj += aik * *bj;
                                }
                            }
                        }
                    });
                }
            });
        }
    }
    Ok(c)
}

/// Naive triple-loop GEMM; correctness oracle for the blocked kernels.
pub fn naive_gemm<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (m, k, n) = check_mul_shapes(a.shape(), b.shape(), "naive_gemm")?;
    let mut c = DenseMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut sum = T::zero();
            for kk in 0..k {
                sum += a.get(i, kk) * b.get(kk, j);
            }
            c.set(i, j, sum);
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// CSR sparse-dense
// ---------------------------------------------------------------------------

/// CSR x dense. Stored entries stream row by row, columns ascending.
pub fn csr_spmm<T: Scalar>(a: &CsrMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (m, _, n) = check_mul_shapes(a.shape(), b.shape(), "csr_spmm")?;
    let mut c = DenseMatrix::zeros(m, n);
    let cv = c.as_mut_slice();
    let bv = b.as_slice();
    for i in 0..m {
        let crow = &mut cv[i * n..(i + 1) * n];
        for (kk, v) in a.row_entries(i) {
            let brow = &bv[kk * n..kk * n + n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += v * *bj;
            }
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Grouped n:m sparse-dense GEMM
// ---------------------------------------------------------------------------

/// Grouped n:m sparse-dense GEMM: C = A * B where A is encoded with its
/// sparse (m-blocked) axis as the contraction axis.
///
/// Per chunk, patterns stream in table order; each pattern boundary
/// refreshes exactly one of the n held B-row tiles (adjacent patterns
/// differ in one position); each block broadcasts its n packed values
/// against the held tiles and accumulates into the register tile of its
/// original output row, recovered from the stored block index.
pub fn nmg_spmm<T: Scalar>(
    a: &GroupedNMMatrix<T>,
    b: &DenseMatrix<T>,
    tiling: GemmTiling,
) -> Result<DenseMatrix<T>> {
    Ok(nmg_spmm_inner::<T, false>(a, b, tiling)?.0)
}

/// Same kernel with an instrumented multiply counter: returns the number
/// of useful multiply-accumulates (padding lanes excluded).
pub fn nmg_spmm_counted<T: Scalar>(
    a: &GroupedNMMatrix<T>,
    b: &DenseMatrix<T>,
    tiling: GemmTiling,
) -> Result<(DenseMatrix<T>, u64)> {
    nmg_spmm_inner::<T, true>(a, b, tiling)
}

fn nmg_spmm_inner<T: Scalar, const COUNT: bool>(
    a: &GroupedNMMatrix<T>,
    b: &DenseMatrix<T>,
    tiling: GemmTiling,
) -> Result<(DenseMatrix<T>, u64)> {
    tiling.validate()?;
    if a.format().sparse_dim != Axis::Cols {
        return Err(Error::InvalidParameter(
            "nmg_spmm needs the left operand's sparse axis on its columns (the contraction axis)"
                .into(),
        ));
    }
    let (m_rows, k, n) = check_mul_shapes(a.shape(), b.shape(), "nmg_spmm")?;
    let fmt = a.format();
    let width = fmt.chunk_width();
    let kbands = k / fmt.m;
    let nr = tiling.nr;

    let mut c = DenseMatrix::zeros(m_rows, n);
    let cv = c.as_mut_slice();
    let bv = b.as_slice();

    // kc rounded down to whole m-blocks so chunks never straddle panels
    let kc = (tiling.kc / fmt.m * fmt.m).max(fmt.m);

    // one packed B panel (kc x nc, nr-tiled with zero-padded lanes), shared
    // read-only by all threads
    let max_kw = kc.min(k);
    let max_tiles = tiling.nc.min(n).div_ceil(nr);
    let mut packed: Vec<T> = vec![T::zero(); max_kw * max_tiles * nr];
    let mut total_count: u64 = 0;

    for jc in (0..n).step_by(tiling.nc) {
        let jw = tiling.nc.min(n - jc);
        let tiles = jw.div_ceil(nr);
        for kc0 in (0..k).step_by(kc) {
            let kw = kc.min(k - kc0);
            // pack: packed[(t * kw + kl) * nr + l] = B[kc0 + kl][jc + t*nr + l]
            for t in 0..tiles {
                let j0 = jc + t * nr;
                let tw = nr.min(n - j0);
                for kl in 0..kw {
                    let dst = &mut packed[(t * kw + kl) * nr..(t * kw + kl) * nr + nr];
                    let src = &bv[(kc0 + kl) * n + j0..(kc0 + kl) * n + j0 + tw];
                    dst[..tw].copy_from_slice(src);
                    dst[tw..].iter_mut().for_each(|v| *v = T::zero());
                }
            }
            let band0 = kc0 / fmt.m;
            let bands = kw / fmt.m;
            let packed_ref = &packed;

            let parts = split_rows(cv, m_rows, n, width, tiling.threads);
            let counts = std::thread::scope(|s| {
                let handles: Vec<_> = parts
                    .into_iter()
                    .map(|(row0, chunk)| {
                        s.spawn(move || {
                            nmg_panel_kernel::<T, COUNT>(
                                a, packed_ref, chunk, row0, jc, jw, tiles, nr, band0, bands, kw,
                                kbands, n,
                            )
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).sum::<u64>()
            });
            if COUNT {
                total_count += counts;
            }
        }
    }
    Ok((c, total_count))
}

/// Work of one thread on one packed (kc x nc) panel: its row groups, all
/// nr tiles, all k-bands of the panel.
#[allow(clippy::too_many_arguments)]
fn nmg_panel_kernel<T: Scalar, const COUNT: bool>(
    a: &GroupedNMMatrix<T>,
    packed: &[T],
    c_chunk: &mut [T],
    row0: usize,
    jc: usize,
    jw: usize,
    tiles: usize,
    nr: usize,
    band0: usize,
    bands: usize,
    kw: usize,
    kbands: usize,
    n: usize,
) -> u64 {
    let fmt = a.format();
    let table = a.table();
    let pat_n = fmt.n;
    let g = fmt.g;
    let pcount = fmt.pattern_count();
    let width = fmt.chunk_width();
    let m = fmt.m;
    let values = a.values();
    let col_index = a.col_index();

    let my_rgroups = c_chunk.len() / n / width;
    let rg0 = row0 / width;
    let mut buf: Vec<T> = vec![T::zero(); width * nr];
    let mut slot_koff = vec![0usize; pat_n];
    let mut row_off = vec![0usize; pat_n];
    let mut count: u64 = 0;

    for rgl in 0..my_rgroups {
        let rg = rg0 + rgl;
        for t in 0..tiles {
            let j0 = jc + t * nr;
            let tw = nr.min(jc + jw - j0);
            let tkw = t * kw;
            // load accumulators from C (C starts zeroed)
            for r in 0..width {
                let crow = &c_chunk[(rgl * width + r) * n + j0..(rgl * width + r) * n + j0 + tw];
                buf[r * nr..r * nr + tw].copy_from_slice(crow);
                buf[r * nr + tw..(r + 1) * nr].iter_mut().for_each(|v| *v = T::zero());
            }
            for kb in 0..bands {
                let chunk_id = rg * kbands + (band0 + kb);
                let vals_chunk = &values[chunk_id * width * pat_n..(chunk_id + 1) * width * pat_n];
                let idx_chunk = &col_index[chunk_id * width..(chunk_id + 1) * width];
                for p in 0..pcount {
                    // pattern boundary: initialize all n held B rows for the
                    // first pattern, then refresh exactly one per transition
                    if p == 0 {
                        for (j, &pos) in table.pattern(0).iter().enumerate() {
                            slot_koff[j] = kb * m + pos as usize;
                        }
                    } else {
                        let (_, added) = table.transition(p);
                        slot_koff[table.transition_slot(p)] = kb * m + added as usize;
                    }
                    // resolve the pattern's packed B rows once for all g blocks
                    for (j, off) in row_off.iter_mut().enumerate() {
                        *off = (tkw + slot_koff[table.slot(p, j)]) * nr;
                    }
                    for tg in 0..g {
                        let s = p * g + tg;
                        let vals = &vals_chunk[s * pat_n..s * pat_n + pat_n];
                        let dst = idx_chunk[s] as usize * nr;
                        let acc = &mut buf[dst..dst + nr];
                        match pat_n {
                            1 => {
                                let v0 = vals[0];
                                let b0 = &packed[row_off[0]..row_off[0] + nr];
                                for (al, b0l) in acc.iter_mut().zip(b0) {
                                    *al += v0 * *b0l;
                                }
                            }
                            2 => {
                                let (v0, v1) = (vals[0], vals[1]);
                                let b0 = &packed[row_off[0]..row_off[0] + nr];
                                let b1 = &packed[row_off[1]..row_off[1] + nr];
                                for ((al, b0l), b1l) in acc.iter_mut().zip(b0).zip(b1) {
                                    *al += v0 * *b0l + v1 * *b1l;
                                }
                            }
                            3 => {
                                let (v0, v1, v2) = (vals[0], vals[1], vals[2]);
                                let b0 = &packed[row_off[0]..row_off[0] + nr];
                                let b1 = &packed[row_off[1]..row_off[1] + nr];
                                let b2 = &packed[row_off[2]..row_off[2] + nr];
                                for (((al, b0l), b1l), b2l) in
                                    acc.iter_mut().zip(b0).zip(b1).zip(b2)
                                {
                                    *al += v0 * *b0l + v1 * *b1l + v2 * *b2l;
                                }
                            }
                            _ => {
                                for (j, &v) in vals.iter().enumerate() {
                                    let brow = &packed[row_off[j]..row_off[j] + nr];
                                    for (al, bl) in acc.iter_mut().zip(brow) {
                                        *al += v * *bl;
                                    }
                                }
                            }
                        }
                        if COUNT {
                            count += (pat_n * tw) as u64;
                        }
                    }
                }
            }
            // retire accumulators
            for r in 0..width {
                let crow = &mut c_chunk
                    [(rgl * width + r) * n + j0..(rgl * width + r) * n + j0 + tw];
                crow.copy_from_slice(&buf[r * nr..r * nr + tw]);
            }
        }
    }
    count
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

/// Wall-clock timing summary for one GEMM configuration. GFLOP/s counts
/// dense-equivalent 2*M*K*N flops regardless of format.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub reps: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub gflops: f64,
}

/// Runs `op` once as a discarded warmup, then `reps` timed repetitions,
/// reporting the median and minimum.
pub fn time_gemm(
    mut op: impl FnMut(),
    shape: (usize, usize, usize),
    reps: usize,
) -> Result<TimingReport> {
    if reps < 3 {
        return Err(Error::InvalidParameter(format!(
            "timing needs reps >= 3, got {reps}"
        )));
    }
    op(); // warmup
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        op();
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median_s = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        0.5 * (times[reps / 2 - 1] + times[reps / 2])
    };
    let min_s = times[0];
    let (m, k, n) = shape;
    let flops = 2.0 * m as f64 * k as f64 * n as f64;
    Ok(TimingReport {
        reps,
        median_s,
        min_s,
        gflops: flops / median_s / 1e9,
    })
}

/// Per-entry relative comparison of a kernel result against a double
/// precision oracle, scaled by the accumulation magnitude
/// max(|oracle|, ||A_i||_1 * max_k |B_kj|).
pub fn max_relative_error<T: Scalar>(
    result: &DenseMatrix<T>,
    oracle: &DenseMatrix<f64>,
    a_dec: &DenseMatrix<f64>,
    b: &DenseMatrix<f64>,
) -> f64 {
    assert_eq!(result.shape(), oracle.shape());
    let (m, n) = oracle.shape();
    let row_l1: Vec<f64> = (0..m).map(|i| a_dec.row(i).iter().map(|v| v.abs()).sum()).collect();
    let mut col_max = vec![0.0f64; n];
    for i in 0..b.rows() {
        for (j, v) in b.row(i).iter().enumerate() {
            col_max[j] = col_max[j].max(v.abs());
        }
    }
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            let got = result.get(i, j).as_f64();
            let want = oracle.get(i, j);
            let scale = want.abs().max(row_l1[i] * col_max[j]).max(1e-30);
            worst = worst.max((got - want).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmg::{self, NmgFormat};

    fn tiling(threads: usize) -> GemmTiling {
        GemmTiling {
            mc: 8,
            kc: 32,
            nc: 64,
            nr: 8,
            threads,
        }
    }

    #[test]
    fn dense_identity_and_zero() {
        let eye = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 1.0f64 } else { 0.0 });
        let b = DenseMatrix::<f64>::gaussian(3, 4, 1);
        assert_eq!(dense_gemm(&eye, &b).unwrap(), b);
        let zero = DenseMatrix::<f64>::zeros(2, 3);
        let c = dense_gemm(&zero, &DenseMatrix::gaussian(3, 5, 2)).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_matches_naive_exactly() {
        let a = DenseMatrix::<f64>::gaussian(8, 8, 3);
        let b = DenseMatrix::<f64>::gaussian(8, 8, 4);
        let blocked = dense_gemm_tiled(&a, &b, tiling(2)).unwrap();
        let naive = naive_gemm(&a, &b).unwrap();
        let diff = blocked
            .as_slice()
            .iter()
            .zip(naive.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-12, "max abs diff {diff}");
    }

    #[test]
    fn dense_shape_mismatch() {
        let a = DenseMatrix::<f64>::zeros(2, 3);
        let b = DenseMatrix::<f64>::zeros(4, 2);
        assert!(dense_gemm(&a, &b).is_err());
    }

    #[test]
    fn csr_empty_and_identity() {
        let empty =
            CsrMatrix::from_parts(2, 3, vec![0, 0, 0], vec![], Vec::<f64>::new()).unwrap();
        let b = DenseMatrix::<f64>::gaussian(3, 4, 5);
        let c = csr_spmm(&empty, &b).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 0.0));

        let eye = CsrMatrix::from_dense(&DenseMatrix::from_fn(3, 3, |i, j| {
            if i == j {
                1.0f64
            } else {
                0.0
            }
        }));
        assert_eq!(csr_spmm(&eye, &b).unwrap(), b);
    }

    #[test]
    fn csr_random_against_dense_oracle() {
        let a = crate::sparsify::apply(
            &crate::sparsify::SparsifierSpec::ScalarFraction { fraction: 0.9 },
            &DenseMatrix::<f64>::gaussian(64, 64, 6),
        )
        .unwrap()
        .to_dense();
        let b = DenseMatrix::<f64>::gaussian(64, 32, 7);
        let csr = CsrMatrix::from_dense(&a);
        let got = csr_spmm(&csr, &b).unwrap();
        let want = dense_gemm(&a, &b).unwrap();
        let err = max_relative_error(&got, &want, &a, &b);
        assert!(err <= 1e-10, "relative error {err}");
    }

    #[test]
    fn nmg_worked_example() {
        // A = [[2,0],[0,3]] as 1:2:1 with the sparse axis on columns
        let a_dense = DenseMatrix::new(2, 2, vec![2.0f64, 0.0, 0.0, 3.0]).unwrap();
        let fmt = NmgFormat::new(1, 2, 1, Axis::Cols, Axis::Rows).unwrap();
        let a = nmg::from_dense_greedy(&a_dense, fmt).unwrap();
        let b = DenseMatrix::new(2, 2, vec![1.0f64, 1.0, 1.0, 1.0]).unwrap();
        let c = nmg_spmm(&a, &b, tiling(1)).unwrap();
        assert_eq!(c, DenseMatrix::new(2, 2, vec![2.0, 2.0, 3.0, 3.0]).unwrap());
    }

    #[test]
    fn nmg_zero_b_gives_zero() {
        let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
        let a = nmg::from_dense_greedy(&DenseMatrix::<f64>::gaussian(8, 8, 8), fmt).unwrap();
        let b = DenseMatrix::<f64>::zeros(8, 5);
        let c = nmg_spmm(&a, &b, tiling(1)).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nmg_against_dense_oracle_random_shapes() {
        // deliberately awkward N values to exercise partial register tiles
        let cases = [
            (1usize, 2usize, 1usize, 4usize, 8usize, 7usize),
            (1, 4, 2, 16, 16, 9),
            (2, 4, 3, 36, 8, 33),
            (3, 6, 1, 40, 12, 17),
            (2, 8, 2, 56, 16, 5),
        ];
        for (ni, mi, gi, rows, cols, ncols) in cases {
            let fmt = NmgFormat::new(ni, mi, gi, Axis::Cols, Axis::Rows).unwrap();
            let x = DenseMatrix::<f64>::gaussian(rows, cols, (ni * 31 + mi) as u64);
            let a = nmg::from_dense_greedy(&x, fmt).unwrap();
            let b = DenseMatrix::<f64>::gaussian(cols, ncols, 1234);
            let got = nmg_spmm(&a, &b, tiling(2)).unwrap();
            let dec = a.to_dense();
            let want = dense_gemm(&dec, &b).unwrap();
            let err = max_relative_error(&got, &want, &dec, &b);
            assert!(err <= 1e-10, "{ni}:{mi}:{gi} err {err}");
        }
    }

    #[test]
    fn nmg_bit_identical_across_thread_counts() {
        let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
        let x = DenseMatrix::<f32>::gaussian(32, 16, 10);
        let a = nmg::from_dense_greedy(&x, fmt).unwrap();
        let b = DenseMatrix::<f32>::gaussian(16, 21, 11);
        let reference = nmg_spmm(&a, &b, tiling(1)).unwrap();
        for threads in 2..=4 {
            let c = nmg_spmm(&a, &b, tiling(threads)).unwrap();
            assert_eq!(c, reference, "threads={threads}");
        }
        // dense kernel gets the same guarantee
        let d1 = dense_gemm_tiled(&x, &DenseMatrix::gaussian(16, 21, 12), tiling(1)).unwrap();
        let d2 = dense_gemm_tiled(&x, &DenseMatrix::gaussian(16, 21, 12), tiling(3)).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn nmg_work_scales_with_n_over_m() {
        let (rows, cols, ncols) = (24, 16, 10);
        for (ni, mi, gi) in [(1usize, 2usize, 2usize), (1, 4, 3), (2, 4, 1)] {
            let fmt = NmgFormat::new(ni, mi, gi, Axis::Cols, Axis::Rows).unwrap();
            let x = DenseMatrix::<f64>::gaussian(rows, cols, 3);
            let a = nmg::from_dense_greedy(&x, fmt).unwrap();
            let b = DenseMatrix::<f64>::gaussian(cols, ncols, 4);
            let (_, count) = nmg_spmm_counted(&a, &b, tiling(1)).unwrap();
            let dense_muls = (rows * cols * ncols) as u64;
            assert_eq!(count, dense_muls * ni as u64 / mi as u64);
        }
    }

    #[test]
    fn nmg_requires_contraction_on_sparse_axis() {
        let fmt = NmgFormat::new(1, 2, 1, Axis::Rows, Axis::Cols).unwrap();
        let a = nmg::from_dense_greedy(&DenseMatrix::<f64>::gaussian(4, 4, 1), fmt).unwrap();
        let b = DenseMatrix::<f64>::gaussian(4, 4, 2);
        assert!(nmg_spmm(&a, &b, tiling(1)).is_err());
    }

    #[test]
    fn timing_report_fields() {
        let a = DenseMatrix::<f32>::gaussian(16, 16, 1);
        let b = DenseMatrix::<f32>::gaussian(16, 16, 2);
        let report = time_gemm(
            || {
                dense_gemm(&a, &b).unwrap();
            },
            (16, 16, 16),
            5,
        )
        .unwrap();
        assert_eq!(report.reps, 5);
        assert!(report.median_s >= report.min_s);
        assert!(report.gflops > 0.0);
        assert!(time_gemm(|| {}, (1, 1, 1), 2).is_err());
    }
}
