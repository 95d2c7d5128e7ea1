//! The grouped n:m sparsity format (n:m:g).
//!
//! One axis of the matrix (the sparse axis) is cut into blocks of m
//! consecutive elements, of which n are kept. The other axis (the group
//! axis) is cut into chunks of C(m,n)*g positions. Within a chunk every
//! nonzero pattern appears exactly g times (a group), the blocks are stored
//! pattern-major in revolving-door table order, and a per-block index
//! records each block's original position inside the chunk. Storing all
//! patterns in fixed order lets compute kernels iterate the structure
//! without branching on it.
//!
//! Conversion from dense keeps the values with the highest total magnitude
//! it can find: a greedy assignment over sorted (column, pattern)
//! magnitudes, optionally refined by pairwise exchange until no swap
//! improves the preserved magnitude. An exhaustive oracle is provided for
//! small chunks.

mod pattern;

pub use pattern::{binomial, pattern_order, PatternTable};

use crate::error::{Error, Result};
use crate::matrix::{Axis, DenseMatrix};
use crate::scalar::Scalar;

/// Maximum chunk width representable by the 16-bit block index.
pub const MAX_CHUNK_WIDTH: usize = 1 << 16;

/// Conversion algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionAlgorithm {
    /// Sorted greedy assignment.
    Greedy,
    /// Greedy followed by pairwise exchange refinement.
    GreedyExchange,
}

// ---------------------------------------------------------------------------
// Format parameters
// ---------------------------------------------------------------------------

/// Validated n:m:g format parameters plus axis roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NmgFormat {
    pub n: usize,
    pub m: usize,
    pub g: usize,
    pub sparse_dim: Axis,
    pub group_dim: Axis,
}

impl NmgFormat {
    pub fn new(n: usize, m: usize, g: usize, sparse_dim: Axis, group_dim: Axis) -> Result<Self> {
        if n < 1 || n >= m || m > 16 {
            return Err(Error::InvalidParameter(format!(
                "n:m:g requires 1 <= n < m <= 16, got n={n}, m={m}"
            )));
        }
        if g < 1 {
            return Err(Error::InvalidParameter("group size g must be >= 1".into()));
        }
        if sparse_dim == group_dim {
            return Err(Error::InvalidParameter(
                "sparse_dim and group_dim must be different axes".into(),
            ));
        }
        let width = binomial(m, n)
            .checked_mul(g)
            .filter(|&w| w <= MAX_CHUNK_WIDTH)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "chunk width C(m,n)*g exceeds the 16-bit index limit {MAX_CHUNK_WIDTH}"
                ))
            })?;
        debug_assert!(width >= 2);
        Ok(NmgFormat {
            n,
            m,
            g,
            sparse_dim,
            group_dim,
        })
    }

    /// Number of patterns C(m,n).
    pub fn pattern_count(&self) -> usize {
        binomial(self.m, self.n)
    }

    /// Blocks per chunk: C(m,n) * g.
    pub fn chunk_width(&self) -> usize {
        self.pattern_count() * self.g
    }

    /// (sparse extent, group extent) of a rows x cols matrix.
    pub fn extents(&self, rows: usize, cols: usize) -> (usize, usize) {
        match self.sparse_dim {
            Axis::Rows => (rows, cols),
            Axis::Cols => (cols, rows),
        }
    }

    /// Checks both divisibility requirements.
    pub fn check_divisibility(&self, rows: usize, cols: usize) -> Result<()> {
        let (sparse_len, group_len) = self.extents(rows, cols);
        if sparse_len % self.m != 0 {
            return Err(Error::Divisibility {
                axis_len: sparse_len,
                divisor: self.m,
                context: "n:m:g sparse axis".into(),
            });
        }
        let width = self.chunk_width();
        if group_len % width != 0 {
            return Err(Error::Divisibility {
                axis_len: group_len,
                divisor: width,
                context: "n:m:g group axis".into(),
            });
        }
        Ok(())
    }

    /// Smallest shape >= rows x cols satisfying the divisibility rules.
    pub fn padded_shape(&self, rows: usize, cols: usize) -> (usize, usize) {
        let round_up = |len: usize, q: usize| len.div_ceil(q) * q;
        let (sparse_len, group_len) = self.extents(rows, cols);
        let sparse_len = round_up(sparse_len, self.m);
        let group_len = round_up(group_len, self.chunk_width());
        match self.sparse_dim {
            Axis::Rows => (sparse_len, group_len),
            Axis::Cols => (group_len, sparse_len),
        }
    }
}

// ---------------------------------------------------------------------------
// Chunk addressing
// ---------------------------------------------------------------------------

/// Read-only view of one m x (C*g) chunk of a dense matrix, indexed as
/// (position within block, column within chunk) regardless of orientation.
#[derive(Clone, Copy)]
struct ChunkView<'a, T: Scalar> {
    x: &'a DenseMatrix<T>,
    sparse_dim: Axis,
    sparse_base: usize,
    group_base: usize,
}

impl<'a, T: Scalar> ChunkView<'a, T> {
    #[inline]
    fn get(&self, block_pos: usize, col: usize) -> T {
        match self.sparse_dim {
            Axis::Rows => self.x.get(self.sparse_base + block_pos, self.group_base + col),
            Axis::Cols => self.x.get(self.group_base + col, self.sparse_base + block_pos),
        }
    }
}

/// Chunk grid geometry shared by encode/decode.
#[derive(Debug, Clone, Copy)]
struct ChunkGrid {
    fmt: NmgFormat,
    sparse_blocks: usize,
    group_chunks: usize,
}

impl ChunkGrid {
    fn new(fmt: NmgFormat, rows: usize, cols: usize) -> Result<Self> {
        fmt.check_divisibility(rows, cols)?;
        let (sparse_len, group_len) = fmt.extents(rows, cols);
        Ok(ChunkGrid {
            fmt,
            sparse_blocks: sparse_len / fmt.m,
            group_chunks: group_len / fmt.chunk_width(),
        })
    }

    fn chunk_count(&self) -> usize {
        self.sparse_blocks * self.group_chunks
    }

    /// Linear chunk id in the canonical order: ascending row-major over the
    /// matrix's own axes (axis-0 chunk index outer, axis-1 inner).
    fn chunk_id(&self, sparse_block: usize, group_chunk: usize) -> usize {
        match self.fmt.sparse_dim {
            Axis::Rows => sparse_block * self.group_chunks + group_chunk,
            Axis::Cols => group_chunk * self.sparse_blocks + sparse_block,
        }
    }

    /// Inverse of `chunk_id`.
    fn chunk_coords(&self, id: usize) -> (usize, usize) {
        match self.fmt.sparse_dim {
            Axis::Rows => (id / self.group_chunks, id % self.group_chunks),
            Axis::Cols => (id % self.sparse_blocks, id / self.sparse_blocks),
        }
    }

    fn view<'a, T: Scalar>(
        &self,
        x: &'a DenseMatrix<T>,
        sparse_block: usize,
        group_chunk: usize,
    ) -> ChunkView<'a, T> {
        ChunkView {
            x,
            sparse_dim: self.fmt.sparse_dim,
            sparse_base: sparse_block * self.fmt.m,
            group_base: group_chunk * self.fmt.chunk_width(),
        }
    }
}

// ---------------------------------------------------------------------------
// Chunk assignment
// ---------------------------------------------------------------------------

/// Pattern choice for every column of one chunk. Each pattern id must be
/// used exactly g times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkAssignment {
    pattern_of: Vec<u16>,
}

impl ChunkAssignment {
    pub fn new(pattern_of: Vec<u16>) -> Self {
        ChunkAssignment { pattern_of }
    }

    pub fn pattern_of(&self) -> &[u16] {
        &self.pattern_of
    }

    pub fn len(&self) -> usize {
        self.pattern_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern_of.is_empty()
    }

    /// Verifies the exactly-g-per-pattern invariant.
    pub fn validate(&self, pattern_count: usize, g: usize) -> Result<()> {
        if self.pattern_of.len() != pattern_count * g {
            return Err(Error::Structure(format!(
                "assignment covers {} columns, chunk has {}",
                self.pattern_of.len(),
                pattern_count * g
            )));
        }
        let mut fill = vec![0usize; pattern_count];
        for &p in &self.pattern_of {
            let p = p as usize;
            if p >= pattern_count {
                return Err(Error::Structure(format!("pattern id {p} out of range")));
            }
            fill[p] += 1;
        }
        if fill.iter().any(|&f| f != g) {
            return Err(Error::Structure(
                "each pattern must be assigned to exactly g columns".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Columnwise magnitudes
// ---------------------------------------------------------------------------

fn magnitudes_from_view<T: Scalar>(
    view: &ChunkView<'_, T>,
    table: &PatternTable,
    width: usize,
) -> Vec<f64> {
    let m = table.m();
    let count = table.count();
    let mut mags = Vec::with_capacity(width * count);
    let mut abs = vec![0.0f64; m];
    for c in 0..width {
        for (j, a) in abs.iter_mut().enumerate() {
            *a = view.get(j, c).as_f64().abs();
        }
        for p in 0..count {
            let sum: f64 = table.pattern(p).iter().map(|&j| abs[j as usize]).sum();
            mags.push(sum);
        }
    }
    mags
}

/// Preserved-magnitude score of every (column, pattern) pair of a chunk.
///
/// `chunk` must be exactly one chunk: m elements along the sparse axis and
/// a multiple of C(m,n) along the other. The result is column-major:
/// entry `c * C(m,n) + p` is the summed |value| of column `c` at the
/// positions of pattern `p`; total length C(m,n)^2 * g.
pub fn columnwise_magnitudes<T: Scalar>(
    chunk: &DenseMatrix<T>,
    sparse_dim: Axis,
    table: &PatternTable,
) -> Result<Vec<f64>> {
    let (sparse_len, width) = match sparse_dim {
        Axis::Rows => (chunk.rows(), chunk.cols()),
        Axis::Cols => (chunk.cols(), chunk.rows()),
    };
    if sparse_len != table.m() || width % table.count() != 0 || width == 0 {
        return Err(Error::ShapeMismatch {
            expected: (table.m(), table.count()),
            got: (sparse_len, width),
            context: "columnwise_magnitudes chunk (sparse extent, width multiple of C)".into(),
        });
    }
    let view = ChunkView {
        x: chunk,
        sparse_dim,
        sparse_base: 0,
        group_base: 0,
    };
    Ok(magnitudes_from_view(&view, table, width))
}

// ---------------------------------------------------------------------------
// Greedy assignment and exchange refinement
// ---------------------------------------------------------------------------

/// Greedy assignment from a column-major magnitude array.
///
/// Pairs are processed from highest magnitude to lowest; ties prefer the
/// lower column index, then the lower pattern id. A pair is taken when its
/// column is still unassigned and its pattern group is not yet full. By a
/// counting argument every column is assigned before the list is exhausted;
/// this is asserted.
fn greedy_assign(mags: &[f64], pattern_count: usize, g: usize) -> ChunkAssignment {
    let width = pattern_count * g;
    debug_assert_eq!(mags.len(), width * pattern_count);
    let mut order: Vec<u32> = (0..mags.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        mags[b as usize]
            .total_cmp(&mags[a as usize])
            .then_with(|| a.cmp(&b))
    });
    let mut pattern_of = vec![u16::MAX; width];
    let mut fill = vec![0usize; pattern_count];
    let mut assigned = 0usize;
    for &id in &order {
        let c = id as usize / pattern_count;
        let p = id as usize % pattern_count;
        if pattern_of[c] == u16::MAX && fill[p] < g {
            pattern_of[c] = p as u16;
            fill[p] += 1;
            assigned += 1;
            if assigned == width {
                break;
            }
        }
    }
    assert_eq!(assigned, width, "greedy must assign every column");
    ChunkAssignment { pattern_of }
}

/// Preserved magnitude of an assignment, from the chunk's magnitude array.
fn assignment_magnitude(mags: &[f64], assignment: &ChunkAssignment, pattern_count: usize) -> f64 {
    assignment
        .pattern_of
        .iter()
        .enumerate()
        .map(|(c, &p)| mags[c * pattern_count + p as usize])
        .sum()
}

/// One chunk of exchange refinement: scan column pairs in different pattern
/// groups and swap their patterns whenever that strictly increases the
/// preserved magnitude. Repeats until a full pass makes no change.
fn exchange_refine_chunk(mags: &[f64], assignment: &mut ChunkAssignment, pattern_count: usize) {
    let width = assignment.pattern_of.len();
    loop {
        let mut changed = false;
        for c1 in 0..width {
            for c2 in c1 + 1..width {
                let p1 = assignment.pattern_of[c1] as usize;
                let p2 = assignment.pattern_of[c2] as usize;
                if p1 == p2 {
                    continue;
                }
                let current = mags[c1 * pattern_count + p1] + mags[c2 * pattern_count + p2];
                let swapped = mags[c1 * pattern_count + p2] + mags[c2 * pattern_count + p1];
                if swapped > current {
                    assignment.pattern_of.swap(c1, c2);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Exchange refinement over all chunks of `x`, given one assignment per
/// chunk in canonical chunk order. Never decreases the preserved magnitude.
pub fn refine_exchange<T: Scalar>(
    x: &DenseMatrix<T>,
    fmt: NmgFormat,
    assignments: &[ChunkAssignment],
) -> Result<Vec<ChunkAssignment>> {
    let grid = ChunkGrid::new(fmt, x.rows(), x.cols())?;
    if assignments.len() != grid.chunk_count() {
        return Err(Error::Structure(format!(
            "{} assignments supplied for {} chunks",
            assignments.len(),
            grid.chunk_count()
        )));
    }
    let table = PatternTable::new(fmt.n, fmt.m)?;
    let count = fmt.pattern_count();
    let width = fmt.chunk_width();
    let mut refined = Vec::with_capacity(assignments.len());
    for (id, a) in assignments.iter().enumerate() {
        a.validate(count, fmt.g)?;
        let (sb, gc) = grid.chunk_coords(id);
        let view = grid.view(x, sb, gc);
        let mags = magnitudes_from_view(&view, &table, width);
        let mut a = a.clone();
        exchange_refine_chunk(&mags, &mut a, count);
        refined.push(a);
    }
    Ok(refined)
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

/// Enumeration bound for [`oracle_optimal`]: chunks wider than this are
/// rejected.
pub const ORACLE_WIDTH_BOUND: usize = 8;

/// Exhaustively optimal assignment for one small chunk, maximizing preserved
/// L1 magnitude. Enumerates all (C*g)!/(g!)^C assignments; requires
/// C(m,n)*g <= 8. Ties resolve to the first assignment in lexicographic
/// enumeration order.
pub fn oracle_optimal<T: Scalar>(
    chunk: &DenseMatrix<T>,
    n: usize,
    m: usize,
    g: usize,
    sparse_dim: Axis,
) -> Result<ChunkAssignment> {
    let table = PatternTable::new(n, m)?;
    let count = table.count();
    let width = count * g;
    if width > ORACLE_WIDTH_BOUND {
        return Err(Error::EnumerationBound {
            size: width,
            bound: ORACLE_WIDTH_BOUND,
        });
    }
    let mags = columnwise_magnitudes(chunk, sparse_dim, &table)?;
    if mags.len() != width * count {
        return Err(Error::ShapeMismatch {
            expected: (m, width),
            got: chunk.shape(),
            context: "oracle_optimal chunk".into(),
        });
    }

    let mut fill = vec![0usize; count];
    let mut current = vec![0u16; width];
    let mut best: Option<(f64, Vec<u16>)> = None;

    fn recurse(
        c: usize,
        width: usize,
        count: usize,
        g: usize,
        mags: &[f64],
        fill: &mut [usize],
        current: &mut [u16],
        acc: f64,
        best: &mut Option<(f64, Vec<u16>)>,
    ) {
        if c == width {
            if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                *best = Some((acc, current.to_vec()));
            }
            return;
        }
        for p in 0..count {
            if fill[p] < g {
                fill[p] += 1;
                current[c] = p as u16;
                recurse(
                    c + 1,
                    width,
                    count,
                    g,
                    mags,
                    fill,
                    current,
                    acc + mags[c * count + p],
                    best,
                );
                fill[p] -= 1;
            }
        }
    }

    recurse(0, width, count, g, &mags, &mut fill, &mut current, 0.0, &mut best);
    let (_, pattern_of) = best.expect("at least one assignment exists");
    Ok(ChunkAssignment { pattern_of })
}

// ---------------------------------------------------------------------------
// GroupedNMMatrix
// ---------------------------------------------------------------------------

/// A matrix encoded in the grouped n:m format.
///
/// `values` holds n kept values per block, laid out chunk-major, then
/// pattern-major in table order, then group position, then the n values in
/// ascending pattern-position order. `col_index` holds one chunk-relative
/// original position per stored block, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedNMMatrix<T: Scalar> {
    fmt: NmgFormat,
    rows: usize,
    cols: usize,
    values: Vec<T>,
    col_index: Vec<u16>,
    table: PatternTable,
}

impl<T: Scalar> GroupedNMMatrix<T> {
    /// Reassembles an encoded matrix from raw parts, validating all
    /// structural invariants (used by the binary file reader).
    pub fn from_parts(
        fmt: NmgFormat,
        rows: usize,
        cols: usize,
        col_index: Vec<u16>,
        values: Vec<T>,
    ) -> Result<Self> {
        let grid = ChunkGrid::new(fmt, rows, cols)?;
        let width = fmt.chunk_width();
        let blocks = grid.chunk_count() * width;
        if col_index.len() != blocks {
            return Err(Error::Structure(format!(
                "col_index length {} does not match {blocks} blocks",
                col_index.len()
            )));
        }
        if values.len() != blocks * fmt.n {
            return Err(Error::Structure(format!(
                "values length {} does not match {} kept entries",
                values.len(),
                blocks * fmt.n
            )));
        }
        // per chunk, col_index must be a permutation of 0..width
        let mut seen = vec![false; width];
        for chunk in col_index.chunks(width) {
            seen.iter_mut().for_each(|s| *s = false);
            for &c in chunk {
                let c = c as usize;
                if c >= width || seen[c] {
                    return Err(Error::Structure(
                        "col_index is not a permutation of the chunk's columns".into(),
                    ));
                }
                seen[c] = true;
            }
        }
        let table = PatternTable::new(fmt.n, fmt.m)?;
        Ok(GroupedNMMatrix {
            fmt,
            rows,
            cols,
            values,
            col_index,
            table,
        })
    }

    /// Encodes `x` with one validated assignment per chunk (canonical order).
    pub fn encode_with_assignments(
        x: &DenseMatrix<T>,
        fmt: NmgFormat,
        assignments: &[ChunkAssignment],
    ) -> Result<Self> {
        let grid = ChunkGrid::new(fmt, x.rows(), x.cols())?;
        if assignments.len() != grid.chunk_count() {
            return Err(Error::Structure(format!(
                "{} assignments supplied for {} chunks",
                assignments.len(),
                grid.chunk_count()
            )));
        }
        let table = PatternTable::new(fmt.n, fmt.m)?;
        let count = fmt.pattern_count();
        let width = fmt.chunk_width();
        let mut values = Vec::with_capacity(grid.chunk_count() * width * fmt.n);
        let mut col_index = Vec::with_capacity(grid.chunk_count() * width);
        for id in 0..grid.chunk_count() {
            let a = &assignments[id];
            a.validate(count, fmt.g)?;
            let (sb, gc) = grid.chunk_coords(id);
            let view = grid.view(x, sb, gc);
            for p in 0..count {
                // columns of this group, ascending original position
                for (c, _) in a
                    .pattern_of
                    .iter()
                    .enumerate()
                    .filter(|&(_, &q)| q as usize == p)
                {
                    col_index.push(c as u16);
                    for &j in table.pattern(p) {
                        values.push(view.get(j as usize, c));
                    }
                }
            }
        }
        Ok(GroupedNMMatrix {
            fmt,
            rows: x.rows(),
            cols: x.cols(),
            values,
            col_index,
            table,
        })
    }

    pub fn n(&self) -> usize {
        self.fmt.n
    }

    pub fn m(&self) -> usize {
        self.fmt.m
    }

    pub fn g(&self) -> usize {
        self.fmt.g
    }

    pub fn format(&self) -> NmgFormat {
        self.fmt
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn col_index(&self) -> &[u16] {
        &self.col_index
    }

    pub fn table(&self) -> &PatternTable {
        &self.table
    }

    /// Number of stored entries (n per block).
    pub fn stored_count(&self) -> usize {
        self.values.len()
    }

    /// Blocks along the sparse axis.
    pub fn sparse_blocks(&self) -> usize {
        let (sparse_len, _) = self.fmt.extents(self.rows, self.cols);
        sparse_len / self.fmt.m
    }

    /// Chunks along the group axis.
    pub fn group_chunks(&self) -> usize {
        let (_, group_len) = self.fmt.extents(self.rows, self.cols);
        group_len / self.fmt.chunk_width()
    }

    /// Linear chunk id for (sparse block, group chunk) in storage order.
    pub fn chunk_id(&self, sparse_block: usize, group_chunk: usize) -> usize {
        let grid = ChunkGrid {
            fmt: self.fmt,
            sparse_blocks: self.sparse_blocks(),
            group_chunks: self.group_chunks(),
        };
        grid.chunk_id(sparse_block, group_chunk)
    }

    /// Walks every stored entry as (row, col, value slot index).
    fn for_each_stored(&self, mut f: impl FnMut(usize, usize, usize)) {
        let width = self.fmt.chunk_width();
        let n = self.fmt.n;
        let g = self.fmt.g;
        let grid = ChunkGrid {
            fmt: self.fmt,
            sparse_blocks: self.sparse_blocks(),
            group_chunks: self.group_chunks(),
        };
        for id in 0..grid.chunk_count() {
            let (sb, gc) = grid.chunk_coords(id);
            let sparse_base = sb * self.fmt.m;
            let group_base = gc * width;
            for s in 0..width {
                let block = id * width + s;
                let p = s / g;
                let col = group_base + self.col_index[block] as usize;
                for (j, &pos) in self.table.pattern(p).iter().enumerate() {
                    let sparse = sparse_base + pos as usize;
                    let (r, c) = match self.fmt.sparse_dim {
                        Axis::Rows => (sparse, col),
                        Axis::Cols => (col, sparse),
                    };
                    f(r, c, block * n + j);
                }
            }
        }
    }

    /// Decodes to dense: one pass over the values, placing each at the
    /// coordinate recovered from its pattern and stored block index.
    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        self.for_each_stored(|r, c, slot| out.set(r, c, self.values[slot]));
        out
    }

    /// True at every stored position (kept values may be explicit zeros).
    pub fn support_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.rows * self.cols];
        let cols = self.cols;
        self.for_each_stored(|r, c, _| mask[r * cols + c] = true);
        mask
    }

    /// Re-reads stored values from `x`, keeping the assignment and block
    /// order identical. `x` must have the encoded shape.
    pub fn reencode_values(&self, x: &DenseMatrix<T>) -> Result<Self> {
        if x.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: x.shape(),
                context: "reencode_values".into(),
            });
        }
        let mut values = vec![T::zero(); self.values.len()];
        self.for_each_stored(|r, c, slot| values[slot] = x.get(r, c));
        Ok(GroupedNMMatrix {
            fmt: self.fmt,
            rows: self.rows,
            cols: self.cols,
            values,
            col_index: self.col_index.clone(),
            table: self.table.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Conversion entry points
// ---------------------------------------------------------------------------

/// Greedy dense -> n:m:g conversion. Kept values are copied unmodified.
pub fn from_dense_greedy<T: Scalar>(
    x: &DenseMatrix<T>,
    fmt: NmgFormat,
) -> Result<GroupedNMMatrix<T>> {
    from_dense(x, fmt, ConversionAlgorithm::Greedy)
}

/// Dense -> n:m:g conversion with the chosen algorithm.
pub fn from_dense<T: Scalar>(
    x: &DenseMatrix<T>,
    fmt: NmgFormat,
    algorithm: ConversionAlgorithm,
) -> Result<GroupedNMMatrix<T>> {
    let assignments = assign_chunks(x, fmt, algorithm)?;
    GroupedNMMatrix::encode_with_assignments(x, fmt, &assignments)
}

/// Computes the per-chunk assignments without encoding.
pub fn assign_chunks<T: Scalar>(
    x: &DenseMatrix<T>,
    fmt: NmgFormat,
    algorithm: ConversionAlgorithm,
) -> Result<Vec<ChunkAssignment>> {
    let grid = ChunkGrid::new(fmt, x.rows(), x.cols())?;
    let table = PatternTable::new(fmt.n, fmt.m)?;
    let count = fmt.pattern_count();
    let width = fmt.chunk_width();
    let mut assignments = Vec::with_capacity(grid.chunk_count());
    for id in 0..grid.chunk_count() {
        let (sb, gc) = grid.chunk_coords(id);
        let view = grid.view(x, sb, gc);
        let mags = magnitudes_from_view(&view, &table, width);
        let mut a = greedy_assign(&mags, count, fmt.g);
        if algorithm == ConversionAlgorithm::GreedyExchange {
            exchange_refine_chunk(&mags, &mut a, count);
        }
        assignments.push(a);
    }
    Ok(assignments)
}

/// Preserved L1 magnitude of an assignment on one standalone chunk.
pub fn assignment_energy<T: Scalar>(
    chunk: &DenseMatrix<T>,
    sparse_dim: Axis,
    table: &PatternTable,
    assignment: &ChunkAssignment,
) -> Result<f64> {
    let mags = columnwise_magnitudes(chunk, sparse_dim, table)?;
    Ok(assignment_magnitude(&mags, assignment, table.count()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{energy, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fmt_rc(n: usize, m: usize, g: usize) -> NmgFormat {
        NmgFormat::new(n, m, g, Axis::Rows, Axis::Cols).unwrap()
    }

    /// The worked 2x2 example: columns (3, 0.5) and (1, 2) under 1:2:1.
    fn example_chunk() -> DenseMatrix<f64> {
        DenseMatrix::new(2, 2, vec![3.0, 1.0, 0.5, 2.0]).unwrap()
    }

    #[test]
    fn magnitudes_worked_example() {
        let table = PatternTable::new(1, 2).unwrap();
        let mags = columnwise_magnitudes(&example_chunk(), Axis::Rows, &table).unwrap();
        assert_eq!(mags, vec![3.0, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn magnitudes_zero_chunk_and_length() {
        let table = PatternTable::new(2, 4).unwrap();
        let zeros = DenseMatrix::<f64>::zeros(4, 18);
        let mags = columnwise_magnitudes(&zeros, Axis::Rows, &table).unwrap();
        assert_eq!(mags.len(), 6 * 6 * 3);
        assert!(mags.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn magnitudes_shape_mismatch() {
        let table = PatternTable::new(1, 2).unwrap();
        let bad = DenseMatrix::<f64>::zeros(3, 2);
        assert!(columnwise_magnitudes(&bad, Axis::Rows, &table).is_err());
    }

    #[test]
    fn greedy_worked_example() {
        let x = example_chunk();
        let enc = from_dense_greedy(&x, fmt_rc(1, 2, 1)).unwrap();
        assert_eq!(enc.to_dense(), DenseMatrix::new(2, 2, vec![3.0, 0.0, 0.0, 2.0]).unwrap());
        let e = energy(&enc.to_dense(), &x).unwrap();
        assert!((e - 5.0 / 6.5).abs() < 1e-12);
        // oracle agrees this is optimal
        let oracle = oracle_optimal(&x, 1, 2, 1, Axis::Rows).unwrap();
        let table = PatternTable::new(1, 2).unwrap();
        let oe = assignment_energy(&x, Axis::Rows, &table, &oracle).unwrap();
        assert!((oe - 5.0).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_on_conforming_input() {
        // Start from a random matrix, encode, decode; re-encoding the decoded
        // matrix must reproduce it exactly (zeros sit where pruning put them).
        let fmt = fmt_rc(1, 2, 2);
        let x = DenseMatrix::<f64>::gaussian(4, 8, 42);
        let once = from_dense_greedy(&x, fmt).unwrap().to_dense();
        let twice = from_dense_greedy(&once, fmt).unwrap().to_dense();
        assert_eq!(once, twice);
    }

    #[test]
    fn deterministic_on_ties() {
        let x = DenseMatrix::new(2, 4, vec![1.0; 8]).unwrap();
        let fmt = fmt_rc(1, 2, 2);
        let a = from_dense_greedy(&x, fmt).unwrap();
        let b = from_dense_greedy(&x, fmt).unwrap();
        assert_eq!(a, b);
        a.validate_invariants_for_tests();
    }

    impl GroupedNMMatrix<f64> {
        fn validate_invariants_for_tests(&self) {
            // stored count and per-chunk permutation are checked by from_parts
            GroupedNMMatrix::from_parts(
                self.fmt,
                self.rows,
                self.cols,
                self.col_index.clone(),
                self.values.clone(),
            )
            .unwrap();
        }
    }

    #[test]
    fn divisibility_errors() {
        let x = DenseMatrix::<f64>::zeros(3, 4);
        assert!(matches!(
            from_dense_greedy(&x, fmt_rc(1, 2, 1)),
            Err(Error::Divisibility { .. })
        ));
        let x = DenseMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            from_dense_greedy(&x, fmt_rc(1, 2, 1)),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn padded_shape_arithmetic() {
        let fmt = NmgFormat::new(2, 4, 3, Axis::Cols, Axis::Rows).unwrap();
        // sparse axis = cols (m=4), group axis = rows (width 18)
        assert_eq!(fmt.padded_shape(64, 72), (72, 72));
        assert_eq!(fmt.padded_shape(72, 72), (72, 72));
    }

    #[test]
    fn exchange_recovers_from_adversarial_start() {
        let x = example_chunk();
        let fmt = fmt_rc(1, 2, 1);
        // swapped start: c0 keeps 0.5, c1 keeps 1
        let bad = vec![ChunkAssignment::new(vec![1, 0])];
        let refined = refine_exchange(&x, fmt, &bad).unwrap();
        assert_eq!(refined[0].pattern_of(), &[0, 1]);
        let table = PatternTable::new(1, 2).unwrap();
        let e = assignment_energy(&x, Axis::Rows, &table, &refined[0]).unwrap();
        assert!((e - 5.0).abs() < 1e-12);
    }

    #[test]
    fn exchange_fixed_point_is_unchanged() {
        let x = example_chunk();
        let fmt = fmt_rc(1, 2, 1);
        let good = vec![ChunkAssignment::new(vec![0, 1])];
        let refined = refine_exchange(&x, fmt, &good).unwrap();
        assert_eq!(refined, good);
    }

    #[test]
    fn exchange_never_decreases_energy() {
        let fmt = fmt_rc(1, 4, 3);
        let table = PatternTable::new(1, 4).unwrap();
        for seed in 0..100u64 {
            let x = DenseMatrix::<f64>::gaussian(4, 12, seed);
            // random valid initial assignment: shuffle the pattern multiset
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let mut pattern_of: Vec<u16> = (0..12).map(|i| (i / 3) as u16).collect();
            for i in (1..pattern_of.len()).rev() {
                let j = rng.gen_range(0..=i);
                pattern_of.swap(i, j);
            }
            let initial = ChunkAssignment::new(pattern_of);
            let e0 = assignment_energy(&x, Axis::Rows, &table, &initial).unwrap();
            let refined = refine_exchange(&x, fmt, &[initial]).unwrap();
            let e1 = assignment_energy(&x, Axis::Rows, &table, &refined[0]).unwrap();
            assert!(e1 >= e0 - 1e-12, "seed {seed}: {e1} < {e0}");
        }
    }

    #[test]
    fn oracle_scaled_identity() {
        let mut x = DenseMatrix::<f64>::zeros(3, 3);
        for i in 0..3 {
            x.set(i, i, (i + 1) as f64);
        }
        let a = oracle_optimal(&x, 1, 3, 1, Axis::Rows).unwrap();
        // column c keeps its own diagonal element => pattern {c}
        assert_eq!(a.pattern_of(), &[0, 1, 2]);
        let table = PatternTable::new(1, 3).unwrap();
        let preserved = assignment_energy(&x, Axis::Rows, &table, &a).unwrap();
        assert!((preserved - 6.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_zero_chunk_and_bound() {
        let zeros = DenseMatrix::<f64>::zeros(2, 2);
        let a = oracle_optimal(&zeros, 1, 2, 1, Axis::Rows).unwrap();
        a.validate(2, 1).unwrap();
        // width 3*4=12 exceeds the bound
        let big = DenseMatrix::<f64>::zeros(3, 12);
        assert!(matches!(
            oracle_optimal(&big, 1, 3, 4, Axis::Rows),
            Err(Error::EnumerationBound { .. })
        ));
    }

    #[test]
    fn greedy_matches_oracle_bound_on_small_chunks() {
        let table = PatternTable::new(2, 4).unwrap();
        let fmt = fmt_rc(2, 4, 1);
        for seed in 0..50u64 {
            let x = DenseMatrix::<f64>::gaussian(4, 6, seed);
            let greedy = assign_chunks(&x, fmt, ConversionAlgorithm::Greedy).unwrap();
            let refined = assign_chunks(&x, fmt, ConversionAlgorithm::GreedyExchange).unwrap();
            let oracle = oracle_optimal(&x, 2, 4, 1, Axis::Rows).unwrap();
            let eg = assignment_energy(&x, Axis::Rows, &table, &greedy[0]).unwrap();
            let er = assignment_energy(&x, Axis::Rows, &table, &refined[0]).unwrap();
            let eo = assignment_energy(&x, Axis::Rows, &table, &oracle).unwrap();
            assert!(eg <= eo + 1e-12);
            assert!(er <= eo + 1e-12);
            assert!(er >= eg - 1e-12);
        }
    }

    #[test]
    fn value_preservation_and_sparsity() {
        let fmt = NmgFormat::new(1, 4, 2, Axis::Cols, Axis::Rows).unwrap();
        let x = DenseMatrix::<f64>::gaussian(8, 16, 9);
        let enc = from_dense_greedy(&x, fmt).unwrap();
        let dec = enc.to_dense();
        // every stored value equals the original at its decoded coordinate
        for i in 0..8 {
            for j in 0..16 {
                let v = dec.get(i, j);
                if v != 0.0 {
                    assert_eq!(v, x.get(i, j));
                }
            }
        }
        // gaussian input has no zeros, so sparsity is exactly 1 - n/m
        let s = Matrix::GroupedNm(enc).sparsity();
        assert!((s - 0.75).abs() < 1e-12);
        assert!(crate::matrix::sparsity(&Matrix::Dense(dec)) >= 0.75);
    }

    #[test]
    fn constraint_nesting_vs_per_block_topn() {
        // n:m:g preserved energy can never beat unconstrained per-block top-n.
        for seed in 0..20u64 {
            let x = DenseMatrix::<f64>::gaussian(4, 12, seed);
            let fmt = fmt_rc(1, 4, 3);
            let enc = from_dense(&x, fmt, ConversionAlgorithm::GreedyExchange).unwrap();
            let e_nmg = energy(&enc.to_dense(), &x).unwrap();
            // per-block optimal 1:4 along rows: keep the largest |v| per column block
            let mut kept = DenseMatrix::<f64>::zeros(4, 12);
            for c in 0..12 {
                let best = (0..4)
                    .max_by(|&a, &b| x.get(a, c).abs().total_cmp(&x.get(b, c).abs()))
                    .unwrap();
                kept.set(best, c, x.get(best, c));
            }
            let e_nm = energy(&kept, &x).unwrap();
            assert!(e_nmg <= e_nm + 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn reencode_values_keeps_assignment() {
        let fmt = fmt_rc(1, 2, 1);
        let x = DenseMatrix::<f64>::gaussian(4, 4, 5);
        let enc = from_dense_greedy(&x, fmt).unwrap();
        let mut perturbed = enc.to_dense();
        for v in perturbed.as_mut_slice() {
            if *v != 0.0 {
                *v *= 1.5;
            }
        }
        let renc = enc.reencode_values(&perturbed).unwrap();
        assert_eq!(renc.col_index(), enc.col_index());
        assert_eq!(renc.to_dense(), perturbed);
    }

    #[test]
    fn from_parts_rejects_bad_permutation() {
        let fmt = fmt_rc(1, 2, 1);
        let x = DenseMatrix::<f64>::gaussian(2, 2, 1);
        let enc = from_dense_greedy(&x, fmt).unwrap();
        let mut bad_idx = enc.col_index().to_vec();
        bad_idx[1] = bad_idx[0];
        assert!(GroupedNMMatrix::from_parts(fmt, 2, 2, bad_idx, enc.values().to_vec()).is_err());
    }

    #[test]
    fn byte_identical_encodings() {
        let fmt = NmgFormat::new(2, 4, 2, Axis::Cols, Axis::Rows).unwrap();
        let x = DenseMatrix::<f32>::gaussian(24, 8, 77);
        let a = from_dense(&x, fmt, ConversionAlgorithm::GreedyExchange).unwrap();
        let b = from_dense(&x, fmt, ConversionAlgorithm::GreedyExchange).unwrap();
        assert_eq!(a, b);
    }
}
