//! Distributed dense matrices and partition changes.
//!
//! A `DistMatrix` is a dense `rows x cols` matrix spread over the ranks of
//! a [`World`](crate::transport::World) in one of two layouts:
//!
//! * `ColumnBlock` — rank `p` owns a contiguous run of whole columns (the
//!   first `cols % P` ranks own one extra column);
//! * `RowBlock` — rank `p` owns a contiguous run of whole rows (the first
//!   `rows % P` ranks own one extra row).
//!
//! Local storage is always column-major. [`col_to_row`] and [`row_to_col`]
//! switch layouts with one message per rank pair; the local rearrangement
//! on both sides runs in place (see the [`pack`] submodule) instead of
//! through a staging buffer plus per-element mapping matrix, whose cost
//! [`buffer_cost_model`] quantifies.

mod io;
mod pack;

pub use io::{read_matrix, write_matrix};
pub use pack::{pack_reference, unpack_reference, SubBlockPlan};

use crate::error::{Error, Result};
use crate::partition::{block_len, block_range};
use crate::transport::{Element, Rank, Tag, World};
use std::ops::Range;

/// Tags reserved by this module (well below the user-tag ceiling, distinct
/// from anything the collectives use).
const TAG_REPART: Tag = 0x0120;
const TAG_GATHER: Tag = 0x0121;
const TAG_MIRROR: Tag = 0x0122;

/// Which dimension is distributed across ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    ColumnBlock,
    RowBlock,
}

/// A dense matrix block-distributed over the ranks of one world.
///
/// The struct records the world size and owning rank it was built for;
/// collective operations re-validate that binding instead of holding a
/// borrow of the `World` itself (matrices routinely outlive the scope a
/// world reference would pin).
#[derive(Clone, Debug, PartialEq)]
pub struct DistMatrix<T> {
    rows: usize,
    cols: usize,
    layout: Layout,
    parts: usize,
    part_rank: Rank,
    local: Vec<T>,
}

impl<T> DistMatrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Rows of the local block.
    pub fn local_rows(&self) -> usize {
        match self.layout {
            Layout::ColumnBlock => self.rows,
            Layout::RowBlock => block_len(self.rows, self.parts, self.part_rank),
        }
    }

    /// Columns of the local block.
    pub fn local_cols(&self) -> usize {
        match self.layout {
            Layout::ColumnBlock => block_len(self.cols, self.parts, self.part_rank),
            Layout::RowBlock => self.cols,
        }
    }

    /// Global indices (columns or rows, per layout) owned by this rank.
    pub fn owned(&self) -> Range<usize> {
        match self.layout {
            Layout::ColumnBlock => block_range(self.cols, self.parts, self.part_rank),
            Layout::RowBlock => block_range(self.rows, self.parts, self.part_rank),
        }
    }

    /// Column-major local block.
    pub fn local(&self) -> &[T] {
        &self.local
    }

    pub fn local_mut(&mut self) -> &mut [T] {
        &mut self.local
    }

    /// One local column as a slice.
    pub fn column(&self, local_col: usize) -> &[T] {
        let r = self.local_rows();
        &self.local[local_col * r..(local_col + 1) * r]
    }

    pub fn column_mut(&mut self, local_col: usize) -> &mut [T] {
        let r = self.local_rows();
        &mut self.local[local_col * r..(local_col + 1) * r]
    }

    fn check_world(&self, world: &World, expect: Layout) -> Result<()> {
        if self.parts != world.size() || self.part_rank != world.rank() {
            return Err(Error::ShapeMismatch {
                what: "distributed matrix",
                detail: format!(
                    "matrix distributed over {} parts as rank {}, used in world of {} as rank {}",
                    self.parts,
                    self.part_rank,
                    world.size(),
                    world.rank()
                ),
            });
        }
        if self.layout != expect {
            return Err(Error::ShapeMismatch {
                what: "distributed matrix layout",
                detail: format!("expected {expect:?}, got {:?}", self.layout),
            });
        }
        Ok(())
    }
}

impl<T: Element + Default> DistMatrix<T> {
    /// Zero-filled distributed matrix.
    pub fn zeros(world: &World, layout: Layout, rows: usize, cols: usize) -> Self {
        let parts = world.size();
        let part_rank = world.rank();
        let n = match layout {
            Layout::ColumnBlock => rows * block_len(cols, parts, part_rank),
            Layout::RowBlock => block_len(rows, parts, part_rank) * cols,
        };
        DistMatrix {
            rows,
            cols,
            layout,
            parts,
            part_rank,
            local: vec![T::default(); n],
        }
    }

    /// Column-block matrix whose columns are filled by `init(global_col,
    /// column)`. Because `init` sees the *global* column index, the stored
    /// matrix is independent of the number of ranks.
    pub fn from_columns(
        world: &World,
        rows: usize,
        cols: usize,
        mut init: impl FnMut(usize, &mut [T]),
    ) -> Self {
        let mut m = Self::zeros(world, Layout::ColumnBlock, rows, cols);
        let owned = m.owned();
        for (local_col, global_col) in owned.enumerate() {
            init(global_col, m.column_mut(local_col));
        }
        m
    }

    /// Slices this rank's block out of a replicated global column-major
    /// matrix.
    pub fn from_replicated(
        world: &World,
        layout: Layout,
        rows: usize,
        cols: usize,
        global: &[T],
    ) -> Result<Self> {
        if global.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "replicated global matrix",
                expected: rows * cols,
                got: global.len(),
            });
        }
        let mut m = Self::zeros(world, layout, rows, cols);
        match layout {
            Layout::ColumnBlock => {
                let owned = m.owned();
                m.local
                    .copy_from_slice(&global[owned.start * rows..owned.end * rows]);
            }
            Layout::RowBlock => {
                let owned = m.owned();
                let lr = owned.len();
                for col in 0..cols {
                    m.local[col * lr..(col + 1) * lr]
                        .copy_from_slice(&global[col * rows + owned.start..col * rows + owned.end]);
                }
            }
        }
        Ok(m)
    }

    /// Reassembles the full global matrix on every rank (test/oracle path:
    /// reconstruction by concatenation in rank order).
    pub fn to_global(&self, world: &World) -> Result<Vec<T>> {
        self.check_world(world, self.layout)?;
        let mut global = vec![T::default(); self.rows * self.cols];
        if world.rank() == 0 {
            self.place_into(&mut global, 0, self.local());
            for src in 1..world.size() {
                let block = world.recv::<T>(src, TAG_GATHER)?;
                self.place_into(&mut global, src, &block);
            }
            for dest in 1..world.size() {
                world.send(dest, TAG_MIRROR, &global)?;
            }
        } else {
            world.send(0, TAG_GATHER, self.local())?;
            world.recv_into(0, TAG_MIRROR, &mut global)?;
        }
        Ok(global)
    }

    /// Writes rank `src`'s block into its global position.
    fn place_into(&self, global: &mut [T], src: Rank, block: &[T]) {
        match self.layout {
            Layout::ColumnBlock => {
                let cr = block_range(self.cols, self.parts, src);
                global[cr.start * self.rows..cr.end * self.rows].copy_from_slice(block);
            }
            Layout::RowBlock => {
                let rr = block_range(self.rows, self.parts, src);
                let lr = rr.len();
                for col in 0..self.cols {
                    global[col * self.rows + rr.start..col * self.rows + rr.end]
                        .copy_from_slice(&block[col * lr..(col + 1) * lr]);
                }
            }
        }
    }
}

/// Packs this rank's column block into destination-major order in place
/// and returns the per-destination `(offset, element count)` table into
/// the (same) local allocation. The matrix is left in the packed transient
/// state; it is consumed by the exchange in [`col_to_row`] or restored by
/// the inverse permutation.
pub fn pack_in_place<T: Element>(
    world: &World,
    m: &mut DistMatrix<T>,
) -> Result<Vec<(usize, usize)>> {
    m.check_world(world, Layout::ColumnBlock)?;
    let plan = SubBlockPlan::new(m.rows, m.local_cols(), m.parts)?;
    pack::pack_in_place(&mut m.local, &plan)?;
    Ok((0..m.parts).map(|dest| plan.dest_region(dest)).collect())
}

/// Column-block to row-block repartition: in-place pack, one message per
/// rank pair, in-place rearrangement of the received blocks.
pub fn col_to_row<T: Element + Default>(
    world: &World,
    m: DistMatrix<T>,
) -> Result<DistMatrix<T>> {
    m.check_world(world, Layout::ColumnBlock)?;
    let (rows, cols) = (m.rows, m.cols);
    let p = world.size();
    let me = world.rank();
    let my_cols = m.local_cols();
    let plan = SubBlockPlan::new(rows, my_cols, p)?;

    let mut packed = m.local;
    pack::pack_in_place(&mut packed, &plan)?;

    let mut handles = Vec::with_capacity(p.saturating_sub(1));
    for dest in 0..p {
        if dest == me {
            continue;
        }
        let (off, len) = plan.dest_region(dest);
        handles.push(world.isend(dest, TAG_REPART, packed[off..off + len].to_vec())?);
    }

    // Result block: my rows x all global columns, column-major; columns
    // arrive grouped by source rank, which is already global order.
    let my_rows = block_len(rows, p, me);
    let mut out = vec![T::default(); my_rows * cols];
    let (off, len) = plan.dest_region(me);
    let own_cols = block_range(cols, p, me);
    out[own_cols.start * my_rows..own_cols.start * my_rows + len]
        .copy_from_slice(&packed[off..off + len]);
    for src in 0..p {
        if src == me {
            continue;
        }
        let cr = block_range(cols, p, src);
        world.recv_into(src, TAG_REPART, &mut out[cr.start * my_rows..cr.end * my_rows])?;
    }
    for h in handles {
        h.wait()?;
    }
    Ok(DistMatrix {
        rows,
        cols,
        layout: Layout::RowBlock,
        parts: p,
        part_rank: me,
        local: out,
    })
}

/// Row-block to column-block repartition: mirror of [`col_to_row`]; the
/// received per-sender blocks land in packed order and are interleaved
/// back to column-major in place.
pub fn row_to_col<T: Element + Default>(
    world: &World,
    m: DistMatrix<T>,
) -> Result<DistMatrix<T>> {
    m.check_world(world, Layout::RowBlock)?;
    let (rows, cols) = (m.rows, m.cols);
    let p = world.size();
    let me = world.rank();
    let my_src_rows = m.local_rows();
    let my_dst_cols = block_len(cols, p, me);
    let plan = SubBlockPlan::new(rows, my_dst_cols, p)?;

    let local = m.local;
    let mut handles = Vec::with_capacity(p.saturating_sub(1));
    for dest in 0..p {
        if dest == me {
            continue;
        }
        let cr = block_range(cols, p, dest);
        handles.push(world.isend(
            dest,
            TAG_REPART,
            local[cr.start * my_src_rows..cr.end * my_src_rows].to_vec(),
        )?);
    }

    // Incoming block from rank s is exactly packed region s of the result.
    let mut packed = vec![T::default(); rows * my_dst_cols];
    let own_cols = block_range(cols, p, me);
    let (off, len) = plan.dest_region(me);
    packed[off..off + len]
        .copy_from_slice(&local[own_cols.start * my_src_rows..own_cols.end * my_src_rows]);
    for src in 0..p {
        if src == me {
            continue;
        }
        let (off, len) = plan.dest_region(src);
        world.recv_into(src, TAG_REPART, &mut packed[off..off + len])?;
    }
    for h in handles {
        h.wait()?;
    }
    pack::unpack_in_place(&mut packed, &plan)?;
    Ok(DistMatrix {
        rows,
        cols,
        layout: Layout::ColumnBlock,
        parts: p,
        part_rank: me,
        local: packed,
    })
}

/// Baseline repartition through the explicit mapping matrix and staging
/// buffer (the scheme the in-place path replaces). Wire traffic is
/// identical; only the local rearrangement differs. Kept for benchmarks
/// and oracle tests.
pub fn col_to_row_reference<T: Element + Default>(
    world: &World,
    m: DistMatrix<T>,
) -> Result<DistMatrix<T>> {
    m.check_world(world, Layout::ColumnBlock)?;
    let (rows, cols) = (m.rows, m.cols);
    let p = world.size();
    let me = world.rank();
    let plan = SubBlockPlan::new(rows, m.local_cols(), p)?;
    let packed = if m.local.is_empty() {
        Vec::new()
    } else {
        pack_reference(&m.local, &plan)?
    };

    let mut handles = Vec::with_capacity(p.saturating_sub(1));
    for dest in 0..p {
        if dest == me {
            continue;
        }
        let (off, len) = plan.dest_region(dest);
        handles.push(world.isend(dest, TAG_REPART, packed[off..off + len].to_vec())?);
    }
    let my_rows = block_len(rows, p, me);
    let mut out = vec![T::default(); my_rows * cols];
    let (off, len) = plan.dest_region(me);
    let own_cols = block_range(cols, p, me);
    out[own_cols.start * my_rows..own_cols.start * my_rows + len]
        .copy_from_slice(&packed[off..off + len]);
    for src in 0..p {
        if src == me {
            continue;
        }
        let cr = block_range(cols, p, src);
        world.recv_into(src, TAG_REPART, &mut out[cr.start * my_rows..cr.end * my_rows])?;
    }
    for h in handles {
        h.wait()?;
    }
    Ok(DistMatrix {
        rows,
        cols,
        layout: Layout::RowBlock,
        parts: p,
        part_rank: me,
        local: out,
    })
}

/// Buffered counterpart of [`row_to_col`]; see [`col_to_row_reference`].
pub fn row_to_col_reference<T: Element + Default>(
    world: &World,
    m: DistMatrix<T>,
) -> Result<DistMatrix<T>> {
    m.check_world(world, Layout::RowBlock)?;
    let (rows, cols) = (m.rows, m.cols);
    let p = world.size();
    let me = world.rank();
    let my_src_rows = m.local_rows();
    let my_dst_cols = block_len(cols, p, me);
    let plan = SubBlockPlan::new(rows, my_dst_cols, p)?;

    let local = m.local;
    let mut handles = Vec::with_capacity(p.saturating_sub(1));
    for dest in 0..p {
        if dest == me {
            continue;
        }
        let cr = block_range(cols, p, dest);
        handles.push(world.isend(
            dest,
            TAG_REPART,
            local[cr.start * my_src_rows..cr.end * my_src_rows].to_vec(),
        )?);
    }
    let mut packed = vec![T::default(); rows * my_dst_cols];
    let own_cols = block_range(cols, p, me);
    let (off, len) = plan.dest_region(me);
    packed[off..off + len]
        .copy_from_slice(&local[own_cols.start * my_src_rows..own_cols.end * my_src_rows]);
    for src in 0..p {
        if src == me {
            continue;
        }
        let (off, len) = plan.dest_region(src);
        world.recv_into(src, TAG_REPART, &mut packed[off..off + len])?;
    }
    for h in handles {
        h.wait()?;
    }
    let out = if packed.is_empty() {
        packed
    } else {
        unpack_reference(&packed, &plan)?
    };
    Ok(DistMatrix {
        rows,
        cols,
        layout: Layout::ColumnBlock,
        parts: p,
        part_rank: me,
        local: out,
    })
}

/// Memory footprint of the buffered scheme this module eliminates: an
/// 8-byte staging buffer plus mapping-index words before and after the
/// exchange, approximately 24 bytes per element.
pub fn buffer_cost_model(rows: u64, cols: u64) -> u64 {
    24 * rows * cols
}
