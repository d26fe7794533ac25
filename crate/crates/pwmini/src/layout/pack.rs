//! In-place sub-block packing for partition changes.
//!
//! A column-partition rank stores its block column-major: element `(i, j)`
//! of the `rows x cols` local block sits at `j*rows + i`. Changing to a row
//! partition means every column splits into `P` destination sub-blocks
//! (rows owned by each destination), and all sub-blocks bound for the same
//! destination must become one contiguous send region:
//!
//! ```text
//! packed = [dest 0: its rows x all cols | dest 1: ... | dest P-1: ...]
//! ```
//!
//! with each destination region itself column-major. The classic way is a
//! precomputed mapping matrix plus a staging buffer (see
//! [`pack_reference`]), costing O(rows*cols) extra memory. Here the
//! rearrangement happens in place:
//!
//! 1. Rows split at `boundary = re*(bs+1)` (`bs = rows/P`, `re = rows%P`):
//!    above it all sub-blocks have `bs+1` rows, below all have `bs`.
//! 2. Within each region the sub-blocks form a uniform grid, so a
//!    cycle-following permutation (one sub-block of scratch, min-in-cycle
//!    leader detection, O(1) index state) reorders them from column-major
//!    slot order to destination-major packed order.
//! 3. The two regions are still interleaved per source column; a
//!    divide-and-conquer rotation pass merges them into `[A* | B*]`.
//!
//! Peak temporary memory is one maximal sub-block of elements plus
//! O(P + cols) index words; [`unpack_in_place`] is the exact inverse and is
//! used on the receive side of the row-to-column transform.

use crate::error::{Error, Result};
use crate::memmon::{self, Category};
use crate::partition::{block_len, block_owner, block_range};

/// Geometry of the sub-block split for one rank's `rows x cols` local
/// block being repartitioned over `parts` destinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubBlockPlan {
    rows: usize,
    cols: usize,
    parts: usize,
    /// `rows / parts`: the small sub-block row count.
    block_size: usize,
    /// `rows % parts`: destinations 0..extra get `block_size + 1` rows.
    extra: usize,
}

impl SubBlockPlan {
    pub fn new(rows: usize, cols: usize, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::InvalidArgument(
                "sub-block plan needs at least one destination".into(),
            ));
        }
        Ok(SubBlockPlan {
            rows,
            cols,
            parts,
            block_size: rows / parts,
            extra: rows % parts,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn extra(&self) -> usize {
        self.extra
    }

    /// Row boundary between the two uniform regions.
    pub fn boundary(&self) -> usize {
        self.extra * (self.block_size + 1)
    }

    /// Rows owned by destination `dest`.
    pub fn dest_rows(&self, dest: usize) -> usize {
        block_len(self.rows, self.parts, dest)
    }

    /// Packed position of destination `dest`'s whole region:
    /// `(element offset, element count)`.
    pub fn dest_region(&self, dest: usize) -> (usize, usize) {
        let range = block_range(self.rows, self.parts, dest);
        (range.start * self.cols, range.len() * self.cols)
    }

    /// O(1) mapping index: packed destination of the sub-block of column
    /// `col` bound for rank `dest`, as `(column-major offset, row count)`.
    /// This is the quantity the classic approach tabulates per element.
    pub fn map_index(&self, col: usize, dest: usize) -> Result<(usize, usize)> {
        if col >= self.cols {
            return Err(Error::InvalidArgument(format!(
                "column {col} out of range for {} local columns",
                self.cols
            )));
        }
        if dest >= self.parts {
            return Err(Error::InvalidArgument(format!(
                "destination {dest} out of range for {} parts",
                self.parts
            )));
        }
        let range = block_range(self.rows, self.parts, dest);
        Ok((range.start * self.cols + col * range.len(), range.len()))
    }

    /// Column-major offset of the same sub-block in the *unpacked* block.
    pub fn source_offset(&self, col: usize, dest: usize) -> Result<(usize, usize)> {
        if col >= self.cols || dest >= self.parts {
            // map_index produces the detailed message.
            self.map_index(col, dest)?;
        }
        let range = block_range(self.rows, self.parts, dest);
        Ok((col * self.rows + range.start, range.len()))
    }
}

/// Cycle-following permutation of equal-length slots.
///
/// `src(m)` names the slot whose original content must end up in slot `m`;
/// `addr(s)` is the element offset of slot `s`. Cycle leaders are detected
/// by the min-in-cycle walk, so no visited bitmap is needed; `scratch`
/// holds exactly one slot.
fn permute_slots<T: Copy>(
    data: &mut [T],
    slot_count: usize,
    slot_len: usize,
    addr: impl Fn(usize) -> usize,
    src: impl Fn(usize) -> usize,
    scratch: &mut [T],
) {
    if slot_len == 0 {
        return;
    }
    debug_assert!(scratch.len() >= slot_len);
    for start in 0..slot_count {
        let first_src = src(start);
        if first_src == start {
            continue;
        }
        let mut q = first_src;
        let mut is_leader = true;
        while q != start {
            if q < start {
                is_leader = false;
                break;
            }
            q = src(q);
        }
        if !is_leader {
            continue;
        }
        scratch[..slot_len].copy_from_slice(&data[addr(start)..addr(start) + slot_len]);
        let mut cur = start;
        loop {
            let s = src(cur);
            if s == start {
                break;
            }
            data.copy_within(addr(s)..addr(s) + slot_len, addr(cur));
            cur = s;
        }
        data[addr(cur)..addr(cur) + slot_len].copy_from_slice(&scratch[..slot_len]);
    }
}

/// Merges per-column `[A_j | B_j]` segments into `[A* | B*]` in place.
/// `data` covers `ncols` columns of `ra + rb` elements each.
fn unzip_regions<T: Copy>(data: &mut [T], ra: usize, rb: usize, ncols: usize) {
    if ncols <= 1 || ra == 0 || rb == 0 {
        return;
    }
    let r = ra + rb;
    let left = ncols / 2;
    let right = ncols - left;
    let (lo, hi) = data.split_at_mut(left * r);
    unzip_regions(lo, ra, rb, left);
    unzip_regions(hi, ra, rb, right);
    // [A_L | B_L | A_R | B_R] -> [A_L | A_R | B_L | B_R]
    data[left * ra..left * r + right * ra].rotate_left(left * rb);
}

/// Exact inverse of [`unzip_regions`].
fn zip_regions<T: Copy>(data: &mut [T], ra: usize, rb: usize, ncols: usize) {
    if ncols <= 1 || ra == 0 || rb == 0 {
        return;
    }
    let r = ra + rb;
    let left = ncols / 2;
    let right = ncols - left;
    // [A_L | A_R | B_L | B_R] -> [A_L | B_L | A_R | B_R]
    data[left * ra..left * r + right * ra].rotate_right(left * rb);
    let (lo, hi) = data.split_at_mut(left * r);
    zip_regions(lo, ra, rb, left);
    zip_regions(hi, ra, rb, right);
}

struct Regions {
    /// (slot_count, slot_len, column stride base, row offset, slots per column)
    a: (usize, usize),
    b: (usize, usize),
}

impl SubBlockPlan {
    fn regions(&self) -> Regions {
        Regions {
            a: (self.extra, self.block_size + 1),
            b: (self.parts - self.extra, self.block_size),
        }
    }

    fn scratch_len(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else if self.extra > 0 {
            self.block_size + 1
        } else {
            self.block_size
        }
    }
}

/// Rearranges a column-major `rows x cols` block into destination-major
/// packed order, in place.
pub fn pack_in_place<T: Copy>(data: &mut [T], plan: &SubBlockPlan) -> Result<()> {
    permute_in_place(data, plan, false)
}

/// Inverse of [`pack_in_place`]: restores column-major order from packed
/// destination-major order (used after receiving row-partition blocks).
pub fn unpack_in_place<T: Copy>(data: &mut [T], plan: &SubBlockPlan) -> Result<()> {
    permute_in_place(data, plan, true)
}

fn permute_in_place<T: Copy>(data: &mut [T], plan: &SubBlockPlan, inverse: bool) -> Result<()> {
    if data.len() != plan.rows * plan.cols {
        return Err(Error::LengthMismatch {
            what: "pack_in_place local block",
            expected: plan.rows * plan.cols,
            got: data.len(),
        });
    }
    if plan.rows == 0 || plan.cols == 0 {
        return Ok(());
    }
    let rows = plan.rows;
    let cols = plan.cols;
    let Regions {
        a: (na, la),
        b: (nb, lb),
    } = plan.regions();
    let boundary = plan.boundary();

    let scratch_len = plan.scratch_len();
    memmon::track_alloc(
        "repartition.pack.scratch",
        Category::Temporary,
        (scratch_len * std::mem::size_of::<T>()) as u64,
    );
    let mut scratch = vec![data[0]; scratch_len];

    // Slot `s` of a region lives in column `s / n` at row offset
    // `(s % n) * len`; packed order enumerates `(dest, col)` pairs, so the
    // forward permutation sends slot `(col, dest)` to index `dest*cols+col`.
    let a_addr = |s: usize| (s / na.max(1)) * rows + (s % na.max(1)) * la;
    let a_fwd_src = |m: usize| (m % cols) * na + m / cols;
    let a_inv_src = |m: usize| (m % na) * cols + m / na;
    let b_addr = |s: usize| (s / nb.max(1)) * rows + boundary + (s % nb.max(1)) * lb;
    let b_fwd_src = |m: usize| (m % cols) * nb + m / cols;
    let b_inv_src = |m: usize| (m % nb) * cols + m / nb;

    if !inverse {
        if na > 0 {
            permute_slots(data, na * cols, la, a_addr, a_fwd_src, &mut scratch);
        }
        if nb > 0 {
            permute_slots(data, nb * cols, lb, b_addr, b_fwd_src, &mut scratch);
        }
        unzip_regions(data, boundary, rows - boundary, cols);
    } else {
        zip_regions(data, boundary, rows - boundary, cols);
        if na > 0 {
            permute_slots(data, na * cols, la, a_addr, a_inv_src, &mut scratch);
        }
        if nb > 0 {
            permute_slots(data, nb * cols, lb, b_addr, b_inv_src, &mut scratch);
        }
    }

    drop(scratch);
    memmon::track_free("repartition.pack.scratch");
    Ok(())
}

/// The classic buffered rearrangement: materializes the full per-element
/// mapping index and a same-size staging buffer, then copies through them.
/// Kept as the baseline the in-place path is benchmarked and verified
/// against; the in-place path never calls it.
pub fn pack_reference<T: Copy>(data: &[T], plan: &SubBlockPlan) -> Result<Vec<T>> {
    if data.len() != plan.rows * plan.cols {
        return Err(Error::LengthMismatch {
            what: "pack_reference local block",
            expected: plan.rows * plan.cols,
            got: data.len(),
        });
    }
    if data.is_empty() {
        return Ok(Vec::new());
    }
    memmon::track_alloc(
        "repartition.reference.map",
        Category::Temporary,
        (data.len() * std::mem::size_of::<u32>()) as u64,
    );
    memmon::track_alloc(
        "repartition.reference.buffer",
        Category::Temporary,
        std::mem::size_of_val(data) as u64,
    );
    let mut map = vec![0u32; data.len()];
    for col in 0..plan.cols {
        for row in 0..plan.rows {
            let dest = block_owner(plan.rows, plan.parts, row);
            let (offset, _) = plan.map_index(col, dest)?;
            let within = row - block_range(plan.rows, plan.parts, dest).start;
            map[col * plan.rows + row] = (offset + within) as u32;
        }
    }
    let mut buffer = vec![data[0]; data.len()];
    for (src_idx, &target) in map.iter().enumerate() {
        buffer[target as usize] = data[src_idx];
    }
    drop(map);
    memmon::track_free("repartition.reference.map");
    // The buffer is returned to the caller; account for it there.
    memmon::track_free("repartition.reference.buffer");
    Ok(buffer)
}

/// Buffered inverse of [`pack_reference`]: rebuilds column-major order
/// from destination-major packed order through the same mapping index.
pub fn unpack_reference<T: Copy>(packed: &[T], plan: &SubBlockPlan) -> Result<Vec<T>> {
    if packed.len() != plan.rows * plan.cols {
        return Err(Error::LengthMismatch {
            what: "unpack_reference packed block",
            expected: plan.rows * plan.cols,
            got: packed.len(),
        });
    }
    if packed.is_empty() {
        return Ok(Vec::new());
    }
    memmon::track_alloc(
        "repartition.reference.map",
        Category::Temporary,
        (packed.len() * std::mem::size_of::<u32>()) as u64,
    );
    memmon::track_alloc(
        "repartition.reference.buffer",
        Category::Temporary,
        std::mem::size_of_val(packed) as u64,
    );
    let mut map = vec![0u32; packed.len()];
    for col in 0..plan.cols {
        for row in 0..plan.rows {
            let dest = block_owner(plan.rows, plan.parts, row);
            let (offset, _) = plan.map_index(col, dest)?;
            let within = row - block_range(plan.rows, plan.parts, dest).start;
            map[col * plan.rows + row] = (offset + within) as u32;
        }
    }
    let mut out = vec![packed[0]; packed.len()];
    for (dst_idx, &src) in map.iter().enumerate() {
        out[dst_idx] = packed[src as usize];
    }
    drop(map);
    memmon::track_free("repartition.reference.map");
    memmon::track_free("repartition.reference.buffer");
    Ok(out)
}
