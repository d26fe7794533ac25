//! Balanced contiguous block partitions.
//!
//! Every distribution in the crate (matrix rows, matrix columns, reduce
//! blocks, atom shards) uses the same rule: split `n` items over `parts`
//! slots so the first `n % parts` slots get `n / parts + 1` items and the
//! rest get `n / parts`. Sizes differ by at most one and concatenating the
//! slots in order reproduces the original index space.

use std::ops::Range;

/// Number of items assigned to slot `k`.
pub fn block_len(n: usize, parts: usize, k: usize) -> usize {
    debug_assert!(parts > 0 && k < parts);
    n / parts + usize::from(k < n % parts)
}

/// Half-open index range assigned to slot `k`.
pub fn block_range(n: usize, parts: usize, k: usize) -> Range<usize> {
    debug_assert!(parts > 0 && k < parts);
    let base = n / parts;
    let extra = n % parts;
    let start = k * base + k.min(extra);
    start..start + block_len(n, parts, k)
}

/// Slot that owns item `i`. O(1).
pub fn block_owner(n: usize, parts: usize, i: usize) -> usize {
    debug_assert!(parts > 0 && i < n);
    let base = n / parts;
    let extra = n % parts;
    let boundary = extra * (base + 1);
    if i < boundary {
        i / (base + 1)
    } else {
        extra + (i - boundary) / base
    }
}
