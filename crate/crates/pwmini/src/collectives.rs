//! Baseline collectives and the multistage allreduce.
//!
//! The multistage variant arranges `P` ranks into row domains of `C` (or
//! more) consecutive ranks and reduces a vector in three stages:
//!
//! 1. the vector is split into `C` blocks and each row domain performs one
//!    rooted reduce per block (the member with in-domain coordinate `j`
//!    roots block `j`);
//! 2. the `C` column domains — one member per row domain — allreduce their
//!    block with recursive doubling (column-domain sizes are uniform, so a
//!    power-of-2-friendly count can be chosen by picking `C`);
//! 3. each row domain exchanges blocks so every member, including the
//!    "extra" members with coordinate `j >= C`, assembles the full vector.
//!
//! With `C = 1` the schedule degenerates to plain recursive doubling over
//! the whole world and produces bitwise the same result as
//! [`baseline_allreduce`]. Reduction is fixed to `f64` summation; stages
//! may reassociate sums, so distributed results agree with a serial oracle
//! to rounding, not bitwise.
//!
//! All collectives here are flat and synchronous: every rank of the world
//! must enter the call, and one collective may be in flight per world at a
//! time.

use crate::error::{Error, Result};
use crate::partition::{block_owner, block_range};
use crate::transport::{Counters, Element, Rank, Tag, World};
use std::ops::Range;
use std::time::Instant;

const TAG_REDUCE: Tag = 0x0140;
const TAG_PREFOLD: Tag = 0x0141;
const TAG_DOUBLE: Tag = 0x0142;
const TAG_UNFOLD: Tag = 0x0143;
const TAG_EXCHANGE: Tag = 0x0144;
const TAG_GATHERV: Tag = 0x0145;
const TAG_ALLTOALLV: Tag = 0x0146;
const TAG_BCAST: Tag = 0x0147;

/// Two-dimensional process arrangement for the multistage allreduce.
///
/// `P` ranks form `R = max(⌊P/C⌋, 1)` row domains of consecutive ranks
/// whose sizes differ by at most one (so every row domain has at least `C`
/// members). A rank's coordinates are `(i, j)`: row domain index and
/// offset within it. Members with `j >= C` are *extra* ranks: they feed
/// stage 1 and receive in stage 3 but sit out stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReduceGrid {
    p: usize,
    c: usize,
    rows: usize,
}

impl ReduceGrid {
    pub fn new(p: usize, c: usize) -> Result<Self> {
        if c < 1 || c > p {
            return Err(Error::InvalidArgument(format!(
                "column parameter C={c} must satisfy 1 <= C <= P={p}"
            )));
        }
        Ok(ReduceGrid {
            p,
            c,
            rows: (p / c).max(1),
        })
    }

    pub fn process_count(&self) -> usize {
        self.p
    }

    pub fn columns(&self) -> usize {
        self.c
    }

    /// Number of row domains, `R`.
    pub fn row_domains(&self) -> usize {
        self.rows
    }

    /// Ranks of row domain `i`.
    pub fn row_domain(&self, i: usize) -> Range<Rank> {
        block_range(self.p, self.rows, i)
    }

    /// `(i, j)` coordinates of `rank`.
    pub fn coords(&self, rank: Rank) -> (usize, usize) {
        let i = block_owner(self.p, self.rows, rank);
        (i, rank - self.row_domain(i).start)
    }

    /// Whether `rank` is an extra process (`j >= C`).
    pub fn is_extra(&self, rank: Rank) -> bool {
        self.coords(rank).1 >= self.c
    }

    /// Ranks of column domain `j` (one per row domain), for `j < C`.
    pub fn column_domain(&self, j: usize) -> Vec<Rank> {
        (0..self.rows)
            .map(|i| self.row_domain(i).start + j)
            .collect()
    }
}

/// Coordinates of `rank` in the `(P, C)` grid.
pub fn grid_coords(p: usize, c: usize, rank: Rank) -> Result<(usize, usize)> {
    let grid = ReduceGrid::new(p, c)?;
    if rank >= p {
        return Err(Error::RankOutOfRange { rank, size: p });
    }
    Ok(grid.coords(rank))
}

/// Contiguous split of `n_elems` into `c` blocks whose sizes differ by at
/// most one (first `n_elems mod c` blocks are larger). Ranges are computed
/// on demand; nothing per-element is stored.
#[derive(Clone, Copy, Debug)]
pub struct BlockSplit {
    n_elems: usize,
    c: usize,
}

impl BlockSplit {
    pub fn new(n_elems: usize, c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::InvalidArgument("block split needs c >= 1".into()));
        }
        Ok(BlockSplit { n_elems, c })
    }

    pub fn blocks(&self) -> usize {
        self.c
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        block_range(self.n_elems, self.c, k)
    }
}

/// Rooted elementwise sum: after the call, `root`'s `data` holds the sum
/// of all ranks' vectors (accumulated in rank order); other ranks' buffers
/// are unchanged.
pub fn reduce(world: &World, root: Rank, data: &mut [f64]) -> Result<()> {
    if root >= world.size() {
        return Err(Error::RankOutOfRange {
            rank: root,
            size: world.size(),
        });
    }
    if world.size() == 1 {
        return Ok(());
    }
    if world.rank() == root {
        let mut incoming = vec![0.0; data.len()];
        for src in 0..world.size() {
            if src == root {
                continue;
            }
            world.recv_into(src, TAG_REDUCE, &mut incoming)?;
            for (acc, v) in data.iter_mut().zip(&incoming) {
                *acc += v;
            }
        }
    } else {
        world.send(root, TAG_REDUCE, data)?;
    }
    Ok(())
}

/// Every rank contributes a variable-length vector; all ranks receive all
/// contributions, indexed by rank.
pub fn allgatherv<T: Element>(world: &World, mine: &[T]) -> Result<Vec<Vec<T>>> {
    let p = world.size();
    let mut handles = Vec::with_capacity(p.saturating_sub(1));
    for dest in 0..p {
        if dest != world.rank() {
            handles.push(world.isend(dest, TAG_GATHERV, mine.to_vec())?);
        }
    }
    let mut out = Vec::with_capacity(p);
    for src in 0..p {
        if src == world.rank() {
            out.push(mine.to_vec());
        } else {
            out.push(world.recv(src, TAG_GATHERV)?);
        }
    }
    for h in handles {
        h.wait()?;
    }
    Ok(out)
}

/// Personalized exchange: `blocks[d]` is delivered to rank `d`; the result
/// holds one received block per source rank (own block passes through).
pub fn alltoallv<T: Element>(world: &World, blocks: Vec<Vec<T>>) -> Result<Vec<Vec<T>>> {
    let p = world.size();
    if blocks.len() != p {
        return Err(Error::LengthMismatch {
            what: "alltoallv per-destination blocks",
            expected: p,
            got: blocks.len(),
        });
    }
    let mut own = None;
    let mut handles = Vec::with_capacity(p.saturating_sub(1));
    for (dest, block) in blocks.into_iter().enumerate() {
        if dest == world.rank() {
            own = Some(block);
        } else {
            handles.push(world.isend(dest, TAG_ALLTOALLV, block)?);
        }
    }
    let mut out = Vec::with_capacity(p);
    for src in 0..p {
        if src == world.rank() {
            out.push(own.take().expect("own block present"));
        } else {
            out.push(world.recv(src, TAG_ALLTOALLV)?);
        }
    }
    for h in handles {
        h.wait()?;
    }
    Ok(out)
}

/// Flat broadcast of `root`'s buffer into every rank's `data`.
pub fn bcast<T: Element>(world: &World, root: Rank, data: &mut [T]) -> Result<()> {
    if root >= world.size() {
        return Err(Error::RankOutOfRange {
            rank: root,
            size: world.size(),
        });
    }
    if world.rank() == root {
        for dest in 0..world.size() {
            if dest != root {
                world.send(dest, TAG_BCAST, data)?;
            }
        }
        Ok(())
    } else {
        world.recv_into(root, TAG_BCAST, data)
    }
}

fn prev_power_of_two(n: usize) -> usize {
    debug_assert!(n >= 1);
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Recursive-doubling allreduce (elementwise `f64` sum). Non-power-of-2
/// worlds pre-fold the first `2e` ranks pairwise (`e = P - 2^⌊log2 P⌋`)
/// onto the even member, run the power-of-2 exchange, and unfold at the
/// end. Every rank finishes with bitwise-identical contents.
pub fn baseline_allreduce(world: &World, data: &mut [f64]) -> Result<()> {
    let p = world.size();
    if p == 1 {
        return Ok(());
    }
    let me = world.rank();
    let q = prev_power_of_two(p);
    let e = p - q;

    let virtual_id = if me < 2 * e {
        if me % 2 == 1 {
            world.send(me - 1, TAG_PREFOLD, data)?;
            None
        } else {
            let mut incoming = vec![0.0; data.len()];
            world.recv_into(me + 1, TAG_PREFOLD, &mut incoming)?;
            for (acc, v) in data.iter_mut().zip(&incoming) {
                *acc += v;
            }
            Some(me / 2)
        }
    } else {
        Some(me - e)
    };

    if let Some(vid) = virtual_id {
        let unvirtual = |v: usize| if v < e { 2 * v } else { v + e };
        let mut incoming = vec![0.0; data.len()];
        let mut mask = 1;
        while mask < q {
            let peer = unvirtual(vid ^ mask);
            let h = world.isend(peer, TAG_DOUBLE, data.to_vec())?;
            world.recv_into(peer, TAG_DOUBLE, &mut incoming)?;
            for (acc, v) in data.iter_mut().zip(&incoming) {
                *acc += v;
            }
            h.wait()?;
            mask <<= 1;
        }
    }

    if me < 2 * e {
        if me % 2 == 0 {
            world.send(me + 1, TAG_UNFOLD, data)?;
        } else {
            world.recv_into(me - 1, TAG_UNFOLD, data)?;
        }
    }
    Ok(())
}

/// Per-stage traffic of one multistage allreduce on the calling rank.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageStats {
    pub secs: [f64; 3],
    pub msgs_sent: [u64; 3],
    pub msgs_received: [u64; 3],
    pub bytes_sent: [u64; 3],
    pub bytes_received: [u64; 3],
}

impl StageStats {
    pub fn total_msgs_sent(&self) -> u64 {
        self.msgs_sent.iter().sum()
    }

    pub fn total_bytes_sent(&self) -> u64 {
        self.bytes_sent.iter().sum()
    }
}

/// Messages a rank sends/receives in one stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MsgCount {
    pub sent: u64,
    pub received: u64,
}

/// Closed-form per-rank, per-stage message counts for the multistage
/// schedule (the quantity the transport counters are checked against).
pub fn predicted_message_counts(p: usize, c: usize, rank: Rank) -> Result<[MsgCount; 3]> {
    let grid = ReduceGrid::new(p, c)?;
    if rank >= p {
        return Err(Error::RankOutOfRange { rank, size: p });
    }
    let (i, j) = grid.coords(rank);
    let s = grid.row_domain(i).len() as u64;
    let c64 = c as u64;

    let stage1 = if j < c {
        MsgCount {
            sent: c64 - 1,
            received: s - 1,
        }
    } else {
        MsgCount {
            sent: c64,
            received: 0,
        }
    };

    let stage2 = if j >= c {
        MsgCount::default()
    } else {
        let r = grid.row_domains();
        let q = prev_power_of_two(r);
        let e = (r - q) as u64;
        let rounds = q.trailing_zeros() as u64;
        let pos = i as u64;
        if pos < 2 * e {
            if pos % 2 == 1 {
                MsgCount {
                    sent: 1,
                    received: 1,
                }
            } else {
                MsgCount {
                    sent: rounds + 1,
                    received: rounds + 1,
                }
            }
        } else {
            MsgCount {
                sent: rounds,
                received: rounds,
            }
        }
    };

    let stage3 = if j < c {
        MsgCount {
            sent: s - 1,
            received: c64 - 1,
        }
    } else {
        MsgCount {
            sent: 0,
            received: c64,
        }
    };

    Ok([stage1, stage2, stage3])
}

/// Reusable multistage-allreduce schedule.
///
/// Building one allocates the row- and column-domain subgroups once; the
/// [`apply`](Self::apply) call can then run any number of times (each
/// world supports a bounded number of subgroup creations, so per-call
/// subgroup setup would not survive an iterative solver).
pub struct MultistageAllreduce {
    grid: ReduceGrid,
    coords: (usize, usize),
    row: World,
    col: Option<World>,
}

impl MultistageAllreduce {
    pub fn new(world: &World, c: usize) -> Result<Self> {
        let grid = ReduceGrid::new(world.size(), c)?;
        let me = world.rank();
        let coords = grid.coords(me);
        let mut row = None;
        for i in 0..grid.row_domains() {
            let members: Vec<Rank> = grid.row_domain(i).collect();
            let sub = world.subgroup(&members)?;
            if grid.row_domain(i).contains(&me) {
                row = sub;
            }
        }
        let mut col = None;
        for j in 0..grid.columns() {
            let members = grid.column_domain(j);
            let sub = world.subgroup(&members)?;
            if coords.1 == j {
                col = sub;
            }
        }
        Ok(MultistageAllreduce {
            grid,
            coords,
            row: row.expect("every rank belongs to one row domain"),
            col,
        })
    }

    pub fn grid(&self) -> &ReduceGrid {
        &self.grid
    }

    /// Runs the three-stage allreduce in place and reports per-stage
    /// traffic. Wall-clock numbers are always measured; consumers decide
    /// whether to publish them.
    pub fn apply(&self, data: &mut [f64]) -> Result<StageStats> {
        let c = self.grid.columns();
        let split = BlockSplit::new(data.len(), c)?;
        let j = self.coords.1;
        let mut stats = StageStats::default();

        let mark =
            |w: &World, o: Option<&World>| (w.counters(), o.map(|x| x.counters()).unwrap_or_default());
        let settle = |stats: &mut StageStats,
                      stage: usize,
                      before: (Counters, Counters),
                      w: &World,
                      o: Option<&World>,
                      t0: Instant| {
            let after = (w.counters(), o.map(|x| x.counters()).unwrap_or_default());
            stats.secs[stage] = t0.elapsed().as_secs_f64();
            stats.msgs_sent[stage] = (after.0.msgs_sent - before.0.msgs_sent)
                + (after.1.msgs_sent - before.1.msgs_sent);
            stats.msgs_received[stage] = (after.0.msgs_received - before.0.msgs_received)
                + (after.1.msgs_received - before.1.msgs_received);
            stats.bytes_sent[stage] = (after.0.bytes_sent - before.0.bytes_sent)
                + (after.1.bytes_sent - before.1.bytes_sent);
            stats.bytes_received[stage] = (after.0.bytes_received - before.0.bytes_received)
                + (after.1.bytes_received - before.1.bytes_received);
        };

        // Stage 1: rooted reduces inside the row domain. Members are
        // consecutive ranks, so in-domain coordinate == subgroup rank and
        // block k's root is subgroup rank k.
        let before = mark(&self.row, self.col.as_ref());
        let t0 = Instant::now();
        for k in 0..c {
            reduce(&self.row, k, &mut data[split.range(k)])?;
        }
        settle(&mut stats, 0, before, &self.row, self.col.as_ref(), t0);

        // Stage 2: recursive doubling across the column domain (extras
        // hold no block and sit this stage out).
        let before = mark(&self.row, self.col.as_ref());
        let t0 = Instant::now();
        if let Some(col) = &self.col {
            baseline_allreduce(col, &mut data[split.range(j)])?;
        }
        settle(&mut stats, 1, before, &self.row, self.col.as_ref(), t0);

        // Stage 3: block exchange inside the row domain. Block owners
        // (subgroup ranks < C) send their reduced block to every other
        // member; everyone else only receives.
        let before = mark(&self.row, self.col.as_ref());
        let t0 = Instant::now();
        let s = self.row.size();
        let mut handles = Vec::new();
        if j < c {
            let block = data[split.range(j)].to_vec();
            for t in 0..s {
                if t != j {
                    handles.push(self.row.isend(t, TAG_EXCHANGE, block.clone())?);
                }
            }
        }
        for k in 0..c {
            if k == j {
                continue;
            }
            self.row
                .recv_into(k, TAG_EXCHANGE, &mut data[split.range(k)])?;
        }
        for h in handles {
            h.wait()?;
        }
        settle(&mut stats, 2, before, &self.row, self.col.as_ref(), t0);

        Ok(stats)
    }
}

/// One-shot multistage allreduce. Iterative callers should build a
/// [`MultistageAllreduce`] once and reuse it.
pub fn multistage_allreduce(world: &World, c: usize, data: &mut [f64]) -> Result<StageStats> {
    MultistageAllreduce::new(world, c)?.apply(data)
}
