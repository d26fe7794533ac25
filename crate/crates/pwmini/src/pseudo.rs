//! Nonlocal pseudopotentials: distributed storage and ring application.
//!
//! The nonlocal potential is a sum of rank-1 projector updates over atoms,
//!
//! ```text
//! V_NL ψ = Σ_a Σ_l γ_{a,l} · β_{a,l} · ⟨β_{a,l}, ψ⟩ · ΔV
//! ```
//!
//! with per-atom projectors β on the real-space grid and the quadrature
//! weight ΔV = Ω / N_r. Holding every atom's projectors on every rank
//! costs A·entry_bytes per rank; instead each rank owns one shard of
//! ⌈A/P⌉ atoms and the shards circulate around a ring (rank → rank+1), so
//! each shard crosses each link exactly once and per-rank storage stays at
//! one shard plus a bounded prefetch window of in-flight shards.
//!
//! Application order is fixed by ring position — rank `p` applies the
//! shards originating at `p, p-1, …` (mod P), each atom in ascending
//! global index within its shard — so results are independent of the
//! window size bit for bit, and the single-rank case degenerates to the
//! replicated reference exactly.

use crate::error::{Error, Result};
use crate::layout::{DistMatrix, Layout};
use crate::partition::block_range;
use crate::transport::{Rank, Tag, World};
use crate::Complex64;
use std::cell::Cell;
use std::collections::VecDeque;
use std::ops::Range;

const TAG_RING: Tag = 0x0160;

/// Per-entry wire header: [u64 atom_id][u32 kind][u32 L][u32 N_r].
const ENTRY_HEADER_BYTES: usize = 8 + 4 + 4 + 4;

/// One atom's nonlocal pseudopotential: `L` projector vectors over the
/// real-space grid and their coupling weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoEntry {
    pub atom_id: u64,
    pub kind: u32,
    projectors: Vec<Vec<Complex64>>,
    weights: Vec<f64>,
}

impl PseudoEntry {
    pub fn new(
        atom_id: u64,
        kind: u32,
        projectors: Vec<Vec<Complex64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if projectors.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "pseudopotential entry for atom {atom_id} needs at least one projector"
            )));
        }
        if weights.len() != projectors.len() {
            return Err(Error::LengthMismatch {
                what: "pseudopotential weights",
                expected: projectors.len(),
                got: weights.len(),
            });
        }
        let n_r = projectors[0].len();
        if n_r == 0 || projectors.iter().any(|p| p.len() != n_r) {
            return Err(Error::ShapeMismatch {
                what: "pseudopotential projectors",
                detail: format!("atom {atom_id}: projector lengths differ or are zero"),
            });
        }
        Ok(PseudoEntry {
            atom_id,
            kind,
            projectors,
            weights,
        })
    }

    pub fn l_channels(&self) -> usize {
        self.projectors.len()
    }

    pub fn grid_len(&self) -> usize {
        self.projectors[0].len()
    }

    pub fn projector(&self, l: usize) -> &[Complex64] {
        &self.projectors[l]
    }

    pub fn weight(&self, l: usize) -> f64 {
        self.weights[l]
    }

    /// Size of the serialized record.
    pub fn encoded_len(&self) -> usize {
        ENTRY_HEADER_BYTES + self.l_channels() * self.grid_len() * 16 + self.l_channels() * 8
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.atom_id.to_le_bytes());
        out.extend_from_slice(&self.kind.to_le_bytes());
        out.extend_from_slice(&(self.l_channels() as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid_len() as u32).to_le_bytes());
        for beta in &self.projectors {
            for z in beta {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    fn decode_from(buf: &[u8], pos: &mut usize) -> Result<Self> {
        let truncated = |need: usize, at: usize| {
            Error::FileFormat(format!(
                "shard record truncated: need {need} bytes at offset {at}, have {}",
                buf.len()
            ))
        };
        if buf.len() - *pos < ENTRY_HEADER_BYTES {
            return Err(truncated(ENTRY_HEADER_BYTES, *pos));
        }
        let at = *pos;
        let atom_id = u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
        let kind = u32::from_le_bytes(buf[at + 8..at + 12].try_into().unwrap());
        let l = u32::from_le_bytes(buf[at + 12..at + 16].try_into().unwrap()) as usize;
        let n_r = u32::from_le_bytes(buf[at + 16..at + 20].try_into().unwrap()) as usize;
        *pos += ENTRY_HEADER_BYTES;
        let payload = l
            .checked_mul(n_r)
            .and_then(|ln| ln.checked_mul(16))
            .and_then(|b| b.checked_add(l * 8))
            .ok_or_else(|| Error::FileFormat("shard record size overflows".into()))?;
        if buf.len() - *pos < payload {
            return Err(truncated(payload, *pos));
        }
        let mut projectors = Vec::with_capacity(l);
        for _ in 0..l {
            let mut beta = Vec::with_capacity(n_r);
            for _ in 0..n_r {
                let re = f64::from_le_bytes(buf[*pos..*pos + 8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[*pos + 8..*pos + 16].try_into().unwrap());
                beta.push(Complex64::new(re, im));
                *pos += 16;
            }
            projectors.push(beta);
        }
        let mut weights = Vec::with_capacity(l);
        for _ in 0..l {
            weights.push(f64::from_le_bytes(buf[*pos..*pos + 8].try_into().unwrap()));
            *pos += 8;
        }
        PseudoEntry::new(atom_id, kind, projectors, weights)
    }
}

/// Serializes a shard as back-to-back entry records.
pub fn encode_shard(entries: &[PseudoEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.iter().map(PseudoEntry::encoded_len).sum());
    for e in entries {
        e.encode_into(&mut out);
    }
    out
}

/// Parses back-to-back entry records until the buffer is exhausted.
pub fn decode_shard(bytes: &[u8]) -> Result<Vec<PseudoEntry>> {
    let mut entries = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        entries.push(PseudoEntry::decode_from(bytes, &mut pos)?);
    }
    Ok(entries)
}

/// The contiguous atom ranges of each rank's shard: sizes differ by at
/// most one, in rank order.
pub fn shard_ranges(total_atoms: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts).map(|p| block_range(total_atoms, parts, p)).collect()
}

/// One rank's slice of the global atom list.
#[derive(Clone, Debug)]
pub struct AtomShard {
    owner: Rank,
    atoms: Range<usize>,
    entries: Vec<PseudoEntry>,
}

impl AtomShard {
    pub fn new(owner: Rank, atoms: Range<usize>, entries: Vec<PseudoEntry>) -> Result<Self> {
        if entries.len() != atoms.len() {
            return Err(Error::LengthMismatch {
                what: "shard entries",
                expected: atoms.len(),
                got: entries.len(),
            });
        }
        for (offset, entry) in entries.iter().enumerate() {
            let expect = (atoms.start + offset) as u64;
            if entry.atom_id != expect {
                return Err(Error::ShapeMismatch {
                    what: "shard atom ids",
                    detail: format!("entry {offset} has atom id {}, expected {expect}", entry.atom_id),
                });
            }
        }
        Ok(AtomShard {
            owner,
            atoms,
            entries,
        })
    }

    /// Splits a replicated global entry list into this rank's shard.
    pub fn for_rank(world: &World, all_entries: &[PseudoEntry]) -> Result<Self> {
        let atoms = block_range(all_entries.len(), world.size(), world.rank());
        AtomShard::new(
            world.rank(),
            atoms.clone(),
            all_entries[atoms].to_vec(),
        )
    }

    pub fn owner(&self) -> Rank {
        self.owner
    }

    pub fn atoms(&self) -> Range<usize> {
        self.atoms.clone()
    }

    pub fn entries(&self) -> &[PseudoEntry] {
        &self.entries
    }
}

/// Accumulates `V_NL ψ` contributions of `entries` (in list order) onto
/// `out`, column by column, with the fixed per-wavefunction ordering that
/// makes runs bitwise reproducible.
fn apply_entries(
    entries: &[PseudoEntry],
    wf: &DistMatrix<Complex64>,
    out: &mut DistMatrix<Complex64>,
    dv: f64,
) -> Result<()> {
    let n_r = wf.local_rows();
    for entry in entries {
        if entry.grid_len() != n_r {
            return Err(Error::ShapeMismatch {
                what: "projector grid",
                detail: format!(
                    "atom {} projectors have {} grid points, wavefunctions have {n_r}",
                    entry.atom_id,
                    entry.grid_len()
                ),
            });
        }
        for col in 0..wf.local_cols() {
            let psi = wf.column(col);
            let acc = out.column_mut(col);
            for (beta, &gamma) in entry.projectors.iter().zip(&entry.weights) {
                let mut inner = Complex64::new(0.0, 0.0);
                for (b, p) in beta.iter().zip(psi) {
                    inner += b.conj() * p;
                }
                let coef = inner * (gamma * dv);
                for (o, b) in acc.iter_mut().zip(beta) {
                    *o += coef * b;
                }
            }
        }
    }
    Ok(())
}

/// Replicated-storage reference: every rank holds all `A` entries and
/// applies them to its local wavefunctions in global atom order. This is
/// the oracle and the memory-cost baseline for the ring pipeline.
pub fn apply_vnl_reference(
    world: &World,
    wf: &DistMatrix<Complex64>,
    all_entries: &[PseudoEntry],
    dv: f64,
) -> Result<DistMatrix<Complex64>> {
    let mut out = DistMatrix::zeros(world, Layout::ColumnBlock, wf.rows(), wf.cols());
    apply_entries(all_entries, wf, &mut out, dv)?;
    Ok(out)
}

/// Ring-pipelined distributed application with a sliding prefetch window.
///
/// Every rank applies its own shard first, forwards it to `rank+1`, and
/// then works through the shards arriving from `rank-1` — keeping at most
/// `window` shards in local possession (the one in use plus up to
/// `window - 1` prefetched). Each shard transits each ring link exactly
/// once: a full application sends `P-1` shard messages per rank.
pub fn apply_vnl_distributed(
    world: &World,
    wf: &DistMatrix<Complex64>,
    shard: &AtomShard,
    window: usize,
    dv: f64,
) -> Result<DistMatrix<Complex64>> {
    if window < 1 {
        return Err(Error::InvalidArgument(format!(
            "sliding window must be at least 1, got {window}"
        )));
    }
    if shard.owner != world.rank() {
        return Err(Error::ShapeMismatch {
            what: "atom shard owner",
            detail: format!("shard owned by {}, applied on rank {}", shard.owner, world.rank()),
        });
    }
    let p = world.size();
    let me = world.rank();
    let mut out = DistMatrix::zeros(world, Layout::ColumnBlock, wf.rows(), wf.cols());
    if p == 1 {
        apply_entries(&shard.entries, wf, &mut out, dv)?;
        return Ok(out);
    }

    let next = (me + 1) % p;
    let prev = (me + p - 1) % p;
    let mut current = shard.entries.clone();
    let mut current_bytes = encode_shard(&current);
    let mut prefetched: VecDeque<Vec<u8>> = VecDeque::new();
    for step in 0..p {
        let last = step + 1 == p;
        if !last {
            // Forward before computing so the downstream rank can overlap.
            world.isend(next, TAG_RING, current_bytes)?.wait()?;
            current_bytes = Vec::new();
        }
        apply_entries(&current, wf, &mut out, dv)?;
        if !last {
            // Top up the prefetch queue without blocking, bounded by the
            // window, then take the next shard (blocking only if it has
            // not arrived yet).
            while prefetched.len() + 1 < window {
                match world.try_recv::<u8>(prev, TAG_RING)? {
                    Some(bytes) => prefetched.push_back(bytes),
                    None => break,
                }
            }
            let bytes = match prefetched.pop_front() {
                Some(bytes) => bytes,
                None => world.recv::<u8>(prev, TAG_RING)?,
            };
            current = decode_shard(&bytes)?;
            current_bytes = bytes;
        }
    }
    Ok(out)
}

/// Replicated vs. distributed per-rank pseudopotential storage in bytes:
/// `(A·entry_bytes, ⌈A/P⌉·entry_bytes)`.
pub fn pseudo_memory_report(atoms: u64, entry_bytes: u64, parts: u64) -> (u64, u64) {
    (atoms * entry_bytes, atoms.div_ceil(parts) * entry_bytes)
}

/// Shared per-kind projector shape parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KindRecord {
    pub atomic_number: u32,
    pub l_channels: usize,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

/// Dense atom-kind registry indexed directly by atomic number.
///
/// The point of the structure is the access pattern: `lookup` is a single
/// array index — no hashing, no probing, no search loop — which the probe
/// counter makes checkable (exactly one probe per lookup at any capacity
/// or occupancy).
pub struct KindTable {
    slots: Vec<Option<KindRecord>>,
    probes: Cell<u64>,
}

impl KindTable {
    /// Typical upper bound on distinct atom kinds in a calculation.
    pub const DEFAULT_CAPACITY: usize = 200;

    pub fn with_capacity(capacity: usize) -> Self {
        KindTable {
            slots: vec![None; capacity],
            probes: Cell::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn register(&mut self, record: KindRecord) -> Result<()> {
        let idx = record.atomic_number as usize;
        if idx >= self.slots.len() {
            return Err(Error::InvalidArgument(format!(
                "atomic number {idx} outside kind table capacity {}",
                self.slots.len()
            )));
        }
        self.slots[idx] = Some(record);
        Ok(())
    }

    /// Direct-indexed lookup; `Ok(None)` marks an explicit empty slot.
    pub fn lookup(&self, atomic_number: usize) -> Result<Option<&KindRecord>> {
        if atomic_number >= self.slots.len() {
            return Err(Error::InvalidArgument(format!(
                "atomic number {atomic_number} outside kind table capacity {}",
                self.slots.len()
            )));
        }
        self.probes.set(self.probes.get() + 1);
        Ok(self.slots[atomic_number].as_ref())
    }

    /// Number of slot accesses performed so far (one per lookup).
    pub fn probe_count(&self) -> u64 {
        self.probes.get()
    }

    pub fn registered(&self) -> impl Iterator<Item = &KindRecord> {
        self.slots.iter().filter_map(Option::as_ref)
    }
}

/// Synthesizes one atom's entry on a periodic real-space grid: projector
/// `l` is a normalized Gaussian of width `sigma` around `center` times a
/// low-order polynomial (1, dx, dy, dz, dx·dy, …), using minimum-image
/// distances. Grid index order is x-fastest: `idx = i + n0·(j + n1·k)`.
pub fn synthesize_entry(
    atom_id: u64,
    record: &KindRecord,
    dims: [usize; 3],
    box_len: [f64; 3],
    center: [f64; 3],
) -> Result<PseudoEntry> {
    let n_r = dims[0] * dims[1] * dims[2];
    if n_r == 0 {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if record.l_channels == 0 || record.l_channels > 10 {
        return Err(Error::InvalidArgument(format!(
            "{} projector channels unsupported (1..=10)",
            record.l_channels
        )));
    }
    if record.weights.len() != record.l_channels {
        return Err(Error::LengthMismatch {
            what: "kind record weights",
            expected: record.l_channels,
            got: record.weights.len(),
        });
    }
    let dv = (box_len[0] * box_len[1] * box_len[2]) / n_r as f64;
    let poly = |l: usize, d: [f64; 3]| -> f64 {
        match l {
            0 => 1.0,
            1 => d[0],
            2 => d[1],
            3 => d[2],
            4 => d[0] * d[1],
            5 => d[1] * d[2],
            6 => d[0] * d[2],
            7 => d[0] * d[0] - d[1] * d[1],
            8 => 3.0 * d[2] * d[2] - (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]),
            _ => d[0] * d[1] * d[2],
        }
    };
    let mut projectors = Vec::with_capacity(record.l_channels);
    for l in 0..record.l_channels {
        let mut beta = Vec::with_capacity(n_r);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let d = minimum_image(
                        [i, j, k],
                        dims,
                        box_len,
                        center,
                    );
                    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                    let g = (-r2 / (2.0 * record.sigma * record.sigma)).exp();
                    beta.push(Complex64::new(poly(l, d) * g, 0.0));
                }
            }
        }
        // x is the fastest index above but beta was filled k-slowest;
        // rebuild in x-fastest order expected by the FFT grid.
        let mut ordered = vec![Complex64::new(0.0, 0.0); n_r];
        let mut it = beta.into_iter();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    ordered[i + dims[0] * (j + dims[1] * k)] = it.next().expect("sized loop");
                }
            }
        }
        let norm2: f64 = ordered.iter().map(|z| z.norm_sqr()).sum::<f64>() * dv;
        if norm2 > 0.0 {
            let scale = 1.0 / norm2.sqrt();
            for z in &mut ordered {
                *z *= scale;
            }
        }
        projectors.push(ordered);
    }
    PseudoEntry::new(atom_id, record.atomic_number, projectors, record.weights.clone())
}

/// Minimum-image displacement from `center` to grid point `(i, j, k)`.
pub(crate) fn minimum_image(idx: [usize; 3], dims: [usize; 3], box_len: [f64; 3], center: [f64; 3]) -> [f64; 3] {
    let mut d = [0.0; 3];
    for axis in 0..3 {
        let h = box_len[axis] / dims[axis] as f64;
        let mut delta = idx[axis] as f64 * h - center[axis];
        delta -= (delta / box_len[axis]).round() * box_len[axis];
        d[axis] = delta;
    }
    d
}
