//! Per-rank labeled memory ledger.
//!
//! Large allocations are split into three categories: `Global` (buffers
//! that live for the whole run), `Temporary` (scratch that must be freed
//! before the enclosing operation returns) and `DftData` (wavefunctions,
//! densities, potentials, pseudopotential shards). The ledger tracks live
//! bytes per category plus high-water marks, and emits a report line
//! whenever the grand total moves by at least the reporting threshold:
//!
//! ```text
//! MEM rank=<p> cat=<c> label=<l> delta=<+/-bytes> total=<bytes> hwm=<bytes>
//! ```
//!
//! Ranks are threads here, so the ledger is installed thread-locally with
//! [`install`]; instrumented code (the repartition kernels, the
//! pseudopotential ring) calls [`track_alloc`]/[`track_free`], which are
//! no-ops unless a ledger is installed on the current rank thread.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::transport::World;

pub const CATEGORY_COUNT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Global,
    Temporary,
    DftData,
}

impl Category {
    pub const ALL: [Category; CATEGORY_COUNT] =
        [Category::Global, Category::Temporary, Category::DftData];

    fn index(self) -> usize {
        match self {
            Category::Global => 0,
            Category::Temporary => 1,
            Category::DftData => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Global => "global",
            Category::Temporary => "temporary",
            Category::DftData => "dft_data",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Point-in-time view of one rank's ledger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub live: [u64; CATEGORY_COUNT],
    pub hwm: [u64; CATEGORY_COUNT],
    pub grand_total: u64,
    pub grand_hwm: u64,
}

impl Snapshot {
    pub fn live_in(&self, cat: Category) -> u64 {
        self.live[cat.index()]
    }

    pub fn hwm_in(&self, cat: Category) -> u64 {
        self.hwm[cat.index()]
    }
}

/// Reporting threshold: a line is emitted when the grand total changes by
/// at least `max(floor_bytes, fraction * previous grand total)`.
#[derive(Clone, Copy, Debug)]
pub struct Threshold {
    pub floor_bytes: u64,
    pub fraction: f64,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold {
            floor_bytes: 1 << 20,
            fraction: 0.05,
        }
    }
}

pub struct MemoryLedger {
    rank: usize,
    threshold: Threshold,
    /// label -> (category, bytes). BTreeMap keeps report-related iteration
    /// deterministic.
    live: BTreeMap<String, (Category, u64)>,
    totals: [u64; CATEGORY_COUNT],
    hwm: [u64; CATEGORY_COUNT],
    grand_total: u64,
    grand_hwm: u64,
    lines: Vec<String>,
    echo: bool,
}

impl MemoryLedger {
    pub fn new(rank: usize) -> Self {
        Self::with_threshold(rank, Threshold::default())
    }

    pub fn with_threshold(rank: usize, threshold: Threshold) -> Self {
        MemoryLedger {
            rank,
            threshold,
            live: BTreeMap::new(),
            totals: [0; CATEGORY_COUNT],
            hwm: [0; CATEGORY_COUNT],
            grand_total: 0,
            grand_hwm: 0,
            lines: Vec::new(),
            echo: false,
        }
    }

    /// When set, report lines are also printed to stderr as they happen.
    pub fn set_echo(&mut self, echo: bool) {
        self.echo = echo;
    }

    pub fn record_alloc(&mut self, label: &str, cat: Category, bytes: u64) -> Result<()> {
        if self.live.contains_key(label) {
            return Err(Error::DuplicateLabel {
                label: label.to_string(),
            });
        }
        self.live.insert(label.to_string(), (cat, bytes));
        self.totals[cat.index()] += bytes;
        self.hwm[cat.index()] = self.hwm[cat.index()].max(self.totals[cat.index()]);
        let before = self.grand_total;
        self.grand_total += bytes;
        self.grand_hwm = self.grand_hwm.max(self.grand_total);
        self.maybe_report(before, cat, label, bytes as i64);
        Ok(())
    }

    pub fn record_free(&mut self, label: &str) -> Result<()> {
        let Some((cat, bytes)) = self.live.remove(label) else {
            return Err(Error::UnknownLabel {
                label: label.to_string(),
            });
        };
        self.totals[cat.index()] -= bytes;
        let before = self.grand_total;
        self.grand_total -= bytes;
        self.maybe_report(before, cat, label, -(bytes as i64));
        Ok(())
    }

    fn maybe_report(&mut self, total_before: u64, cat: Category, label: &str, delta: i64) {
        let trigger = (self.threshold.floor_bytes as f64)
            .max(self.threshold.fraction * total_before as f64) as u64;
        if delta.unsigned_abs() >= trigger.max(1) {
            let line = format!(
                "MEM rank={} cat={} label={} delta={:+} total={} hwm={}",
                self.rank, cat, label, delta, self.grand_total, self.grand_hwm
            );
            if self.echo {
                eprintln!("{line}");
            }
            self.lines.push(line);
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            live: self.totals,
            hwm: self.hwm,
            grand_total: self.grand_total,
            grand_hwm: self.grand_hwm,
        }
    }

    /// Report lines emitted so far (threshold-crossing changes only).
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn live_labels(&self) -> impl Iterator<Item = (&str, Category, u64)> {
        self.live.iter().map(|(l, &(c, b))| (l.as_str(), c, b))
    }
}

thread_local! {
    static LEDGER: RefCell<Option<MemoryLedger>> = const { RefCell::new(None) };
}

/// Installs `ledger` on the current rank thread, replacing (and returning)
/// any previous one.
pub fn install(ledger: MemoryLedger) -> Option<MemoryLedger> {
    LEDGER.with(|slot| slot.borrow_mut().replace(ledger))
}

/// Removes and returns the current rank thread's ledger.
pub fn uninstall() -> Option<MemoryLedger> {
    LEDGER.with(|slot| slot.borrow_mut().take())
}

/// Runs `f` against the installed ledger, if any.
pub fn with_ledger<R>(f: impl FnOnce(&mut MemoryLedger) -> R) -> Option<R> {
    LEDGER.with(|slot| slot.borrow_mut().as_mut().map(f))
}

/// Instrumentation hook: records an allocation if a ledger is installed.
/// Ledger misuse (duplicate label) panics — it is a programming error in
/// instrumented code, not a runtime condition.
pub fn track_alloc(label: &str, cat: Category, bytes: u64) {
    with_ledger(|l| l.record_alloc(label, cat, bytes).unwrap());
}

/// Instrumentation hook: records a free if a ledger is installed.
pub fn track_free(label: &str) {
    with_ledger(|l| l.record_free(label).unwrap());
}

pub fn snapshot() -> Option<Snapshot> {
    with_ledger(|l| l.snapshot())
}

/// Collects every rank's snapshot on rank 0 (collective over `world`).
/// Ranks without an installed ledger contribute an empty snapshot.
pub fn gather_report(world: &World) -> Result<Option<Vec<Snapshot>>> {
    const TAG: u32 = 0xFE00 & (crate::transport::USER_TAG_LIMIT - 1); // plain user tag
    let snap = snapshot().unwrap_or_default();
    let encoded: Vec<i64> = snap
        .live
        .iter()
        .chain(snap.hwm.iter())
        .chain([snap.grand_total, snap.grand_hwm].iter())
        .map(|&v| v as i64)
        .collect();
    if world.rank() == 0 {
        let mut all = vec![snap];
        for src in 1..world.size() {
            let raw = world.recv::<i64>(src, TAG)?;
            if raw.len() != 2 * CATEGORY_COUNT + 2 {
                return Err(Error::LengthMismatch {
                    what: "memory snapshot payload",
                    expected: 2 * CATEGORY_COUNT + 2,
                    got: raw.len(),
                });
            }
            let mut s = Snapshot::default();
            for i in 0..CATEGORY_COUNT {
                s.live[i] = raw[i] as u64;
                s.hwm[i] = raw[CATEGORY_COUNT + i] as u64;
            }
            s.grand_total = raw[2 * CATEGORY_COUNT] as u64;
            s.grand_hwm = raw[2 * CATEGORY_COUNT + 1] as u64;
            all.push(s);
        }
        Ok(Some(all))
    } else {
        world.send(0, TAG, &encoded)?;
        Ok(None)
    }
}
