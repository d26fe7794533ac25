//! Rank-based message-passing runtime.
//!
//! A [`World`] is a set of `P` ranks that communicate through tagged,
//! typed point-to-point messages. The collective algorithms elsewhere in
//! the crate are built exclusively on [`World::send`] / [`World::recv`] /
//! [`World::barrier`] / [`World::subgroup`], so they exercise real message
//! traffic instead of delegating to a library.
//!
//! Semantics:
//! - `send` is buffered and never blocks; `isend` is the by-value variant
//!   returning a (trivially complete) handle.
//! - `recv` blocks until a matching `(src, tag)` message arrives. Messages
//!   between a fixed `(src, dest, tag)` triple are delivered FIFO.
//! - There is no wildcard receive, so every rank-local result is a pure
//!   function of the program and the seeds — runs replay byte-identically
//!   regardless of thread scheduling.
//!
//! Backends: the in-process backend runs each rank as a thread of one
//! process and moves payloads through shared mailboxes; the optional
//! `socket` backend (feature-gated) moves the same frames over loopback
//! TCP. Programs cannot observe the difference except through timing.

#[cfg(feature = "socket")]
mod socket;

use std::cell::Cell;
use std::collections::HashMap;
use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Rank identifier within a world: an integer in `[0, P)`.
pub type Rank = usize;

/// Message tag. User tags must be below [`USER_TAG_LIMIT`]; the range above
/// it is reserved for runtime-internal traffic (barrier rounds).
pub type Tag = u32;

/// First tag reserved for the runtime. User and collective tags live below.
pub const USER_TAG_LIMIT: Tag = 0xFF00;

const BARRIER_TAG_BASE: Tag = 0xFF00;

/// Payload element kind carried by every message and by the wire frames of
/// the socket backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemType {
    F64,
    C128,
    I64,
    U8,
}

impl ElemType {
    pub fn code(self) -> u32 {
        match self {
            ElemType::F64 => 0,
            ElemType::C128 => 1,
            ElemType::I64 => 2,
            ElemType::U8 => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => ElemType::F64,
            1 => ElemType::C128,
            2 => ElemType::I64,
            3 => ElemType::U8,
            other => {
                return Err(Error::FileFormat(format!(
                    "unknown element type code {other}"
                )))
            }
        })
    }

    pub fn size_bytes(self) -> usize {
        match self {
            ElemType::F64 | ElemType::I64 => 8,
            ElemType::C128 => 16,
            ElemType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemType::F64 => "f64",
            ElemType::C128 => "c128",
            ElemType::I64 => "i64",
            ElemType::U8 => "u8",
        }
    }
}

/// Element types that can ride a message: fixed-width, little-endian.
pub trait Element: Copy + Send + Sync + 'static {
    const ELEM: ElemType;
    fn append_le(data: &[Self], out: &mut Vec<u8>);
    /// Decode `bytes` into `out`. Caller guarantees
    /// `bytes.len() == out.len() * size_of_element`.
    fn decode_le(bytes: &[u8], out: &mut [Self]);
}

impl Element for f64 {
    const ELEM: ElemType = ElemType::F64;
    fn append_le(data: &[Self], out: &mut Vec<u8>) {
        out.reserve(data.len() * 8);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn decode_le(bytes: &[u8], out: &mut [Self]) {
        for (chunk, slot) in bytes.chunks_exact(8).zip(out.iter_mut()) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
}

impl Element for i64 {
    const ELEM: ElemType = ElemType::I64;
    fn append_le(data: &[Self], out: &mut Vec<u8>) {
        out.reserve(data.len() * 8);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn decode_le(bytes: &[u8], out: &mut [Self]) {
        for (chunk, slot) in bytes.chunks_exact(8).zip(out.iter_mut()) {
            *slot = i64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
}

impl Element for Complex64 {
    const ELEM: ElemType = ElemType::C128;
    fn append_le(data: &[Self], out: &mut Vec<u8>) {
        out.reserve(data.len() * 16);
        for v in data {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    fn decode_le(bytes: &[u8], out: &mut [Self]) {
        for (chunk, slot) in bytes.chunks_exact(16).zip(out.iter_mut()) {
            let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
            *slot = Complex64::new(re, im);
        }
    }
}

impl Element for u8 {
    const ELEM: ElemType = ElemType::U8;
    fn append_le(data: &[Self], out: &mut Vec<u8>) {
        out.extend_from_slice(data);
    }
    fn decode_le(bytes: &[u8], out: &mut [Self]) {
        out.copy_from_slice(bytes);
    }
}

/// A delivered-but-not-yet-consumed message.
struct Packet {
    elem: ElemType,
    bytes: Vec<u8>,
}

/// Routing key inside a mailbox: (context, source root rank, tag).
type Key = (u32, Rank, Tag);

#[derive(Default)]
struct MailboxInner {
    queues: HashMap<Key, VecDeque<Packet>>,
}

/// Per-rank incoming message store. `recv` blocks on the condvar until a
/// matching packet exists or the fabric shuts down.
#[derive(Default)]
struct Mailbox {
    inner: Mutex<MailboxInner>,
    cv: Condvar,
}

impl Mailbox {
    fn push(&self, key: Key, packet: Packet) {
        let mut inner = self.inner.lock().unwrap();
        inner.queues.entry(key).or_default().push_back(packet);
        self.cv.notify_all();
    }

    fn pop_blocking(&self, key: Key, shutdown: &AtomicBool) -> Option<Packet> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(q) = inner.queues.get_mut(&key) {
                if let Some(p) = q.pop_front() {
                    return Some(p);
                }
            }
            if shutdown.load(Ordering::SeqCst) {
                return None;
            }
            inner = self.cv.wait(inner).unwrap();
        }
    }

    fn try_pop(&self, key: Key) -> Option<Packet> {
        let mut inner = self.inner.lock().unwrap();
        inner.queues.get_mut(&key).and_then(|q| q.pop_front())
    }
}

enum Links {
    /// Senders push straight into the destination mailbox.
    InProc,
    /// Senders enqueue frames to a per-destination writer thread that owns
    /// the TCP stream; a reader thread on the far side refills the mailbox.
    #[cfg(feature = "socket")]
    Socket(socket::SocketLinks),
}

/// State shared by every rank of a root world (and all its subgroups).
struct Fabric {
    size: usize,
    mailboxes: Vec<Arc<Mailbox>>,
    links: Links,
    shutdown: AtomicBool,
}

impl Fabric {
    fn new_inproc(size: usize) -> Arc<Self> {
        Arc::new(Fabric {
            size,
            mailboxes: (0..size).map(|_| Arc::new(Mailbox::default())).collect(),
            links: Links::InProc,
            shutdown: AtomicBool::new(false),
        })
    }

    fn shut_down(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for mb in &self.mailboxes {
            // Lock/unlock so no waiter can re-check the flag between the
            // store above and its wait; then wake everyone.
            drop(mb.inner.lock().unwrap());
            mb.cv.notify_all();
        }
    }

    fn deliver(&self, from_root: Rank, to_root: Rank, ctx: u32, tag: Tag, packet: Packet) {
        match &self.links {
            Links::InProc => self.mailboxes[to_root].push((ctx, from_root, tag), packet),
            #[cfg(feature = "socket")]
            Links::Socket(links) => links.send(from_root, to_root, ctx, tag, packet),
        }
    }
}

/// Snapshot of a world's per-rank traffic counters. Bytes count payloads
/// only (frame headers excluded), so both backends report identical values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub msgs_received: u64,
    pub bytes_received: u64,
}

#[derive(Default)]
struct CounterCells {
    msgs_sent: Cell<u64>,
    bytes_sent: Cell<u64>,
    msgs_received: Cell<u64>,
    bytes_received: Cell<u64>,
}

/// Completion handle for [`World::isend`]. Sends are buffered eagerly, so
/// the handle is complete on construction; it exists so call sites can make
/// the "do not reuse the buffer before completion" contract explicit.
#[derive(Debug)]
#[must_use = "wait() the handle (or drop it) once the send is logically done"]
pub struct SendHandle(());

impl SendHandle {
    pub fn wait(self) -> Result<()> {
        Ok(())
    }
}

/// Handle held by one rank on one communication world.
///
/// A `World` is confined to its rank's thread (it is `Send` but not `Sync`);
/// counters are plain cells for that reason.
pub struct World {
    fabric: Arc<Fabric>,
    rank: Rank,
    /// World rank -> root-world rank.
    members: Arc<Vec<Rank>>,
    ctx: u32,
    next_child: Cell<u32>,
    counters: CounterCells,
}

/// Subgroup contexts are tree-encoded into 16 bits: each world may spawn up
/// to [`MAX_SUBGROUPS`] child worlds.
const MAX_SUBGROUPS: u32 = 64;

impl World {
    fn root(fabric: Arc<Fabric>, rank: Rank) -> Self {
        let size = fabric.size;
        World {
            fabric,
            rank,
            members: Arc::new((0..size).collect()),
            ctx: 0,
            next_child: Cell::new(0),
            counters: CounterCells::default(),
        }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    fn check_peer(&self, peer: Rank) -> Result<()> {
        if peer >= self.size() {
            return Err(Error::RankOutOfRange {
                rank: peer,
                size: self.size(),
            });
        }
        if peer == self.rank {
            return Err(Error::SelfMessage { rank: peer });
        }
        Ok(())
    }

    fn check_tag(tag: Tag) -> Result<()> {
        if tag >= USER_TAG_LIMIT {
            return Err(Error::TagOutOfRange {
                tag,
                limit: USER_TAG_LIMIT,
            });
        }
        Ok(())
    }

    fn send_raw(&self, dest: Rank, tag: Tag, elem: ElemType, bytes: Vec<u8>) {
        self.counters
            .msgs_sent
            .set(self.counters.msgs_sent.get() + 1);
        self.counters
            .bytes_sent
            .set(self.counters.bytes_sent.get() + bytes.len() as u64);
        self.fabric.deliver(
            self.members[self.rank],
            self.members[dest],
            self.ctx,
            tag,
            Packet { elem, bytes },
        );
    }

    fn recv_raw(&self, src: Rank, tag: Tag) -> Result<Packet> {
        let key = (self.ctx, self.members[src], tag);
        let packet = self.fabric.mailboxes[self.members[self.rank]]
            .pop_blocking(key, &self.fabric.shutdown)
            .ok_or(Error::WorldShutDown {
                rank: self.rank,
                src,
            })?;
        self.counters
            .msgs_received
            .set(self.counters.msgs_received.get() + 1);
        self.counters
            .bytes_received
            .set(self.counters.bytes_received.get() + packet.bytes.len() as u64);
        Ok(packet)
    }

    /// Buffered send: enqueues `data` for `dest` and returns immediately.
    pub fn send<T: Element>(&self, dest: Rank, tag: Tag, data: &[T]) -> Result<()> {
        self.check_peer(dest)?;
        Self::check_tag(tag)?;
        let mut bytes = Vec::new();
        T::append_le(data, &mut bytes);
        self.send_raw(dest, tag, T::ELEM, bytes);
        Ok(())
    }

    /// Nonblocking send taking ownership of the payload.
    pub fn isend<T: Element>(&self, dest: Rank, tag: Tag, data: Vec<T>) -> Result<SendHandle> {
        self.send(dest, tag, &data)?;
        Ok(SendHandle(()))
    }

    /// Blocking receive of the oldest `(src, tag)` message.
    pub fn recv<T: Element>(&self, src: Rank, tag: Tag) -> Result<Vec<T>> {
        self.check_peer(src)?;
        Self::check_tag(tag)?;
        let packet = self.recv_raw(src, tag)?;
        decode_packet(packet)
    }

    /// Blocking receive straight into `out`; errors if the payload element
    /// type or length does not match `out` exactly.
    pub fn recv_into<T: Element>(&self, src: Rank, tag: Tag, out: &mut [T]) -> Result<()> {
        self.check_peer(src)?;
        Self::check_tag(tag)?;
        let packet = self.recv_raw(src, tag)?;
        if packet.elem != T::ELEM {
            return Err(Error::ElementMismatch {
                expected: T::ELEM.name(),
                got: packet.elem.name(),
            });
        }
        let expected = out.len() * T::ELEM.size_bytes();
        if packet.bytes.len() != expected {
            return Err(Error::LengthMismatch {
                what: "recv_into payload",
                expected,
                got: packet.bytes.len(),
            });
        }
        T::decode_le(&packet.bytes, out);
        Ok(())
    }

    /// Nonblocking receive: returns `Ok(None)` when no matching message is
    /// queued yet.
    pub fn try_recv<T: Element>(&self, src: Rank, tag: Tag) -> Result<Option<Vec<T>>> {
        self.check_peer(src)?;
        Self::check_tag(tag)?;
        let key = (self.ctx, self.members[src], tag);
        match self.fabric.mailboxes[self.members[self.rank]].try_pop(key) {
            None => Ok(None),
            Some(packet) => {
                self.counters
                    .msgs_received
                    .set(self.counters.msgs_received.get() + 1);
                self.counters
                    .bytes_received
                    .set(self.counters.bytes_received.get() + packet.bytes.len() as u64);
                decode_packet(packet).map(Some)
            }
        }
    }

    /// Dissemination barrier: no rank returns before every rank has entered.
    /// Uses reserved tags; barrier traffic does not touch the counters.
    pub fn barrier(&self) -> Result<()> {
        let p = self.size();
        if p == 1 {
            return Ok(());
        }
        let me = self.rank;
        let mut round = 0u32;
        let mut step = 1usize;
        while step < p {
            let to = (me + step) % p;
            let from = (me + p - step) % p;
            let tag = BARRIER_TAG_BASE + round;
            self.fabric.deliver(
                self.members[me],
                self.members[to],
                self.ctx,
                tag,
                Packet {
                    elem: ElemType::U8,
                    bytes: Vec::new(),
                },
            );
            let key = (self.ctx, self.members[from], tag);
            self.fabric.mailboxes[self.members[me]]
                .pop_blocking(key, &self.fabric.shutdown)
                .ok_or(Error::WorldShutDown {
                    rank: me,
                    src: from,
                })?;
            step <<= 1;
            round += 1;
        }
        Ok(())
    }

    /// Collectively derives a new world from `members` (ordered, distinct
    /// ranks of `self`). Every rank of `self` must call this with the same
    /// list; members get a world with ranks renumbered `0..members.len()`
    /// in list order, non-members get `None`.
    pub fn subgroup(&self, members: &[Rank]) -> Result<Option<World>> {
        let mut seen = vec![false; self.size()];
        for &m in members {
            if m >= self.size() {
                return Err(Error::RankOutOfRange {
                    rank: m,
                    size: self.size(),
                });
            }
            if seen[m] {
                return Err(Error::DuplicateMember { rank: m });
            }
            seen[m] = true;
        }
        if members.is_empty() {
            return Err(Error::InvalidArgument(
                "subgroup member list is empty".into(),
            ));
        }
        // Same deterministic allocation on every caller: contexts form a
        // 64-ary tree over the 16-bit context space.
        let k = self.next_child.get();
        if k >= MAX_SUBGROUPS {
            return Err(Error::InvalidArgument(format!(
                "world {} exhausted its {} subgroup contexts",
                self.ctx, MAX_SUBGROUPS
            )));
        }
        self.next_child.set(k + 1);
        let child_ctx = self
            .ctx
            .checked_mul(MAX_SUBGROUPS)
            .and_then(|v| v.checked_add(k + 1))
            .filter(|v| *v < 1 << 16)
            .ok_or_else(|| {
                Error::InvalidArgument("subgroup context space exhausted".into())
            })?;
        let Some(my_new_rank) = members.iter().position(|&m| m == self.rank) else {
            return Ok(None);
        };
        Ok(Some(World {
            fabric: Arc::clone(&self.fabric),
            rank: my_new_rank,
            members: Arc::new(members.iter().map(|&m| self.members[m]).collect()),
            ctx: child_ctx,
            next_child: Cell::new(0),
            counters: CounterCells::default(),
        }))
    }

    pub fn counters(&self) -> Counters {
        Counters {
            msgs_sent: self.counters.msgs_sent.get(),
            bytes_sent: self.counters.bytes_sent.get(),
            msgs_received: self.counters.msgs_received.get(),
            bytes_received: self.counters.bytes_received.get(),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.msgs_sent.set(0);
        self.counters.bytes_sent.set(0);
        self.counters.msgs_received.set(0);
        self.counters.bytes_received.set(0);
    }
}

fn decode_packet<T: Element>(packet: Packet) -> Result<Vec<T>> {
    if packet.elem != T::ELEM {
        return Err(Error::ElementMismatch {
            expected: T::ELEM.name(),
            got: packet.elem.name(),
        });
    }
    let size = T::ELEM.size_bytes();
    if packet.bytes.len() % size != 0 {
        return Err(Error::PayloadSize {
            bytes: packet.bytes.len(),
            elem: T::ELEM.name(),
        });
    }
    let n = packet.bytes.len() / size;
    let mut out = vec![T::ELEM_ZERO(); n];
    T::decode_le(&packet.bytes, &mut out);
    Ok(out)
}

// Small helper so decode_packet can build an output buffer without a
// Default bound on Element.
#[allow(non_snake_case)]
trait ElemZero: Sized {
    fn ELEM_ZERO() -> Self;
}

impl<T: Element> ElemZero for T {
    fn ELEM_ZERO() -> Self {
        // Safety: every Element impl is a plain fixed-width numeric type for
        // which the all-zeroes bit pattern is a valid value.
        unsafe { std::mem::zeroed() }
    }
}

/// Transport backend selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    InProc,
    #[cfg(feature = "socket")]
    Socket,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(BackendKind::InProc),
            #[cfg(feature = "socket")]
            "socket" => Ok(BackendKind::Socket),
            other => Err(Error::InvalidArgument(format!(
                "unknown transport backend {other:?}"
            ))),
        }
    }
}

/// Runs `f` as an SPMD program over `size` ranks on the in-process backend
/// and returns the per-rank results in rank order.
///
/// If any rank panics, the world is shut down (blocked receives return
/// [`Error::WorldShutDown`]) and the panic is reported as
/// [`Error::RankPanicked`]; the harness never hangs on a dead rank.
pub fn run_world<T, F>(size: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&World) -> Result<T> + Sync,
{
    run_world_on(BackendKind::InProc, size, f)
}

/// [`run_world`] with an explicit backend.
pub fn run_world_on<T, F>(backend: BackendKind, size: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&World) -> Result<T> + Sync,
{
    if size == 0 {
        return Err(Error::InvalidArgument("world size must be >= 1".into()));
    }
    let fabric = match backend {
        BackendKind::InProc => Fabric::new_inproc(size),
        #[cfg(feature = "socket")]
        BackendKind::Socket => socket::new_socket_fabric(size)?,
    };

    enum Outcome<T> {
        Done(T),
        Failed(Error),
        Panicked(String),
    }

    let outcomes: Vec<Outcome<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let fabric = Arc::clone(&fabric);
                let f = &f;
                scope.spawn(move || {
                    let world = World::root(fabric, rank);
                    match catch_unwind(AssertUnwindSafe(|| f(&world))) {
                        Ok(Ok(v)) => Outcome::Done(v),
                        Ok(Err(e)) => {
                            world.fabric.shut_down();
                            Outcome::Failed(e)
                        }
                        Err(payload) => {
                            world.fabric.shut_down();
                            let msg = payload
                                .downcast_ref::<&str>()
                                .map(|s| s.to_string())
                                .or_else(|| payload.downcast_ref::<String>().cloned())
                                .unwrap_or_else(|| "opaque panic payload".into());
                            Outcome::Panicked(msg)
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(outcome) => outcome,
                Err(_) => Outcome::Panicked("rank thread join failed".into()),
            })
            .collect()
    });

    // A panic anywhere outranks the secondary shutdown errors it causes.
    for (rank, outcome) in outcomes.iter().enumerate() {
        if let Outcome::Panicked(msg) = outcome {
            return Err(Error::RankPanicked(format!("rank {rank}: {msg}")));
        }
    }
    let mut results = Vec::with_capacity(size);
    for outcome in outcomes {
        match outcome {
            Outcome::Done(v) => results.push(v),
            Outcome::Failed(e) => return Err(e),
            Outcome::Panicked(_) => unreachable!(),
        }
    }
    Ok(results)
}
