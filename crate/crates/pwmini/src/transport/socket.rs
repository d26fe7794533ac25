//! Loopback-TCP transport backend.
//!
//! Every unordered rank pair shares one TCP connection over 127.0.0.1.
//! Each direction gets a writer thread fed by an unbounded channel (so
//! `send` keeps its never-blocks contract even when the kernel socket
//! buffer is full) and a reader thread that decodes frames into the
//! destination mailbox. Frames are length-prefixed, little-endian:
//!
//! ```text
//! [u32 tag][u32 element-type code][u64 byte length][payload bytes]
//! ```
//!
//! The tag field carries the subgroup context in its upper 16 bits; user
//! and runtime tags occupy the lower 16.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::AtomicBool;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

use super::{ElemType, Fabric, Links, Mailbox, Packet, Rank, Tag};

struct Frame {
    tag_field: u32,
    code: u32,
    bytes: Vec<u8>,
}

pub(super) struct SocketLinks {
    /// `senders[from][to]`: writer-thread inbox for the directed link.
    /// The mutex is uncontended (only rank `from` sends on it); it exists
    /// so the fabric can be shared across rank threads.
    senders: Vec<Vec<Option<Mutex<mpsc::Sender<Frame>>>>>,
}

impl SocketLinks {
    pub(super) fn send(&self, from: Rank, to: Rank, ctx: u32, tag: Tag, packet: Packet) {
        debug_assert!(tag < 1 << 16 && ctx < 1 << 16);
        let frame = Frame {
            tag_field: (ctx << 16) | tag,
            code: packet.elem.code(),
            bytes: packet.bytes,
        };
        if let Some(slot) = &self.senders[from][to] {
            // A closed channel means the fabric is tearing down; the
            // message can no longer be observed by anyone.
            let _ = slot.lock().unwrap().send(frame);
        }
    }
}

fn write_frame(stream: &mut TcpStream, frame: &Frame) -> std::io::Result<()> {
    let mut header = [0u8; 16];
    header[0..4].copy_from_slice(&frame.tag_field.to_le_bytes());
    header[4..8].copy_from_slice(&frame.code.to_le_bytes());
    header[8..16].copy_from_slice(&(frame.bytes.len() as u64).to_le_bytes());
    stream.write_all(&header)?;
    stream.write_all(&frame.bytes)
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Option<Frame>> {
    let mut header = [0u8; 16];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let tag_field = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let code = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; len];
    stream.read_exact(&mut bytes)?;
    Ok(Some(Frame {
        tag_field,
        code,
        bytes,
    }))
}

fn spawn_writer(mut stream: TcpStream, rx: mpsc::Receiver<Frame>) {
    std::thread::spawn(move || {
        while let Ok(frame) = rx.recv() {
            if write_frame(&mut stream, &frame).is_err() {
                break;
            }
        }
    });
}

fn spawn_reader(mut stream: TcpStream, src: Rank, mailbox: Arc<Mailbox>) {
    std::thread::spawn(move || loop {
        match read_frame(&mut stream) {
            Ok(Some(frame)) => {
                let Ok(elem) = ElemType::from_code(frame.code) else {
                    break;
                };
                let ctx = frame.tag_field >> 16;
                let tag = frame.tag_field & 0xFFFF;
                mailbox.push(
                    (ctx, src, tag),
                    Packet {
                        elem,
                        bytes: frame.bytes,
                    },
                );
            }
            Ok(None) | Err(_) => break, // peer finished (or died): drain ends
        }
    });
}

/// Builds the full socket mesh up front (listeners, connections, reader and
/// writer threads) and returns a fabric whose `deliver` goes over TCP.
pub(super) fn new_socket_fabric(size: usize) -> Result<Arc<Fabric>> {
    let mailboxes: Vec<Arc<Mailbox>> = (0..size).map(|_| Arc::new(Mailbox::default())).collect();
    let mut senders: Vec<Vec<Option<Mutex<mpsc::Sender<Frame>>>>> = (0..size)
        .map(|_| (0..size).map(|_| None).collect())
        .collect();

    let listeners: Vec<TcpListener> = (0..size)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    let addrs: Vec<_> = listeners
        .iter()
        .map(|l| l.local_addr())
        .collect::<std::io::Result<_>>()?;

    // One connection per unordered pair: the higher rank dials the lower.
    for lo in 0..size {
        for hi in lo + 1..size {
            let mut dial = TcpStream::connect(addrs[lo])?;
            dial.write_all(&(hi as u32).to_le_bytes())?;
            let (mut accepted, _) = listeners[lo].accept()?;
            let mut hello = [0u8; 4];
            accepted.read_exact(&mut hello)?;
            let peer = u32::from_le_bytes(hello) as usize;
            if peer != hi {
                return Err(Error::InvalidArgument(format!(
                    "socket mesh handshake mismatch: expected rank {hi}, got {peer}"
                )));
            }
            dial.set_nodelay(true)?;
            accepted.set_nodelay(true)?;

            // hi -> lo direction: hi writes `dial`, lo reads `accepted`.
            let (tx, rx) = mpsc::channel();
            spawn_writer(dial.try_clone()?, rx);
            senders[hi][lo] = Some(Mutex::new(tx));
            spawn_reader(accepted.try_clone()?, hi, Arc::clone(&mailboxes[lo]));

            // lo -> hi direction: lo writes `accepted`, hi reads `dial`.
            let (tx, rx) = mpsc::channel();
            spawn_writer(accepted, rx);
            senders[lo][hi] = Some(Mutex::new(tx));
            spawn_reader(dial, lo, Arc::clone(&mailboxes[hi]));
        }
    }

    Ok(Arc::new(Fabric {
        size,
        mailboxes,
        links: Links::Socket(SocketLinks { senders }),
        shutdown: AtomicBool::new(false),
    }))
}
