//! Request machinery for the three communication strategies: non-blocking
//! send/recv, persistent init/start/wait/free, and partitioned
//! init/start/pready/parrived/wait/free layered over the same transport.
//!
//! Each pready ships its partition as an individual tagged sub-message; the
//! receiver assembles partitions by `part_index * part_size` offset. Sender
//! and receiver partition counts must be equal and all partitions are equal
//! in size, with zero padding on the last one when the logical length does
//! not divide evenly.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};
use crate::meshdata::PackBuffer;
use crate::transport::{Endpoint, Tag, TransferHandle};

// Low bits of the wire tag carry the partition index (0 = whole message),
// leaving the high bits for the caller's logical tag.
const PART_BITS: u32 = 16;
const MAX_PARTS: usize = (1 << PART_BITS) - 2;

fn whole_tag(tag: Tag) -> Tag {
    tag << PART_BITS
}

fn part_tag(tag: Tag, part: usize) -> Tag {
    (tag << PART_BITS) | (part as Tag + 1)
}

/// Per-rank instrumentation counters. Monotonically non-decreasing; safe to
/// bump from packing workers concurrently.
#[derive(Debug, Default)]
pub struct CommCounters {
    init_calls: AtomicU64,
    start_calls: AtomicU64,
    pready_calls: AtomicU64,
    request_setups: AtomicU64,
    waits: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub init_calls: u64,
    pub start_calls: u64,
    pub pready_calls: u64,
    pub request_setups: u64,
    pub waits: u64,
}

impl CommCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            init_calls: self.init_calls.load(Ordering::Relaxed),
            start_calls: self.start_calls.load(Ordering::Relaxed),
            pready_calls: self.pready_calls.load(Ordering::Relaxed),
            request_setups: self.request_setups.load(Ordering::Relaxed),
            waits: self.waits.load(Ordering::Relaxed),
        }
    }
}

impl CounterSnapshot {
    /// Counter increments since `earlier`.
    pub fn delta(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            init_calls: self.init_calls - earlier.init_calls,
            start_calls: self.start_calls - earlier.start_calls,
            pready_calls: self.pready_calls - earlier.pready_calls,
            request_setups: self.request_setups - earlier.request_setups,
            waits: self.waits - earlier.waits,
        }
    }
}

/// One rank's communication context: its endpoint plus counters.
pub struct CommContext {
    pub endpoint: Endpoint,
    pub counters: CommCounters,
}

impl CommContext {
    pub fn new(endpoint: Endpoint) -> CommContext {
        CommContext {
            endpoint,
            counters: CommCounters::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.endpoint.rank()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

impl Direction {
    fn name(self) -> &'static str {
        match self {
            Direction::Send => "send",
            Direction::Recv => "recv",
        }
    }
}

fn state_err(op: &'static str, state: &'static str) -> Error {
    Error::RequestState { op, state }
}

// ---------------------------------------------------------------------------
// Non-blocking

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NbState {
    Active,
    Complete,
}

/// A one-shot request, implicitly freed when its wait completes.
pub struct NonblockingRequest {
    direction: Direction,
    buf: Arc<PackBuffer>,
    handle: TransferHandle,
    state: NbState,
}

pub fn isend(
    ctx: &CommContext,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
) -> Result<NonblockingRequest> {
    ctx.counters.request_setups.fetch_add(1, Ordering::Relaxed);
    let handle = ctx
        .endpoint
        .post_send(peer, whole_tag(tag), buf.read_logical())?;
    Ok(NonblockingRequest {
        direction: Direction::Send,
        buf: Arc::clone(buf),
        handle,
        state: NbState::Active,
    })
}

pub fn irecv(
    ctx: &CommContext,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
) -> Result<NonblockingRequest> {
    ctx.counters.request_setups.fetch_add(1, Ordering::Relaxed);
    let handle = ctx
        .endpoint
        .post_recv(peer, whole_tag(tag), buf.logical_len())?;
    Ok(NonblockingRequest {
        direction: Direction::Recv,
        buf: Arc::clone(buf),
        handle,
        state: NbState::Active,
    })
}

/// Completes every request; receive buffers hold their payloads afterwards.
pub fn wait_all(ctx: &CommContext, requests: &mut [NonblockingRequest]) -> Result<()> {
    for req in requests.iter_mut() {
        let payload = req.handle.wait()?;
        if req.direction == Direction::Recv {
            if payload.len() != req.buf.logical_len() {
                return Err(Error::SizeMismatch {
                    expected: req.buf.logical_len(),
                    got: payload.len(),
                });
            }
            req.buf.fill_logical(&payload);
        }
        req.state = NbState::Complete;
    }
    ctx.counters.waits.fetch_add(1, Ordering::Relaxed);
    Ok(())
}

// ---------------------------------------------------------------------------
// Persistent

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PersistentState {
    Initialized,
    Started,
    Inactive,
    Freed,
}

impl PersistentState {
    fn name(self) -> &'static str {
        match self {
            PersistentState::Initialized => "initialized",
            PersistentState::Started => "started",
            PersistentState::Inactive => "complete-inactive",
            PersistentState::Freed => "freed",
        }
    }
}

/// Communication arguments bound once at init; each iteration only starts
/// and waits the prebuilt request.
pub struct PersistentRequest {
    direction: Direction,
    peer: usize,
    tag: Tag,
    buf: Arc<PackBuffer>,
    state: PersistentState,
    handle: Option<TransferHandle>,
}

fn persistent_init(
    ctx: &CommContext,
    direction: Direction,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
) -> Result<PersistentRequest> {
    if peer >= ctx.endpoint.num_ranks() {
        return Err(Error::InvalidRank {
            rank: peer,
            world: ctx.endpoint.num_ranks(),
        });
    }
    ctx.counters.init_calls.fetch_add(1, Ordering::Relaxed);
    ctx.counters.request_setups.fetch_add(1, Ordering::Relaxed);
    Ok(PersistentRequest {
        direction,
        peer,
        tag,
        buf: Arc::clone(buf),
        state: PersistentState::Initialized,
        handle: None,
    })
}

pub fn send_init(
    ctx: &CommContext,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
) -> Result<PersistentRequest> {
    persistent_init(ctx, Direction::Send, peer, tag, buf)
}

pub fn recv_init(
    ctx: &CommContext,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
) -> Result<PersistentRequest> {
    persistent_init(ctx, Direction::Recv, peer, tag, buf)
}

impl PersistentRequest {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    fn start(&mut self, ctx: &CommContext) -> Result<()> {
        match self.state {
            PersistentState::Initialized | PersistentState::Inactive => {}
            s => return Err(state_err("start", s.name())),
        }
        ctx.counters.start_calls.fetch_add(1, Ordering::Relaxed);
        self.handle = Some(match self.direction {
            Direction::Send => {
                ctx.endpoint
                    .post_send(self.peer, whole_tag(self.tag), self.buf.read_logical())?
            }
            Direction::Recv => {
                ctx.endpoint
                    .post_recv(self.peer, whole_tag(self.tag), self.buf.logical_len())?
            }
        });
        self.state = PersistentState::Started;
        Ok(())
    }

    fn wait(&mut self) -> Result<()> {
        if self.state != PersistentState::Started {
            return Err(state_err("wait", self.state.name()));
        }
        let payload = self.handle.take().unwrap().wait()?;
        if self.direction == Direction::Recv {
            if payload.len() != self.buf.logical_len() {
                return Err(Error::SizeMismatch {
                    expected: self.buf.logical_len(),
                    got: payload.len(),
                });
            }
            self.buf.fill_logical(&payload);
        }
        self.state = PersistentState::Inactive;
        Ok(())
    }
}

/// Starts one iteration of every request.
pub fn start_all(ctx: &CommContext, requests: &mut [PersistentRequest]) -> Result<()> {
    for req in requests.iter_mut() {
        req.start(ctx)?;
    }
    Ok(())
}

/// Completes the current iteration; requests return to complete-inactive and
/// are reusable by the next `start_all`.
pub fn wait_all_persistent(ctx: &CommContext, requests: &mut [PersistentRequest]) -> Result<()> {
    for req in requests.iter_mut() {
        req.wait()?;
    }
    ctx.counters.waits.fetch_add(1, Ordering::Relaxed);
    Ok(())
}

/// Invalidates the handle. Illegal while started; double free is an error.
pub fn request_free(request: &mut PersistentRequest) -> Result<()> {
    match request.state {
        PersistentState::Started => Err(state_err("free", "started")),
        PersistentState::Freed => Err(state_err("free", "freed")),
        _ => {
            request.state = PersistentState::Freed;
            request.handle = None;
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Partitioned

struct PartitionedInner {
    state: PersistentState,
    // Send side: pready flags for the current generation.
    ready: Vec<bool>,
    // Recv side: one handle per in-flight partition.
    handles: Vec<Option<TransferHandle>>,
}

/// A persistent message split into equal-size partitions, each independently
/// marked ready by its producer. `pready`/`parrived` may be called from
/// multiple workers of the owning rank concurrently on distinct partitions.
pub struct PartitionedRequest {
    direction: Direction,
    peer: usize,
    tag: Tag,
    buf: Arc<PackBuffer>,
    n_parts: usize,
    part_size: usize,
    inner: Mutex<PartitionedInner>,
    all_ready: Condvar,
    arrived: Vec<AtomicBool>,
}

fn partitioned_init(
    ctx: &CommContext,
    direction: Direction,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
    n_parts: usize,
) -> Result<PartitionedRequest> {
    if peer >= ctx.endpoint.num_ranks() {
        return Err(Error::InvalidRank {
            rank: peer,
            world: ctx.endpoint.num_ranks(),
        });
    }
    assert!((1..=MAX_PARTS).contains(&n_parts));
    if buf.n_parts() != n_parts {
        return Err(Error::PartitionMismatch {
            expected: n_parts,
            got: buf.n_parts(),
        });
    }
    ctx.counters.init_calls.fetch_add(1, Ordering::Relaxed);
    ctx.counters.request_setups.fetch_add(1, Ordering::Relaxed);
    Ok(PartitionedRequest {
        direction,
        peer,
        tag,
        buf: Arc::clone(buf),
        n_parts,
        part_size: buf.part_size(),
        inner: Mutex::new(PartitionedInner {
            state: PersistentState::Initialized,
            ready: vec![false; n_parts],
            handles: (0..n_parts).map(|_| None).collect(),
        }),
        all_ready: Condvar::new(),
        arrived: (0..n_parts).map(|_| AtomicBool::new(false)).collect(),
    })
}

pub fn psend_init(
    ctx: &CommContext,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
    n_parts: usize,
) -> Result<PartitionedRequest> {
    partitioned_init(ctx, Direction::Send, peer, tag, buf, n_parts)
}

pub fn precv_init(
    ctx: &CommContext,
    peer: usize,
    tag: Tag,
    buf: &Arc<PackBuffer>,
    n_parts: usize,
) -> Result<PartitionedRequest> {
    partitioned_init(ctx, Direction::Recv, peer, tag, buf, n_parts)
}

impl PartitionedRequest {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn part_size(&self) -> usize {
        self.part_size
    }

    pub fn buffer(&self) -> &Arc<PackBuffer> {
        &self.buf
    }

    fn start(&self, ctx: &CommContext) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        match inner.state {
            PersistentState::Initialized | PersistentState::Inactive => {}
            s => return Err(state_err("start", s.name())),
        }
        ctx.counters.start_calls.fetch_add(1, Ordering::Relaxed);
        inner.ready.iter_mut().for_each(|f| *f = false);
        for f in &self.arrived {
            f.store(false, Ordering::Relaxed);
        }
        if self.direction == Direction::Recv {
            // One receive per partition; no partition may land before its
            // sender's pready posts it.
            for p in 0..self.n_parts {
                inner.handles[p] = Some(ctx.endpoint.post_recv(
                    self.peer,
                    part_tag(self.tag, p),
                    self.part_size,
                )?);
            }
        }
        inner.state = PersistentState::Started;
        Ok(())
    }

    fn wait(&self) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if inner.state != PersistentState::Started {
            return Err(state_err("wait", inner.state.name()));
        }
        if self.direction == Direction::Send {
            // The send completes only once every partition has been marked
            // ready.
            while !inner.ready.iter().all(|f| *f) {
                inner = self.all_ready.wait(inner).unwrap();
            }
            inner.state = PersistentState::Inactive;
            return Ok(());
        }
        // Receive: block outside the lock so arrival can be driven by the
        // matching sends.
        let handles: Vec<Option<TransferHandle>> =
            inner.handles.iter_mut().map(|h| h.take()).collect();
        drop(inner);
        for (p, handle) in handles.into_iter().enumerate() {
            if self.arrived[p].load(Ordering::Acquire) {
                continue;
            }
            let payload = handle
                .expect("handle present for unarrived partition")
                .wait()?;
            self.deposit(p, payload)?;
        }
        self.inner.lock().unwrap().state = PersistentState::Inactive;
        Ok(())
    }

    fn deposit(&self, part: usize, payload: Vec<f64>) -> Result<()> {
        if payload.len() != self.part_size {
            // Unequal sender/receiver partition layouts surface here, at the
            // first transfer.
            return Err(Error::PartitionMismatch {
                expected: self.part_size,
                got: payload.len(),
            });
        }
        self.buf.write_part(part, &payload);
        self.arrived[part].store(true, Ordering::Release);
        Ok(())
    }
}

/// Starts one generation of every partitioned request: ready and arrived
/// flags are cleared and receives posted. May legally precede packing.
pub fn pstart_all(ctx: &CommContext, requests: &[PartitionedRequest]) -> Result<()> {
    for req in requests {
        req.start(ctx)?;
    }
    Ok(())
}

/// Marks partition `part_index` of a send request ready and ships it.
pub fn pready(ctx: &CommContext, request: &PartitionedRequest, part_index: usize) -> Result<()> {
    if request.direction != Direction::Send {
        return Err(Error::WrongDirection {
            op: "pready",
            dir: request.direction.name(),
        });
    }
    if part_index >= request.n_parts {
        return Err(Error::PartIndex {
            index: part_index,
            n_parts: request.n_parts,
        });
    }
    let mut inner = request.inner.lock().unwrap();
    if inner.state != PersistentState::Started {
        return Err(state_err("pready", inner.state.name()));
    }
    if inner.ready[part_index] {
        return Err(Error::DuplicatePready { part: part_index });
    }
    inner.ready[part_index] = true;
    ctx.counters.pready_calls.fetch_add(1, Ordering::Relaxed);
    // Ship while holding the lock so a completing wait never observes all
    // flags set with this partition still unsent.
    ctx.endpoint.post_send(
        request.peer,
        part_tag(request.tag, part_index),
        request.buf.read_part(part_index),
    )?;
    if inner.ready.iter().all(|f| *f) {
        request.all_ready.notify_all();
    }
    Ok(())
}

/// Tests arrival of one partition of a receive request. Monotone within a
/// generation: once true, stays true until the next start.
pub fn parrived(request: &PartitionedRequest, part_index: usize) -> Result<bool> {
    if request.direction != Direction::Recv {
        return Err(Error::WrongDirection {
            op: "parrived",
            dir: request.direction.name(),
        });
    }
    if part_index >= request.n_parts {
        return Err(Error::PartIndex {
            index: part_index,
            n_parts: request.n_parts,
        });
    }
    if request.arrived[part_index].load(Ordering::Acquire) {
        return Ok(true);
    }
    let payload = {
        let inner = request.inner.lock().unwrap();
        match inner.state {
            PersistentState::Started => {}
            s => return Err(state_err("parrived", s.name())),
        }
        match inner.handles[part_index]
            .as_ref()
            .and_then(|h| h.try_payload())
        {
            Some(result) => result?,
            None => return Ok(false),
        }
    };
    request.deposit(part_index, payload)?;
    Ok(true)
}

/// Completes the generation: send requests block until every partition was
/// marked ready, receive requests until every partition's data is deposited.
pub fn pwait_all(ctx: &CommContext, requests: &[PartitionedRequest]) -> Result<()> {
    for req in requests {
        req.wait()?;
    }
    ctx.counters.waits.fetch_add(1, Ordering::Relaxed);
    Ok(())
}

/// Invalidates the handle, as [`request_free`] does for persistent requests.
pub fn prequest_free(request: &PartitionedRequest) -> Result<()> {
    let mut inner = request.inner.lock().unwrap();
    match inner.state {
        PersistentState::Started => Err(state_err("free", "started")),
        PersistentState::Freed => Err(state_err("free", "freed")),
        _ => {
            inner.state = PersistentState::Freed;
            inner.handles.iter_mut().for_each(|h| *h = None);
            Ok(())
        }
    }
}
