//! In-process message-passing substrate: per-rank endpoints with tagged,
//! source-matched, FIFO-ordered delivery plus a reusable group barrier.
//!
//! Sends are buffered: a send handle completes as soon as the payload is
//! deposited at the destination endpoint, with no matching receive required.
//! Matching happens inside `post_send`/`post_recv` (caller-driven progress);
//! there is no background machinery.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};

pub type Tag = u64;

#[derive(Debug, Clone)]
pub struct Envelope {
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub seq: u64,
    pub payload: Vec<f64>,
}

struct PendingRecv {
    src: usize,
    tag: Tag,
    capacity: usize,
    cell: Arc<Completion>,
}

struct Completion {
    state: Mutex<Option<Result<Vec<f64>>>>,
    cv: Condvar,
}

impl Completion {
    fn new() -> Arc<Completion> {
        Arc::new(Completion {
            state: Mutex::new(None),
            cv: Condvar::new(),
        })
    }

    fn complete(&self, result: Result<Vec<f64>>) {
        *self.state.lock().unwrap() = Some(result);
        self.cv.notify_all();
    }
}

#[derive(Default)]
struct EndpointState {
    inbox: VecDeque<Envelope>,
    pending_recvs: VecDeque<PendingRecv>,
    // Next sequence number per (src, tag) arriving at this endpoint.
    next_seq: HashMap<(usize, Tag), u64>,
}

struct EndpointShared {
    state: Mutex<EndpointState>,
}

type SendObserver = Box<dyn Fn(&Envelope) + Send + Sync>;

/// The shared substrate for one group of ranks.
pub struct Transport {
    endpoints: Vec<EndpointShared>,
    barrier: GroupBarrier,
    send_observer: Mutex<Option<SendObserver>>,
}

impl Transport {
    pub fn new(num_ranks: usize) -> Arc<Transport> {
        assert!(num_ranks >= 1);
        Arc::new(Transport {
            endpoints: (0..num_ranks)
                .map(|_| EndpointShared {
                    state: Mutex::new(EndpointState::default()),
                })
                .collect(),
            barrier: GroupBarrier::new(num_ranks),
            send_observer: Mutex::new(None),
        })
    }

    pub fn num_ranks(&self) -> usize {
        self.endpoints.len()
    }

    pub fn endpoint(self: &Arc<Transport>, rank: usize) -> Endpoint {
        assert!(rank < self.num_ranks(), "rank {rank} out of range");
        Endpoint {
            transport: Arc::clone(self),
            rank,
        }
    }

    /// Installs a hook invoked with every envelope at deposit time. Used by
    /// tests to observe payload contents and ordering at the wire boundary.
    pub fn set_send_observer(&self, f: impl Fn(&Envelope) + Send + Sync + 'static) {
        *self.send_observer.lock().unwrap() = Some(Box::new(f));
    }

    /// Completed barrier generations so far.
    pub fn barrier_generation(&self) -> u64 {
        self.barrier.generation()
    }

    /// Human-readable description of every undelivered envelope and every
    /// unsatisfied posted receive, for deadlock diagnostics.
    pub fn unmatched_summary(&self) -> String {
        let mut out = String::new();
        for (rank, ep) in self.endpoints.iter().enumerate() {
            let st = ep.state.lock().unwrap();
            for env in &st.inbox {
                out.push_str(&format!(
                    "  rank {rank}: unconsumed envelope src={} tag={} len={}\n",
                    env.src,
                    env.tag,
                    env.payload.len()
                ));
            }
            for pr in &st.pending_recvs {
                out.push_str(&format!(
                    "  rank {rank}: unsatisfied recv src={} tag={} capacity={}\n",
                    pr.src, pr.tag, pr.capacity
                ));
            }
        }
        if out.is_empty() {
            out.push_str("  (no unmatched messages recorded)\n");
        }
        out
    }
}

/// One rank's handle onto the transport. Cloneable and usable from multiple
/// workers of the owning rank concurrently.
#[derive(Clone)]
pub struct Endpoint {
    transport: Arc<Transport>,
    rank: usize,
}

impl Endpoint {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_ranks(&self) -> usize {
        self.transport.num_ranks()
    }

    /// Enqueues `payload` for delivery to `dst`. The returned handle is
    /// already complete (buffered semantics).
    pub fn post_send(&self, dst: usize, tag: Tag, payload: Vec<f64>) -> Result<TransferHandle> {
        if dst >= self.transport.num_ranks() {
            return Err(Error::InvalidRank {
                rank: dst,
                world: self.transport.num_ranks(),
            });
        }
        let mut st = self.transport.endpoints[dst].state.lock().unwrap();
        let seq = st.next_seq.entry((self.rank, tag)).or_insert(0);
        let env = Envelope {
            src: self.rank,
            dst,
            tag,
            seq: *seq,
            payload,
        };
        *seq += 1;
        if let Some(obs) = self.transport.send_observer.lock().unwrap().as_ref() {
            obs(&env);
        }
        // Earliest matching posted receive wins; posting order is FIFO.
        if let Some(pos) = st
            .pending_recvs
            .iter()
            .position(|pr| pr.src == env.src && pr.tag == env.tag)
        {
            let pr = st.pending_recvs.remove(pos).unwrap();
            drop(st);
            pr.cell.complete(deliver(env.payload, pr.capacity));
        } else {
            st.inbox.push_back(env);
        }
        Ok(TransferHandle {
            inner: HandleInner::Done,
        })
    }

    /// Posts a receive for the next envelope matching `(src, tag)`. The
    /// handle completes once such an envelope is consumed.
    pub fn post_recv(&self, src: usize, tag: Tag, capacity: usize) -> Result<TransferHandle> {
        if src >= self.transport.num_ranks() {
            return Err(Error::InvalidRank {
                rank: src,
                world: self.transport.num_ranks(),
            });
        }
        let cell = Completion::new();
        let mut st = self.transport.endpoints[self.rank].state.lock().unwrap();
        // Earliest waiting envelope wins (per-triple FIFO).
        if let Some(pos) = st
            .inbox
            .iter()
            .position(|env| env.src == src && env.tag == tag)
        {
            let env = st.inbox.remove(pos).unwrap();
            drop(st);
            cell.complete(deliver(env.payload, capacity));
        } else {
            st.pending_recvs.push_back(PendingRecv {
                src,
                tag,
                capacity,
                cell: Arc::clone(&cell),
            });
        }
        Ok(TransferHandle {
            inner: HandleInner::Cell(cell),
        })
    }

    /// Blocks until all ranks have entered the barrier.
    pub fn barrier(&self) {
        self.transport.barrier.wait();
    }
}

fn deliver(payload: Vec<f64>, capacity: usize) -> Result<Vec<f64>> {
    if payload.len() > capacity {
        Err(Error::Truncation {
            len: payload.len(),
            capacity,
        })
    } else {
        Ok(payload)
    }
}

enum HandleInner {
    Done,
    Cell(Arc<Completion>),
}

/// Completion handle for a posted send or receive.
pub struct TransferHandle {
    inner: HandleInner,
}

impl TransferHandle {
    pub fn is_complete(&self) -> bool {
        match &self.inner {
            HandleInner::Done => true,
            HandleInner::Cell(c) => c.state.lock().unwrap().is_some(),
        }
    }

    /// Blocks until complete; returns the delivered payload (empty for sends).
    pub fn wait(&self) -> Result<Vec<f64>> {
        match &self.inner {
            HandleInner::Done => Ok(Vec::new()),
            HandleInner::Cell(c) => {
                let mut st = c.state.lock().unwrap();
                while st.is_none() {
                    st = c.cv.wait(st).unwrap();
                }
                clone_result(st.as_ref().unwrap())
            }
        }
    }

    /// Non-blocking probe: `Some(payload)` once complete.
    pub fn try_payload(&self) -> Option<Result<Vec<f64>>> {
        match &self.inner {
            HandleInner::Done => Some(Ok(Vec::new())),
            HandleInner::Cell(c) => c.state.lock().unwrap().as_ref().map(clone_result),
        }
    }

    /// Like `wait` but gives up after `timeout`.
    pub fn wait_timeout(&self, timeout: Duration) -> Option<Result<Vec<f64>>> {
        match &self.inner {
            HandleInner::Done => Some(Ok(Vec::new())),
            HandleInner::Cell(c) => {
                let mut st = c.state.lock().unwrap();
                let deadline = std::time::Instant::now() + timeout;
                while st.is_none() {
                    let left = deadline.saturating_duration_since(std::time::Instant::now());
                    if left.is_zero() {
                        return None;
                    }
                    let (guard, _) = c.cv.wait_timeout(st, left).unwrap();
                    st = guard;
                }
                Some(clone_result(st.as_ref().unwrap()))
            }
        }
    }
}

fn clone_result(r: &Result<Vec<f64>>) -> Result<Vec<f64>> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(Error::Truncation { len, capacity }) => Err(Error::Truncation {
            len: *len,
            capacity: *capacity,
        }),
        Err(e) => Err(Error::Config(format!("transfer failed: {e}"))),
    }
}

/// Reusable counting barrier with a generation counter.
struct GroupBarrier {
    size: usize,
    state: Mutex<BarrierState>,
    cv: Condvar,
}

#[derive(Default)]
struct BarrierState {
    waiting: usize,
    generation: u64,
}

impl GroupBarrier {
    fn new(size: usize) -> GroupBarrier {
        GroupBarrier {
            size,
            state: Mutex::new(BarrierState::default()),
            cv: Condvar::new(),
        }
    }

    fn wait(&self) {
        let mut st = self.state.lock().unwrap();
        st.waiting += 1;
        if st.waiting == self.size {
            st.waiting = 0;
            st.generation += 1;
            self.cv.notify_all();
        } else {
            let gen = st.generation;
            while st.generation == gen {
                st = self.cv.wait(st).unwrap();
            }
        }
    }

    fn generation(&self) -> u64 {
        self.state.lock().unwrap().generation
    }
}
