//! The three halo-exchange strategies orchestrating pack -> communicate ->
//! unpack with a per-rank worker pool.
//!
//! Non-blocking: parallel pack, isends, irecvs, wait, parallel unpack.
//! Persistent: the same loop body with start/wait over prebuilt requests.
//! Partitioned: start first, then each worker packs its slice of every send
//! buffer and immediately marks that partition ready; unpack is deferred
//! until the full wait (no early work).

use std::sync::Arc;

use crate::comm::{
    self, CommContext, NonblockingRequest, PartitionedRequest, PersistentRequest,
};
use crate::error::{Error, Result};
use crate::grid::{boundary_regions, BoundaryRegion, NeighborOffset, ProcessGrid};
use crate::meshdata::{self, LocalMesh, PackBuffer};
use crate::transport::Tag;

/// Per-rank packing worker count. Pack work for a message is split into
/// exactly `n_workers` partitions in the partitioned strategy.
#[derive(Debug, Clone, Copy)]
pub struct WorkerPool {
    pub n_workers: usize,
}

impl WorkerPool {
    pub fn new(n_workers: usize) -> WorkerPool {
        assert!(n_workers >= 1);
        WorkerPool { n_workers }
    }
}

/// One neighbor's worth of message state: regions, tags, and buffers.
pub struct PlanEntry {
    pub peer: usize,
    pub offset: NeighborOffset,
    pub send_tag: Tag,
    pub recv_tag: Tag,
    pub send_region: BoundaryRegion,
    pub recv_region: BoundaryRegion,
    pub send_buf: Arc<PackBuffer>,
    pub recv_buf: Arc<PackBuffer>,
}

/// All messages one rank exchanges per iteration, one entry per present
/// neighbor. Tags are unique per direction, so a peer reached through
/// several wrapped offsets still matches unambiguously.
pub struct MessagePlan {
    pub entries: Vec<PlanEntry>,
    pub n_parts: usize,
    pub num_vars: usize,
}

impl MessagePlan {
    pub fn build(
        grid: &ProcessGrid,
        rank: usize,
        owned_extents: [usize; 3],
        ghost_width: usize,
        num_vars: usize,
        n_parts: usize,
    ) -> Result<MessagePlan> {
        let dim = grid.dimensionality();
        let coords = grid.coords(rank);
        let exchanges = boundary_regions(owned_extents, ghost_width, grid, coords)?;
        let entries = exchanges
            .into_iter()
            .map(|ex| {
                let logical = ex.send.cell_count() * num_vars;
                PlanEntry {
                    peer: ex.peer,
                    offset: ex.offset,
                    send_tag: ex.offset.index(dim) as Tag,
                    recv_tag: ex.offset.negated().index(dim) as Tag,
                    send_buf: Arc::new(PackBuffer::new(logical, n_parts)),
                    recv_buf: Arc::new(PackBuffer::new(
                        ex.recv.cell_count() * num_vars,
                        n_parts,
                    )),
                    send_region: ex.send,
                    recv_region: ex.recv,
                }
            })
            .collect();
        Ok(MessagePlan {
            entries,
            n_parts,
            num_vars,
        })
    }

    /// Largest per-neighbor message, in scalars. This is the face-exchange
    /// size that benchmark sweeps report.
    pub fn max_message_scalars(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.send_buf.logical_len())
            .max()
            .unwrap_or(0)
    }
}

/// Packs every send buffer, messages assigned round-robin over workers.
fn parallel_pack(plan: &MessagePlan, mesh: &LocalMesh, pool: WorkerPool) -> Result<()> {
    if pool.n_workers <= 1 || plan.entries.len() <= 1 {
        for e in &plan.entries {
            meshdata::pack(mesh, &e.send_region, &e.send_buf)?;
        }
        return Ok(());
    }
    let n = pool.n_workers.min(plan.entries.len());
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|w| {
                s.spawn(move || -> Result<()> {
                    for e in plan.entries.iter().skip(w).step_by(n) {
                        meshdata::pack(mesh, &e.send_region, &e.send_buf)?;
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("pack worker panicked")?;
        }
        Ok(())
    })
}

fn parallel_unpack(plan: &MessagePlan, mesh: &mut LocalMesh, pool: WorkerPool) -> Result<()> {
    let jobs: Vec<(&BoundaryRegion, &PackBuffer)> = plan
        .entries
        .iter()
        .map(|e| (&e.recv_region, e.recv_buf.as_ref()))
        .collect();
    meshdata::parallel_unpack(mesh, &jobs, pool.n_workers)
}

/// One standard exchange: parallel pack, non-blocking sends then receives,
/// wait on all, parallel unpack.
pub fn exchange_nonblocking(
    ctx: &CommContext,
    plan: &MessagePlan,
    mesh: &mut LocalMesh,
    pool: WorkerPool,
) -> Result<()> {
    parallel_pack(plan, mesh, pool)?;
    let mut requests: Vec<NonblockingRequest> = Vec::with_capacity(plan.entries.len() * 2);
    // Sends posted before receives, matching the reference loop order.
    for e in &plan.entries {
        requests.push(comm::isend(ctx, e.peer, e.send_tag, &e.send_buf)?);
    }
    for e in &plan.entries {
        requests.push(comm::irecv(ctx, e.peer, e.recv_tag, &e.recv_buf)?);
    }
    comm::wait_all(ctx, &mut requests)?;
    parallel_unpack(plan, mesh, pool)
}

/// Builds persistent requests for every message: sends first, then receives.
/// No data moves.
pub fn persistent_init(ctx: &CommContext, plan: &MessagePlan) -> Result<Vec<PersistentRequest>> {
    let mut requests = Vec::with_capacity(plan.entries.len() * 2);
    for e in &plan.entries {
        requests.push(comm::send_init(ctx, e.peer, e.send_tag, &e.send_buf)?);
    }
    for e in &plan.entries {
        requests.push(comm::recv_init(ctx, e.peer, e.recv_tag, &e.recv_buf)?);
    }
    Ok(requests)
}

/// One persistent exchange over requests built by [`persistent_init`].
pub fn persistent_exchange(
    ctx: &CommContext,
    plan: &MessagePlan,
    mesh: &mut LocalMesh,
    requests: &mut [PersistentRequest],
    pool: WorkerPool,
) -> Result<()> {
    parallel_pack(plan, mesh, pool)?;
    comm::start_all(ctx, requests)?;
    comm::wait_all_persistent(ctx, requests)?;
    parallel_unpack(plan, mesh, pool)
}

pub fn persistent_destroy(requests: &mut [PersistentRequest]) -> Result<()> {
    for r in requests.iter_mut() {
        comm::request_free(r)?;
    }
    Ok(())
}

/// Builds partitioned requests for every message with `plan.n_parts`
/// partitions each: sends first, then receives.
pub fn partitioned_init(
    ctx: &CommContext,
    plan: &MessagePlan,
) -> Result<Vec<PartitionedRequest>> {
    let mut requests = Vec::with_capacity(plan.entries.len() * 2);
    for e in &plan.entries {
        requests.push(comm::psend_init(
            ctx,
            e.peer,
            e.send_tag,
            &e.send_buf,
            plan.n_parts,
        )?);
    }
    for e in &plan.entries {
        requests.push(comm::precv_init(
            ctx,
            e.peer,
            e.recv_tag,
            &e.recv_buf,
            plan.n_parts,
        )?);
    }
    Ok(requests)
}

/// One partitioned exchange: start all requests first, then every worker
/// packs its slice of each send buffer and immediately marks that partition
/// ready; once the pool drains, wait on everything and unpack.
pub fn partitioned_exchange(
    ctx: &CommContext,
    plan: &MessagePlan,
    mesh: &mut LocalMesh,
    requests: &[PartitionedRequest],
    pool: WorkerPool,
) -> Result<()> {
    if plan.n_parts != pool.n_workers {
        return Err(Error::Config(format!(
            "partitioned exchange needs one partition per worker: {} partitions, {} workers",
            plan.n_parts, pool.n_workers
        )));
    }
    comm::pstart_all(ctx, requests)?;
    let n_send = plan.entries.len();
    if pool.n_workers == 1 {
        for (i, e) in plan.entries.iter().enumerate() {
            meshdata::pack_slice(mesh, &e.send_region, &e.send_buf, 0, 1)?;
            comm::pready(ctx, &requests[i], 0)?;
        }
    } else {
        let mesh_ref: &LocalMesh = mesh;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..pool.n_workers)
                .map(|w| {
                    let requests = &requests[..n_send];
                    s.spawn(move || -> Result<()> {
                        for (i, e) in plan.entries.iter().enumerate() {
                            meshdata::pack_slice(
                                mesh_ref,
                                &e.send_region,
                                &e.send_buf,
                                w,
                                plan.n_parts,
                            )?;
                            comm::pready(ctx, &requests[i], w)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("pack worker panicked")?;
            }
            Ok::<(), Error>(())
        })?;
    }
    comm::pwait_all(ctx, requests)?;
    parallel_unpack(plan, mesh, pool)
}

pub fn partitioned_destroy(requests: &[PartitionedRequest]) -> Result<()> {
    for r in requests {
        comm::prequest_free(r)?;
    }
    Ok(())
}
