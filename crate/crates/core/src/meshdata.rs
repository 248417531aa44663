//! Per-rank mesh storage with a ghost layer, and packing/unpacking between
//! mesh regions and contiguous (optionally partitioned) message buffers.
//!
//! Packed element order is variable-major: all cells of variable 0 in
//! lexicographic cell order, then variable 1, and so on. Pack and unpack on
//! both sides of an exchange use the same traversal, so mirrored regions
//! round-trip exactly.

use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::grid::{BoundaryRegion, RegionRole};

/// A rank's cell array: `num_vars` variables over the owned extents plus a
/// ghost layer of `ghost_width` cells on every side.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMesh {
    owned_extents: [usize; 3],
    ghost_width: usize,
    num_vars: usize,
    padded: [usize; 3],
    values: Vec<f64>,
}

impl LocalMesh {
    pub fn new(owned_extents: [usize; 3], ghost_width: usize, num_vars: usize) -> LocalMesh {
        assert!(num_vars >= 1);
        let padded = [
            owned_extents[0] + 2 * ghost_width,
            owned_extents[1] + 2 * ghost_width,
            owned_extents[2] + 2 * ghost_width,
        ];
        let total = num_vars * padded.iter().product::<usize>();
        LocalMesh {
            owned_extents,
            ghost_width,
            num_vars,
            padded,
            values: vec![0.0; total],
        }
    }

    pub fn owned_extents(&self) -> [usize; 3] {
        self.owned_extents
    }

    pub fn ghost_width(&self) -> usize {
        self.ghost_width
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn padded_extents(&self) -> [usize; 3] {
        self.padded
    }

    fn index(&self, var: usize, cell: [usize; 3]) -> usize {
        debug_assert!(var < self.num_vars);
        debug_assert!((0..3).all(|a| cell[a] < self.padded[a]));
        let per_var = self.padded[0] * self.padded[1] * self.padded[2];
        var * per_var + (cell[0] * self.padded[1] + cell[1]) * self.padded[2] + cell[2]
    }

    /// Value at a padded-local cell (ghost cells addressable).
    pub fn get(&self, var: usize, cell: [usize; 3]) -> f64 {
        self.values[self.index(var, cell)]
    }

    pub fn set(&mut self, var: usize, cell: [usize; 3], value: f64) {
        let i = self.index(var, cell);
        self.values[i] = value;
    }

    pub fn is_owned(&self, cell: [usize; 3]) -> bool {
        (0..3).all(|a| {
            cell[a] >= self.ghost_width && cell[a] < self.ghost_width + self.owned_extents[a]
        })
    }

    /// Owned cells in lexicographic padded-coordinate order.
    pub fn owned_cells(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let g = self.ghost_width;
        let e = self.owned_extents;
        (g..g + e[0]).flat_map(move |i| {
            (g..g + e[1]).flat_map(move |j| (g..g + e[2]).map(move |k| [i, j, k]))
        })
    }

    /// All padded cells, ghost layer included.
    pub fn all_cells(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let p = self.padded;
        (0..p[0]).flat_map(move |i| (0..p[1]).flat_map(move |j| (0..p[2]).map(move |k| [i, j, k])))
    }

    pub fn fill_with(&mut self, mut f: impl FnMut(usize, [usize; 3]) -> f64) {
        for var in 0..self.num_vars {
            let p = self.padded;
            for i in 0..p[0] {
                for j in 0..p[1] {
                    for k in 0..p[2] {
                        self.set(var, [i, j, k], f(var, [i, j, k]));
                    }
                }
            }
        }
    }

    /// FNV-1a over the bit patterns of owned-cell values, in (var, cell) order.
    pub fn owned_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for var in 0..self.num_vars {
            for cell in self.owned_cells() {
                for b in self.get(var, cell).to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        h
    }

    /// FNV-1a over every padded value, ghosts included.
    pub fn full_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }
}

/// A contiguous message buffer split into equal-size partitions. The logical
/// payload occupies the first `logical_len` elements of the flattened stream;
/// anything beyond is padding, zero-filled on the send side and never
/// unpacked. Each partition sits behind its own lock so workers can fill
/// distinct partitions concurrently.
#[derive(Debug)]
pub struct PackBuffer {
    parts: Vec<Mutex<Vec<f64>>>,
    part_size: usize,
    logical_len: usize,
}

impl PackBuffer {
    pub fn new(logical_len: usize, n_parts: usize) -> PackBuffer {
        assert!(n_parts >= 1);
        let part_size = logical_len.div_ceil(n_parts);
        PackBuffer {
            parts: (0..n_parts).map(|_| Mutex::new(vec![0.0; part_size])).collect(),
            part_size,
            logical_len,
        }
    }

    pub fn logical_len(&self) -> usize {
        self.logical_len
    }

    pub fn padded_len(&self) -> usize {
        self.parts.len() * self.part_size
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn part_size(&self) -> usize {
        self.part_size
    }

    pub fn write_part(&self, part: usize, values: &[f64]) {
        let mut guard = self.parts[part].lock().unwrap();
        guard.copy_from_slice(values);
    }

    pub fn read_part(&self, part: usize) -> Vec<f64> {
        self.parts[part].lock().unwrap().clone()
    }

    /// The first `logical_len` elements of the flattened stream.
    pub fn read_logical(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.logical_len);
        for part in &self.parts {
            let guard = part.lock().unwrap();
            let take = (self.logical_len - out.len()).min(guard.len());
            out.extend_from_slice(&guard[..take]);
            if out.len() == self.logical_len {
                break;
            }
        }
        out
    }

    /// Overwrites the logical prefix; padding elements are left untouched.
    pub fn fill_logical(&self, values: &[f64]) {
        assert_eq!(values.len(), self.logical_len);
        let mut off = 0;
        for part in &self.parts {
            let mut guard = part.lock().unwrap();
            let take = (values.len() - off).min(guard.len());
            guard[..take].copy_from_slice(&values[off..off + take]);
            off += take;
            if off == values.len() {
                break;
            }
        }
    }

    /// Sets every element, padding included. Used by tests and verification
    /// to poison buffers with a sentinel.
    pub fn fill_all(&self, value: f64) {
        for part in &self.parts {
            for v in part.lock().unwrap().iter_mut() {
                *v = value;
            }
        }
    }
}

fn check_region_size(region: &BoundaryRegion, buf: &PackBuffer, num_vars: usize) -> Result<()> {
    let expected = region.cell_count() * num_vars;
    if buf.logical_len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            got: buf.logical_len(),
        });
    }
    Ok(())
}

/// Copies `region`'s mesh values into `buf` in variable-major order.
pub fn pack(mesh: &LocalMesh, region: &BoundaryRegion, buf: &PackBuffer) -> Result<()> {
    if region.role != RegionRole::Send {
        return Err(Error::RegionRole {
            op: "pack",
            expected: "send",
        });
    }
    check_region_size(region, buf, mesh.num_vars())?;
    for part in 0..buf.n_parts() {
        pack_slice(mesh, region, buf, part, buf.n_parts())?;
    }
    Ok(())
}

/// Packs one slice of the flattened stream: elements
/// `[part_index * part_size, (part_index + 1) * part_size)` where
/// `part_size = ceil(logical_len / n_parts)`. Elements past `logical_len`
/// are written as zero padding.
pub fn pack_slice(
    mesh: &LocalMesh,
    region: &BoundaryRegion,
    buf: &PackBuffer,
    part_index: usize,
    n_parts: usize,
) -> Result<()> {
    if region.role != RegionRole::Send {
        return Err(Error::RegionRole {
            op: "pack_slice",
            expected: "send",
        });
    }
    if part_index >= n_parts {
        return Err(Error::PartIndex {
            index: part_index,
            n_parts,
        });
    }
    check_region_size(region, buf, mesh.num_vars())?;
    if buf.n_parts() != n_parts {
        return Err(Error::PartIndex {
            index: part_index,
            n_parts: buf.n_parts(),
        });
    }
    let cells = region.cell_count();
    let part_size = buf.part_size();
    let start = part_index * part_size;
    let mut slice = vec![0.0; part_size];
    for (slot, value) in slice.iter_mut().enumerate() {
        let e = start + slot;
        if e >= buf.logical_len() {
            break;
        }
        let var = e / cells;
        let cell = region.cell_at(e % cells);
        *value = mesh.get(var, cell);
    }
    buf.write_part(part_index, &slice);
    Ok(())
}

/// Copies `buf`'s logical payload into `region`'s ghost cells, same traversal
/// order as [`pack`]. Padding elements are never written to the mesh.
pub fn unpack(mesh: &mut LocalMesh, region: &BoundaryRegion, buf: &PackBuffer) -> Result<()> {
    if region.role != RegionRole::Recv {
        return Err(Error::RegionRole {
            op: "unpack",
            expected: "recv",
        });
    }
    check_region_size(region, buf, mesh.num_vars())?;
    let values = buf.read_logical();
    let cells = region.cell_count();
    for (e, v) in values.iter().enumerate() {
        let var = e / cells;
        let cell = region.cell_at(e % cells);
        mesh.set(var, cell, *v);
    }
    Ok(())
}

/// Unpacks many messages with `n_workers` scoped threads, messages assigned
/// round-robin. Sound because recv regions for distinct offsets are pairwise
/// disjoint; this is asserted before any write.
pub fn parallel_unpack(
    mesh: &mut LocalMesh,
    jobs: &[(&BoundaryRegion, &PackBuffer)],
    n_workers: usize,
) -> Result<()> {
    for (i, (ra, _)) in jobs.iter().enumerate() {
        if ra.role != RegionRole::Recv {
            return Err(Error::RegionRole {
                op: "parallel_unpack",
                expected: "recv",
            });
        }
        check_region_size(ra, jobs[i].1, mesh.num_vars())?;
        for (rb, _) in &jobs[i + 1..] {
            assert!(!ra.overlaps(rb), "recv regions must be disjoint");
        }
    }
    if n_workers <= 1 || jobs.len() <= 1 {
        for (region, buf) in jobs {
            unpack(mesh, region, buf)?;
        }
        return Ok(());
    }
    let view = MeshWriter::new(mesh);
    std::thread::scope(|s| {
        for w in 0..n_workers.min(jobs.len()) {
            let view = &view;
            s.spawn(move || {
                for (region, buf) in jobs.iter().skip(w).step_by(n_workers) {
                    let values = buf.read_logical();
                    let cells = region.cell_count();
                    for (e, v) in values.iter().enumerate() {
                        let var = e / cells;
                        let cell = region.cell_at(e % cells);
                        // SAFETY: regions are pairwise disjoint (checked
                        // above) and each job is handled by one worker.
                        unsafe { view.write(var, cell, *v) };
                    }
                }
            });
        }
    });
    Ok(())
}

/// Raw write access to a mesh for disjoint-region parallel unpack.
struct MeshWriter {
    ptr: *mut f64,
    padded: [usize; 3],
    per_var: usize,
}

// Call sites guarantee disjoint write sets.
unsafe impl Sync for MeshWriter {}

impl MeshWriter {
    fn new(mesh: &mut LocalMesh) -> MeshWriter {
        MeshWriter {
            ptr: mesh.values.as_mut_ptr(),
            padded: mesh.padded,
            per_var: mesh.padded.iter().product(),
        }
    }

    /// # Safety
    /// No two concurrent callers may target the same (var, cell).
    unsafe fn write(&self, var: usize, cell: [usize; 3], value: f64) {
        let idx = var * self.per_var
            + (cell[0] * self.padded[1] + cell[1]) * self.padded[2]
            + cell[2];
        unsafe { *self.ptr.add(idx) = value };
    }
}
