//! Sequential global-array reference for halo exchanges. Operates on the
//! gathered global mesh with no transport, requests, or packing involved, so
//! it serves as an independent check on every communication strategy.

use crate::grid::ProcessGrid;
use crate::meshdata::LocalMesh;

/// The owned cells of every rank assembled into one global array.
pub struct GlobalMesh {
    extents: [usize; 3],
    num_vars: usize,
    values: Vec<f64>,
}

impl GlobalMesh {
    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    fn index(&self, var: usize, cell: [usize; 3]) -> usize {
        let per_var = self.extents.iter().product::<usize>();
        var * per_var + (cell[0] * self.extents[1] + cell[1]) * self.extents[2] + cell[2]
    }

    pub fn get(&self, var: usize, cell: [usize; 3]) -> f64 {
        self.values[self.index(var, cell)]
    }
}

/// Gathers every rank's owned cells. All ranks must have identical extents;
/// rank r's subdomain starts at `coords(r) * owned_extents`.
pub fn gather(grid: &ProcessGrid, meshes: &[LocalMesh]) -> GlobalMesh {
    assert_eq!(meshes.len(), grid.num_ranks());
    let owned = meshes[0].owned_extents();
    let dims = grid.dims();
    let extents = [owned[0] * dims[0], owned[1] * dims[1], owned[2] * dims[2]];
    let num_vars = meshes[0].num_vars();
    let mut global = GlobalMesh {
        extents,
        num_vars,
        values: vec![0.0; num_vars * extents.iter().product::<usize>()],
    };
    for (rank, mesh) in meshes.iter().enumerate() {
        let coords = grid.coords(rank);
        let g = mesh.ghost_width();
        for var in 0..num_vars {
            for cell in mesh.owned_cells() {
                let gc = [
                    coords[0] * owned[0] + cell[0] - g,
                    coords[1] * owned[1] + cell[1] - g,
                    coords[2] * owned[2] + cell[2] - g,
                ];
                let idx = global.index(var, gc);
                global.values[idx] = mesh.get(var, cell);
            }
        }
    }
    global
}

/// Fills every rank's ghost cells from the gathered global array with
/// per-axis periodic wraparound: the result every exchange strategy must
/// reproduce exactly. Ghost cells with no owner (outside a non-periodic
/// boundary) are left untouched.
pub fn reference_exchange(grid: &ProcessGrid, meshes: &mut [LocalMesh]) {
    let global = gather(grid, meshes);
    let periodic = grid.periodic();
    let owned = meshes[0].owned_extents();
    for (rank, mesh) in meshes.iter_mut().enumerate() {
        let coords = grid.coords(rank);
        let g = mesh.ghost_width();
        let padded = mesh.padded_extents();
        for i in 0..padded[0] {
            for j in 0..padded[1] {
                for k in 0..padded[2] {
                    let cell = [i, j, k];
                    if mesh.is_owned(cell) {
                        continue;
                    }
                    let mut gc = [0usize; 3];
                    let mut present = true;
                    for a in 0..3 {
                        let raw = (coords[a] * owned[a] + cell[a]) as i64 - g as i64;
                        let ext = global.extents[a] as i64;
                        if raw >= 0 && raw < ext {
                            gc[a] = raw as usize;
                        } else if periodic[a] {
                            gc[a] = raw.rem_euclid(ext) as usize;
                        } else {
                            present = false;
                            break;
                        }
                    }
                    if !present {
                        continue;
                    }
                    for var in 0..global.num_vars {
                        mesh.set(var, cell, global.get(var, gc));
                    }
                }
            }
        }
    }
}

/// Order-sensitive FNV fold of every rank's full padded state.
pub fn state_checksum(meshes: &[LocalMesh]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for mesh in meshes {
        for b in mesh.full_checksum().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

/// First (rank, var, cell) where two sets of rank meshes differ bitwise.
pub fn first_divergence(
    a: &[LocalMesh],
    b: &[LocalMesh],
) -> Option<(usize, usize, [usize; 3], f64, f64)> {
    for (rank, (ma, mb)) in a.iter().zip(b).enumerate() {
        for var in 0..ma.num_vars() {
            for cell in ma.all_cells() {
                let (va, vb) = (ma.get(var, cell), mb.get(var, cell));
                if va.to_bits() != vb.to_bits() {
                    return Some((rank, var, cell, va, vb));
                }
            }
        }
    }
    None
}
