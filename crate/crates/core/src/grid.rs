//! Cartesian process-grid construction, periodic neighbor resolution, and
//! boundary-region geometry for halo exchanges.
//!
//! All types internally use three axes; 2D grids fix the third axis at
//! extent 1 and never generate offsets along it.

use crate::error::{Error, Result};

/// A coordinate offset toward one neighbor, each component in `{-1, 0, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeighborOffset(pub [i32; 3]);

impl NeighborOffset {
    /// All distinct offsets for the given dimensionality, in lexicographic
    /// order: 26 for 3D, 8 for 2D.
    pub fn all(dimensionality: usize) -> Vec<NeighborOffset> {
        let k_range = if dimensionality == 3 {
            [-1, 0, 1].as_slice()
        } else {
            [0].as_slice()
        };
        let mut out = Vec::new();
        for &i in &[-1, 0, 1] {
            for &j in &[-1, 0, 1] {
                for &k in k_range {
                    if (i, j, k) != (0, 0, 0) {
                        out.push(NeighborOffset([i, j, k]));
                    }
                }
            }
        }
        out
    }

    pub fn negated(self) -> NeighborOffset {
        NeighborOffset([-self.0[0], -self.0[1], -self.0[2]])
    }

    /// Position of this offset within [`NeighborOffset::all`], used as a
    /// stable per-direction message tag.
    pub fn index(self, dimensionality: usize) -> usize {
        Self::all(dimensionality)
            .iter()
            .position(|o| *o == self)
            .expect("offset not valid for dimensionality")
    }

    /// Count of nonzero components (1 = face, 2 = edge, 3 = corner).
    pub fn order(self) -> usize {
        self.0.iter().filter(|c| **c != 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessGrid {
    dims: [usize; 3],
    periodic: [bool; 3],
    dimensionality: usize,
}

impl ProcessGrid {
    /// Builds a grid whose axis lengths factorize `num_ranks`, minimizing the
    /// longest axis. Ties are broken toward descending axis lengths. All axes
    /// are periodic.
    pub fn build(num_ranks: usize, dimensionality: usize) -> Result<ProcessGrid> {
        if !(2..=3).contains(&dimensionality) {
            return Err(Error::Dimensionality(dimensionality));
        }
        assert!(num_ranks >= 1, "num_ranks must be positive");
        let dims = best_factorization(num_ranks, dimensionality);
        Self::with_dims(dims, [true; 3], dimensionality, num_ranks)
    }

    /// Builds a grid from explicit axis lengths.
    pub fn with_dims(
        dims: [usize; 3],
        periodic: [bool; 3],
        dimensionality: usize,
        num_ranks: usize,
    ) -> Result<ProcessGrid> {
        if !(2..=3).contains(&dimensionality) {
            return Err(Error::Dimensionality(dimensionality));
        }
        let mut dims = dims;
        let mut periodic = periodic;
        if dimensionality == 2 {
            dims[2] = 1;
            periodic[2] = false;
        }
        if dims.iter().product::<usize>() != num_ranks {
            return Err(Error::GridMismatch {
                dims,
                ranks: num_ranks,
            });
        }
        Ok(ProcessGrid {
            dims,
            periodic,
            dimensionality,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn periodic(&self) -> [bool; 3] {
        self.periodic
    }

    pub fn dimensionality(&self) -> usize {
        self.dimensionality
    }

    pub fn num_ranks(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major coordinates of `rank`.
    pub fn coords(&self, rank: usize) -> [usize; 3] {
        debug_assert!(rank < self.num_ranks());
        let [_, d1, d2] = self.dims;
        [rank / (d1 * d2), (rank / d2) % d1, rank % d2]
    }

    pub fn rank_of(&self, coords: [usize; 3]) -> usize {
        let [_, d1, d2] = self.dims;
        (coords[0] * d1 + coords[1]) * d2 + coords[2]
    }

    /// The rank at `coords + offset` with per-axis periodic wraparound.
    /// `None` when a non-periodic axis falls outside the grid.
    pub fn neighbor_rank(&self, coords: [usize; 3], offset: NeighborOffset) -> Option<usize> {
        let mut nbr = [0usize; 3];
        for a in 0..3 {
            let c = coords[a] as i64 + offset.0[a] as i64;
            let d = self.dims[a] as i64;
            nbr[a] = if c >= 0 && c < d {
                c as usize
            } else if self.periodic[a] {
                c.rem_euclid(d) as usize
            } else {
                return None;
            };
        }
        Some(self.rank_of(nbr))
    }
}

/// Minimize the longest axis over all ordered factorizations into
/// `dimensionality` factors; among ties pick the lexicographically greatest
/// tuple (descending axis lengths).
fn best_factorization(n: usize, dimensionality: usize) -> [usize; 3] {
    let mut best: Option<[usize; 3]> = None;
    let mut consider = |cand: [usize; 3]| {
        let better = match best {
            None => true,
            Some(b) => {
                let (cm, bm) = (
                    *cand.iter().max().unwrap(),
                    *b.iter().max().unwrap(),
                );
                cm < bm || (cm == bm && cand > b)
            }
        };
        if better {
            best = Some(cand);
        }
    };
    for a in 1..=n {
        if !n.is_multiple_of(a) {
            continue;
        }
        let rest = n / a;
        if dimensionality == 2 {
            consider([a, rest, 1]);
        } else {
            for b in 1..=rest {
                if rest.is_multiple_of(b) {
                    consider([a, b, rest / b]);
                }
            }
        }
    }
    best.unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Face,
    Edge,
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionRole {
    Send,
    Recv,
}

/// A rectangular cell region on one side of a subdomain, in padded local
/// coordinates (ghost layer included, half-open ranges per axis).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryRegion {
    pub kind: RegionKind,
    pub role: RegionRole,
    pub direction: NeighborOffset,
    pub ranges: [(usize, usize); 3],
}

impl BoundaryRegion {
    pub fn cell_count(&self) -> usize {
        self.ranges.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Cells in lexicographic (axis0 outermost) order.
    pub fn cells(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [(l0, h0), (l1, h1), (l2, h2)] = self.ranges;
        (l0..h0).flat_map(move |i| {
            (l1..h1).flat_map(move |j| (l2..h2).map(move |k| [i, j, k]))
        })
    }

    /// The `idx`-th cell in traversal order.
    pub fn cell_at(&self, idx: usize) -> [usize; 3] {
        let e1 = self.ranges[1].1 - self.ranges[1].0;
        let e2 = self.ranges[2].1 - self.ranges[2].0;
        [
            self.ranges[0].0 + idx / (e1 * e2),
            self.ranges[1].0 + (idx / e2) % e1,
            self.ranges[2].0 + idx % e2,
        ]
    }

    pub fn overlaps(&self, other: &BoundaryRegion) -> bool {
        (0..3).all(|a| {
            let (lo1, hi1) = self.ranges[a];
            let (lo2, hi2) = other.ranges[a];
            lo1 < hi2 && lo2 < hi1
        })
    }
}

fn region_kind(offset: NeighborOffset) -> RegionKind {
    match offset.order() {
        1 => RegionKind::Face,
        2 => RegionKind::Edge,
        _ => RegionKind::Corner,
    }
}

fn send_region(
    offset: NeighborOffset,
    extents: [usize; 3],
    ghost_width: usize,
) -> BoundaryRegion {
    let mut ranges = [(0, 0); 3];
    for a in 0..3 {
        let g = ghost_width;
        let e = extents[a];
        ranges[a] = match offset.0[a] {
            -1 => (g, g + g),
            0 => (g, g + e),
            _ => (e, g + e),
        };
    }
    BoundaryRegion {
        kind: region_kind(offset),
        role: RegionRole::Send,
        direction: offset,
        ranges,
    }
}

fn recv_region(
    offset: NeighborOffset,
    extents: [usize; 3],
    ghost_width: usize,
) -> BoundaryRegion {
    let mut ranges = [(0, 0); 3];
    for a in 0..3 {
        let g = ghost_width;
        let e = extents[a];
        ranges[a] = match offset.0[a] {
            -1 => (0, g),
            0 => (g, g + e),
            _ => (g + e, g + e + g),
        };
    }
    BoundaryRegion {
        kind: region_kind(offset),
        role: RegionRole::Recv,
        direction: offset,
        ranges,
    }
}

/// One neighbor's worth of exchange geometry: where to read boundary values
/// bound for `peer`, and where `peer`'s values land in the ghost layer.
#[derive(Debug, Clone)]
pub struct NeighborExchange {
    pub peer: usize,
    pub offset: NeighborOffset,
    pub send: BoundaryRegion,
    pub recv: BoundaryRegion,
}

/// Exchange geometry for every present neighbor of the rank at `coords`,
/// in canonical offset order. The send region toward offset `o` mirrors the
/// peer's recv region for `-o` cell-for-cell.
pub fn boundary_regions(
    subdomain_extents: [usize; 3],
    ghost_width: usize,
    grid: &ProcessGrid,
    coords: [usize; 3],
) -> Result<Vec<NeighborExchange>> {
    assert!(ghost_width >= 1, "ghost_width must be positive");
    let active_axes = if grid.dimensionality() == 2 { 2 } else { 3 };
    for (a, &extent) in subdomain_extents.iter().enumerate().take(active_axes) {
        if extent < ghost_width {
            return Err(Error::ExtentTooSmall {
                axis: a,
                extent,
                ghost_width,
            });
        }
    }
    let mut extents = subdomain_extents;
    if grid.dimensionality() == 2 {
        extents[2] = 1;
    }
    let mut out = Vec::new();
    for offset in NeighborOffset::all(grid.dimensionality()) {
        if let Some(peer) = grid.neighbor_rank(coords, offset) {
            out.push(NeighborExchange {
                peer,
                offset,
                send: send_region(offset, extents, ghost_width),
                recv: recv_region(offset, extents, ghost_width),
            });
        }
    }
    Ok(out)
}
