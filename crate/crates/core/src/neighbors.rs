//! Fixed-radius neighbor search on a uniform grid, per-step pair caches and
//! the frozen rest-configuration neighborhoods used by the elastic solver.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use rayon::prelude::*;

use crate::error::NeighborError;
use crate::math::{is_finite_vec, Kernel, Vec3};

pub type CellKey = [i64; 3];

/// Multiply-rotate hasher for integer cell keys.
#[derive(Default)]
pub struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        // Integer slices arrive here as raw bytes; fold them a word at a time.
        let mut chunks = bytes.chunks_exact(8);
        for c in &mut chunks {
            self.write_u64(u64::from_le_bytes(c.try_into().unwrap()));
        }
        for b in chunks.remainder() {
            self.write_u64(*b as u64);
        }
    }

    fn write_i64(&mut self, v: i64) {
        self.write_u64(v as u64);
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }

    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }
}

type CellMap = HashMap<CellKey, (u32, u32), BuildHasherDefault<CellHasher>>;

/// Uniform grid over a snapshot of particle positions.
///
/// Every particle index lives in exactly one cell, `floor(x / cell_size)`.
/// Indices within a cell are kept in ascending order.
#[derive(Clone, Debug)]
pub struct SpatialGrid {
    cell_size: f64,
    positions: Vec<Vec3>,
    sorted: Vec<u32>,
    cells: CellMap,
}

pub fn cell_of(x: &Vec3, cell_size: f64) -> CellKey {
    [
        (x.x / cell_size).floor() as i64,
        (x.y / cell_size).floor() as i64,
        (x.z / cell_size).floor() as i64,
    ]
}

/// Builds a grid over `positions`. Rebuilding from identical input yields an
/// identical grid.
pub fn build_grid(positions: &[Vec3], cell_size: f64) -> Result<SpatialGrid, NeighborError> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(NeighborError::InvalidCellSize(cell_size));
    }
    if let Some(index) = positions.iter().position(|p| !is_finite_vec(p)) {
        return Err(NeighborError::NonFinitePosition { index });
    }
    let mut keyed: Vec<(CellKey, u32)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (cell_of(p, cell_size), i as u32))
        .collect();
    keyed.par_sort_unstable();

    let mut cells = CellMap::default();
    let mut start = 0usize;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut end = start + 1;
        while end < keyed.len() && keyed[end].0 == key {
            end += 1;
        }
        cells.insert(key, (start as u32, end as u32));
        start = end;
    }
    Ok(SpatialGrid {
        cell_size,
        positions: positions.to_vec(),
        sorted: keyed.into_iter().map(|(_, i)| i).collect(),
        cells,
    })
}

impl SpatialGrid {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Particle indices stored in one cell (empty if the cell is unoccupied).
    pub fn cell(&self, key: CellKey) -> &[u32] {
        match self.cells.get(&key) {
            Some(&(s, e)) => &self.sorted[s as usize..e as usize],
            None => &[],
        }
    }

    /// Calls `f(j, x - x_j)` for every indexed point strictly within `radius`
    /// of `x`, in no particular order.
    pub fn for_each_within(&self, x: &Vec3, radius: f64, mut f: impl FnMut(usize, Vec3)) {
        debug_assert!(radius <= self.cell_size * (1.0 + 1e-12));
        let c = cell_of(x, self.cell_size);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    for &j in self.cell([c[0] + dx, c[1] + dy, c[2] + dz]) {
                        let d = x - self.positions[j as usize];
                        if d.norm_squared() < r2 {
                            f(j as usize, d);
                        }
                    }
                }
            }
        }
    }

    /// Indices within `radius` of an arbitrary point, ascending.
    pub fn query_point(&self, x: &Vec3, radius: f64, exclude: Option<usize>) -> Vec<u32> {
        let mut out = Vec::new();
        self.for_each_within(x, radius, |j, _| {
            if Some(j) != exclude {
                out.push(j as u32);
            }
        });
        out.sort_unstable();
        out
    }

    /// `{ j != i : |x_i - x_j| < radius }`, ascending. Requires
    /// `radius <= cell_size`.
    pub fn query_neighbors(&self, i: usize, radius: f64) -> Vec<u32> {
        self.query_point(&self.positions[i], radius, Some(i))
    }
}

/// Compressed rows of per-particle records.
#[derive(Clone, Debug, Default)]
pub struct Csr<T> {
    offsets: Vec<usize>,
    items: Vec<T>,
}

impl<T> Csr<T> {
    pub fn empty(rows: usize) -> Self {
        Self {
            offsets: vec![0; rows + 1],
            items: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let total: usize = rows.iter().map(Vec::len).sum();
        let mut items = Vec::with_capacity(total);
        for row in rows {
            items.extend(row);
            offsets.push(items.len());
        }
        Self { offsets, items }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Row start offsets into the flattened item array; `rows() + 1` entries.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }
}

/// Cached geometry of one interacting pair for the current step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pair {
    pub j: u32,
    /// `x_i - x_j`
    pub xij: Vec3,
    pub w: f64,
    pub grad: Vec3,
}

/// Current-configuration neighbor lists of the dynamic particles: particle
/// neighbors and boundary-sample neighbors, each sorted by index.
#[derive(Clone, Debug, Default)]
pub struct Neighborhoods {
    pub particles: Csr<Pair>,
    pub boundary: Csr<Pair>,
}

impl Neighborhoods {
    pub fn empty(n: usize) -> Self {
        Self {
            particles: Csr::empty(n),
            boundary: Csr::empty(n),
        }
    }

    /// Builds both neighbor sets with radius equal to the kernel support.
    pub fn build(
        positions: &[Vec3],
        boundary_positions: &[Vec3],
        kernel: &Kernel,
    ) -> Result<Self, NeighborError> {
        let bgrid = build_grid(boundary_positions, kernel.support_radius())?;
        Self::build_with_boundary_grid(positions, &bgrid, kernel)
    }

    /// Same as [`Neighborhoods::build`] with a prebuilt boundary grid, whose
    /// cell size must be the kernel support.
    pub fn build_with_boundary_grid(
        positions: &[Vec3],
        bgrid: &SpatialGrid,
        kernel: &Kernel,
    ) -> Result<Self, NeighborError> {
        let h = kernel.support_radius();
        let grid = build_grid(positions, h)?;
        let boundary_positions = bgrid.positions();
        let pair = |j: usize, xij: Vec3| {
            let r = xij.norm();
            Pair {
                j: j as u32,
                xij,
                w: kernel.value(r),
                grad: xij * kernel.gradient_factor(r),
            }
        };
        let collect = |g: &SpatialGrid, x: &Vec3, exclude: Option<usize>| {
            let mut row = Vec::with_capacity(32);
            g.for_each_within(x, h, |j, d| {
                if Some(j) != exclude {
                    row.push(pair(j, d));
                }
            });
            row.sort_unstable_by_key(|p| p.j);
            row
        };
        let rows: Vec<Vec<Pair>> = positions
            .par_iter()
            .enumerate()
            .map(|(i, x)| collect(&grid, x, Some(i)))
            .collect();
        let brows: Vec<Vec<Pair>> = if boundary_positions.is_empty() {
            (0..positions.len()).map(|_| Vec::new()).collect()
        } else {
            positions
                .par_iter()
                .map(|x| collect(bgrid, x, None))
                .collect()
        };
        Ok(Self {
            particles: Csr::from_rows(rows),
            boundary: Csr::from_rows(brows),
        })
    }

    /// Number of current neighbors (particles plus boundary samples).
    pub fn count(&self, i: usize) -> usize {
        self.particles.row(i).len() + self.boundary.row(i).len()
    }
}

/// One neighbor in the rest configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestPair {
    pub j: u32,
    /// `x_j⁰ - x_i⁰`
    pub offset: Vec3,
    /// `W(x_ij⁰, h)`
    pub w: f64,
    /// `∇W(x_ij⁰, h)`
    pub grad: Vec3,
}

/// Neighbor lists and offsets frozen at initialization. Rows of particles in
/// groups that were never captured are empty.
#[derive(Clone, Debug, Default)]
pub struct RestNeighborhood {
    rows: Vec<Vec<RestPair>>,
    rest_positions: Vec<Vec3>,
    volumes: Vec<f64>,
    captured: Vec<usize>,
}

impl RestNeighborhood {
    pub fn new(particle_count: usize) -> Self {
        Self {
            rows: vec![Vec::new(); particle_count],
            rest_positions: vec![Vec3::zeros(); particle_count],
            volumes: vec![0.0; particle_count],
            captured: Vec::new(),
        }
    }

    /// Freezes neighbors among `members` (global indices) of one material
    /// group. Only pairs inside the group are recorded.
    pub fn capture_group(
        &mut self,
        group: usize,
        members: &[usize],
        positions: &[Vec3],
        volumes: &[f64],
        kernel: &Kernel,
    ) -> Result<(), NeighborError> {
        if self.captured.contains(&group) {
            return Err(NeighborError::AlreadyCaptured(group));
        }
        let h = kernel.support_radius();
        let local: Vec<Vec3> = members.iter().map(|&i| positions[i]).collect();
        let grid = build_grid(&local, h)?;
        for (li, &gi) in members.iter().enumerate() {
            let row = grid
                .query_neighbors(li, h)
                .into_iter()
                .map(|lj| {
                    let gj = members[lj as usize];
                    let xij = positions[gi] - positions[gj];
                    let r = xij.norm();
                    RestPair {
                        j: gj as u32,
                        offset: -xij,
                        w: kernel.value(r),
                        grad: xij * kernel.gradient_factor(r),
                    }
                })
                .collect::<Vec<_>>();
            let mut row = row;
            row.sort_unstable_by_key(|p| p.j);
            self.rows[gi] = row;
            self.rest_positions[gi] = positions[gi];
            self.volumes[gi] = volumes[gi];
        }
        self.captured.push(group);
        Ok(())
    }

    pub fn is_captured(&self, group: usize) -> bool {
        self.captured.contains(&group)
    }

    pub fn row(&self, i: usize) -> &[RestPair] {
        &self.rows[i]
    }

    pub fn rest_position(&self, i: usize) -> Vec3 {
        self.rest_positions[i]
    }

    /// Initial volume `ṽ_i`.
    pub fn volume(&self, i: usize) -> f64 {
        self.volumes[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Captures every particle indexed by `grid` as a single group.
pub fn capture_rest_neighborhood(
    grid: &SpatialGrid,
    volumes: &[f64],
    kernel: &Kernel,
) -> Result<RestNeighborhood, NeighborError> {
    let n = grid.len();
    let mut rest = RestNeighborhood::new(n);
    let members: Vec<usize> = (0..n).collect();
    rest.capture_group(0, &members, grid.positions(), volumes, kernel)?;
    Ok(rest)
}
