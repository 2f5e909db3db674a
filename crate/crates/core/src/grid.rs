//! Regular quadratic lattice for the discrete model: occupancy, indexing,
//! obstacle blocking, and reachability.
//!
//! Cells are congruent squares (axiom: convex, identical shape and size),
//! each holding at most one agent. A cell whose interior intersects any
//! obstacle is wholly blocked — small obstacles therefore block entire
//! cells, which is exactly the resolution artifact the hybrid approach
//! exists to fix. Cell ownership of boundary points is lower-left-closed:
//! cells are closed on their low edges and open on their high edges.
//!
//! Only square cells are implemented; triangular/hexagonal lattices would
//! slot in behind `cell_center`/`cell_area` but no experiment needs them.

use crate::geometry::{polygons_interior_intersect, Polygon, Vec2};
use crate::{AgentId, Error, Result};
use std::collections::HashSet;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct CellIndex {
    /// Row (y direction).
    pub m: usize,
    /// Column (x direction).
    pub n: usize,
}

impl CellIndex {
    pub fn new(m: usize, n: usize) -> Self {
        CellIndex { m, n }
    }
}

impl std::fmt::Display for CellIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CellState {
    Free,
    Obstacle,
    /// Occupied by a discrete agent.
    Occupied(AgentId),
    /// Blocked for one frame by a continuous agent's footprint.
    Virtual(AgentId),
}

#[derive(Clone, Debug)]
pub struct Grid {
    origin: Vec2,
    cell_edge: f64,
    rows: usize,
    cols: usize,
    cells: Vec<CellState>,
}

impl Grid {
    /// Build a grid covering the bounding box of `bounds`, blocking every
    /// cell whose interior intersects an obstacle or that is not fully
    /// inside the bounds polygon.
    pub fn new(bounds: &Polygon, obstacles: &[Polygon], cell_edge: f64) -> Result<Self> {
        if !(cell_edge > 0.0) {
            return Err(Error::validation("cell_edge > 0", format!("{cell_edge}")));
        }
        let (min, max) = bounds.bbox();
        let cols = ((max.x - min.x) / cell_edge).ceil().max(1.0) as usize;
        let rows = ((max.y - min.y) / cell_edge).ceil().max(1.0) as usize;
        let mut grid = Grid {
            origin: min,
            cell_edge,
            rows,
            cols,
            cells: vec![CellState::Free; rows * cols],
        };
        let rect_bounds = is_axis_aligned_rect(bounds);
        for m in 0..rows {
            for n in 0..cols {
                let idx = CellIndex::new(m, n);
                let poly = grid.cell_polygon(idx);
                let blocked = obstacles
                    .iter()
                    .any(|ob| polygons_interior_intersect(&poly, ob))
                    || (!rect_bounds && !cell_inside_bounds(&poly, bounds));
                if blocked {
                    grid.cells[m * cols + n] = CellState::Obstacle;
                }
            }
        }
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_edge(&self) -> f64 {
        self.cell_edge
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_edge * self.cell_edge
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn in_range(&self, idx: CellIndex) -> bool {
        idx.m < self.rows && idx.n < self.cols
    }

    pub fn flat(&self, idx: CellIndex) -> usize {
        debug_assert!(self.in_range(idx));
        idx.m * self.cols + idx.n
    }

    pub fn unflat(&self, flat: usize) -> CellIndex {
        CellIndex::new(flat / self.cols, flat % self.cols)
    }

    pub fn cell_center(&self, idx: CellIndex) -> Vec2 {
        self.origin
            + Vec2::new(
                (idx.n as f64 + 0.5) * self.cell_edge,
                (idx.m as f64 + 0.5) * self.cell_edge,
            )
    }

    pub fn cell_polygon(&self, idx: CellIndex) -> Polygon {
        let lo = self.origin
            + Vec2::new(idx.n as f64 * self.cell_edge, idx.m as f64 * self.cell_edge);
        Polygon::axis_aligned_rect(lo, lo + Vec2::new(self.cell_edge, self.cell_edge))
    }

    /// Cell owning a position. Boundary points belong to the cell they are
    /// the low edge of (lower-left-closed ownership).
    pub fn pos_to_cell(&self, p: Vec2) -> Option<CellIndex> {
        let rel = p - self.origin;
        if rel.x < 0.0 || rel.y < 0.0 {
            return None;
        }
        let n = (rel.x / self.cell_edge).floor() as usize;
        let m = (rel.y / self.cell_edge).floor() as usize;
        let idx = CellIndex::new(m, n);
        self.in_range(idx).then_some(idx)
    }

    pub fn state(&self, idx: CellIndex) -> CellState {
        self.cells[self.flat(idx)]
    }

    pub fn is_free(&self, idx: CellIndex) -> bool {
        matches!(self.state(idx), CellState::Free)
    }

    pub fn is_obstacle(&self, idx: CellIndex) -> bool {
        matches!(self.state(idx), CellState::Obstacle)
    }

    pub fn occupant(&self, idx: CellIndex) -> Option<AgentId> {
        match self.state(idx) {
            CellState::Occupied(id) => Some(id),
            _ => None,
        }
    }

    /// Occupy a free cell. Cells carrying only a stale virtual mark may be
    /// taken over (marks are frame-scoped and cleared at the frame boundary).
    pub fn set_occupied(&mut self, idx: CellIndex, id: AgentId) -> Result<()> {
        let flat = self.flat(idx);
        match self.cells[flat] {
            CellState::Free | CellState::Virtual(_) => {
                self.cells[flat] = CellState::Occupied(id);
                Ok(())
            }
            other => Err(Error::runtime(
                0,
                format!("cell {idx} not free for {id}: {other:?}"),
            )),
        }
    }

    pub fn clear_occupied(&mut self, idx: CellIndex, id: AgentId) -> Result<()> {
        let flat = self.flat(idx);
        match self.cells[flat] {
            CellState::Occupied(found) if found == id => {
                self.cells[flat] = CellState::Free;
                Ok(())
            }
            other => Err(Error::runtime(
                0,
                format!("cell {idx} not occupied by {id}: {other:?}"),
            )),
        }
    }

    /// Mark a free cell as blocked by a virtual pedestrian for this frame.
    /// Returns whether the mark was placed.
    pub fn mark_virtual(&mut self, idx: CellIndex, id: AgentId) -> bool {
        let flat = self.flat(idx);
        if matches!(self.cells[flat], CellState::Free) {
            self.cells[flat] = CellState::Virtual(id);
            true
        } else {
            false
        }
    }

    pub fn clear_virtual_marks(&mut self) {
        for cell in &mut self.cells {
            if matches!(cell, CellState::Virtual(_)) {
                *cell = CellState::Free;
            }
        }
    }

    /// All cells whose center lies within `radius` of `center` (inclusive).
    pub fn cells_in_disk(&self, center: Vec2, radius: f64) -> Vec<CellIndex> {
        if radius < 0.0 {
            return Vec::new();
        }
        let lo = center - Vec2::new(radius, radius);
        let hi = center + Vec2::new(radius, radius);
        let n0 = (((lo.x - self.origin.x) / self.cell_edge).floor()).max(0.0) as usize;
        let m0 = (((lo.y - self.origin.y) / self.cell_edge).floor()).max(0.0) as usize;
        let n1 = ((((hi.x - self.origin.x) / self.cell_edge).ceil()) as isize)
            .clamp(0, self.cols as isize) as usize;
        let m1 = ((((hi.y - self.origin.y) / self.cell_edge).ceil()) as isize)
            .clamp(0, self.rows as isize) as usize;
        let r_sq = radius * radius;
        let mut out = Vec::new();
        for m in m0..m1 {
            for n in n0..n1 {
                let idx = CellIndex::new(m, n);
                if (self.cell_center(idx) - center).norm_sq() <= r_sq + 1e-12 {
                    out.push(idx);
                }
            }
        }
        out
    }

    /// Moore neighborhood (up to 8 cells) within grid range.
    pub fn neighbors8(&self, idx: CellIndex) -> impl Iterator<Item = CellIndex> + '_ {
        const OFFSETS: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        OFFSETS.iter().filter_map(move |&(dm, dn)| {
            let m = idx.m as isize + dm;
            let n = idx.n as isize + dn;
            if m >= 0 && n >= 0 {
                let c = CellIndex::new(m as usize, n as usize);
                self.in_range(c).then_some(c)
            } else {
                None
            }
        })
    }

    /// Connected component of `seed` within `mask` under 4-neighborhood,
    /// never entering obstacle cells. Occupied cells are traversable: the
    /// flood answers "reachable in principle", and pedestrians move.
    pub fn reachable_cells(
        &self,
        seed: CellIndex,
        mask: &HashSet<CellIndex>,
    ) -> Result<HashSet<CellIndex>> {
        if !mask.contains(&seed) {
            return Err(Error::runtime(0, format!("flood seed {seed} not in mask")));
        }
        let mut visited = HashSet::new();
        if self.is_obstacle(seed) {
            return Ok(visited);
        }
        let mut queue = std::collections::VecDeque::new();
        visited.insert(seed);
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            let (m, n) = (cur.m as isize, cur.n as isize);
            for (dm, dn) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (mm, nn) = (m + dm, n + dn);
                if mm < 0 || nn < 0 {
                    continue;
                }
                let next = CellIndex::new(mm as usize, nn as usize);
                if !self.in_range(next)
                    || visited.contains(&next)
                    || !mask.contains(&next)
                    || self.is_obstacle(next)
                {
                    continue;
                }
                visited.insert(next);
                queue.push_back(next);
            }
        }
        Ok(visited)
    }

    /// Every agent id appears in at most one cell.
    pub fn check_occupancy_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (flat, cell) in self.cells.iter().enumerate() {
            if let CellState::Occupied(id) = cell {
                if !seen.insert(*id) {
                    return Err(Error::runtime(
                        0,
                        format!("agent {id} occupies two cells (second: {})", self.unflat(flat)),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn iter_states(&self) -> impl Iterator<Item = (CellIndex, CellState)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(|(flat, &s)| (self.unflat(flat), s))
    }
}

fn is_axis_aligned_rect(poly: &Polygon) -> bool {
    let vs = poly.vertices();
    if vs.len() != 4 {
        return false;
    }
    let (min, max) = poly.bbox();
    vs.iter().all(|v| {
        (v.x == min.x || v.x == max.x) && (v.y == min.y || v.y == max.y)
    })
}

/// Cell fully inside the bounds polygon: all corners inside and no bounds
/// edge cutting through it.
fn cell_inside_bounds(cell: &Polygon, bounds: &Polygon) -> bool {
    if !cell.vertices().iter().all(|&v| bounds.contains(v)) {
        return false;
    }
    for (a, b) in bounds.edges() {
        for (c, d) in cell.edges() {
            if crate::geometry::segments_properly_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}
