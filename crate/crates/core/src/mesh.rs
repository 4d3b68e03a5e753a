//! Structured simplicial background mesh with full n-face incidence.
//!
//! The rectangle is split into an `n x n` grid of quads. Every quad is cut
//! along the diagonal running from its lower-left to its upper-right corner,
//! producing two counter-clockwise triangles:
//!
//! ```txt
//!   v01 ---- v11
//!    |  1  /  |
//!    |   /  0 |
//!   v00 ---- v10
//! ```
//!
//! Vertices are numbered x-fastest, quads likewise, and quad `q` owns cells
//! `2q` (lower-right) and `2q + 1` (upper-left). Edges are numbered by their
//! sorted vertex pair.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lo: Point,
    pub hi: Point,
}

impl Rect {
    pub fn new(lo: Point, hi: Point) -> Self {
        Rect { lo, hi }
    }

    /// Square `[lo, hi]^2`.
    pub fn square(lo: f64, hi: f64) -> Self {
        Rect { lo: [lo, lo], hi: [hi, hi] }
    }

    pub fn width(&self) -> f64 {
        self.hi[0] - self.lo[0]
    }

    pub fn height(&self) -> f64 {
        self.hi[1] - self.lo[1]
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// An n-face: vertex (0), edge (1) or cell (2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NFaceId {
    pub dim: u8,
    pub index: usize,
}

impl NFaceId {
    pub const fn vertex(index: usize) -> Self {
        NFaceId { dim: 0, index }
    }
    pub const fn edge(index: usize) -> Self {
        NFaceId { dim: 1, index }
    }
    pub const fn cell(index: usize) -> Self {
        NFaceId { dim: 2, index }
    }
}

/// Local edge `k` of a cell joins local vertices `LOCAL_EDGES[k]`.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

#[derive(Debug, Clone)]
pub struct BackgroundMesh {
    rect: Rect,
    n: usize,
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    cell_edges: Vec<[usize; 3]>,
    edge_cells: Vec<(usize, Option<usize>)>,
    vertex_cells: Vec<Vec<usize>>,
}

impl BackgroundMesh {
    /// Builds the structured triangulation of `rect` with `n` quads per side.
    pub fn structured(rect: Rect, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("mesh needs at least one cell per side"));
        }
        if !(rect.width() > 0.0 && rect.height() > 0.0) {
            return Err(Error::invalid(format!("degenerate box {rect:?}")));
        }
        let nv = n + 1;
        let dx = rect.width() / n as f64;
        let dy = rect.height() / n as f64;
        let mut vertices = Vec::with_capacity(nv * nv);
        for j in 0..nv {
            for i in 0..nv {
                // Pin the last line to the box corner to avoid round-off drift.
                let x = if i == n { rect.hi[0] } else { rect.lo[0] + i as f64 * dx };
                let y = if j == n { rect.hi[1] } else { rect.lo[1] + j as f64 * dy };
                vertices.push([x, y]);
            }
        }
        let vid = |i: usize, j: usize| j * nv + i;
        let mut cells = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                cells.push([v00, v10, v11]);
                cells.push([v00, v11, v01]);
            }
        }

        let mut edge_set: Vec<[usize; 2]> =
            cells.iter().flat_map(|c| LOCAL_EDGES.iter().map(move |&[a, b]| sorted_pair(c[a], c[b]))).collect();
        edge_set.sort_unstable();
        edge_set.dedup();
        let edge_index: HashMap<[usize; 2], usize> = edge_set.iter().enumerate().map(|(k, &e)| (e, k)).collect();

        let mut cell_edges = Vec::with_capacity(cells.len());
        let mut edge_cells: Vec<(usize, Option<usize>)> = vec![(usize::MAX, None); edge_set.len()];
        let mut vertex_cells = vec![Vec::new(); vertices.len()];
        for (c, verts) in cells.iter().enumerate() {
            let mut ce = [0; 3];
            for (k, &[a, b]) in LOCAL_EDGES.iter().enumerate() {
                let e = edge_index[&sorted_pair(verts[a], verts[b])];
                ce[k] = e;
                let slot = &mut edge_cells[e];
                if slot.0 == usize::MAX {
                    slot.0 = c;
                } else {
                    slot.1 = Some(c);
                }
            }
            cell_edges.push(ce);
            for &v in verts {
                vertex_cells[v].push(c);
            }
        }

        Ok(BackgroundMesh { rect, n, vertices, cells, edges: edge_set, cell_edges, edge_cells, vertex_cells })
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_nfaces(&self, dim: u8) -> usize {
        match dim {
            0 => self.num_vertices(),
            1 => self.num_edges(),
            2 => self.num_cells(),
            _ => 0,
        }
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cell_vertices(&self, cell: usize) -> [usize; 3] {
        self.cells[cell]
    }

    pub fn cell_points(&self, cell: usize) -> [Point; 3] {
        let [a, b, c] = self.cells[cell];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Edge ids of a cell, ordered like [`LOCAL_EDGES`].
    pub fn cell_edges(&self, cell: usize) -> [usize; 3] {
        self.cell_edges[cell]
    }

    pub fn edge_vertices(&self, edge: usize) -> [usize; 2] {
        self.edges[edge]
    }

    pub fn edge_cells(&self, edge: usize) -> (usize, Option<usize>) {
        self.edge_cells[edge]
    }

    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    /// Cells whose closure contains the given n-face.
    pub fn cells_around(&self, face: NFaceId) -> Vec<usize> {
        match face.dim {
            0 => self.vertex_cells[face.index].clone(),
            1 => {
                let (a, b) = self.edge_cells[face.index];
                std::iter::once(a).chain(b).collect()
            }
            _ => vec![face.index],
        }
    }

    pub fn is_boundary_edge(&self, edge: usize) -> bool {
        self.edge_cells[edge].1.is_none()
    }

    /// Closure of a cell: 3 vertices, 3 edges and the cell itself, sorted.
    pub fn cell_closure(&self, cell: usize) -> Result<Vec<NFaceId>> {
        if cell >= self.cells.len() {
            return Err(Error::invalid(format!("cell {cell} out of range")));
        }
        let mut out: Vec<NFaceId> = self.cells[cell].iter().map(|&v| NFaceId::vertex(v)).collect();
        out.extend(self.cell_edges[cell].iter().map(|&e| NFaceId::edge(e)));
        out.push(NFaceId::cell(cell));
        out.sort_unstable();
        Ok(out)
    }

    /// Cells sharing a facet; the second entry is `None` on the box boundary.
    pub fn facet_cells(&self, facet: NFaceId) -> Result<(usize, Option<usize>)> {
        if facet.dim != 1 {
            return Err(Error::invalid(format!("facet_cells expects an edge, got dim {}", facet.dim)));
        }
        self.edge_cells
            .get(facet.index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("edge {} out of range", facet.index)))
    }

    /// Longest edge of the cell.
    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let p = self.cell_points(cell);
        LOCAL_EDGES.iter().map(|&[a, b]| dist(p[a], p[b])).fold(0.0, f64::max)
    }

    /// `h = max_T h_T`.
    pub fn max_diameter(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_diameter(c)).fold(0.0, f64::max)
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let p = self.cell_points(cell);
        triangle_area(&p)
    }

    pub fn cell_inradius(&self, cell: usize) -> f64 {
        let p = self.cell_points(cell);
        let perimeter: f64 = LOCAL_EDGES.iter().map(|&[a, b]| dist(p[a], p[b])).sum();
        2.0 * triangle_area(&p) / perimeter
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        let [a, b] = self.edges[edge];
        dist(self.vertices[a], self.vertices[b])
    }

    /// Grid coordinates of the mesh lines along `axis`.
    pub fn grid_lines(&self, axis: usize) -> Vec<f64> {
        let nv = self.n + 1;
        (0..nv).map(|k| if axis == 0 { self.vertices[k][0] } else { self.vertices[k * nv][1] }).collect()
    }

    /// Plain-text dump: `vertices:` then `x y` lines, `cells:` then `v0 v1 v2` lines.
    pub fn dump(&self) -> String {
        let mut s = String::from("vertices:\n");
        for p in &self.vertices {
            let _ = writeln!(s, "{} {}", p[0], p[1]);
        }
        s.push_str("cells:\n");
        for c in &self.cells {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
        }
        s
    }
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Signed area, positive for counter-clockwise orientation.
pub(crate) fn signed_area(p: &[Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

pub(crate) fn triangle_area(p: &[Point; 3]) -> f64 {
    signed_area(p).abs()
}
