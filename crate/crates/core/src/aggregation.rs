//! Cell aggregation, ghost facet sets and n-face ownership.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{CellClassification, CellLabel};
use crate::mesh::{dist, BackgroundMesh, NFaceId};

/// Partition of the active cells into aggregates, one interior root each.
///
/// Aggregate ids follow ascending root cell index.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMap {
    /// Aggregate id per cell; `None` for outside cells.
    cell_aggregate: Vec<Option<usize>>,
    roots: Vec<usize>,
    members: Vec<Vec<usize>>,
    sizes: Vec<f64>,
    extents: Vec<f64>,
    /// BFS round at which each cell was assigned.
    rounds: Vec<Option<usize>>,
}

impl AggregateMap {
    pub fn num_aggregates(&self) -> usize {
        self.roots.len()
    }

    pub fn aggregate_of(&self, cell: usize) -> Option<usize> {
        self.cell_aggregate[cell]
    }

    pub fn root(&self, agg: usize) -> usize {
        self.roots[agg]
    }

    /// Root cell of the aggregate containing `cell`.
    pub fn root_of(&self, cell: usize) -> Option<usize> {
        self.cell_aggregate[cell].map(|a| self.roots[a])
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn members(&self, agg: usize) -> &[usize] {
        &self.members[agg]
    }

    /// Length scale `h_U` of the L2-type penalties: the shortest edge of the root cell.
    pub fn size(&self, agg: usize) -> f64 {
        self.sizes[agg]
    }

    /// Bounding-box diameter of the aggregate.
    pub fn extent(&self, agg: usize) -> f64 {
        self.extents[agg]
    }

    pub fn round(&self, cell: usize) -> Option<usize> {
        self.rounds[cell]
    }

    /// Largest extent over root diameter.
    pub fn max_size_ratio(&self, mesh: &BackgroundMesh) -> f64 {
        (0..self.num_aggregates()).map(|a| self.extents[a] / mesh.cell_diameter(self.roots[a])).fold(0.0, f64::max)
    }

    /// `aggregate id: root, member cells` lines.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (a, m) in self.members.iter().enumerate() {
            let cells: Vec<String> = m.iter().map(usize::to_string).collect();
            s.push_str(&format!("{a}: {}, {}\n", self.roots[a], cells.join(" ")));
        }
        s
    }
}

fn bounding_box_diameter(mesh: &BackgroundMesh, cells: &[usize]) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &c in cells {
        for p in mesh.cell_points(c) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
    }
    dist(lo, hi)
}

/// Breadth-first multi-source aggregation from the interior cells.
pub fn build_aggregates(mesh: &BackgroundMesh, cls: &CellClassification) -> Result<AggregateMap> {
    let ncells = mesh.num_cells();
    let roots = cls.interior_cells();
    if roots.is_empty() {
        return Err(Error::NoRoot);
    }
    let mut cell_aggregate = vec![None; ncells];
    let mut rounds = vec![None; ncells];
    for (a, &r) in roots.iter().enumerate() {
        cell_aggregate[r] = Some(a);
        rounds[r] = Some(0);
    }
    let mut frontier = roots.clone();
    let mut round = 0;
    while !frontier.is_empty() {
        round += 1;
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for &c in &frontier {
            let agg = cell_aggregate[c].expect("frontier cells are assigned");
            for e in mesh.cell_edges(c) {
                let (a, b) = mesh.edge_cells(e);
                let Some(b) = b else { continue };
                let nb = if a == c { b } else { a };
                if cls.label(nb) == CellLabel::Cut && cell_aggregate[nb].is_none() {
                    candidates.push((nb, agg));
                }
            }
        }
        candidates.sort_unstable();
        let mut next = Vec::new();
        for (cell, agg) in candidates {
            // Sorted by (cell, agg): the first hit carries the lowest aggregate id.
            if cell_aggregate[cell].is_none() {
                cell_aggregate[cell] = Some(agg);
                rounds[cell] = Some(round);
                next.push(cell);
            }
        }
        frontier = next;
    }
    let stranded = cls.cut_cells().iter().filter(|&&c| cell_aggregate[c].is_none()).count();
    if stranded > 0 {
        return Err(Error::DisconnectedActiveRegion(stranded));
    }
    let mut members = vec![Vec::new(); roots.len()];
    for (c, a) in cell_aggregate.iter().enumerate() {
        if let Some(a) = a {
            members[*a].push(c);
        }
    }
    let sizes = roots
        .iter()
        .map(|&r| mesh.cell_edges(r).map(|e| mesh.edge_length(e)).into_iter().fold(f64::INFINITY, f64::min))
        .collect();
    let extents = members.iter().map(|m| bounding_box_diameter(mesh, m)).collect();
    Ok(AggregateMap { cell_aggregate, roots, members, sizes, extents, rounds })
}

/// Ghost-penalty facet sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GhostFacetSets {
    /// Facets of cut cells shared by two active cells.
    pub cut: Vec<usize>,
    /// `cut` minus facets on aggregate boundaries.
    pub aggregate: Vec<usize>,
    /// n-faces whose active incident cells span two or more aggregates.
    pub aggregate_boundary: BTreeSet<NFaceId>,
}

fn spans_aggregates(mesh: &BackgroundMesh, aggs: &AggregateMap, face: NFaceId) -> bool {
    let mut ids = mesh.cells_around(face).into_iter().filter_map(|c| aggs.aggregate_of(c));
    match ids.next() {
        Some(first) => ids.any(|a| a != first),
        None => false,
    }
}

pub fn ghost_facets(mesh: &BackgroundMesh, cls: &CellClassification, aggs: &AggregateMap) -> GhostFacetSets {
    let mut cut = BTreeSet::new();
    for c in cls.cut_cells() {
        for e in mesh.cell_edges(c) {
            if let (a, Some(b)) = mesh.edge_cells(e) {
                if cls.is_active(a) && cls.is_active(b) {
                    cut.insert(e);
                }
            }
        }
    }
    let mut boundary = BTreeSet::new();
    for v in 0..mesh.num_vertices() {
        if spans_aggregates(mesh, aggs, NFaceId::vertex(v)) {
            boundary.insert(NFaceId::vertex(v));
        }
    }
    for e in 0..mesh.num_edges() {
        if spans_aggregates(mesh, aggs, NFaceId::edge(e)) {
            boundary.insert(NFaceId::edge(e));
        }
    }
    let aggregate = cut.iter().copied().filter(|&e| !boundary.contains(&NFaceId::edge(e))).collect();
    GhostFacetSets { cut: cut.into_iter().collect(), aggregate, aggregate_boundary: boundary }
}

/// Aggregate owning each ill-posed n-face (in the closure of a cut cell
/// but of no interior cell).
#[derive(Debug, Clone, PartialEq)]
pub struct NFaceAggregateOwner {
    vertices: Vec<Option<usize>>,
    edges: Vec<Option<usize>>,
    cells: Vec<Option<usize>>,
}

impl NFaceAggregateOwner {
    pub fn get(&self, face: NFaceId) -> Option<usize> {
        match face.dim {
            0 => self.vertices[face.index],
            1 => self.edges[face.index],
            _ => self.cells[face.index],
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.iter().chain(&self.edges).chain(&self.cells).filter(|o| o.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `true` if `face` lies in the closure of some cell labelled `label`.
pub fn in_closure_of(mesh: &BackgroundMesh, cls: &CellClassification, face: NFaceId, label: CellLabel) -> bool {
    mesh.cells_around(face).into_iter().any(|c| cls.label(c) == label)
}

pub fn nface_to_aggregate(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    aggs: &AggregateMap,
) -> Result<NFaceAggregateOwner> {
    let owner = |face: NFaceId| -> Result<Option<usize>> {
        let around = mesh.cells_around(face);
        if around.iter().any(|&c| cls.label(c) == CellLabel::In) {
            return Ok(None);
        }
        if !around.iter().any(|&c| cls.is_active(c)) {
            return Ok(None);
        }
        around
            .iter()
            .filter(|&&c| cls.label(c) == CellLabel::Cut)
            .filter_map(|&c| aggs.aggregate_of(c))
            .min()
            .map(Some)
            .ok_or_else(|| Error::InternalConsistency(format!("ill-posed {face:?} has no aggregated cut cell")))
    };
    let vertices = (0..mesh.num_vertices()).map(|v| owner(NFaceId::vertex(v))).collect::<Result<_>>()?;
    let edges = (0..mesh.num_edges()).map(|e| owner(NFaceId::edge(e))).collect::<Result<_>>()?;
    let cells = (0..mesh.num_cells()).map(|c| owner(NFaceId::cell(c))).collect::<Result<_>>()?;
    Ok(NFaceAggregateOwner { vertices, edges, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_cells, LevelSet};
    use crate::mesh::Rect;

    fn setup(n: usize, ls: LevelSet) -> (BackgroundMesh, CellClassification) {
        let m = BackgroundMesh::structured(Rect::square(0.0, 1.0), n).unwrap();
        let c = classify_cells(&m, &ls, 1.0).unwrap();
        (m, c)
    }

    #[test]
    fn no_cut_cells_gives_singletons() {
        let (m, c) = setup(3, LevelSet::Constant(-1.0));
        let a = build_aggregates(&m, &c).unwrap();
        assert_eq!(a.num_aggregates(), m.num_cells());
        assert!((0..a.num_aggregates()).all(|k| a.members(k) == [a.root(k)]));
        for k in 0..m.num_cells() {
            let agg = a.aggregate_of(k).unwrap();
            assert!((a.extent(agg) - m.cell_diameter(k)).abs() < 1e-15);
            assert!((a.size(agg) - 1.0 / 3.0).abs() < 1e-15);
        }
        let g = ghost_facets(&m, &c, &a);
        assert!(g.cut.is_empty() && g.aggregate.is_empty());
        assert!(nface_to_aggregate(&m, &c, &a).unwrap().is_empty());
    }

    #[test]
    fn empty_interior_has_no_root() {
        let (m, c) = setup(1, LevelSet::half_plane([1.0, 0.0], 0.5));
        assert!(matches!(build_aggregates(&m, &c), Err(Error::NoRoot)));
    }

    #[test]
    fn single_column_of_cut_cells() {
        // x < 0.6 on the 4x4 unit mesh: columns 0 and 1 interior, column 2 cut.
        let (m, c) = setup(4, LevelSet::half_plane([1.0, 0.0], 0.6));
        let a = build_aggregates(&m, &c).unwrap();
        let cut = c.cut_cells();
        assert_eq!(cut.len(), 8);
        for &cell in &cut {
            let quad = cell / 2;
            assert_eq!(quad % 4, 2);
            let agg = a.aggregate_of(cell).unwrap();
            assert!(a.members(agg).len() <= 4);
            if cell % 2 == 1 {
                // Upper-left triangles share their left facet with the interior column.
                assert_eq!(a.root(agg), cell - 3);
                assert_eq!(a.round(cell), Some(1));
            } else {
                // Lower-right triangles see their own partner and the cut cell
                // below; the lower aggregate id wins.
                assert_eq!(a.round(cell), Some(2));
                let expect = if quad < 4 { cell + 1 } else { cell - 7 };
                assert_eq!(a.aggregate_of(cell), a.aggregate_of(expect));
            }
        }
        assert!(a.max_size_ratio(&m) <= 4.0);
        for k in 0..a.num_aggregates() {
            assert!(a.extent(k) >= m.cell_diameter(a.root(k)) - 1e-15);
            assert!((a.size(k) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn disconnected_cut_cells_are_reported() {
        let m = BackgroundMesh::structured(Rect::square(0.0, 1.0), 3).unwrap();
        let mut labels = vec![CellLabel::Out; m.num_cells()];
        labels[0] = CellLabel::In;
        labels[1] = CellLabel::Cut;
        labels[16] = CellLabel::Cut;
        let c = CellClassification::from_labels(labels);
        assert!(matches!(build_aggregates(&m, &c), Err(Error::DisconnectedActiveRegion(1))));
    }

    #[test]
    fn two_cell_aggregate_ghost_sets() {
        let (m, c) = setup(2, LevelSet::half_plane([1.0, 0.0], 0.75));
        let a = build_aggregates(&m, &c).unwrap();
        let g = ghost_facets(&m, &c, &a);
        assert!(g.aggregate.iter().all(|e| g.cut.contains(e)));
        for &cell in &c.cut_cells() {
            let agg = a.aggregate_of(cell).unwrap();
            for e in m.cell_edges(cell) {
                let (p, q) = m.edge_cells(e);
                if let Some(q) = q {
                    let other = if p == cell { q } else { p };
                    if a.aggregate_of(other) == Some(agg) {
                        assert!(g.aggregate.contains(&e));
                    } else if c.is_active(other) {
                        assert!(g.cut.contains(&e) && !g.aggregate.contains(&e));
                    }
                }
            }
        }
    }

    #[test]
    fn owner_takes_lowest_aggregate() {
        let (m, c) = setup(4, LevelSet::half_plane([1.0, 0.0], 0.6));
        let a = build_aggregates(&m, &c).unwrap();
        let own = nface_to_aggregate(&m, &c, &a).unwrap();
        // Vertices on x = 0.75 are ill-posed; each goes to the lowest adjacent aggregate.
        for v in 0..m.num_vertices() {
            let face = NFaceId::vertex(v);
            let p = m.vertex(v);
            if (p[0] - 0.75).abs() < 1e-12 {
                let expect = m.cells_around(face).into_iter().filter_map(|k| a.aggregate_of(k)).min();
                assert_eq!(own.get(face), expect);
            } else if p[0] < 0.6 {
                assert_eq!(own.get(face), None);
            }
        }
    }
}
