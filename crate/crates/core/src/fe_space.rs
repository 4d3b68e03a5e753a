//! Lagrangian P1/P2 spaces on the active mesh and the aggregate extension operator.

use crate::aggregation::{AggregateMap, NFaceAggregateOwner};
use crate::error::{Error, Result};
use crate::geometry::{CellClassification, CellLabel};
use crate::mesh::{dist, signed_area, BackgroundMesh, NFaceId, Point, LOCAL_EDGES};

/// Maximum number of nodes per cell (P2).
pub const MAX_LOCAL_NODES: usize = 6;

/// Affine triangle with barycentric gradients.
#[derive(Debug, Clone, Copy)]
pub struct TriangleGeom {
    pub points: [Point; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
}

impl TriangleGeom {
    pub fn new(points: [Point; 3]) -> Self {
        let [p0, p1, p2] = points;
        let det = signed_area(&points) * 2.0;
        let g1 = [(p2[1] - p0[1]) / det, -(p2[0] - p0[0]) / det];
        let g2 = [-(p1[1] - p0[1]) / det, (p1[0] - p0[0]) / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        TriangleGeom { points, area: 0.5 * det.abs(), grad_bary: [g0, g1, g2] }
    }

    pub fn barycentric(&self, x: Point) -> [f64; 3] {
        let d = [x[0] - self.points[0][0], x[1] - self.points[0][1]];
        let l1 = self.grad_bary[1][0] * d[0] + self.grad_bary[1][1] * d[1];
        let l2 = self.grad_bary[2][0] * d[0] + self.grad_bary[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }

    pub fn centroid(&self) -> Point {
        let p = &self.points;
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    pub fn diameter(&self) -> f64 {
        LOCAL_EDGES.iter().map(|&[a, b]| dist(self.points[a], self.points[b])).fold(0.0, f64::max)
    }

    /// Shape values and gradients at `x` (which may lie outside the triangle).
    pub fn shapes(&self, order: usize, x: Point) -> Shapes {
        shapes_from_bary(order, self.barycentric(x), &self.grad_bary)
    }
}

/// Local shape function values and gradients.
#[derive(Debug, Clone, Copy)]
pub struct Shapes {
    pub n: usize,
    pub val: [f64; MAX_LOCAL_NODES],
    pub grad: [[f64; 2]; MAX_LOCAL_NODES],
}

pub fn num_local_nodes(order: usize) -> usize {
    if order == 1 {
        3
    } else {
        6
    }
}

fn shapes_from_bary(order: usize, l: [f64; 3], g: &[[f64; 2]; 3]) -> Shapes {
    let mut s = Shapes { n: num_local_nodes(order), val: [0.0; MAX_LOCAL_NODES], grad: [[0.0; 2]; MAX_LOCAL_NODES] };
    if order == 1 {
        s.val[..3].copy_from_slice(&l);
        s.grad[..3].copy_from_slice(g);
        return s;
    }
    for i in 0..3 {
        s.val[i] = l[i] * (2.0 * l[i] - 1.0);
        let f = 4.0 * l[i] - 1.0;
        s.grad[i] = [f * g[i][0], f * g[i][1]];
    }
    for (k, &[i, j]) in LOCAL_EDGES.iter().enumerate() {
        s.val[3 + k] = 4.0 * l[i] * l[j];
        s.grad[3 + k] = [4.0 * (l[i] * g[j][0] + l[j] * g[i][0]), 4.0 * (l[i] * g[j][1] + l[j] * g[i][1])];
    }
    s
}

/// A Lagrange node: its owner n-face and location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub owner: NFaceId,
    pub x: Point,
}

/// Continuous Lagrange space over the active cells, node-blocked for vectors.
#[derive(Debug, Clone)]
pub struct FESpace {
    order: usize,
    ncomp: usize,
    nodes: Vec<Node>,
    /// Local node list per cell; empty for inactive cells.
    cell_nodes: Vec<Vec<usize>>,
    active: Vec<usize>,
}

impl FESpace {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_components(&self) -> usize {
        self.ncomp
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes.len() * self.ncomp
    }

    pub fn node(&self, node: usize) -> &Node {
        &self.nodes[node]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.ncomp + comp
    }

    pub fn dof_node(&self, dof: usize) -> usize {
        dof / self.ncomp
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    pub fn is_active(&self, cell: usize) -> bool {
        !self.cell_nodes[cell].is_empty()
    }

    /// Local-to-global node map of an active cell.
    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        &self.cell_nodes[cell]
    }

    /// Global DOFs of a cell, node-major.
    pub fn cell_dofs(&self, cell: usize) -> Vec<usize> {
        self.cell_nodes[cell].iter().flat_map(|&n| (0..self.ncomp).map(move |c| n * self.ncomp + c)).collect()
    }

    /// Nodal interpolant of `f`, one value per component.
    pub fn interpolate(&self, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        let mut v = vec![0.0; self.num_dofs()];
        for (i, n) in self.nodes.iter().enumerate() {
            let val = f(n.x);
            for c in 0..self.ncomp {
                v[i * self.ncomp + c] = val[c];
            }
        }
        v
    }
}

/// Builds the space of order `order` with `ncomp` components over `active`.
pub fn build_space(mesh: &BackgroundMesh, active: &[usize], order: usize, ncomp: usize) -> Result<FESpace> {
    if !(order == 1 || order == 2) {
        return Err(Error::invalid(format!("unsupported order {order}")));
    }
    if !(ncomp == 1 || ncomp == 2) {
        return Err(Error::invalid(format!("unsupported component count {ncomp}")));
    }
    if active.is_empty() {
        return Err(Error::invalid("no active cells"));
    }
    let mut active: Vec<usize> = active.to_vec();
    active.sort_unstable();
    active.dedup();
    if let Some(&c) = active.last().filter(|&&c| c >= mesh.num_cells()) {
        return Err(Error::invalid(format!("cell {c} out of range")));
    }
    let mut vertex_used = vec![false; mesh.num_vertices()];
    let mut edge_used = vec![false; mesh.num_edges()];
    for &c in &active {
        mesh.cell_vertices(c).iter().for_each(|&v| vertex_used[v] = true);
        mesh.cell_edges(c).iter().for_each(|&e| edge_used[e] = true);
    }
    let mut nodes = Vec::new();
    let mut vertex_node = vec![usize::MAX; mesh.num_vertices()];
    for v in (0..mesh.num_vertices()).filter(|&v| vertex_used[v]) {
        vertex_node[v] = nodes.len();
        nodes.push(Node { owner: NFaceId::vertex(v), x: mesh.vertex(v) });
    }
    let mut edge_node = vec![usize::MAX; mesh.num_edges()];
    if order == 2 {
        for e in (0..mesh.num_edges()).filter(|&e| edge_used[e]) {
            let [a, b] = mesh.edge_vertices(e);
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            edge_node[e] = nodes.len();
            nodes.push(Node { owner: NFaceId::edge(e), x: [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])] });
        }
    }
    let mut cell_nodes = vec![Vec::new(); mesh.num_cells()];
    for &c in &active {
        let mut local: Vec<usize> = mesh.cell_vertices(c).iter().map(|&v| vertex_node[v]).collect();
        if order == 2 {
            local.extend(mesh.cell_edges(c).iter().map(|&e| edge_node[e]));
        }
        cell_nodes[c] = local;
    }
    Ok(FESpace { order, ncomp, nodes, cell_nodes, active })
}

/// Well-posed / ill-posed flags per node; all components share the flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DofClassification {
    ill_posed: Vec<bool>,
}

impl DofClassification {
    pub fn is_ill_posed(&self, node: usize) -> bool {
        self.ill_posed[node]
    }

    pub fn ill_posed_nodes(&self) -> Vec<usize> {
        (0..self.ill_posed.len()).filter(|&i| self.ill_posed[i]).collect()
    }

    pub fn well_posed_nodes(&self) -> Vec<usize> {
        (0..self.ill_posed.len()).filter(|&i| !self.ill_posed[i]).collect()
    }

    pub fn num_ill_posed(&self) -> usize {
        self.ill_posed.iter().filter(|&&b| b).count()
    }

    /// Marks the given nodes well-posed (used for strongly fixed nodes).
    pub fn exclude(&mut self, nodes: impl IntoIterator<Item = usize>) {
        for n in nodes {
            self.ill_posed[n] = false;
        }
    }
}

/// A node is ill-posed when its owner lies in the closure of no interior cell.
pub fn classify_dofs(mesh: &BackgroundMesh, space: &FESpace, cls: &CellClassification) -> DofClassification {
    let ill_posed = space
        .nodes
        .iter()
        .map(|n| !mesh.cells_around(n.owner).into_iter().any(|c| cls.label(c) == CellLabel::In))
        .collect();
    DofClassification { ill_posed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensionKind {
    /// One constraint per ill-posed node.
    Continuous,
    /// One constraint per node of every cut cell, from its aggregate root.
    Discontinuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Node(usize),
    CellNode { cell: usize, local: usize },
}

/// `value(target) = Σ weight · value(node)`, applied per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub target: Target,
    pub root: usize,
    pub weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtensionDiagnostics {
    /// Largest `|x - centroid(root)| / h_root` over constrained nodes.
    pub max_extrapolation: f64,
    /// Targets lying outside the tenfold dilation of their root cell.
    pub suspicious: Vec<Target>,
}

#[derive(Debug, Clone)]
pub struct ExtensionOperator {
    kind: ExtensionKind,
    constraints: Vec<Constraint>,
    /// Constraint index per node (continuous) or first constraint per cell (discontinuous).
    lookup: Vec<Option<usize>>,
    pub diagnostics: ExtensionDiagnostics,
}

impl ExtensionOperator {
    pub fn kind(&self) -> ExtensionKind {
        self.kind
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Constraint for an ill-posed node (continuous variant).
    pub fn node_constraint(&self, node: usize) -> Option<&Constraint> {
        match self.kind {
            ExtensionKind::Continuous => self.lookup[node].map(|k| &self.constraints[k]),
            ExtensionKind::Discontinuous => None,
        }
    }

    /// Constraints for the local nodes of a cut cell (discontinuous variant).
    pub fn cell_constraints(&self, cell: usize) -> &[Constraint] {
        match (self.kind, self.lookup.get(cell).copied().flatten()) {
            (ExtensionKind::Discontinuous, Some(first)) => {
                let len = self.constraints[first..]
                    .iter()
                    .take_while(|c| matches!(c.target, Target::CellNode { cell: t, .. } if t == cell))
                    .count();
                &self.constraints[first..first + len]
            }
            _ => &[],
        }
    }

    /// Largest absolute row sum of the weights.
    pub fn max_row_abs_sum(&self) -> f64 {
        self.constraints.iter().map(|c| c.weights.iter().map(|w| w.1.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Root shape functions evaluated at `x`, keyed by global node.
pub fn root_weights(mesh: &BackgroundMesh, space: &FESpace, root: usize, x: Point) -> Vec<(usize, f64)> {
    let geom = TriangleGeom::new(mesh.cell_points(root));
    let s = geom.shapes(space.order, x);
    let max = s.val[..s.n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    space.cell_nodes[root]
        .iter()
        .zip(&s.val[..s.n])
        .filter(|(_, w)| w.abs() >= 1e-14 * max)
        .map(|(&n, &w)| (n, w))
        .collect()
}

fn record(diag: &mut ExtensionDiagnostics, geom: &TriangleGeom, x: Point, target: Target) {
    let d = dist(x, geom.centroid()) / geom.diameter();
    diag.max_extrapolation = diag.max_extrapolation.max(d);
    // Inside the tenfold dilation about the centroid iff every coordinate is >= -3.
    if geom.barycentric(x).iter().any(|&l| l < -3.0) {
        diag.suspicious.push(target);
    }
}

/// Continuous extension: each ill-posed node takes the root polynomial of its owner's aggregate.
pub fn build_extension(
    mesh: &BackgroundMesh,
    space: &FESpace,
    dofs: &DofClassification,
    aggs: &AggregateMap,
    owner: &NFaceAggregateOwner,
) -> Result<ExtensionOperator> {
    let mut constraints = Vec::new();
    let mut lookup = vec![None; space.num_nodes()];
    let mut diagnostics = ExtensionDiagnostics::default();
    for node in dofs.ill_posed_nodes() {
        let Node { owner: face, x } = space.nodes[node];
        let agg = owner
            .get(face)
            .ok_or_else(|| Error::InternalConsistency(format!("ill-posed node {node} on {face:?} has no aggregate")))?;
        let root = aggs.root(agg);
        let weights = root_weights(mesh, space, root, x);
        if let Some(&(bad, _)) = weights.iter().find(|(b, _)| dofs.is_ill_posed(*b)) {
            return Err(Error::InternalConsistency(format!("root {root} carries ill-posed node {bad}")));
        }
        record(&mut diagnostics, &TriangleGeom::new(mesh.cell_points(root)), x, Target::Node(node));
        lookup[node] = Some(constraints.len());
        constraints.push(Constraint { target: Target::Node(node), root, weights });
    }
    Ok(ExtensionOperator { kind: ExtensionKind::Continuous, constraints, lookup, diagnostics })
}

/// Cell-wise extension: every node of a cut cell takes its aggregate root's polynomial.
pub fn build_extension_dg(
    mesh: &BackgroundMesh,
    space: &FESpace,
    cls: &CellClassification,
    aggs: &AggregateMap,
) -> Result<ExtensionOperator> {
    let mut constraints = Vec::new();
    let mut lookup = vec![None; mesh.num_cells()];
    let mut diagnostics = ExtensionDiagnostics::default();
    for cell in cls.cut_cells() {
        let root = aggs
            .root_of(cell)
            .ok_or_else(|| Error::InternalConsistency(format!("cut cell {cell} is not aggregated")))?;
        let geom = TriangleGeom::new(mesh.cell_points(root));
        lookup[cell] = Some(constraints.len());
        for (local, &node) in space.cell_nodes[cell].iter().enumerate() {
            let x = space.nodes[node].x;
            let target = Target::CellNode { cell, local };
            record(&mut diagnostics, &geom, x, target);
            constraints.push(Constraint { target, root, weights: root_weights(mesh, space, root, x) });
        }
    }
    Ok(ExtensionOperator { kind: ExtensionKind::Discontinuous, constraints, lookup, diagnostics })
}

fn check_len(space: &FESpace, v: &[f64]) -> Result<()> {
    if v.len() != space.num_dofs() {
        return Err(Error::invalid(format!("vector has {} entries, space has {} DOFs", v.len(), space.num_dofs())));
    }
    Ok(())
}

fn combine(space: &FESpace, weights: &[(usize, f64)], v: &[f64], comp: usize) -> f64 {
    weights.iter().map(|&(n, w)| w * v[space.dof(n, comp)]).sum()
}

/// Overwrites ill-posed DOFs with their extension from well-posed values.
pub fn project_ag(space: &FESpace, ext: &ExtensionOperator, v: &[f64]) -> Result<Vec<f64>> {
    check_len(space, v)?;
    if ext.kind != ExtensionKind::Continuous {
        return Err(Error::invalid("project_ag needs the continuous extension"));
    }
    let mut out = v.to_vec();
    for c in &ext.constraints {
        let Target::Node(node) = c.target else { unreachable!() };
        for comp in 0..space.ncomp {
            out[space.dof(node, comp)] = combine(space, &c.weights, v, comp);
        }
    }
    Ok(out)
}

/// Cell-local DOF values: cut cells take the root interpolation, others keep `v`.
/// Inactive cells get an empty vector.
pub fn project_ag_dg(space: &FESpace, ext: &ExtensionOperator, v: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_len(space, v)?;
    if ext.kind != ExtensionKind::Discontinuous {
        return Err(Error::invalid("project_ag_dg needs the discontinuous extension"));
    }
    let mut out: Vec<Vec<f64>> = space
        .cell_nodes
        .iter()
        .enumerate()
        .map(
            |(cell, nodes)| {
                if nodes.is_empty() {
                    Vec::new()
                } else {
                    space.cell_dofs(cell).iter().map(|&d| v[d]).collect()
                }
            },
        )
        .collect();
    for c in &ext.constraints {
        let Target::CellNode { cell, local } = c.target else { unreachable!() };
        for comp in 0..space.ncomp {
            out[cell][local * space.ncomp + comp] = combine(space, &c.weights, v, comp);
        }
    }
    Ok(out)
}

/// Value and gradient per component of the FE function `v` at `x` in `cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub value: [f64; 2],
    pub grad: [[f64; 2]; 2],
}

/// Evaluates from local DOF values, node-major.
pub fn eval_local(order: usize, ncomp: usize, geom: &TriangleGeom, local: &[f64], x: Point) -> PointValue {
    let s = geom.shapes(order, x);
    let mut pv = PointValue { value: [0.0; 2], grad: [[0.0; 2]; 2] };
    for i in 0..s.n {
        for c in 0..ncomp {
            let u = local[i * ncomp + c];
            pv.value[c] += u * s.val[i];
            pv.grad[c][0] += u * s.grad[i][0];
            pv.grad[c][1] += u * s.grad[i][1];
        }
    }
    pv
}

pub fn eval_fe(mesh: &BackgroundMesh, space: &FESpace, v: &[f64], cell: usize, x: Point) -> Result<PointValue> {
    check_len(space, v)?;
    if cell >= mesh.num_cells() || !space.is_active(cell) {
        return Err(Error::invalid(format!("cell {cell} is not active")));
    }
    let geom = TriangleGeom::new(mesh.cell_points(cell));
    if geom.barycentric(x).iter().any(|&l| l < -1e-12) {
        return Err(Error::invalid(format!("point {x:?} lies outside cell {cell}")));
    }
    let local: Vec<f64> = space.cell_dofs(cell).iter().map(|&d| v[d]).collect();
    Ok(eval_local(space.order, space.ncomp, &geom, &local, x))
}
