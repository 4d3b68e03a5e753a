//! Nitsche forms, stabilisation kernels and manufactured solutions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregateMap, GhostFacetSets};
use crate::error::{Error, Result};
use crate::fe_space::{ExtensionOperator, FESpace, Target, TriangleGeom};
use crate::geometry::CellClassification;
use crate::mesh::{BackgroundMesh, Point, LOCAL_EDGES};
use crate::quadrature::{gauss_legendre, push_polygon_points, push_triangle_points, QuadPoint, SurfacePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "F-GP")]
    FacetGhostPenalty,
    #[serde(rename = "A-GP")]
    AggregateGhostPenalty,
    #[serde(rename = "B-GP-i")]
    BulkGhostPenalty,
    #[serde(rename = "W-Ag-L2")]
    WeakAggregationL2,
    #[serde(rename = "W-Ag-GRAD")]
    WeakAggregationGrad,
    #[serde(rename = "S-Ag")]
    StrongAggregation,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::None,
        Method::FacetGhostPenalty,
        Method::AggregateGhostPenalty,
        Method::BulkGhostPenalty,
        Method::WeakAggregationL2,
        Method::WeakAggregationGrad,
        Method::StrongAggregation,
    ];

    /// Methods that add a penalty term scaled by gamma.
    pub const WEAK: [Method; 5] = [
        Method::FacetGhostPenalty,
        Method::AggregateGhostPenalty,
        Method::BulkGhostPenalty,
        Method::WeakAggregationL2,
        Method::WeakAggregationGrad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "NONE",
            Method::FacetGhostPenalty => "F-GP",
            Method::AggregateGhostPenalty => "A-GP",
            Method::BulkGhostPenalty => "B-GP-i",
            Method::WeakAggregationL2 => "W-Ag-L2",
            Method::WeakAggregationGrad => "W-Ag-GRAD",
            Method::StrongAggregation => "S-Ag",
        }
    }

    pub fn uses_gamma(self) -> bool {
        Method::WEAK.contains(&self)
    }

    pub fn needs_aggregates(self) -> bool {
        !matches!(self, Method::None | Method::FacetGhostPenalty)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().to_ascii_uppercase() == key)
            .or(match key.as_str() {
                "W-AG-∇" | "W-AG-H1" => Some(Method::WeakAggregationGrad),
                "B-GP" => Some(Method::BulkGhostPenalty),
                _ => None,
            })
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Integration region of the weak aggregation penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UStar {
    /// Whole aggregate cells.
    #[default]
    #[serde(rename = "U")]
    Aggregate,
    /// The part of the aggregate outside the domain.
    #[serde(rename = "U-minus-Omega")]
    Outside,
}

impl UStar {
    pub fn as_str(self) -> &'static str {
        match self {
            UStar::Aggregate => "U",
            UStar::Outside => "U-minus-Omega",
        }
    }
}

impl FromStr for UStar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u" | "aggregate" => Ok(UStar::Aggregate),
            "u-minus-omega" | "u\\omega" | "outside" => Ok(UStar::Outside),
            _ => Err(Error::invalid(format!("unknown U* choice '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    pub gamma: f64,
    /// Nitsche coefficient before the `m^2` factor.
    pub beta: f64,
    pub ustar: UStar,
}

impl MethodConfig {
    pub const DEFAULT_BETA: f64 = 10.0;

    pub fn new(method: Method, gamma: f64) -> Result<Self> {
        let cfg = MethodConfig { method, gamma, beta: Self::DEFAULT_BETA, ustar: UStar::Aggregate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.uses_gamma() && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("{} needs a positive finite gamma, got {}", self.method, self.gamma)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid(format!("Nitsche coefficient must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Nitsche penalty `beta m^2 / h`.
pub fn nitsche_tau(h: f64, order: usize, beta: f64) -> f64 {
    beta * (order * order) as f64 / h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Poisson,
    Elasticity,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Poisson => "poisson",
            ProblemKind::Elasticity => "elasticity",
        }
    }

    pub fn num_components(self) -> usize {
        match self {
            ProblemKind::Poisson => 1,
            ProblemKind::Elasticity => 2,
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(ProblemKind::Poisson),
            "elasticity" => Ok(ProblemKind::Elasticity),
            _ => Err(Error::invalid(format!("unknown problem '{s}'"))),
        }
    }
}

/// Lamé parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub mu: f64,
    pub lambda: f64,
}

impl Material {
    pub fn from_poisson_ratio(mu: f64, nu: f64) -> Result<Self> {
        if !(mu > 0.0) || !(-1.0 < nu && nu < 0.5) {
            return Err(Error::invalid(format!("invalid material mu={mu}, nu={nu}")));
        }
        Ok(Material { mu, lambda: 2.0 * nu * mu / (1.0 - 2.0 * nu) })
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }
}

impl Default for Material {
    fn default() -> Self {
        Material { mu: 1.0, lambda: 1.5 }
    }
}

/// `u = (x + y)^p` (scalar) or `u = ((x + y)^p, (x + y)^p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedProblem {
    pub kind: ProblemKind,
    pub degree: u32,
    pub material: Material,
}

impl ManufacturedProblem {
    /// Solution of degree `order + 1`.
    pub fn new(kind: ProblemKind, order: usize, material: Material) -> Result<Self> {
        if !(order == 1 || order == 2) {
            return Err(Error::invalid(format!("unsupported order {order}")));
        }
        Ok(ManufacturedProblem { kind, degree: order as u32 + 1, material })
    }

    pub fn with_degree(kind: ProblemKind, degree: u32, material: Material) -> Self {
        ManufacturedProblem { kind, degree, material }
    }

    pub fn num_components(&self) -> usize {
        self.kind.num_components()
    }

    fn s_pow(&self, x: Point, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            (x[0] + x[1]).powi(k as i32)
        }
    }

    /// `w(s) = s^p`, `w'`, `w''` at `s = x + y`.
    fn profile(&self, x: Point) -> [f64; 3] {
        let p = i64::from(self.degree);
        let pf = p as f64;
        [self.s_pow(x, p), pf * self.s_pow(x, p - 1), pf * (pf - 1.0) * self.s_pow(x, p - 2)]
    }

    pub fn u(&self, x: Point) -> [f64; 2] {
        let w = self.profile(x)[0];
        match self.kind {
            ProblemKind::Poisson => [w, 0.0],
            ProblemKind::Elasticity => [w, w],
        }
    }

    /// `grad[c]` is the gradient of component `c`.
    pub fn grad(&self, x: Point) -> [[f64; 2]; 2] {
        let d = self.profile(x)[1];
        match self.kind {
            ProblemKind::Poisson => [[d, d], [0.0, 0.0]],
            ProblemKind::Elasticity => [[d, d], [d, d]],
        }
    }

    pub fn f(&self, x: Point) -> [f64; 2] {
        let dd = self.profile(x)[2];
        match self.kind {
            ProblemKind::Poisson => [-2.0 * dd, 0.0],
            ProblemKind::Elasticity => {
                let Material { mu, lambda } = self.material;
                let v = -(4.0 * mu + 2.0 * lambda) * dd;
                [v, v]
            }
        }
    }

    pub fn g(&self, x: Point) -> [f64; 2] {
        self.u(x)
    }

    /// Flux `n . grad u` or traction `sigma(u) n`.
    pub fn q(&self, x: Point, n: [f64; 2]) -> [f64; 2] {
        let g = self.grad(x);
        match self.kind {
            ProblemKind::Poisson => [g[0][0] * n[0] + g[0][1] * n[1], 0.0],
            ProblemKind::Elasticity => {
                let s = stress(&self.material, &g);
                [s[0][0] * n[0] + s[0][1] * n[1], s[1][0] * n[0] + s[1][1] * n[1]]
            }
        }
    }
}

/// `sigma = mu (grad u + grad u^T) + lambda div u I`, with `grad[c][k] = d u_c / d x_k`.
pub fn stress(mat: &Material, grad: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let div = grad[0][0] + grad[1][1];
    let mut s = [[0.0; 2]; 2];
    for c in 0..2 {
        for k in 0..2 {
            s[c][k] = mat.mu * (grad[c][k] + grad[k][c]) + if c == k { mat.lambda * div } else { 0.0 };
        }
    }
    s
}

/// Dense symmetric local matrix on a list of global DOFs (row-major).
///
/// Stabilisation matrices are Gram matrices `B^T B` of weighted residual
/// samples; `samples` keeps `B` (per component) so energies can be
/// evaluated as `|B v|^2` without cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMatrix {
    pub dofs: Vec<usize>,
    pub data: Vec<f64>,
    pub samples: Option<Samples>,
}

/// Sample matrix on a node patch, applied to each component separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub nodes: Vec<usize>,
    pub ncomp: usize,
    /// Row-major, `nodes.len()` columns.
    pub rows: Vec<f64>,
}

impl LocalMatrix {
    pub fn zeros(dofs: Vec<usize>) -> Self {
        let n = dofs.len();
        LocalMatrix { dofs, data: vec![0.0; n * n], samples: None }
    }

    pub fn size(&self) -> usize {
        self.dofs.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dofs.len() + j]
    }

    /// `v^T S v` for a global vector.
    pub fn energy(&self, v: &[f64]) -> f64 {
        if let Some(s) = &self.samples {
            let p = s.nodes.len();
            let mut e = 0.0;
            for c in 0..s.ncomp {
                for row in s.rows.chunks(p.max(1)) {
                    let r: f64 = row.iter().zip(&s.nodes).map(|(b, &n)| b * v[n * s.ncomp + c]).sum();
                    e += r * r;
                }
            }
            return e;
        }
        let n = self.size();
        let loc: Vec<f64> = self.dofs.iter().map(|&d| v[d]).collect();
        (0..n).map(|i| (0..n).map(|j| loc[i] * self.data[i * n + j] * loc[j]).sum::<f64>()).sum()
    }
}

/// Local matrix and load vector of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystem {
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Quadrature data of one cell.
#[derive(Debug, Clone, Default)]
pub struct CellQuadrature {
    pub bulk: Vec<QuadPoint>,
    pub dirichlet: Vec<SurfacePoint>,
    pub neumann: Vec<SurfacePoint>,
}

/// Poisson Nitsche contributions of one cell.
pub fn local_poisson_nitsche(
    geom: &TriangleGeom,
    order: usize,
    quad: &CellQuadrature,
    tau: f64,
    data: &ManufacturedProblem,
) -> LocalSystem {
    let nl = crate::fe_space::num_local_nodes(order);
    let mut a = vec![0.0; nl * nl];
    let mut b = vec![0.0; nl];
    for q in &quad.bulk {
        let s = geom.shapes(order, q.x);
        let f = data.f(q.x)[0];
        for i in 0..nl {
            b[i] += q.w * f * s.val[i];
            for j in 0..nl {
                a[i * nl + j] += q.w * (s.grad[i][0] * s.grad[j][0] + s.grad[i][1] * s.grad[j][1]);
            }
        }
    }
    for q in &quad.dirichlet {
        let s = geom.shapes(order, q.x);
        let dn: Vec<f64> = (0..nl).map(|i| s.grad[i][0] * q.normal[0] + s.grad[i][1] * q.normal[1]).collect();
        let g = data.g(q.x)[0];
        for i in 0..nl {
            b[i] += q.w * (tau * g * s.val[i] - dn[i] * g);
            for j in 0..nl {
                a[i * nl + j] += q.w * (tau * s.val[i] * s.val[j] - s.val[i] * dn[j] - s.val[j] * dn[i]);
            }
        }
    }
    for q in &quad.neumann {
        let s = geom.shapes(order, q.x);
        let flux = data.q(q.x, q.normal)[0];
        for i in 0..nl {
            b[i] += q.w * flux * s.val[i];
        }
    }
    LocalSystem { matrix: a, rhs: b }
}

/// Elasticity Nitsche contributions of one cell; DOFs node-major.
pub fn local_elasticity_nitsche(
    geom: &TriangleGeom,
    order: usize,
    quad: &CellQuadrature,
    tau: f64,
    mat: &Material,
    data: &ManufacturedProblem,
) -> LocalSystem {
    let nl = crate::fe_space::num_local_nodes(order);
    let n = 2 * nl;
    let (mu, lambda) = (mat.mu, mat.lambda);
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for q in &quad.bulk {
        let s = geom.shapes(order, q.x);
        let f = data.f(q.x);
        for i in 0..nl {
            let gi = s.grad[i];
            for c in 0..2 {
                b[2 * i + c] += q.w * f[c] * s.val[i];
                for j in 0..nl {
                    let gj = s.grad[j];
                    let dot = gi[0] * gj[0] + gi[1] * gj[1];
                    for d in 0..2 {
                        let mut v = mu * gj[c] * gi[d] + lambda * gj[d] * gi[c];
                        if c == d {
                            v += mu * dot;
                        }
                        a[(2 * i + c) * n + 2 * j + d] += q.w * v;
                    }
                }
            }
        }
    }
    // Traction of phi_j e_d in direction k.
    let traction = |grad: [f64; 2], nrm: [f64; 2], d: usize, k: usize| -> f64 {
        let dn = grad[0] * nrm[0] + grad[1] * nrm[1];
        mu * (if k == d { dn } else { 0.0 } + nrm[d] * grad[k]) + lambda * grad[d] * nrm[k]
    };
    for q in &quad.dirichlet {
        let s = geom.shapes(order, q.x);
        let g = data.g(q.x);
        for i in 0..nl {
            for c in 0..2 {
                let mut rhs = tau * g[c] * s.val[i];
                for k in 0..2 {
                    rhs -= traction(s.grad[i], q.normal, c, k) * g[k];
                }
                b[2 * i + c] += q.w * rhs;
                for j in 0..nl {
                    for d in 0..2 {
                        let mut v = -s.val[i] * traction(s.grad[j], q.normal, d, c)
                            - s.val[j] * traction(s.grad[i], q.normal, c, d);
                        if c == d {
                            v += tau * s.val[i] * s.val[j];
                        }
                        a[(2 * i + c) * n + 2 * j + d] += q.w * v;
                    }
                }
            }
        }
    }
    for q in &quad.neumann {
        let s = geom.shapes(order, q.x);
        let t = data.q(q.x, q.normal);
        for i in 0..nl {
            for c in 0..2 {
                b[2 * i + c] += q.w * t[c] * s.val[i];
            }
        }
    }
    LocalSystem { matrix: a, rhs: b }
}

/// `B^T B` expanded to all components of the patch nodes.
fn gram_matrix(space: &FESpace, nodes: Vec<usize>, rows: Vec<f64>) -> LocalMatrix {
    let nc = space.num_components();
    let p = nodes.len();
    let mut scalar = vec![0.0; p * p];
    for row in rows.chunks(p.max(1)) {
        for a in 0..p {
            if row[a] != 0.0 {
                for b in 0..p {
                    scalar[a * p + b] += row[a] * row[b];
                }
            }
        }
    }
    let dofs: Vec<usize> = nodes.iter().flat_map(|&nd| (0..nc).map(move |c| space.dof(nd, c))).collect();
    let n = p * nc;
    let mut data = vec![0.0; n * n];
    for a in 0..p {
        for b in 0..p {
            for c in 0..nc {
                data[(a * nc + c) * n + b * nc + c] = scalar[a * p + b];
            }
        }
    }
    LocalMatrix { dofs, data, samples: Some(Samples { nodes, ncomp: nc, rows }) }
}

fn node_index(patch: &mut Vec<usize>, node: usize) -> usize {
    match patch.iter().position(|&n| n == node) {
        Some(k) => k,
        None => {
            patch.push(node);
            patch.len() - 1
        }
    }
}

/// Facet ghost penalty on the two-cell patch of `facet`.
pub fn stab_fgp(mesh: &BackgroundMesh, space: &FESpace, facet: usize, gamma: f64) -> Result<LocalMatrix> {
    let (k0, k1) = mesh.edge_cells(facet);
    let Some(k1) = k1 else {
        return Err(Error::invalid(format!("facet {facet} lies on the mesh boundary")));
    };
    if !space.is_active(k0) || !space.is_active(k1) {
        return Err(Error::invalid(format!("facet {facet} is not shared by two active cells")));
    }
    let order = space.order();
    let [va, vb] = mesh.edge_vertices(facet);
    let (pa, pb) = (mesh.vertex(va), mesh.vertex(vb));
    let len = mesh.edge_length(facet);
    let g0 = TriangleGeom::new(mesh.cell_points(k0));
    let g1 = TriangleGeom::new(mesh.cell_points(k1));
    // Unit normal pointing out of k0.
    let mut nrm = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
    let c0 = g0.centroid();
    if (c0[0] - pa[0]) * nrm[0] + (c0[1] - pa[1]) * nrm[1] > 0.0 {
        nrm = [-nrm[0], -nrm[1]];
    }
    let h_f = 0.5 * (mesh.cell_diameter(k0) + mesh.cell_diameter(k1));

    let mut patch: Vec<usize> = space.cell_nodes(k0).to_vec();
    let idx1: Vec<usize> = space.cell_nodes(k1).iter().map(|&n| node_index(&mut patch, n)).collect();
    let p = patch.len();
    let mut rows = Vec::new();
    for &(t, w) in gauss_legendre(2) {
        let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
        let sw = (gamma * h_f * w * len).sqrt();
        let mut jump = vec![0.0; p];
        let s0 = g0.shapes(order, x);
        for i in 0..s0.n {
            jump[i] += sw * (s0.grad[i][0] * nrm[0] + s0.grad[i][1] * nrm[1]);
        }
        let s1 = g1.shapes(order, x);
        for (i, &k) in idx1.iter().enumerate() {
            jump[k] -= sw * (s1.grad[i][0] * nrm[0] + s1.grad[i][1] * nrm[1]);
        }
        rows.extend(jump);
    }
    if order == 2 {
        // Quadratics also jump in the second normal derivative, constant along the
        // facet; weighted by the squared Taylor factor 1/2.
        let sw = (0.25 * gamma * h_f.powi(3) * len).sqrt();
        let mut jump = vec![0.0; p];
        for (i, v) in second_normal_derivatives(&g0, nrm).into_iter().enumerate() {
            jump[i] += sw * v;
        }
        for (i, v) in second_normal_derivatives(&g1, nrm).into_iter().enumerate() {
            jump[idx1[i]] -= sw * v;
        }
        rows.extend(jump);
    }
    Ok(gram_matrix(space, patch, rows))
}

/// `n^T H n` for the six quadratic shape functions.
fn second_normal_derivatives(geom: &TriangleGeom, nrm: [f64; 2]) -> [f64; 6] {
    let d: Vec<f64> = geom.grad_bary.iter().map(|g| g[0] * nrm[0] + g[1] * nrm[1]).collect();
    let mut out = [0.0; 6];
    for i in 0..3 {
        out[i] = 4.0 * d[i] * d[i];
    }
    for (k, &[i, j]) in LOCAL_EDGES.iter().enumerate() {
        out[3 + k] = 8.0 * d[i] * d[j];
    }
    out
}

/// Same kernel as [`stab_fgp`], restricted to intra-aggregate facets.
pub fn stab_agp(
    mesh: &BackgroundMesh,
    space: &FESpace,
    ghost: &GhostFacetSets,
    facet: usize,
    gamma: f64,
) -> Result<LocalMatrix> {
    if ghost.aggregate.binary_search(&facet).is_err() {
        return Ok(LocalMatrix::zeros(Vec::new()));
    }
    stab_fgp(mesh, space, facet, gamma)
}

/// Per-cell residual map: local node `l` of `cell` carries `Σ_k coef · v[patch[k]]`.
struct ResidualBlock {
    cell: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

/// Samples `sqrt(scale w) r(x)` (or its gradient) of the residuals at `points`.
fn sample_residuals(
    order: usize,
    geom: &TriangleGeom,
    block: &ResidualBlock,
    points: &[QuadPoint],
    p: usize,
    scale: f64,
    gradient: bool,
    out: &mut Vec<f64>,
) {
    for q in points {
        let s = geom.shapes(order, q.x);
        let sw = (scale * q.w).sqrt();
        let ncols = if gradient { 2 } else { 1 };
        for dir in 0..ncols {
            let mut row = vec![0.0; p];
            for (l, terms) in block.rows.iter().enumerate() {
                let phi = if gradient { s.grad[l][dir] } else { s.val[l] };
                if phi == 0.0 {
                    continue;
                }
                for &(k, coef) in terms {
                    row[k] += sw * phi * coef;
                }
            }
            out.extend(row);
        }
    }
}

/// Bulk ghost penalty with root interpolation over the aggregate `agg`.
pub fn stab_bgpi(
    mesh: &BackgroundMesh,
    space: &FESpace,
    ext_dg: &ExtensionOperator,
    aggs: &AggregateMap,
    agg: usize,
    gamma: f64,
) -> LocalMatrix {
    let order = space.order();
    let scale = gamma / aggs.size(agg).powi(2);
    let root = aggs.root(agg);
    let mut patch: Vec<usize> = space.cell_nodes(root).to_vec();
    let mut blocks = Vec::new();
    for &cell in aggs.members(agg) {
        let constraints = ext_dg.cell_constraints(cell);
        if constraints.is_empty() {
            continue;
        }
        // Own node value minus the root interpolation at that node.
        let mut rows = Vec::new();
        for (l, &node) in space.cell_nodes(cell).iter().enumerate() {
            let mut row = vec![(node_index(&mut patch, node), 1.0)];
            let con = constraints.iter().find(|c| c.target == Target::CellNode { cell, local: l }).expect("constraint");
            for &(b, w) in &con.weights {
                row.push((node_index(&mut patch, b), -w));
            }
            rows.push(row);
        }
        blocks.push(ResidualBlock { cell, rows });
    }
    let p = patch.len();
    let mut samples = Vec::new();
    for block in &blocks {
        let geom = TriangleGeom::new(mesh.cell_points(block.cell));
        let mut pts = Vec::new();
        push_triangle_points(&geom.points, 2 * order, &mut pts);
        sample_residuals(order, &geom, block, &pts, p, scale, false, &mut samples);
    }
    gram_matrix(space, patch, samples)
}

fn region_points(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    cell: usize,
    ustar: UStar,
    degree: usize,
) -> Vec<QuadPoint> {
    let mut pts = Vec::new();
    match ustar {
        UStar::Aggregate => push_triangle_points(&mesh.cell_points(cell), degree, &mut pts),
        UStar::Outside => {
            for poly in &cls.cut(cell).outside {
                push_polygon_points(poly, degree, &mut pts);
            }
        }
    }
    pts
}

#[allow(clippy::too_many_arguments)]
fn stab_wag(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    space: &FESpace,
    ext: &ExtensionOperator,
    aggs: &AggregateMap,
    agg: usize,
    scale: f64,
    ustar: UStar,
    gradient: bool,
) -> LocalMatrix {
    let order = space.order();
    let mut patch: Vec<usize> = Vec::new();
    let mut blocks = Vec::new();
    for &cell in aggs.members(agg) {
        let nodes = space.cell_nodes(cell);
        if !nodes.iter().any(|&n| ext.node_constraint(n).is_some()) {
            continue;
        }
        // The residual v - P(v) vanishes at well-posed nodes.
        let mut rows = Vec::new();
        for &node in nodes {
            let mut row = Vec::new();
            if let Some(con) = ext.node_constraint(node) {
                row.push((node_index(&mut patch, node), 1.0));
                for &(b, w) in &con.weights {
                    row.push((node_index(&mut patch, b), -w));
                }
            }
            rows.push(row);
        }
        blocks.push(ResidualBlock { cell, rows });
    }
    let p = patch.len();
    let mut samples = Vec::new();
    for block in &blocks {
        let geom = TriangleGeom::new(mesh.cell_points(block.cell));
        let pts = region_points(mesh, cls, block.cell, ustar, 2 * order);
        sample_residuals(order, &geom, block, &pts, p, scale, gradient, &mut samples);
    }
    gram_matrix(space, patch, samples)
}

/// Weak aggregation penalty in the L2 product over the aggregate `agg`.
#[allow(clippy::too_many_arguments)]
pub fn stab_wag_l2(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    space: &FESpace,
    ext: &ExtensionOperator,
    aggs: &AggregateMap,
    agg: usize,
    gamma: f64,
    ustar: UStar,
) -> LocalMatrix {
    let scale = gamma / aggs.size(agg).powi(2);
    stab_wag(mesh, cls, space, ext, aggs, agg, scale, ustar, false)
}

/// Weak aggregation penalty in the H1 seminorm over the aggregate `agg`.
#[allow(clippy::too_many_arguments)]
pub fn stab_wag_grad(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    space: &FESpace,
    ext: &ExtensionOperator,
    aggs: &AggregateMap,
    agg: usize,
    gamma: f64,
    ustar: UStar,
) -> LocalMatrix {
    stab_wag(mesh, cls, space, ext, aggs, agg, gamma, ustar, true)
}
