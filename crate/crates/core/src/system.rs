//! Global assembly, constraint elimination, solve and error measurement.

use std::fmt;
use std::str::FromStr;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{build_aggregates, ghost_facets, nface_to_aggregate, AggregateMap, GhostFacetSets};
use crate::cond::{cond1, Cond1};
use crate::error::{Error, Result};
use crate::fe_space::{
    build_extension, build_extension_dg, build_space, classify_dofs, eval_local, DofClassification, ExtensionOperator,
    FESpace, TriangleGeom,
};
use crate::forms::{
    local_elasticity_nitsche, local_poisson_nitsche, nitsche_tau, stab_bgpi, stab_fgp, stab_wag_grad, stab_wag_l2,
    CellQuadrature, LocalMatrix, ManufacturedProblem, Method, MethodConfig, ProblemKind,
};
use crate::geometry::{classify_cells, CellClassification, LevelSet};
use crate::mesh::BackgroundMesh;
use crate::quadrature::{push_triangle_points, QuadPoint};
use crate::sparse::{CsrMatrix, Factorization};

/// How the boundary data is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Nitsche on the whole embedded boundary.
    Nitsche,
    /// Strong Dirichlet on the mesh lines `x = lo`, `y = lo`; Neumann on the embedded boundary.
    Mixed,
}

impl BoundaryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryMode::Nitsche => "nitsche",
            BoundaryMode::Mixed => "mixed",
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nitsche" => Ok(BoundaryMode::Nitsche),
            "mixed" => Ok(BoundaryMode::Mixed),
            _ => Err(Error::invalid(format!("unknown boundary mode '{s}'"))),
        }
    }
}

/// Everything geometric and algebraic that does not depend on the method.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: BackgroundMesh,
    pub cls: CellClassification,
    pub aggs: AggregateMap,
    pub ghost: GhostFacetSets,
    pub space: FESpace,
    pub dofs: DofClassification,
    pub ext: ExtensionOperator,
    pub ext_dg: ExtensionOperator,
    pub bc: BoundaryMode,
    /// Per node: fixed strongly.
    pub fixed: Vec<bool>,
}

impl Discretization {
    pub fn new(
        mesh: BackgroundMesh,
        ls: &LevelSet,
        eta0: f64,
        order: usize,
        ncomp: usize,
        bc: BoundaryMode,
    ) -> Result<Self> {
        let cls = classify_cells(&mesh, ls, eta0)?;
        let aggs = build_aggregates(&mesh, &cls)?;
        let ghost = ghost_facets(&mesh, &cls, &aggs);
        let owner = nface_to_aggregate(&mesh, &cls, &aggs)?;
        let space = build_space(&mesh, &cls.active_cells(), order, ncomp)?;
        let lo = mesh.rect().lo;
        let fixed: Vec<bool> =
            space.nodes().iter().map(|n| bc == BoundaryMode::Mixed && (n.x[0] == lo[0] || n.x[1] == lo[1])).collect();
        let mut dofs = classify_dofs(&mesh, &space, &cls);
        dofs.exclude((0..fixed.len()).filter(|&i| fixed[i]));
        let ext = build_extension(&mesh, &space, &dofs, &aggs, &owner)?;
        let ext_dg = build_extension_dg(&mesh, &space, &cls, &aggs)?;
        Ok(Discretization { mesh, cls, aggs, ghost, space, dofs, ext, ext_dg, bc, fixed })
    }

    pub fn num_fixed(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }
}

/// How one global DOF relates to the unknowns of the solved system.
#[derive(Debug, Clone, PartialEq)]
pub enum DofEntry {
    Free(usize),
    Fixed(f64),
    /// `sum w x_k + offset`.
    Combination {
        terms: Vec<(usize, f64)>,
        offset: f64,
    },
}

/// Map from full DOF vectors to the unknowns of the solved system.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    entries: Vec<DofEntry>,
    num_free: usize,
}

impl DofMap {
    /// Strongly fixed DOFs take `g`; with aggregation constraints the ill-posed DOFs are eliminated.
    pub fn new(disc: &Discretization, problem: &ManufacturedProblem, constrain: bool) -> Result<Self> {
        let space = &disc.space;
        let nc = space.num_components();
        let mut entries = Vec::with_capacity(space.num_dofs());
        let mut num_free = 0;
        for node in 0..space.num_nodes() {
            let x = space.node(node).x;
            for c in 0..nc {
                let e = if disc.fixed[node] {
                    DofEntry::Fixed(problem.g(x)[c])
                } else if constrain && disc.dofs.is_ill_posed(node) {
                    DofEntry::Combination { terms: Vec::new(), offset: 0.0 }
                } else {
                    num_free += 1;
                    DofEntry::Free(num_free - 1)
                };
                entries.push(e);
            }
        }
        if constrain {
            for con in disc.ext.constraints() {
                let crate::fe_space::Target::Node(node) = con.target else {
                    return Err(Error::InternalConsistency("expected a continuous extension".into()));
                };
                for c in 0..nc {
                    let mut terms = Vec::with_capacity(con.weights.len());
                    let mut offset = 0.0;
                    for &(b, w) in &con.weights {
                        match entries[space.dof(b, c)] {
                            DofEntry::Free(k) => terms.push((k, w)),
                            DofEntry::Fixed(v) => offset += w * v,
                            DofEntry::Combination { .. } => {
                                return Err(Error::InternalConsistency(format!(
                                    "node {node} is constrained to ill-posed node {b}"
                                )))
                            }
                        }
                    }
                    entries[space.dof(node, c)] = DofEntry::Combination { terms, offset };
                }
            }
        }
        Ok(DofMap { entries, num_free })
    }

    pub fn identity(n: usize) -> Self {
        DofMap { entries: (0..n).map(DofEntry::Free).collect(), num_free: n }
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    pub fn num_full(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, dof: usize) -> &DofEntry {
        &self.entries[dof]
    }

    pub fn is_identity(&self) -> bool {
        self.num_free == self.entries.len()
    }

    /// Row `dof` of the map as `(terms, offset)`.
    fn row(&self, dof: usize) -> (Vec<(usize, f64)>, f64) {
        match &self.entries[dof] {
            DofEntry::Free(k) => (vec![(*k, 1.0)], 0.0),
            DofEntry::Fixed(v) => (Vec::new(), *v),
            DofEntry::Combination { terms, offset } => (terms.clone(), *offset),
        }
    }

    /// Full DOF vector from the unknowns.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        (0..self.entries.len())
            .map(|d| {
                let (terms, offset) = self.row(d);
                offset + terms.iter().map(|&(k, w)| w * x[k]).sum::<f64>()
            })
            .collect()
    }

    /// Unknowns read off a full vector (free DOFs only).
    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.num_free];
        for (d, e) in self.entries.iter().enumerate() {
            if let DofEntry::Free(k) = e {
                x[*k] = u[d];
            }
        }
        x
    }

    /// `T^T A T` and `T^T (b - A c)`.
    pub fn reduce(&self, a: &CsrMatrix, b: &[f64]) -> (CsrMatrix, Vec<f64>) {
        if self.is_identity() {
            return (a.clone(), b.to_vec());
        }
        let rows: Vec<(Vec<(usize, f64)>, f64)> = (0..self.entries.len()).map(|d| self.row(d)).collect();
        let offsets: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ac = a.matvec(&offsets);
        let mut rhs = vec![0.0; self.num_free];
        let mut triplets = Vec::new();
        for i in 0..a.dim() {
            let ti = &rows[i].0;
            if ti.is_empty() {
                continue;
            }
            for &(k, w) in ti {
                rhs[k] += w * (b[i] - ac[i]);
            }
            for (j, v) in a.row(i) {
                for &(k, wi) in ti {
                    for &(l, wj) in &rows[j].0 {
                        triplets.push((k, l, wi * v * wj));
                    }
                }
            }
        }
        (CsrMatrix::from_triplets(self.num_free, triplets), rhs)
    }
}

/// The linear system as solved, plus its relation to the full DOF vector.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
}

impl SparseSystem {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

fn push_local(triplets: &mut Vec<(usize, usize, f64)>, local: &LocalMatrix, scale: f64) {
    let n = local.size();
    for i in 0..n {
        for j in 0..n {
            let v = local.data[i * n + j];
            if v != 0.0 {
                triplets.push((local.dofs[i], local.dofs[j], scale * v));
            }
        }
    }
}

fn bulk_degree(order: usize) -> usize {
    2 * order + 1
}

/// Nitsche operator `a_h` and load `b` on all active DOFs.
pub fn assemble_nitsche(
    disc: &Discretization,
    problem: &ManufacturedProblem,
    cfg: &MethodConfig,
) -> Result<(CsrMatrix, Vec<f64>)> {
    let space = &disc.space;
    if problem.num_components() != space.num_components() {
        return Err(Error::invalid("problem and space disagree on the number of components"));
    }
    let order = space.order();
    let locals: Vec<(Vec<usize>, crate::forms::LocalSystem)> = space
        .active_cells()
        .par_iter()
        .map(|&cell| {
            let geom = TriangleGeom::new(disc.mesh.cell_points(cell));
            let surface = disc.cls.surface_points(cell, 2 * order + 2);
            let (dirichlet, neumann) = match disc.bc {
                BoundaryMode::Nitsche => (surface, Vec::new()),
                BoundaryMode::Mixed => (Vec::new(), surface),
            };
            let quad =
                CellQuadrature { bulk: disc.cls.bulk_points(&disc.mesh, cell, bulk_degree(order)), dirichlet, neumann };
            let tau = nitsche_tau(disc.mesh.cell_diameter(cell), order, cfg.beta);
            let sys = match problem.kind {
                ProblemKind::Poisson => local_poisson_nitsche(&geom, order, &quad, tau, problem),
                ProblemKind::Elasticity => {
                    local_elasticity_nitsche(&geom, order, &quad, tau, &problem.material, problem)
                }
            };
            (space.cell_dofs(cell), sys)
        })
        .collect();
    let n = space.num_dofs();
    let mut b = vec![0.0; n];
    let mut triplets = Vec::new();
    for (dofs, sys) in &locals {
        let m = dofs.len();
        for i in 0..m {
            b[dofs[i]] += sys.rhs[i];
            for j in 0..m {
                triplets.push((dofs[i], dofs[j], sys.matrix[i * m + j]));
            }
        }
    }
    Ok((CsrMatrix::from_triplets(n, triplets), b))
}

/// Local stabilisation matrices of the method, in assembly order.
pub fn stabilisation_locals(disc: &Discretization, cfg: &MethodConfig) -> Result<Vec<LocalMatrix>> {
    let (mesh, space, aggs) = (&disc.mesh, &disc.space, &disc.aggs);
    let gamma = cfg.gamma;
    let per_agg = |f: &(dyn Fn(usize) -> LocalMatrix + Sync)| -> Vec<LocalMatrix> {
        (0..aggs.num_aggregates()).into_par_iter().map(f).collect()
    };
    Ok(match cfg.method {
        Method::None | Method::StrongAggregation => Vec::new(),
        Method::FacetGhostPenalty => {
            disc.ghost.cut.par_iter().map(|&f| stab_fgp(mesh, space, f, gamma)).collect::<Result<_>>()?
        }
        Method::AggregateGhostPenalty => {
            disc.ghost.aggregate.par_iter().map(|&f| stab_fgp(mesh, space, f, gamma)).collect::<Result<_>>()?
        }
        Method::BulkGhostPenalty => per_agg(&|a| stab_bgpi(mesh, space, &disc.ext_dg, aggs, a, gamma)),
        Method::WeakAggregationL2 => {
            per_agg(&|a| stab_wag_l2(mesh, &disc.cls, space, &disc.ext, aggs, a, gamma, cfg.ustar))
        }
        Method::WeakAggregationGrad => {
            per_agg(&|a| stab_wag_grad(mesh, &disc.cls, space, &disc.ext, aggs, a, gamma, cfg.ustar))
        }
    })
}

/// Assembled stabilisation `s_h` on all active DOFs.
pub fn assemble_stabilisation(disc: &Discretization, cfg: &MethodConfig) -> Result<CsrMatrix> {
    let mut triplets = Vec::new();
    for local in stabilisation_locals(disc, cfg)? {
        push_local(&mut triplets, &local, 1.0);
    }
    Ok(CsrMatrix::from_triplets(disc.space.num_dofs(), triplets))
}

fn add(a: &CsrMatrix, s: &CsrMatrix) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(a.nnz() + s.nnz());
    for m in [a, s] {
        for i in 0..m.dim() {
            triplets.extend(m.row(i).map(|(j, v)| (i, j, v)));
        }
    }
    CsrMatrix::from_triplets(a.dim(), triplets)
}

/// `a_h + s_h`, reduced by strong and aggregation constraints.
pub fn assemble(disc: &Discretization, problem: &ManufacturedProblem, cfg: &MethodConfig) -> Result<SparseSystem> {
    cfg.validate()?;
    let (a, b) = assemble_nitsche(disc, problem, cfg)?;
    let full = if cfg.method.uses_gamma() { add(&a, &assemble_stabilisation(disc, cfg)?) } else { a };
    let dof_map = DofMap::new(disc, problem, cfg.method == Method::StrongAggregation)?;
    if dof_map.num_free() == 0 {
        return Err(Error::invalid("no free degrees of freedom"));
    }
    let (matrix, rhs) = dof_map.reduce(&full, &b);
    Ok(SparseSystem { matrix, rhs, dof_map })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Unknowns of the solved system.
    pub reduced: Vec<f64>,
    /// Full DOF vector on the active space.
    pub full: Vec<f64>,
    /// `||K x - f|| / ||f||`.
    pub residual: f64,
}

pub fn factorize(system: &SparseSystem) -> Result<Factorization> {
    Factorization::new(&system.matrix)
}

pub fn solve_with(system: &SparseSystem, factor: &Factorization) -> Result<Solution> {
    let x = factor.solve(&system.rhs);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::SolverFailure(
            "non-finite solution; the factorisation is singular to working precision".into(),
        ));
    }
    let kx = system.matrix.matvec(&x);
    let r: f64 = kx.iter().zip(&system.rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let fnorm: f64 = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = if fnorm > 0.0 { r / fnorm } else { r };
    let full = system.dof_map.expand(&x);
    Ok(Solution { reduced: x, full, residual })
}

pub fn solve(system: &SparseSystem) -> Result<Solution> {
    solve_with(system, &factorize(system)?)
}

/// `cond1` of the solved matrix; factorisation breakdown gives `+inf`.
pub fn system_cond1(system: &SparseSystem, factor: Option<&Factorization>) -> Cond1 {
    match factor {
        Some(f) => cond1(&system.matrix, f),
        None => crate::cond::cond1_of(&system.matrix),
    }
}

/// Errors over Ω and the norms of the exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub err_l2: f64,
    pub err_h1: f64,
    pub exact_l2: f64,
    pub exact_h1: f64,
}

impl ErrorNorms {
    pub fn relative_l2(&self) -> f64 {
        self.err_l2 / self.exact_l2
    }

    pub fn relative_h1(&self) -> f64 {
        self.err_h1 / self.exact_h1
    }
}

/// Outcome of one solve as recorded by the bench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub err_l2: f64,
    pub err_h1: f64,
    pub dofs: usize,
    pub cond1: Cond1,
    pub residual: f64,
}

pub fn error_degree(order: usize) -> usize {
    (2 * (order + 1)).min(6)
}

/// `||u - u_h||` in L2 and full H1 over Ω.
pub fn error_norms(
    mesh: &BackgroundMesh,
    cls: &CellClassification,
    space: &FESpace,
    u_h: &[f64],
    exact: impl Fn([f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) + Sync,
) -> Result<ErrorNorms> {
    if u_h.len() != space.num_dofs() {
        return Err(Error::invalid(format!("vector has {} entries, space has {} DOFs", u_h.len(), space.num_dofs())));
    }
    let (order, nc) = (space.order(), space.num_components());
    let parts: Vec<[f64; 4]> = space
        .active_cells()
        .par_iter()
        .map(|&cell| {
            let geom = TriangleGeom::new(mesh.cell_points(cell));
            let local: Vec<f64> = space.cell_dofs(cell).iter().map(|&d| u_h[d]).collect();
            let mut acc = [0.0; 4];
            for q in cls.bulk_points(mesh, cell, error_degree(order)) {
                let pv = eval_local(order, nc, &geom, &local, q.x);
                let (u, g) = exact(q.x);
                for c in 0..nc {
                    let e = u[c] - pv.value[c];
                    acc[0] += q.w * e * e;
                    acc[2] += q.w * u[c] * u[c];
                    for k in 0..2 {
                        let ge = g[c][k] - pv.grad[c][k];
                        acc[1] += q.w * ge * ge;
                        acc[3] += q.w * g[c][k] * g[c][k];
                    }
                }
            }
            acc
        })
        .collect();
    let mut s = [0.0; 4];
    for p in parts {
        for k in 0..4 {
            s[k] += p[k];
        }
    }
    Ok(ErrorNorms {
        err_l2: s[0].sqrt(),
        err_h1: (s[0] + s[1]).sqrt(),
        exact_l2: s[2].sqrt(),
        exact_h1: (s[2] + s[3]).sqrt(),
    })
}

/// [`error_norms`] against a manufactured solution.
pub fn manufactured_errors(disc: &Discretization, problem: &ManufacturedProblem, u_h: &[f64]) -> Result<ErrorNorms> {
    error_norms(&disc.mesh, &disc.cls, &disc.space, u_h, |x| (problem.u(x), problem.grad(x)))
}

/// `∫ grad u : grad v` over the given cell points, all components.
fn gradient_gram(disc: &Discretization, points: impl Fn(usize) -> Vec<QuadPoint>) -> Mat<f64> {
    let space = &disc.space;
    let (order, nc) = (space.order(), space.num_components());
    let n = space.num_dofs();
    let mut g = Mat::<f64>::zeros(n, n);
    for &cell in space.active_cells() {
        let geom = TriangleGeom::new(disc.mesh.cell_points(cell));
        let nodes = space.cell_nodes(cell);
        for q in points(cell) {
            let s = geom.shapes(order, q.x);
            for (i, &a) in nodes.iter().enumerate() {
                for (j, &b) in nodes.iter().enumerate() {
                    let v = q.w * (s.grad[i][0] * s.grad[j][0] + s.grad[i][1] * s.grad[j][1]);
                    for c in 0..nc {
                        g[(space.dof(a, c), space.dof(b, c))] += v;
                    }
                }
            }
        }
    }
    g
}

fn dense(a: &CsrMatrix) -> Mat<f64> {
    a.to_dense()
}

/// Smallest eigenvalue of `(G_Ω + S) x = λ G_act x` modulo constants, densely.
///
/// For strong aggregation the forms are restricted to the constrained space.
pub fn extended_stability(disc: &Discretization, cfg: &MethodConfig) -> Result<f64> {
    if disc.num_fixed() > 0 {
        return Err(Error::invalid("the stability probe needs Nitsche boundary conditions"));
    }
    let space = &disc.space;
    let order = space.order();
    let g_omega = gradient_gram(disc, |c| disc.cls.bulk_points(&disc.mesh, c, 2 * order));
    let g_act = gradient_gram(disc, |c| {
        let mut pts = Vec::new();
        push_triangle_points(&disc.mesh.cell_points(c), 2 * order, &mut pts);
        pts
    });
    let mut lhs = g_omega;
    if cfg.method.uses_gamma() {
        lhs += dense(&assemble_stabilisation(disc, cfg)?);
    }
    // Basis: reduced unknowns, then sum-zero vectors per component.
    let n = space.num_dofs();
    let nc = space.num_components();
    let constrain = cfg.method == Method::StrongAggregation;
    let zero = ManufacturedProblem::with_degree(
        if nc == 1 { ProblemKind::Poisson } else { ProblemKind::Elasticity },
        0,
        Default::default(),
    );
    let map = DofMap::new(disc, &zero, constrain)?;
    let nr = map.num_free();
    let mut t = Mat::<f64>::zeros(n, nr);
    let mut comp_of = vec![0; nr];
    for d in 0..n {
        let (terms, _) = map.row(d);
        for (k, w) in terms {
            t[(d, k)] += w;
        }
        if let DofEntry::Free(k) = map.entry(d) {
            comp_of[*k] = d % nc;
        }
    }
    let mut cols = Vec::new();
    for c in 0..nc {
        let idx: Vec<usize> = (0..nr).filter(|&k| comp_of[k] == c).collect();
        if let Some((&last, rest)) = idx.split_last() {
            cols.extend(rest.iter().map(|&k| (k, last)));
        }
    }
    let mut q = Mat::<f64>::zeros(nr, cols.len());
    for (col, &(k, last)) in cols.iter().enumerate() {
        q[(k, col)] = 1.0;
        q[(last, col)] = -1.0;
    }
    let basis = &t * &q;
    let a = basis.transpose() * &lhs * &basis;
    let b = basis.transpose() * &g_act * &basis;
    let eig =
        b.self_adjoint_eigen(Side::Lower).map_err(|e| Error::SolverFailure(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let bmax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    if (0..s.nrows()).any(|i| s[i] <= 1e-14 * bmax) {
        return Err(Error::InternalConsistency("active gradient form is singular modulo constants".into()));
    }
    let mut w = eig.U().to_owned();
    for j in 0..w.ncols() {
        let f = 1.0 / s[j].sqrt();
        for i in 0..w.nrows() {
            w[(i, j)] *= f;
        }
    }
    let c = w.transpose() * &a * &w;
    let vals = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::SolverFailure(format!("eigensolver failed: {e:?}")))?;
    Ok(vals.first().copied().unwrap_or(f64::NAN))
}

/// `∫_Ω φ_i^2` per node (first component).
pub fn mass_diagonal(disc: &Discretization) -> Vec<f64> {
    let space = &disc.space;
    let order = space.order();
    let mut diag = vec![0.0; space.num_nodes()];
    for &cell in space.active_cells() {
        let geom = TriangleGeom::new(disc.mesh.cell_points(cell));
        for q in disc.cls.bulk_points(&disc.mesh, cell, 2 * order) {
            let s = geom.shapes(order, q.x);
            for (i, &node) in space.cell_nodes(cell).iter().enumerate() {
                diag[node] += q.w * s.val[i] * s.val[i];
            }
        }
    }
    diag
}

/// Solve, measure and condition one assembled case.
pub fn evaluate(
    disc: &Discretization,
    problem: &ManufacturedProblem,
    system: &SparseSystem,
) -> Result<(Solution, ErrorReport)> {
    let factor = factorize(system)?;
    let sol = solve_with(system, &factor)?;
    let norms = manufactured_errors(disc, problem, &sol.full)?;
    let report = ErrorReport {
        err_l2: norms.err_l2,
        err_h1: norms.err_h1,
        dofs: system.dim(),
        cond1: system_cond1(system, Some(&factor)),
        residual: sol.residual,
    };
    Ok((sol, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe_space::project_ag;
    use crate::forms::Material;
    use crate::mesh::Rect;

    fn disc(n: usize, ls: &LevelSet, order: usize, ncomp: usize, bc: BoundaryMode, rect: Rect) -> Discretization {
        Discretization::new(BackgroundMesh::structured(rect, n).unwrap(), ls, 1.0, order, ncomp, bc).unwrap()
    }

    fn box_disc(n: usize, order: usize) -> Discretization {
        disc(n, &LevelSet::square([0.0, 0.0], 0.83), order, 1, BoundaryMode::Nitsche, Rect::square(-1.21, 1.21))
    }

    #[test]
    fn identity_system_solves_to_rhs() {
        let sys =
            SparseSystem { matrix: CsrMatrix::identity(3), rhs: vec![1.0, 0.0, 0.0], dof_map: DofMap::identity(3) };
        let sol = solve(&sys).unwrap();
        assert_eq!(sol.full, vec![1.0, 0.0, 0.0]);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn all_interior_mesh_gives_body_fitted_system() {
        let d = disc(4, &LevelSet::Constant(-1.0), 1, 1, BoundaryMode::Nitsche, Rect::square(0.0, 1.0));
        let p = ManufacturedProblem::with_degree(ProblemKind::Poisson, 1, Material::default());
        let sys = assemble(&d, &p, &MethodConfig::new(Method::None, 1.0).unwrap()).unwrap();
        assert_eq!(sys.dim(), 25);
        // Pure Neumann Laplacian: rows sum to zero.
        for i in 0..25 {
            assert!(sys.matrix.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-14);
        }
        assert!((sys.matrix.get(12, 12) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn strong_aggregation_keeps_well_posed_dofs() {
        let d = box_disc(8, 1);
        let p = ManufacturedProblem::with_degree(ProblemKind::Poisson, 1, Material::default());
        let sys = assemble(&d, &p, &MethodConfig::new(Method::StrongAggregation, 1.0).unwrap()).unwrap();
        assert_eq!(sys.dim(), d.dofs.well_posed_nodes().len());
        let sol = solve(&sys).unwrap();
        assert_eq!(sys.dof_map.restrict(&sol.full), sol.reduced);
        assert_eq!(project_ag(&d.space, &d.ext, &sol.full).unwrap(), sol.full);
    }

    #[test]
    fn wag_matrix_splits_into_nitsche_plus_kernel_free_penalty() {
        let d = box_disc(8, 1);
        let p = ManufacturedProblem::with_degree(ProblemKind::Poisson, 2, Material::default());
        let cfg = MethodConfig::new(Method::WeakAggregationGrad, 1.0).unwrap();
        let full = assemble(&d, &p, &cfg).unwrap().matrix;
        let none = assemble(&d, &p, &MethodConfig::new(Method::None, 1.0).unwrap()).unwrap().matrix;
        let s = assemble_stabilisation(&d, &cfg).unwrap();
        let n = d.space.num_dofs();
        for i in 0..n {
            for (j, v) in full.row(i) {
                assert!((v - none.get(i, j) - s.get(i, j)).abs() <= 1e-12 * full.max_abs());
            }
        }
        for k in (0..n).step_by(7) {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let pe = project_ag(&d.space, &d.ext, &e).unwrap();
            let spe = s.matvec(&pe);
            assert!(spe.iter().map(|v| v.abs()).fold(0.0, f64::max) <= 1e-12);
        }
    }

    #[test]
    fn interpolant_errors_vanish_and_unit_error_matches_area() {
        let d = box_disc(6, 1);
        let lin = ManufacturedProblem::with_degree(ProblemKind::Poisson, 1, Material::default());
        let u = d.space.interpolate(|x| lin.u(x));
        let e = manufactured_errors(&d, &lin, &u).unwrap();
        assert!(e.err_l2 < 1e-10 && e.err_h1 < 1e-10);
        let zero = vec![0.0; d.space.num_dofs()];
        let e = error_norms(&d.mesh, &d.cls, &d.space, &zero, |_| ([1.0, 0.0], [[0.0; 2]; 2])).unwrap();
        assert!((e.err_l2 - d.cls.domain_area().sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mixed_mode_fixes_axis_nodes() {
        let d = disc(8, &LevelSet::square([0.0, 0.0], 0.83), 1, 2, BoundaryMode::Mixed, Rect::square(0.0, 1.21));
        assert!(d.num_fixed() > 0);
        let lo = d.mesh.rect().lo;
        for (i, n) in d.space.nodes().iter().enumerate() {
            assert_eq!(d.fixed[i], n.x[0] == lo[0] || n.x[1] == lo[1]);
            if d.fixed[i] {
                assert!(!d.dofs.is_ill_posed(i));
            }
        }
        let p = ManufacturedProblem::with_degree(ProblemKind::Elasticity, 1, Material::default());
        let sys = assemble(&d, &p, &MethodConfig::new(Method::StrongAggregation, 1.0).unwrap()).unwrap();
        let sol = solve(&sys).unwrap();
        let e = manufactured_errors(&d, &p, &sol.full).unwrap();
        assert!(e.relative_l2() < 1e-10, "{e:?}");
    }

    #[test]
    fn interior_probe_is_one() {
        let d = disc(4, &LevelSet::Constant(-1.0), 1, 1, BoundaryMode::Nitsche, Rect::square(0.0, 1.0));
        let lam = extended_stability(&d, &MethodConfig::new(Method::None, 1.0).unwrap()).unwrap();
        assert!((lam - 1.0).abs() < 1e-10, "{lam}");
    }

    #[test]
    fn assembly_is_deterministic() {
        let d = box_disc(10, 2);
        let p = ManufacturedProblem::with_degree(ProblemKind::Poisson, 3, Material::default());
        let cfg = MethodConfig::new(Method::BulkGhostPenalty, 3.0).unwrap();
        let a = assemble(&d, &p, &cfg).unwrap();
        let b = assemble(&d, &p, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.rhs, b.rhs);
    }
}
