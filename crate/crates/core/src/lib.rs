//! Unfitted finite elements on structured triangular meshes: cut-cell
//! geometry, cell aggregation, ghost-penalty and aggregated stabilisations,
//! Nitsche forms for Poisson and linear elasticity, and the experiment
//! drivers used to compare them.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod aggregation;
pub mod cond;
pub mod error;
pub mod experiment;
pub mod fe_space;
pub mod forms;
pub mod geometry;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod system;

pub use aggregation::{AggregateMap, GhostFacetSets};
pub use cond::Cond1;
pub use error::{Error, Result};
pub use experiment::{run_case, BenchRecord, GeometryKind, OutputFormat, RunConfig};
pub use fe_space::{ExtensionKind, ExtensionOperator, FESpace};
pub use forms::{ManufacturedProblem, Material, Method, MethodConfig, ProblemKind, UStar};
pub use geometry::{CellClassification, CellLabel, LevelSet, ShapeFamily};
pub use mesh::{BackgroundMesh, Point, Rect};
pub use sparse::{CsrMatrix, Factorization};
pub use system::{BoundaryMode, Discretization, ErrorReport, Solution, SparseSystem};
