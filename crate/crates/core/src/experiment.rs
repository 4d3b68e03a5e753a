//! Experiment configurations, the end-to-end pipeline, sweeps and record I/O.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forms::{ManufacturedProblem, Material, Method, MethodConfig, ProblemKind, UStar};
use crate::geometry::{place_sliver, LevelSet, ShapeFamily};
use crate::mesh::{BackgroundMesh, Rect};
use crate::system::{assemble, evaluate, BoundaryMode, Discretization, ErrorReport, Solution, SparseSystem};

/// Half-extent of the Nitsche-mode background box.
pub const BOX_HALF_EXTENT: f64 = 1.21;
/// Nominal half-width (box) or radius (circle) before sliver placement.
pub const NOMINAL_SIZE: f64 = 0.9;
/// Smallest supported cells per side.
pub const MIN_CELLS: usize = 4;

pub const DEFAULT_GAMMAS: [f64; 8] = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e4, 1e6, 1e8];
pub const DEFAULT_REFINEMENT: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_REFINEMENT_GAMMAS: [f64; 3] = [1.0, 1e2, 1e8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Box,
    Circle,
}

impl GeometryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeometryKind::Box => "box",
            GeometryKind::Circle => "circle",
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "box" | "square" => Ok(GeometryKind::Box),
            "circle" | "disc" => Ok(GeometryKind::Circle),
            _ => Err(Error::invalid(format!("unknown geometry '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub bc: BoundaryMode,
    pub geometry: GeometryKind,
    /// Target smallest volume fraction over active cells.
    pub sliver_eta: f64,
    pub method: Method,
    pub gamma: f64,
    pub order: usize,
    pub n: usize,
    pub eta0: f64,
    pub ustar: UStar,
    /// Degree of the manufactured solution; `order + 1` when unset.
    pub solution_degree: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemKind::Poisson,
            bc: BoundaryMode::Nitsche,
            geometry: GeometryKind::Box,
            sliver_eta: 1e-8,
            method: Method::StrongAggregation,
            gamma: 1.0,
            order: 1,
            n: 16,
            eta0: 1.0,
            ustar: UStar::Aggregate,
            solution_degree: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_CELLS {
            return Err(Error::invalid(format!("n = {} is below the minimum of {MIN_CELLS}", self.n)));
        }
        if !(self.order == 1 || self.order == 2) {
            return Err(Error::invalid(format!("unsupported order {}", self.order)));
        }
        if !(self.sliver_eta > 0.0 && self.sliver_eta < 0.5) {
            return Err(Error::invalid(format!("sliver eta {} outside (0, 0.5)", self.sliver_eta)));
        }
        if !(self.eta0 > 0.0 && self.eta0 <= 1.0) {
            return Err(Error::invalid(format!("eta0 {} outside (0, 1]", self.eta0)));
        }
        self.method_config().validate()
    }

    pub fn method_config(&self) -> MethodConfig {
        MethodConfig { method: self.method, gamma: self.gamma, beta: MethodConfig::DEFAULT_BETA, ustar: self.ustar }
    }

    pub fn problem(&self) -> Result<ManufacturedProblem> {
        match self.solution_degree {
            Some(p) => Ok(ManufacturedProblem::with_degree(self.problem, p, Material::default())),
            None => ManufacturedProblem::new(self.problem, self.order, Material::default()),
        }
    }

    pub fn background(&self) -> Rect {
        match self.bc {
            BoundaryMode::Nitsche => Rect::square(-BOX_HALF_EXTENT, BOX_HALF_EXTENT),
            BoundaryMode::Mixed => Rect::square(0.0, BOX_HALF_EXTENT),
        }
    }

    pub fn shape_family(&self) -> ShapeFamily {
        let center = [0.0, 0.0];
        match self.geometry {
            GeometryKind::Box => ShapeFamily::Square { center, nominal_half_width: NOMINAL_SIZE },
            GeometryKind::Circle => ShapeFamily::Circle { center, nominal_radius: NOMINAL_SIZE },
        }
    }

    pub fn with_method(self, method: Method, gamma: f64) -> Self {
        RunConfig { method, gamma, ..self }
    }

    pub fn with_n(self, n: usize) -> Self {
        RunConfig { n, ..self }
    }
}

/// Mesh and level set of a configuration.
pub fn build_geometry(config: &RunConfig) -> Result<(BackgroundMesh, LevelSet)> {
    config.validate()?;
    let mesh = BackgroundMesh::structured(config.background(), config.n)?;
    let ls = place_sliver(config.shape_family(), &mesh, config.sliver_eta)?;
    Ok((mesh, ls))
}

pub fn build_discretization(config: &RunConfig) -> Result<Discretization> {
    let (mesh, ls) = build_geometry(config)?;
    Discretization::new(mesh, &ls, config.eta0, config.order, config.problem.num_components(), config.bc)
}

/// One experiment outcome, flattened for CSV/JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub problem: ProblemKind,
    pub bc: BoundaryMode,
    pub geometry: GeometryKind,
    pub method: Method,
    pub gamma: f64,
    pub order: usize,
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    #[serde(with = "extended_float")]
    pub cond1: f64,
    pub cond1_is_estimate: bool,
    #[serde(with = "extended_float")]
    pub err_l2: f64,
    #[serde(with = "extended_float")]
    pub err_h1: f64,
    #[serde(with = "extended_float")]
    pub solver_residual: f64,
    pub wall_time_ms: f64,
}

pub const CSV_HEADER: &str =
    "problem,bc,geometry,method,gamma,order,n,h,dofs,cond1,cond1_is_estimate,err_l2,err_h1,solver_residual,wall_time_ms";

impl BenchRecord {
    fn new(config: &RunConfig, h: f64, report: &ErrorReport, wall_time_ms: f64) -> Self {
        BenchRecord {
            problem: config.problem,
            bc: config.bc,
            geometry: config.geometry,
            method: config.method,
            gamma: config.gamma,
            order: config.order,
            n: config.n,
            h,
            dofs: report.dofs,
            cond1: report.cond1.value,
            cond1_is_estimate: report.cond1.is_estimate,
            err_l2: report.err_l2,
            err_h1: report.err_h1,
            solver_residual: report.residual,
            wall_time_ms,
        }
    }

    /// Equality ignoring the wall time.
    pub fn same_outcome(&self, other: &BenchRecord) -> bool {
        BenchRecord { wall_time_ms: 0.0, ..self.clone() } == BenchRecord { wall_time_ms: 0.0, ..other.clone() }
    }
}

/// Non-finite values are written as the strings `inf`, `-inf` and `NaN`.
mod extended_float {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct Visitor;

    impl serde::de::Visitor<'_> for Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a number or one of inf, -inf, NaN")
        }

        fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<f64, E> {
            v.trim().parse().map_err(|_| E::custom(format!("invalid number '{v}'")))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        d.deserialize_any(Visitor)
    }
}

/// Full result of a case, for callers that need more than the record.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub record: BenchRecord,
    pub disc: Discretization,
    pub system: SparseSystem,
    pub solution: Solution,
}

/// Mesh, geometry, aggregation, space, assembly, solve and errors for one case.
pub fn run_case_detailed(config: &RunConfig) -> Result<CaseOutcome> {
    let start = Instant::now();
    let problem = config.problem()?;
    let disc = build_discretization(config)?;
    let system = assemble(&disc, &problem, &config.method_config())?;
    let (solution, report) = evaluate(&disc, &problem, &system)?;
    let h = disc.mesh.max_diameter();
    let record = BenchRecord::new(config, h, &report, start.elapsed().as_secs_f64() * 1e3);
    Ok(CaseOutcome { record, disc, system, solution })
}

pub fn run_case(config: &RunConfig) -> Result<BenchRecord> {
    run_case_detailed(config).map(|o| o.record)
}

/// One record per gamma; methods without gamma run once and are replicated.
pub fn sweep_gamma(config: &RunConfig, gammas: &[f64]) -> Result<Vec<BenchRecord>> {
    if gammas.is_empty() {
        return Err(Error::invalid("empty gamma list"));
    }
    if !config.method.uses_gamma() {
        let base = run_case(config)?;
        return Ok(gammas.iter().map(|&gamma| BenchRecord { gamma, ..base.clone() }).collect());
    }
    gammas.par_iter().map(|&g| run_case(&config.with_method(config.method, g))).collect()
}

/// Records for every `(gamma, n)` pair, gamma-major.
pub fn sweep_refinement(config: &RunConfig, ns: &[usize], gammas: &[f64]) -> Result<Vec<BenchRecord>> {
    if ns.is_empty() || gammas.is_empty() {
        return Err(Error::invalid("empty refinement or gamma list"));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("mesh sizes must be strictly increasing"));
    }
    if !config.method.uses_gamma() {
        let base: Vec<BenchRecord> = ns.par_iter().map(|&n| run_case(&config.with_n(n))).collect::<Result<_>>()?;
        return Ok(gammas
            .iter()
            .flat_map(|&gamma| base.iter().map(move |r| BenchRecord { gamma, ..r.clone() }))
            .collect());
    }
    let cases: Vec<RunConfig> =
        gammas.iter().flat_map(|&g| ns.iter().map(move |&n| config.with_method(config.method, g).with_n(n))).collect();
    cases.par_iter().map(run_case).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::invalid(format!("unknown format '{s}'"))),
        }
    }
}

pub fn write_records(records: &[BenchRecord], format: OutputFormat, out: impl Write) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, records)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_records(format: OutputFormat, input: impl Read) -> Result<Vec<BenchRecord>> {
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_reader(input);
            let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
            if header != CSV_HEADER {
                return Err(Error::Format(format!("unexpected CSV header '{header}'")));
            }
            r.deserialize().map(|row| row.map_err(Error::from)).collect()
        }
        OutputFormat::Json => Ok(serde_json::from_reader(input)?),
    }
}

pub fn emit(records: &[BenchRecord], format: OutputFormat, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_records(records, format, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn parse(format: OutputFormat, path: &Path) -> Result<Vec<BenchRecord>> {
    read_records(format, File::open(path)?)
}
