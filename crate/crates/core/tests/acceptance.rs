//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 2 6`. Failing criteria
//! are reported but only fail the process when `ACCEPTANCE_STRICT=1` is set.

use std::process::ExitCode;
use std::time::Instant;

use faer::Side;
use rayon::prelude::*;
use unfitted_core::experiment::{
    build_discretization, loglog_slope, run_case, run_case_detailed, sweep_gamma, BenchRecord, RunConfig,
    DEFAULT_GAMMAS, DEFAULT_REFINEMENT,
};
use unfitted_core::fe_space::{project_ag, project_ag_dg, ExtensionOperator};
use unfitted_core::forms::{Method, MethodConfig, ProblemKind};
use unfitted_core::system::{assemble_stabilisation, error_norms, extended_stability, BoundaryMode, Discretization};
use unfitted_core::Result;

const BENIGN_ETA: f64 = 1e-2;
const SLIVER_ETA: f64 = 1e-8;

struct Check {
    pass: bool,
    detail: String,
}

/// Collects sub-checks; the criterion passes when all of them do.
#[derive(Default)]
struct Report {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Report {
    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn error(&mut self, what: &str, e: unfitted_core::Error) {
        self.failures.push(format!("{what}: {e}"));
    }

    fn finish(self) -> Check {
        if self.failures.is_empty() {
            let n = self.notes.len();
            let shown: Vec<&str> = self.notes.iter().take(3).map(|s| s.as_str()).collect();
            Check { pass: true, detail: format!("{n} checks; {}", shown.join("; ")) }
        } else {
            Check { pass: false, detail: self.failures.join("; ") }
        }
    }
}

fn base(order: usize) -> RunConfig {
    RunConfig { order, sliver_eta: SLIVER_ETA, ..Default::default() }
}

fn runs(configs: &[RunConfig]) -> Vec<Result<BenchRecord>> {
    configs.par_iter().map(run_case).collect()
}

/// Orders (negative slopes against h) of `err_l2` and `err_h1`.
fn orders(records: &[BenchRecord]) -> (f64, f64) {
    let h: Vec<f64> = records.iter().map(|r| r.h).collect();
    let l2: Vec<f64> = records.iter().map(|r| r.err_l2).collect();
    let h1: Vec<f64> = records.iter().map(|r| r.err_h1).collect();
    (loglog_slope(&h, &l2), loglog_slope(&h, &h1))
}

fn refinement(config: RunConfig, ns: &[usize]) -> Result<Vec<BenchRecord>> {
    let cfgs: Vec<RunConfig> = ns.iter().map(|&n| config.with_n(n)).collect();
    runs(&cfgs).into_iter().collect()
}

fn patch_test(report: &mut Report, problem: ProblemKind, bc: BoundaryMode) {
    let mut cases = Vec::new();
    for order in [1, 2] {
        for method in Method::ALL {
            cases.push(RunConfig {
                problem,
                bc,
                solution_degree: Some(order as u32),
                n: 12,
                ..base(order).with_method(method, 1.0)
            });
        }
    }
    let outcomes: Vec<_> = cases.par_iter().map(|c| (c, run_case_detailed(c))).collect();
    for (c, out) in outcomes {
        let tag = format!("{} m={}", c.method, c.order);
        match out {
            Ok(o) => {
                let p = c.problem().unwrap();
                let norms = unfitted_core::system::manufactured_errors(&o.disc, &p, &o.solution.full).unwrap();
                let rel = norms.relative_l2();
                report.expect(rel <= 1e-8, format!("{tag} rel L2 {rel:.1e}"));
            }
            Err(e) => report.error(&tag, e),
        }
    }
}

fn criterion_1() -> Check {
    let mut r = Report::default();
    patch_test(&mut r, ProblemKind::Poisson, BoundaryMode::Nitsche);
    r.finish()
}

fn criterion_2() -> Check {
    let mut r = Report::default();
    let mut series = Vec::new();
    for method in [Method::StrongAggregation, Method::WeakAggregationL2, Method::WeakAggregationGrad] {
        for gamma in [1.0, 1e2, 1e8] {
            series.push((base(1).with_method(method, gamma), true));
        }
    }
    for method in [Method::FacetGhostPenalty, Method::AggregateGhostPenalty, Method::BulkGhostPenalty] {
        series.push((base(1).with_method(method, 1.0), true));
    }
    for method in [Method::StrongAggregation, Method::WeakAggregationL2, Method::WeakAggregationGrad] {
        series.push((base(2).with_method(method, 1.0), false));
    }
    let results: Vec<_> = series.par_iter().map(|(c, m1)| (c, *m1, refinement(*c, &DEFAULT_REFINEMENT))).collect();
    for (c, m1, res) in results {
        let tag = format!("{} m={} gamma={:e}", c.method, c.order, c.gamma);
        match res {
            Ok(recs) => {
                let (l2, h1) = orders(&recs);
                if m1 {
                    r.expect((1.8..=2.3).contains(&l2), format!("{tag} L2 order {l2:.2}"));
                    r.expect((0.85..=1.3).contains(&h1), format!("{tag} H1 order {h1:.2}"));
                } else {
                    r.expect((2.7..=3.3).contains(&l2), format!("{tag} L2 order {l2:.2}"));
                }
            }
            Err(e) => r.error(&tag, e),
        }
    }
    r.finish()
}

fn criterion_3() -> Check {
    let mut r = Report::default();
    let methods =
        [Method::StrongAggregation, Method::FacetGhostPenalty, Method::WeakAggregationL2, Method::WeakAggregationGrad];
    let cfgs: Vec<RunConfig> = methods.iter().map(|&m| base(1).with_method(m, 1e4).with_n(20)).collect();
    match runs(&cfgs).into_iter().collect::<Result<Vec<_>>>() {
        Ok(recs) => {
            let sag = recs[0].err_h1;
            let fgp = recs[1].err_h1;
            r.expect(fgp >= 10.0 * sag, format!("F-GP/S-Ag H1 ratio {:.1}", fgp / sag));
            for rec in &recs[2..] {
                let rel = (rec.err_h1 - sag).abs() / sag;
                r.expect(rel <= 0.05, format!("{} H1 vs S-Ag {:.2}%", rec.method, 100.0 * rel));
            }
        }
        Err(e) => r.error("gamma=1e4 runs", e),
    }
    match refinement(base(1).with_method(Method::FacetGhostPenalty, 1e8), &DEFAULT_REFINEMENT) {
        Ok(recs) => {
            let (l2, _) = orders(&recs);
            r.expect(l2 <= 1.0, format!("F-GP gamma=1e8 L2 order {l2:.2}"));
        }
        Err(e) => r.error("F-GP gamma=1e8 refinement", e),
    }
    r.finish()
}

fn criterion_4() -> Check {
    let mut r = Report::default();
    for n in [8, 16, 32] {
        let sag = run_case_detailed(&base(1).with_method(Method::StrongAggregation, 1.0).with_n(n));
        let wag = run_case_detailed(&base(1).with_method(Method::WeakAggregationGrad, 1e6).with_n(n));
        match (sag, wag) {
            (Ok(s), Ok(w)) => {
                let d: Vec<f64> = w.solution.full.iter().zip(&s.solution.full).map(|(a, b)| a - b).collect();
                let zero = |_x: [f64; 2]| ([0.0; 2], [[0.0; 2]; 2]);
                let diff = error_norms(&s.disc.mesh, &s.disc.cls, &s.disc.space, &d, zero).unwrap().err_h1;
                let norm =
                    error_norms(&s.disc.mesh, &s.disc.cls, &s.disc.space, &s.solution.full, zero).unwrap().err_h1;
                let rel = diff / norm;
                r.expect(rel <= 1e-3, format!("n={n} relative H1 difference {rel:.1e}"));
            }
            (Err(e), _) | (_, Err(e)) => r.error(&format!("n={n}"), e),
        }
    }
    r.finish()
}

fn criterion_5() -> Check {
    let mut r = Report::default();
    let mut methods = vec![Method::StrongAggregation];
    methods.extend(Method::WEAK);
    let results: Vec<_> =
        methods.par_iter().map(|&m| (m, refinement(base(1).with_method(m, 1.0), &DEFAULT_REFINEMENT))).collect();
    for (m, res) in results {
        match res {
            Ok(recs) => {
                let h: Vec<f64> = recs.iter().map(|r| r.h).collect();
                let k: Vec<f64> = recs.iter().map(|r| r.cond1).collect();
                let s = loglog_slope(&h, &k);
                r.expect((-2.6..=-1.6).contains(&s), format!("{m} cond slope {s:.2}"));
            }
            Err(e) => r.error(m.as_str(), e),
        }
    }
    r.finish()
}

fn criterion_6() -> Check {
    let mut r = Report::default();
    let cfg = base(1).with_n(40);
    let mut methods = vec![Method::StrongAggregation];
    methods.extend(Method::WEAK);
    let sweeps: Vec<_> =
        methods.par_iter().map(|&m| (m, sweep_gamma(&cfg.with_method(m, 1.0), &DEFAULT_GAMMAS))).collect();
    let mut sag: Option<Vec<f64>> = None;
    let mut weak = Vec::new();
    for (m, res) in sweeps {
        match res {
            Ok(recs) => {
                let k: Vec<f64> = recs.iter().map(|r| r.cond1).collect();
                if m == Method::StrongAggregation {
                    sag = Some(k);
                } else {
                    weak.push((m, k));
                }
            }
            Err(e) => r.error(m.as_str(), e),
        }
    }
    let gammas = DEFAULT_GAMMAS;
    for (m, k) in &weak {
        let (imin, _) = k.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
        r.expect(gammas[imin] == 1.0, format!("{m} argmin gamma {:e}", gammas[imin]));
        let hi: Vec<usize> = (0..gammas.len()).filter(|&i| gammas[i] >= 1e2).collect();
        let g: Vec<f64> = hi.iter().map(|&i| gammas[i]).collect();
        let kk: Vec<f64> = hi.iter().map(|&i| k[i]).collect();
        let s = loglog_slope(&g, &kk);
        r.expect((0.8..=1.2).contains(&s), format!("{m} gamma slope {s:.2}"));
    }
    if let Some(s) = sag {
        r.expect(s.iter().all(|&v| v == s[0]), format!("S-Ag cond constant {:.3e}", s[0]));
        for (m, k) in &weak {
            let below = s.iter().zip(k).all(|(a, b)| a <= b);
            r.expect(below, format!("S-Ag below {m}"));
        }
    }
    r.finish()
}

fn criterion_7() -> Check {
    let mut r = Report::default();
    let sliver = base(1);
    let benign = RunConfig { sliver_eta: BENIGN_ETA, ..sliver };
    match (
        run_case(&sliver.with_method(Method::None, 1.0)),
        run_case(&sliver.with_method(Method::StrongAggregation, 1.0)),
    ) {
        (Ok(none), Ok(sag)) => {
            let ratio = none.cond1 / sag.cond1;
            r.expect(ratio >= 1e4, format!("cond NONE/S-Ag {ratio:.1e}"));
        }
        (Err(e), _) | (_, Err(e)) => r.error("sliver NONE/S-Ag", e),
    }
    let mut methods = vec![Method::StrongAggregation];
    methods.extend(Method::WEAK);
    let pairs: Vec<_> = methods
        .par_iter()
        .map(|&m| (m, run_case(&sliver.with_method(m, 1.0)), run_case(&benign.with_method(m, 1.0))))
        .collect();
    for (m, s, b) in pairs {
        match (s, b) {
            (Ok(s), Ok(b)) => {
                let ratio = s.err_h1 / b.err_h1;
                r.expect((0.5..=2.0).contains(&ratio), format!("{m} H1 sliver/benign {ratio:.2}"));
            }
            (Err(e), _) | (_, Err(e)) => r.error(m.as_str(), e),
        }
    }
    r.finish()
}

fn dense_checks(r: &mut Report, disc: &Discretization, method: Method) {
    let cfg = MethodConfig::new(method, 1.0).unwrap();
    let s = match assemble_stabilisation(disc, &cfg) {
        Ok(s) => s,
        Err(e) => return r.error(method.as_str(), e),
    };
    let asym = s.asymmetry();
    r.expect(asym <= 1e-13, format!("{method} asymmetry {asym:.1e}"));
    let eig = s.to_dense().self_adjoint_eigenvalues(Side::Lower).unwrap();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.first().copied().unwrap_or(0.0);
    r.expect(min >= -1e-10 * max, format!("{method} min eigenvalue {:.1e} relative", min / max));
}

fn criterion_8() -> Check {
    let mut r = Report::default();
    let sliver = base(1).with_n(8);
    let benign = RunConfig { sliver_eta: BENIGN_ETA, ..sliver };
    for order in [1, 2] {
        match build_discretization(&RunConfig { order, ..benign }) {
            Ok(d) => {
                for m in Method::WEAK {
                    dense_checks(&mut r, &d, m);
                }
            }
            Err(e) => r.error("n=8 discretisation", e),
        }
    }
    for method in [Method::WeakAggregationL2, Method::WeakAggregationGrad] {
        for order in [1, 2] {
            match build_discretization(&RunConfig { order, ..base(order).with_n(4) }) {
                Ok(d) => {
                    let s = assemble_stabilisation(&d, &MethodConfig::new(method, 1.0).unwrap()).unwrap();
                    let sv = s.to_dense().singular_values().unwrap();
                    let tol = 1e-10 * sv.iter().fold(0.0f64, |a, &b| a.max(b));
                    let kernel = sv.iter().filter(|&&v| v <= tol).count();
                    let well = d.dofs.well_posed_nodes().len() * d.space.num_components();
                    r.expect(kernel == well, format!("{method} m={order} kernel {kernel} vs well-posed {well}"));
                }
                Err(e) => r.error("n=4 discretisation", e),
            }
        }
    }
    match (build_discretization(&benign), build_discretization(&sliver)) {
        (Ok(db), Ok(ds)) => {
            let mut methods = vec![Method::StrongAggregation];
            methods.extend(Method::WEAK);
            for m in methods {
                let cfg = MethodConfig::new(m, 1.0).unwrap();
                match (extended_stability(&db, &cfg), extended_stability(&ds, &cfg)) {
                    (Ok(b), Ok(s)) => {
                        let ratio = b.max(s) / b.min(s);
                        r.expect(ratio <= 5.0 && s > 0.0, format!("{m} eigenvalue benign {b:.3} sliver {s:.3}"));
                    }
                    (Err(e), _) | (_, Err(e)) => r.error(m.as_str(), e),
                }
            }
            match extended_stability(&ds, &MethodConfig::new(Method::None, 1.0).unwrap()) {
                Ok(s) => r.expect(s <= 1e-4, format!("NONE sliver eigenvalue {s:.1e}")),
                Err(e) => r.error("NONE", e),
            }
        }
        (Err(e), _) | (_, Err(e)) => r.error("n=8 discretisations", e),
    }
    r.finish()
}

fn max_row_sum_defect(ext: &ExtensionOperator) -> f64 {
    ext.constraints().iter().map(|c| (c.weights.iter().map(|w| w.1).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

fn criterion_9() -> Check {
    let mut r = Report::default();
    for order in [1, 2] {
        for problem in [ProblemKind::Poisson, ProblemKind::Elasticity] {
            let sliver = RunConfig { problem, order, n: 16, ..base(order) };
            let benign = RunConfig { sliver_eta: BENIGN_ETA, ..sliver };
            let tag = format!("{} m={order}", problem.as_str());
            let (db, ds) = match (build_discretization(&benign), build_discretization(&sliver)) {
                (Ok(b), Ok(s)) => (b, s),
                (Err(e), _) | (_, Err(e)) => {
                    r.error(&tag, e);
                    continue;
                }
            };
            for d in [&db, &ds] {
                let space = &d.space;
                // Degree-m polynomial with distinct components.
                let poly = |x: [f64; 2]| {
                    let s = 0.3 + 0.7 * x[0] - 0.4 * x[1];
                    [s.powi(order as i32) + 0.2, (0.5 * x[0] + x[1]).powi(order as i32)]
                };
                let v = space.interpolate(poly);
                let pv = project_ag(space, &d.ext, &v).unwrap();
                let repro = pv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                r.expect(repro <= 1e-12, format!("{tag} reproduction {repro:.1e}"));
                let dg = project_ag_dg(space, &d.ext_dg, &v).unwrap();
                let mut dg_err: f64 = 0.0;
                for &cell in space.active_cells() {
                    for (k, &dof) in space.cell_dofs(cell).iter().enumerate() {
                        dg_err = dg_err.max((dg[cell][k] - v[dof]).abs());
                    }
                }
                r.expect(dg_err <= 1e-12, format!("{tag} DG reproduction {dg_err:.1e}"));

                let w: Vec<f64> = (0..space.num_dofs()).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
                let p1 = project_ag(space, &d.ext, &w).unwrap();
                let p2 = project_ag(space, &d.ext, &p1).unwrap();
                let idem = p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                r.expect(idem <= 1e-13, format!("{tag} idempotence {idem:.1e}"));
                let rs = max_row_sum_defect(&d.ext).max(max_row_sum_defect(&d.ext_dg));
                r.expect(rs <= 1e-13, format!("{tag} row sums {rs:.1e}"));
            }
            for (name, eb, es) in [("continuous", &db.ext, &ds.ext), ("cell-wise", &db.ext_dg, &ds.ext_dg)] {
                let ratio = es.max_row_abs_sum() / eb.max_row_abs_sum();
                r.expect(ratio <= 2.0, format!("{tag} {name} row-norm ratio {ratio:.2}"));
            }
        }
    }
    r.finish()
}

fn criterion_10() -> Check {
    let mut r = Report::default();
    patch_test(&mut r, ProblemKind::Elasticity, BoundaryMode::Mixed);
    let cfg = RunConfig { problem: ProblemKind::Elasticity, bc: BoundaryMode::Mixed, ..base(1) };
    let results: Vec<_> = [Method::StrongAggregation, Method::WeakAggregationGrad]
        .par_iter()
        .map(|&m| (m, refinement(cfg.with_method(m, 1.0), &DEFAULT_REFINEMENT)))
        .collect();
    for (m, res) in results {
        match res {
            Ok(recs) => {
                let (l2, _) = orders(&recs);
                r.expect((1.8..=2.3).contains(&l2), format!("{m} elasticity L2 order {l2:.2}"));
            }
            Err(e) => r.error(m.as_str(), e),
        }
    }
    r.finish()
}

type Criterion = (usize, &'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "patch test, Poisson, all methods", criterion_1),
        (2, "convergence rates", criterion_2),
        (3, "locking at large gamma", criterion_3),
        (4, "weak aggregation limit", criterion_4),
        (5, "condition number scaling in h", criterion_5),
        (6, "gamma sensitivity of the condition number", criterion_6),
        (7, "small-cut robustness", criterion_7),
        (8, "stabilisation algebra and extended stability", criterion_8),
        (9, "extension operator", criterion_9),
        (10, "elasticity with mixed conditions", criterion_10),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let c = check();
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} ({:.1}s) {name}: {}", start.elapsed().as_secs_f64(), c.detail);
        if !c.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
        if strict {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    } else {
        ExitCode::SUCCESS
    }
}
