//! Level-set geometry, cell classification and cut-cell quadrature.
//!
//! Inside every background triangle each level-set primitive is reduced to
//! an affine function: half-planes and rectangle sides exactly, circles via
//! linear interpolation of `phi` at the three vertices. `T ∩ Ω` is then the
//! triangle clipped by those half-planes, a convex polygon whose edges are
//! tagged with the primitive that produced them. Tagged edges form the
//! discrete interface.

use crate::error::{Error, Result};
use crate::mesh::{dist, signed_area, BackgroundMesh, Point};
use crate::quadrature::{
    gauss_points_for_degree, push_polygon_points, push_segment_points, push_triangle_points, QuadPoint, SurfacePoint,
};

/// Implicit description of Ω = {phi < 0}.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelSet {
    Constant(f64),
    Circle {
        center: Point,
        radius: f64,
    },
    /// `max(|x - cx| - hx, |y - cy| - hy)`.
    Rectangle {
        center: Point,
        half_widths: [f64; 2],
    },
    /// `normal · x - offset`; `normal` has unit length.
    HalfPlane {
        normal: [f64; 2],
        offset: f64,
    },
    Intersection(Vec<LevelSet>),
}

impl LevelSet {
    pub fn circle(center: Point, radius: f64) -> Self {
        LevelSet::Circle { center, radius }
    }

    pub fn square(center: Point, half_width: f64) -> Self {
        LevelSet::Rectangle { center, half_widths: [half_width, half_width] }
    }

    pub fn half_plane(normal: [f64; 2], offset: f64) -> Self {
        let len = normal[0].hypot(normal[1]);
        LevelSet::HalfPlane { normal: [normal[0] / len, normal[1] / len], offset: offset / len }
    }

    pub fn value(&self, x: Point) -> f64 {
        match self {
            LevelSet::Constant(c) => *c,
            LevelSet::Circle { center, radius } => dist(x, *center) - radius,
            LevelSet::Rectangle { center, half_widths } => {
                ((x[0] - center[0]).abs() - half_widths[0]).max((x[1] - center[1]).abs() - half_widths[1])
            }
            LevelSet::HalfPlane { normal, offset } => normal[0] * x[0] + normal[1] * x[1] - offset,
            LevelSet::Intersection(parts) => parts.iter().map(|p| p.value(x)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn gradient(&self, x: Point) -> [f64; 2] {
        match self {
            LevelSet::Constant(_) => [0.0, 0.0],
            LevelSet::Circle { center, .. } => {
                let d = dist(x, *center);
                if d == 0.0 {
                    [0.0, 0.0]
                } else {
                    [(x[0] - center[0]) / d, (x[1] - center[1]) / d]
                }
            }
            LevelSet::Rectangle { center, half_widths } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                if dx.abs() - half_widths[0] >= dy.abs() - half_widths[1] {
                    [dx.signum(), 0.0]
                } else {
                    [0.0, dy.signum()]
                }
            }
            LevelSet::HalfPlane { normal, .. } => *normal,
            LevelSet::Intersection(parts) => {
                parts.iter().max_by(|a, b| a.value(x).total_cmp(&b.value(x))).map_or([0.0, 0.0], |p| p.gradient(x))
            }
        }
    }

    /// Affine pieces of the level set restricted to triangle `tri`.
    fn cell_planes(&self, tri: &[Point; 3], out: &mut Vec<Plane>) {
        match self {
            LevelSet::Constant(c) => out.push(Plane { a: [0.0, 0.0], c: *c }),
            LevelSet::Circle { .. } => out.push(Plane::interpolate(tri, [0, 1, 2].map(|k| self.value(tri[k])))),
            LevelSet::Rectangle { center, half_widths } => {
                for axis in 0..2 {
                    for sign in [1.0, -1.0] {
                        let mut a = [0.0, 0.0];
                        a[axis] = sign;
                        out.push(Plane { a, c: -sign * center[axis] - half_widths[axis] });
                    }
                }
            }
            LevelSet::HalfPlane { normal, offset } => out.push(Plane { a: *normal, c: -offset }),
            LevelSet::Intersection(parts) => parts.iter().for_each(|p| p.cell_planes(tri, out)),
        }
    }
}

/// `a · x + c`, negative inside.
#[derive(Debug, Clone, Copy)]
struct Plane {
    a: [f64; 2],
    c: f64,
}

impl Plane {
    fn eval(&self, x: Point) -> f64 {
        self.a[0] * x[0] + self.a[1] * x[1] + self.c
    }

    fn negated(&self) -> Plane {
        Plane { a: [-self.a[0], -self.a[1]], c: -self.c }
    }

    fn interpolate(tri: &[Point; 3], vals: [f64; 3]) -> Plane {
        let (e1, e2) = (sub(tri[1], tri[0]), sub(tri[2], tri[0]));
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        let (d1, d2) = (vals[1] - vals[0], vals[2] - vals[0]);
        // Solve [e1; e2] a = [d1; d2].
        let a = [(d1 * e2[1] - d2 * e1[1]) / det, (e1[0] * d2 - e2[0] * d1) / det];
        Plane { a, c: vals[0] - a[0] * tri[0][0] - a[1] * tri[0][1] }
    }

    fn unit_normal(&self) -> [f64; 2] {
        let n = self.a[0].hypot(self.a[1]);
        [self.a[0] / n, self.a[1] / n]
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// One linear piece of the discrete interface inside a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    /// Outward unit normal.
    pub normal: [f64; 2],
}

impl Segment {
    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }
}

/// `T ∩ Ω` for one background cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCut {
    /// Counter-clockwise convex polygon; empty when the cell is outside.
    pub polygon: Vec<Point>,
    pub segments: Vec<Segment>,
    pub area: f64,
    pub eta: f64,
    /// The polygon is the whole triangle.
    pub full: bool,
    /// Convex pieces of `T \ Ω`; empty for full cells.
    pub outside: Vec<Vec<Point>>,
}

#[derive(Debug, Clone)]
struct TaggedPolygon {
    pts: Vec<Point>,
    /// `tags[i]` labels the edge `pts[i] -> pts[i + 1]`.
    tags: Vec<Option<usize>>,
}

enum Clip {
    Unchanged,
    Empty,
    Clipped,
}

impl TaggedPolygon {
    fn triangle(p: &[Point; 3]) -> Self {
        TaggedPolygon { pts: p.to_vec(), tags: vec![None; 3] }
    }

    fn area(&self) -> f64 {
        polygon_area(&self.pts)
    }

    /// Keeps the part where `plane <= 0`; new edges on the plane get `tag`.
    fn clip(&mut self, plane: &Plane, tag: usize, snap: f64) -> std::result::Result<Clip, ()> {
        let vals: Vec<f64> = self
            .pts
            .iter()
            .map(|&p| {
                let v = plane.eval(p);
                if v.abs() <= snap {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let n = vals.len();
        if vals.iter().all(|&v| v == 0.0) {
            return Err(());
        }
        if vals.iter().all(|&v| v >= 0.0) {
            self.pts.clear();
            self.tags.clear();
            return Ok(Clip::Empty);
        }
        if vals.iter().all(|&v| v <= 0.0) {
            let mut touched = false;
            for i in 0..n {
                if vals[i] == 0.0 && vals[(i + 1) % n] == 0.0 {
                    self.tags[i] = Some(tag);
                    touched = true;
                }
            }
            return Ok(if touched { Clip::Clipped } else { Clip::Unchanged });
        }

        let mut pts = Vec::with_capacity(n + 1);
        let mut tags = Vec::with_capacity(n + 1);
        for i in 0..n {
            let j = (i + 1) % n;
            let (p, q, vp, vq, t) = (self.pts[i], self.pts[j], vals[i], vals[j], self.tags[i]);
            let cross = || {
                let s = vp / (vp - vq);
                [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
            };
            if vp <= 0.0 {
                if vq <= 0.0 {
                    pts.push(p);
                    tags.push(t);
                } else if vp < 0.0 {
                    pts.push(p);
                    tags.push(t);
                    pts.push(cross());
                    tags.push(Some(tag));
                } else {
                    pts.push(p);
                    tags.push(Some(tag));
                }
            } else if vq < 0.0 {
                pts.push(cross());
                tags.push(t);
            }
        }
        // Drop zero-length edges.
        let mut k = 0;
        while pts.len() > 1 && k < pts.len() {
            let next = (k + 1) % pts.len();
            if pts[k] == pts[next] {
                tags[k] = tags[next];
                pts.remove(next);
                tags.remove(next);
                if next < k {
                    k -= 1;
                }
            } else {
                k += 1;
            }
        }
        if pts.len() < 3 {
            pts.clear();
            tags.clear();
            self.pts = pts;
            self.tags = tags;
            return Ok(Clip::Empty);
        }
        self.pts = pts;
        self.tags = tags;
        Ok(Clip::Clipped)
    }
}

pub(crate) fn polygon_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (pts[i], pts[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

fn centroid(p: &[Point; 3]) -> Point {
    [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
}

/// Snapping tolerance for level-set values, relative to the mesh box.
pub fn snap_tolerance(mesh: &BackgroundMesh) -> f64 {
    1e-14 * mesh.rect().diameter()
}

/// Computes `T ∩ Ω` for triangle `tri`.
pub fn cut_triangle(ls: &LevelSet, tri: &[Point; 3], snap: f64) -> Result<CellCut> {
    let mut planes = Vec::new();
    ls.cell_planes(tri, &mut planes);
    let cell_area = signed_area(tri).abs();
    let mut poly = TaggedPolygon::triangle(tri);
    let mut full = true;
    for (k, plane) in planes.iter().enumerate() {
        match poly.clip(plane, k, snap) {
            Ok(Clip::Unchanged) => {}
            Ok(Clip::Clipped) => full = false,
            Ok(Clip::Empty) => {
                full = false;
                break;
            }
            Err(()) => {
                // The affine piece vanishes on the whole polygon: decide by the true sign.
                let v = ls.value(centroid(tri));
                if v == 0.0 {
                    return Err(Error::DegenerateGeometry(format!(
                        "level set vanishes identically on triangle {tri:?}"
                    )));
                }
                if v > 0.0 {
                    poly.pts.clear();
                    poly.tags.clear();
                    full = false;
                    break;
                }
            }
        }
    }
    if full {
        return Ok(CellCut {
            polygon: tri.to_vec(),
            segments: Vec::new(),
            area: cell_area,
            eta: 1.0,
            full: true,
            outside: Vec::new(),
        });
    }
    let area = poly.area().max(0.0);
    let n = poly.pts.len();
    let segments = (0..n)
        .filter_map(|i| {
            poly.tags[i].map(|k| Segment { a: poly.pts[i], b: poly.pts[(i + 1) % n], normal: planes[k].unit_normal() })
        })
        .filter(|s| s.length() > 0.0)
        .collect();
    if area == 0.0 {
        return Ok(CellCut {
            polygon: Vec::new(),
            segments: Vec::new(),
            area: 0.0,
            eta: 0.0,
            full: false,
            outside: vec![tri.to_vec()],
        });
    }
    let outside = complement_polygons(ls, tri, snap)?;
    Ok(CellCut { polygon: poly.pts, segments, area, eta: (area / cell_area).min(1.0), full: false, outside })
}

/// Convex pieces of `T \ Ω`.
pub fn complement_polygons(ls: &LevelSet, tri: &[Point; 3], snap: f64) -> Result<Vec<Vec<Point>>> {
    let mut planes = Vec::new();
    ls.cell_planes(tri, &mut planes);
    let mut pieces = Vec::new();
    let mut inside = TaggedPolygon::triangle(tri);
    for (k, plane) in planes.iter().enumerate() {
        let mut outside = inside.clone();
        match outside.clip(&plane.negated(), k, snap) {
            Ok(Clip::Empty) | Err(()) => {}
            Ok(_) => {
                if outside.area() > 0.0 {
                    pieces.push(outside.pts);
                }
            }
        }
        match inside.clip(plane, k, snap) {
            Ok(Clip::Empty) => break,
            Ok(_) => {}
            Err(()) => return Err(Error::DegenerateGeometry("level set vanishes on a cell".into())),
        }
    }
    Ok(pieces)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellLabel {
    In,
    Out,
    Cut,
}

/// Per-cell IN/OUT/CUT labels, volume fractions and cut polygons.
#[derive(Debug, Clone)]
pub struct CellClassification {
    labels: Vec<CellLabel>,
    cuts: Vec<CellCut>,
    eta0: f64,
}

impl CellClassification {
    /// Labels without geometry; cut cells get a nominal half fraction.
    #[cfg(test)]
    pub(crate) fn from_labels(labels: Vec<CellLabel>) -> Self {
        let cuts = labels
            .iter()
            .map(|l| {
                let eta = match l {
                    CellLabel::In => 1.0,
                    CellLabel::Out => 0.0,
                    CellLabel::Cut => 0.5,
                };
                CellCut {
                    polygon: Vec::new(),
                    segments: Vec::new(),
                    area: eta,
                    eta,
                    full: eta == 1.0,
                    outside: Vec::new(),
                }
            })
            .collect();
        CellClassification { labels, cuts, eta0: 1.0 }
    }

    pub fn label(&self, cell: usize) -> CellLabel {
        self.labels[cell]
    }

    pub fn labels(&self) -> &[CellLabel] {
        &self.labels
    }

    pub fn eta(&self, cell: usize) -> f64 {
        self.cuts[cell].eta
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn cut(&self, cell: usize) -> &CellCut {
        &self.cuts[cell]
    }

    pub fn num_cells(&self) -> usize {
        self.labels.len()
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.labels[cell] != CellLabel::Out
    }

    pub fn cells_with(&self, label: CellLabel) -> Vec<usize> {
        (0..self.labels.len()).filter(|&c| self.labels[c] == label).collect()
    }

    pub fn interior_cells(&self) -> Vec<usize> {
        self.cells_with(CellLabel::In)
    }

    pub fn cut_cells(&self) -> Vec<usize> {
        self.cells_with(CellLabel::Cut)
    }

    pub fn active_cells(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&c| self.is_active(c)).collect()
    }

    /// Smallest positive volume fraction over active cells.
    pub fn min_active_eta(&self) -> f64 {
        self.cuts.iter().map(|c| c.eta).filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min)
    }

    /// Total area of Ω_h.
    pub fn domain_area(&self) -> f64 {
        self.cuts.iter().map(|c| c.area).sum()
    }

    /// Bulk quadrature on `T ∩ Ω` from the stored polygon.
    pub fn bulk_points(&self, mesh: &BackgroundMesh, cell: usize, degree: usize) -> Vec<QuadPoint> {
        let mut out = Vec::new();
        let cut = &self.cuts[cell];
        if cut.full {
            push_triangle_points(&mesh.cell_points(cell), degree, &mut out);
        } else {
            push_polygon_points(&cut.polygon, degree, &mut out);
        }
        out
    }

    /// Interface quadrature on `Γ ∩ T` from the stored segments.
    pub fn surface_points(&self, cell: usize, degree: usize) -> Vec<SurfacePoint> {
        let mut out = Vec::new();
        let npts = gauss_points_for_degree(degree);
        for s in &self.cuts[cell].segments {
            push_segment_points(s.a, s.b, s.normal, npts, &mut out);
        }
        out
    }
}

/// Classifies every cell; `eta0` is the well-posedness threshold.
pub fn classify_cells(mesh: &BackgroundMesh, ls: &LevelSet, eta0: f64) -> Result<CellClassification> {
    if !(eta0 > 0.0 && eta0 <= 1.0) {
        return Err(Error::invalid(format!("eta0 = {eta0} outside (0, 1]")));
    }
    let snap = snap_tolerance(mesh);
    let mut labels = Vec::with_capacity(mesh.num_cells());
    let mut cuts = Vec::with_capacity(mesh.num_cells());
    for cell in 0..mesh.num_cells() {
        let cut = cut_triangle(ls, &mesh.cell_points(cell), snap)?;
        let label = if cut.eta == 0.0 {
            CellLabel::Out
        } else if cut.eta >= eta0 {
            CellLabel::In
        } else {
            CellLabel::Cut
        };
        labels.push(label);
        cuts.push(cut);
    }
    Ok(CellClassification { labels, cuts, eta0 })
}

/// Bulk rule on `T ∩ Ω` exact to `degree` on the discrete geometry.
pub fn cut_bulk_quadrature(mesh: &BackgroundMesh, cell: usize, ls: &LevelSet, degree: usize) -> Result<Vec<QuadPoint>> {
    let tri = mesh.cell_points(cell);
    let cut = cut_triangle(ls, &tri, snap_tolerance(mesh))?;
    let mut out = Vec::new();
    if cut.full {
        push_triangle_points(&tri, degree, &mut out);
    } else {
        push_polygon_points(&cut.polygon, degree, &mut out);
    }
    Ok(out)
}

/// Gauss points on the interface segments of a cut cell.
pub fn cut_surface_quadrature(
    mesh: &BackgroundMesh,
    cell: usize,
    ls: &LevelSet,
    degree: usize,
) -> Result<Vec<SurfacePoint>> {
    let cut = cut_triangle(ls, &mesh.cell_points(cell), snap_tolerance(mesh))?;
    if cut.segments.is_empty() {
        return Err(Error::InternalConsistency(format!("cell {cell} has no interface segment")));
    }
    let mut out = Vec::new();
    for s in &cut.segments {
        push_segment_points(s.a, s.b, s.normal, gauss_points_for_degree(degree), &mut out);
    }
    Ok(out)
}

/// Shape whose size is tuned to produce a prescribed small cut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeFamily {
    Square { center: Point, nominal_half_width: f64 },
    Circle { center: Point, nominal_radius: f64 },
}

impl ShapeFamily {
    fn center(&self) -> Point {
        match self {
            ShapeFamily::Square { center, .. } | ShapeFamily::Circle { center, .. } => *center,
        }
    }

    fn nominal(&self) -> f64 {
        match self {
            ShapeFamily::Square { nominal_half_width: s, .. } | ShapeFamily::Circle { nominal_radius: s, .. } => *s,
        }
    }

    pub fn with_size(&self, size: f64) -> LevelSet {
        match self {
            ShapeFamily::Square { center, .. } => LevelSet::square(*center, size),
            ShapeFamily::Circle { center, .. } => LevelSet::circle(*center, size),
        }
    }
}

/// Sizes a shape so that `min_T eta_T` is close to `target_eta`.
///
/// The shape's right-most extent is pushed a distance `delta` past the
/// vertical mesh line nearest its nominal size; `delta` is found by
/// geometric bisection.
pub fn place_sliver(family: ShapeFamily, mesh: &BackgroundMesh, target_eta: f64) -> Result<LevelSet> {
    if !(target_eta > 0.0 && target_eta < 0.5) {
        return Err(Error::invalid(format!("target eta {target_eta} outside (0, 0.5)")));
    }
    let h = mesh.rect().width() / mesh.n() as f64;
    let cx = family.center()[0];
    let hi = mesh.rect().hi[0];
    let line = mesh
        .grid_lines(0)
        .into_iter()
        .filter(|&x| x > cx && x + 0.5 * h < hi)
        .min_by(|a, b| (a - cx - family.nominal()).abs().total_cmp(&(b - cx - family.nominal()).abs()))
        .ok_or_else(|| Error::SearchFailure("no mesh line inside the box to anchor the shape".into()))?;
    let base = line - cx;

    let min_eta = |delta: f64| -> Result<f64> {
        let cls = classify_cells(mesh, &family.with_size(base + delta), 1.0)?;
        Ok(cls.min_active_eta())
    };

    let (mut lo, mut hi_delta) = (1e-12 * h, 0.5 * h);
    let (f_lo, f_hi) = (min_eta(lo)?, min_eta(hi_delta)?);
    if !(f_lo < target_eta && target_eta < f_hi) {
        return Err(Error::SearchFailure(format!(
            "target {target_eta:e} not bracketed: min eta in [{f_lo:e}, {f_hi:e}] for delta in [{lo:e}, {hi_delta:e}]"
        )));
    }
    let mut best = (f64::INFINITY, hi_delta, f_hi);
    for _ in 0..200 {
        let mid = (lo * hi_delta).sqrt();
        let f = min_eta(mid)?;
        let miss = (f / target_eta).ln().abs();
        if miss < best.0 {
            best = (miss, mid, f);
        }
        if miss < 0.05f64.ln_1p() {
            break;
        }
        if f < target_eta {
            lo = mid;
        } else {
            hi_delta = mid;
        }
        if hi_delta / lo < 1.0 + 1e-12 {
            break;
        }
    }
    let (miss, delta, f) = best;
    if miss > 10f64.ln() {
        return Err(Error::SearchFailure(format!(
            "closest min eta {f:e} at delta {delta:e} is more than a decade from {target_eta:e}"
        )));
    }
    Ok(family.with_size(base + delta))
}
