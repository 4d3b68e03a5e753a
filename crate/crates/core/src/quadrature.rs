//! Reference quadrature rules and their physical mappings.

use crate::mesh::{signed_area, Point};

/// A bulk quadrature point; `w` carries area units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: Point,
    pub w: f64,
}

/// A surface quadrature point; `w` carries length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: Point,
    pub w: f64,
    pub normal: [f64; 2],
}

type BaryRule = &'static [([f64; 3], f64)];

// Symmetric rules with positive weights, normalised to unit total weight.
const TRI_1: BaryRule = &[([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];

const TRI_2: BaryRule = &[
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const A4_1: f64 = 0.445_948_490_915_965;
const A4_2: f64 = 0.091_576_213_509_771;
const W4_1: f64 = 0.223_381_589_678_011;
const W4_2: f64 = 0.109_951_743_655_322;
const TRI_4: BaryRule = &[
    ([1.0 - 2.0 * A4_1, A4_1, A4_1], W4_1),
    ([A4_1, 1.0 - 2.0 * A4_1, A4_1], W4_1),
    ([A4_1, A4_1, 1.0 - 2.0 * A4_1], W4_1),
    ([1.0 - 2.0 * A4_2, A4_2, A4_2], W4_2),
    ([A4_2, 1.0 - 2.0 * A4_2, A4_2], W4_2),
    ([A4_2, A4_2, 1.0 - 2.0 * A4_2], W4_2),
];

const A5_1: f64 = 0.470_142_064_105_115;
const A5_2: f64 = 0.101_286_507_323_456;
const W5_1: f64 = 0.132_394_152_788_506;
const W5_2: f64 = 0.125_939_180_544_827;
const TRI_5: BaryRule = &[
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([1.0 - 2.0 * A5_1, A5_1, A5_1], W5_1),
    ([A5_1, 1.0 - 2.0 * A5_1, A5_1], W5_1),
    ([A5_1, A5_1, 1.0 - 2.0 * A5_1], W5_1),
    ([1.0 - 2.0 * A5_2, A5_2, A5_2], W5_2),
    ([A5_2, 1.0 - 2.0 * A5_2, A5_2], W5_2),
    ([A5_2, A5_2, 1.0 - 2.0 * A5_2], W5_2),
];

const A6_1: f64 = 0.249_286_745_170_910;
const A6_2: f64 = 0.063_089_014_491_502;
const B6_1: f64 = 0.053_145_049_844_817;
const B6_2: f64 = 0.310_352_451_033_784;
const B6_3: f64 = 1.0 - B6_1 - B6_2;
const W6_1: f64 = 0.116_786_275_726_379;
const W6_2: f64 = 0.050_844_906_370_207;
const W6_3: f64 = 0.082_851_075_618_374;
const TRI_6: BaryRule = &[
    ([1.0 - 2.0 * A6_1, A6_1, A6_1], W6_1),
    ([A6_1, 1.0 - 2.0 * A6_1, A6_1], W6_1),
    ([A6_1, A6_1, 1.0 - 2.0 * A6_1], W6_1),
    ([1.0 - 2.0 * A6_2, A6_2, A6_2], W6_2),
    ([A6_2, 1.0 - 2.0 * A6_2, A6_2], W6_2),
    ([A6_2, A6_2, 1.0 - 2.0 * A6_2], W6_2),
    ([B6_1, B6_2, B6_3], W6_3),
    ([B6_1, B6_3, B6_2], W6_3),
    ([B6_2, B6_1, B6_3], W6_3),
    ([B6_2, B6_3, B6_1], W6_3),
    ([B6_3, B6_1, B6_2], W6_3),
    ([B6_3, B6_2, B6_1], W6_3),
];

/// Highest polynomial degree with a tabulated triangle rule.
pub const MAX_TRIANGLE_DEGREE: usize = 6;

/// Barycentric triangle rule exact for polynomials of total degree `degree`.
///
/// # Panics
/// If `degree > MAX_TRIANGLE_DEGREE`.
pub fn triangle_rule(degree: usize) -> BaryRule {
    match degree {
        0 | 1 => TRI_1,
        2 => TRI_2,
        3 | 4 => TRI_4,
        5 => TRI_5,
        6 => TRI_6,
        _ => panic!("no triangle rule of degree {degree}"),
    }
}

/// Appends the mapped rule for triangle `p` to `out`.
pub fn push_triangle_points(p: &[Point; 3], degree: usize, out: &mut Vec<QuadPoint>) {
    let area = signed_area(p).abs();
    for (l, w) in triangle_rule(degree) {
        let x = [l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0], l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1]];
        out.push(QuadPoint { x, w: w * area });
    }
}

/// Fan triangulation of a convex polygon, mapped with the degree-`degree` rule.
pub fn push_polygon_points(poly: &[Point], degree: usize, out: &mut Vec<QuadPoint>) {
    for k in 1..poly.len().saturating_sub(1) {
        let tri = [poly[0], poly[k], poly[k + 1]];
        if signed_area(&tri).abs() > 0.0 {
            push_triangle_points(&tri, degree, out);
        }
    }
}

const SQRT_3_5: f64 = 0.774_596_669_241_483_4;
const GL1: &[(f64, f64)] = &[(0.5, 1.0)];
const GL2: &[(f64, f64)] = &[(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];
const GL3: &[(f64, f64)] = &[(0.5 - 0.5 * SQRT_3_5, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + 0.5 * SQRT_3_5, 5.0 / 18.0)];
const GL4: &[(f64, f64)] = &[
    (0.5 - 0.5 * 0.861_136_311_594_052_6, 0.5 * 0.347_854_845_137_453_9),
    (0.5 - 0.5 * 0.339_981_043_584_856_3, 0.5 * 0.652_145_154_862_546_1),
    (0.5 + 0.5 * 0.339_981_043_584_856_3, 0.5 * 0.652_145_154_862_546_1),
    (0.5 + 0.5 * 0.861_136_311_594_052_6, 0.5 * 0.347_854_845_137_453_9),
];

/// Gauss–Legendre points and weights on `[0, 1]`.
pub fn gauss_legendre(npts: usize) -> &'static [(f64, f64)] {
    match npts {
        0 | 1 => GL1,
        2 => GL2,
        3 => GL3,
        _ => GL4,
    }
}

/// Number of Gauss–Legendre points needed for exactness of degree `degree`.
pub fn gauss_points_for_degree(degree: usize) -> usize {
    (degree + 2) / 2
}

/// Appends Gauss points on segment `[a, b]` carrying `normal`.
pub fn push_segment_points(a: Point, b: Point, normal: [f64; 2], npts: usize, out: &mut Vec<SurfacePoint>) {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    for &(s, w) in gauss_legendre(npts) {
        out.push(SurfacePoint { x: [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])], w: w * len, normal });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// ∫_T λ1^a λ2^b = 2|T| a! b! / (a + b + 2)!
    fn monomial_exact(a: u32, b: u32, area: f64) -> f64 {
        2.0 * area * factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn triangle_rules_are_exact_to_their_degree() {
        let p = [[0.3, -0.2], [1.7, 0.1], [0.5, 1.4]];
        let area = signed_area(&p);
        for degree in 0..=MAX_TRIANGLE_DEGREE {
            let mut pts = Vec::new();
            push_triangle_points(&p, degree, &mut pts);
            assert!(pts.iter().all(|q| q.w > 0.0));
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let approx: f64 = triangle_rule(degree)
                        .iter()
                        .map(|(l, w)| w * area * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    let exact = monomial_exact(a, b, area);
                    assert!((approx - exact).abs() <= 1e-13 * exact.abs().max(1e-3), "deg {degree} a {a} b {b}");
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=4 {
            let rule = gauss_legendre(n);
            for k in 0..(2 * n) as i32 {
                let approx: f64 = rule.iter().map(|&(x, w)| w * x.powi(k)).sum();
                assert!((approx - 1.0 / f64::from(k + 1)).abs() < 1e-14, "n {n} k {k}");
            }
        }
    }

    #[test]
    fn polygon_weights_sum_to_area() {
        let square = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]];
        let mut pts = Vec::new();
        push_polygon_points(&square, 2, &mut pts);
        let total: f64 = pts.iter().map(|q| q.w).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn segment_weights_sum_to_length() {
        let mut pts = Vec::new();
        push_segment_points([0.0, 0.0], [3.0, 4.0], [0.8, -0.6], 3, &mut pts);
        let total: f64 = pts.iter().map(|q| q.w).sum();
        assert!((total - 5.0).abs() < 1e-14);
    }
}
