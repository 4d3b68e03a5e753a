//! 1-norm condition numbers: exact by column solves, or estimated.

use faer::MatMut;

use crate::sparse::{CsrMatrix, Factorization};

/// Exact evaluation is used up to this dimension.
pub const EXACT_COND_MAX_DIM: usize = 2500;

const BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cond1 {
    pub value: f64,
    pub is_estimate: bool,
}

/// `||A^{-1}||_1` from the columns of `A^{-1}`, solved in blocks.
pub fn inverse_norm1_exact(f: &Factorization) -> f64 {
    let n = f.dim();
    let mut best: f64 = 0.0;
    let mut buf = vec![0.0; n * BLOCK];
    let mut start = 0;
    while start < n {
        let w = BLOCK.min(n - start);
        let cols = &mut buf[..n * w];
        cols.fill(0.0);
        for k in 0..w {
            cols[k * n + start + k] = 1.0;
        }
        f.solve_transpose_mat(MatMut::from_column_major_slice_mut(cols, n, w));
        for col in cols.chunks(n) {
            best = best.max(col.iter().map(|v| v.abs()).sum());
        }
        start += w;
    }
    best
}

/// Hager-Higham estimate of `||B||_1` given products with `B` and `B^T`.
pub fn norm1_estimate(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>, apply_t: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let norm1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0;
    for iter in 0..5 {
        let y = apply(&x);
        let e = norm1(&y);
        if iter > 0 && e <= est {
            break;
        }
        est = e;
        let sign: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
        let z = apply_t(&sign);
        let (j, zmax) =
            z.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bj, bv), (j, &v)| {
                    if v.abs() > bv {
                        (j, v.abs())
                    } else {
                        (bj, bv)
                    }
                },
            );
        let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if iter > 0 && zmax <= ztx {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    // Alternating test vector guards against unlucky cancellation.
    let denom = (n.max(2) - 1) as f64;
    let alt: Vec<f64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / denom)
        })
        .collect();
    let alt_est = 2.0 * norm1(&apply(&alt)) / (3.0 * n as f64);
    est.max(alt_est)
}

/// `||A||_1 ||A^{-1}||_1`, exact for small systems.
pub fn cond1(a: &CsrMatrix, f: &Factorization) -> Cond1 {
    let n = a.dim();
    let inv = if n <= EXACT_COND_MAX_DIM {
        inverse_norm1_exact(f)
    } else {
        norm1_estimate(n, |v| f.solve(v), |v| f.solve_transpose(v))
    };
    let value = a.norm1() * inv;
    Cond1 { value: if value.is_finite() { value } else { f64::INFINITY }, is_estimate: n > EXACT_COND_MAX_DIM }
}

/// As [`cond1`] but factorising first; breakdown yields `+inf`.
pub fn cond1_of(a: &CsrMatrix) -> Cond1 {
    match Factorization::new(a) {
        Ok(f) => cond1(a, &f),
        Err(_) => Cond1 { value: f64::INFINITY, is_estimate: a.dim() > EXACT_COND_MAX_DIM },
    }
}
