#![allow(dead_code)]

use dce_core::CodedDesign;
use nalgebra::{DMatrix, DVector};

/// Information matrix from the stacked design: X' (blockdiag(diag p − pp')) X
/// with probabilities computed by plain exponentiation.
pub fn stacked_information(design: &CodedDesign, beta: &[f64]) -> DMatrix<f64> {
    let k = design.n_params();
    let n = design.rows.len();
    let x = DMatrix::from_fn(n, k, |i, j| design.rows[i].x[j]);
    let b = DVector::from_column_slice(beta);
    let v = &x * &b;
    let mut w = DMatrix::zeros(n, n);
    let j = design.alts_per_set;
    for s in 0..design.n_sets {
        let e: Vec<f64> = (0..j).map(|a| v[s * j + a].exp()).collect();
        let total: f64 = e.iter().sum();
        for a in 0..j {
            for c in 0..j {
                let (pa, pc) = (e[a] / total, e[c] / total);
                w[(s * j + a, s * j + c)] = if a == c { pa - pa * pc } else { -pa * pc };
            }
        }
    }
    x.transpose() * w * x
}

/// det(M)^(−1/K) by LU determinant; infinite when the determinant is not positive.
pub fn oracle_d_error(design: &CodedDesign, beta: &[f64]) -> f64 {
    let m = stacked_information(design, beta);
    let det = m.determinant();
    if det <= 1e-300 {
        f64::INFINITY
    } else {
        det.powf(-1.0 / design.n_params() as f64)
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
