//! Multinomial logit choice probabilities, the Fisher information of a
//! design, and the D-error / DB-error efficiency criteria.

use nalgebra::DMatrix;

use crate::design::{ChoiceProbabilities, CodedDesign, Coefficients, DesignRow};
use crate::error::{Error, Result};
use crate::prior::draw_priors;
use crate::settings::PriorSpec;

/// Determinants at or below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-300;

/// Cholesky pivots at or below this fraction of the largest diagonal entry
/// are rounding noise, so the matrix is treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Softmax of `x_j'β` over one set's coded rows, shifted by the maximum
/// utility so large utilities cannot overflow.
pub fn choice_probabilities<R: AsRef<[f64]>>(rows: &[R], beta: &[f64]) -> Vec<f64> {
    let utilities: Vec<f64> = rows.iter().map(|x| dot(x.as_ref(), beta)).collect();
    softmax(&utilities)
}

pub(crate) fn softmax(utilities: &[f64]) -> Vec<f64> {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mnl_probabilities(rows: &[DesignRow], beta: &Coefficients) -> Result<ChoiceProbabilities> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a choice set needs at least 2 alternatives, got {}",
            rows.len()
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.x.len() != beta.len()) {
        return Err(Error::InvalidInput(format!(
            "coded row has {} columns but beta has {}",
            bad.x.len(),
            beta.len()
        )));
    }
    let xs: Vec<&[f64]> = rows.iter().map(|r| r.x.as_slice()).collect();
    Ok(ChoiceProbabilities {
        set: rows[0].set,
        probs: choice_probabilities(&xs, &beta.beta),
    })
}

/// Adds one set's contribution `X'(diag(p) − pp')X` to the row-major K×K
/// buffer `out`.
pub(crate) fn accumulate_set_information<R: AsRef<[f64]>>(
    rows: &[R],
    beta: &[f64],
    out: &mut [f64],
) {
    let k = beta.len();
    let p = choice_probabilities(rows, beta);
    // x̄ = Σ p_j x_j
    let mut mean = vec![0.0; k];
    for (x, &pj) in rows.iter().zip(&p) {
        for (m, &xi) in mean.iter_mut().zip(x.as_ref()) {
            *m += pj * xi;
        }
    }
    // Σ p_j (x_j − x̄)(x_j − x̄)' equals X'(diag(p) − pp')X
    let mut centered = vec![0.0; k];
    for (x, &pj) in rows.iter().zip(&p) {
        for ((c, &xi), &m) in centered.iter_mut().zip(x.as_ref()).zip(&mean) {
            *c = xi - m;
        }
        for a in 0..k {
            let ca = pj * centered[a];
            if ca == 0.0 {
                continue;
            }
            // mirrored so the result is exactly symmetric
            for b in a..k {
                let v = ca * centered[b];
                out[a * k + b] += v;
                if b != a {
                    out[b * k + a] += v;
                }
            }
        }
    }
}

/// `log det(M)` via Cholesky on a row-major K×K buffer, or `None` when the
/// factorization breaks down or a pivot is indistinguishable from zero.
pub(crate) fn log_det_spd(m: &[f64], k: usize) -> Option<f64> {
    let max_diag = (0..k).map(|i| m[i * k + i]).fold(0.0, f64::max);
    let min_pivot = SINGULAR_PIVOT * max_diag;
    let mut l = vec![0.0; k * k];
    let mut log_det = 0.0;
    for j in 0..k {
        let mut d = m[j * k + j];
        for p in 0..j {
            d -= l[j * k + p] * l[j * k + p];
        }
        if !(d > min_pivot) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[j * k + j] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in j + 1..k {
            let mut s = m[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = s / ljj;
        }
    }
    Some(log_det)
}

/// `det(M)^(−1/K)`, or `+∞` when `M` is singular.
pub(crate) fn d_error_from_information(m: &[f64], k: usize) -> f64 {
    if k == 0 {
        return f64::INFINITY;
    }
    match log_det_spd(m, k) {
        Some(log_det) if log_det > SINGULAR_DET.ln() => (-log_det / k as f64).exp(),
        _ => f64::INFINITY,
    }
}

fn information_buffer(design: &CodedDesign, beta: &[f64]) -> Vec<f64> {
    let k = beta.len();
    let mut m = vec![0.0; k * k];
    for set in design.sets() {
        let xs: Vec<&[f64]> = set.iter().map(|r| r.x.as_slice()).collect();
        accumulate_set_information(&xs, beta, &mut m);
    }
    m
}

fn check_beta(design: &CodedDesign, beta: &Coefficients) -> Result<()> {
    if beta.len() != design.n_params() {
        return Err(Error::InvalidInput(format!(
            "design has {} coded columns but beta has {} entries",
            design.n_params(),
            beta.len()
        )));
    }
    Ok(())
}

/// Fisher information `Σ_s X_s'(diag(p_s) − p_s p_s')X_s` of the design.
pub fn fisher_information(design: &CodedDesign, beta: &Coefficients) -> Result<DMatrix<f64>> {
    check_beta(design, beta)?;
    let k = beta.len();
    let m = information_buffer(design, &beta.beta);
    Ok(DMatrix::from_row_slice(k, k, &m))
}

/// D-error at `beta`; `f64::INFINITY` for a singular information matrix.
pub fn d_error(design: &CodedDesign, beta: &Coefficients) -> Result<f64> {
    check_beta(design, beta)?;
    let m = information_buffer(design, &beta.beta);
    Ok(d_error_from_information(&m, beta.len()))
}

/// Mean D-error over the rows of a draw matrix (R×K); infinite if any draw is.
pub fn db_error_with_draws(design: &CodedDesign, draws: &DMatrix<f64>) -> Result<f64> {
    if draws.ncols() != design.n_params() {
        return Err(Error::InvalidInput(format!(
            "draws have {} columns but the design has {}",
            draws.ncols(),
            design.n_params()
        )));
    }
    let k = draws.ncols();
    let mut beta = vec![0.0; k];
    let values = (0..draws.nrows()).map(|r| {
        beta.iter_mut()
            .enumerate()
            .for_each(|(c, b)| *b = draws[(r, c)]);
        d_error_from_information(&information_buffer(design, &beta), k)
    });
    Ok(running_mean(values))
}

/// Incremental mean; a run of identical values returns that value exactly.
pub(crate) fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (n, v) in values.enumerate() {
        if v.is_infinite() {
            return f64::INFINITY;
        }
        mean += (v - mean) / (n + 1) as f64;
    }
    mean
}

/// Bayesian D-error: D-error averaged over `prior.n_draws` prior draws.
pub fn db_error(design: &CodedDesign, prior: &PriorSpec, seed: u64) -> Result<f64> {
    let draws = draw_priors(prior, seed)?;
    db_error_with_draws(design, &draws)
}
