//! Conditional logit by Newton–Raphson with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::dataset::ResponseDataset;
use crate::design::Coefficients;
use crate::error::{Error, Result};
use crate::mnl::softmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Bound on the relative gradient `|g_i|·max(|β_i|, 1) / max(|ℓ|, 1)`,
    /// which does not depend on how covariates or the sample are scaled.
    pub gradient_tolerance: f64,
    /// Any coefficient beyond this magnitude is reported as separation.
    pub separation_limit: f64,
    pub max_halvings: usize,
    /// Bound on the relative Newton step `|s_i| / max(|β_i|, 1)`.
    pub step_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            separation_limit: 50.0,
            max_halvings: 20,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub coefficients: Coefficients,
    /// Row-major covariance of the estimates, `(−H)⁻¹` at the optimum.
    pub vcov: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_tasks: usize,
}

impl EstimationResult {
    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        let k = self.vcov.len();
        DMatrix::from_fn(k, k, |i, j| self.vcov[i][j])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coefficients.names.iter().position(|n| n == name)
    }
}

struct Task {
    rows: Vec<Vec<f64>>,
    chosen: usize,
}

/// Log-likelihood, gradient and information of a conditional logit on a
/// fixed dataset and covariate selection.
pub struct ClogitProblem {
    names: Vec<String>,
    tasks: Vec<Task>,
}

impl ClogitProblem {
    pub fn new(data: &ResponseDataset, covariates: &[String]) -> Result<Self> {
        data.validate()?;
        if covariates.is_empty() {
            return Err(Error::InvalidInput("select at least one covariate".into()));
        }
        let columns = covariates
            .iter()
            .map(|name| {
                data.column_index(name)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown covariate '{name}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(Error::InvalidInput(format!(
                    "covariate '{}' selected twice",
                    covariates[i]
                )));
            }
        }
        let tasks: Vec<Task> = data
            .tasks()
            .into_iter()
            .map(|idx| Task {
                rows: idx
                    .iter()
                    .map(|&i| {
                        columns
                            .iter()
                            .map(|&c| data.rows[i].covariates[c])
                            .collect()
                    })
                    .collect(),
                chosen: idx
                    .iter()
                    .position(|&i| data.rows[i].choice == 1)
                    .expect("validated: one chosen row per task"),
            })
            .collect();
        if tasks.is_empty() {
            return Err(Error::InvalidInput("dataset has no choice tasks".into()));
        }
        Ok(Self {
            names: covariates.to_vec(),
            tasks,
        })
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn utilities(rows: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
        rows.iter()
            .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.tasks
            .iter()
            .map(|t| {
                let u = Self::utilities(&t.rows, beta);
                let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_sum = u.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                u[t.chosen] - log_sum
            })
            .sum()
    }

    /// Gradient `Σ (y − p)'X`.
    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        self.derivatives(beta).0
    }

    /// Information `Σ X'(diag(p) − pp')X`, the negated Hessian.
    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        self.derivatives(beta).1
    }

    /// Gradient and information, accumulated on differences from the chosen
    /// row so that near-certain choices keep their tiny contributions instead
    /// of cancelling to zero.
    fn derivatives(&self, beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let k = self.n_params();
        let mut grad = vec![0.0; k];
        let mut info = DMatrix::zeros(k, k);
        let mut dbar = vec![0.0; k];
        let mut centered = vec![0.0; k];
        for t in &self.tasks {
            let p = softmax(&Self::utilities(&t.rows, beta));
            let chosen = &t.rows[t.chosen];
            // dbar = Σ p_j (x_j − x_c); the gradient contribution is −dbar
            dbar.iter_mut().for_each(|m| *m = 0.0);
            for (x, &pj) in t.rows.iter().zip(&p) {
                for ((m, &xi), &xc) in dbar.iter_mut().zip(x).zip(chosen) {
                    *m += pj * (xi - xc);
                }
            }
            for (g, &m) in grad.iter_mut().zip(&dbar) {
                *g -= m;
            }
            for (x, &pj) in t.rows.iter().zip(&p) {
                for (a, c) in centered.iter_mut().enumerate() {
                    *c = (x[a] - chosen[a]) - dbar[a];
                }
                for a in 0..k {
                    let da = pj * centered[a];
                    if da == 0.0 {
                        continue;
                    }
                    for b in 0..k {
                        info[(a, b)] += da * centered[b];
                    }
                }
            }
        }
        (grad, info)
    }

    /// Columns that add no rank to the information at β = 0, i.e. that are
    /// constant within every task or combinations of earlier columns.
    pub fn dependent_columns(&self) -> Vec<String> {
        let info = self.information(&vec![0.0; self.n_params()]);
        let mut kept: Vec<usize> = Vec::new();
        let mut dependent = Vec::new();
        for c in 0..self.n_params() {
            let diag = info[(c, c)];
            let residual = if kept.is_empty() {
                diag
            } else {
                let sub = DMatrix::from_fn(kept.len(), kept.len(), |i, j| info[(kept[i], kept[j])]);
                let h = DVector::from_fn(kept.len(), |i, _| info[(kept[i], c)]);
                match sub.cholesky() {
                    Some(chol) => diag - h.dot(&chol.solve(&h)),
                    None => 0.0,
                }
            };
            if diag <= 0.0 || residual <= 1e-9 * diag {
                dependent.push(self.names[c].clone());
            } else {
                kept.push(c);
            }
        }
        dependent
    }
}

/// Two-sided normal p-value.
pub fn normal_p_value(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn fit_conditional_logit(
    data: &ResponseDataset,
    covariates: &[String],
) -> Result<EstimationResult> {
    fit_conditional_logit_with(data, covariates, &FitOptions::default())
}

/// Maximum likelihood from β = 0. Stops with `converged = false` when the
/// iteration budget runs out or no halved step raises the log-likelihood.
pub fn fit_conditional_logit_with(
    data: &ResponseDataset,
    covariates: &[String],
    options: &FitOptions,
) -> Result<EstimationResult> {
    let problem = ClogitProblem::new(data, covariates)?;
    let dependent = problem.dependent_columns();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }
    let k = problem.n_params();
    let mut beta = vec![0.0; k];
    let mut ll = problem.log_likelihood(&beta);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (grad, info) = problem.derivatives(&beta);
        let g = DVector::from_vec(grad);
        let step = match info.clone().cholesky() {
            Some(chol) => chol.solve(&g),
            None => match info.lu().solve(&g) {
                Some(s) => s,
                None => return Err(Error::RankDeficient(problem.names().to_vec())),
            },
        };
        // a vanishing gradient with a non-vanishing Newton step is the
        // signature of separation, so both must be small
        let ll_scale = ll.abs().max(1.0);
        let relative = |v: &DVector<f64>, per_unit: f64| {
            v.iter()
                .zip(&beta)
                .map(|(x, b)| (x * b.abs().max(1.0).powf(per_unit)).abs())
                .fold(0.0, f64::max)
        };
        if relative(&g, 1.0) / ll_scale < options.gradient_tolerance
            && relative(&step, -1.0) < options.step_tolerance
        {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand_ll = problem.log_likelihood(&candidate);
            if cand_ll >= ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            break;
        };
        iterations += 1;
        if let Some(i) = next.iter().position(|b| b.abs() > options.separation_limit) {
            return Err(Error::Separation {
                name: problem.names()[i].clone(),
                limit: options.separation_limit,
            });
        }
        beta = next;
        ll = next_ll;
    }

    let info = problem.information(&beta);
    let vcov = match info.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => info
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(k, k, f64::NAN)),
    };
    // symmetrize away rounding
    let vcov = (&vcov + vcov.transpose()) * 0.5;
    let std_errors: Vec<f64> = (0..k).map(|i| vcov[(i, i)].sqrt()).collect();
    let z_values: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z_values.iter().map(|&z| normal_p_value(z)).collect();
    Ok(EstimationResult {
        coefficients: Coefficients::new(problem.names().to_vec(), beta)?,
        vcov: (0..k)
            .map(|i| (0..k).map(|j| vcov[(i, j)]).collect())
            .collect(),
        std_errors,
        z_values,
        p_values,
        log_likelihood: ll,
        iterations,
        converged,
        n_tasks: problem.n_tasks(),
    })
}
