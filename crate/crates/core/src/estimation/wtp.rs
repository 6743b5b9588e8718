use serde::{Deserialize, Serialize};

use super::clogit::EstimationResult;
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile used for every interval.
pub const Z_95: f64 = 1.96;

/// Price coefficients at or below this magnitude make WTP undefined.
pub const PRICE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtpEntry {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtpResult {
    pub price: String,
    pub entries: Vec<WtpEntry>,
}

/// Willingness to pay `−β_k / β_price` per target level, with delta-method
/// standard errors and 95% intervals.
pub fn wtp(est: &EstimationResult, price_name: &str, targets: &[String]) -> Result<WtpResult> {
    let p = est
        .index_of(price_name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown price coefficient '{price_name}'")))?;
    if targets.is_empty() {
        return Err(Error::InvalidInput("no WTP targets given".into()));
    }
    let beta = &est.coefficients.beta;
    let bp = beta[p];
    if bp.abs() <= PRICE_EPS {
        return Err(Error::DegeneratePrice(price_name.to_string()));
    }
    let entries = targets
        .iter()
        .map(|name| {
            if name == price_name {
                return Err(Error::InvalidInput(format!(
                    "'{name}' is the price coefficient and cannot be a WTP target"
                )));
            }
            let k = est.index_of(name).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown WTP target '{name}' (base levels have no coefficient)"
                ))
            })?;
            let bk = beta[k];
            let (var_k, var_p, cov_kp) = (est.vcov[k][k], est.vcov[p][p], est.vcov[k][p]);
            let estimate = -bk / bp;
            let variance = var_k / bp.powi(2) + bk.powi(2) * var_p / bp.powi(4)
                - 2.0 * bk * cov_kp / bp.powi(3);
            let std_error = variance.max(0.0).sqrt();
            Ok(WtpEntry {
                name: name.clone(),
                estimate,
                std_error,
                ci_low: estimate - Z_95 * std_error,
                ci_high: estimate + Z_95 * std_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WtpResult {
        price: price_name.to_string(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInterval {
    pub name: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Points and 95% intervals for a coefficient plot, in model order.
pub fn coefficient_plot_data(est: &EstimationResult) -> Vec<CoefficientInterval> {
    est.coefficients
        .names
        .iter()
        .zip(&est.coefficients.beta)
        .zip(&est.std_errors)
        .map(|((name, &b), &se)| CoefficientInterval {
            name: name.clone(),
            estimate: b,
            ci_low: b - Z_95 * se,
            ci_high: b + Z_95 * se,
        })
        .collect()
}
