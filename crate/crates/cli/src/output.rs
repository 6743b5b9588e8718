use std::fmt::Write;

use dce_core::{EstimationResult, WtpResult};

pub fn coefficient_table(fit: &EstimationResult) -> String {
    let width = fit
        .coefficients
        .names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(11);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>12} {:>12} {:>9} {:>9}",
        "coefficient", "estimate", "std.err", "z", "p"
    );
    for (i, name) in fit.coefficients.names.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<width$} {:>12.6} {:>12.6} {:>9.3} {:>9.4}",
            name, fit.coefficients.beta[i], fit.std_errors[i], fit.z_values[i], fit.p_values[i]
        );
    }
    let _ = writeln!(
        out,
        "log-likelihood: {:.4}  tasks: {}  iterations: {}  converged: {}",
        fit.log_likelihood, fit.n_tasks, fit.iterations, fit.converged
    );
    out
}

pub fn wtp_table(result: &WtpResult) -> String {
    let width = result
        .entries
        .iter()
        .map(|e| e.name.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let mut out = String::new();
    let _ = writeln!(out, "willingness to pay per unit of {}", result.price);
    let _ = writeln!(
        out,
        "{:<width$} {:>12} {:>12} {:>12} {:>12}",
        "attribute", "wtp", "std.err", "ci.low", "ci.high"
    );
    for e in &result.entries {
        let _ = writeln!(
            out,
            "{:<width$} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            e.name, e.estimate, e.std_error, e.ci_low, e.ci_high
        );
    }
    out
}
