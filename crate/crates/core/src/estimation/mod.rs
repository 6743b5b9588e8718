//! Response data, conditional logit estimation, and willingness to pay.

mod clogit;
mod dataset;
mod wtp;

pub use clogit::{
    fit_conditional_logit, fit_conditional_logit_with, normal_p_value, ClogitProblem,
    EstimationResult, FitOptions,
};
pub use dataset::{
    recode_price_attribute, recode_price_continuous, ResponseDataset, ResponseRow, CONT_PRICE,
};
pub use wtp::{
    coefficient_plot_data, wtp, CoefficientInterval, WtpEntry, WtpResult, PRICE_EPS, Z_95,
};
