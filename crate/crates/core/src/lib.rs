//! Discrete choice experiments: efficient design generation, decoding,
//! live surveys with serial design updates, and conditional logit
//! estimation with willingness to pay.
//!
//! The typical pipeline:
//!
//! ```
//! use dce_core::{generate_design, simulate_choices, fit_conditional_logit};
//! use dce_core::{Coefficients, DesignSettings};
//!
//! let settings = DesignSettings::from_levels(&[3, 2, 2], 2, 8).with_seed(7);
//! let result = generate_design(&settings).unwrap();
//! let beta = Coefficients::from_values(vec![0.5, 1.0, -0.4, 0.3]);
//! let data = simulate_choices(&result.design, &beta, 200, 1).unwrap();
//! let fit = fit_conditional_logit(&data, &data.covariate_names).unwrap();
//! assert!(fit.converged);
//! ```

pub mod codec;
pub mod coding;
pub mod design;
pub mod error;
pub mod estimation;
pub mod mnl;
pub mod optimizer;
pub mod prior;
pub mod serial;
pub mod settings;
pub mod simulate;

pub use codec::{
    decode_design, decode_design_with_labels, export_design, import_design, label_design,
    render_plain_text, DecodedChoiceSet, DesignFormat, LabeledDesign,
};
pub use coding::{dummy_code, Coding};
pub use design::{ChoiceProbabilities, CodedDesign, Coefficients, DesignRow};
pub use error::{Error, Result};
pub use estimation::{
    coefficient_plot_data, fit_conditional_logit, recode_price_attribute, recode_price_continuous,
    wtp, EstimationResult, ResponseDataset, WtpResult,
};
pub use mnl::{d_error, db_error, db_error_with_draws, fisher_information, mnl_probabilities};
pub use optimizer::{
    coordinate_exchange, generate_design, random_initial_design, CriterionKind, OptimResult,
    OptimizerConfig,
};
pub use prior::draw_priors;
pub use serial::{SerialMode, Survey, SurveyDefinition};
pub use settings::{
    count_full_factorial, count_unordered_pairs, validate_settings, AttributeSpec, DesignSettings,
    PriorSpec,
};
pub use simulate::simulate_choices;
