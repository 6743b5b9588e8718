//! Experiment settings: attributes and their levels, choice-set geometry,
//! priors, and the feasibility checks run before any design is searched.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance applied to prior covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Draw count used when a prior does not specify one.
pub const DEFAULT_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub levels: Vec<String>,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            levels: levels.iter().map(|l| l.to_string()).collect(),
        }
    }

    /// Attribute with `count` levels labelled "1", "2", ...
    pub fn numbered(name: impl Into<String>, count: usize) -> Self {
        Self {
            name: name.into(),
            levels: (1..=count).map(|l| l.to_string()).collect(),
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Normal prior on the coded coefficients.
///
/// An empty `mean` stands for the zero vector and a missing `covariance` for
/// the identity, so a default prior adapts to whatever K the attributes imply.
/// Use [`DesignSettings::prior`] to obtain the resolved form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(default)]
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default)]
    pub draw_seed_offset: u64,
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mean: Vec::new(),
            covariance: None,
            n_draws: DEFAULT_DRAWS,
            draw_seed_offset: 0,
        }
    }
}

impl PriorSpec {
    /// Zero mean, identity covariance.
    pub fn zero(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            ..Self::default()
        }
    }

    pub fn with_mean(mean: Vec<f64>) -> Self {
        Self {
            mean,
            ..Self::default()
        }
    }

    pub fn k(&self) -> usize {
        self.mean.len()
    }

    /// Covariance as a dense matrix; identity when unset.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        match &self.covariance {
            Some(rows) => DMatrix::from_fn(k, k, |i, j| rows[i][j]),
            None => DMatrix::identity(k, k),
        }
    }

    pub fn set_covariance(&mut self, cov: &DMatrix<f64>) {
        self.covariance = Some(
            (0..cov.nrows())
                .map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect())
                .collect(),
        );
    }

    fn check(&self, k: usize, errors: &mut Vec<String>) {
        if self.mean.len() != k {
            errors.push(format!(
                "priors: expected {k} values (one per coded column), got {}",
                self.mean.len()
            ));
            return;
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            errors.push("priors: mean contains non-finite values".into());
        }
        if self.n_draws == 0 {
            errors.push("priors: number of draws must be at least 1".into());
        }
        if let Some(rows) = &self.covariance {
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                errors.push(format!("priors: covariance must be {k}x{k}"));
                return;
            }
            let cov = self.covariance_matrix();
            if let Err(e) = check_psd(&cov) {
                errors.push(format!("priors: {e}"));
            }
        }
    }
}

/// Symmetric within [`SYMMETRY_TOL`] and no eigenvalue below `-SYMMETRY_TOL`.
pub(crate) fn check_psd(cov: &DMatrix<f64>) -> std::result::Result<(), String> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err("covariance contains non-finite values".into());
    }
    let n = cov.nrows();
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(format!("covariance is not symmetric at ({i}, {j})"));
            }
        }
    }
    if n == 0 {
        return Ok(());
    }
    let min = cov.clone().symmetric_eigen().eigenvalues.min();
    if min < -SYMMETRY_TOL {
        return Err(format!(
            "covariance is not positive semidefinite (min eigenvalue {min:e})"
        ));
    }
    Ok(())
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSettings {
    pub attributes: Vec<AttributeSpec>,
    /// Non-opt-out alternatives per choice set.
    pub n_alts: usize,
    pub n_sets: usize,
    #[serde(default)]
    pub opt_out: bool,
    #[serde(default)]
    pub bayesian: bool,
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl DesignSettings {
    /// Settings with numbered attributes ("att1", "att2", ...) and levels.
    pub fn from_levels(levels: &[usize], n_alts: usize, n_sets: usize) -> Self {
        let attributes = levels
            .iter()
            .enumerate()
            .map(|(i, &n)| AttributeSpec::numbered(format!("att{}", i + 1), n))
            .collect();
        Self {
            attributes,
            n_alts,
            n_sets,
            opt_out: false,
            bayesian: false,
            priors: PriorSpec::default(),
            seed: 0,
        }
    }

    pub fn with_opt_out(mut self, opt_out: bool) -> Self {
        self.opt_out = opt_out;
        self
    }

    pub fn with_bayesian(mut self, bayesian: bool) -> Self {
        self.bayesian = bayesian;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_priors(mut self, priors: PriorSpec) -> Self {
        self.priors = priors;
        self
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .map(AttributeSpec::n_levels)
            .collect()
    }

    /// Number of coded parameters, Σ (L_a − 1).
    pub fn n_params(&self) -> usize {
        self.attributes
            .iter()
            .map(|a| a.n_levels().saturating_sub(1))
            .sum()
    }

    /// Rows per choice set, counting the opt-out.
    pub fn rows_per_set(&self) -> usize {
        self.n_alts + usize::from(self.opt_out)
    }

    /// The prior with defaults filled in for the current K.
    pub fn prior(&self) -> PriorSpec {
        let mut prior = self.priors.clone();
        if prior.mean.is_empty() {
            prior.mean = vec![0.0; self.n_params()];
        }
        prior
    }

    pub fn validate(&self) -> Result<()> {
        match validate_settings(self) {
            errors if errors.is_empty() => Ok(()),
            errors => Err(Error::InvalidSettings(errors)),
        }
    }
}

/// Size of the full factorial, Π L_a.
pub fn count_full_factorial(levels: &[usize]) -> Result<u64> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("no attributes given".into()));
    }
    levels.iter().try_fold(1u64, |acc, &l| {
        if l < 2 {
            return Err(Error::InvalidInput(format!(
                "every attribute needs at least 2 levels, got {l}"
            )));
        }
        acc.checked_mul(l as u64)
            .ok_or_else(|| Error::InvalidInput("full factorial size overflows u64".into()))
    })
}

/// Number of distinct unordered pairs of profiles, n(n − 1)/2.
pub fn count_unordered_pairs(n_profiles: u64) -> Result<u64> {
    if n_profiles < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 profiles to form a pair, got {n_profiles}"
        )));
    }
    // one of n, n-1 is even
    let (a, b) = if n_profiles % 2 == 0 {
        (n_profiles / 2, n_profiles - 1)
    } else {
        (n_profiles, (n_profiles - 1) / 2)
    };
    a.checked_mul(b)
        .ok_or_else(|| Error::InvalidInput("pair count overflows u64".into()))
}

/// Checks every settings rule and returns one message per violation.
/// An empty list means the settings are usable.
pub fn validate_settings(settings: &DesignSettings) -> Vec<String> {
    let mut errors = Vec::new();

    if settings.attributes.is_empty() {
        errors.push("at least one attribute is required".to_string());
    }
    let mut names = HashSet::new();
    for (i, attr) in settings.attributes.iter().enumerate() {
        let label = if attr.name.is_empty() {
            format!("attribute {}", i + 1)
        } else {
            format!("attribute '{}'", attr.name)
        };
        if attr.name.trim().is_empty() {
            errors.push(format!("{label}: name must not be empty"));
        } else if attr.name.contains('.') {
            errors.push(format!("{label}: name must not contain '.'"));
        } else if !names.insert(attr.name.as_str()) {
            errors.push(format!("{label}: duplicate attribute name"));
        }
        if attr.levels.len() < 2 {
            errors.push(format!(
                "{label}: needs at least 2 levels, got {}",
                attr.levels.len()
            ));
        }
        let mut seen = HashSet::new();
        for level in &attr.levels {
            if level.trim().is_empty() {
                errors.push(format!("{label}: level labels must not be empty"));
            } else if !seen.insert(level.as_str()) {
                errors.push(format!("{label}: duplicate level '{level}'"));
            }
        }
    }

    if settings.n_alts < 2 {
        errors.push(format!(
            "at least 2 alternatives per set are required, got {}",
            settings.n_alts
        ));
    }
    if settings.n_sets < 1 {
        errors.push("at least 1 choice set is required".to_string());
    }

    let well_formed =
        !settings.attributes.is_empty() && settings.attributes.iter().all(|a| a.levels.len() >= 2);
    if well_formed {
        let k = settings.n_params();
        if let Ok(full) = count_full_factorial(&settings.level_counts()) {
            if settings.n_alts as u64 > full {
                errors.push(format!(
                    "{} alternatives per set exceed the {full} distinct profiles",
                    settings.n_alts
                ));
            }
        }
        if settings.n_alts >= 1 {
            let dof = settings.n_sets * (settings.n_alts - 1);
            if dof < k {
                errors.push(format!(
                    "too few sets: {} sets x ({} alternatives - 1) = {dof} < {k} parameters",
                    settings.n_sets, settings.n_alts
                ));
            }
        }
        settings.prior().check(k, &mut errors);
    }

    errors
}
