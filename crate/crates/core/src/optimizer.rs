//! Coordinate-exchange search for D- and DB-efficient designs.
//!
//! Each start builds a random design and then sweeps every
//! (set, alternative, attribute) coordinate in lexicographic order, trying
//! every level of that attribute and keeping the best one when it lowers the
//! criterion by more than the tolerance. A start stops after a pass without
//! any change. Starts are independent and may run in parallel; the winner is
//! chosen by (criterion, start index), so the result never depends on
//! scheduling.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::{dummy_code, Coding};
use crate::design::CodedDesign;
use crate::error::{Error, Result};
use crate::mnl::{accumulate_set_information, d_error_from_information, running_mean};
use crate::prior::draw_priors;
use crate::settings::DesignSettings;

const RESAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub max_passes: usize,
    pub improvement_tolerance: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 5,
            max_passes: 20,
            improvement_tolerance: 1e-9,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn for_settings(settings: &DesignSettings) -> Self {
        Self {
            seed: settings.seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_starts == 0 || self.max_passes == 0 {
            return Err(Error::InvalidInput(
                "n_starts and max_passes must be at least 1".into(),
            ));
        }
        if !(self.improvement_tolerance > 0.0) {
            return Err(Error::InvalidInput(
                "improvement_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    D,
    Db,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub design: CodedDesign,
    pub criterion_value: f64,
    pub criterion_kind: CriterionKind,
    pub passes_used: usize,
    pub start_index: usize,
    /// Criterion after the random start, then after every accepted exchange.
    pub error_trace: Vec<f64>,
}

fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    rng
}

/// Random level assignment `[set][alt][attribute]` with no duplicate
/// alternative inside a set.
pub(crate) fn random_levels<R: Rng + ?Sized>(
    settings: &DesignSettings,
    rng: &mut R,
) -> Vec<Vec<Vec<usize>>> {
    let counts = settings.level_counts();
    (0..settings.n_sets)
        .map(|_| {
            let mut set: Vec<Vec<usize>> = Vec::with_capacity(settings.n_alts);
            for _ in 0..settings.n_alts {
                let mut alt = Vec::new();
                let mut unique = false;
                for _ in 0..RESAMPLE_ATTEMPTS {
                    alt = counts.iter().map(|&l| rng.random_range(0..l)).collect();
                    if !set.contains(&alt) {
                        unique = true;
                        break;
                    }
                }
                if !unique {
                    // cycle the first attribute, then fall back to the first
                    // unused profile of the full factorial
                    alt[0] = (alt[0] + 1) % counts[0];
                    if set.contains(&alt) {
                        alt = first_unused_profile(&counts, &set);
                    }
                }
                set.push(alt);
            }
            set
        })
        .collect()
}

fn first_unused_profile(counts: &[usize], used: &[Vec<usize>]) -> Vec<usize> {
    let mut profile = vec![0; counts.len()];
    loop {
        if !used.contains(&profile) {
            return profile;
        }
        // odometer increment; validation guarantees a free profile exists
        let mut a = counts.len() - 1;
        loop {
            profile[a] += 1;
            if profile[a] < counts[a] {
                break;
            }
            profile[a] = 0;
            a = a.checked_sub(1).expect("more alternatives than profiles");
        }
    }
}

/// A random design: uniform levels per attribute, within-set duplicates
/// resampled, opt-out rows appended when the settings ask for them.
pub fn random_initial_design<R: Rng + ?Sized>(
    settings: &DesignSettings,
    rng: &mut R,
) -> Result<CodedDesign> {
    settings.validate()?;
    let coding = dummy_code(settings)?;
    Ok(CodedDesign::from_levels(
        &coding,
        &random_levels(settings, rng),
        settings.opt_out,
    ))
}

/// Fixed criterion: the D-error at one β, or the mean D-error over a fixed
/// draw matrix.
struct Criterion {
    k: usize,
    betas: Vec<Vec<f64>>,
}

impl Criterion {
    fn new(settings: &DesignSettings) -> Result<(Self, CriterionKind)> {
        let prior = settings.prior();
        let k = settings.n_params();
        if settings.bayesian {
            let draws = draw_priors(&prior, settings.seed)?;
            Ok((Self::from_draws(&draws), CriterionKind::Db))
        } else {
            Ok((
                Self {
                    k,
                    betas: vec![prior.mean],
                },
                CriterionKind::D,
            ))
        }
    }

    fn from_draws(draws: &DMatrix<f64>) -> Self {
        Self {
            k: draws.ncols(),
            betas: (0..draws.nrows())
                .map(|r| draws.row(r).iter().copied().collect())
                .collect(),
        }
    }
}

/// One start's mutable search state with per-set information cached for
/// every β so a single-set change costs one set evaluation per β.
struct Search<'a> {
    coding: &'a Coding,
    criterion: &'a Criterion,
    levels: Vec<Vec<Vec<usize>>>,
    /// `[set][row]` coded vectors, opt-out row last when present.
    coded: Vec<Vec<Vec<f64>>>,
    /// `[beta][set]` flattened K×K contributions.
    set_info: Vec<Vec<Vec<f64>>>,
    /// `[beta]` totals, summed in set order.
    total: Vec<Vec<f64>>,
    value: f64,
}

impl<'a> Search<'a> {
    fn new(
        coding: &'a Coding,
        criterion: &'a Criterion,
        opt_out: bool,
        levels: Vec<Vec<Vec<usize>>>,
    ) -> Self {
        let k = criterion.k;
        let coded: Vec<Vec<Vec<f64>>> = levels
            .iter()
            .map(|set| {
                let mut rows: Vec<Vec<f64>> = set.iter().map(|alt| coding.encode(alt)).collect();
                if opt_out {
                    rows.push(vec![0.0; k]);
                }
                rows
            })
            .collect();
        let set_info = criterion
            .betas
            .iter()
            .map(|beta| {
                coded
                    .iter()
                    .map(|rows| {
                        let mut m = vec![0.0; k * k];
                        accumulate_set_information(rows, beta, &mut m);
                        m
                    })
                    .collect()
            })
            .collect();
        let mut search = Self {
            coding,
            criterion,
            levels,
            coded,
            set_info,
            total: Vec::new(),
            value: f64::INFINITY,
        };
        search.refresh_totals();
        search
    }

    /// Recomputes totals and the criterion from scratch, accumulating sets in
    /// order exactly as the public criterion functions do.
    fn refresh_totals(&mut self) {
        let k = self.criterion.k;
        self.total = self
            .criterion
            .betas
            .iter()
            .map(|beta| {
                let mut m = vec![0.0; k * k];
                for rows in &self.coded {
                    accumulate_set_information(rows, beta, &mut m);
                }
                m
            })
            .collect();
        self.value = running_mean(self.total.iter().map(|m| d_error_from_information(m, k)));
    }

    /// Criterion if set `s` had the given coded rows.
    fn evaluate_set(&self, s: usize, rows: &[Vec<f64>], scratch: &mut [f64], m: &mut [f64]) -> f64 {
        let k = self.criterion.k;
        running_mean(self.criterion.betas.iter().enumerate().map(|(b, beta)| {
            scratch.iter_mut().for_each(|v| *v = 0.0);
            accumulate_set_information(rows, beta, scratch);
            let old = &self.set_info[b][s];
            for (i, v) in m.iter_mut().enumerate() {
                *v = self.total[b][i] - old[i] + scratch[i];
            }
            d_error_from_information(m, k)
        }))
    }

    fn replace_alternative(&mut self, s: usize, j: usize, alt: Vec<usize>) {
        let k = self.criterion.k;
        self.coded[s][j] = self.coding.encode(&alt);
        self.levels[s][j] = alt;
        for (b, beta) in self.criterion.betas.iter().enumerate() {
            let mut m = vec![0.0; k * k];
            accumulate_set_information(&self.coded[s], beta, &mut m);
            self.set_info[b][s] = m;
        }
        self.refresh_totals();
    }

    /// One sweep over every coordinate; returns whether anything changed.
    fn pass(&mut self, tolerance: f64, trace: &mut Vec<f64>) -> bool {
        let k = self.criterion.k;
        let counts = self.coding.level_counts();
        let mut scratch = vec![0.0; k * k];
        let mut m = vec![0.0; k * k];
        let mut changed = false;
        for s in 0..self.levels.len() {
            for j in 0..self.levels[s].len() {
                for (a, &n_levels) in counts.iter().enumerate() {
                    let current = self.levels[s][j][a];
                    let mut best: Option<(f64, usize)> = None;
                    let mut rows = self.coded[s].clone();
                    for level in 0..n_levels {
                        if level == current {
                            continue;
                        }
                        let mut alt = self.levels[s][j].clone();
                        alt[a] = level;
                        if self.levels[s]
                            .iter()
                            .enumerate()
                            .any(|(other, existing)| other != j && *existing == alt)
                        {
                            continue;
                        }
                        self.coding.encode_into(&alt, &mut rows[j]);
                        let value = self.evaluate_set(s, &rows, &mut scratch, &mut m);
                        if best.is_none_or(|(v, _)| value < v) {
                            best = Some((value, level));
                        }
                    }
                    if let Some((value, level)) = best {
                        if value < self.value - tolerance {
                            let mut alt = self.levels[s][j].clone();
                            alt[a] = level;
                            self.replace_alternative(s, j, alt);
                            trace.push(self.value);
                            changed = true;
                        }
                    }
                }
            }
        }
        changed
    }
}

struct StartOutcome {
    levels: Vec<Vec<Vec<usize>>>,
    value: f64,
    passes: usize,
    trace: Vec<f64>,
}

fn run_start(
    settings: &DesignSettings,
    config: &OptimizerConfig,
    coding: &Coding,
    criterion: &Criterion,
    start: usize,
) -> StartOutcome {
    let mut rng = start_rng(config.seed, start);
    let levels = random_levels(settings, &mut rng);
    let mut search = Search::new(coding, criterion, settings.opt_out, levels);
    let mut trace = vec![search.value];
    let mut passes = 0;
    while passes < config.max_passes {
        passes += 1;
        if !search.pass(config.improvement_tolerance, &mut trace) {
            break;
        }
    }
    StartOutcome {
        value: search.value,
        levels: search.levels,
        passes,
        trace,
    }
}

/// Multi-start coordinate exchange. Uses the D-error at the prior mean, or
/// the DB-error over one draw matrix (seeded by `settings.seed`) when the
/// settings are Bayesian.
pub fn coordinate_exchange(
    settings: &DesignSettings,
    config: &OptimizerConfig,
) -> Result<OptimResult> {
    settings.validate()?;
    config.validate()?;
    let coding = dummy_code(settings)?;
    let (criterion, criterion_kind) = Criterion::new(settings)?;

    let outcomes: Vec<StartOutcome> = (0..config.n_starts)
        .into_par_iter()
        .map(|start| run_start(settings, config, &coding, &criterion, start))
        .collect();

    let (start_index, best) = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .expect("at least one start");
    if best.value.is_infinite() {
        return Err(Error::DegenerateDesignSpace);
    }
    Ok(OptimResult {
        design: CodedDesign::from_levels(&coding, &best.levels, settings.opt_out),
        criterion_value: best.value,
        criterion_kind,
        passes_used: best.passes,
        start_index,
        error_trace: best.trace,
    })
}

/// Coordinate exchange with the default configuration and the settings' seed.
pub fn generate_design(settings: &DesignSettings) -> Result<OptimResult> {
    coordinate_exchange(settings, &OptimizerConfig::for_settings(settings))
}
