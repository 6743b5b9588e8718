//! Live survey orchestration with optional serial design regeneration.
//!
//! Every session is pinned to the design version that was current when it
//! started. When a serial trigger fires, the model is re-fitted on the
//! responses of the respondents completed so far and a Bayesian design is
//! generated around the estimates; only sessions started afterwards see it.
//!
//! Regeneration is split into [`Survey::prepare_update`] (snapshot),
//! [`UpdateJob::run`] (pure and possibly slow) and [`Survey::apply_update`],
//! so callers can run the expensive step outside any lock.
//! [`Survey::maybe_update_design`] chains the three synchronously.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    decode_design_with_labels, default_alternative_labels, label_design, DecodedChoiceSet,
    LabeledDesign, OptimizerSummary,
};
use crate::design::Coefficients;
use crate::error::{Error, Result};
use crate::estimation::{fit_conditional_logit, ResponseDataset, ResponseRow};
use crate::mnl::choice_probabilities;
use crate::optimizer::{coordinate_exchange, OptimizerConfig};
use crate::settings::{check_psd, DesignSettings, PriorSpec};
use crate::simulate::{sample_index, task_gid};

/// Diagonal ridge added to the estimated covariance before it becomes a prior.
pub const PRIOR_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SerialMode {
    None,
    PerRespondent,
    PerBatch {
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_batch() -> usize {
    5
}

impl Default for SerialMode {
    fn default() -> Self {
        Self::None
    }
}

impl SerialMode {
    pub fn per_batch(batch_size: usize) -> Self {
        Self::PerBatch { batch_size }
    }

    /// Whether completing respondent number `completed` triggers an update.
    pub fn triggers_at(&self, completed: usize) -> bool {
        match *self {
            Self::None => false,
            Self::PerRespondent => completed > 0,
            Self::PerBatch { batch_size } => completed > 0 && completed % batch_size == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDefinition {
    pub design: LabeledDesign,
    #[serde(default)]
    pub intro_text: String,
    #[serde(default)]
    pub final_text: String,
    pub alternative_labels: Vec<String>,
    #[serde(default)]
    pub serial_mode: SerialMode,
    /// Settings reused, with updated priors, whenever the design is regenerated.
    pub settings: DesignSettings,
    /// Search configuration for regeneration; its seed is replaced by the
    /// derived per-trigger seed.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

impl SurveyDefinition {
    pub fn new(design: LabeledDesign, settings: DesignSettings) -> Self {
        Self {
            alternative_labels: default_alternative_labels(&design.coded),
            design,
            intro_text: String::new(),
            final_text: String::new(),
            serial_mode: SerialMode::None,
            settings,
            optimizer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        self.design.coded.validate()?;
        if self.settings.n_params() != self.design.coded.n_params()
            || self.settings.n_sets != self.design.coded.n_sets
            || self.settings.rows_per_set() != self.design.coded.alts_per_set
        {
            return Err(Error::InvalidInput(
                "settings do not match the design's geometry".into(),
            ));
        }
        if self.alternative_labels.len() != self.design.coded.alts_per_set {
            return Err(Error::InvalidInput(format!(
                "{} alternative labels for {} alternatives per set",
                self.alternative_labels.len(),
                self.design.coded.alts_per_set
            )));
        }
        if let SerialMode::PerBatch { batch_size: 0 } = self.serial_mode {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVersion {
    pub version: usize,
    /// Completed respondents when this version took over.
    pub at_respondents: usize,
    pub design: LabeledDesign,
    pub prior: PriorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub respondent_id: u64,
    pub design_version: usize,
    /// 1-based index of the next set to answer; `n_sets + 1` once done.
    pub next_set: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub at_respondents: usize,
    /// New version on success, `None` when the update was skipped.
    pub version: Option<usize>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurveyState {
    pub current_version: usize,
    pub completed_respondents: usize,
    pub responses: ResponseDataset,
    pub design_history: Vec<DesignVersion>,
    pub sessions: BTreeMap<u64, Session>,
    pub respondent_versions: BTreeMap<u64, usize>,
    /// Respondent ids in completion order.
    pub completion_order: Vec<u64>,
    /// Trigger points (completed-respondent counts) not yet processed.
    pub pending_updates: Vec<usize>,
    pub update_log: Vec<UpdateRecord>,
    pub next_respondent: u64,
    pub next_session: u64,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentedSet {
    pub set: usize,
    pub n_sets: usize,
    pub design_version: usize,
    pub choice_set: DecodedChoiceSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStart {
    pub session: u64,
    pub respondent_id: u64,
    pub design_version: usize,
    pub intro_text: String,
    pub first: PresentedSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordOutcome {
    Next { next: PresentedSet },
    Completed { final_text: String, trigger: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UpdateOutcome {
    Unchanged {
        reason: Option<String>,
    },
    Regenerated {
        version: usize,
        at_respondents: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnswerOutcome {
    Next {
        next: PresentedSet,
    },
    Finished {
        final_text: String,
        update: UpdateOutcome,
    },
}

/// Snapshot needed to regenerate a design; independent of the survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateJob {
    pub at_respondents: usize,
    pub responses: ResponseDataset,
    pub settings: DesignSettings,
    pub optimizer: OptimizerConfig,
    pub attribute_names: Vec<String>,
    pub level_names: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UpdateComputation {
    Regenerated {
        at_respondents: usize,
        design: LabeledDesign,
        prior: PriorSpec,
    },
    Skipped {
        at_respondents: usize,
        reason: String,
    },
}

impl UpdateJob {
    /// Fits the model and searches a new design. Failures become a skip with
    /// a reason rather than an error.
    pub fn run(&self) -> UpdateComputation {
        let skip = |reason: String| UpdateComputation::Skipped {
            at_respondents: self.at_respondents,
            reason,
        };
        let fit = match fit_conditional_logit(&self.responses, &self.responses.covariate_names) {
            Ok(fit) => fit,
            Err(e) => return skip(format!("estimation failed: {e}")),
        };
        if !fit.converged {
            return skip(format!(
                "estimation did not converge in {} iterations",
                fit.iterations
            ));
        }
        let vcov = fit.vcov_matrix();
        if let Err(e) = check_psd(&vcov) {
            return skip(format!("estimated covariance unusable: {e}"));
        }
        let k = vcov.nrows();
        let mut prior = PriorSpec {
            mean: fit.coefficients.beta.clone(),
            covariance: None,
            n_draws: self.settings.priors.n_draws,
            draw_seed_offset: self.settings.priors.draw_seed_offset,
        };
        prior.set_covariance(&(vcov + DMatrix::identity(k, k) * PRIOR_RIDGE));

        let mut settings = self.settings.clone();
        settings.bayesian = true;
        settings.priors = prior.clone();
        settings.seed = self.settings.seed.wrapping_add(self.at_respondents as u64);
        let config = OptimizerConfig {
            seed: settings.seed,
            ..self.optimizer.clone()
        };
        let result = match coordinate_exchange(&settings, &config) {
            Ok(r) => r,
            Err(e) => return skip(format!("design search failed: {e}")),
        };
        match label_design(
            &result.design,
            self.attribute_names.clone(),
            self.level_names.clone(),
        ) {
            Ok(mut design) => {
                design.settings = Some(settings);
                design.optimizer = Some(OptimizerSummary::from(&result));
                UpdateComputation::Regenerated {
                    at_respondents: self.at_respondents,
                    design,
                    prior,
                }
            }
            Err(e) => skip(format!("labelling failed: {e}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub definition: SurveyDefinition,
    pub state: SurveyState,
}

impl Survey {
    pub fn new(definition: SurveyDefinition) -> Result<Self> {
        definition.validate()?;
        let state = SurveyState {
            responses: ResponseDataset::new(definition.design.coded.column_names.clone()),
            design_history: vec![DesignVersion {
                version: 0,
                at_respondents: 0,
                design: definition.design.clone(),
                prior: definition.settings.prior(),
            }],
            next_respondent: 1,
            next_session: 1,
            ..SurveyState::default()
        };
        Ok(Self { definition, state })
    }

    pub fn current_design(&self) -> &LabeledDesign {
        &self.state.design_history[self.state.current_version].design
    }

    pub fn is_closed(&self) -> bool {
        self.state.closed
    }

    pub fn n_sets(&self) -> usize {
        self.definition.design.coded.n_sets
    }

    /// Number of regenerations performed so far.
    pub fn regenerations(&self) -> usize {
        self.state.design_history.len() - 1
    }

    fn present(&self, version: usize, set: usize) -> Result<PresentedSet> {
        let design = &self.state.design_history[version].design;
        let decoded = decode_design_with_labels(design, &self.definition.alternative_labels)?;
        Ok(PresentedSet {
            set,
            n_sets: self.n_sets(),
            design_version: version,
            choice_set: decoded[set - 1].clone(),
        })
    }

    pub fn start_session(&mut self) -> Result<SessionStart> {
        if self.state.closed {
            return Err(Error::SurveyClosed);
        }
        let version = self.state.current_version;
        let first = self.present(version, 1)?;
        let session = self.state.next_session;
        let respondent_id = self.state.next_respondent;
        self.state.next_session += 1;
        self.state.next_respondent += 1;
        self.state.sessions.insert(
            session,
            Session {
                respondent_id,
                design_version: version,
                next_set: 1,
            },
        );
        self.state
            .respondent_versions
            .insert(respondent_id, version);
        Ok(SessionStart {
            session,
            respondent_id,
            design_version: version,
            intro_text: self.definition.intro_text.clone(),
            first,
        })
    }

    /// The set a session is currently looking at, or `None` once finished.
    pub fn current_set(&self, session: u64) -> Result<Option<PresentedSet>> {
        let s = self
            .state
            .sessions
            .get(&session)
            .ok_or_else(|| Error::UnknownSession(session.to_string()))?;
        if s.next_set > self.n_sets() {
            return Ok(None);
        }
        self.present(s.design_version, s.next_set).map(Some)
    }

    /// Stores one answer (`choice` is the 1-based alternative index) without
    /// running any pending design update.
    pub fn record_answer(&mut self, session: u64, choice: usize) -> Result<RecordOutcome> {
        if self.state.closed {
            return Err(Error::SurveyClosed);
        }
        let n_sets = self.n_sets();
        let s = self
            .state
            .sessions
            .get(&session)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(session.to_string()))?;
        if s.next_set > n_sets {
            return Err(Error::SessionComplete(session.to_string()));
        }
        let design = &self.state.design_history[s.design_version].design.coded;
        let rows = design.set_rows(s.next_set);
        if choice == 0 || choice > rows.len() {
            return Err(Error::ChoiceOutOfRange {
                choice,
                n_alts: rows.len(),
            });
        }
        let gid = task_gid(s.respondent_id - 1, n_sets, s.next_set);
        let new_rows: Vec<ResponseRow> = rows
            .iter()
            .map(|row| ResponseRow {
                gid,
                respondent: s.respondent_id,
                alt: row.alt,
                choice: u8::from(row.alt == choice),
                covariates: row.x.clone(),
            })
            .collect();
        self.state.responses.rows.extend(new_rows);

        let next_set = s.next_set + 1;
        self.state
            .sessions
            .get_mut(&session)
            .expect("checked above")
            .next_set = next_set;
        if next_set <= n_sets {
            return Ok(RecordOutcome::Next {
                next: self.present(s.design_version, next_set)?,
            });
        }

        self.state.completed_respondents += 1;
        self.state.completion_order.push(s.respondent_id);
        let completed = self.state.completed_respondents;
        let trigger = self.definition.serial_mode.triggers_at(completed);
        if trigger {
            self.state.pending_updates.push(completed);
        }
        Ok(RecordOutcome::Completed {
            final_text: self.definition.final_text.clone(),
            trigger,
        })
    }

    /// Snapshot for the oldest pending trigger, fitted on the respondents
    /// completed up to that trigger.
    pub fn prepare_update(&self) -> Option<UpdateJob> {
        let &at = self.state.pending_updates.first()?;
        let included: BTreeSet<u64> = self.state.completion_order[..at].iter().copied().collect();
        let responses = ResponseDataset {
            covariate_names: self.state.responses.covariate_names.clone(),
            rows: self
                .state
                .responses
                .rows
                .iter()
                .filter(|r| included.contains(&r.respondent))
                .cloned()
                .collect(),
        };
        Some(UpdateJob {
            at_respondents: at,
            responses,
            settings: self.definition.settings.clone(),
            optimizer: self.definition.optimizer.clone().unwrap_or_default(),
            attribute_names: self.definition.design.attribute_names.clone(),
            level_names: self.definition.design.level_names.clone(),
        })
    }

    /// Installs a finished computation. Computations for a trigger that is no
    /// longer pending are ignored.
    pub fn apply_update(&mut self, computation: UpdateComputation) -> UpdateOutcome {
        let at = match &computation {
            UpdateComputation::Regenerated { at_respondents, .. }
            | UpdateComputation::Skipped { at_respondents, .. } => *at_respondents,
        };
        let Some(pos) = self.state.pending_updates.iter().position(|&p| p == at) else {
            return UpdateOutcome::Unchanged {
                reason: Some(format!("no pending update at {at} respondents")),
            };
        };
        self.state.pending_updates.remove(pos);
        match computation {
            UpdateComputation::Regenerated {
                at_respondents,
                design,
                prior,
            } => {
                let version = self.state.design_history.len();
                self.state.design_history.push(DesignVersion {
                    version,
                    at_respondents,
                    design,
                    prior,
                });
                self.state.current_version = version;
                self.state.update_log.push(UpdateRecord {
                    at_respondents,
                    version: Some(version),
                    reason: None,
                });
                UpdateOutcome::Regenerated {
                    version,
                    at_respondents,
                }
            }
            UpdateComputation::Skipped {
                at_respondents,
                reason,
            } => {
                self.state.update_log.push(UpdateRecord {
                    at_respondents,
                    version: None,
                    reason: Some(reason.clone()),
                });
                UpdateOutcome::Unchanged {
                    reason: Some(reason),
                }
            }
        }
    }

    /// Runs every pending update synchronously; reports the last one.
    pub fn maybe_update_design(&mut self) -> UpdateOutcome {
        let mut outcome = UpdateOutcome::Unchanged { reason: None };
        while let Some(job) = self.prepare_update() {
            outcome = self.apply_update(job.run());
        }
        outcome
    }

    /// Records an answer and, when it completes a respondent, runs any
    /// triggered design update before returning.
    pub fn submit_answer(&mut self, session: u64, choice: usize) -> Result<AnswerOutcome> {
        match self.record_answer(session, choice)? {
            RecordOutcome::Next { next } => Ok(AnswerOutcome::Next { next }),
            RecordOutcome::Completed { final_text, .. } => Ok(AnswerOutcome::Finished {
                final_text,
                update: self.maybe_update_design(),
            }),
        }
    }

    /// Stops accepting sessions and answers; returns the collected data.
    pub fn close(&mut self) -> ResponseDataset {
        self.state.closed = true;
        self.state.responses.clone()
    }

    /// One synthetic respondent answering every set by sampling from the MNL
    /// probabilities at `beta`. Returns the respondent's final outcome.
    pub fn simulate_respondent<R: Rng + ?Sized>(
        &mut self,
        beta: &Coefficients,
        rng: &mut R,
    ) -> Result<AnswerOutcome> {
        let start = self.start_session()?;
        let version = start.design_version;
        loop {
            let set = self.state.sessions[&start.session].next_set;
            let rows = self.state.design_history[version]
                .design
                .coded
                .set_rows(set);
            let xs: Vec<&[f64]> = rows.iter().map(|r| r.x.as_slice()).collect();
            let probs = choice_probabilities(&xs, &beta.beta);
            let choice = sample_index(&probs, rng.random::<f64>()) + 1;
            if let outcome @ AnswerOutcome::Finished { .. } =
                self.submit_answer(start.session, choice)?
            {
                return Ok(outcome);
            }
        }
    }

    /// Runs `n` synthetic respondents with a seeded generator.
    pub fn simulate_respondents(
        &mut self,
        beta: &Coefficients,
        n: usize,
        seed: u64,
    ) -> Result<Vec<UpdateOutcome>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| match self.simulate_respondent(beta, &mut rng)? {
                AnswerOutcome::Finished { update, .. } => Ok(update),
                AnswerOutcome::Next { .. } => unreachable!("simulate_respondent runs to the end"),
            })
            .collect()
    }
}
