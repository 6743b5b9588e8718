//! In-memory view of the data directory plus the background work that
//! mutates it.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use dce_core::serial::{UpdateComputation, UpdateOutcome};
use dce_core::{generate_design, DesignSettings, LabeledDesign, Survey};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::store::{id_number, make_id, Kind, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDesign {
    pub id: String,
    pub design: LabeledDesign,
}

/// A survey with its definition and state. `revision` counts persisted
/// mutations and stands in for wall-clock timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSurvey {
    pub id: String,
    pub design_id: String,
    pub revision: u64,
    pub survey: Survey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobKind {
    Design {
        settings: DesignSettings,
    },
    Regeneration {
        survey_id: String,
        at_respondents: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    #[serde(default)]
    pub result: Option<Value>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Default)]
struct Counters {
    design: u64,
    survey: u64,
    job: u64,
}

pub type SurveyHandle = Arc<tokio::sync::Mutex<StoredSurvey>>;

pub struct AppState {
    store: Store,
    designs: RwLock<BTreeMap<String, Arc<StoredDesign>>>,
    surveys: RwLock<BTreeMap<String, SurveyHandle>>,
    jobs: Mutex<BTreeMap<String, Job>>,
    counters: Mutex<Counters>,
    /// Surveys that currently have a regeneration worker.
    workers: Mutex<HashSet<String>>,
}

fn highest<T>(kind: Kind, items: &[(String, T)]) -> u64 {
    items
        .iter()
        .filter_map(|(id, _)| id_number(kind, id))
        .max()
        .unwrap_or(0)
}

impl AppState {
    /// Loads everything under `data_dir`. Id counters continue after the
    /// highest id found on disk.
    pub fn open(data_dir: impl Into<PathBuf>) -> io::Result<Arc<Self>> {
        let store = Store::open(data_dir)?;
        let designs: Vec<(String, StoredDesign)> = store.read_all(Kind::Design)?;
        let surveys: Vec<(String, StoredSurvey)> = store.read_all(Kind::Survey)?;
        let jobs: Vec<(String, Job)> = store.read_all(Kind::Job)?;
        let counters = Counters {
            design: highest(Kind::Design, &designs),
            survey: highest(Kind::Survey, &surveys),
            job: highest(Kind::Job, &jobs),
        };
        Ok(Arc::new(Self {
            store,
            designs: RwLock::new(
                designs
                    .into_iter()
                    .map(|(id, d)| (id, Arc::new(d)))
                    .collect(),
            ),
            surveys: RwLock::new(
                surveys
                    .into_iter()
                    .map(|(id, s)| (id, Arc::new(tokio::sync::Mutex::new(s))))
                    .collect(),
            ),
            jobs: Mutex::new(jobs.into_iter().collect()),
            counters: Mutex::new(counters),
            workers: Mutex::new(HashSet::new()),
        }))
    }

    pub fn data_dir(&self) -> &std::path::Path {
        self.store.root()
    }

    /// Restarts work interrupted by a shutdown: unfinished design jobs are
    /// rerun (they are deterministic) and pending serial updates resubmitted.
    /// Must be called inside a tokio runtime.
    pub fn resume(self: &Arc<Self>) {
        let unfinished: Vec<Job> = self
            .jobs
            .lock()
            .unwrap()
            .values()
            .filter(|j| matches!(j.status, JobStatus::Pending | JobStatus::Running))
            .cloned()
            .collect();
        for job in unfinished {
            if let JobKind::Design { settings } = job.kind {
                tracing::info!(job = %job.id, "resuming design job");
                self.spawn_design_job(job.id, settings);
            }
        }
        let ids: Vec<String> = self.surveys.read().unwrap().keys().cloned().collect();
        for id in ids {
            let handle = self.survey(&id).expect("listed above");
            let pending = handle
                .try_lock()
                .map(|s| !s.survey.state.pending_updates.is_empty())
                .unwrap_or(true);
            if pending {
                tracing::info!(survey = %id, "resuming pending design updates");
                self.ensure_worker(id);
            }
        }
    }

    fn next_id(&self, kind: Kind) -> String {
        let mut c = self.counters.lock().unwrap();
        let slot = match kind {
            Kind::Design => &mut c.design,
            Kind::Survey => &mut c.survey,
            Kind::Job => &mut c.job,
        };
        *slot += 1;
        make_id(kind, *slot)
    }

    pub fn design(&self, id: &str) -> Option<Arc<StoredDesign>> {
        self.designs.read().unwrap().get(id).cloned()
    }

    pub fn survey(&self, id: &str) -> Option<SurveyHandle> {
        self.surveys.read().unwrap().get(id).cloned()
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    pub fn insert_design(&self, design: LabeledDesign) -> Result<Arc<StoredDesign>, ApiError> {
        let id = self.next_id(Kind::Design);
        let stored = Arc::new(StoredDesign {
            id: id.clone(),
            design,
        });
        self.store.write(Kind::Design, &id, &*stored)?;
        self.designs.write().unwrap().insert(id, stored.clone());
        Ok(stored)
    }

    pub fn insert_survey(&self, design_id: String, survey: Survey) -> Result<String, ApiError> {
        let id = self.next_id(Kind::Survey);
        let stored = StoredSurvey {
            id: id.clone(),
            design_id,
            revision: 0,
            survey,
        };
        self.store.write(Kind::Survey, &id, &stored)?;
        self.surveys
            .write()
            .unwrap()
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(stored)));
        Ok(id)
    }

    /// Persists a survey after a mutation; call while holding its lock.
    pub fn save_survey(&self, survey: &mut StoredSurvey) -> Result<(), ApiError> {
        survey.revision += 1;
        self.store.write(Kind::Survey, &survey.id, survey)?;
        Ok(())
    }

    fn put_job(&self, job: Job) -> io::Result<()> {
        let mut jobs = self.jobs.lock().unwrap();
        self.store.write(Kind::Job, &job.id, &job)?;
        jobs.insert(job.id.clone(), job);
        Ok(())
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(job) = jobs.get_mut(id) else { return };
        f(job);
        if let Err(e) = self.store.write(Kind::Job, id, job) {
            tracing::error!(job = %id, "failed to persist job: {e}");
        }
    }

    fn new_job(&self, kind: JobKind) -> io::Result<Job> {
        let job = Job {
            id: self.next_id(Kind::Job),
            kind,
            status: JobStatus::Pending,
            result: None,
            error: None,
        };
        self.put_job(job.clone())?;
        Ok(job)
    }

    /// Queues a design generation and returns its job id.
    pub fn submit_design_job(
        self: &Arc<Self>,
        settings: DesignSettings,
    ) -> Result<String, ApiError> {
        let job = self.new_job(JobKind::Design {
            settings: settings.clone(),
        })?;
        self.spawn_design_job(job.id.clone(), settings);
        Ok(job.id)
    }

    fn spawn_design_job(self: &Arc<Self>, job_id: String, settings: DesignSettings) {
        let state = self.clone();
        tokio::spawn(async move {
            state.update_job(&job_id, |j| j.status = JobStatus::Running);
            let outcome = state.create_design(settings).await;
            state.update_job(&job_id, |j| match outcome {
                Ok(summary) => {
                    j.status = JobStatus::Succeeded;
                    j.result = Some(summary);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e.to_string());
                }
            });
        });
    }

    /// Generates and stores a design; returns the creation summary.
    pub async fn create_design(&self, settings: DesignSettings) -> Result<Value, ApiError> {
        settings.validate()?;
        let s = settings.clone();
        let result = tokio::task::spawn_blocking(move || generate_design(&s))
            .await
            .map_err(|e| ApiError::Internal(format!("design task failed: {e}")))??;
        let labeled = LabeledDesign::from_result(&result, &settings)?;
        let stored = self.insert_design(labeled)?;
        Ok(design_summary(&stored))
    }

    /// Records a job for a serial trigger that just fired.
    pub fn submit_regeneration(
        self: &Arc<Self>,
        survey_id: &str,
        at_respondents: usize,
    ) -> Result<String, ApiError> {
        let job = self.new_job(JobKind::Regeneration {
            survey_id: survey_id.to_string(),
            at_respondents,
        })?;
        Ok(job.id)
    }

    fn regeneration_job(&self, survey_id: &str, at: usize) -> Option<String> {
        self.jobs
            .lock()
            .unwrap()
            .values()
            .find(|j| {
                matches!(&j.kind, JobKind::Regeneration { survey_id: s, at_respondents }
                    if s == survey_id && *at_respondents == at)
                    && !matches!(j.status, JobStatus::Succeeded | JobStatus::Failed)
            })
            .map(|j| j.id.clone())
    }

    /// Makes sure one background worker drains the survey's pending updates.
    /// The estimation and design search run without holding the survey lock,
    /// so sessions keep flowing on the old design meanwhile.
    pub fn ensure_worker(self: &Arc<Self>, survey_id: String) {
        if !self.workers.lock().unwrap().insert(survey_id.clone()) {
            return;
        }
        let state = self.clone();
        tokio::spawn(async move {
            let Some(handle) = state.survey(&survey_id) else {
                state.workers.lock().unwrap().remove(&survey_id);
                return;
            };
            loop {
                let job = {
                    let guard = handle.lock().await;
                    match guard.survey.prepare_update() {
                        Some(job) => job,
                        None => {
                            // released under the survey lock so a trigger
                            // recorded afterwards starts a fresh worker
                            state.workers.lock().unwrap().remove(&survey_id);
                            return;
                        }
                    }
                };
                let at = job.at_respondents;
                let job_id = state.regeneration_job(&survey_id, at);
                if let Some(id) = &job_id {
                    state.update_job(id, |j| j.status = JobStatus::Running);
                }
                let computation = match tokio::task::spawn_blocking(move || job.run()).await {
                    Ok(c) => c,
                    Err(e) => UpdateComputation::Skipped {
                        at_respondents: at,
                        reason: format!("update task failed: {e}"),
                    },
                };
                let mut guard = handle.lock().await;
                let outcome = guard.survey.apply_update(computation);
                let saved = state.save_survey(&mut guard);
                drop(guard);
                match &outcome {
                    UpdateOutcome::Regenerated { version, .. } => {
                        tracing::info!(survey = %survey_id, at, version, "design regenerated")
                    }
                    UpdateOutcome::Unchanged { reason } => {
                        tracing::warn!(survey = %survey_id, at, ?reason, "design kept")
                    }
                }
                if let Some(id) = job_id {
                    state.update_job(&id, |j| match saved {
                        Ok(()) => {
                            j.status = JobStatus::Succeeded;
                            j.result = Some(json!(outcome));
                        }
                        Err(e) => {
                            j.status = JobStatus::Failed;
                            j.error = Some(e.to_string());
                        }
                    });
                }
            }
        });
    }
}

pub fn design_summary(stored: &StoredDesign) -> Value {
    let coded = &stored.design.coded;
    let optimizer = stored.design.optimizer.as_ref();
    json!({
        "id": stored.id,
        "criterion_kind": optimizer.map(|o| o.criterion_kind),
        "criterion_value": optimizer.map(|o| o.criterion_value),
        "passes_used": optimizer.map(|o| o.passes_used),
        "start_index": optimizer.map(|o| o.start_index),
        "n_params": coded.n_params(),
        "n_sets": coded.n_sets,
        "n_alts": coded.n_real_alts(),
        "alts_per_set": coded.alts_per_set,
        "opt_out": coded.opt_out,
    })
}
