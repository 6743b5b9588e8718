use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dce_core::estimation::CONT_PRICE;
use dce_core::serial::{RecordOutcome, SerialMode};
use dce_core::{
    coefficient_plot_data, decode_design_with_labels, export_design, fit_conditional_logit,
    recode_price_attribute, render_plain_text, wtp, DesignFormat, DesignSettings, EstimationResult,
    OptimizerConfig, ResponseDataset, Survey, SurveyDefinition,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::state::{AppState, StoredSurvey, SurveyHandle};

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/designs", post(create_design))
        .route("/designs/{id}", get(get_design))
        .route("/surveys", post(create_survey))
        .route("/surveys/{id}", get(get_survey))
        .route("/surveys/{id}/sessions", post(start_session))
        .route("/surveys/{id}/close", post(close_survey))
        .route("/surveys/{id}/responses", get(get_responses))
        .route("/sessions/{sid}", get(get_session))
        .route("/sessions/{sid}/answers", post(answer))
        .route("/estimations", post(estimate))
        .route("/wtp", post(estimate_wtp))
        .route("/jobs/{id}", get(get_job))
        .with_state(state)
}

/// Parses a JSON body; any syntax or shape error is a 400.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

fn flag(query: &HashMap<String, String>, name: &str) -> bool {
    query
        .get(name)
        .is_some_and(|v| matches!(v.as_str(), "true" | "1" | "yes"))
}

fn accepts(headers: &HeaderMap, mime: &str) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|m| m.trim().starts_with(mime)))
}

async fn create_design(
    State(state): Shared,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> AppResult<Response> {
    let settings: DesignSettings = parse_body(&body)?;
    settings.validate()?;
    if flag(&query, "async") {
        let job = state.submit_design_job(settings)?;
        let body = json!({ "job": job, "status_url": format!("/jobs/{job}") });
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    }
    let summary = state.create_design(settings).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

fn csv_attachment(name: String, body: Vec<u8>) -> Response {
    (
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{name}\""),
            ),
        ],
        body,
    )
        .into_response()
}

fn plain_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

/// `view` is `labeled` (default), `coded` or `decoded`; `format=csv` or
/// `Accept: text/csv` gives the coded matrix as CSV, `format=text` or
/// `Accept: text/plain` gives decoded sets as plain text.
async fn get_design(
    State(state): Shared,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> AppResult<Response> {
    let stored = state
        .design(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown design {id}")))?;
    let format = query.get("format").map(String::as_str);
    let design = &stored.design;
    match query.get("view").map(String::as_str).unwrap_or("labeled") {
        "coded" => {
            if format == Some("csv") || accepts(&headers, "text/csv") {
                Ok(csv_attachment(
                    format!("{id}.csv"),
                    export_design(design, DesignFormat::Csv),
                ))
            } else {
                Ok(Json(&design.coded).into_response())
            }
        }
        "labeled" => {
            if format == Some("csv") || accepts(&headers, "text/csv") {
                return Ok(csv_attachment(
                    format!("{id}.csv"),
                    export_design(design, DesignFormat::Csv),
                ));
            }
            let doc: Value = serde_json::from_slice(&export_design(design, DesignFormat::Json))
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            Ok(Json(json!({ "id": id, "design": doc })).into_response())
        }
        "decoded" => {
            let labels = query
                .get("labels")
                .map(|l| l.split(',').map(str::to_string).collect())
                .unwrap_or_else(|| dce_core::codec::default_alternative_labels(&design.coded));
            let sets = decode_design_with_labels(design, &labels)?;
            if format == Some("text") || accepts(&headers, "text/plain") {
                Ok(plain_text(render_plain_text(&sets)))
            } else {
                Ok(Json(json!({ "id": id, "sets": sets })).into_response())
            }
        }
        other => Err(ApiError::BadRequest(format!(
            "unknown view '{other}' (expected coded, labeled or decoded)"
        ))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSurvey {
    design_id: String,
    #[serde(default)]
    intro_text: String,
    #[serde(default)]
    final_text: String,
    #[serde(default)]
    alternative_labels: Option<Vec<String>>,
    #[serde(default)]
    serial_mode: SerialMode,
    #[serde(default)]
    optimizer: Option<OptimizerConfig>,
}

async fn create_survey(State(state): Shared, body: Bytes) -> AppResult<Response> {
    let req: CreateSurvey = parse_body(&body)?;
    let stored = state
        .design(&req.design_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown design {}", req.design_id)))?;
    let settings = stored.design.settings.clone().ok_or_else(|| {
        ApiError::unprocessable("design carries no settings and cannot back a survey")
    })?;
    let mut def = SurveyDefinition::new(stored.design.clone(), settings);
    def.intro_text = req.intro_text;
    def.final_text = req.final_text;
    if let Some(labels) = req.alternative_labels {
        def.alternative_labels = labels;
    }
    def.serial_mode = req.serial_mode;
    def.optimizer = req.optimizer;
    let survey = Survey::new(def)?;
    let id = state.insert_survey(req.design_id.clone(), survey)?;
    let handle = state.survey(&id).expect("just inserted");
    let guard = handle.lock().await;
    Ok((StatusCode::CREATED, Json(survey_summary(&guard))).into_response())
}

fn survey_summary(s: &StoredSurvey) -> Value {
    let st = &s.survey.state;
    json!({
        "id": s.id,
        "design_id": s.design_id,
        "revision": s.revision,
        "closed": st.closed,
        "serial_mode": s.survey.definition.serial_mode,
        "n_sets": s.survey.n_sets(),
        "alternative_labels": s.survey.definition.alternative_labels,
        "completed_respondents": st.completed_respondents,
        "current_version": st.current_version,
        "design_history": st.design_history.iter().map(|v| json!({
            "version": v.version,
            "at_respondents": v.at_respondents,
        })).collect::<Vec<_>>(),
        "pending_updates": st.pending_updates,
        "update_log": st.update_log,
        "sessions": st.sessions.len(),
        "n_tasks": st.responses.n_tasks(),
    })
}

fn survey_handle(state: &AppState, id: &str) -> AppResult<SurveyHandle> {
    state
        .survey(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown survey {id}")))
}

async fn get_survey(State(state): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let handle = survey_handle(&state, &id)?;
    let guard = handle.lock().await;
    Ok(Json(survey_summary(&guard)))
}

fn session_id(survey: &str, n: u64) -> String {
    format!("{survey}-s{n}")
}

fn parse_session(sid: &str) -> AppResult<(String, u64)> {
    sid.rsplit_once("-s")
        .and_then(|(survey, n)| Some((survey.to_string(), n.parse().ok()?)))
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {sid}")))
}

async fn start_session(State(state): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = survey_handle(&state, &id)?;
    let mut guard = handle.lock().await;
    let start = guard.survey.start_session()?;
    state.save_survey(&mut guard)?;
    let body = json!({
        "session": session_id(&id, start.session),
        "survey": id,
        "respondent_id": start.respondent_id,
        "design_version": start.design_version,
        "intro_text": start.intro_text,
        "set": start.first,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(state): Shared, Path(sid): Path<String>) -> AppResult<Json<Value>> {
    let (survey_id, n) = parse_session(&sid)?;
    let handle = state
        .survey(&survey_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {sid}")))?;
    let guard = handle.lock().await;
    let session = guard
        .survey
        .state
        .sessions
        .get(&n)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {sid}")))?
        .clone();
    let set = guard.survey.current_set(n)?;
    Ok(Json(json!({
        "session": sid,
        "respondent_id": session.respondent_id,
        "design_version": session.design_version,
        "finished": set.is_none(),
        "set": set,
    })))
}

#[derive(Deserialize)]
struct AnswerBody {
    choice: usize,
}

async fn answer(
    State(state): Shared,
    Path(sid): Path<String>,
    body: Bytes,
) -> AppResult<Json<Value>> {
    let req: AnswerBody = parse_body(&body)?;
    let (survey_id, n) = parse_session(&sid)?;
    let handle = state
        .survey(&survey_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {sid}")))?;
    let mut guard = handle.lock().await;
    let respondent_id = guard
        .survey
        .state
        .sessions
        .get(&n)
        .map(|s| s.respondent_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {sid}")))?;
    let outcome = guard.survey.record_answer(n, req.choice)?;
    let body = match outcome {
        RecordOutcome::Next { next } => {
            state.save_survey(&mut guard)?;
            json!({ "status": "next", "session": sid, "set": next })
        }
        RecordOutcome::Completed {
            final_text,
            trigger,
        } => {
            let job = if trigger {
                let at = guard.survey.state.completed_respondents;
                Some(state.submit_regeneration(&survey_id, at)?)
            } else {
                None
            };
            state.save_survey(&mut guard)?;
            json!({
                "status": "finished",
                "session": sid,
                "respondent_id": respondent_id,
                "final_text": final_text,
                "update_job": job,
            })
        }
    };
    drop(guard);
    if body["update_job"].is_string() {
        state.ensure_worker(survey_id);
    }
    Ok(Json(body))
}

async fn close_survey(State(state): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let handle = survey_handle(&state, &id)?;
    let mut guard = handle.lock().await;
    let data = guard.survey.close();
    state.save_survey(&mut guard)?;
    Ok(Json(json!({
        "id": id,
        "closed": true,
        "n_tasks": data.n_tasks(),
        "completed_respondents": guard.survey.state.completed_respondents,
    })))
}

async fn get_responses(State(state): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = survey_handle(&state, &id)?;
    let csv = handle.lock().await.survey.state.responses.to_csv_string();
    Ok(csv_attachment(
        format!("{id}-responses.csv"),
        csv.into_bytes(),
    ))
}

#[derive(Deserialize)]
struct PriceRecoding {
    /// Attribute whose dummies become `cont_price`; defaults to the last one.
    #[serde(default)]
    attribute: Option<String>,
    /// Numeric value of every level, base level first.
    level_values: Vec<f64>,
}

#[derive(Deserialize)]
struct EstimationRequest {
    #[serde(default)]
    survey_id: Option<String>,
    #[serde(default)]
    csv: Option<String>,
    /// Covariates to fit, after any price recoding; defaults to all.
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[serde(default)]
    price: Option<PriceRecoding>,
}

#[derive(Deserialize)]
struct WtpRequest {
    #[serde(flatten)]
    estimation: EstimationRequest,
    #[serde(default)]
    price_coefficient: Option<String>,
    /// Coefficients to express in money; defaults to every non-price one.
    #[serde(default)]
    targets: Option<Vec<String>>,
}

async fn load_dataset(state: &AppState, req: &EstimationRequest) -> AppResult<ResponseDataset> {
    let data = match (&req.survey_id, &req.csv) {
        (Some(id), None) => survey_handle(state, id)?
            .lock()
            .await
            .survey
            .state
            .responses
            .clone(),
        (None, Some(csv)) => ResponseDataset::read_csv(csv.as_bytes())?,
        _ => {
            return Err(ApiError::unprocessable(
                "give exactly one of survey_id or csv",
            ))
        }
    };
    match &req.price {
        Some(p) => Ok(recode_price_attribute(
            &data,
            p.attribute.as_deref(),
            &p.level_values,
        )?),
        None => Ok(data),
    }
}

async fn run_fit(state: &AppState, req: &EstimationRequest) -> AppResult<EstimationResult> {
    let data = load_dataset(state, req).await?;
    let covariates = req
        .covariates
        .clone()
        .unwrap_or_else(|| data.covariate_names.clone());
    let fit = tokio::task::spawn_blocking(move || fit_conditional_logit(&data, &covariates))
        .await
        .map_err(|e| ApiError::Internal(format!("estimation task failed: {e}")))??;
    Ok(fit)
}

async fn estimate(State(state): Shared, body: Bytes) -> AppResult<Json<Value>> {
    let req: EstimationRequest = parse_body(&body)?;
    let fit = run_fit(&state, &req).await?;
    Ok(Json(
        json!({ "plot": coefficient_plot_data(&fit), "estimation": fit }),
    ))
}

async fn estimate_wtp(State(state): Shared, body: Bytes) -> AppResult<Json<Value>> {
    let req: WtpRequest = parse_body(&body)?;
    let fit = run_fit(&state, &req.estimation).await?;
    let price = req
        .price_coefficient
        .unwrap_or_else(|| CONT_PRICE.to_string());
    let targets = req.targets.unwrap_or_else(|| {
        fit.coefficients
            .names
            .iter()
            .filter(|n| **n != price)
            .cloned()
            .collect()
    });
    let result = wtp(&fit, &price, &targets)?;
    Ok(Json(json!({
        "wtp": result,
        "plot": coefficient_plot_data(&fit),
        "estimation": fit,
    })))
}

async fn get_job(State(state): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let job = state
        .job(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))?;
    Ok(Json(json!(job)))
}
