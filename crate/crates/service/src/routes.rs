use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use find_core::api::{
    AblationRequest, AnswersAck, ApplyRequest, BiasRequest, CreateSession, DisableRequest, Health, RegisterDataset,
    SimulateRequest, SubmitAnswers, TrainRequest,
};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::workspace::{CompareQuery, MetricsQuery, Workspace};
use crate::AppState;

type Reply<T> = Result<Json<T>, ServiceError>;

/// Upload limit for inline datasets, embeddings and snapshots.
const BODY_LIMIT: usize = 512 << 20;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/state", get(workspace_state))
        .route("/datasets", post(register_dataset))
        .route("/datasets/{id}", get(dataset))
        .route("/models/train", post(train))
        .route("/models/import", post(import))
        .route("/models/compare", get(compare))
        .route("/models/{id}", get(model))
        .route("/models/{id}/snapshot", get(snapshot))
        .route("/models/{id}/log", get(training_log))
        .route("/models/{id}/features", get(features))
        .route("/models/{id}/features/{feature}/cloud", get(cloud))
        .route("/models/{id}/disable", post(disable))
        .route("/models/{id}/metrics", get(metrics))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/answers", post(answers))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/apply", post(apply))
        .route("/jobs/{id}", get(job))
        .route("/experiments/ablation", post(ablation))
        .route("/experiments/bias", post(bias))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Runs blocking workspace code off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Workspace) -> Result<T, ServiceError> + Send + 'static,
{
    let ws = state.workspace.clone();
    tokio::task::spawn_blocking(move || f(&ws))
        .await
        .map_err(|e| ServiceError::Internal(format!("handler panicked: {e}")))?
}

fn accepted(job: find_core::api::JobAccepted) -> impl IntoResponse {
    (StatusCode::ACCEPTED, Json(job))
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn workspace_state(State(s): State<AppState>) -> Json<crate::WorkspaceState> {
    Json(s.workspace.state())
}

async fn register_dataset(State(s): State<AppState>, Json(req): Json<RegisterDataset>) -> impl IntoResponse {
    blocking(&s, move |ws| ws.register_dataset(req))
        .await
        .map(|info| (StatusCode::CREATED, Json(info)))
}

async fn dataset(State(s): State<AppState>, Path(id): Path<String>) -> Reply<find_core::api::DatasetInfo> {
    s.workspace.read(|st| st.dataset(&id).cloned()).map(Json)
}

async fn train(State(s): State<AppState>, Json(req): Json<TrainRequest>) -> Result<impl IntoResponse, ServiceError> {
    s.workspace.read(|st| st.dataset(&req.dataset_id).map(|_| ()))?;
    req.config.arch()?;
    req.config.train(req.seed).validate()?;
    let ws = s.workspace.clone();
    Ok(accepted(s.jobs.submit("train", None, move || ws.train(req))?))
}

#[derive(Deserialize)]
struct ImportQuery {
    dataset: String,
}

async fn import(State(s): State<AppState>, Query(q): Query<ImportQuery>, body: Bytes) -> impl IntoResponse {
    blocking(&s, move |ws| ws.import(&q.dataset, &body))
        .await
        .map(|info| (StatusCode::CREATED, Json(info)))
}

async fn model(State(s): State<AppState>, Path(id): Path<String>) -> Reply<find_core::api::ModelInfo> {
    s.workspace.model_info(&id).map(Json)
}

async fn snapshot(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    let bytes = blocking(&s, move |ws| ws.snapshot_bytes(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}

async fn training_log(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    let text = blocking(&s, move |ws| ws.training_log(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text))
}

async fn features(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Vec<find_core::features::FeatureSummary>> {
    blocking(&s, move |ws| ws.features(&id)).await.map(Json)
}

#[derive(Deserialize)]
struct CloudQuery {
    top_n: Option<usize>,
}

async fn cloud(
    State(s): State<AppState>,
    Path((id, feature)): Path<(String, usize)>,
    Query(q): Query<CloudQuery>,
) -> Reply<Vec<find_core::features::WordCloudData>> {
    blocking(&s, move |ws| ws.cloud(&id, feature, q.top_n)).await.map(Json)
}

async fn disable(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<DisableRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    let lineage = s.workspace.model_info(&id)?.lineage;
    req.config.train(req.seed).validate()?;
    let ws = s.workspace.clone();
    Ok(accepted(s.jobs.submit("disable", Some(lineage), move || ws.disable(&id, req))?))
}

#[derive(Deserialize)]
struct RawMetricsQuery {
    dataset: Option<String>,
    split: Option<String>,
    /// Comma-separated subpopulation names.
    bias: Option<String>,
    positive: Option<usize>,
}

async fn metrics(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RawMetricsQuery>,
) -> Reply<find_core::api::MetricsResponse> {
    let query = MetricsQuery {
        dataset: q.dataset,
        split: q.split,
        bias: q
            .bias
            .map(|b| b.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect())
            .unwrap_or_default(),
        positive: q.positive,
    };
    blocking(&s, move |ws| ws.metrics(&id, query)).await.map(Json)
}

#[derive(Deserialize)]
struct RawCompareQuery {
    a: String,
    b: String,
    dataset: Option<String>,
    split: Option<String>,
    iterations: Option<usize>,
    seed: Option<u64>,
}

async fn compare(State(s): State<AppState>, Query(q): Query<RawCompareQuery>) -> Reply<find_core::api::CompareResponse> {
    let query = CompareQuery {
        a: q.a,
        b: q.b,
        dataset: q.dataset,
        split: q.split,
        iterations: q.iterations,
        seed: q.seed,
    };
    blocking(&s, move |ws| ws.compare(query)).await.map(Json)
}

async fn create_session(State(s): State<AppState>, Json(req): Json<CreateSession>) -> impl IntoResponse {
    blocking(&s, move |ws| ws.create_session(req))
        .await
        .map(|created| (StatusCode::CREATED, Json(created)))
}

async fn session(State(s): State<AppState>, Path(id): Path<String>) -> Reply<find_core::feedback::FeedbackSession> {
    s.workspace.session(&id).map(Json)
}

async fn answers(State(s): State<AppState>, Path(id): Path<String>, Json(req): Json<SubmitAnswers>) -> Reply<AnswersAck> {
    blocking(&s, move |ws| ws.add_answers(&id, req.answers)).await.map(Json)
}

async fn simulate(State(s): State<AppState>, Path(id): Path<String>, Json(req): Json<SimulateRequest>) -> Reply<AnswersAck> {
    blocking(&s, move |ws| ws.simulate(&id, req)).await.map(Json)
}

async fn apply(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<ApplyRequest>>,
) -> Result<impl IntoResponse, ServiceError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    req.config.train(req.seed).validate()?;
    let lineage = s.workspace.check_applicable(&id)?;
    let ws = s.workspace.clone();
    Ok(accepted(s.jobs.submit("apply", Some(lineage), move || ws.apply(&id, req))?))
}

async fn job(State(s): State<AppState>, Path(id): Path<String>) -> Reply<find_core::api::JobStatus> {
    s.jobs.get(&id).map(Json)
}

async fn ablation(State(s): State<AppState>, Json(req): Json<AblationRequest>) -> Result<impl IntoResponse, ServiceError> {
    s.workspace.read(|st| st.dataset(&req.dataset_id).map(|_| ()))?;
    let ws = s.workspace.clone();
    Ok(accepted(s.jobs.submit("ablation", None, move || ws.ablation(req))?))
}

async fn bias(State(s): State<AppState>, Json(req): Json<BiasRequest>) -> Result<impl IntoResponse, ServiceError> {
    s.workspace.read(|st| st.dataset(&req.dataset_id).map(|_| ()))?;
    let ws = s.workspace.clone();
    Ok(accepted(s.jobs.submit("bias", None, move || ws.bias_experiment(req))?))
}
