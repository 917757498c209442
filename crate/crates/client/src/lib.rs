//! Thin async client for the find service. One method per endpoint; jobs
//! are polled to completion by the `*_wait` helpers.

use std::time::Duration;

use find_core::api::{
    AblationRequest, AnswersAck, ApplyOutcome, ApplyRequest, BiasRequest, CompareResponse, CreateSession, DatasetInfo,
    DisableOutcome, DisableRequest, ErrorBody, Health, JobAccepted, JobState, JobStatus, MetricsResponse, ModelInfo,
    RegisterDataset, SessionCreated, SimulateRequest, SubmitAnswers, TrainOutcome, TrainRequest,
};
use find_core::experiment::{AblationReport, BiasSummary};
use find_core::features::{FeatureSummary, WordCloudData};
use find_core::feedback::{Answer, FeedbackSession};
use reqwest::{RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    #[error("{status}: {}", body.message)]
    Api { status: StatusCode, body: ErrorBody },

    #[error("job {job_id} failed: {}", body.message)]
    Job { job_id: String, body: ErrorBody },

    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// The service's error code (`validation`, `not_found`, ...), if any.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } | ClientError::Job { body, .. } => Some(&body.code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    poll: Duration,
}

/// Optional parameters of the metrics endpoint.
#[derive(Debug, Clone, Default)]
pub struct MetricsParams {
    pub dataset: Option<String>,
    pub split: Option<String>,
    pub bias: Vec<String>,
    pub positive: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct CompareParams {
    pub dataset: Option<String>,
    pub split: Option<String>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Client {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
            poll: Duration::from_millis(50),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(req: RequestBuilder) -> Result<Response> {
        let resp = req.send().await?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            code: "http".into(),
            message: text,
            allowed: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        Ok(Self::send(req).await?.json().await?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::json(self.http.get(self.url(path))).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::json(self.http.post(self.url(path)).json(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn state(&self) -> Result<serde_json::Value> {
        self.get("/state").await
    }

    pub async fn register_dataset(&self, req: &RegisterDataset) -> Result<DatasetInfo> {
        self.post("/datasets", req).await
    }

    pub async fn dataset(&self, id: &str) -> Result<DatasetInfo> {
        self.get(&format!("/datasets/{id}")).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<JobAccepted> {
        self.post("/models/train", req).await
    }

    pub async fn import(&self, dataset_id: &str, snapshot: Vec<u8>) -> Result<ModelInfo> {
        let req = self
            .http
            .post(self.url("/models/import"))
            .query(&[("dataset", dataset_id)])
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(snapshot);
        Self::json(req).await
    }

    pub async fn model(&self, id: &str) -> Result<ModelInfo> {
        self.get(&format!("/models/{id}")).await
    }

    pub async fn snapshot(&self, id: &str) -> Result<Vec<u8>> {
        let resp = Self::send(self.http.get(self.url(&format!("/models/{id}/snapshot")))).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn training_log(&self, id: &str) -> Result<String> {
        Ok(Self::send(self.http.get(self.url(&format!("/models/{id}/log")))).await?.text().await?)
    }

    pub async fn features(&self, id: &str) -> Result<Vec<FeatureSummary>> {
        self.get(&format!("/models/{id}/features")).await
    }

    pub async fn cloud(&self, id: &str, feature: usize, top_n: Option<usize>) -> Result<Vec<WordCloudData>> {
        let mut req = self.http.get(self.url(&format!("/models/{id}/features/{feature}/cloud")));
        if let Some(n) = top_n {
            req = req.query(&[("top_n", n)]);
        }
        Self::json(req).await
    }

    pub async fn disable(&self, id: &str, req: &DisableRequest) -> Result<JobAccepted> {
        self.post(&format!("/models/{id}/disable"), req).await
    }

    pub async fn metrics(&self, id: &str, p: &MetricsParams) -> Result<MetricsResponse> {
        let mut query: Vec<(&str, String)> = Vec::new();
        if let Some(d) = &p.dataset {
            query.push(("dataset", d.clone()));
        }
        if let Some(s) = &p.split {
            query.push(("split", s.clone()));
        }
        if !p.bias.is_empty() {
            query.push(("bias", p.bias.join(",")));
        }
        if let Some(c) = p.positive {
            query.push(("positive", c.to_string()));
        }
        Self::json(self.http.get(self.url(&format!("/models/{id}/metrics"))).query(&query)).await
    }

    pub async fn compare(&self, a: &str, b: &str, p: &CompareParams) -> Result<CompareResponse> {
        let mut query: Vec<(&str, String)> = vec![("a", a.to_string()), ("b", b.to_string())];
        if let Some(d) = &p.dataset {
            query.push(("dataset", d.clone()));
        }
        if let Some(s) = &p.split {
            query.push(("split", s.clone()));
        }
        if let Some(n) = p.iterations {
            query.push(("iterations", n.to_string()));
        }
        if let Some(s) = p.seed {
            query.push(("seed", s.to_string()));
        }
        Self::json(self.http.get(self.url("/models/compare")).query(&query)).await
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionCreated> {
        self.post("/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<FeedbackSession> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn answers(&self, id: &str, answers: Vec<Answer>) -> Result<AnswersAck> {
        self.post(&format!("/sessions/{id}/answers"), &SubmitAnswers { answers }).await
    }

    pub async fn simulate(&self, id: &str, req: &SimulateRequest) -> Result<AnswersAck> {
        self.post(&format!("/sessions/{id}/simulate"), req).await
    }

    pub async fn apply(&self, id: &str, req: &ApplyRequest) -> Result<JobAccepted> {
        self.post(&format!("/sessions/{id}/apply"), req).await
    }

    pub async fn ablation(&self, req: &AblationRequest) -> Result<JobAccepted> {
        self.post("/experiments/ablation", req).await
    }

    pub async fn bias_experiment(&self, req: &BiasRequest) -> Result<JobAccepted> {
        self.post("/experiments/bias", req).await
    }

    pub async fn job(&self, id: &str) -> Result<JobStatus> {
        self.get(&format!("/jobs/{id}")).await
    }

    /// Polls a job until it finishes and decodes its result.
    pub async fn wait<T: DeserializeOwned>(&self, job: &JobAccepted) -> Result<T> {
        loop {
            let status = self.job(&job.job_id).await?;
            match status.state {
                JobState::Succeeded => {
                    let value = status.result.unwrap_or(serde_json::Value::Null);
                    return serde_json::from_value(value).map_err(|e| ClientError::Decode(e.to_string()));
                }
                JobState::Failed => {
                    return Err(ClientError::Job {
                        job_id: status.job_id,
                        body: status.error.unwrap_or(ErrorBody {
                            code: "internal".into(),
                            message: "job failed without an error body".into(),
                            allowed: None,
                        }),
                    })
                }
                JobState::Queued | JobState::Running => tokio::time::sleep(self.poll).await,
            }
        }
    }

    pub async fn train_wait(&self, req: &TrainRequest) -> Result<TrainOutcome> {
        let job = self.train(req).await?;
        self.wait(&job).await
    }

    pub async fn disable_wait(&self, id: &str, req: &DisableRequest) -> Result<DisableOutcome> {
        let job = self.disable(id, req).await?;
        self.wait(&job).await
    }

    pub async fn apply_wait(&self, id: &str, req: &ApplyRequest) -> Result<ApplyOutcome> {
        let job = self.apply(id, req).await?;
        self.wait(&job).await
    }

    pub async fn ablation_wait(&self, req: &AblationRequest) -> Result<AblationReport> {
        let job = self.ablation(req).await?;
        self.wait(&job).await
    }

    pub async fn bias_wait(&self, req: &BiasRequest) -> Result<BiasSummary> {
        let job = self.bias_experiment(req).await?;
        self.wait(&job).await
    }
}
