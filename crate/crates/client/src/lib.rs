//! Typed async client for the vipguard HTTP service. One method per endpoint;
//! request and response types are those of [`vipguard_core::api`].

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use vipguard_core::api::{
    ApiError, ConfigSource, EvalRequest, EvalResponse, Health, ReportRequest, ReportResponse, ResolvedConfig,
    RewardsRequest, RewardsResponse, SweepRequest, SweepResponse, ThreatRequest, TotalThreatRequest,
    TotalThreatResponse, TrainRequest, TrainResponse,
};
use vipguard_core::threat::ThreatReport;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{status}: {error}")]
    Api { status: StatusCode, error: ApiError },
    #[error("cannot reach service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response ({status}): {message}")]
    Decode { status: StatusCode, message: String },
}

impl ClientError {
    /// Short machine-readable error class.
    pub fn kind(&self) -> &str {
        match self {
            ClientError::Api { error, .. } => &error.kind,
            ClientError::Transport(_) => "transport",
            ClientError::Decode { .. } => "decode",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| ClientError::Decode { status, message: e.to_string() });
        }
        match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(error) => Err(ClientError::Api { status, error }),
            Err(_) => Err(ClientError::Decode { status, message: String::from_utf8_lossy(&bytes).into_owned() }),
        }
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}/v1/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn resolve_config(&self, source: &ConfigSource) -> Result<ResolvedConfig, ClientError> {
        self.post("/v1/config", source).await
    }

    pub async fn threat(&self, req: &ThreatRequest) -> Result<ThreatReport, ClientError> {
        self.post("/v1/threat", req).await
    }

    pub async fn total_threat(&self, req: &TotalThreatRequest) -> Result<TotalThreatResponse, ClientError> {
        self.post("/v1/total-threat", req).await
    }

    pub async fn rewards(&self, req: &RewardsRequest) -> Result<RewardsResponse, ClientError> {
        self.post("/v1/rewards", req).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainResponse, ClientError> {
        self.post("/v1/train", req).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse, ClientError> {
        self.post("/v1/eval", req).await
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepResponse, ClientError> {
        self.post("/v1/sweep", req).await
    }

    pub async fn report(&self, req: &ReportRequest) -> Result<ReportResponse, ClientError> {
        self.post("/v1/report", req).await
    }
}
