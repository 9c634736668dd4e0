//! Thin async client for the scm-forge admin API.

use std::collections::BTreeMap;
use std::time::Duration;

use reqwest::{Method, RequestBuilder, StatusCode};
use scm_forge_core::job::{JobAction, JobRequest, TargetStatus};
use scm_forge_core::scm::InventoryEntry;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_URL: &str = "http://127.0.0.1:8640";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error("job {0} did not finish in time")]
    Timeout(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cached<T> {
    pub session_id: String,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub device_id: String,
    pub address: String,
    pub last_seen: Option<String>,
    pub devinfo: Option<Cached<BTreeMap<String, String>>>,
    pub inventory: Option<Cached<Vec<InventoryEntry>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub device_id: String,
    pub session_id: Option<String>,
    pub entries: Vec<InventoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub targets: Vec<String>,
    pub action: JobAction,
    pub status: BTreeMap<String, TargetStatus>,
    pub sessions: BTreeMap<String, String>,
}

impl Job {
    pub fn is_finished(&self) -> bool {
        self.status.values().all(|s| !matches!(s, TargetStatus::Pending))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub device_id: String,
    pub outcome: Value,
    pub packages: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Registration {
    pub device_id: String,
    pub secret: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auth_name: Option<String>,
    /// `{"kind":"tcp","addr":...}`; absent for a server-side simulated device.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub address: Option<Value>,
}

#[derive(Deserialize)]
struct JobCreated {
    job_id: String,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Client {
            base: base.trim_end_matches('/').to_string(),
            token: None,
            http: reqwest::Client::new(),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let req = self.http.request(method, format!("{}/api{path}", self.base));
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn send(req: RequestBuilder) -> Result<reqwest::Response, ClientError> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v["error"].as_str().map(String::from))
            .unwrap_or(body);
        Err(ClientError::Api { status, message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Ok(Self::send(self.request(Method::GET, path)).await?.json().await?)
    }

    pub async fn devices(&self) -> Result<Vec<Device>, ClientError> {
        self.get("/devices").await
    }

    pub async fn device(&self, id: &str) -> Result<Device, ClientError> {
        self.get(&format!("/devices/{id}")).await
    }

    pub async fn register(&self, reg: &Registration) -> Result<Device, ClientError> {
        Ok(Self::send(self.request(Method::POST, "/devices").json(reg))
            .await?
            .json()
            .await?)
    }

    /// The device tree as the server renders it.
    pub async fn tree(&self, id: &str) -> Result<Value, ClientError> {
        self.get(&format!("/devices/{id}/tree")).await
    }

    pub async fn inventory(&self, id: &str) -> Result<Inventory, ClientError> {
        self.get(&format!("/devices/{id}/inventory")).await
    }

    pub async fn submit_job(&self, req: &JobRequest) -> Result<String, ClientError> {
        let created: JobCreated = Self::send(self.request(Method::POST, "/jobs").json(req))
            .await?
            .json()
            .await?;
        Ok(created.job_id)
    }

    pub async fn job(&self, id: &str) -> Result<Job, ClientError> {
        self.get(&format!("/jobs/{id}")).await
    }

    pub async fn jobs(&self) -> Result<Vec<Job>, ClientError> {
        self.get("/jobs").await
    }

    /// Polls a job until every target has finished.
    pub async fn wait_job(&self, id: &str, poll: Duration, timeout: Duration) -> Result<Job, ClientError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let job = self.job(id).await?;
            if job.is_finished() {
                return Ok(job);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout(id.to_string()));
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn sessions(&self, device: Option<&str>) -> Result<Vec<Session>, ClientError> {
        match device {
            Some(d) => self.get(&format!("/sessions?device={d}")).await,
            None => self.get("/sessions").await,
        }
    }

    /// Transcript in JSON-lines form.
    pub async fn transcript(&self, session_id: &str) -> Result<String, ClientError> {
        Ok(
            Self::send(self.request(Method::GET, &format!("/sessions/{session_id}/transcript")))
                .await?
                .text()
                .await?,
        )
    }
}
