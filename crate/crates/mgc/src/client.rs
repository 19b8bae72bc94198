use std::time::Duration;

use matcontrib_core::builder::DerivedMaterialDoc;
use matcontrib_core::pipeline::{Cid, Contribution};
use reqwest::blocking::{RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

const TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ActionItem {
    pub cid: Cid,
    pub material: String,
    #[serde(default)]
    pub title: String,
    pub action: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct Envelope {
    error: RemoteError,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RemoteError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub line: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach the server: {0}")]
    Network(String),
    #[error("{status} {}: {}", .error.code, .error.message)]
    Remote { status: u16, error: RemoteError },
    #[error("unexpected reply: {0}")]
    Decode(String),
}

impl ClientError {
    /// Errors the contributor fixes by editing the file.
    pub fn is_validation(&self) -> bool {
        matches!(self, ClientError::Remote { status, .. }
            if *status == StatusCode::BAD_REQUEST.as_u16()
                || *status == StatusCode::PAYLOAD_TOO_LARGE.as_u16())
    }
}

pub struct Client {
    base: String,
    key: Option<String>,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(api_url: &str, key: Option<String>) -> Result<Client, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(TIMEOUT)
            .build()
            .map_err(|e| ClientError::Network(e.to_string()))?;
        Ok(Client {
            base: format!("{}/api/v1", api_url.trim_end_matches('/')),
            key,
            http,
        })
    }

    fn authed(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.key {
            Some(k) => req.header("X-API-Key", k),
            None => req,
        }
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let resp = self
            .authed(req)
            .send()
            .map_err(|e| ClientError::Network(e.to_string()))?;
        decode(resp)
    }

    pub fn submit(&self, text: &str, project: Option<&str>) -> Result<Vec<ActionItem>, ClientError> {
        let mut req = self
            .http
            .post(format!("{}/contributions", self.base))
            .header("Content-Type", "text/plain; charset=utf-8")
            .body(text.to_string());
        if let Some(p) = project {
            req = req.header("X-Project", p);
        }
        self.send(req)
    }

    pub fn contribution(&self, cid: &str) -> Result<Contribution, ClientError> {
        self.send(self.http.get(format!("{}/contributions/{cid}", self.base)))
    }

    pub fn material(&self, key: &str) -> Result<DerivedMaterialDoc, ClientError> {
        self.send(self.http.get(format!("{}/materials/{key}", self.base)))
    }

    pub fn delete(&self, cid: &str) -> Result<ActionItem, ClientError> {
        self.send(self.http.delete(format!("{}/contributions/{cid}", self.base)))
    }

    pub fn build(&self, material: Option<&str>) -> Result<usize, ClientError> {
        #[derive(Deserialize)]
        struct Summary {
            rebuilt: usize,
        }
        let mut req = self.http.post(format!("{}/build", self.base));
        if let Some(m) = material {
            req = req.query(&[("material", m)]);
        }
        self.send::<Summary>(req).map(|s| s.rebuilt)
    }
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    let status = resp.status();
    let body = resp.text().map_err(|e| ClientError::Network(e.to_string()))?;
    if status.is_success() {
        return serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()));
    }
    let error = serde_json::from_str::<Envelope>(&body)
        .map(|e| e.error)
        .unwrap_or_else(|_| RemoteError {
            code: status.canonical_reason().unwrap_or("Error").replace(' ', ""),
            message: body.trim().to_string(),
            line: None,
        });
    Err(ClientError::Remote {
        status: status.as_u16(),
        error,
    })
}
