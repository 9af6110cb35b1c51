//! Blocking HTTP client for the service, used by the CLI's remote mode.

use reqwest::blocking::{Client, RequestBuilder};
use serde::Serialize;
use serde_json::Value;

use crate::api::{ApiError, SIGNATORY_HEADER};

#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    http: Client,
}

impl RemoteClient {
    pub fn new(base: &str) -> Self {
        RemoteClient {
            base: base.trim_end_matches('/').to_string(),
            http: Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn send(&self, req: RequestBuilder) -> Result<Value, ApiError> {
        let resp = req
            .send()
            .map_err(|e| ApiError::new(503, "UNREACHABLE", e.to_string()))?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .json()
            .map_err(|e| ApiError::new(502, "BAD_RESPONSE", e.to_string()))?;
        if status >= 400 {
            let mut err: ApiError = serde_json::from_value(body)
                .unwrap_or_else(|_| ApiError::new(status, "HTTP_ERROR", format!("status {status}")));
            err.http_status = status;
            return Err(err);
        }
        Ok(body)
    }

    pub fn get(&self, path: &str) -> Result<Value, ApiError> {
        self.send(self.http.get(self.url(path)))
    }

    pub fn get_as(&self, path: &str, signatory: &str) -> Result<Value, ApiError> {
        self.send(self.http.get(self.url(path)).header(SIGNATORY_HEADER, signatory))
    }

    pub fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<Value, ApiError> {
        self.send(self.http.post(self.url(path)).json(body))
    }

    pub fn post_as<T: Serialize>(&self, path: &str, signatory: &str, body: &T) -> Result<Value, ApiError> {
        self.send(self.http.post(self.url(path)).header(SIGNATORY_HEADER, signatory).json(body))
    }
}
