//! HTTP client for other agents' services.

use std::io::Read;
use std::time::Duration;

use agentizer_core::a2a::{A2ARequest, A2AResponse, AgentCard, CARD_PATH, TASKS_PATH};

use crate::{Error, Result};

pub struct Client {
    agent: ureq::Agent,
}

fn base(url: &str) -> &str {
    url.trim_end_matches('/')
}

impl Client {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }

    fn get(&self, url: &str) -> Result<Vec<u8>> {
        let mut resp = self.agent.get(url).call().map_err(|e| Error::Other(format!("GET {url}: {e}")))?;
        let status = resp.status().as_u16();
        let mut bytes = Vec::new();
        resp.body_mut()
            .as_reader()
            .take(1 << 30)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Other(format!("GET {url}: {e}")))?;
        if status != 200 {
            return Err(Error::Other(format!("GET {url}: HTTP {status}")));
        }
        Ok(bytes)
    }

    pub fn fetch_card_document(&self, endpoint: &str) -> Result<String> {
        let bytes = self.get(&format!("{}{CARD_PATH}", base(endpoint)))?;
        String::from_utf8(bytes).map_err(|e| Error::Other(format!("card is not UTF-8: {e}")))
    }

    pub fn fetch_card(&self, endpoint: &str) -> Result<AgentCard> {
        let doc = self.fetch_card_document(endpoint)?;
        serde_json::from_str(&doc).map_err(|e| Error::Other(format!("card from {endpoint}: {e}")))
    }

    pub fn send_task(&self, endpoint: &str, req: &A2ARequest) -> Result<A2AResponse> {
        let url = format!("{}{TASKS_PATH}", base(endpoint));
        let body = serde_json::to_string(req).expect("request serializes");
        let mut resp = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Error::Other(format!("POST {url}: {e}")))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Other(format!("POST {url}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::Other(format!("POST {url}: bad response: {e}")))
    }

    pub fn fetch_artifact(&self, url: &str) -> Result<Vec<u8>> {
        self.get(url)
    }
}
