//! Completion client speaking `{"prompt"} -> {"text"}` JSON over HTTP.

use chain_reasoner::evaluation::CompletionClient;
use chain_reasoner::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    text: String,
}

pub struct HttpClient {
    endpoint: String,
    token: Option<String>,
}

impl HttpClient {
    /// `token_env` names an environment variable with a bearer token.
    pub fn new(endpoint: &str, token_env: Option<&str>) -> Self {
        HttpClient {
            endpoint: endpoint.to_string(),
            token: token_env.and_then(|v| std::env::var(v).ok()),
        }
    }

    pub fn complete_text(&self, prompt: &str) -> anyhow::Result<String> {
        Ok(self.complete(prompt)?)
    }
}

fn transport(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("completion request failed: {e}")))
}

impl CompletionClient for HttpClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = ureq::post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(Request { prompt }).map_err(transport)?;
        let reply: Reply = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Evaluation(format!("completion reply is not {{\"text\": ...}}: {e}")))?;
        Ok(reply.text)
    }
}
