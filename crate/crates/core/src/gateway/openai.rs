//! Chat and embedding provider for any OpenAI-compatible HTTP endpoint.

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;
use url::Url;

use super::{
    ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, GatewayError, ProviderConfig,
    ProviderFailure,
};

pub struct OpenAiCompatible {
    client: Client,
    base_url: Url,
    api_key_source: String,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

impl OpenAiCompatible {
    pub fn new(config: &ProviderConfig) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("http client: {e}")))?;
        let mut base_url = config.base_url.clone();
        if !base_url.path().ends_with('/') {
            base_url.set_path(&format!("{}/", base_url.path()));
        }
        Ok(Self {
            client,
            base_url,
            api_key_source: config.api_key_source.clone(),
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<String, ProviderFailure> {
        let key = std::env::var(&self.api_key_source).map_err(|_| {
            ProviderFailure::Permanent(format!("environment variable {} is not set", self.api_key_source))
        })?;
        let url = self
            .base_url
            .join(path)
            .map_err(|e| ProviderFailure::Permanent(e.to_string()))?;
        let resp = self
            .client
            .post(url)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| ProviderFailure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderFailure::Transient(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            Err(ProviderFailure::Transient(format!("HTTP {status}: {text}")))
        } else {
            Err(ProviderFailure::Permanent(format!("HTTP {status}: {text}")))
        }
    }
}

impl ChatProvider for OpenAiCompatible {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        let body = json!({
            "model": req.model_id,
            "temperature": req.temperature,
            "max_completion_tokens": req.max_output_tokens,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
        });
        let raw = self.post("chat/completions", body)?;
        let parsed: ChatCompletion = serde_json::from_str(&raw)
            .map_err(|e| ProviderFailure::Permanent(format!("unexpected chat response: {e}")))?;
        let usage = parsed.usage.unwrap_or_default();
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(ChatResponse {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

impl EmbeddingProvider for OpenAiCompatible {
    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        let raw = self.post("embeddings", json!({"model": model_id, "input": texts}))?;
        let mut parsed: EmbeddingList = serde_json::from_str(&raw)
            .map_err(|e| ProviderFailure::Permanent(format!("unexpected embedding response: {e}")))?;
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
