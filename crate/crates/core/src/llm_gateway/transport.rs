//! Request transports. Live traffic goes through [`HttpTransport`];
//! tests and fixture generation inject [`ScriptedTransport`].

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{GatewayError, ProviderConfig};

/// Sends one rendered prompt and returns the provider's reply text.
pub trait Transport: Send + Sync {
    fn complete(&self, provider: &ProviderConfig, prompt: &str) -> Result<String, GatewayError>;
}

/// Counting semaphore bounding in-flight requests per provider.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(capacity: usize) -> Self {
        Gate {
            permits: Mutex::new(capacity.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("gate wait");
        }
        *permits -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate lock");
        *permits += 1;
        self.gate.cv.notify_one();
    }
}

/// HTTP transport speaking a chat-completions style JSON protocol.
///
/// Request shaping is configuration-driven: the default payload is the
/// OpenAI chat shape; `payload_template` overrides it with `{model}` and
/// `{prompt}` markers replaced by JSON string literals, and
/// `response_text_path` is a JSON pointer to the reply text.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    api_key: String,
    gate: Gate,
}

impl HttpTransport {
    pub fn new(provider: &ProviderConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&provider.auth_ref)
            .map_err(|_| GatewayError::MissingCredential(provider.auth_ref.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(provider.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::ProviderError(format!("client build: {e}")))?;
        Ok(HttpTransport {
            client,
            api_key,
            gate: Gate::new(provider.max_in_flight),
        })
    }

    fn payload(provider: &ProviderConfig, prompt: &str) -> Result<Value, GatewayError> {
        let mut payload = match &provider.payload_template {
            Some(template) => {
                let model_lit = serde_json::to_string(&provider.model_name)
                    .expect("string serializes");
                let prompt_lit = serde_json::to_string(prompt).expect("string serializes");
                let rendered = template
                    .replace("{model}", &model_lit)
                    .replace("{prompt}", &prompt_lit);
                serde_json::from_str(&rendered).map_err(|e| {
                    GatewayError::InvalidConfig(format!(
                        "payload_template for {} renders invalid JSON: {e}",
                        provider.provider_id
                    ))
                })?
            }
            None => json!({
                "model": provider.model_name,
                "messages": [{"role": "user", "content": prompt}],
            }),
        };
        if let (Value::Object(base), Some(Value::Object(extra))) =
            (&mut payload, provider.params.as_ref())
        {
            for (k, v) in extra {
                base.insert(k.clone(), v.clone());
            }
        }
        Ok(payload)
    }
}

impl Transport for HttpTransport {
    fn complete(&self, provider: &ProviderConfig, prompt: &str) -> Result<String, GatewayError> {
        let _permit = self.gate.acquire();
        let payload = Self::payload(provider, prompt)?;
        let response = self
            .client
            .post(&provider.endpoint)
            .bearer_auth(&self.api_key)
            .json(&payload)
            .send()
            .map_err(|e| GatewayError::ProviderError(format!("request: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(GatewayError::ProviderError(format!(
                "{} returned {status}: {}",
                provider.provider_id,
                body.chars().take(200).collect::<String>()
            )));
        }
        let body: Value = response
            .json()
            .map_err(|e| GatewayError::ProviderError(format!("response decode: {e}")))?;
        let pointer = provider
            .response_text_path
            .as_deref()
            .unwrap_or("/choices/0/message/content");
        body.pointer(pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::ProviderError(format!(
                    "no text at {pointer} in {} response",
                    provider.provider_id
                ))
            })
    }
}

/// Transport backed by a closure; for tests and fixture generation.
pub struct ScriptedTransport {
    #[allow(clippy::type_complexity)]
    responder: Mutex<Box<dyn FnMut(&ProviderConfig, &str) -> Result<String, GatewayError> + Send>>,
}

impl ScriptedTransport {
    pub fn new(
        responder: impl FnMut(&ProviderConfig, &str) -> Result<String, GatewayError> + Send + 'static,
    ) -> Self {
        ScriptedTransport {
            responder: Mutex::new(Box::new(responder)),
        }
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, provider: &ProviderConfig, prompt: &str) -> Result<String, GatewayError> {
        (self.responder.lock().expect("responder lock"))(provider, prompt)
    }
}
