//! Chat message model, tool declarations, the chat-completions wire codec
//! with function calling, and providers (remote HTTP + scripted test
//! double). The wire shape follows the widely-used chat-completions
//! format: `functions` in the request, `function_call` on assistant
//! messages, role `function` for results.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Function,
}

/// One function call as it appears on the wire: `arguments` is a JSON
/// string, not an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFunctionCall {
    pub name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    /// Required when role is `function`: the name of the function whose
    /// result this message carries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_call: Option<WireFunctionCall>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), name: None, function_call: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), name: None, function_call: None }
    }

    pub fn assistant_answer(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), name: None, function_call: None }
    }

    pub fn assistant_call(name: impl Into<String>, arguments: &Value) -> Self {
        Self {
            role: Role::Assistant,
            content: String::new(),
            name: None,
            function_call: Some(WireFunctionCall {
                name: name.into(),
                arguments: arguments.to_string(),
            }),
        }
    }

    pub fn function_result(name: impl Into<String>, content: impl Into<String>) -> Self {
        Self { role: Role::Function, content: content.into(), name: Some(name.into()), function_call: None }
    }
}

/// A callable function advertised to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDeclaration {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// Decoded model output: either one function call or the final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AssistantAction {
    FunctionCall { name: String, arguments: Value },
    FinalAnswer { text: String },
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("message sequence invalid: {0}")]
    InvalidMessageSequence(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("function call arguments are not valid JSON: {0}")]
    UnparseableArguments(String),
    #[error("scripted provider exhausted its script")]
    ScriptExhausted,
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned HTTP {status}: {body}")]
    Service { status: u16, body: String },
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    functions: Option<&'a [ToolDeclaration]>,
    temperature: f64,
}

/// Serialize a chat-completions request. Byte-deterministic for a fixed
/// input; `functions` is omitted when no tools are declared.
pub fn encode_request(
    messages: &[ChatMessage],
    tools: &[ToolDeclaration],
    model_id: &str,
) -> Result<String, LlmError> {
    match messages.first() {
        None => {
            return Err(LlmError::InvalidMessageSequence("no messages".into()));
        }
        Some(first) if first.role != Role::System => {
            return Err(LlmError::InvalidMessageSequence(
                "first message must have role system".into(),
            ));
        }
        Some(_) => {}
    }
    let request = WireRequest {
        model: model_id,
        messages,
        functions: (!tools.is_empty()).then_some(tools),
        temperature: 0.0,
    };
    Ok(serde_json::to_string(&request).expect("request serializes"))
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    function_call: Option<WireFunctionCall>,
}

/// Decode a chat-completions response body into an [`AssistantAction`].
pub fn decode_response(body: &str) -> Result<AssistantAction, LlmError> {
    let response: WireResponse =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let message = response
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?
        .message;
    match message.function_call {
        Some(call) => {
            let arguments: Value = serde_json::from_str(&call.arguments)
                .map_err(|_| LlmError::UnparseableArguments(call.arguments.clone()))?;
            Ok(AssistantAction::FunctionCall { name: call.name, arguments })
        }
        None => Ok(AssistantAction::FinalAnswer {
            text: message.content.unwrap_or_default(),
        }),
    }
}

/// A completed model turn with transport bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub action: AssistantAction,
    /// HTTP attempts made for this turn (1 unless retried).
    pub attempts: u32,
}

/// One chat-completion turn. Implementations must be safe for concurrent
/// calls from independent sessions.
pub trait Provider: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolDeclaration],
    ) -> Result<Completion, LlmError>;
}

/// Deterministic test double: replays a fixed queue of actions.
pub struct ScriptedProvider {
    script: Mutex<std::collections::VecDeque<AssistantAction>>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<AssistantAction>) -> Result<Self, LlmError> {
        if script.is_empty() {
            return Err(LlmError::Protocol("scripted provider needs a non-empty script".into()));
        }
        Ok(Self { script: Mutex::new(script.into()) })
    }
}

impl Provider for ScriptedProvider {
    fn complete(
        &self,
        _messages: &[ChatMessage],
        _tools: &[ToolDeclaration],
    ) -> Result<Completion, LlmError> {
        let action = self
            .script
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(LlmError::ScriptExhausted)?;
        Ok(Completion { action, attempts: 1 })
    }
}

/// Remote chat-completions provider. Retries 429/5xx with exponential
/// backoff up to `max_retries` extra attempts; 4xx never retries.
pub struct RemoteProvider {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_retry(mut self, max_retries: u32, backoff_base: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff_base = backoff_base;
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

impl Provider for RemoteProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolDeclaration],
    ) -> Result<Completion, LlmError> {
        let body = encode_request(messages, tools, &self.model_id)?;
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let mut request = self
                .client
                .post(self.url())
                .header("content-type", "application/json")
                .body(body.clone());
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let outcome = request.send();
            let retryable = match &outcome {
                Ok(response) => {
                    let status = response.status().as_u16();
                    status == 429 || status >= 500
                }
                Err(_) => true,
            };
            if retryable && attempts <= self.max_retries {
                std::thread::sleep(self.backoff_base * 2u32.saturating_pow(attempts - 1));
                continue;
            }
            let response = outcome.map_err(|e| LlmError::Transport(e.to_string()))?;
            let status = response.status().as_u16();
            let text = response.text().map_err(|e| LlmError::Transport(e.to_string()))?;
            if status >= 400 {
                return Err(LlmError::Service { status, body: text });
            }
            let action = decode_response(&text)?;
            return Ok(Completion { action, attempts });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn encode_requires_system_first() {
        let messages = vec![ChatMessage::user("hi")];
        assert!(matches!(
            encode_request(&messages, &[], "m"),
            Err(LlmError::InvalidMessageSequence(_))
        ));
    }

    #[test]
    fn encode_includes_declared_functions() {
        let messages = vec![ChatMessage::system("s"), ChatMessage::user("q")];
        let tools = crate::triage::tool_declarations();
        let body = encode_request(&messages, &tools, "test-model").unwrap();
        let value: Value = serde_json::from_str(&body).unwrap();
        let names: Vec<&str> = value["functions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["name"].as_str().unwrap())
            .collect();
        assert_eq!(
            names,
            vec!["fetch_pages", "fetch_sections", "fetch_figure", "fetch_table", "retrieve"]
        );
    }

    #[test]
    fn decode_function_call() {
        let body = json!({
            "choices": [{
                "message": {
                    "role": "assistant",
                    "content": null,
                    "function_call": {
                        "name": "fetch_sections",
                        "arguments": "{\"section_ids\":[\"sec-2\"]}"
                    }
                }
            }]
        })
        .to_string();
        let action = decode_response(&body).unwrap();
        assert_eq!(
            action,
            AssistantAction::FunctionCall {
                name: "fetch_sections".into(),
                arguments: json!({ "section_ids": ["sec-2"] })
            }
        );
    }

    #[test]
    fn decode_final_answer() {
        let body = json!({
            "choices": [{ "message": { "role": "assistant", "content": "The answer is 42." } }]
        })
        .to_string();
        assert_eq!(
            decode_response(&body).unwrap(),
            AssistantAction::FinalAnswer { text: "The answer is 42.".into() }
        );
    }

    #[test]
    fn decode_unparseable_arguments() {
        let body = json!({
            "choices": [{
                "message": {
                    "function_call": { "name": "fetch_pages", "arguments": "\"not json" }
                }
            }]
        })
        .to_string();
        assert!(matches!(
            decode_response(&body),
            Err(LlmError::UnparseableArguments(_))
        ));
    }

    #[test]
    fn scripted_provider_pops_in_order() {
        let provider = ScriptedProvider::new(vec![
            AssistantAction::FunctionCall { name: "fetch_pages".into(), arguments: json!({"pages":[1]}) },
            AssistantAction::FinalAnswer { text: "x".into() },
        ])
        .unwrap();
        let first = provider.complete(&[], &[]).unwrap().action;
        assert!(matches!(first, AssistantAction::FunctionCall { .. }));
        let second = provider.complete(&[], &[]).unwrap().action;
        assert_eq!(second, AssistantAction::FinalAnswer { text: "x".into() });
        assert!(matches!(
            provider.complete(&[], &[]),
            Err(LlmError::ScriptExhausted)
        ));
    }

    #[test]
    fn empty_script_rejected() {
        assert!(ScriptedProvider::new(vec![]).is_err());
    }
}
