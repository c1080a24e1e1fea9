//! Protocol v1 frames: one JSON object per line, discriminated by `type`.

use serde::{Deserialize, Serialize};

use crate::conversation::Role;
use crate::decoding::DecodingParams;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Capabilities {
    /// Several `generate` requests may be in flight at once and answered out
    /// of order.
    pub concurrent: bool,
    /// Responses may carry `token_logprobs`.
    pub logprobs: bool,
    /// The backend wants `marked_sequence` filled in on requests.
    pub marked_sequence: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol_version: u32,
    pub name: String,
    #[serde(default)]
    pub capabilities: Capabilities,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub id: String,
    /// The facet description.
    pub need: String,
    pub query: String,
    /// Completed turns after the initial query.
    #[serde(default)]
    pub history: Vec<HistoryTurn>,
    pub question: String,
    #[serde(default)]
    pub params: DecodingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marked_sequence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<(String, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl GenerateResponse {
    pub fn ok(id: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { id: id.into(), answer: Some(answer.into()), token_logprobs: None, error: None }
    }

    pub fn err(id: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            answer: None,
            token_logprobs: None,
            error: Some(ErrorInfo { code: code.to_string(), message: message.into() }),
        }
    }

    /// Exactly one of `answer` and `error` is present.
    pub fn is_well_formed(&self) -> bool {
        self.answer.is_some() != self.error.is_some()
    }

    pub fn into_result(self) -> Result<String, ErrorInfo> {
        match (self.answer, self.error) {
            (_, Some(e)) => Err(e),
            (Some(a), None) => Ok(a),
            (None, None) => Err(ErrorInfo { code: "empty_response".into(), message: "neither answer nor error".into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Hello(Hello),
    Generate(GenerateRequest),
    Response(GenerateResponse),
    Shutdown,
}

/// Error codes used in `response.error.code`.
pub mod codes {
    pub const MALFORMED_FRAME: &str = "malformed_frame";
    pub const UNEXPECTED_FRAME: &str = "unexpected_frame";
    pub const GENERATION_FAILED: &str = "generation_failed";
}

impl Frame {
    /// One line of JSON without the trailing newline.
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }

    pub fn decode(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
    }
}
