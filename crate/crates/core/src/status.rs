use std::fmt;

use serde::{Deserialize, Serialize};

/// The closed set of result codes carried by `Status` commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub enum StatusCode {
    Ok,
    Accepted,
    Unauthorized,
    NotFound,
    NotAllowed,
    Unsupported,
    AlreadyExists,
    PermissionDenied,
    Failed,
}

impl StatusCode {
    pub const ALL: [StatusCode; 9] = [
        StatusCode::Ok,
        StatusCode::Accepted,
        StatusCode::Unauthorized,
        StatusCode::NotFound,
        StatusCode::NotAllowed,
        StatusCode::Unsupported,
        StatusCode::AlreadyExists,
        StatusCode::PermissionDenied,
        StatusCode::Failed,
    ];

    pub fn code(self) -> u16 {
        match self {
            StatusCode::Ok => 200,
            StatusCode::Accepted => 202,
            StatusCode::Unauthorized => 401,
            StatusCode::NotFound => 404,
            StatusCode::NotAllowed => 405,
            StatusCode::Unsupported => 406,
            StatusCode::AlreadyExists => 418,
            StatusCode::PermissionDenied => 425,
            StatusCode::Failed => 500,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }

    pub fn label(self) -> &'static str {
        match self {
            StatusCode::Ok => "OK",
            StatusCode::Accepted => "accepted for processing",
            StatusCode::Unauthorized => "unauthorized",
            StatusCode::NotFound => "not found",
            StatusCode::NotAllowed => "command not allowed on target",
            StatusCode::Unsupported => "unsupported property",
            StatusCode::AlreadyExists => "already exists",
            StatusCode::PermissionDenied => "permission denied",
            StatusCode::Failed => "command failed",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, StatusCode::Ok | StatusCode::Accepted)
    }
}

impl fmt::Display for StatusCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.code(), self.label())
    }
}

impl From<StatusCode> for u16 {
    fn from(s: StatusCode) -> u16 {
        s.code()
    }
}

impl TryFrom<u16> for StatusCode {
    type Error = String;

    fn try_from(code: u16) -> Result<Self, Self::Error> {
        StatusCode::from_code(code).ok_or_else(|| format!("unknown status code {code}"))
    }
}

/// Alert code opening a client-initiated session.
pub const ALERT_CLIENT_INITIATED: u32 = 1200;
/// Alert code for a server-initiated session (not used by the simulator).
pub const ALERT_SERVER_INITIATED: u32 = 1201;

impl From<&crate::tree::TreeError> for StatusCode {
    fn from(e: &crate::tree::TreeError) -> Self {
        use crate::tree::TreeError::*;
        match e {
            NotFound(_) => StatusCode::NotFound,
            AlreadyExists(_) => StatusCode::AlreadyExists,
            PermissionDenied { .. } => StatusCode::PermissionDenied,
            ImmutableProperty(_) | FormatMismatch { .. } => StatusCode::Unsupported,
            ParentIsLeaf(_) | PermanentNode(_) | NotALeaf(_) | SourceContainsDestination { .. } => {
                StatusCode::NotAllowed
            }
        }
    }
}
