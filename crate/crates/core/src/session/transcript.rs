//! Session transcripts exported as JSON lines.
//!
//! One object per package: `{"direction","msg_id","phase","raw"}` with `raw` the base64
//! wire bytes. A finished session ends with a close record `{"close":{...}}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Outcome;
use crate::codec::{decode, CodecError, DmMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub msg_id: u32,
    pub phase: String,
    #[serde(with = "crate::job::b64")]
    pub raw: Vec<u8>,
}

impl TranscriptEntry {
    pub fn decode(&self) -> Result<DmMessage, CodecError> {
        decode(&self.raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseRecord {
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
struct CloseLine {
    close: CloseRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub close: Option<CloseRecord>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {0}: entry after close record")]
    AfterClose(usize),
}

impl Transcript {
    pub fn push(&mut self, direction: Direction, phase: &str, msg_id: u32, raw: &[u8]) {
        self.entries.push(TranscriptEntry {
            direction,
            msg_id,
            phase: phase.to_string(),
            raw: raw.to_vec(),
        });
    }

    pub fn close(&mut self, outcome: Outcome) {
        self.close = Some(CloseRecord { outcome });
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.close.as_ref().map(|c| &c.outcome)
    }

    /// No two consecutive packages travel in the same direction.
    pub fn alternates(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].direction != w[1].direction)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        if let Some(close) = &self.close {
            out.push_str(&serde_json::to_string(&CloseLine { close: close.clone() }).expect("close serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Transcript, TranscriptError> {
        let mut t = Transcript::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if t.close.is_some() {
                return Err(TranscriptError::AfterClose(i + 1));
            }
            let json = |source| TranscriptError::Json { line: i + 1, source };
            if line.trim_start().starts_with("{\"close\"") {
                t.close = Some(serde_json::from_str::<CloseLine>(line).map_err(json)?.close);
            } else {
                t.entries.push(serde_json::from_str(line).map_err(json)?);
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut t = Transcript::default();
        t.push(Direction::ClientToServer, "setup", 1, b"<a/>");
        t.push(Direction::ServerToClient, "setup", 1, b"<b/>");
        t.close(Outcome::aborted("link closed"));
        let text = t.to_jsonl();
        assert!(text.starts_with(r#"{"direction":"client_to_server","msg_id":1,"phase":"setup","raw":"PGEvPg=="}"#));
        assert!(text.ends_with("{\"close\":{\"outcome\":\"aborted\",\"reason\":\"link closed\"}}\n"));
        assert_eq!(Transcript::from_jsonl(&text).unwrap(), t);
        assert!(t.alternates());
    }
}
