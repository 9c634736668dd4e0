//! Management tree addressing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UriError {
    #[error("node uri must be \".\" or start with \"./\": {0:?}")]
    NotRooted(String),
    #[error("invalid segment {segment:?} in {uri:?}")]
    BadSegment { uri: String, segment: String },
}

/// Absolute address of a node, rendered `./A/B/C`. The root renders as `.`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeUri {
    segments: Vec<String>,
}

/// Checks one path segment: non-empty, no `/`, not a dot name, no control characters.
pub fn is_valid_segment(segment: &str) -> bool {
    !segment.is_empty() && segment != "." && segment != ".." && !segment.chars().any(|c| c == '/' || c.is_control())
}

impl NodeUri {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, UriError> {
        if text == "." {
            return Ok(Self::root());
        }
        let rest = text
            .strip_prefix("./")
            .ok_or_else(|| UriError::NotRooted(text.to_string()))?;
        let mut segments = Vec::new();
        for segment in rest.split('/') {
            if !is_valid_segment(segment) {
                return Err(UriError::BadSegment {
                    uri: text.to_string(),
                    segment: segment.to_string(),
                });
            }
            segments.push(segment.to_string());
        }
        Ok(Self { segments })
    }

    pub fn from_segments<I, S>(segments: I) -> Result<Self, UriError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut uri = Self::root();
        for segment in segments {
            uri = uri.child(segment)?;
        }
        Ok(uri)
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn is_root(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    /// Final segment, or the empty string for the root.
    pub fn name(&self) -> &str {
        self.segments.last().map(String::as_str).unwrap_or("")
    }

    pub fn parent(&self) -> Option<NodeUri> {
        if self.is_root() {
            return None;
        }
        Some(Self {
            segments: self.segments[..self.segments.len() - 1].to_vec(),
        })
    }

    pub fn child(&self, name: impl Into<String>) -> Result<NodeUri, UriError> {
        let name = name.into();
        if !is_valid_segment(&name) {
            return Err(UriError::BadSegment {
                uri: self.to_string(),
                segment: name,
            });
        }
        let mut segments = self.segments.clone();
        segments.push(name);
        Ok(Self { segments })
    }

    /// Appends a relative `A/B` path.
    pub fn join(&self, relative: &str) -> Result<NodeUri, UriError> {
        relative
            .split('/')
            .try_fold(self.clone(), |uri, segment| uri.child(segment))
    }

    /// True when `prefix` is this uri or one of its ancestors.
    pub fn starts_with(&self, prefix: &NodeUri) -> bool {
        self.segments.starts_with(&prefix.segments)
    }

    /// Segments of `self` after `prefix`, if `prefix` is an ancestor-or-self.
    pub fn strip_prefix(&self, prefix: &NodeUri) -> Option<&[String]> {
        self.segments.strip_prefix(prefix.segments.as_slice())
    }
}

impl fmt::Display for NodeUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(".")?;
        for segment in &self.segments {
            write!(f, "/{segment}")?;
        }
        Ok(())
    }
}

impl FromStr for NodeUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for NodeUri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeUri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        NodeUri::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_root_and_nested() {
        assert_eq!(NodeUri::root().to_string(), ".");
        let uri = NodeUri::parse("./DevInfo/DevId").unwrap();
        assert_eq!(uri.segments(), ["DevInfo", "DevId"]);
        assert_eq!(uri.to_string(), "./DevInfo/DevId");
        assert_eq!(uri.name(), "DevId");
        assert_eq!(uri.parent().unwrap().to_string(), "./DevInfo");
    }

    #[test]
    fn rejects_malformed() {
        assert!(NodeUri::parse("DevInfo").is_err());
        assert!(NodeUri::parse("./").is_err());
        assert!(NodeUri::parse("./a//b").is_err());
        assert!(NodeUri::parse("./a/../b").is_err());
        assert!(NodeUri::parse("").is_err());
    }

    #[test]
    fn equality_is_case_sensitive() {
        assert_ne!(NodeUri::parse("./A").unwrap(), NodeUri::parse("./a").unwrap());
    }

    #[test]
    fn prefix_is_segment_wise() {
        let x = NodeUri::parse("./X").unwrap();
        assert!(NodeUri::parse("./X/Y").unwrap().starts_with(&x));
        assert!(x.starts_with(&x));
        assert!(!NodeUri::parse("./XY").unwrap().starts_with(&x));
        assert!(x.starts_with(&NodeUri::root()));
    }
}
