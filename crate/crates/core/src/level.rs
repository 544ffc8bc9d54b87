//! The four-level removal taxonomy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Coarse semantic importance of a scene element.
///
/// The derived ordering is the removal priority: distractors go first,
/// background structure goes last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticLevel {
    Distractor,
    Secondary,
    Primary,
    Background,
}

impl SemanticLevel {
    pub const ALL: [SemanticLevel; 4] =
        [SemanticLevel::Distractor, SemanticLevel::Secondary, SemanticLevel::Primary, SemanticLevel::Background];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        Self::ALL.get(ordinal).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticLevel::Distractor => "distractor",
            SemanticLevel::Secondary => "secondary",
            SemanticLevel::Primary => "primary",
            SemanticLevel::Background => "background",
        }
    }
}

impl fmt::Display for SemanticLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown semantic level {0:?}")]
pub struct ParseLevelError(pub String);

impl FromStr for SemanticLevel {
    type Err = ParseLevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "distractor" => Ok(SemanticLevel::Distractor),
            "secondary" => Ok(SemanticLevel::Secondary),
            "primary" => Ok(SemanticLevel::Primary),
            "background" => Ok(SemanticLevel::Background),
            _ => Err(ParseLevelError(s.to_string())),
        }
    }
}
