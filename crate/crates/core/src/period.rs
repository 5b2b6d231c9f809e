use std::fmt;

use serde::{Deserialize, Serialize};

/// Capture-period tag of an imagery snapshot, e.g. `"2023"` or `"2022-04"`.
///
/// Tags sort lexicographically, so year-leading tags sort chronologically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Period(String);

impl Period {
    pub fn new(tag: impl Into<String>) -> Self {
        Period(tag.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Leading four-digit year, when the tag has one.
    pub fn year(&self) -> Option<i32> {
        let head = self.0.get(..4)?;
        if head.bytes().all(|b| b.is_ascii_digit()) {
            head.parse().ok()
        } else {
            None
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Period {
    fn from(s: &str) -> Self {
        Period(s.to_owned())
    }
}

impl From<i32> for Period {
    fn from(year: i32) -> Self {
        Period(year.to_string())
    }
}
