//! Class sets shared across the pipeline.
//!
//! The declaration order of each enum is the canonical class order: every
//! probability vector, feature slot and confusion-matrix row is indexed by
//! it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary user-level gender label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Female,
    Male,
}

impl GenderLabel {
    pub const ALL: [GenderLabel; 2] = [GenderLabel::Female, GenderLabel::Male];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Female => "female",
            GenderLabel::Male => "male",
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenderLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Ok(GenderLabel::Female),
            "male" => Ok(GenderLabel::Male),
            other => Err(other.to_string()),
        }
    }
}

/// Three-way label for a single image. `Unknown` covers pictures that do
/// not show a single adult; it never becomes a user-level label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageClass {
    Female,
    Male,
    Unknown,
}

impl ImageClass {
    pub const ALL: [ImageClass; 3] = [ImageClass::Female, ImageClass::Male, ImageClass::Unknown];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImageClass::Female => "female",
            ImageClass::Male => "male",
            ImageClass::Unknown => "unknown",
        }
    }
}

impl From<GenderLabel> for ImageClass {
    fn from(g: GenderLabel) -> Self {
        match g {
            GenderLabel::Female => ImageClass::Female,
            GenderLabel::Male => ImageClass::Male,
        }
    }
}

impl fmt::Display for ImageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImageClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Ok(ImageClass::Female),
            "male" => Ok(ImageClass::Male),
            "unknown" => Ok(ImageClass::Unknown),
            other => Err(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order() {
        assert!(GenderLabel::Female < GenderLabel::Male);
        assert!(ImageClass::Male < ImageClass::Unknown);
        for (i, c) in ImageClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ImageClass::from_index(i), Some(*c));
        }
        assert_eq!(GenderLabel::from_index(2), None);
    }

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("Female".parse::<GenderLabel>(), Ok(GenderLabel::Female));
        assert_eq!(" male ".parse::<GenderLabel>(), Ok(GenderLabel::Male));
        assert!("other".parse::<GenderLabel>().is_err());
        assert_eq!("UNKNOWN".parse::<ImageClass>(), Ok(ImageClass::Unknown));
    }
}
