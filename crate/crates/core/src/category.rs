//! The ten cell categories and their normative lower-case names.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub const NUM_CLASSES: usize = 10;

/// Cell category, in the fixed order used for every score vector and matrix
/// in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Normal,
    Ascus,
    Asch,
    Lsil,
    Hsil,
    Agc,
    Ade,
    Vag,
    Mon,
    Dys,
}

/// The four squamous classes routed to the hard-example classifier, in the
/// order of the classifier's output vector.
pub const HARD_CLASSES: [Category; 4] = [
    Category::Ascus,
    Category::Asch,
    Category::Lsil,
    Category::Hsil,
];

impl Category {
    pub const ALL: [Category; NUM_CLASSES] = [
        Category::Normal,
        Category::Ascus,
        Category::Asch,
        Category::Lsil,
        Category::Hsil,
        Category::Agc,
        Category::Ade,
        Category::Vag,
        Category::Mon,
        Category::Dys,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Normal => "normal",
            Category::Ascus => "ascus",
            Category::Asch => "asch",
            Category::Lsil => "lsil",
            Category::Hsil => "hsil",
            Category::Agc => "agc",
            Category::Ade => "ade",
            Category::Vag => "vag",
            Category::Mon => "mon",
            Category::Dys => "dys",
        }
    }

    pub fn is_hard(self) -> bool {
        self.hard_index().is_some()
    }

    /// Precancerous or cancerous: counts toward a positive slide.
    pub fn is_positive(self) -> bool {
        matches!(
            self,
            Category::Ascus
                | Category::Lsil
                | Category::Asch
                | Category::Hsil
                | Category::Agc
                | Category::Ade
        )
    }

    /// Position within [`HARD_CLASSES`], if this is a hard class.
    pub fn hard_index(self) -> Option<usize> {
        HARD_CLASSES.iter().position(|&c| c == self)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_counts() {
        assert_eq!(Category::ALL.len(), 10);
        assert_eq!(Category::ALL.iter().filter(|c| c.is_hard()).count(), 4);
        assert_eq!(Category::ALL.iter().filter(|c| c.is_positive()).count(), 6);
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(Category::from_index(i), Some(*c));
        }
        assert_eq!(Category::from_index(10), None);
    }

    #[test]
    fn names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<Category>(&json).unwrap(), c);
        }
    }

    #[test]
    fn hyphenated_and_upper_case_names_rejected() {
        assert!("asc-us".parse::<Category>().is_err());
        assert!("ASCUS".parse::<Category>().is_err());
        assert!(serde_json::from_str::<Category>("\"asc-h\"").is_err());
    }

    #[test]
    fn hard_subset_is_squamous_only() {
        assert_eq!(Category::Asch.hard_index(), Some(1));
        assert_eq!(Category::Hsil.hard_index(), Some(3));
        assert!(!Category::Agc.is_hard());
        assert!(Category::Agc.is_positive());
        assert!(!Category::Vag.is_positive());
    }
}
