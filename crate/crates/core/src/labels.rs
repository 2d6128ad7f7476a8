//! Activity label taxonomy: seven fine activities grouped into three coarse states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Fine activity label. The declaration order is the tie-break order used for
/// majority voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FineLabel {
    A1,
    A2,
    A3,
    A4,
    B1,
    B2,
    C1,
}

/// Coarse activity state: Moving, Stationary or Cycling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoarseLabel {
    A,
    B,
    C,
}

impl FineLabel {
    pub const ALL: [FineLabel; 7] = [
        FineLabel::A1,
        FineLabel::A2,
        FineLabel::A3,
        FineLabel::A4,
        FineLabel::B1,
        FineLabel::B2,
        FineLabel::C1,
    ];
    pub const MOVING: [FineLabel; 4] = [FineLabel::A1, FineLabel::A2, FineLabel::A3, FineLabel::A4];
    pub const STATIONARY: [FineLabel; 2] = [FineLabel::B1, FineLabel::B2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn coarse(self) -> CoarseLabel {
        match self {
            FineLabel::A1 | FineLabel::A2 | FineLabel::A3 | FineLabel::A4 => CoarseLabel::A,
            FineLabel::B1 | FineLabel::B2 => CoarseLabel::B,
            FineLabel::C1 => CoarseLabel::C,
        }
    }

    /// Index of this label within its coarse group's second-stage classifier.
    pub fn index_in_group(self) -> usize {
        match self {
            FineLabel::A1 | FineLabel::B1 | FineLabel::C1 => 0,
            FineLabel::A2 | FineLabel::B2 => 1,
            FineLabel::A3 => 2,
            FineLabel::A4 => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FineLabel::A1 => "A1",
            FineLabel::A2 => "A2",
            FineLabel::A3 => "A3",
            FineLabel::A4 => "A4",
            FineLabel::B1 => "B1",
            FineLabel::B2 => "B2",
            FineLabel::C1 => "C1",
        }
    }
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; 3] = [CoarseLabel::A, CoarseLabel::B, CoarseLabel::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseLabel::A => "A",
            CoarseLabel::B => "B",
            CoarseLabel::C => "C",
        }
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FineLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FineLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown activity label `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_groups_follow_taxonomy() {
        let coarse: Vec<_> = FineLabel::ALL.iter().map(|l| l.coarse()).collect();
        use CoarseLabel::*;
        assert_eq!(coarse, vec![A, A, A, A, B, B, C]);
    }

    #[test]
    fn parse_round_trips() {
        for l in FineLabel::ALL {
            assert_eq!(l.as_str().parse::<FineLabel>().unwrap(), l);
        }
        assert!("D9".parse::<FineLabel>().is_err());
    }
}
