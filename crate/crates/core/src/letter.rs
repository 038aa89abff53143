//! The 24 static fingerspelling letters (A..Y without the dynamic J and Z).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub const NUM_CLASSES: usize = 24;

const LETTERS: &[u8; NUM_CLASSES] = b"ABCDEFGHIKLMNOPQRSTUVWXY";

/// A static letter, stored as its class index in `0..24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(u8);

impl Letter {
    pub fn from_index(index: usize) -> Option<Letter> {
        (index < NUM_CLASSES).then_some(Letter(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        LETTERS[self.0 as usize] as char
    }

    pub fn all() -> impl Iterator<Item = Letter> + Clone {
        (0..NUM_CLASSES as u8).map(Letter)
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Letter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || Error::UnknownLetter {
            letter: s.to_string(),
            row: None,
        };
        let mut chars = s.trim().chars();
        let c = chars.next().ok_or_else(unknown)?.to_ascii_uppercase();
        if chars.next().is_some() {
            return Err(unknown());
        }
        LETTERS
            .iter()
            .position(|&l| l as char == c)
            .map(|i| Letter(i as u8))
            .ok_or_else(unknown)
    }
}

impl Serialize for Letter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Letter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
