//! Shared domain vocabulary: conditions, labels, scores and demographics.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Maximum points on the 36-point figure scoring system.
pub const MAX_SCORE: f64 = 36.0;

/// The three drawing conditions, in the fixed order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Copy,
    Immediate,
    Delayed,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Copy, Condition::Immediate, Condition::Delayed];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short tag used in manifest columns and file names.
    pub fn tag(self) -> &'static str {
        match self {
            Condition::Copy => "copy",
            Condition::Immediate => "imm",
            Condition::Delayed => "del",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Copy => "copy",
            Condition::Immediate => "immediate",
            Condition::Delayed => "delayed",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "copy" => Ok(Condition::Copy),
            "imm" | "immediate" => Ok(Condition::Immediate),
            "del" | "delayed" => Ok(Condition::Delayed),
            other => Err(Error::data(format!("unknown condition {other:?}"))),
        }
    }
}

impl serde::Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> serde::Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Diagnostic class. MCI is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Cn,
    Mci,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Mci
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Label::Cn => 0.0,
            Label::Mci => 1.0,
        }
    }

    pub fn from_positive(p: bool) -> Self {
        if p {
            Label::Mci
        } else {
            Label::Cn
        }
    }

    /// CDR 0 is CN, CDR 0.5 is MCI.
    pub fn from_cdr(cdr: f64) -> Result<Self> {
        if cdr == 0.0 {
            Ok(Label::Cn)
        } else if cdr == 0.5 {
            Ok(Label::Mci)
        } else {
            Err(Error::data(format!("cdr {cdr} is neither 0 nor 0.5")))
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Cn => "CN",
            Label::Mci => "MCI",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" | "0" => Ok(Label::Cn),
            "MCI" | "1" => Ok(Label::Mci),
            other => Err(Error::data(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    /// Female = 1, male = 0.
    pub fn indicator(self) -> f64 {
        match self {
            Sex::Female => 1.0,
            Sex::Male => 0.0,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "F",
            Sex::Male => "M",
        })
    }
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Sex::Female),
            "m" | "male" => Ok(Sex::Male),
            other => Err(Error::data(format!("unknown sex {other:?}"))),
        }
    }
}

/// One score per condition, each on the 0..=36 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTriple {
    pub copy: f64,
    pub immediate: f64,
    pub delayed: f64,
}

impl ScoreTriple {
    pub fn new(copy: f64, immediate: f64, delayed: f64) -> Result<Self> {
        let t = ScoreTriple {
            copy,
            immediate,
            delayed,
        };
        for (c, v) in Condition::ALL.iter().zip(t.values()) {
            if !v.is_finite() || !(0.0..=MAX_SCORE).contains(&v) {
                return Err(Error::data(format!("{c} score {v} outside [0, 36]")));
            }
        }
        Ok(t)
    }

    /// Builds a triple with each value clamped into range.
    pub fn clamped(copy: f64, immediate: f64, delayed: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, MAX_SCORE);
        ScoreTriple {
            copy: c(copy),
            immediate: c(immediate),
            delayed: c(delayed),
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.copy, self.immediate, self.delayed]
    }

    pub fn get(&self, c: Condition) -> f64 {
        self.values()[c.index()]
    }

    pub fn set(&mut self, c: Condition, v: f64) {
        match c {
            Condition::Copy => self.copy = v,
            Condition::Immediate => self.immediate = v,
            Condition::Delayed => self.delayed = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demographics {
    pub age: f64,
    pub sex: Sex,
    pub education: f64,
}

impl Demographics {
    pub fn new(age: f64, sex: Sex, education: f64) -> Result<Self> {
        if !(40.0..=120.0).contains(&age) {
            return Err(Error::data(format!("age {age} outside [40, 120]")));
        }
        if !(0.0..=30.0).contains(&education) {
            return Err(Error::data(format!("education {education} outside [0, 30]")));
        }
        Ok(Demographics { age, sex, education })
    }
}

/// Which partition of a split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

impl SplitRole {
    pub fn code(self) -> u8 {
        match self {
            SplitRole::Train => 0,
            SplitRole::Validation => 1,
            SplitRole::Test => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SplitRole::Train),
            1 => Some(SplitRole::Validation),
            2 => Some(SplitRole::Test),
            _ => None,
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "validation",
            SplitRole::Test => "test",
        })
    }
}
